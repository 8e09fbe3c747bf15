"""The middleware runtime: context providers, the interpreter cycle, the
service locating service, and context-aware services with subscriptions.

Everything runs in one process behind small interfaces; the engine cycle is
strictly sequential and deterministic, so replaying a trace twice yields a
byte-identical event log.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

from .conflicts import Resolution, detect_and_resolve
from .errors import DuplicateServiceId, ParseError, SocamError, UnsortedTrace
from .model import (
    Classification,
    ContextKB,
    ContextStatement,
    Iri,
    Literal,
    StatementKey,
    Term,
    Triple,
    TriplePattern,
    Variable,
)
from .ontology import HOME_NS, RDF_NS, SOCAM_NS, SchemaRegistry, domain_range_warnings
from .qoc import ParameterKind, QualityConstraint, from_fields
from .reasoner import INTERPRETER_ID, AggregationSpec, DerivationResult, RuleSet, maintain
from .turtle import render_term

logger = logging.getLogger(__name__)

DEFAULT_PREFIXES = {
    "socam": SOCAM_NS,
    "home": HOME_NS,
    "rdf": RDF_NS,
}


class ProviderKind(Enum):
    INTERNAL = "Internal"
    EXTERNAL = "External"


class ServiceType(Enum):
    PROVIDER = "provider"
    INTERPRETER = "interpreter"
    APPLICATION_SERVICE = "application-service"


@dataclass(frozen=True)
class ContextProvider:
    """A source of context statements, identified in everything it emits."""

    provider_id: str
    kind: ProviderKind = ProviderKind.INTERNAL
    attributes: dict[str, str] = field(default_factory=dict, hash=False)

    def event(
        self,
        time: int,
        triple: Triple,
        classification: Optional[Classification] = None,
        qoc: Optional[QualityConstraint] = None,
    ) -> "TraceEvent":
        """Build an assert event carrying this provider's id (programmatic feed)."""
        return TraceEvent(
            time=time,
            kind="assert",
            subject=triple.subject,
            predicate=triple.predicate,
            object=triple.object,
            provider=self.provider_id,
            classification=classification,
            qoc=qoc,
        )


@dataclass(frozen=True)
class RegistryEntry:
    service_id: str
    type: ServiceType
    attributes: dict[str, str] = field(default_factory=dict, hash=False)


class ServiceRegistry:
    """The service locating service: components advertise, anyone looks up."""

    def __init__(self):
        self._entries: dict[str, RegistryEntry] = {}

    def advertise(self, entry: RegistryEntry) -> None:
        if entry.service_id in self._entries:
            raise DuplicateServiceId(entry.service_id)
        self._entries[entry.service_id] = entry

    def lookup(self, query: Optional[dict[str, str]] = None) -> list[RegistryEntry]:
        """Entries whose attributes satisfy every query key exactly, ordered
        by service id.  An empty query returns everything."""
        query = query or {}
        out = [
            e
            for e in self._entries.values()
            if all(e.attributes.get(k) == v for k, v in query.items())
        ]
        return sorted(out, key=lambda e: e.service_id)

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class Subscription:
    pattern: TriplePattern
    classification: Optional[Classification] = None
    min_certainty: Optional[float] = None

    def accepts(self, stmt: ContextStatement) -> bool:
        if self.classification is not None and stmt.classification != self.classification:
            return False
        if self.min_certainty is not None:
            certainty = stmt.qoc.certainty if stmt.qoc and stmt.qoc.certainty is not None else 100.0
            if certainty < self.min_certainty:
                return False
        return True


@dataclass(frozen=True)
class ActionTemplate:
    """Names the emitted action; params map names to '?var' references or
    fixed strings."""

    name: str
    params: dict[str, str] = field(default_factory=dict, hash=False)

    def bind(self, bindings: dict[str, Term]) -> tuple[tuple[str, Union[Term, str]], ...]:
        out = []
        for name in sorted(self.params):
            ref = self.params[name]
            if ref.startswith("?"):
                out.append((name, bindings.get(ref[1:], ref)))
            else:
                out.append((name, ref))
        return tuple(out)


@dataclass(frozen=True)
class ContextAwareService:
    service_id: str
    subscription: Subscription
    template: ActionTemplate
    attributes: dict[str, str] = field(default_factory=dict, hash=False)


@dataclass(frozen=True)
class ActionRecord:
    """One observable service firing (or its undo on match retraction)."""

    time: int
    service_id: str
    action: str
    params: tuple[tuple[str, Union[Term, str]], ...] = ()
    phase: str = "activate"  # or "deactivate"


@dataclass(frozen=True)
class TraceEvent:
    time: int
    kind: str  # "assert" | "retract"
    subject: Optional[Iri] = None
    predicate: Optional[Iri] = None
    object: Optional[Term] = None
    provider: Optional[str] = None
    classification: Optional[Classification] = None
    qoc: Optional[QualityConstraint] = None
    line: int = 0


@dataclass(frozen=True)
class LogRecord:
    kind: str  # assert retract derive undo-derive conflict-resolved action
    time: int
    data: tuple[tuple[str, object], ...]


@dataclass
class CycleReport:
    """Everything one engine cycle did, in emit order."""

    time: int
    events: list[TraceEvent] = field(default_factory=list)
    added: list[ContextStatement] = field(default_factory=list)
    retracted: list[ContextStatement] = field(default_factory=list)
    resolutions: list[Resolution] = field(default_factory=list)
    actions: list[ActionRecord] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    records: list[LogRecord] = field(default_factory=list)


# -- trace parsing -------------------------------------------------------------

_PREFIX_LINE_RE = re.compile(
    r"@prefix\s+([A-Za-z][A-Za-z0-9_\-]*)?:\s*<([^<>\s]*)>\s*\.\s*\Z"
)
_EVENT_HEAD_RE = re.compile(r"(\d+)\s+(assert|retract)\s+(.*)\Z")
_TERM_RE = re.compile(
    r"""\s*(?:
      (?P<wild>\*)
    | <(?P<iriref>[^<>\s]*)>
    | (?P<qname>(?:[A-Za-z][A-Za-z0-9_\-]*)?:[A-Za-z_][A-Za-z0-9_\-]*)
    | "(?P<string>(?:[^"\\]|\\.)*)"
    | (?P<decimal>[+-]?[0-9]+\.[0-9]+)(?=\s|\Z)
    | (?P<integer>[+-]?[0-9]+)(?=\s|\Z)
    | (?P<boolean>true|false)(?=\s|\Z)
    )""",
    re.VERBOSE,
)
_FIELD_RE = re.compile(r"\s*([A-Za-z][A-Za-z0-9]*)=(\S+)")
_STRING_UNESCAPES = {"\\\\": "\\", '\\"': '"', "\\n": "\n", "\\r": "\r", "\\t": "\t"}


def _parse_trace_term(text: str, pos: int, prefixes: dict[str, str], lineno: int):
    m = _TERM_RE.match(text, pos)
    if m is None:
        raise ParseError(f"cannot parse term in trace event: {text[pos:pos + 20]!r}", lineno, pos + 1)
    try:
        if m.group("wild"):
            return None, m.end()
        if m.group("iriref") is not None:
            return Iri(m.group("iriref")), m.end()
        if m.group("qname"):
            prefix, local = m.group("qname").split(":", 1)
            base = prefixes.get(prefix)
            if base is None:
                raise ParseError(f"unknown prefix {prefix + ':'!r}", lineno, pos + 1)
            return Iri(base + local), m.end()
        if m.group("string") is not None:
            raw = m.group("string")
            value = re.sub(r"\\.", lambda e: _STRING_UNESCAPES.get(e.group(), e.group()[1]), raw)
            return Literal(value), m.end()
        if m.group("decimal"):
            return Literal(m.group("decimal"), "double"), m.end()
        if m.group("integer"):
            return Literal(m.group("integer"), "integer"), m.end()
        return Literal(m.group("boolean"), "boolean"), m.end()
    except ValueError as exc:
        raise ParseError(str(exc), lineno, pos + 1) from None


def parse_trace(text: str) -> tuple[list[TraceEvent], dict[str, str]]:
    """Parse a .trc file into events (in file order) and its prefix map."""
    prefixes: dict[str, str] = {}
    events: list[TraceEvent] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        pm = _PREFIX_LINE_RE.match(line)
        if pm:
            prefixes[pm.group(1) or ""] = pm.group(2)
            continue
        em = _EVENT_HEAD_RE.match(line)
        if em is None:
            raise ParseError(f"cannot parse trace line: {line!r}", lineno, 1)
        time, kind, rest = int(em.group(1)), em.group(2), em.group(3)
        pos = 0
        terms = []
        for _ in range(3):
            term, pos = _parse_trace_term(rest, pos, prefixes, lineno)
            terms.append(term)
        fields: dict[str, str] = {}
        while True:
            fm = _FIELD_RE.match(rest, pos)
            if fm is None:
                break
            fields[fm.group(1)] = fm.group(2)
            pos = fm.end()
        if rest[pos:].strip():
            raise ParseError(f"unexpected trailing input {rest[pos:].strip()!r}", lineno, pos + 1)

        provider = fields.pop("provider", None)
        cls_token = fields.pop("class", None)
        classification = None
        if cls_token is not None:
            try:
                classification = Classification.parse(cls_token)
            except ValueError as exc:
                raise ParseError(str(exc), lineno, 1) from None
        qoc = from_fields(fields) if fields else None

        subject, predicate, obj = terms
        if kind == "assert":
            if not isinstance(subject, Iri) or not isinstance(predicate, Iri) or obj is None:
                raise ParseError("assert events need a ground subject, predicate and object", lineno, 1)
            if provider is None:
                raise ParseError("assert events need provider=<id>", lineno, 1)
        else:
            for t in terms:
                if isinstance(t, Variable):
                    raise ParseError("retract patterns use '*' wildcards, not variables", lineno, 1)
        events.append(
            TraceEvent(
                time=time,
                kind=kind,
                subject=subject,
                predicate=predicate,
                object=obj,
                provider=provider,
                classification=classification,
                qoc=qoc,
                line=lineno,
            )
        )
    return events, prefixes


# -- the engine -----------------------------------------------------------------

def _effective_classification(
    registry: Optional[SchemaRegistry], predicate: Iri, requested: Optional[Classification]
) -> Classification:
    """Declared classification, overridable by the provider downward only."""
    declared = Classification.SENSED
    if registry is not None and registry.declares_predicate(predicate.value):
        declared = registry.classification_for(predicate.value)
    if requested is None:
        return declared
    if requested.rank <= declared.rank:
        return requested
    logger.warning(
        "classification %s on %s exceeds declared %s; clamped",
        requested.value, predicate.value, declared.value,
    )
    return declared


_METRIC_SUFFIX = {"percent": "", "meter": "m", "millisecond": "ms", "second": "s"}


def _metric_token(metric) -> str:
    value = metric.value
    text = str(int(value)) if float(value).is_integer() else str(value)
    return text + _METRIC_SUFFIX.get(metric.unit, metric.unit)


def _qoc_fields(qoc: Optional[QualityConstraint]) -> list[tuple[str, str]]:
    if qoc is None:
        return []
    names = {
        ParameterKind.CERTAINTY: "certainty",
        ParameterKind.ACCURACY: "accuracy",
        ParameterKind.RESOLUTION: "resolution",
        ParameterKind.FRESHNESS: "lifetime",
    }
    return [(names[kind], _metric_token(metric)) for kind, metric in qoc.parameters]


class Engine:
    """The context interpreter plus its surrounding runtime components."""

    def __init__(
        self,
        registry: Optional[SchemaRegistry] = None,
        rules: Optional[RuleSet] = None,
        services: Sequence[ContextAwareService] = (),
        providers: Sequence[ContextProvider] = (),
        aggregations: Sequence[AggregationSpec] = (),
        interpreter_id: str = INTERPRETER_ID,
        strict: bool = False,
        prefixes: Optional[dict[str, str]] = None,
    ):
        self.kb = ContextKB(registry=registry or SchemaRegistry(), strict=strict)
        self.rules = rules if rules is not None else RuleSet((), {})
        self.services = list(services)
        self.aggregations = tuple(aggregations)
        self.interpreter_id = interpreter_id
        self.prefixes = dict(DEFAULT_PREFIXES)
        if prefixes:
            self.prefixes.update(prefixes)

        self.service_registry = ServiceRegistry()
        self.service_registry.advertise(
            RegistryEntry(interpreter_id, ServiceType.INTERPRETER, {"component": "interpreter"})
        )
        for provider in providers:
            attrs = dict(provider.attributes)
            attrs.setdefault("kind", provider.kind.value)
            self.service_registry.advertise(RegistryEntry(provider.provider_id, ServiceType.PROVIDER, attrs))
        for service in self.services:
            self.service_registry.advertise(
                RegistryEntry(service.service_id, ServiceType.APPLICATION_SERVICE, dict(service.attributes))
            )

        self._active: dict[str, dict[StatementKey, dict[str, Term]]] = {
            s.service_id: {} for s in self.services
        }
        self._winners: dict[tuple[Iri, Iri], StatementKey] = {}

    # -- cycle -------------------------------------------------------------

    def step(self, events: Union[TraceEvent, Sequence[TraceEvent]]) -> CycleReport:
        """One deterministic cycle over a batch of same-timestamp events.

        Order: apply events, resolve conflicts, maintain/infer, re-resolve
        over new derived facts, evaluate subscriptions against the delta.
        An erroring event is recorded and skipped; the engine continues.
        """
        batch = [events] if isinstance(events, TraceEvent) else list(events)
        if not batch:
            raise ValueError("step() needs at least one event")
        if any(e.time != batch[0].time for e in batch):
            raise ValueError("one step processes events of a single timestamp")
        now = batch[0].time
        report = CycleReport(time=now)
        changed: set[str] = set()

        for event in batch:
            try:
                self._apply(event, report, changed)
            except SocamError as exc:
                message = f"line {event.line}: {type(exc).__name__}: {exc}" if event.line else f"{type(exc).__name__}: {exc}"
                report.errors.append(message)
                logger.warning("event skipped: %s", message)
        self.kb.touch(now)

        detect_and_resolve(self.kb, now)
        derivation = maintain(
            self.kb,
            self.rules,
            changed,
            now,
            self.interpreter_id,
            self.aggregations,
        )
        report.added.extend(derivation.added)
        report.retracted.extend(derivation.retracted)
        resolutions = detect_and_resolve(self.kb, now)
        self._conflict_records(resolutions, now, report)
        self._derivation_records(derivation, now, report)
        self._evaluate_subscriptions(now, report)
        return report

    def submit(self, event: TraceEvent) -> CycleReport:
        """Feed one programmatic event through a full cycle."""
        return self.step(event)

    def _apply(self, event: TraceEvent, report: CycleReport, changed: set[str]) -> None:
        if event.kind == "assert":
            classification = _effective_classification(self.kb.registry, event.predicate, event.classification)
            stmt = ContextStatement(
                triple=Triple(event.subject, event.predicate, event.object),
                classification=classification,
                qoc=event.qoc,
                produced_at=event.time,
                provider=event.provider,
            )
            self.kb.assert_(stmt)
            for warning in domain_range_warnings(self.kb, stmt):
                logger.warning("%s", warning)
            report.events.append(event)
            data = [
                ("subject", stmt.triple.subject),
                ("predicate", stmt.triple.predicate),
                ("object", stmt.triple.object),
                ("provider", stmt.provider),
                ("class", stmt.classification.value),
            ]
            data.extend(_qoc_fields(stmt.qoc))
            report.records.append(LogRecord("assert", event.time, tuple(data)))
            changed.add(stmt.triple.predicate.value)
        else:
            pattern = TriplePattern(event.subject, event.predicate, event.object)
            doomed = [
                m.statement
                for m in self.kb.query(pattern, raw=True)
                if event.provider is None or m.statement.provider == event.provider
            ]
            count = self.kb.retract(pattern, provider=event.provider)
            report.events.append(event)
            for stmt in doomed:
                changed.add(stmt.triple.predicate.value)
            data = [
                ("subject", event.subject if event.subject is not None else "*"),
                ("predicate", event.predicate if event.predicate is not None else "*"),
                ("object", event.object if event.object is not None else "*"),
            ]
            if event.provider is not None:
                data.append(("provider", event.provider))
            data.append(("count", count))
            report.records.append(LogRecord("retract", event.time, tuple(data)))

    def _conflict_records(self, resolutions: list[Resolution], now: int, report: CycleReport) -> None:
        winners: dict[tuple[Iri, Iri], StatementKey] = {}
        for res in resolutions:
            sp = (res.conflict.subject, res.conflict.predicate)
            winners[sp] = res.winner.key
            if self._winners.get(sp) != res.winner.key:
                report.resolutions.append(res)
                report.records.append(
                    LogRecord(
                        "conflict-resolved",
                        now,
                        (
                            ("subject", res.conflict.subject),
                            ("predicate", res.conflict.predicate),
                            ("winner", res.winner.triple.object),
                            ("provider", res.winner.provider),
                            ("losers", len(res.losers)),
                        ),
                    )
                )
        self._winners = winners

    def _derivation_records(self, derivation: DerivationResult, now: int, report: CycleReport) -> None:
        for stmt in derivation.retracted:
            report.records.append(
                LogRecord(
                    "undo-derive",
                    now,
                    (
                        ("subject", stmt.triple.subject),
                        ("predicate", stmt.triple.predicate),
                        ("object", stmt.triple.object),
                        ("class", stmt.classification.value),
                    ),
                )
            )
        for stmt in derivation.added:
            record = self.kb.supports.get(stmt.key)
            data = [
                ("subject", stmt.triple.subject),
                ("predicate", stmt.triple.predicate),
                ("object", stmt.triple.object),
                ("class", stmt.classification.value),
            ]
            data.extend(_qoc_fields(stmt.qoc))
            if record is not None:
                data.append(("via", record.rule))
            report.records.append(LogRecord("derive", now, tuple(data)))

    def _evaluate_subscriptions(self, now: int, report: CycleReport) -> None:
        for service in sorted(self.services, key=lambda s: s.service_id):
            matches = self.kb.query(service.subscription.pattern, as_of=now, fresh_only=True)
            current: dict[StatementKey, dict[str, Term]] = {}
            for match in matches:
                if service.subscription.accepts(match.statement):
                    current[match.statement.key] = match.bindings
            previous = self._active[service.service_id]
            appeared = [k for k in current if k not in previous]
            vanished = [k for k in previous if k not in current]
            for key in sorted(appeared, key=lambda k: (k[0].sort_key(), k[1])):
                report.actions.append(
                    ActionRecord(now, service.service_id, service.template.name, service.template.bind(current[key]), "activate")
                )
            for key in sorted(vanished, key=lambda k: (k[0].sort_key(), k[1])):
                report.actions.append(
                    ActionRecord(now, service.service_id, service.template.name, service.template.bind(previous[key]), "deactivate")
                )
            self._active[service.service_id] = current
        for action in report.actions:
            data = [("service", action.service_id), ("action", action.action)]
            data.extend(action.params)
            data.append(("phase", action.phase))
            report.records.append(LogRecord("action", action.time, tuple(data)))


def run_trace(engine: Engine, events: Sequence[TraceEvent]) -> list[LogRecord]:
    """Fold step() over a timestamp-sorted trace, batching equal timestamps.

    Events inside one timestamp apply in file order; out-of-order
    timestamps are rejected.
    """
    records: list[LogRecord] = []
    previous = None
    batch: list[TraceEvent] = []
    for event in events:
        if previous is not None and event.time < previous:
            raise UnsortedTrace(f"event at t={event.time} after t={previous}")
        if batch and event.time != batch[0].time:
            records.extend(engine.step(batch).records)
            batch = []
        batch.append(event)
        previous = event.time
    if batch:
        records.extend(engine.step(batch).records)
    return records


# -- log rendering ----------------------------------------------------------------

def _render_value(value: object, prefixes: dict[str, str]) -> str:
    if isinstance(value, (Iri, Literal, Variable)):
        return render_term(value, prefixes)
    return str(value)


def render_text(records: Sequence[LogRecord], prefixes: Optional[dict[str, str]] = None) -> str:
    """One line per record: ``t=<ms> <kind> ...`` with qnamed terms."""
    prefixes = prefixes or DEFAULT_PREFIXES
    positional = {"assert", "retract", "derive", "undo-derive"}
    lines = []
    for record in records:
        parts = [f"t={record.time}", record.kind]
        data = dict(record.data)
        skip = set()
        if record.kind in positional:
            for slot in ("subject", "predicate", "object"):
                parts.append(_render_value(data[slot], prefixes))
                skip.add(slot)
        for name, value in record.data:
            if name not in skip:
                parts.append(f"{name}={_render_value(value, prefixes)}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def render_jsonl(records: Sequence[LogRecord]) -> str:
    """One JSON object per line; terms rendered with full IRIs."""
    lines = []
    for record in records:
        obj: dict[str, object] = {"t": record.time, "kind": record.kind}
        for name, value in record.data:
            if isinstance(value, (Iri, Literal, Variable)):
                obj[name] = render_term(value, {})
            else:
                obj[name] = value
        lines.append(json.dumps(obj, ensure_ascii=False))
    return "\n".join(lines) + ("\n" if lines else "")


# -- shipped smart-home wiring -------------------------------------------------

def default_home_services() -> list[ContextAwareService]:
    """The context-aware services exercised by the bundled scenario trace."""
    home = HOME_NS
    return [
        ContextAwareService(
            "baby-monitor",
            Subscription(
                pattern=TriplePattern(Iri(home + "Julia"), Iri(home + "locatedAt"), Variable("room")),
                classification=Classification.SENSED,
            ),
            ActionTemplate("SwitchChannel", {"room": "?room"}),
            attributes={"watches": home + "Julia"},
        ),
        ContextAwareService(
            "lighting-service",
            Subscription(
                pattern=TriplePattern(Variable("p"), Iri(home + "personStatus"), Literal("WatchingTV")),
            ),
            ActionTemplate("DimLights", {"p": "?p"}),
            attributes={"predicate": home + "personStatus"},
        ),
        ContextAwareService(
            "personal-comm-agent",
            Subscription(
                pattern=TriplePattern(Variable("p"), Iri(home + "personStatus"), Literal("Sleeping")),
            ),
            ActionTemplate("ForwardToVoicemail", {"p": "?p"}),
            attributes={"predicate": home + "personStatus"},
        ),
    ]


def default_home_providers() -> list[ContextProvider]:
    home = HOME_NS
    internal = ProviderKind.INTERNAL
    return [
        ContextProvider("setup", internal, {"predicate": RDF_NS + "type"}),
        ContextProvider("rfid1", internal, {"predicate": home + "locatedAt", "technology": "rfid"}),
        ContextProvider("cam1", internal, {"predicate": home + "locatedAt", "technology": "camera"}),
        ContextProvider("bedsensor1", internal, {"predicate": home + "locatedAt", "technology": "pressure"}),
        ContextProvider("posture1", internal, {"predicate": home + "posture"}),
        ContextProvider("doorsensor1", internal, {"predicate": home + "deviceStatus"}),
        ContextProvider("curtain1", internal, {"predicate": home + "deviceStatus"}),
        ContextProvider("tv1", internal, {"predicate": home + "deviceStatus"}),
        ContextProvider("fridge1", internal, {"predicate": home + "available"}),
        ContextProvider("weather-svc", ProviderKind.EXTERNAL, {"predicate": home + "weatherCond"}),
    ]


def default_home_aggregations() -> list[AggregationSpec]:
    home = HOME_NS
    return [
        AggregationSpec(
            group_subject=Iri(home + "Members-Smith"),
            member_predicate=Iri(home + "hasMember"),
            source_predicate=Iri(home + "foodPreference"),
            target_predicate=Iri(home + "familyFoodPreference"),
            combiner="intersection",
        )
    ]
