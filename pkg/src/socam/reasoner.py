"""Rule language and the stratified forward-chaining engine.

Rules are Horn clauses with optional negation-as-failure and comparison
builtins.  Derived statements are classified Deduced, stamped with the
interpreter's provider id, and carry support records used for
dependency-driven retraction (truth maintenance).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence, Union

from .errors import (
    FixpointBudgetExceeded,
    NonDeducedHead,
    ParseError,
    UnknownPrefix,
    UnknownPredicate,
    UnsafeRule,
    UnstratifiableNegation,
)
from .model import (
    Classification,
    ContextKB,
    ContextStatement,
    Iri,
    Literal,
    StatementKey,
    SupportRecord,
    Term,
    Triple,
    TriplePattern,
    Variable,
    substitute,
    term_key,
)
from .ontology import SchemaRegistry
from .qoc import Metric, ParameterKind, QualityConstraint

logger = logging.getLogger(__name__)

INTERPRETER_ID = "context-interpreter"

BUILTIN_OPS = ("equal", "notEqual", "lessThan", "greaterThan")

DEFAULT_FIXPOINT_BUDGET = 10_000


@dataclass(frozen=True)
class PositiveClause:
    pattern: TriplePattern


@dataclass(frozen=True)
class NegatedClause:
    pattern: TriplePattern


@dataclass(frozen=True)
class BuiltinClause:
    op: str
    left: Term
    right: Term


BodyClause = Union[PositiveClause, NegatedClause, BuiltinClause]


@dataclass(frozen=True)
class Rule:
    name: str
    body: tuple[BodyClause, ...]
    heads: tuple[TriplePattern, ...]

    def positive(self) -> list[PositiveClause]:
        return [c for c in self.body if isinstance(c, PositiveClause)]

    def negated(self) -> list[NegatedClause]:
        return [c for c in self.body if isinstance(c, NegatedClause)]

    def builtins(self) -> list[BuiltinClause]:
        return [c for c in self.body if isinstance(c, BuiltinClause)]

    def head_predicates(self) -> list[str]:
        return [h.predicate.value for h in self.heads if isinstance(h.predicate, Iri)]

    def body_predicates(self) -> frozenset[str]:
        """Constant predicates mentioned by positive or negated patterns."""
        preds = set()
        for clause in self.body:
            if isinstance(clause, (PositiveClause, NegatedClause)) and isinstance(clause.pattern.predicate, Iri):
                preds.add(clause.pattern.predicate.value)
        return frozenset(preds)

    def has_variable_predicate(self) -> bool:
        return any(
            isinstance(c, PositiveClause) and isinstance(c.pattern.predicate, Variable)
            for c in self.body
        )


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]
    strata: dict[str, int] = field(default_factory=dict)  # rule name -> max head stratum
    pred_strata: dict[str, int] = field(default_factory=dict)

    @property
    def max_stratum(self) -> int:
        return max(self.strata.values(), default=0)

    def head_stratum(self, predicate: str) -> int:
        return self.pred_strata.get(predicate, 0)

    def in_stratum(self, i: int) -> list[Rule]:
        """Rules with at least one head predicate in stratum i; each head is
        instantiated only during its own predicate's stratum."""
        return [r for r in self.rules if any(self.head_stratum(p) == i for p in r.head_predicates())]


# -- rule language parsing ---------------------------------------------------

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*")


@dataclass(frozen=True)
class _Tok:
    kind: str
    value: object
    line: int
    column: int


_RULE_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+)
    | (?P<comment>\#[^\n]*)
    | (?P<prefix_kw>@prefix\b)
    | (?P<arrow>->)
    | (?P<iriref><[^<>\s"]*>)
    | (?P<var>\?[A-Za-z_][A-Za-z0-9_]*)
    | (?P<qname>(?:[A-Za-z][A-Za-z0-9_\-]*)?:[A-Za-z_][A-Za-z0-9_\-]*)
    | (?P<pname_ns>(?:[A-Za-z][A-Za-z0-9_\-]*)?:)
    | (?P<string>"(?:[^"\\\n]|\\.)*")
    | (?P<decimal>[+-]?[0-9]+\.[0-9]+)
    | (?P<integer>[+-]?[0-9]+)
    | (?P<ident>[A-Za-z_][A-Za-z0-9_\-]*)
    | (?P<punct>[\[\]():,.])
    """,
    re.VERBOSE,
)

_STRING_ESCAPES = {"\\\\": "\\", '\\"': '"', "\\n": "\n", "\\r": "\r", "\\t": "\t"}


def _tokenize_rules(text: str) -> list[_Tok]:
    out = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _RULE_TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        if kind == "string" and value.rstrip().endswith("\\"):
            raise ParseError("unterminated string literal", line, col)
        if kind not in ("ws", "comment"):
            out.append(_Tok(kind, value, line, col))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            col = len(value) - value.rfind("\n")
        else:
            col += len(value)
        pos = m.end()
    out.append(_Tok("eof", None, line, col))
    return out


class _RuleParser:
    def __init__(self, text: str, prefixes: Optional[dict[str, str]] = None):
        self.tokens = _tokenize_rules(text)
        self.i = 0
        self.prefixes = dict(prefixes) if prefixes else {}

    def _peek(self) -> _Tok:
        return self.tokens[self.i]

    def _next(self) -> _Tok:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def _expect(self, kind: str, value=None) -> _Tok:
        tok = self._next()
        if tok.kind != kind or (value is not None and tok.value != value):
            raise ParseError(f"expected {value or kind}, got {tok.value!r}", tok.line, tok.column)
        return tok

    def parse(self) -> list[Rule]:
        rules = []
        while self._peek().kind != "eof":
            tok = self._peek()
            if tok.kind == "prefix_kw":
                self._next()
                ns_tok = self._next()
                if ns_tok.kind == "pname_ns":
                    name = ns_tok.value[:-1]
                elif ns_tok.kind == "qname":  # e.g. "rdf:" scanned oddly; be strict
                    raise ParseError("expected prefix declaration", ns_tok.line, ns_tok.column)
                else:
                    raise ParseError("expected prefix name", ns_tok.line, ns_tok.column)
                iri_tok = self._expect("iriref")
                self._expect("punct", ".")
                self.prefixes[name] = iri_tok.value[1:-1]
            elif tok.kind == "punct" and tok.value == "[":
                rules.append(self._rule())
            else:
                raise ParseError(f"expected a rule, got {tok.value!r}", tok.line, tok.column)
        return rules

    def _rule(self) -> Rule:
        self._expect("punct", "[")
        name_tok = self._next()
        if name_tok.kind == "pname_ns":  # "name:" scans as one token
            name_tok = _Tok("ident", name_tok.value[:-1], name_tok.line, name_tok.column)
        elif name_tok.kind == "ident":
            self._expect("punct", ":")
        else:
            raise ParseError("expected rule name", name_tok.line, name_tok.column)
        body: list[BodyClause] = []
        while True:
            body.append(self._clause())
            tok = self._peek()
            if tok.kind == "punct" and tok.value == ",":
                self._next()
                continue
            break
        self._expect("arrow")
        heads: list[TriplePattern] = []
        while True:
            heads.append(self._pattern())
            tok = self._peek()
            if tok.kind == "punct" and tok.value == ",":
                self._next()
                continue
            break
        self._expect("punct", "]")
        return Rule(name_tok.value, tuple(body), tuple(heads))

    def _clause(self) -> BodyClause:
        tok = self._peek()
        if tok.kind == "punct" and tok.value == "(":
            return PositiveClause(self._pattern())
        if tok.kind == "ident":
            self._next()
            if tok.value == "not":
                return NegatedClause(self._pattern())
            if tok.value in BUILTIN_OPS:
                self._expect("punct", "(")
                left = self._term()
                self._maybe_comma()
                right = self._term()
                self._expect("punct", ")")
                return BuiltinClause(tok.value, left, right)
            raise ParseError(f"unknown clause keyword {tok.value!r}", tok.line, tok.column)
        raise ParseError(f"expected a clause, got {tok.value!r}", tok.line, tok.column)

    def _maybe_comma(self) -> None:
        if self._peek().kind == "punct" and self._peek().value == ",":
            self._next()

    def _pattern(self) -> TriplePattern:
        self._expect("punct", "(")
        s = self._term()
        self._maybe_comma()
        p = self._term()
        self._maybe_comma()
        o = self._term()
        self._expect("punct", ")")
        return TriplePattern(s, p, o)

    def _term(self) -> Term:
        tok = self._next()
        try:
            if tok.kind == "var":
                return Variable(tok.value[1:])
            if tok.kind == "iriref":
                return Iri(tok.value[1:-1])
            if tok.kind == "qname":
                prefix, local = tok.value.split(":", 1)
                base = self.prefixes.get(prefix)
                if base is None:
                    raise UnknownPrefix(f"unknown prefix {prefix + ':'!r}", tok.line, tok.column)
                return Iri(base + local)
            if tok.kind == "string":
                body = tok.value[1:-1]
                unescaped = re.sub(r"\\.", lambda m: _STRING_ESCAPES.get(m.group(), m.group()[1]), body)
                return Literal(unescaped)
            if tok.kind == "integer":
                return Literal(tok.value, "integer")
            if tok.kind == "decimal":
                return Literal(tok.value, "double")
            if tok.kind == "ident" and tok.value in ("true", "false"):
                return Literal(tok.value, "boolean")
        except ValueError as exc:
            raise ParseError(str(exc), tok.line, tok.column) from None
        raise ParseError(f"expected a term, got {tok.value!r}", tok.line, tok.column)


def parse_pattern(text: str, prefixes: Optional[dict[str, str]] = None) -> TriplePattern:
    """Parse a single ``(term term term)`` pattern, e.g. for CLI queries."""
    parser = _RuleParser(text, prefixes)
    pattern = parser._pattern()
    tok = parser._peek()
    if tok.kind != "eof":
        raise ParseError(f"trailing input after pattern: {tok.value!r}", tok.line, tok.column)
    return pattern


def _check_safety(rule: Rule) -> None:
    positive_vars: set[str] = set()
    for clause in rule.positive():
        positive_vars |= clause.pattern.variables()
    for head in rule.heads:
        if not isinstance(head.predicate, Iri):
            raise UnsafeRule(f"{rule.name}: head predicate must be a constant")
        missing = head.variables() - positive_vars
        if missing:
            raise UnsafeRule(f"{rule.name}: head variable(s) {sorted(missing)} not bound by a positive pattern")
    for clause in rule.negated():
        if isinstance(clause.pattern.predicate, Variable):
            raise UnsafeRule(f"{rule.name}: negated pattern needs a constant predicate")
        missing = clause.pattern.variables() - positive_vars
        if missing:
            raise UnsafeRule(f"{rule.name}: negated variable(s) {sorted(missing)} not bound by a positive pattern")
    for clause in rule.builtins():
        for term in (clause.left, clause.right):
            if isinstance(term, Variable) and term.name not in positive_vars:
                raise UnsafeRule(f"{rule.name}: builtin variable ?{term.name} not bound by a positive pattern")


def _stratify(rules: Sequence[Rule]) -> dict[str, int]:
    preds: set[str] = set()
    for rule in rules:
        preds.update(rule.head_predicates())
        preds.update(rule.body_predicates())
    stratum = {p: 0 for p in preds}
    limit = len(preds)

    for _ in range(limit * limit + 2):
        changed = False
        for rule in rules:
            for head in rule.head_predicates():
                for clause in rule.body:
                    if isinstance(clause, PositiveClause) and isinstance(clause.pattern.predicate, Iri):
                        floor = stratum[clause.pattern.predicate.value]
                    elif isinstance(clause, NegatedClause):
                        floor = stratum[clause.pattern.predicate.value] + 1
                    else:
                        continue
                    if floor > stratum[head]:
                        if floor > limit:
                            raise UnstratifiableNegation(
                                f"no stratification: cycle through negation at {head}"
                            )
                        stratum[head] = floor
                        changed = True
        if not changed:
            break
    else:
        raise UnstratifiableNegation("no stratification: stratum assignment did not converge")
    return stratum


def parse_rules(
    text: str,
    registry: Optional[SchemaRegistry] = None,
    strict: bool = False,
    prefixes: Optional[dict[str, str]] = None,
) -> RuleSet:
    """Parse a rule file into a verified (safe, stratified) rule set.

    With a registry, every head predicate must be declared Deduced or
    Aggregated; undeclared head predicates are rejected only in strict mode.
    """
    rules = _RuleParser(text, prefixes).parse()
    seen = set()
    for rule in rules:
        if rule.name in seen:
            raise ParseError(f"duplicate rule name {rule.name!r}")
        seen.add(rule.name)
        _check_safety(rule)
        if registry is not None:
            for pred in rule.head_predicates():
                decl = registry.property_decl(pred)
                if decl is None:
                    if strict:
                        raise NonDeducedHead(f"{rule.name}: head predicate {pred} is not declared")
                    logger.warning("rule %s derives undeclared predicate %s", rule.name, pred)
                    continue
                if decl.classified_as not in (Classification.DEDUCED, Classification.AGGREGATED):
                    raise NonDeducedHead(
                        f"{rule.name}: head predicate {pred} is classified {decl.classified_as.value}"
                    )
    pred_strata = _stratify(rules)
    strata = {
        rule.name: max((pred_strata[p] for p in rule.head_predicates()), default=0)
        for rule in rules
    }
    return RuleSet(tuple(rules), strata, pred_strata)


# -- matching -----------------------------------------------------------------

def _builtin_holds(clause: BuiltinClause, bindings: dict[str, Term]) -> bool:
    def resolve(t: Term) -> Term:
        return bindings[t.name] if isinstance(t, Variable) else t

    left, right = resolve(clause.left), resolve(clause.right)
    if clause.op == "equal":
        return left == right
    if clause.op == "notEqual":
        return left != right
    # ordering builtins: two literals of the same datatype
    if not (isinstance(left, Literal) and isinstance(right, Literal)):
        return False
    if left.datatype != right.datatype or left.datatype == "boolean":
        return False
    lv, rv = left.value(), right.value()
    return lv < rv if clause.op == "lessThan" else lv > rv


def _match_body(kb: ContextKB, rule: Rule, now: int) -> Iterator[tuple[dict[str, Term], frozenset[StatementKey]]]:
    """Enumerate all solutions of a rule body over fresh, conflict-winning
    statements.  Positive patterns join first, then builtins, then NAF."""
    positives = rule.positive()

    def walk(idx: int, bindings: dict[str, Term], support: tuple[StatementKey, ...]):
        if idx == len(positives):
            for clause in rule.builtins():
                if not _builtin_holds(clause, bindings):
                    return
            for clause in rule.negated():
                probe = substitute(clause.pattern, bindings)
                if kb.query(probe, as_of=now, fresh_only=True):
                    return
            yield dict(bindings), frozenset(support)
            return
        probe = substitute(positives[idx].pattern, bindings)
        for match in kb.query(probe, as_of=now, fresh_only=True):
            merged = dict(bindings)
            merged.update(match.bindings)
            yield from walk(idx + 1, merged, support + (match.statement.key,))

    yield from walk(0, {}, ())


def _instantiate(head: TriplePattern, bindings: dict[str, Term]) -> Triple:
    pat = substitute(head, bindings)
    return Triple(pat.subject, pat.predicate, pat.object)


def _effective_certainty(stmt: ContextStatement) -> float:
    if stmt.qoc is not None and stmt.qoc.certainty is not None:
        return stmt.qoc.certainty
    return 100.0


def _min_certainty(kb: ContextKB, keys: Iterable[StatementKey]) -> float:
    certainties = [100.0]
    for key in keys:
        stmt = kb.get(key)
        if stmt is not None:
            certainties.append(_effective_certainty(stmt))
    return min(certainties)


def _certainty_qoc(value: float) -> QualityConstraint:
    return QualityConstraint({ParameterKind.CERTAINTY: Metric(value, "percentage", "percent")})


@dataclass(frozen=True)
class DerivationResult:
    """Net outcome of an inference or maintenance pass."""

    added: tuple[ContextStatement, ...] = ()
    retracted: tuple[ContextStatement, ...] = ()
    supports: dict[StatementKey, SupportRecord] = field(default_factory=dict)


def infer(
    kb: ContextKB,
    rules: RuleSet,
    now: Optional[int] = None,
    interpreter_id: str = INTERPRETER_ID,
    budget: int = DEFAULT_FIXPOINT_BUDGET,
) -> DerivationResult:
    """Forward chaining to fixpoint, stratum by stratum.

    Only fresh, conflict-winning statements match positive patterns.
    Each derived statement is Deduced, produced at `now` by the interpreter,
    with certainty = min over its supports.
    """
    now = kb.clock if now is None else now
    added: list[ContextStatement] = []
    new_supports: dict[StatementKey, SupportRecord] = {}
    iterations = 0
    for stratum in range(rules.max_stratum + 1):
        stratum_rules = rules.in_stratum(stratum)
        if not stratum_rules:
            continue
        while True:
            iterations += 1
            if iterations > budget:
                raise FixpointBudgetExceeded(f"no fixpoint after {budget} iterations")
            fresh: list[ContextStatement] = []
            for rule in stratum_rules:
                heads = [
                    h for h in rule.heads
                    if isinstance(h.predicate, Iri) and rules.head_stratum(h.predicate.value) == stratum
                ]
                solutions = sorted(
                    _match_body(kb, rule, now),
                    key=lambda sol: sorted((k, term_key(v)) for k, v in sol[0].items()),
                )
                for bindings, support in solutions:
                    for head in heads:
                        triple = _instantiate(head, bindings)
                        key = (triple, interpreter_id)
                        if kb.get(key) is not None:
                            continue
                        stmt = ContextStatement(
                            triple=triple,
                            classification=Classification.DEDUCED,
                            qoc=_certainty_qoc(_min_certainty(kb, support)),
                            produced_at=now,
                            provider=interpreter_id,
                        )
                        kb.assert_(stmt)
                        record = SupportRecord(
                            rule=rule.name,
                            supports=support,
                            body_predicates=rule.body_predicates(),
                            any_predicate=rule.has_variable_predicate(),
                        )
                        kb.supports[key] = record
                        new_supports[key] = record
                        fresh.append(stmt)
            if not fresh:
                break
            added.extend(fresh)
    return DerivationResult(tuple(added), (), new_supports)


# -- aggregation ---------------------------------------------------------------

@dataclass(frozen=True)
class AggregationSpec:
    """Combine one property's values over a group's members into an
    Aggregated property on the group subject."""

    group_subject: Iri
    member_predicate: Iri
    source_predicate: Iri
    target_predicate: Iri
    combiner: str = "intersection"  # or "union"

    def __post_init__(self):
        if self.combiner not in ("union", "intersection"):
            raise ValueError(f"unknown combiner {self.combiner!r}")


def _aggregate_values(
    kb: ContextKB, spec: AggregationSpec, now: int
) -> dict[Term, tuple[float, frozenset[StatementKey]]]:
    member_matches = kb.query(
        TriplePattern(spec.group_subject, spec.member_predicate, Variable("m")),
        as_of=now,
        fresh_only=True,
    )
    members: list[tuple[Iri, StatementKey]] = []
    for match in member_matches:
        obj = match.statement.triple.object
        if isinstance(obj, Iri):
            members.append((obj, match.statement.key))
    if not members:
        return {}

    per_member: dict[Iri, dict[Term, list[StatementKey]]] = {}
    for member, _ in members:
        values: dict[Term, list[StatementKey]] = {}
        for match in kb.query(TriplePattern(member, spec.source_predicate, None), as_of=now, fresh_only=True):
            values.setdefault(match.statement.triple.object, []).append(match.statement.key)
        per_member[member] = values

    if spec.combiner == "union":
        combined: set[Term] = set()
        for values in per_member.values():
            combined |= set(values)
    else:
        combined = set.intersection(*(set(v) for v in per_member.values()))

    member_keys = frozenset(key for _, key in members)
    out: dict[Term, tuple[float, frozenset[StatementKey]]] = {}
    for value in combined:
        contributing: set[StatementKey] = set()
        for values in per_member.values():
            contributing.update(values.get(value, ()))
        certainty = _min_certainty(kb, contributing)
        out[value] = (certainty, frozenset(contributing) | member_keys)
    return out


def aggregate(
    kb: ContextKB,
    spec: AggregationSpec,
    now: Optional[int] = None,
    interpreter_id: str = INTERPRETER_ID,
) -> list[ContextStatement]:
    """Compute and assert the aggregated statements for one spec.

    Returns the statements newly added (values already present with the
    same certainty are left untouched).
    """
    now = kb.clock if now is None else now
    if kb.strict and kb.registry is not None:
        for pred in (spec.member_predicate, spec.source_predicate, spec.target_predicate):
            if not kb.registry.declares_predicate(pred.value):
                raise UnknownPredicate(pred.value)

    desired = _aggregate_values(kb, spec, now)
    added = []
    for value in sorted(desired, key=term_key):
        certainty, support = desired[value]
        triple = Triple(spec.group_subject, spec.target_predicate, value)
        key = (triple, interpreter_id)
        record = SupportRecord(
            rule=f"aggregate:{spec.target_predicate.value}",
            supports=support,
            body_predicates=frozenset({spec.member_predicate.value, spec.source_predicate.value}),
        )
        existing = kb.get(key)
        if existing is not None and _effective_certainty(existing) == certainty:
            kb.supports[key] = record
            continue
        stmt = ContextStatement(
            triple=triple,
            classification=Classification.AGGREGATED,
            qoc=_certainty_qoc(certainty),
            produced_at=now,
            provider=interpreter_id,
        )
        kb.assert_(stmt)
        kb.supports[key] = record
        added.append(stmt)
    return added


# -- truth maintenance ----------------------------------------------------------

def _support_invalid(kb: ContextKB, record: SupportRecord, now: int) -> bool:
    for key in record.supports:
        stmt = kb.get(key)
        if stmt is None or not stmt.is_fresh(now) or kb.is_loser(key):
            return True
    return False


def maintain(
    kb: ContextKB,
    rules: RuleSet,
    changed_predicates: Iterable[str],
    now: Optional[int] = None,
    interpreter_id: str = INTERPRETER_ID,
    aggregations: Sequence[AggregationSpec] = (),
    budget: int = DEFAULT_FIXPOINT_BUDGET,
) -> DerivationResult:
    """Retract invalidated derived statements and re-run inference.

    A derived statement is retracted when its predicate's declared
    dependsOn set intersects the changed predicates, when the rule that
    derived it mentions a changed predicate (covers negation flips), or
    when any statement in its support set is gone, stale or a conflict
    loser.  The net effect equals recomputation from scratch; statements
    re-derived unchanged keep their original production time and are not
    reported.
    """
    now = kb.clock if now is None else now
    changed = set(changed_predicates)
    removed: dict[StatementKey, ContextStatement] = {}

    # recompute aggregations first: rules may consume aggregated context
    agg_added: list[ContextStatement] = []
    for spec in aggregations:
        desired = _aggregate_values(kb, spec, now)
        existing = {
            m.statement.triple.object: m.statement
            for m in kb.query(TriplePattern(spec.group_subject, spec.target_predicate, None), raw=True)
            if m.statement.provider == interpreter_id
        }
        for value in sorted(set(existing) - set(desired), key=term_key):
            stmt = existing[value]
            kb.retract(TriplePattern(stmt.triple.subject, stmt.triple.predicate, stmt.triple.object), provider=interpreter_id)
            removed[stmt.key] = stmt
            changed.add(spec.target_predicate.value)
        for value in sorted(desired, key=term_key):
            certainty, support = desired[value]
            triple = Triple(spec.group_subject, spec.target_predicate, value)
            key = (triple, interpreter_id)
            record = SupportRecord(
                rule=f"aggregate:{spec.target_predicate.value}",
                supports=support,
                body_predicates=frozenset({spec.member_predicate.value, spec.source_predicate.value}),
            )
            old = existing.get(value)
            if old is not None and _effective_certainty(old) == certainty:
                kb.supports[key] = record
                continue
            stmt = ContextStatement(
                triple=triple,
                classification=Classification.AGGREGATED,
                qoc=_certainty_qoc(certainty),
                produced_at=now,
                provider=interpreter_id,
            )
            kb.assert_(stmt)
            kb.supports[key] = record
            if old is not None:
                removed[old.key] = old
            agg_added.append(stmt)
            changed.add(spec.target_predicate.value)

    # cascade retraction of invalidated deduced statements
    while True:
        goners: list[ContextStatement] = []
        for stmt in kb.statements():
            if stmt.provider != interpreter_id or stmt.classification != Classification.DEDUCED:
                continue
            record = kb.supports.get(stmt.key)
            pred = stmt.triple.predicate.value
            declared_deps = kb.registry.depends_on(pred) if kb.registry is not None else frozenset()
            if declared_deps & changed:
                goners.append(stmt)
            elif record is not None and (
                (record.any_predicate and changed)
                or (record.body_predicates & changed)
                or _support_invalid(kb, record, now)
            ):
                goners.append(stmt)
        if not goners:
            break
        for stmt in goners:
            kb.retract(
                TriplePattern(stmt.triple.subject, stmt.triple.predicate, stmt.triple.object),
                provider=interpreter_id,
            )
            removed[stmt.key] = stmt
            changed.add(stmt.triple.predicate.value)

    result = infer(kb, rules, now, interpreter_id, budget)

    # net out re-derivations that reproduce a retracted statement unchanged
    added: list[ContextStatement] = list(agg_added)
    for stmt in result.added:
        old = removed.get(stmt.key)
        if old is not None and old.classification == stmt.classification and old.qoc == stmt.qoc:
            restored = replace(stmt, produced_at=old.produced_at)
            kb.assert_(restored)
            del removed[stmt.key]
            continue
        added.append(stmt)

    retracted = [removed[k] for k in sorted(removed, key=lambda k: (k[0].sort_key(), k[1]))]
    added.sort(key=lambda s: s.sort_key())
    return DerivationResult(tuple(added), tuple(retracted), dict(result.supports))
