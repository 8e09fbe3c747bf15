"""Quality-of-context model: per-statement quality constraints and the
confidence ordering used for conflict resolution.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional

from .errors import MalformedMetric, OutOfRange
from .model import ContextStatement, Literal, Triple

logger = logging.getLogger(__name__)


class ParameterKind(Enum):
    """The four supported quality parameters (closed set in v1)."""

    ACCURACY = "accuracy"
    RESOLUTION = "resolution"
    CERTAINTY = "certainty"
    FRESHNESS = "freshness"


@dataclass(frozen=True)
class Metric:
    """A measured quality value with its type and unit."""

    value: float
    type: str
    unit: str

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise MalformedMetric(f"metric value must be finite: {self.value!r}")


# unit symbol -> (metric type, canonical unit name)
_UNITS = {
    "": None,  # resolved per parameter kind
    "%": ("percentage", "percent"),
    "percent": ("percentage", "percent"),
    "m": ("distance", "meter"),
    "meter": ("distance", "meter"),
    "ms": ("duration", "millisecond"),
    "millisecond": ("duration", "millisecond"),
    "s": ("duration", "second"),
    "second": ("duration", "second"),
}

_PERCENT_KINDS = (ParameterKind.ACCURACY, ParameterKind.CERTAINTY)

_TOKEN_RE = re.compile(r"([+-]?[0-9]+(?:\.[0-9]+)?)\s*([a-zA-Z%]*)\Z")


def parse_metric(kind: ParameterKind, token: str) -> Metric:
    """Parse a flat value token such as ``79``, ``50m`` or ``5000ms``.

    Accuracy and certainty default to percent and must lie in [0, 100];
    resolution and freshness require an explicit unit and must be > 0.
    """
    m = _TOKEN_RE.match(token.strip())
    if m is None:
        raise MalformedMetric(f"{kind.value}: cannot parse metric token {token!r}")
    value = float(m.group(1))
    symbol = m.group(2)
    if symbol == "":
        if kind not in _PERCENT_KINDS:
            raise MalformedMetric(f"{kind.value}: unit required in {token!r}")
        mtype, unit = "percentage", "percent"
    else:
        resolved = _UNITS.get(symbol.lower())
        if resolved is None:
            raise MalformedMetric(f"{kind.value}: unknown unit {symbol!r}")
        mtype, unit = resolved

    if kind in _PERCENT_KINDS and unit == "percent" and not 0.0 <= value <= 100.0:
        raise OutOfRange(f"{kind.value} must be within [0, 100]: {value}")
    if kind in (ParameterKind.RESOLUTION, ParameterKind.FRESHNESS) and value <= 0:
        raise OutOfRange(f"{kind.value} must be > 0: {value}")
    return Metric(value, mtype, unit)


def _canonical(parameters) -> tuple[tuple[ParameterKind, Metric], ...]:
    if isinstance(parameters, Mapping):
        items = parameters.items()
    else:
        items = list(parameters)
    seen = {}
    for kind, metric in items:
        if kind in seen:
            raise MalformedMetric(f"duplicate quality parameter: {kind.value}")
        seen[kind] = metric
    order = list(ParameterKind)
    return tuple(sorted(seen.items(), key=lambda kv: order.index(kv[0])))


@dataclass(frozen=True)
class QualityConstraint:
    """An immutable bag of quality parameters, at most one metric per kind."""

    parameters: tuple[tuple[ParameterKind, Metric], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "parameters", _canonical(self.parameters))

    def get(self, kind: ParameterKind) -> Optional[Metric]:
        for k, metric in self.parameters:
            if k == kind:
                return metric
        return None

    @property
    def certainty(self) -> Optional[float]:
        m = self.get(ParameterKind.CERTAINTY)
        return m.value if m else None

    @property
    def accuracy(self) -> Optional[float]:
        m = self.get(ParameterKind.ACCURACY)
        return m.value if m else None

    @property
    def mean_lifetime(self) -> Optional[float]:
        """Freshness lifetime in milliseconds, if constrained."""
        m = self.get(ParameterKind.FRESHNESS)
        if m is None:
            return None
        return m.value * 1000.0 if m.unit == "second" else m.value

    def __bool__(self) -> bool:
        return bool(self.parameters)


# Field names used both in trace lines and as socam: annotation predicates.
FIELD_KINDS = {
    "accuracy": ParameterKind.ACCURACY,
    "resolution": ParameterKind.RESOLUTION,
    "certainty": ParameterKind.CERTAINTY,
    "lifetime": ParameterKind.FRESHNESS,
}


def from_fields(fields: Mapping[str, str], strict: bool = False) -> Optional[QualityConstraint]:
    """Build a constraint from flat ``name=value`` annotation fields.

    Unknown field names raise in strict mode and are dropped with a warning
    otherwise.  Returns None when no quality field is present.
    """
    params = {}
    for name, token in fields.items():
        kind = FIELD_KINDS.get(name)
        if kind is None:
            if strict:
                raise MalformedMetric(f"unknown quality parameter: {name!r}")
            logger.warning("dropping unknown quality parameter %r", name)
            continue
        params[kind] = parse_metric(kind, token)
    return QualityConstraint(params) if params else None


def parse_qoc(annotation_triples: Iterable[Triple], strict: bool = False) -> QualityConstraint:
    """Build a constraint from flat annotation triples.

    Each triple's predicate must be a socam: quality field (accuracy,
    resolution, certainty, lifetime) and its object a literal in the flat
    token grammar, e.g. ``socam:resolution "50m"``.  Non-quality predicates
    are skipped; quality-namespace predicates that are not known parameter
    kinds are rejected in strict mode and dropped with a warning otherwise.
    """
    from .ontology import SOCAM_NS  # local import: ontology depends on model only

    params = {}
    for triple in annotation_triples:
        pred = triple.predicate.value
        if not pred.startswith(SOCAM_NS):
            continue
        name = pred[len(SOCAM_NS):]
        kind = FIELD_KINDS.get(name)
        if kind is None:
            if name in ("classifiedAs", "dependsOn", "functional"):
                continue
            if strict:
                raise MalformedMetric(f"unknown quality parameter: {name!r}")
            logger.warning("dropping unknown quality parameter %r", name)
            continue
        obj = triple.object
        token = obj.lexical if isinstance(obj, Literal) else str(obj)
        if kind in params:
            raise MalformedMetric(f"duplicate quality parameter: {name!r}")
        params[kind] = parse_metric(kind, token)
    return QualityConstraint(params)


ConfidenceKey = tuple[int, float, float, float]


def confidence_key(stmt: ContextStatement, now: int) -> ConfidenceKey:
    """Ordered key (class rank, certainty%, accuracy%, recency).

    Keys compare lexicographically.  Missing certainty/accuracy default to
    100 so that absent quality information is neutral, never an advantage.
    A stale statement gets class rank 0, placing it strictly below every
    fresh statement.
    """
    rank = stmt.classification.rank if stmt.is_fresh(now) else 0
    cert = acc = 100.0
    if stmt.qoc is not None:
        if stmt.qoc.certainty is not None:
            cert = stmt.qoc.certainty
        if stmt.qoc.accuracy is not None:
            acc = stmt.qoc.accuracy
    recency = float(stmt.produced_at - now)
    return (rank, cert, acc, recency)
