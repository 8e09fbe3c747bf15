"""Core term/triple/statement data model and the indexed in-memory context store.

Terms are immutable values; the knowledge base is the single mutable object
in the package and follows a single-writer, multiple-reader contract: all
mutations go through one owner, queries may run freely between mutations.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Iterator, NamedTuple, Optional, Union

from .errors import GroundednessViolation, UndeclaredPredicate

if TYPE_CHECKING:
    from .ontology import SchemaRegistry
    from .qoc import QualityConstraint

# Built-in literal datatype tags.  Other tags (full datatype IRIs) are
# carried opaquely and compared lexically.
STRING = "string"
INTEGER = "integer"
DOUBLE = "double"
BOOLEAN = "boolean"

RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"

_INTEGER_RE = re.compile(r"[+-]?[0-9]+\Z")
_DOUBLE_RE = re.compile(r"[+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?\Z")


@dataclass(frozen=True)
class Iri:
    """An absolute IRI (also used for `_:label` blank nodes)."""

    value: str

    def __post_init__(self):
        if not self.value or any(ch.isspace() for ch in self.value):
            raise ValueError(f"invalid IRI: {self.value!r}")

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Literal:
    """A literal with a lexical form and a datatype tag.

    Equality is pairwise on (lexical, datatype); no value-space
    normalisation is performed.
    """

    lexical: str
    datatype: str = STRING

    def __post_init__(self):
        if self.datatype == INTEGER and not _INTEGER_RE.match(self.lexical):
            raise ValueError(f"not an integer lexical form: {self.lexical!r}")
        if self.datatype == DOUBLE and not _DOUBLE_RE.match(self.lexical):
            raise ValueError(f"not a double lexical form: {self.lexical!r}")
        if self.datatype == BOOLEAN and self.lexical not in ("true", "false"):
            raise ValueError(f"not a boolean lexical form: {self.lexical!r}")

    def value(self) -> Union[str, int, float, bool]:
        """The parsed Python value (lexical form for opaque datatypes)."""
        if self.datatype == INTEGER:
            return int(self.lexical)
        if self.datatype == DOUBLE:
            return float(self.lexical)
        if self.datatype == BOOLEAN:
            return self.lexical == "true"
        return self.lexical

    def __str__(self) -> str:
        return f"{self.lexical!r}^^{self.datatype}"


@dataclass(frozen=True)
class Variable:
    """A named variable; appears only in rule/query patterns."""

    name: str

    def __str__(self) -> str:
        return f"?{self.name}"


Term = Union[Iri, Literal, Variable]


def term_key(term: Term) -> tuple:
    """Deterministic sort key over terms of any variant."""
    if isinstance(term, Iri):
        return (0, term.value, "")
    if isinstance(term, Literal):
        return (1, term.lexical, term.datatype)
    return (2, term.name, "")


@dataclass(frozen=True)
class Triple:
    """A ground triple: IRI subject and predicate, IRI or literal object."""

    subject: Iri
    predicate: Iri
    object: Term

    def __post_init__(self):
        for pos, want in (("subject", Iri), ("predicate", Iri)):
            val = getattr(self, pos)
            if isinstance(val, Variable):
                raise GroundednessViolation(f"variable in triple {pos}: {val}")
            if not isinstance(val, want):
                raise ValueError(f"triple {pos} must be an IRI, got {val!r}")
        if isinstance(self.object, Variable):
            raise GroundednessViolation(f"variable in triple object: {self.object}")
        if not isinstance(self.object, (Iri, Literal)):
            raise ValueError(f"triple object must be IRI or literal, got {self.object!r}")

    def sort_key(self) -> tuple:
        return (term_key(self.subject), term_key(self.predicate), term_key(self.object))


@dataclass(frozen=True)
class TriplePattern:
    """A triple pattern for queries, rules and retraction.

    Positions hold ground terms, variables, or None (anonymous wildcard:
    matches anything, binds nothing).  Repeated variables must unify.
    """

    subject: Optional[Term] = None
    predicate: Optional[Term] = None
    object: Optional[Term] = None

    def terms(self) -> tuple:
        return (self.subject, self.predicate, self.object)

    def variables(self) -> set[str]:
        return {t.name for t in self.terms() if isinstance(t, Variable)}

    def is_ground(self) -> bool:
        return all(isinstance(t, (Iri, Literal)) for t in self.terms())


def substitute(pattern: TriplePattern, bindings: dict[str, Term]) -> TriplePattern:
    """Replace bound variables in a pattern; unbound ones are kept."""

    def sub(t):
        if isinstance(t, Variable) and t.name in bindings:
            return bindings[t.name]
        return t

    return TriplePattern(sub(pattern.subject), sub(pattern.predicate), sub(pattern.object))


def unify(pattern: TriplePattern, triple: Triple, bindings: Optional[dict[str, Term]] = None) -> Optional[dict[str, Term]]:
    """Match a pattern against a ground triple.

    Returns the extended bindings on success, None on mismatch.  The input
    bindings dict is never mutated.
    """
    out = dict(bindings) if bindings else {}
    for pat, got in zip(pattern.terms(), (triple.subject, triple.predicate, triple.object)):
        if pat is None:
            continue
        if isinstance(pat, Variable):
            bound = out.get(pat.name)
            if bound is None:
                out[pat.name] = got
            elif bound != got:
                return None
        elif pat != got:
            return None
    return out


class Classification(Enum):
    """Provenance category of a statement.

    Sensed and Defined are direct context (acquired from a provider);
    Aggregated and Deduced are indirect (composed or derived).  The rank
    fixes the confidence order used everywhere in the package.
    """

    SENSED = "Sensed"
    DEFINED = "Defined"
    AGGREGATED = "Aggregated"
    DEDUCED = "Deduced"

    @property
    def rank(self) -> int:
        return _CLASS_RANK[self]

    @property
    def is_direct(self) -> bool:
        return self in (Classification.SENSED, Classification.DEFINED)

    @classmethod
    def parse(cls, token: str) -> "Classification":
        try:
            return cls(token)
        except ValueError:
            raise ValueError(f"unknown classification: {token!r}") from None


_CLASS_RANK = {
    Classification.DEFINED: 4,
    Classification.SENSED: 3,
    Classification.AGGREGATED: 2,
    Classification.DEDUCED: 1,
}

# Statement identity inside a KB: same triple from the same provider.
StatementKey = tuple[Triple, str]


@dataclass(frozen=True)
class ContextStatement:
    """A triple plus provenance: the unit of context knowledge.

    produced_at is a logical millisecond clock driven by the trace, never
    wall-clock time.
    """

    triple: Triple
    classification: Classification
    qoc: Optional["QualityConstraint"] = None
    produced_at: int = 0
    provider: str = ""

    def __post_init__(self):
        if self.produced_at < 0:
            raise ValueError("produced_at must be >= 0")

    @property
    def key(self) -> StatementKey:
        return (self.triple, self.provider)

    def is_fresh(self, now: int) -> bool:
        """Fresh iff no freshness constraint, or now <= produced_at + lifetime."""
        if self.qoc is None:
            return True
        life = self.qoc.mean_lifetime
        return life is None or now <= self.produced_at + life

    def sort_key(self) -> tuple:
        return (*self.triple.sort_key(), self.provider)


class AssertOutcome(Enum):
    ADDED = "added"
    UPDATED = "updated"
    CONFLICT_DEFERRED = "conflict-deferred"


@dataclass(frozen=True)
class SupportRecord:
    """Why a derived statement exists: the rule and the matched statements.

    body_predicates lists every constant predicate the rule body mentions
    (positive and negated); any_predicate flags rule bodies with a variable
    in predicate position.  Both drive truth maintenance.
    """

    rule: str
    supports: frozenset[StatementKey]
    body_predicates: frozenset[str] = frozenset()
    any_predicate: bool = False


class Match(NamedTuple):
    bindings: dict[str, Term]
    statement: ContextStatement


class ContextKB:
    """In-memory statement store indexed by subject, predicate and both.

    Re-asserting a (triple, provider) pair updates the stored record in
    place; distinct providers may hold the same triple independently.
    """

    def __init__(self, registry: Optional["SchemaRegistry"] = None, strict: bool = False):
        self.registry = registry
        self.strict = strict
        self.clock: int = 0
        self._by_key: dict[StatementKey, ContextStatement] = {}
        self._by_s: dict[Iri, set[StatementKey]] = defaultdict(set)
        self._by_p: dict[Iri, set[StatementKey]] = defaultdict(set)
        self._by_sp: dict[tuple[Iri, Iri], set[StatementKey]] = defaultdict(set)
        self._losers: set[StatementKey] = set()
        # Derivation bookkeeping, written by the reasoner.
        self.supports: dict[StatementKey, SupportRecord] = {}

    def __len__(self) -> int:
        return len(self._by_key)

    def touch(self, t: int) -> None:
        """Advance the logical clock (never backwards)."""
        self.clock = max(self.clock, t)

    # -- mutation ---------------------------------------------------------

    def assert_(self, stmt: ContextStatement) -> AssertOutcome:
        """Store a statement, updating in place on re-assertion.

        If the predicate is functional and a different object is already
        stored for the subject, the statement is still stored and the
        outcome flags the pending conflict for the resolver.
        """
        if not isinstance(stmt.triple, Triple):
            raise GroundednessViolation("statement triple must be ground")
        pred = stmt.triple.predicate
        if self.strict and self.registry is not None and not self.registry.declares_predicate(pred.value):
            raise UndeclaredPredicate(pred.value)

        key = stmt.key
        updated = key in self._by_key
        self._by_key[key] = stmt
        self._by_s[stmt.triple.subject].add(key)
        self._by_p[pred].add(key)
        self._by_sp[(stmt.triple.subject, pred)].add(key)
        self.touch(stmt.produced_at)

        if self._functional(pred):
            for other_key in self._by_sp[(stmt.triple.subject, pred)]:
                if self._by_key[other_key].triple.object != stmt.triple.object:
                    return AssertOutcome.CONFLICT_DEFERRED
        return AssertOutcome.UPDATED if updated else AssertOutcome.ADDED

    def retract(self, pattern: Optional[TriplePattern] = None, provider: Optional[str] = None) -> int:
        """Remove every statement matching the pattern (and provider, if given).

        None or an all-wildcard pattern removes everything.  Returns the
        number of statements removed.
        """
        pattern = pattern or TriplePattern()
        doomed = []
        for key in self._candidates(pattern):
            stmt = self._by_key[key]
            if provider is not None and stmt.provider != provider:
                continue
            if unify(pattern, stmt.triple) is not None:
                doomed.append(key)
        for key in doomed:
            self._remove(key)
        return len(doomed)

    def _remove(self, key: StatementKey) -> None:
        stmt = self._by_key.pop(key)
        s, p = stmt.triple.subject, stmt.triple.predicate
        self._by_s[s].discard(key)
        self._by_p[p].discard(key)
        self._by_sp[(s, p)].discard(key)
        self._losers.discard(key)
        self.supports.pop(key, None)

    # -- queries ----------------------------------------------------------

    def query(
        self,
        pattern: Optional[TriplePattern] = None,
        as_of: Optional[int] = None,
        fresh_only: bool = False,
        raw: bool = False,
    ) -> list[Match]:
        """All statements unifying with the pattern, in deterministic order.

        fresh_only drops statements past their mean lifetime at as_of
        (default: the KB clock); conflict-losing statements are excluded
        unless raw is set.
        """
        pattern = pattern or TriplePattern()
        now = self.clock if as_of is None else as_of
        out = []
        for key in self._candidates(pattern):
            stmt = self._by_key[key]
            if not raw and key in self._losers:
                continue
            if fresh_only and not stmt.is_fresh(now):
                continue
            bindings = unify(pattern, stmt.triple)
            if bindings is not None:
                out.append(Match(bindings, stmt))
        out.sort(key=lambda m: m.statement.sort_key())
        return out

    def get(self, key: StatementKey) -> Optional[ContextStatement]:
        return self._by_key.get(key)

    def statements(self) -> Iterator[ContextStatement]:
        """Every stored statement, losers and stale included."""
        return iter(list(self._by_key.values()))

    def _candidates(self, pattern: TriplePattern) -> Iterable[StatementKey]:
        s = pattern.subject if isinstance(pattern.subject, Iri) else None
        p = pattern.predicate if isinstance(pattern.predicate, Iri) else None
        if s is not None and p is not None:
            return list(self._by_sp.get((s, p), ()))
        if s is not None:
            return list(self._by_s.get(s, ()))
        if p is not None:
            return list(self._by_p.get(p, ()))
        return list(self._by_key.keys())

    # -- conflict bookkeeping ---------------------------------------------

    def is_loser(self, key: StatementKey) -> bool:
        return key in self._losers

    @property
    def losers(self) -> frozenset[StatementKey]:
        return frozenset(self._losers)

    def set_losers(self, keys: Iterable[StatementKey]) -> None:
        """Replace the loser set; statements themselves are never mutated."""
        self._losers = {k for k in keys if k in self._by_key}

    def _functional(self, predicate: Iri) -> bool:
        return self.registry is not None and self.registry.is_functional(predicate.value)
