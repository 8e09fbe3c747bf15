"""Detection and resolution of contradictory context on functional predicates.

A conflict exists when one subject carries two or more distinct fresh
objects for a predicate declared functional.  Winners are chosen by the
quality-of-context confidence key; losers are hidden from queries, never
deleted, so a later retraction of the winner reverses the outcome.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .model import ContextKB, ContextStatement, Iri, StatementKey
from .qoc import confidence_key


@dataclass(frozen=True)
class ConflictSet:
    """Competing statements for one (subject, functional predicate) pair."""

    subject: Iri
    predicate: Iri
    statements: tuple[ContextStatement, ...]

    def distinct_objects(self) -> int:
        return len({s.triple.object for s in self.statements})


@dataclass(frozen=True)
class Resolution:
    conflict: ConflictSet
    winner: ContextStatement
    losers: tuple[ContextStatement, ...]


def detect(kb: ContextKB, now: Optional[int] = None) -> list[ConflictSet]:
    """One ConflictSet per (subject, functional predicate) holding >= 2
    distinct fresh objects, ordered by subject then predicate IRI."""
    now = kb.clock if now is None else now
    if kb.registry is None:
        return []
    groups: dict[tuple[Iri, Iri], list[ContextStatement]] = {}
    for stmt in kb.statements():
        if not stmt.is_fresh(now):
            continue
        pred = stmt.triple.predicate
        if not kb.registry.is_functional(pred.value):
            continue
        groups.setdefault((stmt.triple.subject, pred), []).append(stmt)

    out = []
    for (subject, pred) in sorted(groups, key=lambda sp: (sp[0].value, sp[1].value)):
        stmts = sorted(groups[(subject, pred)], key=ContextStatement.sort_key)
        if len({s.triple.object for s in stmts}) >= 2:
            out.append(ConflictSet(subject, pred, tuple(stmts)))
    return out


def resolve(conflicts: list[ConflictSet], now: int, kb: Optional[ContextKB] = None) -> list[Resolution]:
    """Pick one winner per conflict set and mark the losers in the KB.

    Winner = maximal confidence key; ties break on later production time,
    then lexicographically smaller provider id.  Statements are never
    mutated, so retracting a winner later promotes the best loser.
    """
    resolutions = []
    all_losers: set[StatementKey] = set()
    for conflict in conflicts:
        winner = None
        for stmt in sorted(conflict.statements, key=ContextStatement.sort_key):
            if winner is None:
                winner = stmt
                continue
            key_new = (confidence_key(stmt, now), stmt.produced_at)
            key_old = (confidence_key(winner, now), winner.produced_at)
            if key_new > key_old or (key_new == key_old and stmt.provider < winner.provider):
                winner = stmt
        losers = tuple(s for s in conflict.statements if s is not winner)
        all_losers.update(s.key for s in losers)
        resolutions.append(Resolution(conflict, winner, losers))
    if kb is not None:
        kb.set_losers(all_losers)
    return resolutions


def detect_and_resolve(kb: ContextKB, now: Optional[int] = None) -> list[Resolution]:
    """Full pass: clear stale loser marks, re-detect, resolve, re-mark.

    Running this from scratch each cycle makes resolution outcomes a pure
    function of the current statement set.
    """
    now = kb.clock if now is None else now
    kb.set_losers(())
    return resolve(detect(kb, now), now, kb)
