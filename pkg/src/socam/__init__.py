"""socam: an ontology-driven context-awareness engine.

Context statements carry a classification (Sensed, Defined, Aggregated,
Deduced) and optional quality constraints; an interpreter derives indirect
context by stratified forward chaining with truth maintenance, resolves
conflicting readings by confidence, and drives context-aware services from
a replayable event trace.
"""

from .conflicts import ConflictSet, Resolution, detect, detect_and_resolve, resolve
from .errors import SocamError
from .model import (
    AssertOutcome,
    Classification,
    ContextKB,
    ContextStatement,
    Iri,
    Literal,
    Triple,
    TriplePattern,
    Variable,
)
from .ontology import Schema, SchemaRegistry, load_schema, plug, unplug
from .qoc import Metric, ParameterKind, QualityConstraint, confidence_key, parse_qoc
from .reasoner import (
    AggregationSpec,
    Rule,
    RuleSet,
    aggregate,
    infer,
    maintain,
    parse_pattern,
    parse_rules,
)
from .runtime import (
    ActionRecord,
    ContextAwareService,
    ContextProvider,
    Engine,
    ServiceRegistry,
    TraceEvent,
    parse_trace,
    run_trace,
)
from .turtle import Document, parse, serialize

__version__ = "0.1.0"

__all__ = [
    "ActionRecord",
    "AggregationSpec",
    "AssertOutcome",
    "Classification",
    "ConflictSet",
    "ContextAwareService",
    "ContextKB",
    "ContextProvider",
    "ContextStatement",
    "Document",
    "Engine",
    "Iri",
    "Literal",
    "Metric",
    "ParameterKind",
    "QualityConstraint",
    "Resolution",
    "Rule",
    "RuleSet",
    "Schema",
    "SchemaRegistry",
    "ServiceRegistry",
    "SocamError",
    "TraceEvent",
    "Triple",
    "TriplePattern",
    "Variable",
    "aggregate",
    "confidence_key",
    "detect",
    "detect_and_resolve",
    "infer",
    "load_schema",
    "maintain",
    "parse",
    "parse_pattern",
    "parse_qoc",
    "parse_rules",
    "parse_trace",
    "plug",
    "resolve",
    "run_trace",
    "serialize",
    "unplug",
]
