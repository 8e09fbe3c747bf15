import pytest

from socam.cli import asset_path
from socam.model import (
    Classification,
    ContextKB,
    ContextStatement,
    Iri,
    Literal,
    Triple,
)
from socam.ontology import HOME_NS, SOCAM_NS, SchemaRegistry, load_schema
from socam.qoc import QualityConstraint, from_fields
from socam.reasoner import parse_rules
from socam.runtime import (
    Engine,
    default_home_aggregations,
    default_home_providers,
    default_home_services,
    parse_trace,
)
from socam.turtle import parse as parse_turtle

HOME = HOME_NS
SOCAM = SOCAM_NS


def iri(name: str) -> Iri:
    """Shorthand: names with a namespace prefix char ':' pass through."""
    if name.startswith("http") or name.startswith("_:"):
        return Iri(name)
    return Iri(HOME + name)


def lit(value) -> Literal:
    if isinstance(value, bool):
        return Literal("true" if value else "false", "boolean")
    if isinstance(value, int):
        return Literal(str(value), "integer")
    if isinstance(value, float):
        return Literal(repr(value), "double")
    return Literal(value)


def stmt(
    subject,
    predicate,
    obj,
    classification=Classification.SENSED,
    provider="test",
    at=0,
    **qoc_fields,
) -> ContextStatement:
    """Statement builder: plain strings become home: IRIs; use lit() for literals."""
    term = obj if isinstance(obj, (Iri, Literal)) else iri(obj)
    qoc = from_fields({k: str(v) for k, v in qoc_fields.items()}) if qoc_fields else None
    return ContextStatement(
        triple=Triple(iri(subject) if isinstance(subject, str) else subject,
                      iri(predicate) if isinstance(predicate, str) else predicate,
                      term),
        classification=classification,
        qoc=qoc,
        provider=provider,
        produced_at=at,
    )


@pytest.fixture(scope="session")
def upper_doc():
    return parse_turtle(asset_path("upper.ttl").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def home_doc():
    return parse_turtle(asset_path("home.ttl").read_text(encoding="utf-8"))


@pytest.fixture()
def registry(upper_doc, home_doc) -> SchemaRegistry:
    reg = SchemaRegistry()
    reg.plug(load_schema(upper_doc, "upper"))
    reg.plug(load_schema(home_doc, "home", registry=reg))
    return reg


@pytest.fixture()
def home_rules(registry):
    return parse_rules(
        asset_path("home.rules").read_text(encoding="utf-8"),
        registry=registry,
    )


@pytest.fixture()
def scenario():
    return parse_trace(asset_path("scenario.trc").read_text(encoding="utf-8"))


@pytest.fixture()
def kb(registry) -> ContextKB:
    return ContextKB(registry=registry)


def make_engine(registry, rules, strict=False, services=None, providers=None) -> Engine:
    return Engine(
        registry=registry,
        rules=rules,
        services=default_home_services() if services is None else services,
        providers=default_home_providers() if providers is None else providers,
        aggregations=default_home_aggregations(),
        strict=strict,
    )


@pytest.fixture()
def engine(registry, home_rules) -> Engine:
    return make_engine(registry, home_rules)
