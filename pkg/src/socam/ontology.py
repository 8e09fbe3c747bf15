"""Schema registry: upper ontology, pluggable domain ontologies, and property
declarations carrying classification, dependency and functionality.

Schemas are immutable after load; plug/unplug go through the KB's
single-writer contract.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from .errors import (
    CyclicHierarchy,
    DanglingDependsOn,
    DependencyViolation,
    DuplicateModule,
    InvalidSchema,
    MissingClassification,
    UnknownClass,
    UnknownProperty,
)
from .model import BOOLEAN, RDF_TYPE, Classification, ContextKB, ContextStatement, Iri, Literal, TriplePattern
from .turtle import XSD_NS, Document

logger = logging.getLogger(__name__)

SOCAM_NS = "http://socam.example/ns#"
HOME_NS = "http://socam.example/home#"
RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS_NS = "http://www.w3.org/2000/01/rdf-schema#"
OWL_NS = "http://www.w3.org/2002/07/owl#"

CLASSIFIED_AS = SOCAM_NS + "classifiedAs"
DEPENDS_ON = SOCAM_NS + "dependsOn"
FUNCTIONAL = SOCAM_NS + "functional"
RDFS_SUBCLASS_OF = RDFS_NS + "subClassOf"
RDFS_DOMAIN = RDFS_NS + "domain"
RDFS_RANGE = RDFS_NS + "range"
OWL_CLASS = OWL_NS + "Class"
OWL_OBJECT_PROPERTY = OWL_NS + "ObjectProperty"
OWL_DATATYPE_PROPERTY = OWL_NS + "DatatypeProperty"

CONTEXT_ENTITY = SOCAM_NS + "ContextEntity"

_CLASSIFICATION_IRIS = {SOCAM_NS + c.value: c for c in Classification}

# Vocabulary namespaces never treated as cross-schema references.
_BUILTIN_NS = (RDF_NS, RDFS_NS, OWL_NS, XSD_NS, SOCAM_NS + "classifiedAs", SOCAM_NS + "dependsOn")


@dataclass(frozen=True)
class PropertyDecl:
    iri: str
    kind: str  # "object" | "datatype"
    domains: frozenset[str] = frozenset()
    range: Optional[str] = None
    classified_as: Classification = Classification.SENSED
    depends_on: frozenset[str] = frozenset()
    functional: bool = False


@dataclass(frozen=True)
class ClassDecl:
    iri: str
    parents: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Schema:
    """One ontology module: classes with subClassOf edges plus property
    declarations."""

    module_id: str
    classes: dict[str, ClassDecl] = field(default_factory=dict)
    properties: dict[str, PropertyDecl] = field(default_factory=dict)

    def declared_iris(self) -> set[str]:
        return set(self.classes) | set(self.properties)

    def external_refs(self) -> set[str]:
        """Class/property IRIs this schema references but does not declare."""
        local = self.declared_iris()
        refs: set[str] = set()
        for cls in self.classes.values():
            refs.update(cls.parents)
        for prop in self.properties.values():
            refs.update(prop.domains)
            if prop.range:
                refs.add(prop.range)
            refs.update(prop.depends_on)
        return {
            r
            for r in refs - local
            if not r.startswith(XSD_NS) and r not in _CLASSIFICATION_IRIS
        }


def _check_acyclic(parents_of: dict[str, frozenset[str]]) -> None:
    state: dict[str, int] = {}  # 0 visiting, 1 done

    def visit(node: str, path: list[str]) -> None:
        mark = state.get(node)
        if mark == 1:
            return
        if mark == 0:
            cycle = path[path.index(node):] + [node]
            raise CyclicHierarchy(" -> ".join(cycle))
        state[node] = 0
        for parent in parents_of.get(node, ()):
            visit(parent, path + [node])
        state[node] = 1

    for node in sorted(parents_of):
        visit(node, [])


def load_schema(
    doc: Document,
    module_id: str,
    registry: Optional["SchemaRegistry"] = None,
    strict: bool = False,
) -> Schema:
    """Build a schema from declaration triples.

    Vocabulary: rdf:type owl:Class / owl:ObjectProperty / owl:DatatypeProperty,
    rdfs:subClassOf / rdfs:domain / rdfs:range, socam:classifiedAs,
    socam:dependsOn and socam:functional.  Properties missing classifiedAs
    default to Sensed unless strict.
    """
    classes: dict[str, set[str]] = {}
    prop_kind: dict[str, str] = {}
    domains: dict[str, set[str]] = {}
    ranges: dict[str, str] = {}
    classified: dict[str, Classification] = {}
    depends: dict[str, set[str]] = {}
    functional: set[str] = set()

    for t in doc.triples:
        s, p = t.subject.value, t.predicate.value
        o = t.object
        if p == RDF_TYPE and isinstance(o, Iri):
            if o.value == OWL_CLASS:
                classes.setdefault(s, set())
            elif o.value == OWL_OBJECT_PROPERTY:
                prop_kind[s] = "object"
            elif o.value == OWL_DATATYPE_PROPERTY:
                prop_kind[s] = "datatype"
        elif p == RDFS_SUBCLASS_OF and isinstance(o, Iri):
            classes.setdefault(s, set()).add(o.value)
        elif p == RDFS_DOMAIN and isinstance(o, Iri):
            domains.setdefault(s, set()).add(o.value)
        elif p == RDFS_RANGE and isinstance(o, Iri):
            ranges[s] = o.value
        elif p == CLASSIFIED_AS and isinstance(o, Iri):
            cls = _CLASSIFICATION_IRIS.get(o.value)
            if cls is None:
                raise InvalidSchema(f"{s}: unknown classification {o.value}")
            if s in classified and classified[s] != cls:
                raise InvalidSchema(f"{s}: more than one classifiedAs value")
            classified[s] = cls
        elif p == DEPENDS_ON and isinstance(o, Iri):
            depends.setdefault(s, set()).add(o.value)
        elif p == FUNCTIONAL:
            if isinstance(o, Literal) and o.datatype == BOOLEAN and o.value() is True:
                functional.add(s)

    known_props = set(prop_kind)
    if registry is not None:
        known_props |= set(registry.properties())
    for prop, targets in depends.items():
        for target in sorted(targets):
            if target not in known_props:
                raise DanglingDependsOn(f"{prop}: dependsOn {target} is not a declared property")

    props: dict[str, PropertyDecl] = {}
    for iri in sorted(prop_kind):
        cls = classified.get(iri)
        if cls is None:
            if strict:
                raise MissingClassification(iri)
            cls = Classification.SENSED
        props[iri] = PropertyDecl(
            iri=iri,
            kind=prop_kind[iri],
            domains=frozenset(domains.get(iri, ())),
            range=ranges.get(iri),
            classified_as=cls,
            depends_on=frozenset(depends.get(iri, ())),
            functional=iri in functional,
        )

    class_decls = {iri: ClassDecl(iri, frozenset(parents)) for iri, parents in classes.items()}
    _check_acyclic({iri: decl.parents for iri, decl in class_decls.items()})
    return Schema(module_id=module_id, classes=class_decls, properties=props)


class SchemaRegistry:
    """The set of currently plugged-in schemas, queried by KB and reasoner."""

    def __init__(self):
        self._schemas: dict[str, Schema] = {}

    def plug(self, schema: Schema) -> None:
        if schema.module_id in self._schemas:
            raise DuplicateModule(schema.module_id)
        candidate = dict(self._schemas)
        candidate[schema.module_id] = schema
        _check_acyclic(_merged_parents(candidate.values()))
        declared = set()
        for s in candidate.values():
            declared |= s.declared_iris()
        unresolved = schema.external_refs() - declared
        if unresolved:
            logger.warning("schema %s: unresolved references %s", schema.module_id, sorted(unresolved))
        self._schemas = candidate

    def unplug(self, module_id: str) -> Schema:
        schema = self._schemas.get(module_id)
        if schema is None:
            raise DuplicateModule(f"module not loaded: {module_id}")
        declared = schema.declared_iris()
        for other in self._schemas.values():
            if other.module_id == module_id:
                continue
            used = other.external_refs() & declared
            if used:
                raise DependencyViolation(
                    f"cannot unplug {module_id}: {other.module_id} references {sorted(used)}"
                )
        del self._schemas[module_id]
        return schema

    # -- lookups ------------------------------------------------------------

    @property
    def module_ids(self) -> list[str]:
        return list(self._schemas)

    def schema(self, module_id: str) -> Optional[Schema]:
        return self._schemas.get(module_id)

    def classes(self) -> dict[str, ClassDecl]:
        merged: dict[str, ClassDecl] = {}
        for schema in self._schemas.values():
            for iri, decl in schema.classes.items():
                if iri in merged:
                    merged[iri] = ClassDecl(iri, merged[iri].parents | decl.parents)
                else:
                    merged[iri] = decl
        return merged

    def properties(self) -> dict[str, PropertyDecl]:
        merged: dict[str, PropertyDecl] = {}
        for schema in self._schemas.values():
            merged.update(schema.properties)
        return merged

    def declares_predicate(self, iri: str) -> bool:
        if iri == RDF_TYPE:
            return True
        return any(iri in s.properties for s in self._schemas.values())

    def declares_class(self, iri: str) -> bool:
        return any(iri in s.classes for s in self._schemas.values())

    def property_decl(self, iri: str) -> Optional[PropertyDecl]:
        for schema in self._schemas.values():
            if iri in schema.properties:
                return schema.properties[iri]
        return None

    def classification_for(self, predicate: str) -> Classification:
        """Declared classification of a property (rdf:type counts as Defined)."""
        if predicate == RDF_TYPE:
            return Classification.DEFINED
        decl = self.property_decl(predicate)
        if decl is None:
            raise UnknownProperty(predicate)
        return decl.classified_as

    def is_functional(self, predicate: str) -> bool:
        decl = self.property_decl(predicate)
        return decl.functional if decl else False

    def depends_on(self, predicate: str) -> frozenset[str]:
        decl = self.property_decl(predicate)
        return decl.depends_on if decl else frozenset()

    def is_subclass_of(self, c1: str, c2: str) -> bool:
        """Reflexive-transitive subClassOf across all loaded schemas."""
        classes = self.classes()
        if c1 not in classes or c2 not in classes:
            raise UnknownClass(c1 if c1 not in classes else c2)
        seen = set()
        stack = [c1]
        while stack:
            node = stack.pop()
            if node == c2:
                return True
            if node in seen:
                continue
            seen.add(node)
            decl = classes.get(node)
            if decl:
                stack.extend(decl.parents)
        return False


def _merged_parents(schemas) -> dict[str, frozenset[str]]:
    merged: dict[str, set[str]] = {}
    for schema in schemas:
        for iri, decl in schema.classes.items():
            merged.setdefault(iri, set()).update(decl.parents)
    return {iri: frozenset(parents) for iri, parents in merged.items()}


def plug(kb: ContextKB, schema: Schema) -> None:
    """Register a schema's classes and properties with the KB."""
    if kb.registry is None:
        kb.registry = SchemaRegistry()
    kb.registry.plug(schema)


def unplug(kb: ContextKB, module_id: str) -> list[ContextStatement]:
    """Remove a schema and retract every statement it declared.

    Returns the retracted statements so the caller can trigger
    re-derivation.  Refuses if another loaded schema depends on this one.
    """
    if kb.registry is None:
        raise DuplicateModule(f"module not loaded: {module_id}")
    schema = kb.registry.unplug(module_id)
    retracted: list[ContextStatement] = []
    for stmt in kb.statements():
        pred = stmt.triple.predicate.value
        if pred in schema.properties:
            retracted.append(stmt)
        elif pred == RDF_TYPE and isinstance(stmt.triple.object, Iri) and stmt.triple.object.value in schema.classes:
            retracted.append(stmt)
    for stmt in retracted:
        kb.retract(TriplePattern(stmt.triple.subject, stmt.triple.predicate, stmt.triple.object), provider=stmt.provider)
    return retracted


def domain_range_warnings(kb: ContextKB, stmt: ContextStatement) -> list[str]:
    """Soft domain/range check: violations are reported, never rejected.

    Subjects with no type information are skipped (setup events may arrive
    in any order).
    """
    registry = kb.registry
    if registry is None:
        return []
    decl = registry.property_decl(stmt.triple.predicate.value)
    if decl is None:
        return []
    warnings: list[str] = []

    def known_types(node: Iri) -> set[str]:
        return {
            m.statement.triple.object.value
            for m in kb.query(TriplePattern(node, Iri(RDF_TYPE), None), raw=True)
            if isinstance(m.statement.triple.object, Iri)
        }

    def fits(types: set[str], targets) -> bool:
        declared = [t for t in targets if registry.declares_class(t)]
        if not declared:
            return True
        return any(
            registry.declares_class(t) and registry.is_subclass_of(t, target)
            for t in types
            for target in declared
        )

    if decl.domains:
        subject_types = known_types(stmt.triple.subject)
        if subject_types and not fits(subject_types, decl.domains):
            warnings.append(
                f"{stmt.triple.subject.value}: type(s) {sorted(subject_types)} "
                f"outside domain of {decl.iri}"
            )
    if decl.range is not None:
        obj = stmt.triple.object
        if decl.kind == "object" and isinstance(obj, Iri):
            object_types = known_types(obj)
            if object_types and not fits(object_types, {decl.range}):
                warnings.append(
                    f"{obj.value}: type(s) {sorted(object_types)} outside range of {decl.iri}"
                )
        elif decl.kind == "datatype" and isinstance(obj, Literal) and decl.range.startswith(XSD_NS):
            from .turtle import _XSD_TO_TAG

            expected = _XSD_TO_TAG.get(decl.range, decl.range)
            if obj.datatype != expected:
                warnings.append(
                    f"literal {obj.lexical!r} has datatype {obj.datatype}, "
                    f"range of {decl.iri} expects {expected}"
                )
    return warnings


def untyped_individuals(kb: ContextKB, registry: SchemaRegistry) -> set[str]:
    """Subjects lacking an rdf:type under ContextEntity (diagnostic helper)."""
    classes = registry.classes()
    typed: set[str] = set()
    subjects: set[str] = set()
    for stmt in kb.statements():
        subjects.add(stmt.triple.subject.value)
        if stmt.triple.predicate.value == RDF_TYPE and isinstance(stmt.triple.object, Iri):
            cls = stmt.triple.object.value
            if cls in classes and CONTEXT_ENTITY in classes and registry.is_subclass_of(cls, CONTEXT_ENTITY):
                typed.add(stmt.triple.subject.value)
    return subjects - typed
