"""Exception hierarchy shared by all socam components."""


class SocamError(Exception):
    """Base class for every error raised by this package."""


class GroundednessViolation(SocamError):
    """A stored triple contained a variable or a non-IRI subject/predicate."""


class UndeclaredPredicate(SocamError):
    """Strict mode rejected a statement whose predicate no schema declares."""


class ParseError(SocamError):
    """Syntax error in a .ttl, .rules or .trc file, with 1-based location."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{message} (line {line}, column {column})" if line else message)
        self.message = message
        self.line = line
        self.column = column


class UnknownPrefix(ParseError):
    """A qname used a prefix the document never bound."""


class UnterminatedLiteral(ParseError):
    """A string literal ran into end of line or end of input."""


class InvalidSchema(SocamError):
    """A schema document violated a structural constraint."""


class CyclicHierarchy(InvalidSchema):
    """subClassOf edges form a cycle."""


class DanglingDependsOn(InvalidSchema):
    """A dependsOn annotation points at a property nothing declares."""


class MissingClassification(InvalidSchema):
    """Strict mode found a property with no classifiedAs annotation."""


class DuplicateModule(SocamError):
    """A schema with this module id is already plugged in."""


class DependencyViolation(SocamError):
    """Unplugging was refused because another loaded schema depends on this one."""


class UnknownClass(SocamError):
    """A class IRI is not declared in any loaded schema."""


class UnknownProperty(SocamError):
    """A property IRI is not declared in any loaded schema."""


class MalformedMetric(SocamError):
    """A quality metric value/unit token could not be parsed."""


class OutOfRange(SocamError):
    """A quality metric value fell outside its legal range."""


class UnsafeRule(SocamError):
    """A rule uses a variable outside any positive body pattern, or a
    non-constant head predicate."""


class UnstratifiableNegation(SocamError):
    """The rule set negates a predicate inside its own derivation cycle."""


class NonDeducedHead(SocamError):
    """A rule derives a predicate not classified Deduced or Aggregated."""


class FixpointBudgetExceeded(SocamError):
    """Forward chaining did not reach a fixpoint within the iteration guard."""


class UnknownPredicate(SocamError):
    """An aggregation spec referenced an undeclared predicate (strict mode)."""


class DuplicateServiceId(SocamError):
    """advertise() was called twice with the same service id."""


class UnsortedTrace(SocamError):
    """Trace events are not sorted by timestamp."""
