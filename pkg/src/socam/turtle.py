"""Parser and serializer for the ontology/instance file format (a Turtle subset).

Supported: @prefix, subject-predicate-object statements with ';' and ','
continuations, 'a' for rdf:type, <iri>, prefix:local, labeled blank nodes
(_:name, carried as IRIs), plain/typed literals, and '#' comments.
Serialization is deterministic: parse(serialize(d)) is triple-set-equal to d
and a second serialize cycle is a fixpoint.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from .errors import ParseError, UnknownPrefix, UnterminatedLiteral
from .model import BOOLEAN, DOUBLE, INTEGER, RDF_TYPE, STRING, Iri, Literal, Term, Triple, term_key

XSD_NS = "http://www.w3.org/2001/XMLSchema#"

_XSD_TO_TAG = {
    XSD_NS + "string": STRING,
    XSD_NS + "integer": INTEGER,
    XSD_NS + "int": INTEGER,
    XSD_NS + "long": INTEGER,
    XSD_NS + "double": DOUBLE,
    XSD_NS + "decimal": DOUBLE,
    XSD_NS + "float": DOUBLE,
    XSD_NS + "boolean": BOOLEAN,
}
_TAG_TO_XSD = {
    STRING: XSD_NS + "string",
    INTEGER: XSD_NS + "integer",
    DOUBLE: XSD_NS + "double",
    BOOLEAN: XSD_NS + "boolean",
}

_LOCAL_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*\Z")
_BARE_DECIMAL_RE = re.compile(r"[+-]?[0-9]+\.[0-9]+\Z")
_BARE_INTEGER_RE = re.compile(r"[+-]?[0-9]+\Z")

_ESCAPES = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}
_UNESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}


@dataclass
class Document:
    """A prefix map plus an ordered triple list."""

    prefixes: dict[str, str] = field(default_factory=dict)
    triples: list[Triple] = field(default_factory=list)

    def triple_set(self) -> frozenset[Triple]:
        return frozenset(self.triples)


@dataclass(frozen=True)
class _Token:
    kind: str  # prefix_kw iriref qname pname_ns blank string integer decimal ident punct hathat eof
    value: object
    line: int
    column: int


_IDENT_START = re.compile(r"[A-Za-z_]")
_IDENT_CHAR = re.compile(r"[A-Za-z0-9_\-]")


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def _peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _advance(self) -> str:
        ch = self.text[self.pos]
        self.pos += 1
        if ch == "\n":
            self.line += 1
            self.col = 1
        else:
            self.col += 1
        return ch

    def error(self, message: str, line: int, col: int, cls=ParseError):
        raise cls(message, line, col)

    def tokens(self) -> list[_Token]:
        out = []
        while True:
            tok = self._next()
            out.append(tok)
            if tok.kind == "eof":
                return out

    def _next(self) -> _Token:
        # skip whitespace and comments
        while self.pos < len(self.text):
            ch = self._peek()
            if ch.isspace():
                self._advance()
            elif ch == "#":
                while self.pos < len(self.text) and self._peek() != "\n":
                    self._advance()
            else:
                break
        line, col = self.line, self.col
        if self.pos >= len(self.text):
            return _Token("eof", None, line, col)

        ch = self._peek()
        if ch == "@":
            word = self._read_while(lambda c: c.isalpha() or c == "@")
            if word != "@prefix":
                self.error(f"unknown directive {word!r}", line, col)
            return _Token("prefix_kw", word, line, col)
        if ch == "<":
            return self._read_iriref(line, col)
        if ch == '"':
            return self._read_string(line, col)
        if ch == "_" and self.text[self.pos : self.pos + 2] == "_:":
            self._advance()
            self._advance()
            label = self._read_while(_IDENT_CHAR.match)
            if not label:
                self.error("empty blank node label", line, col)
            return _Token("blank", label, line, col)
        if ch == "^":
            self._advance()
            if self._peek() != "^":
                self.error("expected '^^'", line, col)
            self._advance()
            return _Token("hathat", "^^", line, col)
        if ch in ".;,":
            self._advance()
            return _Token("punct", ch, line, col)
        if ch.isdigit() or (ch in "+-" and self.pos + 1 < len(self.text) and self.text[self.pos + 1].isdigit()):
            return self._read_number(line, col)
        if ch == ":" or _IDENT_START.match(ch):
            return self._read_name(line, col)
        self.error(f"unexpected character {ch!r}", line, col)

    def _read_while(self, pred) -> str:
        start = self.pos
        while self.pos < len(self.text) and pred(self.text[self.pos]):
            self._advance()
        return self.text[start : self.pos]

    def _read_iriref(self, line, col) -> _Token:
        self._advance()  # <
        start = self.pos
        while True:
            if self.pos >= len(self.text) or self._peek() == "\n":
                self.error("unterminated IRI", line, col)
            ch = self._advance()
            if ch == ">":
                return _Token("iriref", self.text[start : self.pos - 1], line, col)
            if ch.isspace():
                self.error("whitespace inside IRI", line, col)

    def _read_string(self, line, col) -> _Token:
        self._advance()  # opening quote
        chars = []
        while True:
            if self.pos >= len(self.text) or self._peek() == "\n":
                self.error("unterminated string literal", line, col, UnterminatedLiteral)
            ch = self._advance()
            if ch == '"':
                return _Token("string", "".join(chars), line, col)
            if ch == "\\":
                if self.pos >= len(self.text):
                    self.error("unterminated string literal", line, col, UnterminatedLiteral)
                esc = self._advance()
                if esc == "u":
                    hexs = "".join(self._advance() for _ in range(4) if self.pos < len(self.text))
                    if len(hexs) != 4 or not re.match(r"[0-9a-fA-F]{4}\Z", hexs):
                        self.error("bad \\u escape", line, col)
                    chars.append(chr(int(hexs, 16)))
                elif esc in _ESCAPES:
                    chars.append(_ESCAPES[esc])
                else:
                    self.error(f"unknown escape \\{esc}", line, col)
            else:
                chars.append(ch)

    def _read_number(self, line, col) -> _Token:
        start = self.pos
        if self._peek() in "+-":
            self._advance()
        self._read_while(str.isdigit)
        if self._peek() == "." and self.pos + 1 < len(self.text) and self.text[self.pos + 1].isdigit():
            self._advance()
            self._read_while(str.isdigit)
            return _Token("decimal", self.text[start : self.pos], line, col)
        return _Token("integer", self.text[start : self.pos], line, col)

    def _read_name(self, line, col) -> _Token:
        prefix = ""
        if _IDENT_START.match(self._peek()):
            prefix = self._read_while(_IDENT_CHAR.match)
        if self._peek() == ":":
            self._advance()
            local = ""
            if self.pos < len(self.text) and _IDENT_START.match(self._peek() or " "):
                local = self._read_while(_IDENT_CHAR.match)
            if local:
                return _Token("qname", (prefix, local), line, col)
            return _Token("pname_ns", prefix, line, col)
        if prefix in ("a", "true", "false"):
            return _Token("ident", prefix, line, col)
        self.error(f"unexpected name {prefix!r}", line, col)


class _Parser:
    def __init__(self, text: str):
        self.tokens = _Scanner(text).tokens()
        self.i = 0
        self.doc = Document()

    def _peek(self) -> _Token:
        return self.tokens[self.i]

    def _next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def _expect(self, kind: str, value=None) -> _Token:
        tok = self._next()
        if tok.kind != kind or (value is not None and tok.value != value):
            raise ParseError(f"expected {value or kind}, got {tok.value!r}", tok.line, tok.column)
        return tok

    def parse(self) -> Document:
        while self._peek().kind != "eof":
            if self._peek().kind == "prefix_kw":
                self._next()
                name = self._expect("pname_ns").value
                iri = self._expect("iriref").value
                self._expect("punct", ".")
                self.doc.prefixes[name] = iri
            else:
                self._statement()
        return self.doc

    def _statement(self) -> None:
        subject = self._resource()
        while True:
            predicate = self._predicate()
            while True:
                obj = self._object()
                try:
                    self.doc.triples.append(Triple(subject, predicate, obj))
                except ValueError as exc:
                    tok = self.tokens[self.i - 1]
                    raise ParseError(str(exc), tok.line, tok.column) from None
                if self._peek().kind == "punct" and self._peek().value == ",":
                    self._next()
                    continue
                break
            tok = self._next()
            if tok.kind == "punct" and tok.value == ";":
                # tolerate a trailing ';' before the closing dot
                if self._peek().kind == "punct" and self._peek().value == ".":
                    self._next()
                    return
                continue
            if tok.kind == "punct" and tok.value == ".":
                return
            raise ParseError(f"expected ';' or '.', got {tok.value!r}", tok.line, tok.column)

    def _resource(self) -> Iri:
        tok = self._next()
        if tok.kind == "iriref":
            return self._iri(tok.value, tok)
        if tok.kind == "qname":
            return self._resolve_qname(tok)
        if tok.kind == "blank":
            return Iri("_:" + tok.value)
        raise ParseError(f"expected a resource, got {tok.value!r}", tok.line, tok.column)

    def _predicate(self) -> Iri:
        tok = self._peek()
        if tok.kind == "ident" and tok.value == "a":
            self._next()
            return Iri(RDF_TYPE)
        return self._resource()

    def _object(self) -> Term:
        tok = self._peek()
        if tok.kind in ("iriref", "qname", "blank"):
            return self._resource()
        tok = self._next()
        try:
            if tok.kind == "string":
                if self._peek().kind == "hathat":
                    self._next()
                    dt_tok = self._next()
                    if dt_tok.kind == "iriref":
                        dt_iri = dt_tok.value
                    elif dt_tok.kind == "qname":
                        dt_iri = self._resolve_qname(dt_tok).value
                    else:
                        raise ParseError("expected datatype after '^^'", dt_tok.line, dt_tok.column)
                    return Literal(tok.value, _XSD_TO_TAG.get(dt_iri, dt_iri))
                return Literal(tok.value, STRING)
            if tok.kind == "integer":
                return Literal(tok.value, INTEGER)
            if tok.kind == "decimal":
                return Literal(tok.value, DOUBLE)
            if tok.kind == "ident" and tok.value in ("true", "false"):
                return Literal(tok.value, BOOLEAN)
        except ValueError as exc:
            raise ParseError(str(exc), tok.line, tok.column) from None
        raise ParseError(f"expected an object term, got {tok.value!r}", tok.line, tok.column)

    def _iri(self, value: str, tok: _Token) -> Iri:
        try:
            return Iri(value)
        except ValueError as exc:
            raise ParseError(str(exc), tok.line, tok.column) from None

    def _resolve_qname(self, tok: _Token) -> Iri:
        prefix, local = tok.value
        base = self.doc.prefixes.get(prefix)
        if base is None:
            raise UnknownPrefix(f"unknown prefix {prefix + ':'!r}", tok.line, tok.column)
        return self._iri(base + local, tok)


def parse(text: str) -> Document:
    """Parse a document, producing triples in document order."""
    return _Parser(text).parse()


def render_term(term: Term, prefixes: dict[str, str], as_predicate: bool = False) -> str:
    """Render one term in the concrete syntax, qnaming IRIs where possible."""
    if isinstance(term, Iri):
        iri = term.value
        if iri.startswith("_:"):
            return iri
        if as_predicate and iri == RDF_TYPE:
            return "a"
        best = None
        for pfx, base in prefixes.items():
            if iri.startswith(base) and len(base) > 0:
                local = iri[len(base):]
                if _LOCAL_RE.match(local) and (best is None or len(base) > len(prefixes[best])):
                    best = pfx
        if best is not None:
            return f"{best}:{iri[len(prefixes[best]):]}"
        return f"<{iri}>"
    if isinstance(term, Literal):
        return _render_literal(term, prefixes)
    return f"?{term.name}"


def _render_literal(lit: Literal, prefixes: dict[str, str]) -> str:
    if lit.datatype == INTEGER and _BARE_INTEGER_RE.match(lit.lexical):
        return lit.lexical
    if lit.datatype == DOUBLE and _BARE_DECIMAL_RE.match(lit.lexical):
        return lit.lexical
    if lit.datatype == BOOLEAN:
        return lit.lexical
    quoted = '"' + "".join(_UNESCAPES.get(ch, ch) for ch in lit.lexical) + '"'
    if lit.datatype == STRING:
        return quoted
    dt_iri = _TAG_TO_XSD.get(lit.datatype, lit.datatype)
    try:
        dt = render_term(Iri(dt_iri), prefixes)
    except ValueError:
        dt = f"<{dt_iri}>"
    if dt.startswith("_:"):
        dt = f"<{dt_iri}>"
    return f"{quoted}^^{dt}"


def serialize(doc: Document) -> str:
    """Deterministic serialization: sorted prefixes, sorted/grouped triples."""
    lines = [f"@prefix {pfx}: <{doc.prefixes[pfx]}> ." for pfx in sorted(doc.prefixes)]
    triples = sorted(set(doc.triples), key=Triple.sort_key)
    if lines and triples:
        lines.append("")

    by_subject: dict[Iri, list[Triple]] = {}
    for t in triples:
        by_subject.setdefault(t.subject, []).append(t)
    for subject in sorted(by_subject, key=term_key):
        group = by_subject[subject]
        by_pred: dict[Iri, list[Term]] = {}
        for t in group:
            by_pred.setdefault(t.predicate, []).append(t.object)
        parts = []
        for pred in sorted(by_pred, key=term_key):
            objs = ", ".join(render_term(o, doc.prefixes) for o in sorted(by_pred[pred], key=term_key))
            parts.append(f"{render_term(pred, doc.prefixes, as_predicate=True)} {objs}")
        subj = render_term(subject, doc.prefixes)
        lines.append(f"{subj} " + " ;\n    ".join(parts) + " .")
    return "\n".join(lines) + ("\n" if lines else "")
