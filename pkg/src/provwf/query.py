"""The query DSL: parser, three-valued evaluator, and grounded backends.

Queries are answered strictly from registry records; the natural-language
adapter, when configured, can only propose DSL text that is then parsed and
evaluated by the same grounded path.
"""

from __future__ import annotations

import json
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Any, Protocol

from .contract import Artifact, Registry
from .errors import AdapterUnavailable, NotFound, QuerySyntaxError, TranslationFailed, Unavailable
from .predicates import (
    ALL_OPS,
    NUMERIC_OPS,
    TRUE,
    UNKNOWN,
    And,
    Comparison,
    Exists,
    Missing,
    Not,
    Or,
    Predicate,
)
from .provgraph import dependents_of, provenance_of
from .values import is_numeric

GRAMMAR_EBNF = """\
query      = status_q | filter_q | prov_q ;
status_q   = "STATUS" , ident , [ "FOR" , scope_sel ] ;
filter_q   = ( "COUNT" | "LIST" ) , ident , "WHERE" , pred ;
prov_q     = ( "TRACE" | "PRODUCERS" | "DEPENDENTS" ) , ref ;
ref        = string                      (* 64-hex artifact id *)
           | pair , { pair } , [ "name" , "=" , string ]
           | "name" , "=" , string ;
scope_sel  = pair , { pair } ;
pair       = ( "subject" | "session" ) , "=" , ( ident | string ) ;
pred       = or_expr ;
or_expr    = and_expr , { "OR" , and_expr } ;
and_expr   = not_expr , { "AND" , not_expr } ;
not_expr   = "NOT" , not_expr | atom ;
atom       = "(" , pred , ")" | exists | missing | comparison ;
exists     = "EXISTS" , [ "(" ] , path , [ ")" ] ;
missing    = "MISSING" , [ "(" ] , path , [ ")" ] ;
comparison = path , op , literal ;
path       = ident , { "." , ident } ;
op         = "=" | "!=" | "<" | "<=" | ">" | ">=" | "CONTAINS" ;
literal    = string | number | "true" | "false" ;
ident      = letter_or_underscore , { letter_or_digit_or_underscore } ;
number     = [ "-" ] , digits , [ "." , digits ] , [ exponent ] ;
string     = '"' , { character | escape } , '"' ;
"""

_KEYWORDS = {
    "STATUS", "COUNT", "LIST", "TRACE", "PRODUCERS", "DEPENDENTS",
    "WHERE", "FOR", "AND", "OR", "NOT", "EXISTS", "MISSING", "CONTAINS",
}

_HEX64 = re.compile(r"^[0-9a-f]{64}$")


# -- tokenizer ---------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str  # KEYWORD PATH STRING NUMBER OP LPAREN RPAREN EOF
    text: str
    value: Any
    offset: int  # byte offset into the UTF-8 encoding of the source


def _byte_offset(src: str, pos: int) -> int:
    return len(src[:pos].encode("utf-8"))


def _tokenize(src: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(src)
    while i < n:
        c = src[i]
        if c.isspace():
            i += 1
            continue
        start = i
        if c == "(":
            tokens.append(_Token("LPAREN", "(", None, _byte_offset(src, start)))
            i += 1
        elif c == ")":
            tokens.append(_Token("RPAREN", ")", None, _byte_offset(src, start)))
            i += 1
        elif c == '"':
            i += 1
            buf = []
            while i < n and src[i] != '"':
                if src[i] == "\\":
                    if i + 1 >= n:
                        break
                    esc = src[i + 1]
                    mapped = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc)
                    if mapped is None:
                        raise QuerySyntaxError(
                            _byte_offset(src, i), ["string escape"], f"\\{esc}"
                        )
                    buf.append(mapped)
                    i += 2
                else:
                    buf.append(src[i])
                    i += 1
            if i >= n:
                raise QuerySyntaxError(_byte_offset(src, start), ['closing "'], "end of input")
            i += 1
            tokens.append(_Token("STRING", src[start:i], "".join(buf), _byte_offset(src, start)))
        elif m := re.match(r"-?[0-9]+(\.[0-9]+)?([eE][+-]?[0-9]+)?", src[i:]):
            text = m.group(0)
            is_float = m.group(1) is not None or m.group(2) is not None
            value = float(text) if is_float else int(text)
            tokens.append(_Token("NUMBER", text, value, _byte_offset(src, start)))
            i += len(text)
        elif m := re.match(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*", src[i:]):
            text = m.group(0)
            kind = "KEYWORD" if text in _KEYWORDS else "PATH"
            tokens.append(_Token(kind, text, text, _byte_offset(src, start)))
            i += len(text)
        elif m := re.match(r"!=|<=|>=|=|<|>", src[i:]):
            tokens.append(_Token("OP", m.group(0), m.group(0), _byte_offset(src, start)))
            i += len(m.group(0))
        else:
            raise QuerySyntaxError(_byte_offset(src, start), ["token"], repr(c))
    tokens.append(_Token("EOF", "", None, _byte_offset(src, n)))
    return tokens


# -- AST ----------------------------------------------------------------------

@dataclass(frozen=True)
class ArtifactRef:
    art_id: str = ""
    subject: str | None = None
    session: str | None = None
    name: str | None = None

    def describe(self) -> str:
        if self.art_id:
            return self.art_id
        parts = []
        if self.subject is not None:
            parts.append(f"subject={self.subject}")
        if self.session is not None:
            parts.append(f"session={self.session}")
        if self.name is not None:
            parts.append(f"name={self.name}")
        return " ".join(parts)


@dataclass(frozen=True)
class StatusQuery:
    target: str  # artifact type or rule id
    subject: str | None = None
    session: str | None = None


@dataclass(frozen=True)
class FilterQuery:
    verb: str  # COUNT | LIST
    artifact_class: str
    predicate: Predicate


@dataclass(frozen=True)
class ProvenanceQuery:
    verb: str  # TRACE | PRODUCERS | DEPENDENTS
    ref: ArtifactRef


Query = StatusQuery | FilterQuery | ProvenanceQuery


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, expected: list[str]) -> QuerySyntaxError:
        tok = self.peek()
        found = tok.text if tok.kind != "EOF" else "end of input"
        return QuerySyntaxError(tok.offset, expected, found)

    def expect_keyword(self, *words: str) -> _Token:
        tok = self.peek()
        if tok.kind == "KEYWORD" and tok.text in words:
            return self.advance()
        raise self.fail(list(words))

    def expect(self, kind: str, what: str) -> _Token:
        tok = self.peek()
        if tok.kind == kind:
            return self.advance()
        raise self.fail([what])

    # query := status | filter | prov
    def parse_query(self) -> Query:
        tok = self.peek()
        if tok.kind != "KEYWORD":
            raise self.fail(["STATUS", "COUNT", "LIST", "TRACE", "PRODUCERS", "DEPENDENTS"])
        if tok.text == "STATUS":
            q = self.parse_status()
        elif tok.text in ("COUNT", "LIST"):
            q = self.parse_filter()
        elif tok.text in ("TRACE", "PRODUCERS", "DEPENDENTS"):
            q = self.parse_prov()
        else:
            raise self.fail(["STATUS", "COUNT", "LIST", "TRACE", "PRODUCERS", "DEPENDENTS"])
        if self.peek().kind != "EOF":
            raise self.fail(["end of input"])
        return q

    def parse_status(self) -> StatusQuery:
        self.expect_keyword("STATUS")
        target = self.expect("PATH", "artifact type or rule id").text
        subject = session = None
        if self.peek().kind == "KEYWORD" and self.peek().text == "FOR":
            self.advance()
            pairs = self.parse_scope_pairs(require_one=True)
            subject = pairs.get("subject")
            session = pairs.get("session")
        return StatusQuery(target=target, subject=subject, session=session)

    def parse_scope_pairs(self, require_one: bool) -> dict[str, str]:
        pairs: dict[str, str] = {}
        while True:
            tok = self.peek()
            if tok.kind == "PATH" and tok.text in ("subject", "session") and tok.text not in pairs:
                self.advance()
                op = self.expect("OP", "=")
                if op.text != "=":
                    raise QuerySyntaxError(op.offset, ["="], op.text)
                value = self.peek()
                if value.kind in ("PATH", "STRING", "NUMBER"):
                    self.advance()
                    pairs[tok.text] = str(value.value)
                else:
                    raise self.fail(["scope value"])
            else:
                break
        if require_one and not pairs:
            raise self.fail(["subject=", "session="])
        return pairs

    def parse_filter(self) -> FilterQuery:
        verb = self.expect_keyword("COUNT", "LIST").text
        cls = self.expect("PATH", "artifact type").text
        self.expect_keyword("WHERE")
        pred = self.parse_pred()
        return FilterQuery(verb=verb, artifact_class=cls, predicate=pred)

    def parse_prov(self) -> ProvenanceQuery:
        verb = self.expect_keyword("TRACE", "PRODUCERS", "DEPENDENTS").text
        tok = self.peek()
        if tok.kind == "STRING":
            self.advance()
            if _HEX64.match(tok.value):
                ref = ArtifactRef(art_id=tok.value)
            else:
                ref = ArtifactRef(name=tok.value)
        elif tok.kind == "PATH" and _HEX64.match(tok.text):
            self.advance()
            ref = ArtifactRef(art_id=tok.text)
        elif tok.kind == "PATH" and tok.text in ("subject", "session", "name"):
            subject = session = name = None
            while True:
                tok = self.peek()
                if tok.kind != "PATH" or tok.text not in ("subject", "session", "name"):
                    break
                key = self.advance().text
                op = self.expect("OP", "=")
                if op.text != "=":
                    raise QuerySyntaxError(op.offset, ["="], op.text)
                val = self.peek()
                if val.kind not in ("PATH", "STRING", "NUMBER"):
                    raise self.fail(["reference value"])
                self.advance()
                if key == "subject":
                    subject = str(val.value)
                elif key == "session":
                    session = str(val.value)
                else:
                    name = str(val.value)
            ref = ArtifactRef(subject=subject, session=session, name=name)
        else:
            raise self.fail(["artifact id", "subject=", "session=", "name="])
        return ProvenanceQuery(verb=verb, ref=ref)

    # pred with precedence NOT > AND > OR
    def parse_pred(self) -> Predicate:
        return self.parse_or()

    def parse_or(self) -> Predicate:
        items = [self.parse_and()]
        while self.peek().kind == "KEYWORD" and self.peek().text == "OR":
            self.advance()
            items.append(self.parse_and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def parse_and(self) -> Predicate:
        items = [self.parse_not()]
        while self.peek().kind == "KEYWORD" and self.peek().text == "AND":
            self.advance()
            items.append(self.parse_not())
        return items[0] if len(items) == 1 else And(tuple(items))

    def parse_not(self) -> Predicate:
        if self.peek().kind == "KEYWORD" and self.peek().text == "NOT":
            self.advance()
            return Not(self.parse_not())
        return self.parse_atom()

    def parse_atom(self) -> Predicate:
        tok = self.peek()
        if tok.kind == "LPAREN":
            self.advance()
            inner = self.parse_pred()
            self.expect("RPAREN", ")")
            return inner
        if tok.kind == "KEYWORD" and tok.text in ("EXISTS", "MISSING"):
            self.advance()
            parens = self.peek().kind == "LPAREN"
            if parens:
                self.advance()
            path = self.expect("PATH", "attribute path").text
            if parens:
                self.expect("RPAREN", ")")
            return Exists(path) if tok.text == "EXISTS" else Missing(path)
        if tok.kind == "PATH":
            path = self.advance().text
            op_tok = self.peek()
            if op_tok.kind == "OP":
                op = self.advance().text
            elif op_tok.kind == "KEYWORD" and op_tok.text == "CONTAINS":
                self.advance()
                op = "CONTAINS"
            else:
                raise self.fail(list(ALL_OPS))
            lit_tok = self.peek()
            if lit_tok.kind == "STRING":
                literal: Any = self.advance().value
            elif lit_tok.kind == "NUMBER":
                literal = self.advance().value
            elif lit_tok.kind == "PATH" and lit_tok.text in ("true", "false"):
                self.advance()
                literal = lit_tok.text == "true"
            else:
                raise self.fail(["string", "number", "true", "false"])
            if op in NUMERIC_OPS and not is_numeric(literal):
                raise QuerySyntaxError(lit_tok.offset, ["numeric literal"], lit_tok.text)
            if op == "CONTAINS" and not isinstance(literal, str):
                raise QuerySyntaxError(lit_tok.offset, ["string literal"], lit_tok.text)
            return Comparison(path=path, op=op, literal=literal)
        raise self.fail(["(", "NOT", "EXISTS", "MISSING", "attribute path"])


def parse(text: str) -> Query:
    """Parse DSL text into a Query AST; errors carry byte offsets."""
    if not isinstance(text, str):
        raise QuerySyntaxError(0, ["query text"], type(text).__name__)
    return _Parser(text).parse_query()


def parse_predicate(text: str) -> Predicate:
    """Parse a bare predicate expression (rule slot `where` clauses)."""
    parser = _Parser(text)
    pred = parser.parse_pred()
    if parser.peek().kind != "EOF":
        raise parser.fail(["end of input"])
    return pred


# -- results -------------------------------------------------------------------

@dataclass
class QueryResult:
    """A grounded answer: every id it cites exists in the backing registry."""

    answer: Any
    supporting_ids: list[str] = field(default_factory=list)
    unknown_count: int = 0
    grounding: str = ""

    def to_record(self) -> dict[str, Any]:
        return {
            "answer": self.answer,
            "supporting_ids": self.supporting_ids,
            "unknown_count": self.unknown_count,
            "grounding": self.grounding,
        }

    def render_text(self) -> str:
        if isinstance(self.answer, dict):
            body = "\n".join(f"{k}: {v}" for k, v in sorted(self.answer.items()))
        elif isinstance(self.answer, list):
            body = "\n".join(str(x) for x in self.answer)
        else:
            body = str(self.answer)
        lines = [body]
        if self.unknown_count:
            lines.append(f"unknown: {self.unknown_count} record(s) could not be evaluated")
        if self.grounding:
            lines.append(self.grounding)
        return "\n".join(lines)


class QueryBackend(Protocol):
    def filter_candidates(self, artifact_class: str) -> list[tuple[str, dict[str, Any]]]: ...
    def status_map(self, target: str, subject: str | None, session: str | None) -> dict[str, bool]: ...
    def resolve_ref(self, ref: ArtifactRef) -> str: ...
    def trace_up(self, art_id: str) -> list[dict[str, Any]]: ...
    def trace_down(self, art_id: str) -> list[str]: ...
    def producers(self, art_id: str) -> dict[str, Any]: ...
    def grounding_line(self, consulted: int) -> str: ...


class RegistryBackend:
    """The contract-compliant backend: answers from registry records only."""

    def __init__(self, registry: Registry):
        self.registry = registry

    def filter_candidates(self, artifact_class: str) -> list[tuple[str, dict[str, Any]]]:
        return [(a.id, dict(a.attributes)) for a in self.registry.lookup(artifact_type=artifact_class)]

    def _scope_key(self, subject: str, session: str) -> str:
        return f"{subject}/{session}" if session else subject

    def status_map(self, target: str, subject: str | None, session: str | None) -> dict[str, bool]:
        scopes = [
            s for s in self.registry.scopes()
            if (subject is None or s[0] == subject) and (session is None or s[1] == session)
        ]
        satisfied: set[tuple[str, str]] = set()
        for a in self.registry:
            if a.artifact_type == target or a.provenance.rule_id == target:
                satisfied.add(a.scope)
        return {self._scope_key(*s): s in satisfied for s in scopes}

    def resolve_ref(self, ref: ArtifactRef) -> str:
        if ref.art_id:
            return self.registry.get(ref.art_id).id
        matches = [
            a for a in self.registry.lookup(
                subject=ref.subject, session=ref.session, logical_name=ref.name
            )
        ]
        if not matches:
            raise NotFound(f"no artifact matches reference {ref.describe()!r}")
        return matches[-1].id  # latest version wins

    def trace_up(self, art_id: str) -> list[dict[str, Any]]:
        chain = provenance_of(art_id, self.registry)
        return [
            {
                "artifact_id": hop.artifact_id,
                "artifact_type": hop.artifact_type,
                "rule_id": hop.rule_id,
                "params": hop.param_binding,
                "input_ids": list(hop.input_ids),
            }
            for hop in chain
        ]

    def trace_down(self, art_id: str) -> list[str]:
        return dependents_of(art_id, self.registry)

    def producers(self, art_id: str) -> dict[str, Any]:
        a = self.registry.get(art_id)
        return {
            "rule_id": a.provenance.rule_id,
            "kind": a.provenance.kind,
            "params": {k: v for k, v in a.provenance.param_binding.items()},
            "input_ids": list(a.provenance.input_ids),
        }

    def grounding_line(self, consulted: int) -> str:
        sources = []
        if self.registry.path is not None:
            sources.append(self.registry.path.name)
        for a in self.registry.lookup(artifact_type="inventory"):
            if a.payload_path:
                sources.append(a.payload_path.rsplit("/", 1)[-1])
        for a in self.registry.lookup(artifact_type="qa_report"):
            if a.payload_path and a.payload_path.endswith(".csv"):
                sources.append(a.payload_path.rsplit("/", 1)[-1])
        seen: list[str] = []
        for s in sources:
            if s not in seen:
                seen.append(s)
        where = "; ".join(seen) if seen else "in-memory registry"
        return f"grounded in {consulted} artifact record(s): {where}"


def _as_backend(registry_or_backend: Registry | QueryBackend) -> QueryBackend:
    if isinstance(registry_or_backend, Registry):
        return RegistryBackend(registry_or_backend)
    return registry_or_backend


def evaluate(query: Query, registry: Registry | QueryBackend) -> QueryResult:
    """Evaluate a parsed query against a registry (or a degraded backend)."""
    backend = _as_backend(registry)
    if isinstance(query, FilterQuery):
        true_ids: list[str] = []
        unknown = 0
        # a backend may override predicate semantics (the ablation view treats
        # every invisible attribute as unknowable, presence tests included)
        evaluator = getattr(backend, "evaluate_predicate", None)
        if evaluator is None:
            evaluator = lambda pred, attrs: pred.evaluate(attrs)  # noqa: E731
        candidates = backend.filter_candidates(query.artifact_class)
        for art_id, attributes in candidates:
            verdict = evaluator(query.predicate, attributes)
            if verdict is TRUE:
                true_ids.append(art_id)
            elif verdict is UNKNOWN:
                unknown += 1
        answer: Any = len(true_ids) if query.verb == "COUNT" else list(true_ids)
        return QueryResult(
            answer=answer,
            supporting_ids=true_ids,
            unknown_count=unknown,
            grounding=backend.grounding_line(len(candidates)),
        )
    if isinstance(query, StatusQuery):
        status = backend.status_map(query.target, query.subject, query.session)
        return QueryResult(
            answer=status,
            supporting_ids=[],
            unknown_count=0,
            grounding=backend.grounding_line(len(status)),
        )
    if isinstance(query, ProvenanceQuery):
        art_id = backend.resolve_ref(query.ref)
        if query.verb == "TRACE":
            chain = backend.trace_up(art_id)
            ids = [hop["artifact_id"] for hop in chain]
            return QueryResult(
                answer=chain, supporting_ids=ids, grounding=backend.grounding_line(len(chain))
            )
        if query.verb == "DEPENDENTS":
            down = backend.trace_down(art_id)
            return QueryResult(
                answer=down, supporting_ids=list(down), grounding=backend.grounding_line(len(down))
            )
        info = backend.producers(art_id)
        return QueryResult(
            answer=info, supporting_ids=[art_id], grounding=backend.grounding_line(1)
        )
    raise TypeError(f"not a query: {query!r}")


def run(text: str, registry: Registry | QueryBackend) -> QueryResult:
    return evaluate(parse(text), registry)


def status(target: str, registry: Registry | QueryBackend, subject: str | None = None,
           session: str | None = None) -> dict[str, bool]:
    """Per-scope boolean map: does the target type (or rule output) exist?"""
    return _as_backend(registry).status_map(target, subject, session)


def trace(ref: ArtifactRef | str, direction: str, registry: Registry | QueryBackend) -> QueryResult:
    """UP = upstream provenance chain; DOWN = all dependents of ref."""
    if isinstance(ref, str):
        ref = ArtifactRef(art_id=ref) if _HEX64.match(ref) else ArtifactRef(name=ref)
    verb = "TRACE" if direction.upper() == "UP" else "DEPENDENTS"
    return evaluate(ProvenanceQuery(verb=verb, ref=ref), registry)


# -- natural-language boundary ---------------------------------------------------

class FixtureAdapter:
    """Deterministic adapter for tests: a literal question -> DSL mapping."""

    def __init__(self, mapping: dict[str, str]):
        self.mapping = mapping

    def translate(self, text: str) -> str:
        try:
            return self.mapping[text.strip()]
        except KeyError:
            raise AdapterUnavailable(f"fixture adapter has no entry for {text!r}") from None


class HttpAdapter:
    """POSTs {"text": ...} to a local adapter endpoint, expects {"dsl": ...}."""

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def translate(self, text: str) -> str:
        payload = json.dumps({"text": text}).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=payload, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise AdapterUnavailable(f"adapter endpoint unreachable: {exc}") from exc
        if not isinstance(body, dict) or not isinstance(body.get("dsl"), str):
            raise AdapterUnavailable("adapter endpoint returned no 'dsl' field")
        return body["dsl"]


def translate_natural(text: str, adapter) -> Query:
    """Translate free text via the adapter, then parse via the grounded path.

    The adapter can only ever propose DSL; it cannot bypass parse/evaluate.
    """
    if adapter is None:
        raise AdapterUnavailable("no language adapter configured")
    proposal = adapter.translate(text)
    try:
        return parse(proposal)
    except QuerySyntaxError as exc:
        raise TranslationFailed(proposal, exc) from exc


def looks_like_dsl(text: str) -> bool:
    head = text.strip().split(None, 1)
    return bool(head) and head[0] in ("STATUS", "COUNT", "LIST", "TRACE", "PRODUCERS", "DEPENDENTS")
