"""Signature definition language.

A signature file names a primitive and gives one or more variants of
its data flow.  Each variant is a list of statements built through a
fresh graph broker, so signatures are normalized by exactly the same
rewrite rules as lifted code.

Grammar (keywords case-insensitive, '#' starts a comment):

    document   = "IDENTIFIER" rest-of-line
                 { "VARIANT" rest-of-line { statement } }
    statement  = ["TRANSIENT"] [label ":"] expr ";"
    expr       = shift { "+" shift }
    shift      = atom { ("<<" | ">>") atom }
    atom       = number | label | opcall | opaque | "(" expr ")"
    opcall     = ("STORE" | "LOAD" | "XOR" | "OR" | "AND" | "MULT"
                  | "ROTATE") "(" expr { "," expr } ")"
    opaque     = "OPAQUE" ["<" label ">"] ["(" [expr {"," expr}] ")"]

Numbers are decimal or 0x hex, labels match [A-Za-z_][A-Za-z0-9_]*,
and label references only point backwards within their variant.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from .dfg import Dfg, NodeKind, NodeRef, NodeSpec

__all__ = [
    "ParseError", "ArityError", "Literal", "LabelRef", "OpCall",
    "Infix", "Opaque", "Statement", "VariantDef", "SignatureDoc",
    "SignatureGraph", "parse", "print_doc", "build_variant",
]


class ParseError(Exception):
    def __init__(self, line: int, column: int, expected: tuple[str, ...],
                 found: str = ""):
        self.line = line
        self.column = column
        self.expected = tuple(expected)
        self.found = found
        want = " or ".join(expected)
        suffix = f", found {found}" if found else ""
        super().__init__(f"line {line}, column {column}: "
                         f"expected {want}{suffix}")


class ArityError(Exception):
    def __init__(self, line: int, column: int, op: str, got: int,
                 want: str):
        self.line = line
        self.column = column
        self.op = op
        super().__init__(f"line {line}, column {column}: {op} takes "
                         f"{want} argument(s), got {got}")


# --------------------------------------------------------------- AST


@dataclass(frozen=True)
class Literal:
    value: int


@dataclass(frozen=True)
class LabelRef:
    name: str


@dataclass(frozen=True)
class OpCall:
    op: str                      # canonical upper-case keyword
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class Infix:
    op: str                      # '+', '<<' or '>>'
    args: tuple["Expr", ...]     # '+' is variadic, shifts binary


@dataclass(frozen=True)
class Opaque:
    clamp: Optional[str] = None
    args: tuple["Expr", ...] = ()


Expr = Union[Literal, LabelRef, OpCall, Infix, Opaque]


@dataclass(frozen=True)
class Statement:
    transient: bool
    label: Optional[str]
    expr: Expr


@dataclass(frozen=True)
class VariantDef:
    name: str
    statements: tuple[Statement, ...]


@dataclass(frozen=True)
class SignatureDoc:
    identifier: str
    variants: tuple[VariantDef, ...]


_OP_KEYWORDS = ("STORE", "LOAD", "XOR", "OR", "AND", "MULT", "ROTATE")
_ARITY = {"STORE": (2, 2), "LOAD": (1, 1), "ROTATE": (2, 2),
          "XOR": (2, None), "OR": (2, None), "AND": (2, None),
          "MULT": (2, None)}
_RESERVED = set(_OP_KEYWORDS) | {"OPAQUE", "TRANSIENT", "IDENTIFIER",
                                 "VARIANT"}


# ------------------------------------------------------------- lexer


@dataclass(frozen=True)
class _Token:
    kind: str        # 'number', 'name', '<<', '>>', or a single char
    text: str
    value: int
    line: int
    column: int


_TOKEN_RE = re.compile(r"""
    (?P<hex>0[xX][0-9a-fA-F]+)
  | (?P<dec>[0-9]+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<shl><<)
  | (?P<shr>>>)
  | (?P<punct>[()<>,:;+])
  | (?P<space>[ \t]+)
""", re.VERBOSE)


def _tokenize(body: list[tuple[int, str]]) -> list[_Token]:
    """body is a list of (line number, comment-stripped line text)."""
    out: list[_Token] = []
    for line_no, text in body:
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                raise ParseError(line_no, pos + 1, ("a token",),
                                 repr(text[pos]))
            pos = m.end()
            kind = m.lastgroup
            if kind == "space":
                continue
            tok = m.group()
            col = m.start() + 1
            if kind in ("hex", "dec"):
                value = int(tok, 16 if kind == "hex" else 10)
                if value >= 1 << 32:
                    raise ParseError(line_no, col,
                                     ("a 32-bit literal",), tok)
                out.append(_Token("number", tok, value, line_no, col))
            elif kind == "name":
                out.append(_Token("name", tok, 0, line_no, col))
            elif kind == "shl":
                out.append(_Token("<<", tok, 0, line_no, col))
            elif kind == "shr":
                out.append(_Token(">>", tok, 0, line_no, col))
            else:
                out.append(_Token(tok, tok, 0, line_no, col))
    return out


class _Parser:
    def __init__(self, tokens: list[_Token], end_line: int):
        self.tokens = tokens
        self.pos = 0
        self.end_line = end_line
        self.labels: set[str] = set()

    def _peek(self) -> Optional[_Token]:
        if self.pos < len(self.tokens):
            return self.tokens[self.pos]
        return None

    def _fail(self, expected: tuple[str, ...]) -> ParseError:
        tok = self._peek()
        if tok is None:
            return ParseError(self.end_line, 1, expected,
                              "end of variant")
        return ParseError(tok.line, tok.column, expected, repr(tok.text))

    def _take(self, kind: str, expected: tuple[str, ...]) -> _Token:
        tok = self._peek()
        if tok is None or tok.kind != kind:
            raise self._fail(expected)
        self.pos += 1
        return tok

    def _at_keyword(self, word: str) -> bool:
        tok = self._peek()
        return (tok is not None and tok.kind == "name"
                and tok.text.upper() == word)

    def statements(self) -> tuple[Statement, ...]:
        out = []
        while self._peek() is not None:
            out.append(self._statement())
        return tuple(out)

    def _statement(self) -> Statement:
        transient = False
        if self._at_keyword("TRANSIENT"):
            self.pos += 1
            transient = True
        label = None
        tok = self._peek()
        nxt = (self.tokens[self.pos + 1]
               if self.pos + 1 < len(self.tokens) else None)
        if (tok is not None and tok.kind == "name"
                and nxt is not None and nxt.kind == ":"):
            if tok.text.upper() in _RESERVED:
                raise ParseError(tok.line, tok.column,
                                 ("a label",), repr(tok.text))
            if tok.text in self.labels:
                raise ParseError(tok.line, tok.column,
                                 ("an unused label",), repr(tok.text))
            label = tok.text
            self.pos += 2
        expr = self._expr()
        self._take(";", ("';'",))
        if label is not None:
            self.labels.add(label)
        return Statement(transient, label, expr)

    def _expr(self) -> Expr:
        terms = [self._shift()]
        while self._peek() is not None and self._peek().kind == "+":
            self.pos += 1
            terms.append(self._shift())
        if len(terms) == 1:
            return terms[0]
        return Infix("+", tuple(terms))

    def _shift(self) -> Expr:
        node = self._atom()
        while (self._peek() is not None
               and self._peek().kind in ("<<", ">>")):
            op = self.tokens[self.pos].kind
            self.pos += 1
            node = Infix(op, (node, self._atom()))
        return node

    def _atom(self) -> Expr:
        tok = self._peek()
        if tok is None:
            raise self._fail(("an expression",))
        if tok.kind == "number":
            self.pos += 1
            return Literal(tok.value)
        if tok.kind == "(":
            self.pos += 1
            inner = self._expr()
            self._take(")", ("')'",))
            return inner
        if tok.kind == "name":
            word = tok.text.upper()
            if word == "OPAQUE":
                self.pos += 1
                return self._opaque()
            if word in _OP_KEYWORDS:
                self.pos += 1
                return self._opcall(tok, word)
            if word in _RESERVED:
                raise ParseError(tok.line, tok.column,
                                 ("an expression",), repr(tok.text))
            nxt = (self.tokens[self.pos + 1]
                   if self.pos + 1 < len(self.tokens) else None)
            if nxt is not None and nxt.kind == "(":
                raise ParseError(tok.line, tok.column,
                                 ("a known operation keyword",),
                                 repr(tok.text))
            if tok.text not in self.labels:
                raise ParseError(tok.line, tok.column,
                                 ("a previously defined label",),
                                 repr(tok.text))
            self.pos += 1
            return LabelRef(tok.text)
        raise self._fail(("an expression",))

    def _opcall(self, tok: _Token, word: str) -> OpCall:
        self._take("(", ("'('",))
        args = [self._expr()]
        while self._peek() is not None and self._peek().kind == ",":
            self.pos += 1
            args.append(self._expr())
        self._take(")", ("')'", "','"))
        lo, hi = _ARITY[word]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = str(lo) if hi == lo else f"at least {lo}"
            raise ArityError(tok.line, tok.column, word, len(args),
                             want)
        return OpCall(word, tuple(args))

    def _opaque(self) -> Opaque:
        clamp = None
        tok = self._peek()
        if tok is not None and tok.kind == "<":
            self.pos += 1
            name = self._take("name", ("a clamp label",))
            if name.text.upper() in _RESERVED:
                raise ParseError(name.line, name.column,
                                 ("a clamp label",), repr(name.text))
            clamp = name.text
            self._take(">", ("'>'",))
        args: tuple[Expr, ...] = ()
        tok = self._peek()
        if tok is not None and tok.kind == "(":
            self.pos += 1
            collected = []
            if self._peek() is not None and self._peek().kind != ")":
                collected.append(self._expr())
                while (self._peek() is not None
                       and self._peek().kind == ","):
                    self.pos += 1
                    collected.append(self._expr())
            self._take(")", ("')'",))
            args = tuple(collected)
        return Opaque(clamp, args)


def parse(text: str) -> SignatureDoc:
    identifier: Optional[str] = None
    pending: list[tuple[str, int, list[tuple[int, str]]]] = []
    for line_no, raw in enumerate(text.splitlines(), 1):
        code = raw.split("#", 1)[0]
        stripped = code.strip()
        if not stripped:
            continue
        parts = stripped.split(None, 1)
        word = parts[0].upper()
        rest = parts[1].strip() if len(parts) > 1 else ""
        column = code.index(code.lstrip()[0]) + 1
        if word == "IDENTIFIER":
            if identifier is not None or pending:
                raise ParseError(line_no, column,
                                 ("VARIANT", "a statement"),
                                 "IDENTIFIER")
            if not rest:
                raise ParseError(line_no, column + len(parts[0]),
                                 ("a signature name",), "end of line")
            identifier = rest
        elif word == "VARIANT":
            if identifier is None:
                raise ParseError(line_no, column, ("IDENTIFIER",),
                                 "VARIANT")
            if not rest:
                raise ParseError(line_no, column + len(parts[0]),
                                 ("a variant name",), "end of line")
            pending.append((rest, line_no, []))
        else:
            if identifier is None:
                raise ParseError(line_no, column, ("IDENTIFIER",),
                                 repr(parts[0]))
            if not pending:
                raise ParseError(line_no, column, ("VARIANT",),
                                 repr(parts[0]))
            pending[-1][2].append((line_no, code))
    last_line = text.count("\n") + 1
    if identifier is None:
        raise ParseError(last_line, 1, ("IDENTIFIER",), "end of file")
    if not pending:
        raise ParseError(last_line, 1, ("VARIANT",), "end of file")
    variants = []
    for name, header_line, body in pending:
        end_line = body[-1][0] if body else header_line
        parser = _Parser(_tokenize(body), end_line)
        statements = parser.statements()
        variants.append(VariantDef(name, statements))
    return SignatureDoc(identifier, tuple(variants))


# ----------------------------------------------------------- printer


def _prec(expr: Expr) -> int:
    if isinstance(expr, Infix):
        return 1 if expr.op == "+" else 2
    return 3


def _print_expr(expr: Expr, context: int = 0,
                right_of_shift: bool = False) -> str:
    if isinstance(expr, Literal):
        return (str(expr.value) if expr.value < 0x10000
                else f"0x{expr.value:x}")
    if isinstance(expr, LabelRef):
        return expr.name
    if isinstance(expr, OpCall):
        return (expr.op + "("
                + ",".join(_print_expr(a) for a in expr.args) + ")")
    if isinstance(expr, Opaque):
        text = "OPAQUE"
        if expr.clamp is not None:
            text += f"<{expr.clamp}>"
        if expr.args:
            text += ("(" + ",".join(_print_expr(a) for a in expr.args)
                     + ")")
        return text
    assert isinstance(expr, Infix)
    p = _prec(expr)
    if expr.op == "+":
        inner = "+".join(_print_expr(a, p) for a in expr.args)
    else:
        left, right = expr.args
        inner = (_print_expr(left, p) + expr.op
                 + _print_expr(right, p, right_of_shift=True))
    if p < context or (p == context == 2 and right_of_shift):
        return f"({inner})"
    if p == context == 1:
        return f"({inner})"        # a nested sum built programmatically
    return inner


def print_doc(doc: SignatureDoc) -> str:
    lines = [f"IDENTIFIER {doc.identifier}"]
    for v in doc.variants:
        lines.append("")
        lines.append(f"VARIANT {v.name}")
        for st in v.statements:
            prefix = "TRANSIENT " if st.transient else ""
            label = f"{st.label}:" if st.label else ""
            lines.append(f"{prefix}{label}{_print_expr(st.expr)};")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------- builder


@dataclass
class SignatureGraph:
    graph: Dfg
    clamp_labels: dict[NodeRef, str] = field(default_factory=dict)
    transient_set: set[NodeRef] = field(default_factory=set)


_OPCALL_KIND = {"XOR": NodeKind.XOR, "OR": NodeKind.OR,
                "AND": NodeKind.AND, "MULT": NodeKind.MULT,
                "ROTATE": NodeKind.ROTATE}
_INFIX_KIND = {"+": NodeKind.ADD, "<<": NodeKind.SHL,
               ">>": NodeKind.SHR}


def _build_expr(g: Dfg, expr: Expr, labels: dict[str, NodeRef],
                clamp_map: dict[NodeRef, str]) -> NodeRef:
    if isinstance(expr, Literal):
        return g.request_constant(expr.value)
    if isinstance(expr, LabelRef):
        return labels[expr.name]
    if isinstance(expr, Opaque):
        args = tuple(_build_expr(g, a, labels, clamp_map)
                     for a in expr.args)
        ref = g.request_opaque(args, clamp=expr.clamp)
        if expr.clamp is not None:
            clamp_map[ref] = expr.clamp
        return ref
    if isinstance(expr, OpCall):
        lo, hi = _ARITY[expr.op]
        if len(expr.args) < lo or (hi is not None
                                   and len(expr.args) > hi):
            want = str(lo) if hi == lo else f"at least {lo}"
            raise ArityError(0, 0, expr.op, len(expr.args), want)
        args = [_build_expr(g, a, labels, clamp_map)
                for a in expr.args]
        if expr.op == "STORE":
            return g.record_store(args[0], args[1])
        if expr.op == "LOAD":
            return g.request_load(args[0])
        return g.request_operation(
            NodeSpec(_OPCALL_KIND[expr.op], tuple(args)))
    assert isinstance(expr, Infix)
    args = tuple(_build_expr(g, a, labels, clamp_map)
                 for a in expr.args)
    return g.request_operation(NodeSpec(_INFIX_KIND[expr.op], args))


def build_variant(v: VariantDef) -> SignatureGraph:
    g = Dfg()
    labels: dict[str, NodeRef] = {}
    clamp_map: dict[NodeRef, str] = {}
    roots: list[NodeRef] = []
    transients: list[NodeRef] = []
    for st in v.statements:
        ref = _build_expr(g, st.expr, labels, clamp_map)
        if st.label is not None:
            labels[st.label] = ref
        (transients if st.transient else roots).append(ref)
    g.purge(roots)
    return SignatureGraph(
        g,
        {r: lab for r, lab in clamp_map.items() if r in g},
        {r for r in transients if r in g},
    )
