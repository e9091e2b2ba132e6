"""
PTL: the small structured language programs under analysis are written in.
- AST node classes (immutable; equality ignores node ids and positions)
- a hand-written lexer + recursive-descent parser
- a canonical pretty-printer (parse(format(parse(s))) == parse(s))

No goto, no break: every loop is a natural loop with one exit condition.
See docs/PTL.md for the grammar.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

from .errors import ParseError
from .types import ParamKind

logger = logging.getLogger(__name__)

BUILTINS = {"pow": 2, "log": 1, "min": 2, "max": 2, "abs": 1, "array": 1, "len": 1}
KEYWORDS = {
    "fn", "let", "if", "else", "while", "for", "in", "step", "return",
    "param", "implicit", "source", "extern", "and", "or", "not",
}
COMPARISONS = ("<", "<=", ">", ">=", "==", "!=")

Number = Union[int, float]


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Node:
    node_id: int = field(default=-1, compare=False, kw_only=True)
    line: int = field(default=0, compare=False, kw_only=True)
    col: int = field(default=0, compare=False, kw_only=True)


# ---- expressions ----

@dataclass(frozen=True)
class Num(Node):
    value: Number


@dataclass(frozen=True)
class Var(Node):
    name: str


@dataclass(frozen=True)
class Index(Node):
    name: str
    index: "Expr"


@dataclass(frozen=True)
class Unary(Node):
    op: str  # "-" or "not"
    operand: "Expr"


@dataclass(frozen=True)
class Binary(Node):
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call(Node):
    """Call of a program function or of a builtin (pow, log, min, ...)."""
    name: str
    args: Tuple["Expr", ...]


@dataclass(frozen=True)
class Extern(Node):
    """extern("NAME", a1, ..., ak): dispatched through the library database."""
    name: str
    args: Tuple["Expr", ...]


Expr = Union[Num, Var, Index, Unary, Binary, Call, Extern]


# ---- statements ----

@dataclass(frozen=True)
class Let(Node):
    name: str
    value: Expr


@dataclass(frozen=True)
class Assign(Node):
    name: str
    value: Expr


@dataclass(frozen=True)
class IndexAssign(Node):
    name: str
    index: Expr
    value: Expr


@dataclass(frozen=True)
class If(Node):
    cond: Expr
    then: Tuple["Stmt", ...]
    orelse: Tuple["Stmt", ...] = ()


@dataclass(frozen=True)
class While(Node):
    cond: Expr
    body: Tuple["Stmt", ...]


@dataclass(frozen=True)
class For(Node):
    var: str
    start: Expr
    end: Expr
    step: Optional[Expr]
    body: Tuple["Stmt", ...]


@dataclass(frozen=True)
class Return(Node):
    value: Optional[Expr] = None


@dataclass(frozen=True)
class Source(Node):
    """source(var, "label"): taint source annotation."""
    name: str
    label: str


@dataclass(frozen=True)
class ExprStmt(Node):
    expr: Expr


Stmt = Union[Let, Assign, IndexAssign, If, While, For, Return, Source, ExprStmt]
Loop = Union[While, For]


# ---- top level ----

@dataclass(frozen=True)
class ParamDecl(Node):
    name: str
    kind: ParamKind = "explicit"


@dataclass(frozen=True)
class Function(Node):
    name: str
    params: Tuple[str, ...]
    body: Tuple[Stmt, ...]


@dataclass(frozen=True)
class Program:
    functions: Tuple[Function, ...]
    param_decls: Tuple[ParamDecl, ...] = ()
    entry: str = "main"

    @cached_property
    def by_name(self) -> Dict[str, Function]:
        return {fn.name: fn for fn in self.functions}

    @cached_property
    def nodes(self) -> Dict[int, Node]:
        """Every node of the program by id."""
        index: Dict[int, Node] = {}
        for decl in self.param_decls:
            index[decl.node_id] = decl
        for fn in self.functions:
            index[fn.node_id] = fn
            for node in walk(fn.body):
                index[node.node_id] = node
        return index

    @cached_property
    def owner(self) -> Dict[int, str]:
        """node id -> name of the function that lexically contains it."""
        result: Dict[int, str] = {}
        for fn in self.functions:
            for node in walk(fn.body):
                result[node.node_id] = fn.name
        return result

    @property
    def explicit_params(self) -> List[str]:
        return [d.name for d in self.param_decls if d.kind == "explicit"]

    @property
    def implicit_params(self) -> List[str]:
        return [d.name for d in self.param_decls if d.kind == "implicit"]

    @property
    def declared_params(self) -> List[str]:
        return [d.name for d in self.param_decls]

    def function(self, name: str) -> Function:
        return self.by_name[name]

    def loops(self, function: Optional[str] = None) -> List[Loop]:
        """All loop nodes in source order (optionally of one function)."""
        fns = self.functions if function is None else (self.by_name[function],)
        return [n for fn in fns for n in walk(fn.body) if isinstance(n, (While, For))]


# ---------------------------------------------------------------------------
# Tree walking helpers
# ---------------------------------------------------------------------------

def child_exprs(node: Node) -> Tuple[Expr, ...]:
    """Direct expression children, in evaluation order."""
    if isinstance(node, (Let, Assign)):
        return (node.value,)
    if isinstance(node, IndexAssign):
        return (node.index, node.value)
    if isinstance(node, (If, While)):
        return (node.cond,)
    if isinstance(node, For):
        return (node.start, node.end) + ((node.step,) if node.step is not None else ())
    if isinstance(node, Return):
        return (node.value,) if node.value is not None else ()
    if isinstance(node, ExprStmt):
        return (node.expr,)
    if isinstance(node, Index):
        return (node.index,)
    if isinstance(node, Unary):
        return (node.operand,)
    if isinstance(node, Binary):
        return (node.left, node.right)
    if isinstance(node, (Call, Extern)):
        return node.args
    return ()


def child_blocks(stmt: Node) -> Tuple[Tuple[Stmt, ...], ...]:
    if isinstance(stmt, If):
        return (stmt.then, stmt.orelse)
    if isinstance(stmt, (While, For)):
        return (stmt.body,)
    return ()


def walk_expr(expr: Expr) -> Iterator[Expr]:
    """Post-order walk (operands before the operator, as evaluation happens)."""
    for child in child_exprs(expr):
        yield from walk_expr(child)
    yield expr


def walk(body: Tuple[Stmt, ...]) -> Iterator[Node]:
    """Pre-order walk over statements and their expressions."""
    for stmt in body:
        yield stmt
        for expr in child_exprs(stmt):
            yield from walk_expr(expr)
        for block in child_blocks(stmt):
            yield from walk(block)


def calls_in(expr: Expr) -> List[Union[Call, Extern]]:
    """Program-function calls and extern calls inside an expression, in evaluation order."""
    return [e for e in walk_expr(expr) if isinstance(e, Extern) or (isinstance(e, Call) and e.name not in BUILTINS)]


def write_set(body: Tuple[Stmt, ...]) -> frozenset[str]:
    """Static write-set of a block: every name the block may assign (nested blocks included).
    Variables passed to extern calls are included since library source writes target them."""
    names = set()
    for node in walk(body):
        if isinstance(node, (Let, Assign, IndexAssign)):
            names.add(node.name)
        elif isinstance(node, For):
            names.add(node.var)
        elif isinstance(node, Extern):
            names.update(a.name for a in node.args if isinstance(a, Var))
    return frozenset(names)


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    kind: str  # NUMBER, STRING, IDENT, KEYWORD, OP, EOF
    text: str
    line: int
    col: int


TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<newline>\n)
  | (?P<comment>(?:\#|//)[^\n]*)
  | (?P<number>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)
  | (?P<string>"[^"\n]*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\.\.|==|!=|<=|>=|[<>=+\-*/%(){}\[\],;])
    """,
    re.VERBOSE,
)


def tokenize(source: str) -> List[Token]:
    tokens: List[Token] = []
    pos = 0
    line = 1
    line_start = 0
    while pos < len(source):
        match = TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if match is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        kind = match.lastgroup
        text = match.group()
        if kind == "newline":
            line += 1
            line_start = match.end()
        elif kind == "number":
            tokens.append(Token("NUMBER", text, line, col))
        elif kind == "string":
            tokens.append(Token("STRING", text[1:-1], line, col))
        elif kind == "ident":
            tokens.append(Token("KEYWORD" if text in KEYWORDS else "IDENT", text, line, col))
        elif kind == "op":
            tokens.append(Token("OP", text, line, col))
        pos = match.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class Parser:
    def __init__(self, source: str) -> None:
        self.tokens = tokenize(source)
        self.pos = 0
        self._next_id = 0

    # ---- token helpers ----

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _at(self, kind: str, text: Optional[str] = None) -> bool:
        return self.tok.kind == kind and (text is None or self.tok.text == text)

    def _accept(self, kind: str, text: Optional[str] = None) -> Optional[Token]:
        if self._at(kind, text):
            token = self.tok
            self.pos += 1
            return token
        return None

    def _expect(self, kind: str, text: Optional[str] = None) -> Token:
        token = self._accept(kind, text)
        if token is None:
            wanted = text if text is not None else kind.lower()
            found = self.tok.text or "end of input"
            raise ParseError(f"expected {wanted!r}, found {found!r}", self.tok.line, self.tok.col)
        return token

    def _pos(self, token: Token) -> dict:
        return {"line": token.line, "col": token.col}

    # ---- program ----

    def parse_program(self) -> Program:
        functions: List[Function] = []
        decls: List[ParamDecl] = []
        while not self._at("EOF"):
            if self._at("KEYWORD", "param"):
                decl = self.parse_param_decl()
                if any(d.name == decl.name for d in decls):
                    raise ParseError(f"duplicate parameter {decl.name!r}", decl.line, decl.col)
                decls.append(decl)
            elif self._at("KEYWORD", "fn"):
                fn = self.parse_function()
                if any(f.name == fn.name for f in functions):
                    raise ParseError(f"duplicate function name {fn.name!r}", fn.line, fn.col)
                functions.append(fn)
            else:
                raise ParseError(
                    f"expected 'fn' or 'param', found {self.tok.text!r}", self.tok.line, self.tok.col
                )
        return Program(functions=tuple(functions), param_decls=tuple(decls))

    def parse_param_decl(self) -> ParamDecl:
        start = self._expect("KEYWORD", "param")
        nid = self._new_id()
        name = self._expect("IDENT").text
        kind: ParamKind = "implicit" if self._accept("KEYWORD", "implicit") else "explicit"
        self._expect("OP", ";")
        return ParamDecl(name, kind, node_id=nid, **self._pos(start))

    def parse_function(self) -> Function:
        start = self._expect("KEYWORD", "fn")
        nid = self._new_id()
        name = self._expect("IDENT").text
        self._expect("OP", "(")
        params: List[str] = []
        if not self._at("OP", ")"):
            params.append(self._expect("IDENT").text)
            while self._accept("OP", ","):
                params.append(self._expect("IDENT").text)
        self._expect("OP", ")")
        if len(set(params)) != len(params):
            raise ParseError(f"duplicate parameter name in function {name!r}", start.line, start.col)
        body = self.parse_block()
        return Function(name, tuple(params), body, node_id=nid, **self._pos(start))

    def parse_block(self) -> Tuple[Stmt, ...]:
        self._expect("OP", "{")
        stmts: List[Stmt] = []
        while not self._accept("OP", "}"):
            if self._at("EOF"):
                raise ParseError("unterminated block", self.tok.line, self.tok.col)
            stmts.append(self.parse_statement())
        return tuple(stmts)

    # ---- statements ----

    def parse_statement(self) -> Stmt:
        start = self.tok
        pos = self._pos(start)
        if self._accept("KEYWORD", "let"):
            nid = self._new_id()
            name = self._expect("IDENT").text
            self._expect("OP", "=")
            value = self.parse_expr()
            self._expect("OP", ";")
            return Let(name, value, node_id=nid, **pos)
        if self._at("KEYWORD", "if"):
            return self.parse_if()
        if self._accept("KEYWORD", "while"):
            nid = self._new_id()
            self._expect("OP", "(")
            cond = self.parse_expr()
            self._expect("OP", ")")
            return While(cond, self.parse_block(), node_id=nid, **pos)
        if self._accept("KEYWORD", "for"):
            nid = self._new_id()
            var = self._expect("IDENT").text
            self._expect("KEYWORD", "in")
            lo = self.parse_expr()
            self._expect("OP", "..")
            hi = self.parse_expr()
            step = self.parse_expr() if self._accept("KEYWORD", "step") else None
            return For(var, lo, hi, step, self.parse_block(), node_id=nid, **pos)
        if self._accept("KEYWORD", "return"):
            nid = self._new_id()
            value = None if self._at("OP", ";") else self.parse_expr()
            self._expect("OP", ";")
            return Return(value, node_id=nid, **pos)
        if self._accept("KEYWORD", "source"):
            nid = self._new_id()
            self._expect("OP", "(")
            name = self._expect("IDENT").text
            self._expect("OP", ",")
            label = self._expect("STRING").text
            self._expect("OP", ")")
            self._expect("OP", ";")
            return Source(name, label, node_id=nid, **pos)
        if self._at("IDENT"):
            nxt = self.tokens[self.pos + 1]
            if nxt.kind == "OP" and nxt.text == "=":
                nid = self._new_id()
                name = self._expect("IDENT").text
                self._expect("OP", "=")
                value = self.parse_expr()
                self._expect("OP", ";")
                return Assign(name, value, node_id=nid, **pos)
            if nxt.kind == "OP" and nxt.text == "[" and self._is_index_assign():
                nid = self._new_id()
                name = self._expect("IDENT").text
                self._expect("OP", "[")
                index = self.parse_expr()
                self._expect("OP", "]")
                self._expect("OP", "=")
                value = self.parse_expr()
                self._expect("OP", ";")
                return IndexAssign(name, index, value, node_id=nid, **pos)
        if self._at("IDENT") or self._at("KEYWORD", "extern"):
            nid = self._new_id()
            expr = self.parse_expr()
            if not isinstance(expr, (Call, Extern)):
                raise ParseError("only calls may be used as statements", start.line, start.col)
            self._expect("OP", ";")
            return ExprStmt(expr, node_id=nid, **pos)
        raise ParseError(f"unknown statement form starting with {start.text!r}", start.line, start.col)

    def _is_index_assign(self) -> bool:
        """Look past a[...] to see whether an '=' follows."""
        depth = 0
        i = self.pos + 1
        while i < len(self.tokens):
            t = self.tokens[i]
            if t.kind == "OP" and t.text == "[":
                depth += 1
            elif t.kind == "OP" and t.text == "]":
                depth -= 1
                if depth == 0:
                    nxt = self.tokens[i + 1]
                    return nxt.kind == "OP" and nxt.text == "="
            elif t.kind == "EOF":
                return False
            i += 1
        return False

    def parse_if(self) -> If:
        start = self._expect("KEYWORD", "if")
        nid = self._new_id()
        self._expect("OP", "(")
        cond = self.parse_expr()
        self._expect("OP", ")")
        then = self.parse_block()
        orelse: Tuple[Stmt, ...] = ()
        if self._accept("KEYWORD", "else"):
            orelse = (self.parse_if(),) if self._at("KEYWORD", "if") else self.parse_block()
        return If(cond, then, orelse, node_id=nid, **self._pos(start))

    # ---- expressions (lowest to highest precedence) ----

    def parse_expr(self) -> Expr:
        return self.parse_or()

    def _binary_chain(self, sub, ops, kind="OP") -> Expr:
        left = sub()
        while self.tok.kind == kind and self.tok.text in ops:
            op_tok = self.tok
            self.pos += 1
            right = sub()
            left = Binary(op_tok.text, left, right, node_id=self._new_id(), **self._pos(op_tok))
        return left

    def parse_or(self) -> Expr:
        return self._binary_chain(self.parse_and, ("or",), kind="KEYWORD")

    def parse_and(self) -> Expr:
        return self._binary_chain(self.parse_not, ("and",), kind="KEYWORD")

    def parse_not(self) -> Expr:
        start = self.tok
        if self._accept("KEYWORD", "not"):
            operand = self.parse_not()
            return Unary("not", operand, node_id=self._new_id(), **self._pos(start))
        return self.parse_comparison()

    def parse_comparison(self) -> Expr:
        left = self.parse_additive()
        if self.tok.kind == "OP" and self.tok.text in COMPARISONS:
            op_tok = self.tok
            self.pos += 1
            right = self.parse_additive()
            return Binary(op_tok.text, left, right, node_id=self._new_id(), **self._pos(op_tok))
        return left

    def parse_additive(self) -> Expr:
        return self._binary_chain(self.parse_multiplicative, ("+", "-"))

    def parse_multiplicative(self) -> Expr:
        return self._binary_chain(self.parse_unary, ("*", "/", "%"))

    def parse_unary(self) -> Expr:
        start = self.tok
        if self._accept("OP", "-"):
            operand = self.parse_unary()
            return Unary("-", operand, node_id=self._new_id(), **self._pos(start))
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        start = self.tok
        pos = self._pos(start)
        if self._accept("NUMBER"):
            text = start.text
            value: Number = float(text) if any(c in text for c in ".eE") else int(text)
            return Num(value, node_id=self._new_id(), **pos)
        if self._accept("OP", "("):
            inner = self.parse_expr()
            self._expect("OP", ")")
            return inner
        if self._accept("KEYWORD", "extern"):
            self._expect("OP", "(")
            name = self._expect("STRING").text
            args: List[Expr] = []
            while self._accept("OP", ","):
                args.append(self.parse_expr())
            self._expect("OP", ")")
            return Extern(name, tuple(args), node_id=self._new_id(), **pos)
        if self._accept("IDENT"):
            name = start.text
            if self._accept("OP", "("):
                args = []
                if not self._at("OP", ")"):
                    args.append(self.parse_expr())
                    while self._accept("OP", ","):
                        args.append(self.parse_expr())
                self._expect("OP", ")")
                if name in BUILTINS and len(args) != BUILTINS[name]:
                    raise ParseError(
                        f"builtin {name} takes {BUILTINS[name]} argument(s)", start.line, start.col
                    )
                return Call(name, tuple(args), node_id=self._new_id(), **pos)
            if self._accept("OP", "["):
                index = self.parse_expr()
                self._expect("OP", "]")
                return Index(name, index, node_id=self._new_id(), **pos)
            return Var(name, node_id=self._new_id(), **pos)
        found = start.text or "end of input"
        raise ParseError(f"unexpected {found!r} in expression", start.line, start.col)


def parse(source_text: str) -> Program:
    """Parse PTL source into a Program; node ids are assigned in source order."""
    program = Parser(source_text).parse_program()
    logger.debug("parsed %d function(s), %d parameter declaration(s)",
                 len(program.functions), len(program.param_decls))
    return program


def load_program(path: Union[str, Path]) -> Program:
    return parse(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Pretty-printer
# ---------------------------------------------------------------------------

def format_expr(expr: Expr) -> str:
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Index):
        return f"{expr.name}[{format_expr(expr.index)}]"
    if isinstance(expr, Unary):
        space = " " if expr.op == "not" else ""
        return f"({expr.op}{space}{format_expr(expr.operand)})"
    if isinstance(expr, Binary):
        return f"({format_expr(expr.left)} {expr.op} {format_expr(expr.right)})"
    if isinstance(expr, Call):
        return f"{expr.name}({', '.join(format_expr(a) for a in expr.args)})"
    if isinstance(expr, Extern):
        rest = "".join(", " + format_expr(a) for a in expr.args)
        return f'extern("{expr.name}"{rest})'
    raise TypeError(f"not an expression: {expr!r}")


def _format_block(body: Tuple[Stmt, ...], depth: int) -> List[str]:
    lines: List[str] = []
    for stmt in body:
        lines.extend(_format_stmt(stmt, depth))
    return lines


def _format_stmt(stmt: Stmt, depth: int) -> List[str]:
    pad = "    " * depth
    if isinstance(stmt, Let):
        return [f"{pad}let {stmt.name} = {format_expr(stmt.value)};"]
    if isinstance(stmt, Assign):
        return [f"{pad}{stmt.name} = {format_expr(stmt.value)};"]
    if isinstance(stmt, IndexAssign):
        return [f"{pad}{stmt.name}[{format_expr(stmt.index)}] = {format_expr(stmt.value)};"]
    if isinstance(stmt, Return):
        return [f"{pad}return;" if stmt.value is None else f"{pad}return {format_expr(stmt.value)};"]
    if isinstance(stmt, Source):
        return [f'{pad}source({stmt.name}, "{stmt.label}");']
    if isinstance(stmt, ExprStmt):
        return [f"{pad}{format_expr(stmt.expr)};"]
    if isinstance(stmt, If):
        lines = [f"{pad}if ({format_expr(stmt.cond)}) {{"]
        lines += _format_block(stmt.then, depth + 1)
        if stmt.orelse:
            lines.append(f"{pad}}} else {{")
            lines += _format_block(stmt.orelse, depth + 1)
        lines.append(f"{pad}}}")
        return lines
    if isinstance(stmt, While):
        lines = [f"{pad}while ({format_expr(stmt.cond)}) {{"]
        return lines + _format_block(stmt.body, depth + 1) + [f"{pad}}}"]
    if isinstance(stmt, For):
        step = "" if stmt.step is None else f" step {format_expr(stmt.step)}"
        lines = [f"{pad}for {stmt.var} in {format_expr(stmt.start)}..{format_expr(stmt.end)}{step} {{"]
        return lines + _format_block(stmt.body, depth + 1) + [f"{pad}}}"]
    raise TypeError(f"not a statement: {stmt!r}")


def format_program(program: Program) -> str:
    lines: List[str] = []
    for decl in program.param_decls:
        lines.append(f"param {decl.name}{' implicit' if decl.kind == 'implicit' else ''};")
    if program.param_decls:
        lines.append("")
    for fn in program.functions:
        lines.append(f"fn {fn.name}({', '.join(fn.params)}) {{")
        lines += _format_block(fn.body, 1)
        lines.append("}")
        lines.append("")
    return "\n".join(lines)
