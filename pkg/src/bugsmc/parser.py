"""Recursive-descent parser for the BUGS-dialect model language.

Grammar (the subset this engine supports)::

    model     := 'model' '{' statement* '}'
    statement := relation | loop
    loop      := 'for' '(' IDENT 'in' expr ':' expr ')' '{' statement* '}'
    relation  := varref '~' IDENT '(' args ')' trunc?
               | varref '<-' expr
    trunc     := 'T' '(' expr? ',' expr? ')'
    varref    := IDENT ('[' index (',' index)* ']')?
    index     :=                      (empty slice: full extent)
               | expr
               | expr ':' expr        (inclusive range)

Expressions use conventional arithmetic with precedence
``^`` > unary ``-`` > ``*`` ``/`` > ``+`` ``-`` > comparisons,
``^`` right-associative. Comparisons do not chain. Function application
``f(a, b)`` is an ordinary call; ``ifelse`` is a plain 3-ary function.

AST nodes compare structurally; source positions are carried but excluded
from equality so a pretty-printed model reparses to an equal tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from .lexer import EOF, IDENT, KEYWORD, NUMBER, SYMBOL, Token, tokenize

COMPARISON_OPS = ("==", "!=", "<=", ">=", "<", ">")
ADDITIVE_OPS = ("+", "-")
MULTIPLICATIVE_OPS = ("*", "/")


class ParseError(Exception):
    """Unexpected token, with position and what was expected."""

    def __init__(self, line: int, column: int, expected: str, found: str):
        super().__init__(f"{line}:{column}: expected {expected}, found {found}")
        self.line = line
        self.column = column
        self.expected = expected
        self.found = found


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float
    line: int = field(compare=False, default=0)
    column: int = field(compare=False, default=0)


@dataclass(frozen=True)
class EmptySlice:
    """The ``a[i,]`` form: full extent of that dimension."""


@dataclass(frozen=True)
class RangeIndex:
    lo: "Expression"
    hi: "Expression"


@dataclass(frozen=True)
class VarRef:
    name: str
    indices: tuple["Index", ...] = ()
    line: int = field(compare=False, default=0)
    column: int = field(compare=False, default=0)


@dataclass(frozen=True)
class Apply:
    func: str
    args: tuple["Expression", ...]
    line: int = field(compare=False, default=0)
    column: int = field(compare=False, default=0)


@dataclass(frozen=True)
class BinaryOp:
    op: str
    lhs: "Expression"
    rhs: "Expression"
    line: int = field(compare=False, default=0)
    column: int = field(compare=False, default=0)


@dataclass(frozen=True)
class UnaryOp:
    op: str  # only '-'
    operand: "Expression"
    line: int = field(compare=False, default=0)
    column: int = field(compare=False, default=0)


Expression = Union[Constant, VarRef, Apply, BinaryOp, UnaryOp]
Index = Union[Expression, RangeIndex, EmptySlice]


@dataclass(frozen=True)
class Truncation:
    lower: Expression | None
    upper: Expression | None


@dataclass(frozen=True)
class StochasticRelation:
    lhs: VarRef
    dist: str
    params: tuple[Expression, ...]
    truncation: Truncation | None = None
    line: int = field(compare=False, default=0)
    column: int = field(compare=False, default=0)


@dataclass(frozen=True)
class DeterministicRelation:
    lhs: VarRef
    rhs: Expression
    line: int = field(compare=False, default=0)
    column: int = field(compare=False, default=0)


@dataclass(frozen=True)
class ForLoop:
    index: str
    lo: Expression
    hi: Expression
    body: tuple["Statement", ...]
    line: int = field(compare=False, default=0)
    column: int = field(compare=False, default=0)


Statement = Union[StochasticRelation, DeterministicRelation, ForLoop]
Relation = Union[StochasticRelation, DeterministicRelation]


@dataclass(frozen=True)
class ModelAST:
    statements: tuple[Statement, ...]


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != EOF:
            self.pos += 1
        return tok

    def error(self, expected: str) -> ParseError:
        tok = self.peek()
        found = "end of input" if tok.kind == EOF else repr(tok.lexeme)
        return ParseError(tok.line, tok.column, expected, found)

    def expect_symbol(self, sym: str) -> Token:
        tok = self.peek()
        if tok.kind == SYMBOL and tok.lexeme == sym:
            return self.advance()
        raise self.error(repr(sym))

    def expect_keyword(self, kw: str) -> Token:
        tok = self.peek()
        if tok.kind == KEYWORD and tok.lexeme == kw:
            return self.advance()
        raise self.error(repr(kw))

    def expect_ident(self, what: str = "identifier") -> Token:
        tok = self.peek()
        if tok.kind == IDENT:
            return self.advance()
        raise self.error(what)

    def at_symbol(self, *syms: str) -> bool:
        tok = self.peek()
        return tok.kind == SYMBOL and tok.lexeme in syms

    # -- toplevel ----------------------------------------------------------

    def parse_model(self) -> ModelAST:
        self.expect_keyword("model")
        self.expect_symbol("{")
        statements = self.parse_statements()
        self.expect_symbol("}")
        tok = self.peek()
        if tok.kind != EOF:
            raise self.error("end of input")
        return ModelAST(tuple(statements))

    def parse_statements(self) -> list[Statement]:
        out: list[Statement] = []
        while True:
            tok = self.peek()
            if tok.kind == SYMBOL and tok.lexeme == "}":
                return out
            if tok.kind == EOF:
                return out
            out.append(self.parse_statement())

    def parse_statement(self) -> Statement:
        tok = self.peek()
        if tok.kind == KEYWORD and tok.lexeme == "for":
            return self.parse_for()
        if tok.kind == IDENT:
            return self.parse_relation()
        raise self.error("relation or 'for' loop")

    def parse_for(self) -> ForLoop:
        start = self.expect_keyword("for")
        self.expect_symbol("(")
        index = self.expect_ident("loop index")
        self.expect_keyword("in")
        lo = self.parse_expression()
        self.expect_symbol(":")
        hi = self.parse_expression()
        self.expect_symbol(")")
        self.expect_symbol("{")
        body = self.parse_statements()
        self.expect_symbol("}")
        return ForLoop(index.lexeme, lo, hi, tuple(body), start.line, start.column)

    def parse_relation(self) -> Relation:
        lhs = self.parse_varref()
        tok = self.peek()
        if tok.kind == SYMBOL and tok.lexeme == "~":
            self.advance()
            dist_tok = self.expect_ident("distribution name")
            self.expect_symbol("(")
            params: list[Expression] = []
            if not self.at_symbol(")"):
                params.append(self.parse_expression())
                while self.at_symbol(","):
                    self.advance()
                    params.append(self.parse_expression())
            self.expect_symbol(")")
            trunc = None
            nxt = self.peek()
            if nxt.kind == KEYWORD and nxt.lexeme == "T":
                trunc = self.parse_truncation()
            return StochasticRelation(lhs, dist_tok.lexeme, tuple(params), trunc,
                                      lhs.line, lhs.column)
        if tok.kind == SYMBOL and tok.lexeme == "<-":
            self.advance()
            rhs = self.parse_expression()
            return DeterministicRelation(lhs, rhs, lhs.line, lhs.column)
        raise self.error("'~' or '<-'")

    def parse_truncation(self) -> Truncation:
        t_tok = self.expect_keyword("T")
        self.expect_symbol("(")
        lower = None if self.at_symbol(",") else self.parse_expression()
        self.expect_symbol(",")
        upper = None if self.at_symbol(")") else self.parse_expression()
        self.expect_symbol(")")
        if lower is None and upper is None:
            raise ParseError(t_tok.line, t_tok.column,
                             "at least one truncation bound", "'T(,)'")
        return Truncation(lower, upper)

    # -- expressions -------------------------------------------------------

    def parse_expression(self) -> Expression:
        return self.parse_comparison()

    def parse_comparison(self) -> Expression:
        lhs = self.parse_additive()
        if self.at_symbol(*COMPARISON_OPS):
            op = self.advance()
            rhs = self.parse_additive()
            return BinaryOp(op.lexeme, lhs, rhs, op.line, op.column)
        return lhs

    def parse_additive(self) -> Expression:
        lhs = self.parse_multiplicative()
        while self.at_symbol(*ADDITIVE_OPS):
            op = self.advance()
            rhs = self.parse_multiplicative()
            lhs = BinaryOp(op.lexeme, lhs, rhs, op.line, op.column)
        return lhs

    def parse_multiplicative(self) -> Expression:
        lhs = self.parse_unary()
        while self.at_symbol(*MULTIPLICATIVE_OPS):
            op = self.advance()
            rhs = self.parse_unary()
            lhs = BinaryOp(op.lexeme, lhs, rhs, op.line, op.column)
        return lhs

    def parse_unary(self) -> Expression:
        if self.at_symbol("-"):
            op = self.advance()
            operand = self.parse_unary()
            return UnaryOp("-", operand, op.line, op.column)
        return self.parse_power()

    def parse_power(self) -> Expression:
        base = self.parse_primary()
        if self.at_symbol("^"):
            op = self.advance()
            # right-associative; exponent may carry a unary minus
            exponent = self.parse_unary()
            return BinaryOp("^", base, exponent, op.line, op.column)
        return base

    def parse_primary(self) -> Expression:
        tok = self.peek()
        if tok.kind == NUMBER:
            self.advance()
            return Constant(float(tok.lexeme), tok.line, tok.column)
        if tok.kind == SYMBOL and tok.lexeme == "(":
            self.advance()
            inner = self.parse_expression()
            self.expect_symbol(")")
            return inner
        if tok.kind == IDENT:
            nxt = self.tokens[self.pos + 1]
            if nxt.kind == SYMBOL and nxt.lexeme == "(":
                return self.parse_call()
            return self.parse_varref()
        raise self.error("expression")

    def parse_call(self) -> Apply:
        name = self.expect_ident("function name")
        self.expect_symbol("(")
        args: list[Expression] = []
        if not self.at_symbol(")"):
            args.append(self.parse_expression())
            while self.at_symbol(","):
                self.advance()
                args.append(self.parse_expression())
        self.expect_symbol(")")
        return Apply(name.lexeme, tuple(args), name.line, name.column)

    def parse_varref(self) -> VarRef:
        name = self.expect_ident("variable name")
        if not self.at_symbol("["):
            return VarRef(name.lexeme, (), name.line, name.column)
        self.advance()
        indices: list[Index] = [self.parse_index()]
        while self.at_symbol(","):
            self.advance()
            indices.append(self.parse_index())
        self.expect_symbol("]")
        return VarRef(name.lexeme, tuple(indices), name.line, name.column)

    def parse_index(self) -> Index:
        if self.at_symbol(",", "]"):
            return EmptySlice()
        lo = self.parse_expression()
        if self.at_symbol(":"):
            self.advance()
            hi = self.parse_expression()
            return RangeIndex(lo, hi)
        return lo


def parse_model(tokens: list[Token]) -> ModelAST:
    """Parse a token stream (from :func:`bugsmc.lexer.tokenize`) into an AST."""
    return _Parser(tokens).parse_model()


def parse_source(source: str) -> ModelAST:
    """Tokenize and parse model source text."""
    return parse_model(tokenize(source))


# ---------------------------------------------------------------------------
# Pretty-printing (round-trip support)
# ---------------------------------------------------------------------------

_PRECEDENCE = {"==": 1, "!=": 1, "<": 1, "<=": 1, ">": 1, ">=": 1,
               "+": 2, "-": 2, "*": 3, "/": 3, "^": 5}
_UNARY_PRECEDENCE = 4


def _fmt_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def format_expression(expr: Expression, parent_prec: int = 0) -> str:
    if isinstance(expr, Constant):
        return _fmt_number(expr.value)
    if isinstance(expr, VarRef):
        return format_varref(expr)
    if isinstance(expr, Apply):
        return f"{expr.func}({', '.join(format_expression(a) for a in expr.args)})"
    if isinstance(expr, UnaryOp):
        text = f"-{format_expression(expr.operand, _UNARY_PRECEDENCE)}"
        return f"({text})" if parent_prec > _UNARY_PRECEDENCE else text
    if isinstance(expr, BinaryOp):
        prec = _PRECEDENCE[expr.op]
        if expr.op == "^":  # right-associative
            lhs_prec, rhs_prec = prec + 1, prec
        elif prec == 1:  # comparisons do not chain
            lhs_prec, rhs_prec = prec + 1, prec + 1
        else:  # left-associative arithmetic
            lhs_prec, rhs_prec = prec, prec + 1
        text = (f"{format_expression(expr.lhs, lhs_prec)} {expr.op} "
                f"{format_expression(expr.rhs, rhs_prec)}")
        return f"({text})" if parent_prec > prec else text
    raise TypeError(f"not an expression: {expr!r}")


def format_index(index: Index) -> str:
    if isinstance(index, EmptySlice):
        return ""
    if isinstance(index, RangeIndex):
        return f"{format_expression(index.lo)}:{format_expression(index.hi)}"
    return format_expression(index)


def format_varref(ref: VarRef) -> str:
    if not ref.indices:
        return ref.name
    return f"{ref.name}[{','.join(format_index(i) for i in ref.indices)}]"


def _format_statement(stmt: Statement, indent: int, out: list[str]) -> None:
    pad = "  " * indent
    if isinstance(stmt, StochasticRelation):
        text = (f"{pad}{format_varref(stmt.lhs)} ~ {stmt.dist}"
                f"({', '.join(format_expression(p) for p in stmt.params)})")
        if stmt.truncation is not None:
            lo = "" if stmt.truncation.lower is None else format_expression(stmt.truncation.lower)
            hi = "" if stmt.truncation.upper is None else format_expression(stmt.truncation.upper)
            text += f" T({lo},{hi})"
        out.append(text)
    elif isinstance(stmt, DeterministicRelation):
        out.append(f"{pad}{format_varref(stmt.lhs)} <- {format_expression(stmt.rhs)}")
    elif isinstance(stmt, ForLoop):
        out.append(f"{pad}for ({stmt.index} in {format_expression(stmt.lo)}:"
                   f"{format_expression(stmt.hi)}) {{")
        for inner in stmt.body:
            _format_statement(inner, indent + 1, out)
        out.append(f"{pad}}}")
    else:
        raise TypeError(f"not a statement: {stmt!r}")


def format_model(ast: ModelAST) -> str:
    """Render an AST back to model source (reparses to an equal AST)."""
    out = ["model", "{"]
    for stmt in ast.statements:
        _format_statement(stmt, 1, out)
    out.append("}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Validation against a registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    message: str
    line: int
    column: int

    def __str__(self):
        return f"{self.line}:{self.column}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "model valid"
        return "\n".join(str(v) for v in self.violations)


def _walk_expressions(expr: Expression, registry, report: list[Violation]) -> None:
    if isinstance(expr, Constant):
        return
    if isinstance(expr, VarRef):
        for idx in expr.indices:
            if isinstance(idx, RangeIndex):
                _walk_expressions(idx.lo, registry, report)
                _walk_expressions(idx.hi, registry, report)
            elif not isinstance(idx, EmptySlice):
                _walk_expressions(idx, registry, report)
        return
    if isinstance(expr, Apply):
        func = registry.functions.get(expr.func)
        if func is None:
            report.append(Violation(f"unknown function '{expr.func}'",
                                    expr.line, expr.column))
        elif func.n_inputs != len(expr.args):
            report.append(Violation(
                f"function '{expr.func}' expects {func.n_inputs} argument(s), "
                f"got {len(expr.args)}", expr.line, expr.column))
        for arg in expr.args:
            _walk_expressions(arg, registry, report)
        return
    if isinstance(expr, BinaryOp):
        _walk_expressions(expr.lhs, registry, report)
        _walk_expressions(expr.rhs, registry, report)
        return
    if isinstance(expr, UnaryOp):
        _walk_expressions(expr.operand, registry, report)


def _walk_statements(statements, registry, report, loop_vars: tuple[str, ...],
                     lhs_names: set[str]) -> None:
    for stmt in statements:
        if isinstance(stmt, ForLoop):
            if stmt.index in loop_vars:
                report.append(Violation(
                    f"loop index '{stmt.index}' shadows an enclosing loop index",
                    stmt.line, stmt.column))
            if stmt.index in lhs_names:
                report.append(Violation(
                    f"loop index '{stmt.index}' shadows a model variable",
                    stmt.line, stmt.column))
            _walk_expressions(stmt.lo, registry, report)
            _walk_expressions(stmt.hi, registry, report)
            _walk_statements(stmt.body, registry, report,
                             loop_vars + (stmt.index,), lhs_names)
        elif isinstance(stmt, StochasticRelation):
            dist = registry.distributions.get(stmt.dist)
            if dist is None:
                report.append(Violation(f"unknown distribution '{stmt.dist}'",
                                        stmt.line, stmt.column))
            elif dist.n_inputs != len(stmt.params):
                report.append(Violation(
                    f"distribution '{stmt.dist}' expects {dist.n_inputs} "
                    f"parameter(s), got {len(stmt.params)}", stmt.line, stmt.column))
            _walk_expressions(stmt.lhs, registry, report)
            for p in stmt.params:
                _walk_expressions(p, registry, report)
            if stmt.truncation is not None:
                for bound in (stmt.truncation.lower, stmt.truncation.upper):
                    if bound is not None:
                        _walk_expressions(bound, registry, report)
        else:
            _walk_expressions(stmt.lhs, registry, report)
            _walk_expressions(stmt.rhs, registry, report)


def _collect_lhs_names(statements, names: set[str]) -> None:
    for stmt in statements:
        if isinstance(stmt, ForLoop):
            _collect_lhs_names(stmt.body, names)
        else:
            names.add(stmt.lhs.name)


def validate_ast(ast: ModelAST, registry) -> ValidationReport:
    """Check distribution/function names and arities against a registry.

    Reports every violation with its source position; the caller decides
    whether to abort.
    """
    report: list[Violation] = []
    lhs_names: set[str] = set()
    _collect_lhs_names(ast.statements, lhs_names)
    _walk_statements(ast.statements, registry, report, (), lhs_names)
    return ValidationReport(report)
