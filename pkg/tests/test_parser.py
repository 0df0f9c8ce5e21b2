import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bugsmc import bundles
from bugsmc.lexer import LexError, tokenize
from bugsmc.parser import (Apply, BinaryOp, Constant, DeterministicRelation,
                           EmptySlice, ForLoop, ParseError, RangeIndex,
                           StochasticRelation, UnaryOp, VarRef, format_model,
                           parse_model, parse_source, validate_ast)
from bugsmc.registry import default_registry

CORPUS = ["volatility_switching", "volatility_switching_param",
          "kinetic_lotka_volterra", "lgssm", "hmm2", "normal_mean"]


def test_volatility_statement_shape():
    ast = parse_source(bundles.model_source("volatility_switching"))
    assert len(ast.statements) == 5
    kinds = [type(s) for s in ast.statements]
    assert kinds == [StochasticRelation, DeterministicRelation,
                     StochasticRelation, StochasticRelation, ForLoop]
    loop = ast.statements[-1]
    assert loop.index == "t"
    assert len(loop.body) == 4
    assert loop.lo == Constant(2.0)
    assert loop.hi == VarRef("t_max")


def test_param_model_statement_count():
    ast = parse_source(bundles.model_source("volatility_switching_param"))
    assert len(ast.statements) == 17          # 16 relations then the loop
    assert isinstance(ast.statements[-1], ForLoop)
    gamma1 = ast.statements[0]
    assert gamma1.dist == "dnorm"
    assert gamma1.params[1] == BinaryOp("/", Constant(1.0), Constant(100.0))


def test_kinetic_empty_slice_lhs():
    ast = parse_source(bundles.model_source("kinetic_lotka_volterra"))
    first = ast.statements[0]
    assert first.lhs == VarRef("x", (EmptySlice(), Constant(1.0)))
    assert first.dist == "LV"
    assert len(first.params) == 5


def test_truncation_forms():
    ast = parse_source("model { a ~ dnorm(0,1) T(0,)  b ~ dnorm(0,1) T(,2) "
                       " c ~ dnorm(0,1) T(-1,1) }")
    a, b, c = ast.statements
    assert a.truncation.lower == Constant(0.0) and a.truncation.upper is None
    assert b.truncation.lower is None and b.truncation.upper == Constant(2.0)
    assert c.truncation.lower == UnaryOp("-", Constant(1.0))


def test_empty_truncation_rejected():
    with pytest.raises(ParseError):
        parse_source("model { a ~ dnorm(0,1) T(,) }")


def test_precedence_power_over_unary_minus():
    ast = parse_source("model { a <- -x^2 }")
    rhs = ast.statements[0].rhs
    assert isinstance(rhs, UnaryOp)
    assert isinstance(rhs.operand, BinaryOp) and rhs.operand.op == "^"


def test_power_right_associative():
    rhs = parse_source("model { a <- 2^3^2 }").statements[0].rhs
    assert rhs.op == "^"
    assert isinstance(rhs.rhs, BinaryOp) and rhs.rhs.op == "^"
    assert rhs.lhs == Constant(2.0)


def test_comparison_binds_loosest():
    rhs = parse_source("model { a <- b + 1 == c * 2 }").statements[0].rhs
    assert rhs.op == "=="
    assert rhs.lhs.op == "+" and rhs.rhs.op == "*"


def test_index_ranges_and_slices():
    rhs = parse_source("model { a <- f(m[1:3, ], v[k]) }").statements[0].rhs
    m_ref, v_ref = rhs.args
    assert m_ref.indices[0] == RangeIndex(Constant(1.0), Constant(3.0))
    assert m_ref.indices[1] == EmptySlice()
    assert v_ref.indices == (VarRef("k"),)


def test_truncated_input_is_positioned_error():
    with pytest.raises(ParseError) as err:
        parse_source("model { x ~ dnorm(0,1) y <- }")
    assert err.value.expected == "expression"
    assert err.value.line == 1


def test_missing_model_keyword():
    with pytest.raises(ParseError):
        parse_source("{ x ~ dnorm(0,1) }")


def test_trailing_junk_rejected():
    with pytest.raises(ParseError):
        parse_source("model { x ~ dnorm(0,1) } extra")


@pytest.mark.parametrize("name", CORPUS)
def test_round_trip_corpus(name):
    ast = parse_source(bundles.model_source(name))
    assert parse_source(format_model(ast)) == ast


def test_round_trip_expression_zoo():
    source = """model {
      a <- -(x + y) * 2 ^ -3 - (b - c) / (d / e)
      q <- (u == 1) + (v != 2) - (w <= 3) * (r >= 4)
      s ~ dnorm(exp(-x[1]), 1/sigma^2) T(-500, 500)
      z <- ifelse(c[1] == 1, pi[1,], pi[2,])
    }"""
    ast = parse_source(source)
    assert parse_source(format_model(ast)) == ast


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=80))
def test_parsing_is_total(text):
    # any byte string either parses or raises a positioned error
    try:
        parse_source(text)
    except (LexError, ParseError) as exc:
        assert exc.line >= 1 and exc.column >= 1


@settings(max_examples=150, deadline=None)
@given(st.text(alphabet="model{}()[]~<-+*/^:,.0123456789abctT \n", max_size=60))
def test_parsing_is_total_modelish(text):
    try:
        parse_source(text)
    except (LexError, ParseError) as exc:
        assert exc.line >= 1 and exc.column >= 1


# -- validation --------------------------------------------------------------

def test_validate_builtin_ok():
    report = validate_ast(parse_source("model { x ~ dnorm(0, 1) }"),
                          default_registry())
    assert report.ok


def test_validate_custom_distribution_arity():
    registry = default_registry()
    bundles.register_lotka_volterra(registry)
    ast = parse_source(bundles.model_source("kinetic_lotka_volterra"))
    assert validate_ast(ast, registry).ok
    assert not validate_ast(ast, default_registry()).ok


def test_validate_unknown_distribution_positioned():
    report = validate_ast(parse_source("model {\n  x ~ dfoo(1)\n}"),
                          default_registry())
    assert not report.ok
    v = report.violations[0]
    assert "dfoo" in v.message and v.line == 2


def test_validate_bad_arity_collects_all():
    source = "model { x ~ dnorm(1)  y <- exp(1, 2)  z ~ dbar(1) }"
    report = validate_ast(parse_source(source), default_registry())
    assert len(report.violations) == 3


def test_validate_loop_shadowing():
    source = "model { t ~ dnorm(0, 1)  for (t in 1:3) { y[t] ~ dnorm(0, 1) } }"
    report = validate_ast(parse_source(source), default_registry())
    assert any("shadows" in v.message for v in report.violations)


def test_tokens_round_trip_through_parse_model():
    toks = tokenize("model { x ~ dnorm(0, 1) }")
    ast = parse_model(toks)
    assert isinstance(ast.statements[0], StochasticRelation)
    assert isinstance(ast.statements[0].params[0], Constant)
    assert isinstance(ast.statements[0].params[1], Constant)
    assert ast.statements[0].params == (Constant(0.0), Constant(1.0))
    assert isinstance(ast.statements[0].lhs, VarRef)
    assert ast.statements[0].dist == "dnorm"
    assert isinstance(ast.statements[0], StochasticRelation)
    assert not isinstance(ast.statements[0], Apply)
