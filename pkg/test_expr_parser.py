#!/usr/bin/env python3
"""
Pruebas del analizador de expresiones y de la evaluación exacta
"""
from fractions import Fraction

import numpy as np
import pytest

from models.errors import (
    DivisionByZeroError,
    EmptyExpressionError,
    ExponentError,
    ExprSyntaxError,
    UnknownPlaceholderError,
)
from services.expr_parser import (
    BinOp,
    Leaf,
    Negate,
    Quantity,
    QuantityOrigin,
    eval_exact,
    format_rational,
    parse,
    print_expr,
    relabel_quantities,
    tokenize,
)


def lit(value) -> Leaf:
    return Leaf(Quantity(Fraction(value)))


def test_precedence_and_left_associativity():
    expr = parse("13*10+13*3-40")
    assert expr == BinOp(
        "-",
        BinOp("+", BinOp("*", lit(13), lit(10)), BinOp("*", lit(13), lit(3))),
        lit(40),
    )


def test_single_literal():
    assert parse("5") == lit(5)


def test_placeholders_resolve_through_number_map():
    expr = parse("N0*(N1+N2)", [13, 10, 3])
    number = lambda i, v: Leaf(Quantity(Fraction(v), QuantityOrigin.NUMBER, i))  # noqa: E731
    assert expr == BinOp("*", number(0, 13), BinOp("+", number(1, 10), number(2, 3)))


@pytest.mark.parametrize(
    "text,expected",
    [
        ("13*(10+3)-40", Fraction(129)),
        ("1/(2+3)", Fraction(1, 5)),
        ("0*7", Fraction(0)),
        ("-2^2", Fraction(-4)),
        ("2^-1", Fraction(1, 2)),
        ("2^3^2", Fraction(512)),
        ("30%", Fraction(3, 10)),
        ("8-3-2", Fraction(3)),
        ("12/3/2", Fraction(2)),
        ("2*-3", Fraction(-6)),
        ("1.25+0.75", Fraction(2)),
    ],
)
def test_eval_exact(text, expected):
    assert eval_exact(parse(text)) == expected


def test_unicode_operator_aliases():
    assert eval_exact(parse("6×2÷4−1")) == Fraction(2)


@pytest.mark.parametrize("text", ["", "   ", None])
def test_empty_input(text):
    with pytest.raises(EmptyExpressionError):
        parse(text)


def test_syntax_error_reports_position():
    with pytest.raises(ExprSyntaxError) as info:
        parse("13*(10+3")
    assert info.value.position == 8

    with pytest.raises(ExprSyntaxError) as info:
        parse("2 $ 3")
    assert info.value.position == 2


def test_unknown_placeholder():
    with pytest.raises(UnknownPlaceholderError) as info:
        parse("N0+N3", [1, 2])
    assert info.value.index == 3

    with pytest.raises(UnknownPlaceholderError):
        parse("N0")


@pytest.mark.parametrize("text", ["1/0", "5/(2-2)", "0^-1"])
def test_division_by_zero(text):
    with pytest.raises(DivisionByZeroError):
        eval_exact(parse(text))


@pytest.mark.parametrize("text", ["2^0.5", "2^13", "2^(1/2)"])
def test_exponent_errors(text):
    with pytest.raises(ExponentError):
        eval_exact(parse(text))


def test_tokenize_keeps_percent_and_placeholders():
    kinds = [(t.kind, t.text) for t in tokenize("N1*30%")]
    assert kinds == [("placeholder", "N1"), ("op", "*"), ("number", "30%"), ("end", "")]


def test_print_expr_is_fully_parenthesized():
    assert print_expr(parse("-2^2+N0", [7])) == "((-(2^2))+N0)"


def test_format_rational():
    assert format_rational(Fraction(129)) == "129"
    assert format_rational(Fraction(-5, 4)) == "-1.25"
    assert format_rational(Fraction(1, 20)) == "0.05"
    assert format_rational(Fraction(1, 3)) == "1/3"


def test_relabel_quantities_first_occurrence_wins():
    expr, unmapped = relabel_quantities(parse("5+5*3.14+7"), [5, 2, 5], [Fraction("3.14")])
    origins = []

    def walk(node):
        if isinstance(node, Leaf):
            origins.append((node.quantity.origin, node.quantity.index))
        elif isinstance(node, Negate):
            walk(node.child)
        else:
            walk(node.left)
            walk(node.right)

    walk(expr)
    assert origins == [
        (QuantityOrigin.NUMBER, 0),
        (QuantityOrigin.NUMBER, 0),
        (QuantityOrigin.CONSTANT, None),
        (QuantityOrigin.LITERAL, None),
    ]
    assert unmapped == [Fraction(7)]


class TestProperties:
    """Propiedades sobre expresiones aleatorias con semilla fija"""

    @staticmethod
    def random_expr(rng, depth):
        if depth == 0 or rng.random() < 0.3:
            return lit(int(rng.integers(1, 20)))
        kind = int(rng.integers(6))
        if kind == 5:
            return Negate(TestProperties.random_expr(rng, depth - 1))
        op = "+-*/^"[kind]
        left = TestProperties.random_expr(rng, depth - 1)
        if op == "^":
            return BinOp("^", left, lit(int(rng.integers(0, 3))))
        return BinOp(op, left, TestProperties.random_expr(rng, depth - 1))

    def test_print_parse_round_trip(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            expr = self.random_expr(rng, 4)
            assert parse(print_expr(expr)) == expr

    def test_percent_law(self):
        rng = np.random.default_rng(5)
        for n in rng.integers(0, 10_000, size=200):
            assert eval_exact(parse(f"{n}%")) == eval_exact(parse(str(n))) / 100
