#!/usr/bin/env python3
"""
Pruebas de la forma normal CanonicalSum
"""
from fractions import Fraction

import numpy as np
import pytest

from models.errors import ArboleaError, ExpansionLimitError, ZeroDenominatorError
from services.canonicalizer import (
    CanonicalSum,
    Factor,
    ReciprocalSum,
    Term,
    canonical_key,
    canonicalize,
    collect_number_map,
    fold_canonical,
    print_canonical,
    render_canonical,
)
from services.expr_parser import BinOp, Leaf, Quantity, QuantityOrigin, eval_exact, parse


def q(value) -> Quantity:
    return Quantity(Fraction(value))


def term(sign, *values) -> Term:
    return Term(sign, tuple(Factor(q(v)) for v in values))


def test_fig1_expression_expands_into_three_terms():
    c = canonicalize(parse("13*(10+3)-40"))
    assert c == CanonicalSum((term(1, 3, 13), term(1, 10, 13), term(-1, 40)))
    assert render_canonical(c) == "+[3*13] +[10*13] -[40]"


def test_single_literal():
    assert canonicalize(parse("7")) == CanonicalSum((term(1, 7),))


def test_division_by_compound_becomes_reciprocal_sum():
    c = canonicalize(parse("2/(3+4)"))
    rs = ReciprocalSum((term(1, 3), term(1, 4)))
    assert c == CanonicalSum((Term(1, (Factor(q(2)), Factor(rs))),))
    assert fold_canonical(c) == Fraction(2, 7)
    assert render_canonical(c) == "+[2*(1/{+[3] +[4]})]"


def test_division_by_atom_inverts_the_factor():
    c = canonicalize(parse("13/4"))
    assert c == CanonicalSum((Term(1, (Factor(q(4), inverted=True), Factor(q(13)))),))
    assert render_canonical(c) == "+[1/4*13]"


def test_power_becomes_repeated_product():
    assert canonicalize(parse("3^2")) == CanonicalSum((term(1, 3, 3),))
    inverse = canonicalize(parse("2^-2"))
    assert inverse.terms[0].factors == (Factor(q(2), True), Factor(q(2), True))
    assert canonicalize(parse("5^0")) == CanonicalSum((term(1, 1),))


def test_like_terms_are_not_combined():
    c = canonicalize(parse("2*3+3*2"))
    assert c == CanonicalSum((term(1, 2, 3), term(1, 2, 3)))


def test_sign_is_carried_only_by_terms():
    c = canonicalize(parse("-(-2)*-(3)"))
    assert c == CanonicalSum((term(-1, 2, 3),))


def test_literal_one_only_survives_alone():
    assert canonicalize(parse("5/8")) == canonicalize(parse("5*(1/8)"))
    assert canonicalize(parse("1")) == CanonicalSum((term(1, 1),))
    assert canonicalize(parse("1+2")) == CanonicalSum((term(1, 1), term(1, 2)))


def test_reciprocal_sum_starts_with_a_positive_term():
    a = canonicalize(parse("1/(2-5)"))
    b = canonicalize(parse("-(1/(5-2))"))
    assert a == b
    (t,) = a.terms
    assert t.sign == 1
    assert t.factors[0].base.terms[0].sign == 1
    assert fold_canonical(a) == Fraction(-1, 3)


def test_zero_denominator_at_atomic_factor():
    with pytest.raises(ZeroDenominatorError):
        canonicalize(parse("5/0"))


def test_zero_compound_denominator_without_placeholders():
    with pytest.raises(ZeroDenominatorError):
        canonicalize(parse("5/(2-2)"))


def test_compound_denominator_with_placeholders_is_accepted():
    c = canonicalize(parse("5/(N0-N1)", [2, 2]))
    assert len(c.terms) == 1


def test_expansion_limit():
    wide = "*".join(["(1+2+3+4)"] * 7)
    with pytest.raises(ExpansionLimitError):
        canonicalize(parse(wide))


class TestCanonicalKey:
    def test_factor_values_order_terms(self):
        assert canonical_key(term(1, 3, 13)) < canonical_key(term(1, 10, 13))

    def test_positive_sign_first(self):
        assert canonical_key(term(1, 40)) < canonical_key(term(-1, 40))

    def test_quantities_before_reciprocals(self):
        rs = Factor(ReciprocalSum((term(1, 1), term(1, 2))))
        assert canonical_key(Factor(q(1000))) < canonical_key(rs)

    def test_reflexive(self):
        t = canonicalize(parse("2/(3+4)")).terms[0]
        assert canonical_key(t) == canonical_key(t)


@pytest.mark.parametrize(
    "text,number_map",
    [
        ("13*(10+3)-40", None),
        ("N0/(N1+N2)-N3*N0", [6, 1, 2, 4]),
        ("(2+3)*(4-1)/(7+N0)", [5]),
        ("-(1/(2-5))*3^2", None),
    ],
)
def test_printed_form_canonicalizes_to_itself(text, number_map):
    c = canonicalize(parse(text, number_map))
    again = canonicalize(parse(print_canonical(c), collect_number_map(c)))
    assert again == c


@pytest.mark.parametrize(
    "text",
    ["13*(10+3)-40", "2/(3+4)", "(1+2)*(3+4)/(5-6)", "-(2-3)^3", "1/(1/(2+3))", "4/(2/(3+4))"],
)
def test_value_preservation(text):
    expr = parse(text)
    assert fold_canonical(canonicalize(expr)) == eval_exact(expr)


class TestRandomExpressions:
    """Formas canónicas de expresiones aleatorias con cantidades del enunciado y literales"""

    NUMBERS = [Fraction(n) for n in (3, 7, 12, 5, 7, 20)]

    def random_expr(self, rng, depth):
        if depth == 0 or rng.random() < 0.25:
            if rng.random() < 0.5:
                index = int(rng.integers(len(self.NUMBERS)))
                return Leaf(Quantity(self.NUMBERS[index], QuantityOrigin.NUMBER, index))
            return Leaf(Quantity(Fraction(int(rng.integers(2, 30)))))
        op = "+-*/"[int(rng.integers(4))]
        return BinOp(op, self.random_expr(rng, depth - 1), self.random_expr(rng, depth - 1))

    def samples(self, seed, count):
        rng = np.random.default_rng(seed)
        produced = 0
        while produced < count:
            expr = self.random_expr(rng, 3)
            try:
                value = eval_exact(expr)
            except ArboleaError:
                continue
            produced += 1
            yield expr, value

    def check(self, seed, count):
        for expr, value in self.samples(seed, count):
            c = canonicalize(expr)
            assert fold_canonical(c) == value, expr
            printed = print_canonical(c)
            assert canonicalize(parse(printed, collect_number_map(c))) == c, printed

    def test_printed_form_is_stable(self):
        self.check(5, 1000)

    @pytest.mark.slow
    def test_printed_form_is_stable_at_scale(self):
        self.check(55, 10000)
