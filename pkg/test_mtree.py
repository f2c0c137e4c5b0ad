#!/usr/bin/env python3
"""
Pruebas del MTree unificado: construcción, RefMTree, evaluación, caminos y ramas
"""
from fractions import Fraction

import numpy as np
import pytest

from conftest import mtree_of
from models.errors import ArboleaError, MalformedTreeError, ReciprocalOfZeroError
from services.canonicalizer import canonicalize
from services.expr_parser import BinOp, Leaf, Negate, Quantity, eval_exact
from services.mtree_service import (
    LeafForm,
    MLeaf,
    MNode,
    MOp,
    MPath,
    PathMultiset,
    branch_number,
    build_mtree,
    eval_mtree,
    leaf_count,
    make_node,
    mtree_equal,
    mtree_from_nested,
    mtree_to_nested,
    paths,
    render_mtree,
    to_refmtree,
    tree_depth,
    validate_mtree,
)


def leaf(value, form=LeafForm.N) -> MLeaf:
    return MLeaf(Quantity(Fraction(value)), form)


FIG1 = "13*(10+3)-40"


class TestBuild:
    def test_fig1_tree(self):
        tree = mtree_of(FIG1)
        assert render_mtree(tree) == "+(*(3,13),*(10,13),-40)"
        assert tree.op == MOp.ADD
        assert tree.children[2] == leaf(40, LeafForm.NEG)

    def test_bare_number_is_a_leaf(self):
        assert mtree_of("5") == leaf(5)
        assert render_mtree(mtree_of("5")) == "5"

    def test_negated_product(self):
        tree = mtree_of("-(2*3)")
        assert render_mtree(tree) == "*-(2,3)"
        assert eval_mtree(tree) == -6

    def test_leaf_forms(self):
        assert render_mtree(mtree_of("1/4+2")) == "+(2,1/4)"
        assert render_mtree(mtree_of("-(1/4)-2")) == "+(-2,-1/4)"

    def test_reciprocal_of_sum(self):
        tree = mtree_of("1/(2+3)")
        assert render_mtree(tree) == "+/(2,3)"
        assert eval_mtree(tree) == Fraction(1, 5)

    def test_negative_reciprocal_uses_the_arity_one_escape(self):
        tree = mtree_of("-(1/(2+3))")
        assert render_mtree(tree) == "*-(+/(2,3))"
        assert eval_mtree(tree) == Fraction(-1, 5)
        validate_mtree(tree)

    def test_fraction_valued_leaves_render_in_parentheses(self):
        tree = mtree_of("N0*2", [Fraction(1, 3)])
        assert render_mtree(tree) == "*((1/3),2)"


class TestRefMTree:
    def test_fig1(self):
        assert render_mtree(to_refmtree(mtree_of(FIG1))) == "+(*(3,13),*(10,13),*-(40))"

    def test_plain_leaf(self):
        assert to_refmtree(leaf(5)) == MLeaf(Quantity(Fraction(5)), None)

    def test_negative_inverse_leaf(self):
        ref = to_refmtree(leaf(2, LeafForm.NEG_INV))
        assert render_mtree(ref) == "*-(+/(2))"
        assert eval_mtree(ref) == Fraction(-1, 2) == eval_mtree(leaf(2, LeafForm.NEG_INV))
        validate_mtree(ref, ref=True)

    def test_single_operand_negation(self):
        assert eval_mtree(MNode(MOp.NEG_MUL, (MLeaf(Quantity(Fraction(7)), None),))) == -7


class TestEval:
    def test_fig1_value(self):
        assert eval_mtree(mtree_of(FIG1)) == 129

    def test_reciprocal_of_zero(self):
        with pytest.raises(ReciprocalOfZeroError):
            eval_mtree(make_node(MOp.REC_ADD, [leaf(2), leaf(2, LeafForm.NEG)]))
        with pytest.raises(ReciprocalOfZeroError):
            eval_mtree(leaf(0, LeafForm.INV))


class TestPaths:
    def test_fig1_paths(self):
        found = paths(mtree_of(FIG1))
        assert len(found) == 5
        assert found.counts[MPath(("+", "*"), Fraction(13), "n")] == 2
        assert found.counts[MPath(("+",), Fraction(40), "-n")] == 1

    def test_single_leaf(self):
        assert paths(leaf(5)) == PathMultiset([MPath((), Fraction(5), "n")])

    def test_duplicates_preserved(self):
        found = paths(mtree_of("2*2"))
        assert found.counts[MPath(("*",), Fraction(2), "n")] == 2

    def test_path_count_equals_leaf_count(self):
        tree = mtree_of("(1+2)*(3+4)/(5-6)+7")
        assert len(paths(tree)) == leaf_count(tree)


class TestEquality:
    def test_distributed_forms_are_equal(self):
        assert mtree_equal(mtree_of(FIG1), mtree_of("13*10+13*3-40"))

    def test_reflexive(self):
        tree = mtree_of("2/(3+4)-5")
        assert mtree_equal(tree, tree)

    def test_wrong_sign_is_different(self):
        assert not mtree_equal(mtree_of("13*(10+3)+40"), mtree_of(FIG1))

    def test_origin_is_not_part_of_identity(self):
        assert mtree_equal(mtree_of("N0*N1", [3, 4]), mtree_of("3*4"))


class TestBranchNumber:
    def test_fig1(self):
        assert branch_number(mtree_of(FIG1)) == 3

    def test_leaf(self):
        assert branch_number(leaf(5)) == 1

    def test_nested_reciprocal(self):
        assert branch_number(mtree_of("2/(1+2+3+4)")) == 4

    def test_depth(self):
        assert tree_depth(leaf(5)) == 0
        assert tree_depth(mtree_of(FIG1)) == 2


class TestValidation:
    def test_unsorted_children(self):
        with pytest.raises(MalformedTreeError):
            validate_mtree(MNode(MOp.ADD, (leaf(5), leaf(2))))

    def test_unary_add_is_illegal(self):
        with pytest.raises(MalformedTreeError):
            validate_mtree(MNode(MOp.ADD, (leaf(5),)))

    def test_ref_leaf_must_not_carry_a_form(self):
        with pytest.raises(MalformedTreeError):
            validate_mtree(leaf(5), ref=True)


def test_nested_file_rendering():
    tree = mtree_of("N0*(N1+N2)-N3", [13, 10, 3, 40])
    nested = mtree_to_nested(tree)
    assert nested[0] == "+"
    assert nested[-1] == {"value": "40", "form": "-n", "origin": "N3"}
    assert mtree_from_nested(nested) == tree


class TestUnification:
    """Reescrituras aleatorias que conservan el valor deben dar el mismo MTree"""

    @staticmethod
    def random_expr(rng, depth):
        if depth == 0 or rng.random() < 0.25:
            return Leaf(Quantity(Fraction(int(rng.integers(2, 30)))))
        op = "+-*/"[int(rng.integers(4))]
        return BinOp(op, TestUnification.random_expr(rng, depth - 1), TestUnification.random_expr(rng, depth - 1))

    @staticmethod
    def rewrite(rng, e):
        if isinstance(e, Leaf):
            return Negate(Negate(e)) if rng.random() < 0.1 else e
        if isinstance(e, Negate):
            return Negate(TestUnification.rewrite(rng, e.child))
        left, right = TestUnification.rewrite(rng, e.left), TestUnification.rewrite(rng, e.right)
        choice = rng.random()
        if e.op in "+*" and choice < 0.5:
            left, right = right, left
        if e.op == "-" and choice < 0.5:
            return BinOp("+", left, Negate(right))
        if e.op == "/" and choice < 0.5:
            return BinOp("*", left, BinOp("/", Leaf(Quantity(Fraction(1))), right))
        if e.op == "/" and isinstance(right, BinOp) and right.op == "/":
            # a/(b/c) = a*c/b
            return BinOp("/", BinOp("*", left, right.right), right.left)
        if e.op == "*" and isinstance(right, BinOp) and right.op in "+-" and choice > 0.5:
            return BinOp(right.op, BinOp("*", left, right.left), BinOp("*", left, right.right))
        if e.op in "+*" and isinstance(left, BinOp) and left.op == e.op and choice > 0.5:
            return BinOp(e.op, left.left, BinOp(e.op, left.right, right))
        return BinOp(e.op, left, right)

    def sample(self, rng):
        while True:
            expr = self.random_expr(rng, 3)
            try:
                eval_exact(expr)
                return expr
            except ArboleaError:
                continue

    def check_rewrites(self, seed, count):
        rng = np.random.default_rng(seed)
        for _ in range(count):
            expr = self.sample(rng)
            variant = self.rewrite(rng, expr)
            a, b = build_mtree(canonicalize(expr)), build_mtree(canonicalize(variant))
            assert mtree_equal(a, b), (expr, variant)
            assert paths(a) == paths(b)

    def check_values(self, seed, count):
        rng = np.random.default_rng(seed)
        for _ in range(count):
            expr = self.sample(rng)
            tree = build_mtree(canonicalize(expr))
            assert eval_mtree(tree) == eval_exact(expr)
            assert eval_mtree(to_refmtree(tree)) == eval_exact(expr)
            validate_mtree(tree)
            validate_mtree(to_refmtree(tree), ref=True)

    @pytest.mark.parametrize(
        "text,rewritten",
        [
            ("13/((25-11)/(8*26))", "13*(8*26)/(25-11)"),
            ("((14-3)*6)/((8+7)/(29/2))", "(14-3)*6*(29/2)/(8+7)"),
            ("5/(3*(4+7))", "5/(3*4+3*7)"),
            ("1/(2/3+2/5)", "3*5/(2*(5+3))"),
        ],
    )
    def test_division_by_a_quotient(self, text, rewritten):
        assert mtree_equal(mtree_of(text), mtree_of(rewritten))
        assert paths(mtree_of(text)) == paths(mtree_of(rewritten))

    def test_rewrites_are_unified(self):
        self.check_rewrites(2024, 1000)

    def test_value_preservation(self):
        self.check_values(99, 1000)

    @pytest.mark.slow
    def test_rewrites_are_unified_at_scale(self):
        self.check_rewrites(31, 10000)

    @pytest.mark.slow
    def test_value_preservation_at_scale(self):
        self.check_values(32, 10000)

    def test_value_distinct_controls_differ(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            expr = self.sample(rng)
            control = BinOp("+", expr, Leaf(Quantity(Fraction(1))))
            assert not mtree_equal(build_mtree(canonicalize(expr)), build_mtree(canonicalize(control)))
