"""
MTree unificado: construcción desde la CanonicalSum, variante RefMTree,
evaluación, igualdad, caminos raíz-hoja y número de ramas.

Representación de texto: términos prefijos parentizados,
p. ej. '+(*(3,13),*(10,13),-40)'. Operadores: '+', '*', '*-', '+/'.
Hojas: '13' (n), '1/13' (1/n), '-13' (-n), '-1/13' (-1/n); los valores no
decimales se escriben entre paréntesis, '(1/3)'.
"""
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, Iterator, Optional, Sequence, Tuple, Union

from models.errors import MalformedTreeError, ReciprocalOfZeroError
from services.canonicalizer import CanonicalSum, Factor, ReciprocalSum, Term
from services.expr_parser import ORIGIN_RANK, Quantity, QuantityOrigin, format_rational

logger = logging.getLogger(__name__)


class MOp(Enum):
    """Operadores del MTree (todos conmutativos sobre sus hijos)"""
    ADD = "+"
    MUL = "*"
    NEG_MUL = "*-"
    REC_ADD = "+/"


class LeafForm(Enum):
    """Forma de una hoja numérica"""
    N = "n"
    INV = "1/n"
    NEG = "-n"
    NEG_INV = "-1/n"


LEAF_FORMS: Tuple[LeafForm, ...] = (LeafForm.N, LeafForm.INV, LeafForm.NEG, LeafForm.NEG_INV)
OPERATORS: Tuple[MOp, ...] = (MOp.ADD, MOp.MUL, MOp.NEG_MUL, MOp.REC_ADD)
_NEGATIVE_FORMS = (LeafForm.NEG, LeafForm.NEG_INV)
_INVERTED_FORMS = (LeafForm.INV, LeafForm.NEG_INV)


@dataclass(frozen=True)
class MLeaf:
    quantity: Quantity
    form: Optional[LeafForm] = LeafForm.N  # None en un RefMTree


@dataclass(frozen=True)
class MNode:
    op: MOp
    children: Tuple["MTree", ...]


MTree = Union[MLeaf, MNode]


@dataclass(frozen=True)
class MPath:
    ops: Tuple[str, ...]
    leaf_value: Fraction
    leaf_form: Optional[str] = None


class PathMultiset:
    """Multiconjunto de caminos: los duplicados cuentan por separado."""

    def __init__(self, entries: Sequence[MPath] = ()):
        self.counts: Counter = Counter(entries)

    def __len__(self) -> int:
        return sum(self.counts.values())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PathMultiset) and self.counts == other.counts

    def __repr__(self) -> str:
        return f"PathMultiset({dict(self.counts)})"

    def intersection_size(self, other: "PathMultiset") -> int:
        return sum((self.counts & other.counts).values())

    def union_size(self, other: "PathMultiset") -> int:
        return sum((self.counts | other.counts).values())


# ----------------------------------------------------------------------
# Orden de los hijos (coincide con canonical_key sobre los árboles construidos)
# ----------------------------------------------------------------------

def _factor_key(t: MTree) -> Tuple:
    if isinstance(t, MLeaf):
        q = t.quantity
        index = -1 if q.index is None else q.index
        return (0, q.value, ORIGIN_RANK[q.origin], index, t.form in _INVERTED_FORMS)
    if t.op == MOp.REC_ADD:
        return (1, tuple(mtree_key(c) for c in t.children), False)
    if t.op == MOp.ADD:
        return (3, tuple(mtree_key(c) for c in t.children), False)
    return (2, mtree_key(t), False)


def mtree_key(t: MTree) -> Tuple:
    if isinstance(t, MLeaf):
        return ((_factor_key(t),), t.form in _NEGATIVE_FORMS)
    if t.op in (MOp.MUL, MOp.NEG_MUL):
        return (tuple(_factor_key(c) for c in t.children), t.op == MOp.NEG_MUL)
    return ((_factor_key(t),), False)


def make_node(op: MOp, children: Sequence[MTree]) -> MNode:
    """Nodo con los hijos ya ordenados."""
    return MNode(op, tuple(sorted(children, key=mtree_key)))


# ----------------------------------------------------------------------
# Construcción
# ----------------------------------------------------------------------

def _reciprocal_node(rs: ReciprocalSum) -> MNode:
    return make_node(MOp.REC_ADD, [_term_node(t) for t in rs.terms])


def _factor_node(factor: Factor) -> MTree:
    if isinstance(factor.base, ReciprocalSum):
        node = _reciprocal_node(factor.base)
        return make_node(MOp.ADD, node.children) if factor.inverted else node
    return MLeaf(factor.base, LeafForm.INV if factor.inverted else LeafForm.N)


def _term_node(term: Term) -> MTree:
    positive = term.sign > 0
    if len(term.factors) == 1:
        factor = term.factors[0]
        if isinstance(factor.base, Quantity):
            if positive:
                form = LeafForm.INV if factor.inverted else LeafForm.N
            else:
                form = LeafForm.NEG_INV if factor.inverted else LeafForm.NEG
            return MLeaf(factor.base, form)
        node = _factor_node(factor)
        # escape de aridad 1: -1/(b+c)
        return node if positive else MNode(MOp.NEG_MUL, (node,))
    return make_node(MOp.MUL if positive else MOp.NEG_MUL, [_factor_node(f) for f in term.factors])


def build_mtree(c: CanonicalSum) -> MTree:
    if len(c.terms) == 1:
        return _term_node(c.terms[0])
    return make_node(MOp.ADD, [_term_node(t) for t in c.terms])


def to_refmtree(t: MTree) -> MTree:
    """Elimina las formas de las hojas con nodos unarios ×− y +/."""
    if isinstance(t, MNode):
        return make_node(t.op, [to_refmtree(c) for c in t.children])
    leaf = MLeaf(t.quantity, None)
    if t.form in (None, LeafForm.N):
        return leaf
    if t.form == LeafForm.NEG:
        return MNode(MOp.NEG_MUL, (leaf,))
    reciprocal = MNode(MOp.REC_ADD, (leaf,))
    if t.form == LeafForm.INV:
        return reciprocal
    return MNode(MOp.NEG_MUL, (reciprocal,))


# ----------------------------------------------------------------------
# Evaluación, igualdad y métricas estructurales
# ----------------------------------------------------------------------

def eval_mtree(t: MTree) -> Fraction:
    if isinstance(t, MLeaf):
        value = t.quantity.value
        if t.form in _INVERTED_FORMS:
            if value == 0:
                raise ReciprocalOfZeroError("Hoja recíproca con valor cero")
            value = 1 / value
        return -value if t.form in _NEGATIVE_FORMS else value
    values = [eval_mtree(c) for c in t.children]
    if t.op in (MOp.ADD, MOp.REC_ADD):
        total = sum(values, Fraction(0))
        if t.op == MOp.ADD:
            return total
        if total == 0:
            raise ReciprocalOfZeroError("Recíproco de una suma nula")
        return 1 / total
    product = Fraction(1)
    for value in values:
        product *= value
    return product if t.op == MOp.MUL else -product


def _value_signature(t: MTree) -> Tuple:
    if isinstance(t, MLeaf):
        return (0, t.quantity.value, (t.form or LeafForm.N).value)
    return (1, t.op.value, tuple(sorted(_value_signature(c) for c in t.children)))


def mtree_equal(a: MTree, b: MTree) -> bool:
    """Igualdad estructural invariante a permutaciones; la identidad de una hoja es su valor."""
    return _value_signature(a) == _value_signature(b)


def _iter_paths(t: MTree, prefix: Tuple[str, ...]) -> Iterator[MPath]:
    if isinstance(t, MLeaf):
        yield MPath(prefix, t.quantity.value, t.form.value if t.form else None)
        return
    for child in t.children:
        yield from _iter_paths(child, prefix + (t.op.value,))


def paths(t: MTree) -> PathMultiset:
    return PathMultiset(list(_iter_paths(t, ())))


def branch_number(t: MTree) -> int:
    if isinstance(t, MLeaf):
        return 1
    return max([len(t.children)] + [branch_number(c) for c in t.children])


def tree_depth(t: MTree) -> int:
    """Niveles de operadores; una hoja tiene profundidad 0."""
    if isinstance(t, MLeaf):
        return 0
    return 1 + max(tree_depth(c) for c in t.children)


def leaf_count(t: MTree) -> int:
    if isinstance(t, MLeaf):
        return 1
    return sum(leaf_count(c) for c in t.children)


def iter_leaves(t: MTree) -> Iterator[MLeaf]:
    if isinstance(t, MLeaf):
        yield t
    else:
        for child in t.children:
            yield from iter_leaves(child)


def validate_mtree(t: MTree, ref: bool = False) -> None:
    """Comprueba aridades, formas y orden de los hijos; lanza MalformedTreeError."""
    if isinstance(t, MLeaf):
        if ref and t.form is not None:
            raise MalformedTreeError("Un RefMTree no lleva formas en las hojas")
        if not ref and t.form is None:
            raise MalformedTreeError("Hoja sin forma en un MTree")
        return
    if not t.children:
        raise MalformedTreeError(f"Nodo {t.op.value} sin hijos")
    if len(t.children) == 1:
        only = t.children[0]
        if ref:
            legal = t.op in (MOp.NEG_MUL, MOp.REC_ADD)
        else:
            legal = t.op == MOp.NEG_MUL and isinstance(only, MNode) and only.op == MOp.REC_ADD
        if not legal:
            raise MalformedTreeError(f"Nodo {t.op.value} con un solo hijo")
    keys = [mtree_key(c) for c in t.children]
    if keys != sorted(keys):
        raise MalformedTreeError(f"Hijos de {t.op.value} sin ordenar")
    for child in t.children:
        validate_mtree(child, ref)


# ----------------------------------------------------------------------
# Representaciones de texto y de fichero
# ----------------------------------------------------------------------

def _leaf_value_text(value: Fraction) -> str:
    text = format_rational(value)
    return f"({text})" if "/" in text else text


def render_mtree(t: MTree) -> str:
    if isinstance(t, MLeaf):
        text = _leaf_value_text(t.quantity.value)
        prefix = {
            None: "", LeafForm.N: "", LeafForm.INV: "1/",
            LeafForm.NEG: "-", LeafForm.NEG_INV: "-1/",
        }[t.form]
        return prefix + text
    return f"{t.op.value}({','.join(render_mtree(c) for c in t.children)})"


def _origin_tag(q: Quantity) -> str:
    if q.origin == QuantityOrigin.NUMBER:
        return f"N{q.index}"
    return q.origin.value


def _quantity_from_tag(value: Fraction, tag: str) -> Quantity:
    if tag.startswith("N"):
        return Quantity(value, QuantityOrigin.NUMBER, int(tag[1:]))
    return Quantity(value, QuantityOrigin(tag))


def mtree_to_nested(t: MTree) -> Any:
    """Operador → [op, hijos...]; hoja → {"value", "form", "origin"}."""
    if isinstance(t, MLeaf):
        return {
            "value": format_rational(t.quantity.value),
            "form": t.form.value if t.form else None,
            "origin": _origin_tag(t.quantity),
        }
    return [t.op.value] + [mtree_to_nested(c) for c in t.children]


def mtree_from_nested(obj: Any) -> MTree:
    if isinstance(obj, dict):
        try:
            value = Fraction(obj["value"])
            form = LeafForm(obj["form"]) if obj.get("form") else None
            return MLeaf(_quantity_from_tag(value, obj.get("origin", "literal")), form)
        except (KeyError, ValueError) as e:
            raise MalformedTreeError(f"Hoja mal formada: {obj}") from e
    if isinstance(obj, list) and obj:
        try:
            op = MOp(obj[0])
        except ValueError as e:
            raise MalformedTreeError(f"Operador desconocido: {obj[0]}") from e
        return make_node(op, [mtree_from_nested(c) for c in obj[1:]])
    raise MalformedTreeError(f"Nodo mal formado: {obj}")


def operator_counts(t: MTree) -> Dict[str, int]:
    counts: Dict[str, int] = {}

    def visit(node: MTree):
        if isinstance(node, MNode):
            counts[node.op.value] = counts.get(node.op.value, 0) + 1
            for child in node.children:
                visit(child)

    visit(t)
    return counts
