"""
Forma normal CanonicalSum: suma de términos con signo, cada uno producto de
factores atómicos (cantidades, quizá invertidas, o recíprocos de sumas).

Sustituye al paso simplify/expand de un sistema de álgebra: se distribuyen
los productos, las restas pasan a sumandos negados y las divisiones a
factores invertidos. No se combinan términos semejantes ni se pliegan
constantes.
"""
import logging
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Sequence, Tuple, Union

from models.errors import DivisionByZeroError, ExpansionLimitError, ZeroDenominatorError
from services.expr_parser import (
    ORIGIN_RANK,
    Expr,
    Leaf,
    Negate,
    Quantity,
    QuantityOrigin,
    format_quantity,
    format_rational,
    integer_exponent,
)

logger = logging.getLogger(__name__)

MAX_TERMS = 4096


@dataclass(frozen=True)
class Factor:
    base: Union[Quantity, "ReciprocalSum"]
    inverted: bool = False


@dataclass(frozen=True)
class ReciprocalSum:
    terms: Tuple["Term", ...]


@dataclass(frozen=True)
class Term:
    sign: int
    factors: Tuple[Factor, ...]


@dataclass(frozen=True)
class CanonicalSum:
    terms: Tuple[Term, ...]


# ----------------------------------------------------------------------
# Orden total
# ----------------------------------------------------------------------

def quantity_key(quantity: Quantity, inverted: bool = False) -> Tuple:
    index = -1 if quantity.index is None else quantity.index
    return (0, quantity.value, ORIGIN_RANK[quantity.origin], index, inverted)


def canonical_key(node: Union[Term, Factor, ReciprocalSum]) -> Tuple:
    """
    Cantidades antes que recíprocos; cantidades por (valor, origen, invertida);
    recíprocos lexicográficamente por las claves de sus términos; términos por
    (lista de claves de factores, signo) con el positivo primero.
    """
    if isinstance(node, Factor):
        if isinstance(node.base, Quantity):
            return quantity_key(node.base, node.inverted)
        return (1, canonical_key(node.base), node.inverted)
    if isinstance(node, ReciprocalSum):
        return tuple(canonical_key(term) for term in node.terms)
    return (tuple(canonical_key(f) for f in node.factors), 0 if node.sign > 0 else 1)


def _is_unit(factor: Factor) -> bool:
    return isinstance(factor.base, Quantity) and factor.base.value == 1


def _sorted_term(term: Term) -> Term:
    # un factor 1, venga de donde venga, solo sobrevive como único factor del término
    factors = tuple(f for f in term.factors if not _is_unit(f))
    if not factors:
        units = sorted(term.factors, key=canonical_key)
        factors = (Factor(units[0].base),) if units else (Factor(Quantity(Fraction(1))),)
    return Term(term.sign, tuple(sorted(factors, key=canonical_key)))


def _sorted_terms(terms: Sequence[Term]) -> Tuple[Term, ...]:
    return tuple(sorted((_sorted_term(t) for t in terms), key=canonical_key))


# ----------------------------------------------------------------------
# Expansión
# ----------------------------------------------------------------------

def _check_size(terms: List[Term]) -> List[Term]:
    if len(terms) > MAX_TERMS:
        raise ExpansionLimitError(f"La expansión supera {MAX_TERMS} términos")
    return terms


def _negate(terms: List[Term]) -> List[Term]:
    return [Term(-t.sign, t.factors) for t in terms]


def _multiply(left: List[Term], right: List[Term]) -> List[Term]:
    if len(left) * len(right) > MAX_TERMS:
        raise ExpansionLimitError(f"La expansión supera {MAX_TERMS} términos")
    return [Term(a.sign * b.sign, a.factors + b.factors) for a in left for b in right]


def _is_placeholder_free(terms: Sequence[Term]) -> bool:
    for term in terms:
        for factor in term.factors:
            if isinstance(factor.base, ReciprocalSum):
                if not _is_placeholder_free(factor.base.terms):
                    return False
            elif factor.base.origin == QuantityOrigin.NUMBER:
                return False
    return True


def _reciprocal(terms: List[Term]) -> Tuple[int, ReciprocalSum]:
    """Recíproco de una suma compuesta, con el término menor en positivo."""
    ordered = _sorted_terms(terms)
    sign = 1
    if ordered[0].sign < 0:
        sign = -1
        ordered = _sorted_terms(_negate(list(ordered)))
    if _is_placeholder_free(ordered) and _fold_terms(ordered) == 0:
        raise ZeroDenominatorError("El denominador compuesto vale cero")
    return sign, ReciprocalSum(ordered)


def _is_denominator(factor: Factor) -> bool:
    return factor.inverted or isinstance(factor.base, ReciprocalSum)


def _without(factors: Sequence[Factor], removed: Counter) -> Tuple[Factor, ...]:
    pending = Counter(removed)
    kept = []
    for factor in factors:
        if pending[factor] > 0:
            pending[factor] -= 1
        else:
            kept.append(factor)
    return tuple(kept)


def _times_denominator(terms: List[Term], factor: Factor) -> List[Term]:
    """Multiplica por lo que el factor divide: el átomo o la suma del recíproco."""
    if isinstance(factor.base, ReciprocalSum):
        return _multiply(terms, list(factor.base.terms))
    return [Term(t.sign, t.factors + (Factor(factor.base),)) for t in terms]


def _clear_denominators(terms: List[Term]) -> Tuple[List[Term], Counter]:
    """S * D, con D el mínimo común de los denominadores de los términos de S."""
    needed: Counter = Counter()
    for t in terms:
        needed |= Counter(f for f in t.factors if _is_denominator(f))
    if not needed:
        return terms, needed
    cleared: List[Term] = []
    for t in terms:
        own = Counter(f for f in t.factors if _is_denominator(f))
        part = [Term(t.sign, _without(t.factors, own))]
        for factor in (needed - own).elements():
            part = _times_denominator(part, factor)
        cleared.extend(part)
    return _check_size(cleared), needed


def _invert_sum(terms: List[Term]) -> List[Term]:
    """
    1/S con S reducida antes de formar el ReciprocalSum.

    La suma se multiplica por sus denominadores y se le quitan los factores
    comunes a todos sus términos; ambos pasan fuera del recíproco. Así
    a/((b-c)/d) y a*d/(b-c) comparten forma, igual que 1/(c*d+c*e) y
    1/(c*(d+e)).
    """
    cleared, denominators = _clear_denominators(terms)
    common = Counter(cleared[0].factors)
    for t in cleared[1:]:
        common &= Counter(t.factors)
    for factor in common:
        if isinstance(factor.base, Quantity) and factor.base.value == 0:
            raise ZeroDenominatorError("El denominador tiene un factor común nulo")
    reduced = [Term(t.sign, _without(t.factors, common)) for t in cleared]

    numerators = Counter({Factor(f.base): n for f, n in denominators.items() if not isinstance(f.base, ReciprocalSum)})
    cancelled = numerators & common
    numerators -= cancelled
    common -= cancelled

    sign, rs = _reciprocal(reduced)
    factors = (
        tuple(numerators.elements())
        + tuple(Factor(f.base, True) for f in common.elements())
        + (Factor(rs),)
    )
    result = [Term(sign, factors)]
    for factor, count in denominators.items():
        if isinstance(factor.base, ReciprocalSum):
            for _ in range(count):
                result = _multiply(result, list(factor.base.terms))
    return result


def _invert(terms: List[Term]) -> List[Term]:
    if len(terms) > 1:
        return _invert_sum(terms)
    term = terms[0]
    result = [Term(term.sign, ())]
    for factor in term.factors:
        if isinstance(factor.base, ReciprocalSum) and not factor.inverted:
            # 1 / (1/S) = S
            result = _multiply(result, list(factor.base.terms))
            continue
        if not factor.inverted and isinstance(factor.base, Quantity) and factor.base.value == 0:
            raise ZeroDenominatorError("Denominador cero en un factor atómico")
        result = [Term(r.sign, r.factors + (Factor(factor.base, not factor.inverted),)) for r in result]
    return result


def _expand(e: Expr) -> List[Term]:
    if isinstance(e, Leaf):
        return [Term(1, (Factor(e.quantity),))]
    if isinstance(e, Negate):
        return _negate(_expand(e.child))
    if e.op == "+":
        return _check_size(_expand(e.left) + _expand(e.right))
    if e.op == "-":
        return _check_size(_expand(e.left) + _negate(_expand(e.right)))
    if e.op == "*":
        return _multiply(_expand(e.left), _expand(e.right))
    if e.op == "/":
        return _multiply(_expand(e.left), _invert(_expand(e.right)))
    # potencia entera: producto repetido
    power = integer_exponent(e.right)
    if power == 0:
        return [Term(1, ())]
    base = _expand(e.left)
    result = base
    for _ in range(abs(power) - 1):
        result = _multiply(result, base)
    return _invert(result) if power < 0 else result


def canonicalize(e: Expr) -> CanonicalSum:
    """Reescribe un AST en su CanonicalSum ordenada."""
    return CanonicalSum(_sorted_terms(_expand(e)))


# ----------------------------------------------------------------------
# Valor y representaciones de texto
# ----------------------------------------------------------------------

def _fold_factor(factor: Factor) -> Fraction:
    if isinstance(factor.base, ReciprocalSum):
        denominator = _fold_terms(factor.base.terms)
        if denominator == 0:
            raise DivisionByZeroError("Recíproco de una suma nula")
        value = 1 / denominator
    else:
        value = factor.base.value
    if factor.inverted:
        if value == 0:
            raise DivisionByZeroError("Factor invertido nulo")
        return 1 / value
    return value


def _fold_terms(terms: Sequence[Term]) -> Fraction:
    total = Fraction(0)
    for term in terms:
        product = Fraction(term.sign)
        for factor in term.factors:
            product *= _fold_factor(factor)
        total += product
    return total


def fold_canonical(c: CanonicalSum) -> Fraction:
    """Valor exacto de la forma canónica."""
    return _fold_terms(c.terms)


def _render_factor(factor: Factor) -> str:
    if isinstance(factor.base, ReciprocalSum):
        inner = " ".join(_render_term(t) for t in factor.base.terms)
        text = f"(1/{{{inner}}})"
    else:
        text = format_rational(factor.base.value)
    return f"1/{text}" if factor.inverted else text


def _render_term(term: Term) -> str:
    sign = "+" if term.sign > 0 else "-"
    return f"{sign}[{'*'.join(_render_factor(f) for f in term.factors)}]"


def render_canonical(c: CanonicalSum) -> str:
    """Texto estable: '+[3*13] +[10*13] -[40]'."""
    return " ".join(_render_term(t) for t in c.terms)


def _infix_factor(factor: Factor) -> str:
    if isinstance(factor.base, ReciprocalSum):
        text = f"({_infix_terms(factor.base.terms)})"
        return f"{text}^-1" if not factor.inverted else text
    text = format_quantity(factor.base)
    return f"{text}^-1" if factor.inverted else text


def _infix_terms(terms: Sequence[Term]) -> str:
    parts = []
    for i, term in enumerate(terms):
        body = "*".join(_infix_factor(f) for f in term.factors)
        if term.sign < 0:
            parts.append(f"-{body}")
        else:
            parts.append(body if i == 0 else f"+{body}")
    return "".join(parts)


def print_canonical(c: CanonicalSum) -> str:
    """Expresión infija que vuelve a canonicalizarse en la misma CanonicalSum."""
    return _infix_terms(c.terms)


def collect_number_map(c: CanonicalSum) -> List[Fraction]:
    """number_map mínimo para volver a analizar print_canonical(c)."""
    found = {}

    def visit(terms: Sequence[Term]):
        for term in terms:
            for factor in term.factors:
                if isinstance(factor.base, ReciprocalSum):
                    visit(factor.base.terms)
                elif factor.base.origin == QuantityOrigin.NUMBER:
                    found[factor.base.index] = factor.base.value

    visit(c.terms)
    size = max(found) + 1 if found else 0
    return [found.get(i, Fraction(0)) for i in range(size)]
