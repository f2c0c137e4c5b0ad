"""
Analizador de expresiones aritméticas infijas y evaluación exacta.

Gramática (EBNF), de menor a mayor precedencia:

    expr    = term , { ("+" | "-") , term } ;
    term    = unary , { ("*" | "/") , unary } ;
    unary   = "-" , unary | power ;
    power   = atom , [ "^" , unary ] ;          (* asociativo por la derecha *)
    atom    = number | percent | placeholder | "(" , expr , ")" ;
    number  = digit , { digit } , [ "." , digit , { digit } ] ;
    percent = number , "%" ;
    placeholder = "N" , digit , { digit } ;

"-2^2" vale -4: el menos unario liga menos que "^" y más que "*" y "/".
Las fracciones "a/b" se leen como división; un valor fraccionario de un
enunciado llega siempre a través de un marcador N<k>.
"""
import re
import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterator, List, Optional, Sequence, Tuple, Union

from models.errors import (
    DivisionByZeroError,
    EmptyExpressionError,
    ExponentError,
    ExprSyntaxError,
    UnknownPlaceholderError,
)

logger = logging.getLogger(__name__)

MAX_EXPONENT = 12


class QuantityOrigin(Enum):
    """Procedencia de una cantidad"""
    NUMBER = "number"      # número del enunciado, con índice
    CONSTANT = "constant"  # constante de la lista blanca
    LITERAL = "literal"    # literal escrito en la expresión


ORIGIN_RANK = {QuantityOrigin.NUMBER: 0, QuantityOrigin.CONSTANT: 1, QuantityOrigin.LITERAL: 2}


@dataclass(frozen=True)
class Quantity:
    value: Fraction
    origin: QuantityOrigin = QuantityOrigin.LITERAL
    index: Optional[int] = None

    def __post_init__(self):
        if self.origin == QuantityOrigin.NUMBER and (self.index is None or self.index < 0):
            raise ValueError("Una cantidad del enunciado necesita un índice no negativo")

    @property
    def sort_key(self) -> Tuple:
        return (self.value, ORIGIN_RANK[self.origin], -1 if self.index is None else self.index)


@dataclass(frozen=True)
class Leaf:
    quantity: Quantity


@dataclass(frozen=True)
class Negate:
    child: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # uno de + - * / ^
    left: "Expr"
    right: "Expr"


Expr = Union[Leaf, Negate, BinOp]


# ----------------------------------------------------------------------
# Tokenizador
# ----------------------------------------------------------------------

_ALIASES = {"×": "*", "÷": "/", "−": "-", "（": "(", "）": ")", "[": "(", "]": ")"}

_TOKEN_PATTERN = re.compile(
    r"\s*(?:(?P<number>\d+(?:\.\d+)?)(?P<percent>%)?|(?P<placeholder>N\d+)|(?P<symbol>[-+*/^()]))"
)


@dataclass(frozen=True)
class Token:
    kind: str  # number | placeholder | op | lparen | rparen | end
    text: str
    position: int
    value: Optional[Fraction] = None


def _normalize_aliases(text: str) -> str:
    return "".join(_ALIASES.get(ch, ch) for ch in text)


def tokenize(text: str) -> List[Token]:
    """Divide el texto en tokens; cualquier carácter inesperado es un error de sintaxis."""
    text = _normalize_aliases(text)
    tokens: List[Token] = []
    position = 0
    while position < len(text):
        if text[position].isspace():
            position += 1
            continue
        match = _TOKEN_PATTERN.match(text, position)
        if not match:
            raise ExprSyntaxError(f"Carácter inesperado '{text[position]}'", position)
        start = position
        if match.group("number") is not None:
            value = Fraction(match.group("number"))
            raw = match.group("number")
            if match.group("percent"):
                value /= 100
                raw += "%"
            tokens.append(Token("number", raw, start, value))
        elif match.group("placeholder") is not None:
            tokens.append(Token("placeholder", match.group("placeholder"), start))
        else:
            symbol = match.group("symbol")
            kind = {"(": "lparen", ")": "rparen"}.get(symbol, "op")
            tokens.append(Token(kind, symbol, start))
        position = match.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


# ----------------------------------------------------------------------
# Parser de Pratt
# ----------------------------------------------------------------------

_INFIX_BINDING = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_UNARY_BINDING = 25


class ExpressionParser:
    """Parser de precedencia (Pratt) sobre la lista de tokens."""

    def __init__(self, tokens: List[Token], number_map: Optional[Sequence[Fraction]] = None):
        self.tokens = tokens
        self.number_map = number_map
        self.cursor = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.cursor]

    def _advance(self) -> Token:
        token = self.tokens[self.cursor]
        self.cursor += 1
        return token

    def parse(self) -> Expr:
        expr = self._expression(0)
        if self.current.kind != "end":
            raise ExprSyntaxError(f"Token inesperado '{self.current.text}'", self.current.position)
        return expr

    def _expression(self, rbp: int) -> Expr:
        left = self._nud(self._advance())
        while self.current.kind == "op" and rbp < _INFIX_BINDING[self.current.text]:
            left = self._led(self._advance(), left)
        return left

    def _nud(self, token: Token) -> Expr:
        if token.kind == "number":
            return Leaf(Quantity(token.value, QuantityOrigin.LITERAL))
        if token.kind == "placeholder":
            index = int(token.text[1:])
            if self.number_map is None or index >= len(self.number_map):
                raise UnknownPlaceholderError(index, token.position)
            return Leaf(Quantity(Fraction(self.number_map[index]), QuantityOrigin.NUMBER, index))
        if token.kind == "lparen":
            inner = self._expression(0)
            if self.current.kind != "rparen":
                raise ExprSyntaxError("Falta ')'", self.current.position)
            self._advance()
            return inner
        if token.kind == "op" and token.text == "-":
            return Negate(self._expression(_UNARY_BINDING))
        if token.kind == "end":
            raise ExprSyntaxError("Expresión incompleta", token.position)
        raise ExprSyntaxError(f"Token inesperado '{token.text}'", token.position)

    def _led(self, token: Token, left: Expr) -> Expr:
        if token.text == "^":
            # asociativo por la derecha
            return BinOp("^", left, self._expression(_INFIX_BINDING["^"] - 1))
        return BinOp(token.text, left, self._expression(_INFIX_BINDING[token.text]))


def parse(text: str, number_map: Optional[Sequence[Fraction]] = None) -> Expr:
    """Convierte una expresión infija en su AST."""
    if text is None or not text.strip():
        raise EmptyExpressionError("Expresión vacía")
    return ExpressionParser(tokenize(text), number_map).parse()


# ----------------------------------------------------------------------
# Evaluación exacta
# ----------------------------------------------------------------------

def integer_exponent(exponent: Expr) -> int:
    """Valor entero del exponente, dentro de ±MAX_EXPONENT."""
    value = eval_exact(exponent)
    if value.denominator != 1:
        raise ExponentError(f"Exponente no entero: {value}")
    if abs(value) > MAX_EXPONENT:
        raise ExponentError(f"Exponente fuera de rango: {value}")
    return int(value)


def eval_exact(e: Expr) -> Fraction:
    if isinstance(e, Leaf):
        return e.quantity.value
    if isinstance(e, Negate):
        return -eval_exact(e.child)
    left = eval_exact(e.left)
    if e.op == "^":
        power = integer_exponent(e.right)
        if left == 0 and power < 0:
            raise DivisionByZeroError("0 elevado a un exponente negativo")
        return left ** power
    right = eval_exact(e.right)
    if e.op == "+":
        return left + right
    if e.op == "-":
        return left - right
    if e.op == "*":
        return left * right
    if right == 0:
        raise DivisionByZeroError("División por cero")
    return left / right


# ----------------------------------------------------------------------
# Impresión y utilidades
# ----------------------------------------------------------------------

def format_rational(value: Fraction) -> str:
    """Entero, decimal exacto si existe, o 'n/d'."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    denominator = value.denominator
    twos = fives = 0
    while denominator % 2 == 0:
        denominator //= 2
        twos += 1
    while denominator % 5 == 0:
        denominator //= 5
        fives += 1
    if denominator != 1:
        return f"{value.numerator}/{value.denominator}"
    places = max(twos, fives)
    scaled = abs(value.numerator) * 10 ** places // value.denominator
    digits = str(scaled).rjust(places + 1, "0")
    sign = "-" if value < 0 else ""
    return f"{sign}{digits[:-places]}.{digits[-places:]}"


def format_quantity(quantity: Quantity) -> str:
    if quantity.origin == QuantityOrigin.NUMBER:
        return f"N{quantity.index}"
    return format_rational(quantity.value)


def print_expr(e: Expr) -> str:
    """Impresión totalmente parentizada en ASCII."""
    if isinstance(e, Leaf):
        return format_quantity(e.quantity)
    if isinstance(e, Negate):
        return f"(-{print_expr(e.child)})"
    return f"({print_expr(e.left)}{e.op}{print_expr(e.right)})"


def iter_leaves(e: Expr) -> Iterator[Quantity]:
    if isinstance(e, Leaf):
        yield e.quantity
    elif isinstance(e, Negate):
        yield from iter_leaves(e.child)
    else:
        yield from iter_leaves(e.left)
        yield from iter_leaves(e.right)


def relabel_quantities(
    e: Expr,
    numbers: Sequence[Fraction],
    constants: Sequence[Fraction] = (),
) -> Tuple[Expr, List[Fraction]]:
    """
    Reetiqueta los literales: primero como número del enunciado (valor exacto,
    gana la primera aparición), después como constante.

    Returns:
        (expresión reetiquetada, valores de literales sin correspondencia)
    """
    unmapped: List[Fraction] = []
    number_lookup = {}
    for index, value in enumerate(numbers):
        number_lookup.setdefault(Fraction(value), index)
    constant_values = {Fraction(c) for c in constants}

    def walk(node: Expr) -> Expr:
        if isinstance(node, Leaf):
            quantity = node.quantity
            if quantity.origin != QuantityOrigin.LITERAL:
                return node
            if quantity.value in number_lookup:
                return Leaf(Quantity(quantity.value, QuantityOrigin.NUMBER, number_lookup[quantity.value]))
            if quantity.value in constant_values:
                return Leaf(Quantity(quantity.value, QuantityOrigin.CONSTANT))
            unmapped.append(quantity.value)
            return node
        if isinstance(node, Negate):
            return Negate(walk(node.child))
        return BinOp(node.op, walk(node.left), walk(node.right))

    return walk(e), unmapped


def strip_answer_variable(equation: str) -> str:
    """Cuerpo de una ecuación sin espacios ni la variable de respuesta ('x=...' o '...=x')."""
    body = "".join(equation.split())
    if body[:2].lower() == "x=":
        return body[2:]
    if body[-2:].lower() == "=x":
        return body[:-2]
    return body


def substitute_fractions(equation: str, quantity_texts: Sequence[str]) -> str:
    """
    Sustituye las fracciones del enunciado, con o sin paréntesis, por el
    marcador N<k> de su cantidad. Solo coinciden fracciones completas: en
    "21/3" no hay un "1/3".
    """
    fractions_first = sorted(
        ((index, text) for index, text in enumerate(quantity_texts) if "/" in text),
        key=lambda item: len(item[1]),
        reverse=True,
    )
    for index, text in fractions_first:
        bare = re.escape(text.strip("()"))
        pattern = rf"\({bare}\)|(?<![\w./]){bare}(?![\d./])"
        equation = re.sub(pattern, f"N{index}", equation)
    return equation
