"""
Ingesta de corpus (dialectos math23k y mawps), ficheros de predicciones y
generación de corpus sintéticos para el decodificador de juguete.
"""
import json
import re
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from models.errors import ArboleaError, DatasetSchemaError, ErrorCategory
from models.schemas import CorpusStatistics
from services.canonicalizer import canonicalize
from services.error_tracking_system import ErrorSeverity, error_tracker
from services.expr_parser import (
    BinOp,
    Expr,
    Leaf,
    Negate,
    Quantity,
    QuantityOrigin,
    eval_exact,
    format_rational,
    parse,
    print_expr,
    relabel_quantities,
    strip_answer_variable,
    substitute_fractions,
)
from services.mtree_service import (
    LeafForm,
    MLeaf,
    MNode,
    MOp,
    MTree,
    branch_number,
    build_mtree,
    eval_mtree,
    make_node,
    mtree_from_nested,
    mtree_to_nested,
    operator_counts,
    tree_depth,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = Fraction(1, 10000)
DEFAULT_CONSTANTS = ("1", "3.14")
MAX_BRANCH = 8


class ExclusionReason(Enum):
    PARSE = "parse_error"
    EVAL = "eval_error"
    CANON = "canon_error"
    ANSWER_MISMATCH = "answer_mismatch"
    ANSWER_FORMAT = "answer_format"
    UNMAPPED_LITERAL = "unmapped_literal"
    BRANCH_CAP = "branch_cap"


_REASON_BY_CATEGORY = {
    ErrorCategory.PARSE: ExclusionReason.PARSE,
    ErrorCategory.EVAL: ExclusionReason.EVAL,
    ErrorCategory.CANON: ExclusionReason.CANON,
}


@dataclass(frozen=True)
class ExtractedQuantity:
    value: Fraction
    position: int
    text: str


@dataclass
class ProblemRecord:
    id: str
    text_tokens: List[str]
    tokens: List[str]  # con los números sustituidos por N<k>
    quantities: List[ExtractedQuantity]
    equation: str
    expression: str  # forma con marcadores, totalmente parentizada
    answer: Fraction
    tree: MTree

    @property
    def numbers(self) -> List[Fraction]:
        return [q.value for q in self.quantities]

    @property
    def number_positions(self) -> List[int]:
        return [q.position for q in self.quantities]


@dataclass(frozen=True)
class Exclusion:
    sample_id: str
    reason: ExclusionReason
    detail: str = ""


@dataclass
class LoadResult:
    records: List[ProblemRecord] = field(default_factory=list)
    exclusions: List[Exclusion] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.records) + len(self.exclusions)

    def exclusion_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for exclusion in self.exclusions:
            counts[exclusion.reason.value] = counts.get(exclusion.reason.value, 0) + 1
        return counts


# ----------------------------------------------------------------------
# Números del enunciado
# ----------------------------------------------------------------------

_NUMBER_TOKEN = re.compile(r"^(?:\((?P<pn>\d+)/(?P<pd>\d+)\)|(?P<n>\d+)/(?P<d>\d+)|(?P<num>\d+(?:\.\d+)?)(?P<pct>%)?)$")


def _token_value(token: str) -> Optional[Fraction]:
    match = _NUMBER_TOKEN.match(token)
    if not match:
        return None
    if match.group("pn") is not None:
        numerator, denominator = match.group("pn"), match.group("pd")
    elif match.group("n") is not None:
        numerator, denominator = match.group("n"), match.group("d")
    else:
        value = Fraction(match.group("num"))
        return value / 100 if match.group("pct") else value
    if int(denominator) == 0:
        return None
    return Fraction(int(numerator), int(denominator))


def extract_numbers(tokens: Sequence[str]) -> Tuple[List[ExtractedQuantity], List[str]]:
    """Sustituye los números (enteros, decimales, porcentajes, fracciones) por N<k> en orden de lectura."""
    quantities: List[ExtractedQuantity] = []
    rewritten: List[str] = []
    for position, token in enumerate(tokens):
        value = _token_value(token)
        if value is None:
            rewritten.append(token)
            continue
        rewritten.append(f"N{len(quantities)}")
        quantities.append(ExtractedQuantity(value, position, token))
    return quantities, rewritten


# ----------------------------------------------------------------------
# Carga de datasets
# ----------------------------------------------------------------------

def _read_json_objects(path: Path) -> List[Any]:
    """Array JSON, líneas JSON u objetos concatenados en varias líneas."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise DatasetSchemaError(f"No se pudo leer {path}: {e}") from e
    stripped = text.strip()
    if not stripped:
        return []
    try:
        data = json.loads(stripped)
        return data if isinstance(data, list) else [data]
    except json.JSONDecodeError:
        pass
    decoder = json.JSONDecoder()
    objects, cursor = [], 0
    while cursor < len(stripped):
        while cursor < len(stripped) and stripped[cursor].isspace():
            cursor += 1
        if cursor >= len(stripped):
            break
        try:
            obj, cursor = decoder.raw_decode(stripped, cursor)
        except json.JSONDecodeError as e:
            raise DatasetSchemaError(f"JSON inválido en {path}: {e}") from e
        objects.append(obj)
    return objects


@dataclass(frozen=True)
class _RawProblem:
    id: str
    tokens: List[str]
    equation: str
    answer: Any


def _raw_math23k(obj: Any) -> _RawProblem:
    if not isinstance(obj, dict) or "equation" not in obj or "ans" not in obj or "id" not in obj:
        raise DatasetSchemaError(f"Registro math23k sin id/equation/ans: {str(obj)[:80]}")
    text = obj.get("segmented_text") or obj.get("original_text")
    if text is None:
        raise DatasetSchemaError(f"Registro math23k {obj['id']} sin texto")
    return _RawProblem(str(obj["id"]), text.split(), obj["equation"], obj["ans"])


def _raw_mawps(obj: Any) -> _RawProblem:
    if not isinstance(obj, dict) or not {"iIndex", "sQuestion", "lEquations", "lSolutions"} <= obj.keys():
        raise DatasetSchemaError(f"Registro mawps sin iIndex/sQuestion/lEquations/lSolutions: {str(obj)[:80]}")
    if not obj["lEquations"] or not obj["lSolutions"]:
        raise DatasetSchemaError(f"Registro mawps {obj['iIndex']} sin ecuación o solución")
    return _RawProblem(str(obj["iIndex"]), obj["sQuestion"].split(), obj["lEquations"][0], obj["lSolutions"][0])


_DIALECTS = {"math23k": _raw_math23k, "mawps": _raw_mawps}


def parse_answer(raw: Any) -> Tuple[Fraction, bool]:
    """Valor exacto de la respuesta y si debe compararse exactamente (forma de fracción)."""
    if isinstance(raw, bool):
        raise ValueError("Respuesta booleana")
    if isinstance(raw, (int, float)):
        return Fraction(str(raw)), False
    text = "".join(str(raw).split())
    return eval_exact(parse(text)), "/" in text


def validate_problem(
    raw: _RawProblem,
    constants: Sequence[str] = DEFAULT_CONSTANTS,
    tol: Fraction = DEFAULT_TOL,
    max_branch: int = MAX_BRANCH,
):
    """ProblemRecord aceptado o Exclusion con su motivo."""
    quantities, rewritten = extract_numbers(raw.tokens)
    numbers = [q.value for q in quantities]
    try:
        answer, exact = parse_answer(raw.answer)
    except (ArboleaError, ValueError) as e:
        return Exclusion(raw.id, ExclusionReason.ANSWER_FORMAT, str(e))

    body = substitute_fractions(strip_answer_variable(raw.equation), [q.text for q in quantities])
    stage = ExclusionReason.PARSE
    try:
        expr = parse(body, numbers)
        expr, unmapped = relabel_quantities(expr, numbers, [Fraction(c) for c in constants])
        stage = ExclusionReason.EVAL
        value = eval_exact(expr)
        stage = ExclusionReason.CANON
        tree = build_mtree(canonicalize(expr))
    except ArboleaError as e:
        return Exclusion(raw.id, _REASON_BY_CATEGORY.get(e.category, stage), str(e))

    if (value != answer) if exact else abs(value - answer) > tol:
        return Exclusion(raw.id, ExclusionReason.ANSWER_MISMATCH, f"{format_rational(value)} != {raw.answer}")
    if unmapped:
        return Exclusion(raw.id, ExclusionReason.UNMAPPED_LITERAL, ",".join(format_rational(v) for v in unmapped))
    branches = branch_number(tree)
    if branches > max_branch:
        return Exclusion(raw.id, ExclusionReason.BRANCH_CAP, f"branch={branches}")
    return ProblemRecord(
        id=raw.id,
        text_tokens=list(raw.tokens),
        tokens=rewritten,
        quantities=quantities,
        equation=raw.equation,
        expression=print_expr(expr),
        answer=answer,
        tree=tree,
    )


def load_dataset(
    path,
    dialect: str = "math23k",
    constants: Sequence[str] = DEFAULT_CONSTANTS,
    tol: Fraction = DEFAULT_TOL,
    max_branch: Optional[int] = MAX_BRANCH,
    workers: int = 1,
) -> LoadResult:
    """Carga y valida un dataset; las muestras inválidas pasan al informe de exclusiones."""
    if dialect not in _DIALECTS:
        raise DatasetSchemaError(f"Dialecto desconocido: {dialect}")
    raws = [_DIALECTS[dialect](obj) for obj in _read_json_objects(path)]
    cap = max_branch if max_branch is not None else float("inf")

    def run(raw: _RawProblem):
        return validate_problem(raw, constants, tol, cap)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, raws))
    else:
        outcomes = [run(raw) for raw in raws]

    result = LoadResult()
    for outcome in outcomes:
        if isinstance(outcome, Exclusion):
            result.exclusions.append(outcome)
            error_tracker.log_error(
                DatasetSchemaError(f"{outcome.reason.value}: {outcome.detail}"),
                sample_id=outcome.sample_id,
                operation="load_dataset",
                severity=ErrorSeverity.LOW,
            )
        else:
            result.records.append(outcome)
    logger.info(
        f"✅ {path}: {len(result.records)} aceptadas, {len(result.exclusions)} excluidas de {result.total}"
    )
    return result


def write_exclusion_report(path, exclusions: Iterable[Exclusion]):
    with open(path, "w", encoding="utf-8") as f:
        for exclusion in exclusions:
            f.write(f"{exclusion.sample_id}\t{exclusion.reason.value}\n")
    logger.info(f"💾 Informe de exclusiones guardado en {path}")


def load_predictions(path) -> Tuple[Dict[str, str], List[int]]:
    """
    Predicciones en líneas JSON con 'id' y 'prediction'.

    Returns:
        (predicciones por id, números de las líneas que no se pudieron leer)
    """
    predictions: Dict[str, str] = {}
    bad_lines: List[int] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise DatasetSchemaError(f"No se pudo leer {path}: {e}") from e
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            predictions[str(obj["id"])] = str(obj.get("prediction", obj.get("expression")))
        except (json.JSONDecodeError, KeyError, TypeError):
            bad_lines.append(number)
    if bad_lines:
        logger.warning(f"⚠️ {len(bad_lines)} líneas ilegibles en {path}")
    return predictions, bad_lines


# ----------------------------------------------------------------------
# Corpus sintético
# ----------------------------------------------------------------------

OP_HINTS = {MOp.ADD: "sum", MOp.MUL: "prod", MOp.NEG_MUL: "negprod", MOp.REC_ADD: "recip"}
FORM_HINTS = {LeafForm.N: [], LeafForm.NEG: ["minus"], LeafForm.INV: ["per"], LeafForm.NEG_INV: ["minusper"]}
HINT_TOKENS = ["sum", "prod", "negprod", "recip", "(", ")", "minus", "per", "minusper"]


@dataclass
class SyntheticSample:
    tree: MTree
    tokens: List[str]
    numbers: List[Fraction]
    number_positions: List[int]

    @property
    def answer(self) -> Fraction:
        return eval_mtree(self.tree)


_MINUS_ONE = Negate(Leaf(Quantity(Fraction(1))))


class SyntheticGenerator:
    """Expresiones aleatorias en forma canónica, unificadas y renderizadas con pistas"""

    def __init__(
        self,
        seed: int,
        branches: Dict[int, float],
        max_depth: int = 3,
        max_value: int = 20,
        max_attempts: int = 1000,
    ):
        self.rng = np.random.default_rng(seed)
        total = float(sum(branches.values()))
        self.branch_values = sorted(branches)
        self.branch_probs = [branches[b] / total for b in self.branch_values]
        self.max_depth = max_depth
        self.max_value = max_value
        self.max_attempts = max_attempts

    def _branch(self) -> int:
        return int(self.rng.choice(self.branch_values, p=self.branch_probs))

    def _inner_branch(self) -> int:
        return max(2, min(self._branch(), 4))

    def _value(self) -> Leaf:
        return Leaf(Quantity(Fraction(int(self.rng.integers(1, self.max_value + 1)))))

    def _leaf(self, forms: Sequence[LeafForm]) -> Expr:
        form = forms[int(self.rng.integers(len(forms)))]
        leaf = self._value()
        if form in (LeafForm.INV, LeafForm.NEG_INV):
            leaf = BinOp("^", leaf, _MINUS_ONE)
        return Negate(leaf) if form in (LeafForm.NEG, LeafForm.NEG_INV) else leaf

    def _factor(self, depth: int) -> Expr:
        if depth > 0 and self.rng.random() < 0.25:
            return self._reciprocal(self._inner_branch(), depth)
        return self._leaf((LeafForm.N, LeafForm.INV))

    def _product(self, width: int, depth: int) -> Expr:
        expr = self._factor(depth - 1)
        for _ in range(width - 1):
            expr = BinOp("*", expr, self._factor(depth - 1))
        return expr

    def _reciprocal(self, width: int, depth: int) -> Expr:
        return BinOp("^", self._sum(width, depth), _MINUS_ONE)

    def _term(self, depth: int) -> Expr:
        if depth <= 0 or self.rng.random() < 0.5:
            return self._leaf(tuple(LeafForm))
        kind = int(self.rng.integers(3))
        if kind == 2:
            return self._reciprocal(self._inner_branch(), depth)
        product = self._product(self._inner_branch(), depth)
        return Negate(product) if kind == 1 else product

    def _sum(self, width: int, depth: int) -> Expr:
        expr = self._term(depth - 1)
        for _ in range(width - 1):
            expr = BinOp("+", expr, self._term(depth - 1))
        return expr

    def _root(self, width: int) -> Expr:
        if width == 1:
            return self._leaf(tuple(LeafForm))
        kind = int(self.rng.integers(4))
        if kind == 0:
            return self._sum(width, self.max_depth)
        if kind == 3:
            return self._reciprocal(width, self.max_depth)
        product = self._product(width, self.max_depth)
        return Negate(product) if kind == 2 else product

    def _tree(self, width: int) -> MTree:
        for _ in range(self.max_attempts):
            try:
                tree = build_mtree(canonicalize(self._root(width)))
                eval_mtree(tree)
            except ArboleaError:
                continue
            root_width = len(tree.children) if isinstance(tree, MNode) else 1
            if root_width == width and tree_depth(tree) <= self.max_depth and branch_number(tree) <= MAX_BRANCH:
                return tree
        raise RuntimeError(f"No se pudo generar un árbol con {width} ramas")

    def render(self, tree: MTree) -> SyntheticSample:
        """Tokens en preorden con los hijos barajados; las hojas toman su índice en orden de lectura."""
        tokens: List[str] = []
        numbers: List[Fraction] = []
        positions: List[int] = []

        def walk(node: MTree) -> MTree:
            if isinstance(node, MLeaf):
                tokens.extend(FORM_HINTS[node.form])
                positions.append(len(tokens))
                tokens.append(format_rational(node.quantity.value))
                numbers.append(node.quantity.value)
                return MLeaf(Quantity(node.quantity.value, QuantityOrigin.NUMBER, len(numbers) - 1), node.form)
            tokens.extend([OP_HINTS[node.op], "("])
            order = self.rng.permutation(len(node.children))
            children = [walk(node.children[int(i)]) for i in order]
            tokens.append(")")
            return make_node(node.op, children)

        relabeled = walk(tree)
        return SyntheticSample(relabeled, tokens, numbers, positions)

    def sample(self) -> SyntheticSample:
        return self.render(self._tree(self._branch()))


def generate_synthetic(
    count: int,
    seed: int,
    branches: Optional[Dict[int, float]] = None,
    max_depth: int = 3,
    max_value: int = 20,
) -> List[SyntheticSample]:
    """Corpus sintético determinista a partir de la semilla."""
    if count <= 0:
        raise ValueError("count debe ser positivo")
    generator = SyntheticGenerator(seed, branches or {2: 0.5, 3: 0.5}, max_depth, max_value)
    samples = [generator.sample() for _ in range(count)]
    logger.info(f"✅ Generadas {count} muestras sintéticas (semilla {seed})")
    return samples


def save_synthetic(path, samples: Iterable[SyntheticSample]):
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(json.dumps({
                "tokens": sample.tokens,
                "numbers": [format_rational(v) for v in sample.numbers],
                "number_positions": sample.number_positions,
                "tree": mtree_to_nested(sample.tree),
            }, ensure_ascii=False) + "\n")
    logger.info(f"💾 Corpus sintético guardado en {path}")


def load_synthetic(path) -> List[SyntheticSample]:
    samples = []
    for obj in _read_json_objects(path):
        try:
            samples.append(SyntheticSample(
                tree=mtree_from_nested(obj["tree"]),
                tokens=list(obj["tokens"]),
                numbers=[Fraction(v) for v in obj["numbers"]],
                number_positions=[int(p) for p in obj["number_positions"]],
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetSchemaError(f"Muestra sintética mal formada en {path}: {e}") from e
    return samples


# ----------------------------------------------------------------------
# Estadísticas
# ----------------------------------------------------------------------

def corpus_statistics(trees: Sequence[MTree], exclusions: Optional[Dict[str, int]] = None) -> CorpusStatistics:
    branch_histogram: Dict[int, int] = {}
    depth_histogram: Dict[int, int] = {}
    operators: Dict[str, int] = {}
    for tree in trees:
        b, d = branch_number(tree), tree_depth(tree)
        branch_histogram[b] = branch_histogram.get(b, 0) + 1
        depth_histogram[d] = depth_histogram.get(d, 0) + 1
        for op, n in operator_counts(tree).items():
            operators[op] = operators.get(op, 0) + n
    under_cap = sum(n for b, n in branch_histogram.items() if b < MAX_BRANCH)
    return CorpusStatistics(
        count=len(trees),
        branch_histogram=dict(sorted(branch_histogram.items())),
        depth_histogram=dict(sorted(depth_histogram.items())),
        operator_counts=operators,
        branch_under_cap=under_cap / len(trees) if trees else 0.0,
        exclusions=exclusions or {},
    )


def render_statistics(stats: CorpusStatistics) -> str:
    branches = pd.DataFrame(
        {"branch": list(stats.branch_histogram), "n": list(stats.branch_histogram.values())}
    )
    depths = pd.DataFrame({"depth": list(stats.depth_histogram), "n": list(stats.depth_histogram.values())})
    lines = [
        f"📊 muestras: {stats.count}",
        f"📊 ramas < {MAX_BRANCH}: {stats.branch_under_cap:.2%}",
        branches.to_string(index=False),
        depths.to_string(index=False),
    ]
    if stats.operator_counts:
        lines.append("operadores: " + ", ".join(f"{op}={n}" for op, n in sorted(stats.operator_counts.items())))
    if stats.exclusions:
        lines.append("exclusiones: " + ", ".join(f"{r}={n}" for r, n in sorted(stats.exclusions.items())))
    return "\n".join(lines)
