"""
Métricas de evaluación: Exp Acc, Val Acc, MTree Acc y MTree IoU.

Los fallos de una predicción (análisis, evaluación o canonicalización) se
registran en la puntuación de la muestra y nunca abortan la evaluación.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from models.errors import ArboleaError, EmptyReportError, ErrorCategory
from models.schemas import BranchBin, MetricReport
from services.canonicalizer import canonicalize
from services.error_tracking_system import error_tracker
from services.expr_parser import eval_exact, parse, strip_answer_variable, substitute_fractions, tokenize
from services.mtree_service import (
    MTree,
    PathMultiset,
    branch_number,
    build_mtree,
    eval_mtree,
    mtree_equal,
    paths,
    render_mtree,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = Fraction(1, 10000)
BRANCH_CAP = 8


class FailureReason(Enum):
    """Motivo por el que una predicción no pudo puntuarse"""
    PARSE = "parse_error"
    CANON = "canon_error"
    EVAL = "eval_error"
    MISSING = "missing_prediction"
    DECODE = "decode_error"


_REASON_BY_CATEGORY = {
    ErrorCategory.PARSE: FailureReason.PARSE,
    ErrorCategory.EVAL: FailureReason.EVAL,
    ErrorCategory.CANON: FailureReason.CANON,
}


@dataclass(frozen=True)
class SampleScore:
    exp_acc: bool
    val_acc: bool
    mtree_acc: bool
    mtree_iou: Fraction
    failure_reason: Optional[FailureReason] = None
    gold_branch: int = 1
    paths_shared: int = 0
    paths_union: int = 0
    sample_id: Optional[str] = None


@dataclass(frozen=True)
class GoldTarget:
    """Lado de oro ya analizado de una muestra"""
    text: str
    tree: MTree
    answer: Fraction
    number_map: Optional[List[Fraction]] = None
    quantity_texts: Tuple[str, ...] = ()  # textos del enunciado; las fracciones se sustituyen igual que en el oro
    tokens: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ScoringItem:
    sample_id: str
    prediction: Optional[str]
    gold: GoldTarget


def mtree_iou(p: PathMultiset, g: PathMultiset) -> Fraction:
    """|P∩G| / |P∪G| con semántica de multiconjunto (mínimo y máximo de cuentas)."""
    return Fraction(p.intersection_size(g), p.union_size(g))


def normalize_expression(text: str) -> List[str]:
    """Tokens del texto sin espacios y sin la variable de respuesta ('x=' o '=x')."""
    return [token.text for token in tokenize(strip_answer_variable(text)) if token.kind != "end"]


def prepare_gold(
    text: str,
    answer: Fraction,
    number_map: Optional[Sequence[Fraction]] = None,
    quantity_texts: Sequence[str] = (),
    tree: Optional[MTree] = None,
) -> GoldTarget:
    """Analiza el oro una sola vez (tokens y MTree); los errores se propagan al llamante."""
    if tree is None:
        body = substitute_fractions(strip_answer_variable(text), quantity_texts)
        tree = build_mtree(canonicalize(parse(body, number_map)))
    return GoldTarget(
        text=text,
        tree=tree,
        answer=Fraction(answer),
        number_map=list(number_map) if number_map is not None else None,
        quantity_texts=tuple(quantity_texts),
        tokens=tuple(normalize_expression(text)),
    )


def _failure(reason: FailureReason, gold_tree: MTree, sample_id: Optional[str]) -> SampleScore:
    return SampleScore(
        exp_acc=False,
        val_acc=False,
        mtree_acc=False,
        mtree_iou=Fraction(0),
        failure_reason=reason,
        gold_branch=branch_number(gold_tree),
        paths_union=len(paths(gold_tree)),
        sample_id=sample_id,
    )


def score_against(
    pred_text: Optional[str],
    gold: GoldTarget,
    tol: Fraction = DEFAULT_TOL,
    sample_id: Optional[str] = None,
) -> SampleScore:
    if pred_text is None:
        return _failure(FailureReason.MISSING, gold.tree, sample_id)
    # la predicción pasa por la misma sustitución de fracciones que el oro
    body = substitute_fractions(strip_answer_variable(pred_text), gold.quantity_texts)
    stage = FailureReason.PARSE
    try:
        pred_tokens = tuple(normalize_expression(pred_text))
        expr = parse(body, gold.number_map)
        stage = FailureReason.EVAL
        value = eval_exact(expr)
        stage = FailureReason.CANON
        tree = build_mtree(canonicalize(expr))
    except ArboleaError as e:
        reason = _REASON_BY_CATEGORY.get(e.category, stage)
        error_tracker.log_error(e, sample_id=sample_id, operation="score_sample")
        return _failure(reason, gold.tree, sample_id)

    pred_paths, gold_paths = paths(tree), paths(gold.tree)
    same_tree = mtree_equal(tree, gold.tree)
    return SampleScore(
        exp_acc=pred_tokens == gold.tokens,
        val_acc=abs(value - gold.answer) <= tol,
        mtree_acc=same_tree,
        mtree_iou=Fraction(1) if same_tree else mtree_iou(pred_paths, gold_paths),
        gold_branch=branch_number(gold.tree),
        paths_shared=pred_paths.intersection_size(gold_paths),
        paths_union=pred_paths.union_size(gold_paths),
        sample_id=sample_id,
    )


def score_sample(
    pred_text: Optional[str],
    gold_text: str,
    gold_answer: Fraction,
    tol: Fraction = DEFAULT_TOL,
    number_map: Optional[Sequence[Fraction]] = None,
    sample_id: Optional[str] = None,
) -> SampleScore:
    """Puntúa una predicción frente a su expresión de oro."""
    return score_against(pred_text, prepare_gold(gold_text, gold_answer, number_map), tol, sample_id)


def score_tree(
    pred_tree: Optional[MTree],
    gold_tree: MTree,
    tol: Fraction = DEFAULT_TOL,
    sample_id: Optional[str] = None,
) -> SampleScore:
    """Puntuación de un árbol decodificado; Exp Acc compara las representaciones de texto."""
    if pred_tree is None:
        return _failure(FailureReason.DECODE, gold_tree, sample_id)
    try:
        value = eval_mtree(pred_tree)
    except ArboleaError as e:
        error_tracker.log_error(e, sample_id=sample_id, operation="score_tree")
        return _failure(FailureReason.EVAL, gold_tree, sample_id)
    pred_paths, gold_paths = paths(pred_tree), paths(gold_tree)
    same_tree = mtree_equal(pred_tree, gold_tree)
    return SampleScore(
        exp_acc=render_mtree(pred_tree) == render_mtree(gold_tree),
        val_acc=abs(value - eval_mtree(gold_tree)) <= tol,
        mtree_acc=same_tree,
        mtree_iou=Fraction(1) if same_tree else mtree_iou(pred_paths, gold_paths),
        gold_branch=branch_number(gold_tree),
        paths_shared=pred_paths.intersection_size(gold_paths),
        paths_union=pred_paths.union_size(gold_paths),
        sample_id=sample_id,
    )


def score_corpus(items: Sequence[ScoringItem], tol: Fraction = DEFAULT_TOL, workers: int = 1) -> List[SampleScore]:
    """Puntúa muchas muestras; el orden del resultado sigue al de la entrada."""

    def run(item: ScoringItem) -> SampleScore:
        return score_against(item.prediction, item.gold, tol, item.sample_id)

    if workers <= 1:
        return [run(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, items))


@dataclass
class CorpusMetrics:
    """Agregado exacto de un corpus"""
    count: int
    exp_acc: Fraction
    val_acc: Fraction
    mtree_acc: Fraction
    mtree_iou: Fraction
    pooled_mtree_iou: Fraction
    branch_bins: Dict[int, Fraction]
    branch_counts: Dict[int, int]
    failures: Dict[str, int]
    branch_under_cap: Fraction
    missing: List[str] = field(default_factory=list)

    def to_report(self, label: str = "evaluation") -> MetricReport:
        return MetricReport(
            label=label,
            count=self.count,
            exp_acc=float(self.exp_acc),
            val_acc=float(self.val_acc),
            mtree_acc=float(self.mtree_acc),
            mtree_iou=float(self.mtree_iou),
            pooled_mtree_iou=float(self.pooled_mtree_iou),
            branch_under_cap=float(self.branch_under_cap),
            branch_bins=[
                BranchBin(branch=b, count=self.branch_counts[b], val_acc=float(acc))
                for b, acc in sorted(self.branch_bins.items())
            ],
            failures=dict(self.failures),
            missing=list(self.missing),
            exact={
                "exp_acc": str(self.exp_acc),
                "val_acc": str(self.val_acc),
                "mtree_acc": str(self.mtree_acc),
                "mtree_iou": str(self.mtree_iou),
            },
        )


def aggregate(scores: Sequence[SampleScore]) -> CorpusMetrics:
    """Medias sobre las muestras, IoU agregada y acierto de valor por número de ramas."""
    if not scores:
        raise EmptyReportError("No hay muestras que agregar")
    count = len(scores)
    by_branch: Dict[int, List[bool]] = {}
    failures: Dict[str, int] = {}
    for score in scores:
        by_branch.setdefault(score.gold_branch, []).append(score.val_acc)
        if score.failure_reason is not None:
            failures[score.failure_reason.value] = failures.get(score.failure_reason.value, 0) + 1
    union = sum(s.paths_union for s in scores)
    return CorpusMetrics(
        count=count,
        exp_acc=Fraction(sum(s.exp_acc for s in scores), count),
        val_acc=Fraction(sum(s.val_acc for s in scores), count),
        mtree_acc=Fraction(sum(s.mtree_acc for s in scores), count),
        mtree_iou=sum((s.mtree_iou for s in scores), Fraction(0)) / count,
        pooled_mtree_iou=Fraction(sum(s.paths_shared for s in scores), union) if union else Fraction(0),
        branch_bins={b: Fraction(sum(flags), len(flags)) for b, flags in by_branch.items()},
        branch_counts={b: len(flags) for b, flags in by_branch.items()},
        failures=failures,
        branch_under_cap=Fraction(sum(s.gold_branch < BRANCH_CAP for s in scores), count),
        missing=[s.sample_id for s in scores if s.failure_reason == FailureReason.MISSING],
    )


def render_report_table(reports: Sequence[MetricReport]) -> str:
    """Tabla alineada con una fila por informe."""
    frame = pd.DataFrame(
        [
            {
                "label": r.label,
                "n": r.count,
                "Exp Acc": f"{r.exp_acc:.2%}",
                "Val Acc": f"{r.val_acc:.2%}",
                "MTree Acc": f"{r.mtree_acc:.2%}",
                "MTree IoU": f"{r.mtree_iou:.2%}",
                "IoU (pooled)": f"{r.pooled_mtree_iou:.2%}",
                "branch<8": f"{r.branch_under_cap:.2%}",
            }
            for r in reports
        ]
    )
    return frame.to_string(index=False)


def render_branch_table(report: MetricReport) -> str:
    if not report.branch_bins:
        return ""
    frame = pd.DataFrame(
        [{"branch": b.branch, "n": b.count, "Val Acc": f"{b.val_acc:.2%}"} for b in report.branch_bins]
    )
    return frame.to_string(index=False)


def write_report(path, reports: Sequence[MetricReport]):
    """Fichero clave=valor; con varios informes, las claves llevan el prefijo de su etiqueta."""
    lines: List[str] = []
    for report in reports:
        prefix = f"{report.label}." if len(reports) > 1 else ""
        lines += [prefix + line for line in report.to_key_values()]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"💾 Informe guardado en {path}")
