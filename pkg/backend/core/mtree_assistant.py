"""
MTreeAssistant: núcleo de la lógica de Arbolea, agnóstico de la interfaz.

Cada operación devuelve un ToolkitResponse con el texto a mostrar, los datos
estructurados y el código de salida. Cualquier adaptador (la línea de
comandos, un notebook) traduce esas respuestas a su formato nativo.
"""
import os
import logging
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional

from models.errors import ArboleaError, ConfigError, DatasetSchemaError, TrainingDivergedError
from models.responses import EXIT_INPUT_ERROR, EXIT_OK, ToolkitResponse
from models.schemas import TrainConfig
from services.canonicalizer import canonicalize
from services.corpus_service import (
    MAX_BRANCH,
    corpus_statistics,
    generate_synthetic,
    load_dataset,
    load_predictions,
    load_synthetic,
    render_statistics,
    save_synthetic,
    write_exclusion_report,
)
from services.error_tracking_system import error_tracker
from services.expr_parser import eval_exact, format_rational, parse, strip_answer_variable
from services.metrics_system import (
    DEFAULT_TOL,
    ScoringItem,
    aggregate,
    prepare_gold,
    render_branch_table,
    render_report_table,
    score_corpus,
    score_sample,
    write_report,
)
from services.mtree_service import build_mtree, render_mtree, to_refmtree
from services.nagd_trainer import load_train_config, run_evaluation, run_training

logger = logging.getLogger(__name__)


class MTreeAssistant:
    """
    Orquestador central de Arbolea.

    Expone canonicalización, comparación, evaluación de corpus, estadísticas,
    generación sintética y el entrenamiento del decodificador de juguete.
    """

    def __init__(self, out_dir: Optional[Path] = None):
        env_dir = os.getenv("ARBOLEA_OUT_DIR")
        self.out_dir = Path(out_dir) if out_dir else (Path(env_dir) if env_dir else None)

    def _output_path(self, explicit: Optional[Path], default_name: str) -> Optional[Path]:
        if explicit:
            return Path(explicit)
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            return self.out_dir / default_name
        return None

    # ------------------------------------------------------------------
    # Expresiones sueltas
    # ------------------------------------------------------------------

    def canonicalize_expression(self, text: str, refmtree: bool = False) -> ToolkitResponse:
        try:
            expr = parse(strip_answer_variable(text))
            tree = build_mtree(canonicalize(expr))
            value = eval_exact(expr)
        except ArboleaError as e:
            return ToolkitResponse.input_error(f"❌ {e}")
        if refmtree:
            tree = to_refmtree(tree)
        rendered = render_mtree(tree)
        return ToolkitResponse(
            text=f"{rendered}\nvalue={format_rational(value)}",
            data={"mtree": rendered, "value": value},
        )

    def compare(self, prediction: str, gold: str, tol: Fraction = DEFAULT_TOL) -> ToolkitResponse:
        """Puntúa una predicción frente a una expresión de oro; la respuesta de oro es su valor."""
        try:
            answer = eval_exact(parse(strip_answer_variable(gold)))
            score = score_sample(prediction, gold, answer, tol)
        except ArboleaError as e:
            return ToolkitResponse.input_error(f"❌ Expresión de oro inválida: {e}")
        lines = [
            f"exp_acc={str(score.exp_acc).lower()}",
            f"val_acc={str(score.val_acc).lower()}",
            f"mtree_acc={str(score.mtree_acc).lower()}",
            f"mtree_iou={score.mtree_iou}",
        ]
        if score.failure_reason is not None:
            lines.append(f"failure={score.failure_reason.value}")
        return ToolkitResponse(text="\n".join(lines), data={"score": score})

    # ------------------------------------------------------------------
    # Corpus
    # ------------------------------------------------------------------

    def evaluate(
        self,
        gold_path: Path,
        predictions_path: Path,
        dialect: str = "math23k",
        tol: Fraction = DEFAULT_TOL,
        out: Optional[Path] = None,
        workers: int = 1,
        max_branch: int = MAX_BRANCH,
    ) -> ToolkitResponse:
        """Métricas del corpus; las muestras sin predicción cuentan como fallos."""
        # los totales de errores de la respuesta son los de esta evaluación
        error_tracker.reset()
        try:
            gold = load_dataset(gold_path, dialect, max_branch=max_branch, workers=workers)
            predictions, bad_lines = load_predictions(predictions_path)
        except ArboleaError as e:
            return ToolkitResponse.input_error(f"❌ {e}")
        if not gold.records:
            return ToolkitResponse.input_error(f"❌ {gold_path} no tiene muestras de oro válidas")

        try:
            items = [
                ScoringItem(
                    sample_id=record.id,
                    prediction=predictions.get(record.id),
                    gold=prepare_gold(
                        record.equation,
                        record.answer,
                        record.numbers,
                        [q.text for q in record.quantities],
                        tree=record.tree,
                    ),
                )
                for record in gold.records
            ]
        except ArboleaError as e:
            return ToolkitResponse.input_error(f"❌ Oro ilegible: {e}")
        report = aggregate(score_corpus(items, tol, workers)).to_report("evaluation")

        lines = [render_report_table([report]), render_branch_table(report)]
        if report.failures:
            lines.append("fallos: " + ", ".join(f"{k}={v}" for k, v in sorted(report.failures.items())))
        if report.missing:
            lines.append(f"⚠️ {len(report.missing)} muestras sin predicción: {', '.join(report.missing)}")
        if gold.exclusions:
            lines.append(f"⚠️ {len(gold.exclusions)} muestras de oro excluidas")
        if bad_lines:
            lines.append(f"⚠️ líneas de predicción ilegibles: {', '.join(map(str, bad_lines))}")

        report_path = self._output_path(out, "evaluation_report.txt")
        if report_path:
            write_report(report_path, [report])
            if gold.exclusions:
                write_exclusion_report(report_path.with_suffix(".exclusions.tsv"), gold.exclusions)
        # el informe se emite igualmente, pero una muestra de oro inválida es un error de entrada
        return ToolkitResponse(
            text="\n".join(line for line in lines if line),
            data={"report": report, "exclusions": gold.exclusions, "errors": self.get_error_stats()},
            success=not gold.exclusions,
            exit_code=EXIT_INPUT_ERROR if gold.exclusions else EXIT_OK,
        )

    def stats(self, path: Path, dialect: str = "math23k", max_branch: Optional[int] = None) -> ToolkitResponse:
        """Histogramas de ramas y profundidad; sin límite de ramas por defecto para poder medirlo."""
        try:
            if dialect == "synthetic":
                trees, exclusions = [s.tree for s in load_synthetic(path)], {}
            else:
                result = load_dataset(path, dialect, max_branch=max_branch)
                trees, exclusions = [r.tree for r in result.records], result.exclusion_counts()
        except ArboleaError as e:
            return ToolkitResponse.input_error(f"❌ {e}")
        stats = corpus_statistics(trees, exclusions)
        return ToolkitResponse(text=render_statistics(stats), data={"stats": stats})

    def generate(
        self,
        count: int,
        seed: int,
        branches: Dict[int, float],
        max_depth: int,
        out: Optional[Path] = None,
        max_value: int = 20,
    ) -> ToolkitResponse:
        try:
            samples = generate_synthetic(count, seed, branches, max_depth, max_value)
        except (ValueError, RuntimeError) as e:
            return ToolkitResponse.input_error(f"❌ {e}")
        target = self._output_path(out, f"synthetic_{seed}.jsonl")
        if target:
            save_synthetic(target, samples)
        stats = corpus_statistics([s.tree for s in samples])
        text = render_statistics(stats)
        if target:
            text += f"\n💾 {target}"
        return ToolkitResponse(text=text, data={"samples": samples, "path": target})

    # ------------------------------------------------------------------
    # Decodificador de juguete
    # ------------------------------------------------------------------

    def _train_config(self, config_path: Optional[Path], overrides: Dict[str, Any]) -> TrainConfig:
        return load_train_config(config_path, {k: v for k, v in overrides.items() if v is not None})

    def train_toy(
        self,
        config_path: Optional[Path],
        cross_goal: Optional[bool] = None,
        refmtree: Optional[bool] = None,
        seed: Optional[int] = None,
        with_ablation: bool = False,
        out: Optional[Path] = None,
    ) -> ToolkitResponse:
        try:
            config = self._train_config(config_path, {"cross_goal": cross_goal, "refmtree": refmtree, "seed": seed})
            outcomes = run_training(config, with_ablation=with_ablation)
        except TrainingDivergedError as e:
            logger.error(f"🚨 Entrenamiento abortado: {e} {e.diagnostics}")
            return ToolkitResponse.runtime_error(f"🚨 {e}")
        except (ConfigError, DatasetSchemaError) as e:
            return ToolkitResponse.input_error(f"❌ {e}")
        except (ArboleaError, RuntimeError) as e:
            logger.error(f"❌ Error entrenando: {e}")
            return ToolkitResponse.runtime_error(f"❌ {e}")

        reports = [report for outcome in outcomes for report in outcome.reports]
        lines = [render_report_table(reports)]
        for outcome in outcomes:
            lines.append(
                f"💾 {outcome.label}: {outcome.fit.epochs} épocas, checkpoint {outcome.checkpoint}"
            )
        report_path = self._output_path(out, "train_report.txt")
        if report_path:
            write_report(report_path, reports)
        return ToolkitResponse(text="\n".join(lines), data={"outcomes": outcomes, "reports": reports})

    def eval_toy(
        self, config_path: Optional[Path], checkpoint: Path, out: Optional[Path] = None
    ) -> ToolkitResponse:
        try:
            config = self._train_config(config_path, {})
            reports: List = run_evaluation(config, checkpoint)
        except ArboleaError as e:
            return ToolkitResponse.input_error(f"❌ {e}")
        report_path = self._output_path(out, "eval_report.txt")
        if report_path:
            write_report(report_path, reports)
        return ToolkitResponse(text=render_report_table(reports), data={"reports": reports})

    def get_error_stats(self) -> dict:
        return error_tracker.get_error_stats()
