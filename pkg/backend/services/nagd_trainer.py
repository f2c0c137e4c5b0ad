"""
Entrenamiento, evaluación y checkpoints del decodificador NAGD de juguete
"""
import copy
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import torch
from dotenv import dotenv_values
from pydantic import ValidationError
from sklearn.model_selection import train_test_split

from models.errors import ConfigError, DatasetSchemaError, DecodeError, TrainingDivergedError
from models.schemas import MetricReport, NagdConfig, TrainConfig
from services.corpus_service import generate_synthetic, load_dataset, load_synthetic
from services.error_tracking_system import error_tracker
from services.metrics_system import DEFAULT_TOL, aggregate, score_tree
from services.mtree_service import MNode, MTree, to_refmtree
from services.nagd_model import (
    CandidateLayout,
    NagdModel,
    ProblemLike,
    Vocabulary,
    align_targets,
    decode_batch,
    teacher_forced_loss,
)
from services.training_analytics import TrainingAnalytics

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "arbolea-nagd"
CHECKPOINT_VERSION = 1
EVAL_BATCH = 64

_MODEL_KEYS = set(NagdConfig.model_fields)
_TRAIN_KEYS = set(TrainConfig.model_fields) - {"model"}


# ----------------------------------------------------------------------
# Configuración
# ----------------------------------------------------------------------

def load_train_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """Lee un fichero CLAVE=valor; las claves son nombres de campo sin distinguir mayúsculas.

    Las claves de NagdConfig y de TrainConfig conviven en el mismo fichero.
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"No existe el fichero de configuración: {path}")
        raw = {key.lower(): value for key, value in dotenv_values(path).items() if value not in (None, "")}
    raw.update({key.lower(): value for key, value in (overrides or {}).items() if value is not None})

    unknown = sorted(set(raw) - _MODEL_KEYS - _TRAIN_KEYS)
    if unknown:
        raise ConfigError(f"Claves de configuración desconocidas: {', '.join(unknown)}")
    try:
        model = NagdConfig(**{k: v for k, v in raw.items() if k in _MODEL_KEYS})
        return TrainConfig(**{k: v for k, v in raw.items() if k in _TRAIN_KEYS}, model=model)
    except ValidationError as e:
        raise ConfigError(f"Configuración inválida: {e}") from e


def configure_determinism(seed: int, threads: int = 1):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(threads)


# ----------------------------------------------------------------------
# Corpus
# ----------------------------------------------------------------------

def _alignable(tree: MTree, layout: CandidateLayout, max_len: int) -> bool:
    try:
        stack = [tree]
        align_targets([tree], layout, max_len)
        while stack:
            node = stack.pop()
            if isinstance(node, MNode):
                align_targets(node.children, layout, max_len)
                stack.extend(node.children)
    except DatasetSchemaError:
        return False
    return True


def prepare_corpus(config: TrainConfig) -> List[ProblemLike]:
    """Carga o genera el corpus y descarta los árboles que el decodificador no puede expresar."""
    if config.dataset is None:
        problems: List[ProblemLike] = generate_synthetic(
            config.samples, config.seed, config.branches, config.max_depth, config.max_value
        )
    elif config.dialect == "synthetic":
        problems = load_synthetic(config.dataset)
    else:
        result = load_dataset(config.dataset, config.dialect, constants=config.model.constants)
        if result.exclusions:
            logger.warning(f"⚠️ {len(result.exclusions)} muestras excluidas al cargar {config.dataset}")
        problems = result.records

    if config.model.refmtree:
        problems = [replace(p, tree=to_refmtree(p.tree)) for p in problems]

    layout = CandidateLayout(config.model.constant_values)
    kept = [p for p in problems if _alignable(p.tree, layout, config.model.max_len)]
    if len(kept) < len(problems):
        logger.warning(f"⚠️ {len(problems) - len(kept)} muestras con hojas fuera del banco de candidatos")
    if not kept:
        raise DatasetSchemaError("El corpus no tiene muestras utilizables")
    return kept


def split_corpus(
    problems: Sequence[ProblemLike], held_out: float, seed: int
) -> Tuple[List[ProblemLike], List[ProblemLike]]:
    test_size = int(round(held_out * len(problems)))
    if test_size == 0 or test_size >= len(problems):
        return list(problems), []
    train, held = train_test_split(list(problems), test_size=test_size, random_state=seed, shuffle=True)
    return train, held


# ----------------------------------------------------------------------
# Evaluación
# ----------------------------------------------------------------------

def _sample_id(problem: ProblemLike, index: int) -> str:
    return str(getattr(problem, "id", index))


def evaluate(
    model: NagdModel, problems: Sequence[ProblemLike], label: str = "evaluation", tol: Fraction = DEFAULT_TOL
) -> MetricReport:
    """Decodifica con argmax y puntúa los árboles frente a los de oro."""
    model.eval()
    scores = []
    for start in range(0, len(problems), EVAL_BATCH):
        chunk = problems[start: start + EVAL_BATCH]
        for offset, (problem, result) in enumerate(zip(chunk, decode_batch(model, chunk))):
            sample_id = _sample_id(problem, start + offset)
            if not result.ok:
                error_tracker.log_error(DecodeError(result.failure), sample_id=sample_id, operation="decode")
            scores.append(score_tree(result.tree, problem.tree, tol, sample_id))
    return aggregate(scores).to_report(label)


# ----------------------------------------------------------------------
# Entrenamiento
# ----------------------------------------------------------------------

@dataclass
class FitResult:
    epochs: int
    epoch_losses: List[float] = field(default_factory=list)
    train_report: Optional[MetricReport] = None
    reached_target: bool = False


class NagdTrainer:
    """Bucle de entrenamiento con teacher forcing y Adam"""

    def __init__(self, model: NagdModel, config: TrainConfig, analytics: Optional[TrainingAnalytics] = None):
        self.model = model
        self.config = config
        self.analytics = analytics
        self.optimizer = torch.optim.Adam(model.parameters(), lr=config.model.lr)
        self.step = 0

    def _diagnostics(self, loss_parts) -> Dict[str, Any]:
        norms = {
            name: float(p.grad.norm()) if p.grad is not None else None
            for name, p in self.model.named_parameters()
        }
        return {
            "step": self.step,
            "loss": float(loss_parts.total.detach()),
            "pointer_loss": float(loss_parts.pointer.detach()),
            "type_loss": float(loss_parts.type.detach()),
            "grad_norms": norms,
        }

    def train_step(self, batch: Sequence[ProblemLike], epoch: int = 0) -> float:
        self.model.train()
        self.optimizer.zero_grad()
        parts = teacher_forced_loss(self.model, batch)
        if not torch.isfinite(parts.total):
            raise TrainingDivergedError(f"Pérdida no finita en el paso {self.step}", self._diagnostics(parts))
        parts.total.backward()
        if not all(torch.isfinite(p.grad).all() for p in self.model.parameters() if p.grad is not None):
            raise TrainingDivergedError(f"Gradiente no finito en el paso {self.step}", self._diagnostics(parts))
        self.optimizer.step()
        self.step += 1
        loss = float(parts.total.detach())
        if self.analytics:
            self.analytics.record_step(
                self.step, epoch, loss, float(parts.pointer.detach()), float(parts.type.detach())
            )
        return loss

    def fit(self, problems: Sequence[ProblemLike], tol: Fraction = DEFAULT_TOL) -> FitResult:
        """Épocas con barajado sembrado; para cuando el acierto de valor en entrenamiento llega al objetivo."""
        config = self.config
        result = FitResult(epochs=0)
        for epoch in range(1, config.epochs + 1):
            generator = torch.Generator().manual_seed(config.seed + epoch)
            order = torch.randperm(len(problems), generator=generator).tolist()
            losses = []
            for start in range(0, len(order), config.batch_size):
                batch = [problems[i] for i in order[start: start + config.batch_size]]
                losses.append(self.train_step(batch, epoch))
            result.epochs = epoch
            result.epoch_losses.append(sum(losses) / len(losses))

            if epoch % config.eval_every == 0 or epoch == config.epochs:
                report = evaluate(self.model, problems, "train", tol)
                result.train_report = report
                logger.info(
                    f"📊 Época {epoch}: pérdida {result.epoch_losses[-1]:.4f}, "
                    f"Val Acc {report.val_acc:.2%}, MTree Acc {report.mtree_acc:.2%}"
                )
                if self.analytics:
                    self.analytics.record_event(
                        "evaluation", epoch=epoch, val_acc=report.val_acc, mtree_acc=report.mtree_acc
                    )
                if report.val_acc >= config.target_accuracy:
                    result.reached_target = True
                    logger.info(f"✅ Objetivo de acierto alcanzado en la época {epoch}")
                    break
        return result


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------

def save_checkpoint(path: Path, model: NagdModel):
    """Archivo torch.save: formato, versión, hiperparámetros, vocabulario y tensores."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": model.config.model_dump(),
            "vocabulary": list(model.vocabulary.itos),
            "state_dict": model.state_dict(),
        },
        path,
    )
    logger.info(f"💾 Checkpoint guardado en {path}")


def load_checkpoint(path: Path) -> NagdModel:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"No existe el checkpoint: {path}")
    try:
        archive = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise ConfigError(f"Checkpoint ilegible {path}: {e}") from e
    if not isinstance(archive, dict) or archive.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} no es un checkpoint de Arbolea")
    if archive.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"Versión de checkpoint no soportada: {archive.get('version')}")
    try:
        model = NagdModel(NagdConfig(**archive["config"]), Vocabulary(archive["vocabulary"]))
        model.load_state_dict(archive["state_dict"])
    except (KeyError, RuntimeError, ValidationError) as e:
        raise ConfigError(f"Checkpoint incompatible {path}: {e}") from e
    model.eval()
    return model


# ----------------------------------------------------------------------
# Comprobación de gradientes
# ----------------------------------------------------------------------

def finite_difference_check(
    model: NagdModel,
    problems: Sequence[ProblemLike],
    eps: float = 1e-5,
    per_tensor: int = 20,
    seed: int = 0,
    floor: float = 1e-4,
) -> Dict[str, float]:
    """Error relativo máximo por tensor entre el gradiente analítico y diferencias centrales.

    Trabaja sobre una copia en float64; el error es |a - n| / max(|a|, |n|, floor).
    """
    shadow = copy.deepcopy(model).double()
    shadow.train()
    shadow.zero_grad()
    teacher_forced_loss(shadow, problems).total.backward()

    generator = torch.Generator().manual_seed(seed)
    errors: Dict[str, float] = {}
    with torch.no_grad():
        for name, param in shadow.named_parameters():
            analytic = param.grad.reshape(-1) if param.grad is not None else torch.zeros(param.numel(), dtype=param.dtype)
            flat = param.data.view(-1)
            picks = torch.randperm(flat.numel(), generator=generator)[:per_tensor].tolist()
            worst = 0.0
            for index in picks:
                original = float(flat[index])
                flat[index] = original + eps
                plus = float(teacher_forced_loss(shadow, problems).total)
                flat[index] = original - eps
                minus = float(teacher_forced_loss(shadow, problems).total)
                flat[index] = original
                numeric = (plus - minus) / (2 * eps)
                exact = float(analytic[index])
                worst = max(worst, abs(exact - numeric) / max(abs(exact), abs(numeric), floor))
            errors[name] = worst
    return errors


# ----------------------------------------------------------------------
# Ejecuciones completas
# ----------------------------------------------------------------------

@dataclass
class TrainingOutcome:
    label: str
    model: NagdModel
    fit: FitResult
    reports: List[MetricReport]
    checkpoint: Path
    summary: Dict[str, Any] = field(default_factory=dict)


def _labelled_path(path: Path, label: str) -> Path:
    return path.with_name(f"{path.stem}.{label}{path.suffix}")


def train_variant(
    config: TrainConfig,
    train: Sequence[ProblemLike],
    held: Sequence[ProblemLike],
    vocabulary: Vocabulary,
    label: str,
    checkpoint: Path,
    metrics_log: Optional[Path],
) -> TrainingOutcome:
    configure_determinism(config.seed, config.threads)
    model = NagdModel(config.model, vocabulary)
    analytics = TrainingAnalytics(metrics_log, label=label)
    logger.info(
        f"🚀 Entrenando '{label}': {len(train)} muestras, d_k={config.model.d_k}, "
        f"atención entre objetivos={'sí' if config.model.cross_goal else 'no'}"
    )
    fit = NagdTrainer(model, config, analytics).fit(train)
    analytics.flush()
    save_checkpoint(checkpoint, model)

    reports = [evaluate(model, train, f"{label}/train")]
    if held:
        reports.append(evaluate(model, held, f"{label}/held_out"))
    analytics.record_event("final", **{r.label: r.val_acc for r in reports})
    return TrainingOutcome(label, model, fit, reports, checkpoint, analytics.get_summary())


def run_training(config: TrainConfig, with_ablation: bool = False) -> List[TrainingOutcome]:
    """Entrena el modelo configurado y, con ablación, una variante sin atención entre objetivos."""
    configure_determinism(config.seed, config.threads)
    problems = prepare_corpus(config)
    train, held = split_corpus(problems, config.held_out, config.seed)
    # todo el corpus aporta palabras: el conjunto reservado no puede tener tokens desconocidos
    vocabulary = Vocabulary.build(problems)

    main_label = "cross_goal" if config.model.cross_goal else "vanilla"
    outcomes = [train_variant(config, train, held, vocabulary, main_label, config.checkpoint, config.metrics_log)]
    if with_ablation:
        other = not config.model.cross_goal
        variant = config.model_copy(update={"model": config.model.model_copy(update={"cross_goal": other})})
        label = "cross_goal" if other else "vanilla"
        outcomes.append(
            train_variant(variant, train, held, vocabulary, label, _labelled_path(config.checkpoint, label), config.metrics_log)
        )
    return outcomes


def run_evaluation(config: TrainConfig, checkpoint: Path) -> List[MetricReport]:
    """Evalúa un checkpoint sobre la misma partición que usó el entrenamiento."""
    model = load_checkpoint(checkpoint)
    eval_config = config.model_copy(update={"model": model.config})
    problems = prepare_corpus(eval_config)
    train, held = split_corpus(problems, config.held_out, config.seed)
    label = "cross_goal" if model.config.cross_goal else "vanilla"
    reports = [evaluate(model, train, f"{label}/train")]
    if held:
        reports.append(evaluate(model, held, f"{label}/held_out"))
    logger.info(f"✅ Checkpoint {checkpoint} evaluado")
    return reports
