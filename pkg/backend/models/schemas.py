from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class NagdConfig(BaseModel):
    """Hiperparámetros del decodificador NAGD

    Los valores por defecto corresponden a la escala de escritorio:
    d_k=128, 4 cabezas, γ=2 en la focal loss, profundidad máxima 6.
    """
    d_k: int = Field(128, ge=4)
    heads: int = Field(4, ge=1)
    max_len: Literal[8] = 8
    focal_gamma: float = Field(2.0, ge=0)
    depth_cap: int = Field(6, ge=1)
    lr: float = Field(1e-3, gt=0)
    type_loss_weight: float = Field(1.0, ge=0)
    constants: List[str] = ["1"]
    cross_goal: bool = True
    refmtree: bool = False

    @field_validator("constants", mode="before")
    @classmethod
    def _parse_constants(cls, value):
        return _split_list(value)

    @field_validator("constants")
    @classmethod
    def _check_constants(cls, value: List[str]) -> List[str]:
        for text in value:
            try:
                Fraction(text)
            except (ValueError, ZeroDivisionError) as e:
                raise ValueError(f"Constante inválida: {text}") from e
        return value

    @model_validator(mode="after")
    def _check_dimensions(self):
        if self.d_k % 2:
            raise ValueError("d_k debe ser par")
        if self.d_k % self.heads:
            raise ValueError("heads debe dividir a d_k")
        return self

    @property
    def constant_values(self) -> List[Fraction]:
        return [Fraction(text) for text in self.constants]


class TrainConfig(BaseModel):
    """Configuración de una ejecución de entrenamiento del modelo de juguete"""
    seed: int = 0
    samples: int = Field(200, gt=0)
    held_out: float = Field(0.1, ge=0, lt=1)
    epochs: int = Field(300, ge=1)
    batch_size: int = Field(16, ge=1)
    branches: Dict[int, float] = {2: 0.5, 3: 0.5}
    max_depth: int = Field(2, ge=1, le=3)
    max_value: int = Field(20, ge=2)
    dataset: Optional[Path] = None
    dialect: Literal["math23k", "mawps", "synthetic"] = "synthetic"
    checkpoint: Path = Path("arbolea_nagd.pt")
    metrics_log: Path = Path("arbolea_metrics.jsonl")
    threads: int = Field(1, ge=1)
    target_accuracy: float = Field(1.0, ge=0, le=1)
    eval_every: int = Field(10, ge=1)
    model: NagdConfig = Field(default_factory=NagdConfig)

    @field_validator("branches", mode="before")
    @classmethod
    def _parse_branches(cls, value):
        if isinstance(value, str):
            return parse_branch_distribution(value)
        return value

    @field_validator("branches")
    @classmethod
    def _check_branches(cls, value: Dict[int, float]) -> Dict[int, float]:
        if not value or any(b < 1 or b > 8 for b in value) or any(p < 0 for p in value.values()):
            raise ValueError("Distribución de ramas inválida")
        if sum(value.values()) <= 0:
            raise ValueError("La distribución de ramas no tiene masa")
        return value


def parse_branch_distribution(text: str) -> Dict[int, float]:
    """'2:0.5,3:0.5' → {2: 0.5, 3: 0.5}"""
    distribution: Dict[int, float] = {}
    for part in _split_list(text):
        branch, _, weight = part.partition(":")
        try:
            distribution[int(branch)] = float(weight) if weight else 1.0
        except ValueError as e:
            raise ValueError(f"Entrada de distribución inválida: {part}") from e
    return distribution


class RunConfig(BaseModel):
    """Invocación validada de la línea de comandos"""
    subcommand: Literal[
        "canonicalize", "compare", "evaluate", "stats", "generate", "train-toy", "eval-toy"
    ]
    inputs: List[Path] = []
    out: Optional[Path] = None
    tol: Fraction = Fraction(1, 10000)
    seed: int = 0
    max_branch: int = Field(8, ge=1)
    workers: int = Field(1, ge=1)
    refmtree: bool = False
    cross_goal: bool = True

    model_config = {"arbitrary_types_allowed": True}

    @field_validator("tol", mode="before")
    @classmethod
    def _parse_tol(cls, value):
        try:
            tol = Fraction(str(value))
        except (ValueError, ZeroDivisionError) as e:
            raise ValueError(f"Tolerancia inválida: {value}") from e
        if tol < 0:
            raise ValueError("La tolerancia no puede ser negativa")
        return tol

    @field_validator("inputs")
    @classmethod
    def _inputs_exist(cls, value: List[Path]) -> List[Path]:
        for path in value:
            if not path.is_file():
                raise ValueError(f"No existe el fichero: {path}")
        return value


class BranchBin(BaseModel):
    branch: int
    count: int
    val_acc: float


class MetricReport(BaseModel):
    """Informe agregado de métricas, serializable como fichero clave=valor"""
    label: str = "evaluation"
    count: int
    exp_acc: float
    val_acc: float
    mtree_acc: float
    mtree_iou: float
    pooled_mtree_iou: float
    branch_under_cap: float
    branch_bins: List[BranchBin] = []
    failures: Dict[str, int] = {}
    missing: List[str] = []
    exact: Dict[str, str] = {}

    def to_key_values(self) -> List[str]:
        lines = [
            f"label={self.label}",
            f"count={self.count}",
            f"exp_acc={self.exp_acc:.6f}",
            f"val_acc={self.val_acc:.6f}",
            f"mtree_acc={self.mtree_acc:.6f}",
            f"mtree_iou={self.mtree_iou:.6f}",
            f"pooled_mtree_iou={self.pooled_mtree_iou:.6f}",
            f"branch_under_cap={self.branch_under_cap:.6f}",
            f"missing={len(self.missing)}",
        ]
        lines += [f"exact_{key}={value}" for key, value in sorted(self.exact.items())]
        lines += [f"failures_{key}={value}" for key, value in sorted(self.failures.items())]
        for bin_ in self.branch_bins:
            lines.append(f"branch_{bin_.branch}_count={bin_.count}")
            lines.append(f"branch_{bin_.branch}_val_acc={bin_.val_acc:.6f}")
        return lines


class CorpusStatistics(BaseModel):
    count: int
    branch_histogram: Dict[int, int]
    depth_histogram: Dict[int, int]
    operator_counts: Dict[str, int]
    branch_under_cap: float
    exclusions: Dict[str, int] = {}
