"""
Métricas de entrenamiento en líneas JSON de solo anexado
"""
import json
import time
import logging
from collections import deque
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Deque, Dict, List, Optional

import psutil

logger = logging.getLogger(__name__)


@dataclass
class StepMetrics:
    """Métricas de un paso de entrenamiento"""
    step: int
    epoch: int
    loss: float
    pointer_loss: float
    type_loss: float
    elapsed_s: float
    rss_mb: float
    timestamp: str
    label: str = "train"


class TrainingAnalytics:
    """Recolector de métricas de entrenamiento con volcado periódico"""

    def __init__(
        self,
        metrics_file: Optional[Path] = None,
        flush_every: int = 50,
        label: str = "train",
        max_history: int = 1000,
    ):
        self.metrics_file = Path(metrics_file) if metrics_file else None
        self.flush_every = flush_every
        self.label = label
        self._buffer: List[StepMetrics] = []
        # en memoria solo los pasos recientes; el resumen se lleva con acumulados
        self._recent: Deque[StepMetrics] = deque(maxlen=max_history)
        self._steps = 0
        self._first_loss: Optional[float] = None
        self._best_loss = float("inf")
        self._peak_rss_mb = 0.0
        self._process = psutil.Process()
        self._started = time.perf_counter()
        if self.metrics_file:
            self.metrics_file.parent.mkdir(parents=True, exist_ok=True)

    def record_step(self, step: int, epoch: int, loss: float, pointer_loss: float, type_loss: float) -> StepMetrics:
        metrics = StepMetrics(
            step=step,
            epoch=epoch,
            loss=loss,
            pointer_loss=pointer_loss,
            type_loss=type_loss,
            elapsed_s=round(time.perf_counter() - self._started, 3),
            rss_mb=round(self._process.memory_info().rss / (1024 * 1024), 1),
            timestamp=datetime.now().isoformat(),
            label=self.label,
        )
        self._buffer.append(metrics)
        self._recent.append(metrics)
        self._steps += 1
        if self._first_loss is None:
            self._first_loss = loss
        self._best_loss = min(self._best_loss, loss)
        self._peak_rss_mb = max(self._peak_rss_mb, metrics.rss_mb)
        if len(self._buffer) >= self.flush_every:
            self.flush()
        return metrics

    def record_event(self, event: str, **data: Any):
        """Evento suelto (evaluación, checkpoint) en el mismo fichero"""
        self.flush()
        if not self.metrics_file:
            return
        line = {"event": event, "label": self.label, "timestamp": datetime.now().isoformat(), **data}
        with open(self.metrics_file, "a", encoding="utf-8") as f:
            f.write(json.dumps(line, ensure_ascii=False) + "\n")

    def flush(self):
        """Volcar métricas al archivo"""
        if not self._buffer:
            return
        if self.metrics_file:
            try:
                with open(self.metrics_file, "a", encoding="utf-8") as f:
                    for metrics in self._buffer:
                        f.write(json.dumps(asdict(metrics), ensure_ascii=False) + "\n")
                logger.debug(f"📊 Volcadas {len(self._buffer)} métricas")
            except OSError as e:
                logger.error(f"❌ Error volcando métricas: {e}")
        self._buffer.clear()

    def recent_steps(self) -> List[StepMetrics]:
        return list(self._recent)

    def get_summary(self) -> Dict[str, Any]:
        """Resumen de la ejecución"""
        if not self._steps:
            return {"steps": 0}
        last = self._recent[-1]
        return {
            "steps": self._steps,
            "first_loss": self._first_loss,
            "last_loss": last.loss,
            "best_loss": self._best_loss,
            "elapsed_s": last.elapsed_s,
            "peak_rss_mb": self._peak_rss_mb,
        }
