"""
Sistema de seguimiento de errores por muestra

Los fallos de puntuación, ingesta y decodificación se registran aquí en lugar
de propagarse: una evaluación de corpus siempre termina.
"""
import logging
import threading
import traceback
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from models.errors import ArboleaError, ErrorCategory

logger = logging.getLogger(__name__)


class ErrorSeverity(Enum):
    """Niveles de severidad de errores"""
    LOW = "low"          # fallo de una predicción: se puntúa como incorrecta
    MEDIUM = "medium"    # muestra de oro descartada
    HIGH = "high"        # entrada del usuario inválida
    CRITICAL = "critical"


_DEFAULT_SEVERITY = {
    ErrorCategory.PARSE: ErrorSeverity.LOW,
    ErrorCategory.CANON: ErrorSeverity.LOW,
    ErrorCategory.EVAL: ErrorSeverity.LOW,
    ErrorCategory.DECODE: ErrorSeverity.LOW,
    ErrorCategory.SCHEMA: ErrorSeverity.MEDIUM,
    ErrorCategory.CONFIG: ErrorSeverity.HIGH,
    ErrorCategory.TRAINING: ErrorSeverity.CRITICAL,
    ErrorCategory.UNKNOWN: ErrorSeverity.HIGH,
}


@dataclass
class ErrorContext:
    """Contexto de un error"""
    error_id: str
    timestamp: datetime
    severity: ErrorSeverity
    category: ErrorCategory
    error_message: str
    stack_trace: str
    sample_id: Optional[str] = None
    operation: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


class ErrorTracker:
    """Historial acotado de errores, con resúmenes por categoría"""

    def __init__(self, max_error_history: int = 1000):
        self.max_error_history = max_error_history
        self.error_history: List[ErrorContext] = []
        self._counts: Counter = Counter()
        self._lock = threading.Lock()
        self._sequence = 0

    def categorize_error(self, error: Exception) -> ErrorCategory:
        """Categoría declarada por la excepción; UNKNOWN para las ajenas"""
        if isinstance(error, ArboleaError):
            return error.category
        return ErrorCategory.UNKNOWN

    def log_error(
        self,
        error: Exception,
        sample_id: Optional[str] = None,
        operation: Optional[str] = None,
        severity: Optional[ErrorSeverity] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> ErrorContext:
        """Registrar un error en el historial"""
        category = self.categorize_error(error)
        severity = severity or _DEFAULT_SEVERITY[category]
        with self._lock:
            self._sequence += 1
            error_id = f"ERR_{datetime.now().strftime('%Y%m%d_%H%M%S')}_{self._sequence}"
            context = ErrorContext(
                error_id=error_id,
                timestamp=datetime.now(),
                severity=severity,
                category=category,
                error_message=str(error),
                stack_trace=traceback.format_exc() if error.__traceback__ else "",
                sample_id=sample_id,
                operation=operation,
                metadata=metadata or {},
            )
            self.error_history.append(context)
            self._counts[(category, severity)] += 1
            if len(self.error_history) > self.max_error_history:
                self.error_history = self.error_history[-self.max_error_history:]

        label = f"[{error_id}]" + (f" muestra {sample_id}" if sample_id else "")
        if severity == ErrorSeverity.CRITICAL:
            logger.critical(f"🚨 Error crítico {label}: {error}")
        elif severity == ErrorSeverity.HIGH:
            logger.error(f"❌ Error {label}: {error}")
        elif severity == ErrorSeverity.MEDIUM:
            logger.warning(f"⚠️ {label}: {error}")
        else:
            logger.debug(f"{label}: {error}")
        return context

    def get_error_stats(self) -> Dict[str, Any]:
        """Totales por categoría y severidad (no se limitan al historial acotado)"""
        with self._lock:
            by_category: Dict[str, int] = {}
            by_severity: Dict[str, int] = {}
            for (category, severity), count in self._counts.items():
                by_category[category.value] = by_category.get(category.value, 0) + count
                by_severity[severity.value] = by_severity.get(severity.value, 0) + count
            return {
                "total_errors": sum(self._counts.values()),
                "by_category": by_category,
                "by_severity": by_severity,
            }

    def reset(self):
        with self._lock:
            self.error_history.clear()
            self._counts.clear()


# Instancia global del seguimiento de errores
error_tracker = ErrorTracker()
