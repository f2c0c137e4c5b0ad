"""
Jerarquía de excepciones de Arbolea.

Cada excepción lleva su ErrorCategory para que el ErrorTracker pueda
clasificarla sin inspeccionar el texto del mensaje.
"""
from enum import Enum
from typing import Optional


class ErrorCategory(Enum):
    """Categorías de fallo (coinciden con los motivos de exclusión y de puntuación)"""
    PARSE = "parse_error"
    CANON = "canon_error"
    EVAL = "eval_error"
    DECODE = "decode_error"
    SCHEMA = "schema_error"
    CONFIG = "config_error"
    TRAINING = "training_error"
    UNKNOWN = "unknown"


class ArboleaError(Exception):
    """Raíz de todos los errores de dominio"""
    category: ErrorCategory = ErrorCategory.UNKNOWN


# --- expr ---

class ExprSyntaxError(ArboleaError):
    category = ErrorCategory.PARSE

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (posición {position})")
        self.position = position


class EmptyExpressionError(ArboleaError):
    category = ErrorCategory.PARSE


class UnknownPlaceholderError(ArboleaError):
    category = ErrorCategory.PARSE

    def __init__(self, index: int, position: Optional[int] = None):
        super().__init__(f"Marcador N{index} sin valor en number_map")
        self.index = index
        self.position = position


class DivisionByZeroError(ArboleaError):
    category = ErrorCategory.EVAL


class ExponentError(ArboleaError):
    category = ErrorCategory.EVAL


# --- canon ---

class ZeroDenominatorError(ArboleaError):
    category = ErrorCategory.CANON


class ExpansionLimitError(ArboleaError):
    category = ErrorCategory.CANON


# --- mtree ---

class ReciprocalOfZeroError(ArboleaError):
    category = ErrorCategory.EVAL


class MalformedTreeError(ArboleaError):
    category = ErrorCategory.SCHEMA


# --- corpus / cli ---

class DatasetSchemaError(ArboleaError):
    category = ErrorCategory.SCHEMA


class ConfigError(ArboleaError):
    category = ErrorCategory.CONFIG


class EmptyReportError(ArboleaError):
    category = ErrorCategory.SCHEMA


# --- nagd ---

class UnknownTokenError(ArboleaError):
    category = ErrorCategory.SCHEMA

    def __init__(self, token: str):
        super().__init__(f"Token fuera del vocabulario: '{token}'")
        self.token = token


class DecodeError(ArboleaError):
    category = ErrorCategory.DECODE


class TrainingDivergedError(ArboleaError):
    category = ErrorCategory.TRAINING

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
