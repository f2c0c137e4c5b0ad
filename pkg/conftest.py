"""
Configuración común de pytest: backend/ en el path, como hace start-arbolea.py
"""
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import List

import pytest

backend_dir = Path(__file__).parent / "backend"
sys.path.insert(0, str(backend_dir))

from services.canonicalizer import canonicalize  # noqa: E402
from services.expr_parser import parse  # noqa: E402
from services.mtree_service import MTree, build_mtree  # noqa: E402


def mtree_of(text: str, number_map=None) -> MTree:
    return build_mtree(canonicalize(parse(text, number_map)))


@dataclass
class ToyProblem:
    """Problema mínimo para el decodificador"""
    tokens: List[str]
    number_positions: List[int]
    numbers: List[Fraction]
    tree: MTree


@pytest.fixture
def fig1_problem() -> ToyProblem:
    """13 cajas de 10 y 13 de 3, menos 40 de gastos"""
    tokens = ["there", "are", "13", "boxes", "of", "10", "and", "of", "3", "minus", "40"]
    numbers = [Fraction(13), Fraction(10), Fraction(3), Fraction(40)]
    return ToyProblem(tokens, [2, 5, 8, 10], numbers, mtree_of("N0*(N1+N2)-N3", numbers))


@pytest.fixture
def tiny_nagd_config():
    from models.schemas import NagdConfig
    return NagdConfig(d_k=8, heads=2)
