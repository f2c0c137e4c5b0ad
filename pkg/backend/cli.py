import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from core.mtree_assistant import MTreeAssistant
from models.responses import EXIT_INPUT_ERROR, ToolkitResponse
from models.schemas import RunConfig, parse_branch_distribution

# Cargar variables de entorno
load_dotenv()

# Configurar logging
logging.basicConfig(
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    level=os.getenv("ARBOLEA_LOG_LEVEL", "INFO").upper()
)
logger = logging.getLogger(__name__)

DIALECTS = ["math23k", "mawps", "synthetic"]


def _env_int(name: str, default: int) -> int:
    try:
        return int(os.getenv(name, default))
    except ValueError:
        logger.warning(f"⚠️ {name} no es un entero, se usa {default}")
        return default


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arbolea",
        description="Unificación de expresiones en MTree, métricas y decodificador NAGD de juguete",
    )
    tol = os.getenv("ARBOLEA_TOL", "0.0001")
    seed = _env_int("ARBOLEA_SEED", 0)
    max_branch = _env_int("ARBOLEA_MAX_BRANCH", 8)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("canonicalize", help="MTree canónico y valor exacto de una expresión")
    p.add_argument("expression")
    p.add_argument("--refmtree", action="store_true", help="mostrar la variante RefMTree")

    p = sub.add_parser("compare", help="puntuar una predicción frente a una expresión de oro")
    p.add_argument("prediction")
    p.add_argument("gold")
    p.add_argument("--tol", default=tol)

    p = sub.add_parser("evaluate", help="métricas de un fichero de predicciones frente a un dataset")
    p.add_argument("gold", type=Path)
    p.add_argument("predictions", type=Path)
    p.add_argument("--dialect", choices=DIALECTS[:2], default="math23k")
    p.add_argument("--tol", default=tol)
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-branch", type=int, default=max_branch)

    p = sub.add_parser("stats", help="estadísticas de ramas y profundidad de un corpus")
    p.add_argument("path", type=Path)
    p.add_argument("--dialect", choices=DIALECTS, default="math23k")
    p.add_argument("--max-branch", type=int, default=None)

    p = sub.add_parser("generate", help="generar un corpus sintético")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--branches", default="2:0.5,3:0.5", help="distribución rama:peso, p. ej. 2:0.5,3:0.5")
    p.add_argument("--max-depth", type=int, default=2)
    p.add_argument("--max-value", type=int, default=20)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("train-toy", help="entrenar el decodificador NAGD de juguete")
    p.add_argument("config", type=Path, nargs="?")
    p.add_argument("--no-cross-goal", action="store_true", help="desactivar la atención entre objetivos")
    p.add_argument("--with-ablation", action="store_true", help="entrenar también la variante contraria")
    p.add_argument("--refmtree", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("eval-toy", help="evaluar un checkpoint del decodificador")
    p.add_argument("config", type=Path, nargs="?")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    """Valida rutas y opciones antes de empezar a trabajar."""
    inputs: List[Path] = []
    if args.subcommand == "evaluate":
        inputs = [args.gold, args.predictions]
    elif args.subcommand == "stats":
        inputs = [args.path]
    elif args.subcommand == "train-toy" and args.config:
        inputs = [args.config]
    elif args.subcommand == "eval-toy":
        inputs = ([args.config] if args.config else []) + [args.checkpoint]
    return RunConfig(
        subcommand=args.subcommand,
        inputs=inputs,
        out=getattr(args, "out", None),
        tol=getattr(args, "tol", "0.0001"),
        seed=getattr(args, "seed", None) or 0,
        max_branch=getattr(args, "max_branch", None) or 8,
        workers=getattr(args, "workers", 1),
        refmtree=getattr(args, "refmtree", False),
        cross_goal=not getattr(args, "no_cross_goal", False),
    )


def dispatch(args: argparse.Namespace, run: RunConfig, assistant: MTreeAssistant) -> ToolkitResponse:
    if run.subcommand == "canonicalize":
        return assistant.canonicalize_expression(args.expression, run.refmtree)
    if run.subcommand == "compare":
        return assistant.compare(args.prediction, args.gold, run.tol)
    if run.subcommand == "evaluate":
        return assistant.evaluate(
            args.gold, args.predictions, args.dialect, run.tol, run.out, run.workers, run.max_branch
        )
    if run.subcommand == "stats":
        return assistant.stats(args.path, args.dialect, args.max_branch)
    if run.subcommand == "generate":
        try:
            branches = parse_branch_distribution(args.branches)
        except ValueError as e:
            return ToolkitResponse.input_error(f"❌ {e}")
        return assistant.generate(args.count, run.seed, branches, args.max_depth, run.out, args.max_value)
    if run.subcommand == "train-toy":
        return assistant.train_toy(
            args.config,
            cross_goal=False if args.no_cross_goal else None,
            refmtree=True if args.refmtree else None,
            seed=args.seed,
            with_ablation=args.with_ablation,
            out=run.out,
        )
    return assistant.eval_toy(args.config, args.checkpoint, run.out)


def main(argv: Optional[List[str]] = None) -> int:
    """Punto de entrada; devuelve el código de salida"""
    args = build_parser().parse_args(argv)
    try:
        run = _run_config(args)
    except ValidationError as e:
        print(f"❌ Argumentos inválidos: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    response = dispatch(args, run, MTreeAssistant())
    # un informe con datos va a stdout aunque el código de salida no sea 0
    stream = sys.stdout if response.success or response.data else sys.stderr
    print(response.text, file=stream)
    return response.exit_code


if __name__ == "__main__":
    sys.exit(main())
