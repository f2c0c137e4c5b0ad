#!/usr/bin/env python3
"""
Arbolea — script de inicio.

Uso:
  python start-arbolea.py canonicalize "13*(10+3)-40"
  python start-arbolea.py evaluate gold.json predictions.jsonl --out report.txt
  python start-arbolea.py train-toy toy.env --with-ablation
"""
import sys
from pathlib import Path

backend_dir = Path(__file__).parent / "backend"
sys.path.insert(0, str(backend_dir))


if __name__ == "__main__":
    from cli import main

    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n🛑 Arbolea detenido por el usuario", file=sys.stderr)
        sys.exit(130)
