"""Strict-gap curve of the glued odd family against the ground level.

Extra arguments are passed through to the CLI, e.g. ``--grid 128 --out runs/x``.
"""

import sys
from pathlib import Path

from choquard.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "config_a.json"

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--config" not in args:
        args = ["--config", str(CONFIG)] + args
    sys.exit(main(["strict-gap"] + args))
