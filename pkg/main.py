"""
main.py - command-line launcher.

    python main.py synth --spec synth.json --out data/
    python main.py cv --config run.json --out out/
    python main.py backtest --config run.json --out out/

This file does NOT contain application logic. See app.py for service wiring
and regime_allocator/controllers/cli_controller.py for the subcommands.
"""

from __future__ import annotations

import sys

from regime_allocator.controllers.cli_controller import run


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
