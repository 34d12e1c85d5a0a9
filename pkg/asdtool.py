#!/usr/bin/env python3
"""
asdtool: command-line entry point for asdkit.

Generates graphs, simulates asynchronous semi-anonymous dynamics, integrates
the mean-field ODE and evaluates the approximation bounds; all outputs are
plot-ready CSV files.

Usage:
    python3 asdtool.py simulate --config recipes/erg.yaml --out out/erg
"""

import sys

from asdkit.cli import main


if __name__ == '__main__':
    sys.exit(main())
