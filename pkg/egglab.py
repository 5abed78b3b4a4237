"""
Egg Fertility Lab - command-line entry point
Usage: python egglab.py <command> [--config FILE] [--seed N] [--out DIR] [--offline]
"""

import sys

from backend.cli import main

if __name__ == "__main__":
    sys.exit(main())
