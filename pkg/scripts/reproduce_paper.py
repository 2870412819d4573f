"""Run every acceptance check and write the reference artifacts.

    python scripts/reproduce_paper.py [--quick] [--output DIR]
"""
import sys

from immersionlab.cli import main

if __name__ == "__main__":
    sys.exit(main(["reproduce-paper", *sys.argv[1:]]))
