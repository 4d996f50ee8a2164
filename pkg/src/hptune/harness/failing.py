"""Prints a metric line but exits with status 1."""

import sys

from . import emit

if __name__ == "__main__":
    emit({"metric_val_loss": 0.0})
    print("simulated training crash", file=sys.stderr)
    raise SystemExit(1)
