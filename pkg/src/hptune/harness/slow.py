"""Sleeps (default 30 s, ``--sleep`` overrides) before reporting; used to exercise timeouts."""

import time

from . import emit, parse_flags

if __name__ == "__main__":
    flags = parse_flags()
    time.sleep(float(flags.get("sleep", 30)))
    emit({"metric_val_loss": 1.0})
