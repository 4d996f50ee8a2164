"""Standalone trainer for the bundled digits network.

    python -m hptune.harness.mlp_child --dropout1=0.4 --lr=0.001 ... [--seed=0]

Unspecified hyperparameters take their defaults. Prints one progress line per epoch and
finishes with the metric line.
"""

from dataclasses import asdict

from ..data import load_demo_digits
from ..mlp import MLPConfig, MLPObjective
from . import emit, parse_flags


def main(argv=None) -> int:
    flags = parse_flags(argv)
    seed = int(flags.pop("seed", 0))
    defaults = asdict(MLPConfig())
    config = {}
    for name, text in flags.items():
        if name not in defaults:
            raise SystemExit(f"unknown hyperparameter {name!r}")
        value = float(text)
        config[name] = int(round(value)) if isinstance(defaults[name], int) else value
    objective = MLPObjective(load_demo_digits())
    record = objective({**defaults, **config}, seed)
    if not record.ok:
        print(f"training failed: {record.message}", flush=True)
        return 1
    for epoch, (l, a, vl, va) in enumerate(zip(*(record.history[k] for k in ("loss", "acc", "val_loss", "val_acc"))), 1):
        print(f"epoch {epoch}: loss {l:.4f} acc {a:.4f} val_loss {vl:.4f} val_acc {va:.4f}", flush=True)
    emit({"metric_loss": record.train_loss, "metric_acc": record.train_acc,
          "metric_val_loss": record.val_loss, "metric_val_acc": record.val_acc})
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
