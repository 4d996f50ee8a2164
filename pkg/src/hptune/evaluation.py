"""Objective-evaluation protocols: splits, validation and CV losses, the final test
evaluation, and the external child-process evaluator.

Child-process contract
----------------------
Each hyperparameter reaches the child as one argument ``--<name>=<value>``: integers in
plain decimal, reals as the shortest round-trip decimal (``repr``), factors as their level
label. Exit code 0 means success. The child writes JSON objects, one per line, to stdout;
the last line that parses as a JSON object is the result and must contain
``metric_val_loss``. ``metric_loss``, ``metric_acc``, ``metric_val_acc``,
``metric_test_loss`` and ``metric_test_acc`` are read when present.
"""

from __future__ import annotations

import json
import math
import os
import shlex
import signal
import string
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np

from .data import Dataset, HoldoutSet
from .errors import DomainError, TrainingFailed

CCE_CLIP = 1e-7

METRIC_KEYS = {
    "metric_loss": "train_loss",
    "metric_acc": "train_acc",
    "metric_val_loss": "val_loss",
    "metric_val_acc": "val_acc",
    "metric_test_loss": "test_loss",
    "metric_test_acc": "test_acc",
}


@dataclass
class EvalRecord:
    val_loss: float | None = None
    val_acc: float | None = None
    train_loss: float | None = None
    train_acc: float | None = None
    test_loss: float | None = None
    test_acc: float | None = None
    runtime: float = 0.0
    seed: int | None = None
    status: str = "ok"
    message: str = ""
    history: dict | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @classmethod
    def failure(cls, status: str, message: str = "", runtime: float = 0.0, seed=None) -> "EvalRecord":
        return cls(status=status, message=message, runtime=runtime, seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("history")
        return {k: v for k, v in d.items() if v is not None and v != ""}


class Model(Protocol):
    def predict_proba(self, features: np.ndarray) -> np.ndarray: ...


Trainer = Callable[[Any, Dataset], Model]


@dataclass(frozen=True)
class SplitSpec:
    validation_split: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.validation_split < 1:
            raise DomainError("validation_split must lie in (0, 1)")


def split_train_val(dataset: Dataset, split: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the last ``round(fraction * N)`` samples (at least one, at most
    N - 1) become the validation set."""
    n = len(dataset)
    if n < 2:
        raise DomainError("need at least 2 samples to split")
    n_val = min(max(math.floor(split.validation_split * n + 0.5), 1), n - 1)
    perm = np.random.default_rng(split.seed).permutation(n)
    return dataset.subset(np.sort(perm[: n - n_val])), dataset.subset(np.sort(perm[n - n_val:]))


def cce_per_sample(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = np.clip(np.sum(probs * labels, axis=1), CCE_CLIP, 1 - CCE_CLIP)
    return -np.log(p)


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == np.argmax(labels, axis=1)))


def _checked_mean(losses: np.ndarray) -> float:
    value = float(np.mean(losses))
    if not math.isfinite(value):
        raise TrainingFailed("non-finite loss")
    return value


def validation_loss(trainer: Trainer, config, train: Dataset, val: Dataset,
                    loss=cce_per_sample) -> float:
    """Mean per-sample loss on ``val`` of the model fitted on ``train`` only."""
    if len(train) == 0 or len(val) == 0:
        raise DomainError("train and validation sets must be nonempty")
    model = trainer(config, train)
    return _checked_mean(loss(model.predict_proba(val.features), val.labels))


def cv_folds(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    """Round-robin fold assignment over a seeded permutation."""
    if k < 2:
        raise DomainError("k must be >= 2")
    if k > n:
        raise DomainError(f"k = {k} exceeds sample count {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(perm[i::k]) for i in range(k)]


def cv_fold_losses(trainer: Trainer, config, dataset: Dataset, k: int, seed: int = 0,
                   loss=cce_per_sample) -> list[float]:
    out = []
    all_idx = np.arange(len(dataset))
    for fold in cv_folds(len(dataset), k, seed):
        rest = np.setdiff1d(all_idx, fold)
        out.append(validation_loss(trainer, config, dataset.subset(rest), dataset.subset(fold), loss))
    return out


def cv_loss(trainer: Trainer, config, dataset: Dataset, k: int, seed: int = 0,
            loss=cce_per_sample) -> float:
    losses = cv_fold_losses(trainer, config, dataset, k, seed, loss)
    return sum(losses) / k


def test_eval(trainer: Trainer, best_config, train: Dataset, val: Dataset,
              test: HoldoutSet | Dataset, loss=cce_per_sample) -> EvalRecord:
    """Refit on train + val, then score the held-out test data once."""
    start = time.perf_counter()
    union = Dataset.concat(train, val)
    try:
        model = trainer(best_config, union)
        data = test.reveal() if isinstance(test, HoldoutSet) else test
        probs = model.predict_proba(data.features)
        test_loss = _checked_mean(loss(probs, data.labels))
    except TrainingFailed as exc:
        return EvalRecord.failure("failed", str(exc), time.perf_counter() - start)
    return EvalRecord(test_loss=test_loss, test_acc=accuracy(probs, data.labels),
                      runtime=time.perf_counter() - start)


# external process protocol

def format_flag(name: str, value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        value = int(value)
    if isinstance(value, (int, np.integer)):
        text = str(int(value))
    elif isinstance(value, (float, np.floating)):
        text = repr(float(value))
    else:
        text = str(value)
    return f"--{name}={text}"


def build_command(template: str | Sequence[str], config: Mapping[str, Any],
                  seed: int | None = None) -> list[str]:
    """Expand ``{name}`` placeholders into ``--name=value`` arguments.

    ``{python}`` expands to the running interpreter and ``{seed}`` to ``--seed=<n>``.
    Every config key must have a placeholder.
    """
    tokens = shlex.split(template) if isinstance(template, str) else list(template)
    used = {f for tok in tokens for _, f, _, _ in string.Formatter().parse(tok) if f}
    missing = [k for k in config if k not in used]
    if missing:
        raise DomainError(f"command template lacks placeholders for {missing}")
    mapping = {k: format_flag(k, v) for k, v in config.items()}
    mapping["python"] = sys.executable
    if seed is not None:
        mapping["seed"] = f"--seed={int(seed)}"
    unknown = used - set(mapping)
    if unknown:
        raise DomainError(f"command template has unknown placeholders {sorted(unknown)}")
    return [tok.format_map(mapping) for tok in tokens]


def parse_metrics(stdout: str) -> dict | None:
    """The last stdout line that parses as a JSON object, or None."""
    for line in reversed(stdout.splitlines()):
        line = line.strip()
        if not line.startswith("{"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def external_evaluate(command_template, config: Mapping[str, Any], timeout: float,
                      parse_spec: Mapping[str, str] | None = None,
                      seed: int | None = None) -> EvalRecord:
    """Run one child process per configuration and read its metric line.

    ``parse_spec`` maps output keys to record fields and defaults to ``METRIC_KEYS``;
    it must route some key to ``val_loss``.
    """
    keys = dict(parse_spec or METRIC_KEYS)
    val_key = next((k for k, v in keys.items() if v == "val_loss"), None)
    if val_key is None:
        raise DomainError("parse_spec must map a key to val_loss")
    argv = build_command(command_template, config, seed)
    start = time.monotonic()
    try:
        proc = subprocess.Popen(argv, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                                text=True, start_new_session=True)
    except OSError as exc:
        return EvalRecord.failure("failed", f"cannot launch: {exc}", 0.0, seed)
    try:
        out, err = proc.communicate(timeout=timeout)
    except subprocess.TimeoutExpired:
        _kill_group(proc)
        try:
            proc.communicate(timeout=0.5)
        except subprocess.TimeoutExpired:
            pass
        return EvalRecord.failure("timeout", f"exceeded {timeout} s", time.monotonic() - start, seed)
    runtime = time.monotonic() - start
    if proc.returncode != 0:
        tail = err.strip().splitlines()[-1:] if err else []
        return EvalRecord.failure("failed", f"exit code {proc.returncode} {' '.join(tail)}".strip(),
                                  runtime, seed)
    metrics = parse_metrics(out)
    if metrics is None or val_key not in metrics:
        return EvalRecord.failure("failed", f"no metric line with {val_key!r}", runtime, seed)
    fields = {}
    try:
        for key, attr in keys.items():
            if key in metrics and metrics[key] is not None:
                fields[attr] = float(metrics[key])
    except (TypeError, ValueError):
        return EvalRecord.failure("failed", "non-numeric metric", runtime, seed)
    if not math.isfinite(fields["val_loss"]):
        return EvalRecord.failure("failed", "non-finite val_loss", runtime, seed)
    return EvalRecord(runtime=runtime, seed=seed, **fields)


class ExternalObjective:
    """Tuner objective that shells out once per evaluation."""

    def __init__(self, command_template, timeout: float = 600.0,
                 parse_spec: Mapping[str, str] | None = None):
        self.command_template = command_template
        self.timeout = timeout
        self.parse_spec = parse_spec

    def _pass_seed(self) -> bool:
        tpl = self.command_template
        return "{seed}" in (tpl if isinstance(tpl, str) else " ".join(tpl))

    def __call__(self, config: Mapping[str, Any], seed: int) -> EvalRecord:
        return external_evaluate(self.command_template, config, self.timeout, self.parse_spec,
                                 seed if self._pass_seed() else None)


test_eval.__test__ = False  # keep pytest from collecting it when imported by name
