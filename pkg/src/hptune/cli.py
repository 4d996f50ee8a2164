"""Command-line entry point: ``hptune tune | baseline | analyze | demo``.

Run configuration file (YAML; JSON also parses)::

    space: section34            # preset name, or {params: [{name, kind, lower, upper, ...}]}
    evaluator: builtin-mlp      # builtin-mlp | sphere | {command: "...", timeout: 60}
    control:                    # any ControlConfig field, snake_case or camelCase
      funEvals: 48
      repeats: 1
      noise: false
    seed: 1
    out: runs/demo
    workers: 1

Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import scipy
import yaml

from . import __version__
from .analysis import (boxplot_stats, contour_grid, default_annotations, numeric_matrix, ols_fit,
                       summary_stats, tree_fit, tree_importance, write_table)
from .data import load_demo_digits
from .design import GRID_CAP, grid_design
from .errors import DomainError, TunerAbort
from .evaluation import ExternalObjective, test_eval
from .kriging import KrigingControl, KrigingModel, kriging_fit
from .mlp import MLPConfig, MLPObjective, MLPTrainer, train
from .space import SearchSpace, check_space, get_preset
from .tuner import ControlConfig, TunerResult, grid_search, random_search, spot

SCHEMA_VERSION = "1"
REPORTS = ("summary", "trace", "ols", "tree", "importance", "box", "contour(i,j)")

log = logging.getLogger("hptune")


def sphere_objective(config: Mapping[str, Any], seed: int = 0) -> float:
    """Squared distance from 0.3 in every numeric coordinate (the desk sphere)."""
    return float(sum((float(v) - 0.3) ** 2 for v in config.values()))


@dataclass
class RunConfig:
    space: Any = "section34"
    evaluator: Any = "builtin-mlp"
    control: dict = field(default_factory=dict)
    out: str = "hptune-run"
    seed: int = 0
    workers: int = 1

    @classmethod
    def load(cls, path) -> "RunConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise DomainError(f"{path}: top level must be a mapping")
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise DomainError(f"{path}: unknown keys {sorted(unknown)}")
        return cls(**data)

    def resolve_space(self) -> SearchSpace:
        space = get_preset(self.space) if isinstance(self.space, str) else SearchSpace.from_dict(self.space)
        return check_space(space)

    def resolve_control(self) -> ControlConfig:
        control = ControlConfig.from_mapping(self.control or {})
        control.seed = self.seed
        control.workers = self.workers
        return control

    def resolve_evaluator(self):
        ev = self.evaluator
        if isinstance(ev, Mapping):
            kinds = [k for k in ("command", "builtin") if k in ev]
            if len(kinds) != 1:
                raise DomainError("evaluator needs exactly one of 'command' or 'builtin'")
            if "builtin" in ev:
                ev = ev["builtin"]
            else:
                return ExternalObjective(ev["command"], float(ev.get("timeout", 600)))
        if ev == "builtin-mlp":
            return MLPObjective(load_demo_digits())
        if ev == "sphere":
            return sphere_objective
        raise DomainError(f"unknown evaluator {ev!r}; use builtin-mlp, sphere or {{command: ...}}")


def _run_config(args) -> RunConfig:
    rc = RunConfig.load(args.config) if args.config else RunConfig()
    if args.preset:
        rc.space = args.preset
    if args.seed is not None:
        rc.seed = args.seed
    if args.out:
        rc.out = args.out
    if args.workers is not None:
        rc.workers = args.workers
    if args.budget is not None:
        rc.control = {**rc.control, "fun_evals": args.budget}
    if getattr(args, "evaluator", None):
        rc.evaluator = args.evaluator
    if getattr(args, "command", None):
        rc.evaluator = {"command": args.command, "timeout": args.timeout}
    return rc


def _setup_out(out: Path) -> logging.Handler:
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    logging.getLogger().setLevel(logging.INFO)
    return handler


def _write_outputs(out: Path, result: TunerResult, rc: RunConfig, command: str, extra=None) -> None:
    result.save(out / "result.json")
    n0 = result.design_evals
    write_table(out / "ybestVec.csv",
                [{"evaluation": n0 + t + 1, "ybest": v} for t, v in enumerate(result.ybest_vec)],
                {"report": "trace", "designEvals": n0}, ["evaluation", "ybest"])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": rc.seed,
        "space": rc.space,
        "evaluator": rc.evaluator,
        "control": rc.control,
        "budget": {"count": result.count, "designEvals": n0,
                   "postDesignEvals": result.count - n0, "msg": result.msg},
        "versions": {"hptune": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        **(extra or {}),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))


def _finish(result: TunerResult) -> int:
    print(f"{result.msg}: count={result.count} ybest={result.ybest:.6g} xbest={result.xbest}")
    return 130 if result.msg == "interrupted" else 0


def cmd_tune(args) -> int:
    rc = _run_config(args)
    space = rc.resolve_space()
    control = rc.resolve_control()
    if args.noise:
        control.noise = True
    if args.repeats is not None:
        control.repeats = args.repeats
    control.check(space)                         # reject before any evaluation
    objective = rc.resolve_evaluator()
    out = Path(rc.out)
    handler = _setup_out(out)
    try:
        start = time.perf_counter()
        result = spot(objective, space, control)
        elapsed = time.perf_counter() - start
        _write_outputs(out, result, rc, "tune", {"runtime_s": elapsed, "control_resolved": asdict(control)})
    finally:
        logging.getLogger().removeHandler(handler)
    return _finish(result)


def _parse_levels(text: str | None, d: int) -> list[int]:
    if not text:
        raise DomainError("grid baseline needs --levels, e.g. 4,4")
    levels = [int(v) for v in re.split(r"[,\s]+", text.strip()) if v]
    if len(levels) == 1 and d > 1:
        levels = levels * d
    return levels


def cmd_baseline(args) -> int:
    rc = _run_config(args)
    space = rc.resolve_space()
    control = rc.resolve_control()
    if args.method == "grid":
        levels = _parse_levels(args.levels, space.d)
        cap = min(GRID_CAP, control.fun_evals)
        grid_design(space, levels, cap)          # a grid may not outgrow the budget
    elif control.fun_evals < control.repeats:
        raise DomainError("budget must be >= repeats")
    objective = rc.resolve_evaluator()
    out = Path(rc.out)
    handler = _setup_out(out)
    try:
        if args.method == "random":
            result = random_search(objective, space, control.fun_evals, control.repeats,
                                   rc.seed, rc.workers)
        else:
            result = grid_search(objective, space, levels, cap, seed=rc.seed, workers=rc.workers)
        _write_outputs(out, result, rc, f"baseline-{args.method}")
    finally:
        logging.getLogger().removeHandler(handler)
    return _finish(result)


# analyze

_CONTOUR = re.compile(r"contour[(:\s]*(\d+)\s*[,:]\s*(\d+)\)?$")


def parse_reports(text: str) -> list[tuple[str, tuple]]:
    out = []
    for token in re.findall(r"contour\([^)]*\)|[^,\s]+", text):
        m = _CONTOUR.match(token)
        if m:
            out.append(("contour", (int(m.group(1)), int(m.group(2)))))
        elif token in REPORTS:
            out.append((token, ()))
        else:
            raise DomainError(f"unknown report {token!r}; valid: {', '.join(REPORTS)}")
    return out


def _surrogate(result: TunerResult, space: SearchSpace) -> tuple[KrigingModel, bool]:
    if result.model_fit and "X" in result.model_fit:
        return KrigingModel.from_summary(result.model_fit), False
    groups: dict[tuple, list[float]] = {}
    for row, v in zip(result.x, result.y):
        groups.setdefault(tuple(row), []).append(v)
    X = np.array([space.to_unit(list(k)) for k in groups])
    y = np.array([np.mean(v) for v in groups.values()])
    return kriging_fit(X, y, space.level_counts, KrigingControl(), types=space.types), True


def run_report(name: str, params: tuple, result: TunerResult, space: SearchSpace, out: Path,
               resolution: int = 20) -> Path:
    meta = {"report": name, "count": result.count, "schema_version": SCHEMA_VERSION}
    if name == "summary":
        return write_table(out / "summary.csv", [summary_stats(result.y)], meta)
    if name == "trace":
        n0 = result.design_evals
        rows = [{"evaluation": n0 + t + 1, "ybest": v} for t, v in enumerate(result.ybest_vec)]
        return write_table(out / "trace.csv", rows, {**meta, "designEvals": n0}, ["evaluation", "ybest"])
    X = numeric_matrix(result.x, space)
    if name == "ols":
        fit = ols_fit(X, result.y, space.names)
        meta.update(sigma=fit.sigma, df=fit.df, r2=fit.r2, adj_r2=fit.adj_r2,
                    f_stat=fit.f_stat, f_pvalue=fit.f_pvalue)
        return write_table(out / "ols.csv", fit.table(), meta)
    if name in ("tree", "importance"):
        tree = tree_fit(X, result.y, names=space.names)
        if name == "tree":
            return write_table(out / "tree.csv", tree.rows(), {**meta, "max_depth": 4, "min_node": 5})
        scores, has_splits = tree_importance(tree)
        rows = [{"name": n, "importance": s} for n, s in zip(space.names, scores)]
        return write_table(out / "importance.csv", rows, {**meta, "has_splits": has_splits})
    if name == "box":
        box = boxplot_stats(result.x, result.y, default_annotations(result), space=space)
        rows = [dict(d) for d in box["dimensions"]]
        for label, cfg in box["annotations"].items():
            for row, value in zip(rows, cfg):
                row[label] = value
        return write_table(out / "box.csv", rows, {**meta, "annotations": list(box["annotations"])})
    if name == "contour":
        i, j = params
        if not (1 <= i <= space.d and 1 <= j <= space.d) or i == j:
            raise DomainError(f"contour needs two distinct dimensions in 1..{space.d}")
        model, refit = _surrogate(result, space)
        anchor = space.to_unit(result.xbest)
        grid = contour_grid(model, i - 1, j - 1, anchor, resolution)
        meta.update(dims=[space.names[i - 1], space.names[j - 1]], resolution=resolution,
                    anchor=list(result.xbest), refit=refit)
        return write_table(out / f"contour_{i}_{j}.csv", grid.rows(space), meta)
    raise DomainError(f"unknown report {name!r}")


def cmd_analyze(args) -> int:
    result = TunerResult.load(args.result)
    space = result.space
    if space is None:
        raise DomainError("result file carries no search space (logInfo.space)")
    reports = parse_reports(args.reports)
    out = Path(args.out or Path(args.result).parent / "reports")
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    for name, params in reports:
        try:
            path = run_report(name, params, result, space, out, args.resolution)
            print(f"{name}: {path}")
        except DomainError as exc:
            print(f"{name}: {exc}", file=sys.stderr)
            status = 1
    return status


def cmd_demo(args) -> int:
    """Train the default network once, report the learning curves and the held-out score."""
    space = get_preset(args.preset or "section34")
    config = MLPConfig.from_mapping(space.defaults())
    seed = args.seed or 0
    objective = MLPObjective(load_demo_digits())
    net, hist = train(config, objective.train_set, objective.val_set, seed)
    rows = [{"epoch": e + 1, "loss": hist["loss"][e], "acc": hist["acc"][e],
             "val_loss": hist["val_loss"][e], "val_acc": hist["val_acc"][e]} for e in range(config.epochs)]
    rec = test_eval(MLPTrainer(seed), config, objective.train_set, objective.val_set, objective.test_set)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "history.csv", rows, {"report": "demo", "config": asdict(config), "seed": seed})
    last = rows[-1]
    print(f"final epoch: loss {last['loss']:.4f} acc {last['acc']:.4f} "
          f"val_loss {last['val_loss']:.4f} val_acc {last['val_acc']:.4f}")
    print(f"Test loss: {rec.test_loss:.7f}")
    print(f"Test accuracy: {rec.test_acc:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hptune", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML/JSON run configuration")
        sp.add_argument("--preset", help="search-space preset (table2, section34, sphere2)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--budget", type=int, help="total objective evaluations (funEvals)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, help="concurrent evaluations per replicate plan")
        sp.add_argument("--evaluator", choices=["builtin-mlp", "sphere"])
        sp.add_argument("--command", help="external child command template with {name} placeholders")
        sp.add_argument("--timeout", type=float, default=600.0, help="seconds per external evaluation")

    t = sub.add_parser("tune", help="run the surrogate-model-based tuner")
    common(t)
    t.add_argument("--noise", action="store_true", help="enable replicate intensification")
    t.add_argument("--repeats", type=int)
    t.set_defaults(func=cmd_tune)

    b = sub.add_parser("baseline", help="random or grid search with the same outputs")
    common(b)
    b.add_argument("--method", choices=["random", "grid"], required=True)
    b.add_argument("--levels", help="grid levels per dimension, e.g. 4,4 (one value = all dims)")
    b.set_defaults(func=cmd_baseline)

    a = sub.add_parser("analyze", help="write report tables for a result file")
    a.add_argument("result")
    a.add_argument("--reports", default="summary,trace",
                   help="comma list of: " + ", ".join(REPORTS))
    a.add_argument("--out")
    a.add_argument("--resolution", type=int, default=20)
    a.set_defaults(func=cmd_analyze)

    d = sub.add_parser("demo", help="train the default network standalone")
    d.add_argument("--seed", type=int)
    d.add_argument("--out")
    d.add_argument("--preset")
    d.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DomainError, TunerAbort, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"hptune {args.verb}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
