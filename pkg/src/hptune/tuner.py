"""The sequential model-based tuning loop, simple intensification, and the random/grid baselines."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .design import GRID_CAP, grid_design, latin_hypercube, maximin_fill, random_design
from .errors import DomainError, TunerAbort
from .evaluation import EvalRecord
from .kriging import KrigingControl, KrigingModel, expected_improvement, kriging_fit
from .space import SearchSpace, check_space

log = logging.getLogger(__name__)

Objective = Callable[[Mapping[str, Any], int], "float | EvalRecord"]

RESULT_FIELDS = ("xbest", "ybest", "x", "y", "logInfo", "count", "msg", "modelFit", "ybestVec")
EI_FLOOR = 1e-12

_ALIASES = {
    "funEvals": "fun_evals", "designSize": "design_size", "maxRepeats": "max_repeats",
    "candidatePool": "candidate_pool", "localRefine": "local_refine",
}


@dataclass
class ControlConfig:
    fun_evals: int = 20
    design_size: int | None = None      # None -> 3 * d
    repeats: int = 1
    noise: bool = False
    max_repeats: int = 8
    candidate_pool: int = 1000
    local_refine: int = 10
    seed: int = 0
    workers: int = 1
    fit_budget: int = 500
    nugget: float | None = None
    types: list[str] | None = None

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "ControlConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            key = _ALIASES.get(key, key)
            if key not in known:
                raise DomainError(f"unknown control setting {key!r}")
            kwargs[key] = value
        return cls(**kwargs)

    def resolved_design_size(self, space: SearchSpace) -> int:
        return self.design_size if self.design_size is not None else 3 * space.d

    def check(self, space: SearchSpace) -> None:
        n0 = self.resolved_design_size(space)
        counts = dict(fun_evals=self.fun_evals, design_size=n0, repeats=self.repeats,
                      max_repeats=self.max_repeats, candidate_pool=self.candidate_pool,
                      local_refine=self.local_refine, workers=self.workers)
        bad = [k for k, v in counts.items() if v < 1]
        if bad:
            raise DomainError(f"counts must be >= 1: {bad}")
        if self.fun_evals < n0 * self.repeats:
            raise DomainError(
                f"budget {self.fun_evals} is smaller than the initial design "
                f"({n0} configs x {self.repeats} repeats)")
        if self.types is not None and list(self.types) != space.types:
            raise DomainError(f"types {self.types} disagree with the space {space.types}")


@dataclass
class ArchiveEntry:
    config: dict
    unit: np.ndarray
    values: list[float] = field(default_factory=list)
    first_seen: int = 0

    @property
    def replicates(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return sum(self.values) / len(self.values)


class Archive:
    """Evaluated configurations keyed by their repaired value tuple."""

    def __init__(self, space: SearchSpace):
        self.space = space
        self.entries: dict[tuple, ArchiveEntry] = {}

    def key(self, config: Mapping[str, Any]) -> tuple:
        return tuple(self.space.as_row(config))

    def __contains__(self, config) -> bool:
        return self.key(config) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def replicates(self, config) -> int:
        e = self.entries.get(self.key(config))
        return e.replicates if e else 0

    def add(self, config: Mapping[str, Any], value: float, eval_index: int) -> ArchiveEntry:
        k = self.key(config)
        if k not in self.entries:
            self.entries[k] = ArchiveEntry(dict(config), self.space.to_unit(config), first_seen=eval_index)
        self.entries[k].values.append(float(value))
        return self.entries[k]

    def incumbent(self) -> ArchiveEntry:
        """Lowest mean; ties go to the earliest evaluated configuration."""
        return min(self.entries.values(), key=lambda e: (e.mean, e.first_seen))

    def worst(self) -> float:
        return max(e.mean for e in self.entries.values())

    def aggregated(self) -> tuple[np.ndarray, np.ndarray]:
        ents = sorted(self.entries.values(), key=lambda e: e.first_seen)
        return np.array([e.unit for e in ents]), np.array([e.mean for e in ents])

    def has_replicate_noise(self) -> bool:
        return any(e.replicates > 1 and np.ptp(e.values) > 0 for e in self.entries.values())


@dataclass
class TunerResult:
    xbest: list
    ybest: float
    x: list[list]
    y: list[float]
    count: int
    msg: str
    model_fit: dict | None = None
    ybest_vec: list[float] = field(default_factory=list)
    log_info: dict | None = None

    def to_dict(self) -> dict:
        return {
            "xbest": [list(self.xbest)], "ybest": [[self.ybest]],
            "x": [list(r) for r in self.x], "y": [[v] for v in self.y],
            "logInfo": self.log_info, "count": self.count, "msg": self.msg,
            "modelFit": self.model_fit, "ybestVec": list(self.ybest_vec),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TunerResult":
        missing = [k for k in RESULT_FIELDS if k not in d]
        if missing:
            raise DomainError(f"result lacks fields {missing}")
        return cls(xbest=list(d["xbest"][0]), ybest=float(d["ybest"][0][0]),
                   x=[list(r) for r in d["x"]], y=[float(r[0]) for r in d["y"]],
                   count=int(d["count"]), msg=d["msg"], model_fit=d["modelFit"],
                   ybest_vec=[float(v) for v in d["ybestVec"]], log_info=d["logInfo"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "TunerResult":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def space(self) -> SearchSpace | None:
        if self.log_info and "space" in self.log_info:
            return SearchSpace.from_dict(self.log_info["space"])
        return None

    @property
    def design_evals(self) -> int:
        return int((self.log_info or {}).get("designEvals", 0))


def best_trace(y: Sequence[float], keys: Sequence, n_design: int) -> list[float]:
    """Best aggregated response after each post-design evaluation.

    Element ``t`` (1-based) is the minimum over configurations of the mean of their
    responses among the first ``n_design + t`` evaluations; ``keys`` identify configurations.
    """
    sums: dict = {}
    counts: Counter = Counter()
    trace = []
    for i, (k, v) in enumerate(zip(keys, y)):
        sums[k] = sums.get(k, 0.0) + float(v)
        counts[k] += 1
        if i + 1 > n_design:
            trace.append(min(sums[c] / counts[c] for c in sums))
    return trace


def result_trace(result: TunerResult) -> list[float]:
    return best_trace(result.y, [tuple(r) for r in result.x], result.design_evals)


# candidate proposal


def propose_candidates(model: KrigingModel, space: SearchSpace, n_cand: int, y_min: float,
                       seed: int = 0, archive: Archive | None = None, pool: int = 1000,
                       local_refine: int = 10, refine_evals: int = 200) -> list[np.ndarray]:
    """Maximize expected improvement over a random pool plus Nelder-Mead polishing.

    Returned points are repaired unit vectors that are not already in ``archive``. When
    the largest EI is at most 1e-12 the proposal switches to maximin space filling.
    """
    rng = np.random.default_rng(seed)
    P = rng.random((pool, space.d))
    ei = expected_improvement(model.predict(P), y_min)
    taken = set() if archive is None else set(archive.entries)
    known = model.X if archive is None else np.array([e.unit for e in archive.entries.values()])

    def accept(points) -> list[np.ndarray]:
        out = []
        for u in points:
            cfg = space.repair(u)
            k = tuple(space.as_row(cfg))
            if k in taken:
                continue
            taken.add(k)
            out.append(space.to_unit(cfg))
            if len(out) == n_cand:
                break
        return out

    if float(np.max(ei)) <= EI_FLOOR:
        return accept(maximin_fill(known, P, pool))

    def neg_ei(u):
        u = np.clip(u, 0.0, 1.0)
        return -expected_improvement(model.predict(u), y_min)

    scored = [(float(e), tuple(p)) for e, p in zip(ei, P)]
    for i in np.argsort(-ei, kind="stable")[:local_refine]:
        res = minimize(neg_ei, P[i], method="Nelder-Mead", bounds=[(0.0, 1.0)] * space.d,
                       options={"maxfev": refine_evals, "xatol": 1e-6, "fatol": 1e-14})
        scored.append((-float(res.fun), tuple(np.clip(res.x, 0.0, 1.0))))
    scored.sort(key=lambda t: -t[0])
    chosen = accept(np.array(p) for _, p in scored)
    if len(chosen) < n_cand:
        rest = maximin_fill(known, P, pool)
        chosen += accept(rest)[: n_cand - len(chosen)]
    return chosen


def intensify(archive: Archive, best_config: Mapping[str, Any], new_candidates: Sequence[Mapping],
              budget_left: int, max_repeats: int = 8) -> list[tuple[dict, int]]:
    """Replicate plan: one more run of the incumbent, then each newcomer as often as the
    incumbent has been run (capped at ``max_repeats``). Items are ``(config, replicate_index)``,
    truncated to ``budget_left`` in listed order."""
    if budget_left <= 0:
        return []
    inc_reps = archive.replicates(best_config)
    plan = []
    if inc_reps < max_repeats:
        plan.append((dict(best_config), inc_reps))
    target = min(max(inc_reps, 1), max_repeats)
    for cand in new_candidates:
        have = archive.replicates(cand)
        plan.extend((dict(cand), have + r) for r in range(target))
    return plan[:budget_left]


# the loop


class _Run:
    """Bookkeeping shared by spot and the baselines."""

    def __init__(self, objective: Objective, space: SearchSpace, seed: int, workers: int = 1):
        self.objective = objective
        self.space = space
        self.seed = seed
        self.workers = workers
        self.archive = Archive(space)
        self.rows: list[list] = []
        self.y: list[float] = []
        self.keys: list[tuple] = []
        self.failures: list[dict] = []
        self.warnings: list[str] = []
        self.records: list[EvalRecord] = []

    @property
    def count(self) -> int:
        return len(self.y)

    def _call(self, config, replicate):
        seed = self.seed + replicate
        try:
            out = self.objective(config, seed)
        except Exception as exc:  # objective crash counts as a failed evaluation
            log.warning("objective raised %r", exc)
            return EvalRecord.failure("failed", f"{type(exc).__name__}: {exc}", seed=seed)
        if isinstance(out, EvalRecord):
            if out.ok and (out.val_loss is None or not math.isfinite(out.val_loss)):
                return EvalRecord.failure("failed", "missing or non-finite val_loss", out.runtime, seed)
            return out
        value = float(out)
        if not math.isfinite(value):
            return EvalRecord.failure("failed", "non-finite objective value", seed=seed)
        return EvalRecord(val_loss=value, seed=seed)

    def execute(self, plan: Sequence[tuple[dict, int]]) -> None:
        if not plan:
            return
        if self.workers > 1 and len(plan) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                records = list(pool.map(lambda item: self._call(*item), plan))
        else:
            records = [self._call(c, r) for c, r in plan]
        values: list[float | None] = [rec.val_loss if rec.ok else None for rec in records]
        ok_means = [e.mean for e in self.archive.entries.values()]
        ok_means += [v for v in values if v is not None]
        if any(v is None for v in values):
            if not ok_means:
                msgs = "; ".join(f"{r.status}: {r.message}" for r in records)
                raise TunerAbort(f"no successful evaluation to impute failures from ({msgs})")
        for (config, _), rec, value in zip(plan, records, values):
            idx = self.count
            if value is None:
                value = max(ok_means)
                self.failures.append({"index": idx, "status": rec.status,
                                      "message": rec.message, "imputed": value})
            self.archive.add(config, value, idx)
            self.rows.append(self.space.as_row(config))
            self.y.append(float(value))
            self.keys.append(self.archive.key(config))
            self.records.append(rec)

    def result(self, msg: str, n_design: int, model: KrigingModel | None, extra=None) -> TunerResult:
        if not self.archive.entries:
            raise TunerAbort("no evaluations were completed")
        best = self.archive.incumbent()
        info = {"space": self.space.to_dict(), "designEvals": n_design,
                "statuses": dict(Counter(r.status for r in self.records))}
        if self.failures:
            info["failures"] = self.failures
        if self.warnings:
            info["warnings"] = self.warnings
        if extra:
            info.update(extra)
        return TunerResult(
            xbest=self.space.as_row(best.config), ybest=best.mean, x=self.rows, y=self.y,
            count=self.count, msg=msg, model_fit=model.summary() if model is not None else None,
            ybest_vec=best_trace(self.y, self.keys, n_design), log_info=info)


def _random_candidate(space: SearchSpace, archive: Archive, rng) -> dict:
    for _ in range(1000):
        cfg = space.repair(rng.random(space.d))
        if cfg not in archive:
            return cfg
    return space.repair(rng.random(space.d))


def spot(objective: Objective, space: SearchSpace, control: ControlConfig | None = None) -> TunerResult:
    """Sequential model-based optimization with a Kriging surrogate and EI infill.

    ``objective(config, seed)`` returns a float or an :class:`EvalRecord`; failed
    evaluations are imputed with the worst aggregated response seen so far.
    """
    control = control or ControlConfig()
    check_space(space)
    control.check(space)
    n0 = control.resolved_design_size(space)
    rng = np.random.default_rng(control.seed)
    run = _Run(objective, space, control.seed, control.workers)
    levels = space.level_counts
    model = None
    n_design = 0
    msg = "budget exhausted"
    try:
        design = latin_hypercube(space, n0, seed=int(rng.integers(2**31)))
        plan = [(space.repair(u), r) for u in design.points for r in range(control.repeats)]
        run.execute(plan[: control.fun_evals])
        n_design = run.count
        while run.count < control.fun_evals:
            left = control.fun_evals - run.count
            fit_seed, prop_seed = (int(s) for s in rng.integers(2**31, size=2))
            X, yagg = run.archive.aggregated()
            incumbent = run.archive.incumbent()
            try:
                kc = KrigingControl(nugget=control.nugget, seed=fit_seed, budget=control.fit_budget,
                                    noisy=control.noise and run.archive.has_replicate_noise())
                model = kriging_fit(X, yagg, levels, kc, types=space.types)
                units = propose_candidates(model, space, 1, float(yagg.min()), prop_seed,
                                           run.archive, control.candidate_pool, control.local_refine)
                cands = [space.repair(u) for u in units]
            except (DomainError, np.linalg.LinAlgError) as exc:
                run.warnings.append(f"eval {run.count}: surrogate failed ({exc}); random candidate used")
                cands = []
            if not cands:
                cands = [_random_candidate(space, run.archive, rng)]
            if control.noise:
                plan = intensify(run.archive, incumbent.config, cands, left, control.max_repeats)
            else:
                plan = [(c, run.archive.replicates(c) + r) for c in cands for r in range(control.repeats)]
            run.execute(plan[:left])
    except KeyboardInterrupt:
        msg = "interrupted"
    return run.result(msg, n_design, model)


def random_search(objective: Objective, space: SearchSpace, budget: int, repeats: int = 1,
                  seed: int = 0, workers: int = 1) -> TunerResult:
    check_space(space)
    if repeats < 1 or budget < repeats:
        raise DomainError("random_search needs budget >= repeats >= 1")
    n = budget // repeats
    design = random_design(space, n, seed)
    run = _Run(objective, space, seed, workers)
    msg = "budget exhausted"
    try:
        run.execute([(space.repair(u), r) for u in design.points for r in range(repeats)])
    except KeyboardInterrupt:
        msg = "interrupted"
    return run.result(msg, 0, None, {"method": "random"})


def grid_search(objective: Objective, space: SearchSpace, levels: Sequence[int],
                cap: int = GRID_CAP, seed: int = 0, workers: int = 1) -> TunerResult:
    check_space(space)
    design = grid_design(space, levels, cap)
    run = _Run(objective, space, seed, workers)
    msg = "budget exhausted"
    try:
        run.execute([(space.repair(u), 0) for u in design.points])
    except KeyboardInterrupt:
        msg = "interrupted"
    return run.result(msg, 0, None, {"method": "grid", "levels": [int(k) for k in levels]})
