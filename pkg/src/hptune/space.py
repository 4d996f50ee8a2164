"""Hyperparameter search spaces and the unit-cube encoding used by designs and surrogates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import DomainError

KINDS = ("numeric", "integer", "factor")
SCALES = ("linear", "log10")


@dataclass(frozen=True)
class ParamSpec:
    """One tunable dimension.

    ``numeric`` and ``integer`` parameters carry ``lower``/``upper`` bounds,
    ``factor`` parameters carry ordered ``levels``.
    """

    name: str
    kind: str = "numeric"
    lower: float | None = None
    upper: float | None = None
    levels: tuple[str, ...] | None = None
    scale: str = "linear"
    default: Any = None

    def __post_init__(self):
        if self.levels is not None and not isinstance(self.levels, tuple):
            object.__setattr__(self, "levels", tuple(self.levels))

    @property
    def n_levels(self) -> int:
        return len(self.levels) if self.kind == "factor" else 0

    def violations(self) -> list[str]:
        out = []
        if not self.name or not str(self.name).isidentifier():
            out.append(f"{self.name!r}: name must be an identifier")
        if self.kind not in KINDS:
            return out + [f"{self.name}: unknown kind {self.kind!r}"]
        if self.scale not in SCALES:
            out.append(f"{self.name}: unknown scale {self.scale!r}")
        if self.kind == "factor":
            if self.lower is not None or self.upper is not None:
                out.append(f"{self.name}: factor takes no bounds")
            if self.levels is None or len(set(self.levels)) < 2 or len(set(self.levels)) != len(self.levels):
                out.append(f"{self.name}: factor requires >= 2 distinct levels")
            elif self.default is not None and self.default not in self.levels:
                out.append(f"{self.name}: default {self.default!r} not among levels")
            return out
        if self.levels is not None:
            out.append(f"{self.name}: levels only apply to factors")
        if self.lower is None or self.upper is None:
            return out + [f"{self.name}: bounds required"]
        if not self.lower < self.upper:
            out.append(f"{self.name}: lower < upper violated ({self.lower} >= {self.upper})")
        if self.scale == "log10" and not self.lower > 0:
            out.append(f"{self.name}: log scale requires positive lower")
        if self.default is not None and not (self.lower <= self.default <= self.upper):
            out.append(f"{self.name}: default {self.default!r} outside [{self.lower}, {self.upper}]")
        return out

    # scalar maps between natural and unit scale

    def _axis(self, value: float) -> float:
        return math.log10(value) if self.scale == "log10" else float(value)

    def _lo_hi(self) -> tuple[float, float]:
        return self._axis(self.lower), self._axis(self.upper)

    def value_to_unit(self, value: Any) -> float:
        if self.kind == "factor":
            if value not in self.levels:
                raise DomainError(f"{self.name}: {value!r} is not a level")
            return (self.levels.index(value) + 0.5) / len(self.levels)
        v = float(value)
        if not (self.lower <= v <= self.upper) or math.isnan(v):
            raise DomainError(f"{self.name}: {value!r} outside [{self.lower}, {self.upper}]")
        if self.kind == "integer" and v != round(v):
            raise DomainError(f"{self.name}: {value!r} is not an integer")
        lo, hi = self._lo_hi()
        return (self._axis(v) - lo) / (hi - lo)

    def unit_to_value(self, u: float) -> Any:
        u = min(max(float(u), 0.0), 1.0)
        if self.kind == "factor":
            idx = min(int(math.floor(u * len(self.levels))), len(self.levels) - 1)
            return self.levels[idx]
        lo, hi = self._lo_hi()
        t = lo + u * (hi - lo)
        v = 10.0**t if self.scale == "log10" else t
        if self.kind == "integer":
            v = _round_half_away(v)
            return int(min(max(v, math.ceil(self.lower)), math.floor(self.upper)))
        return min(max(v, self.lower), self.upper)

    def as_number(self, value: Any) -> float:
        """Numeric stand-in used by tabular analyses (factor -> level index)."""
        if self.kind == "factor":
            return float(self.levels.index(value))
        return float(value)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == "factor":
            d["levels"] = list(self.levels)
        else:
            d["lower"], d["upper"] = self.lower, self.upper
        if self.scale != "linear":
            d["scale"] = self.scale
        if self.default is not None:
            d["default"] = self.default
        return d


def _round_half_away(v: float) -> float:
    return math.copysign(math.floor(abs(v) + 0.5), v)


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[ParamSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))

    @property
    def d(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def types(self) -> list[str]:
        return [p.kind for p in self.params]

    @property
    def level_counts(self) -> np.ndarray:
        """0 for ordered dimensions, the number of levels for factors."""
        return np.array([p.n_levels for p in self.params], dtype=int)

    def __len__(self) -> int:
        return self.d

    def __getitem__(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def defaults(self) -> dict[str, Any]:
        return {p.name: p.default for p in self.params}

    def _values(self, config: Mapping[str, Any] | Sequence[Any]) -> list[Any]:
        if isinstance(config, Mapping):
            missing = [n for n in self.names if n not in config]
            if missing:
                raise DomainError(f"config lacks parameters {missing}")
            return [config[n] for n in self.names]
        vals = list(config)
        if len(vals) != self.d:
            raise DomainError(f"config has {len(vals)} values, space has {self.d}")
        return vals

    def to_unit(self, config: Mapping[str, Any] | Sequence[Any]) -> np.ndarray:
        """Encode a feasible typed config as a point of [0, 1]^d."""
        vals = self._values(config)
        return np.array([p.value_to_unit(v) for p, v in zip(self.params, vals)])

    def repair(self, raw: Sequence[float]) -> dict[str, Any]:
        """Map any real vector to the nearest feasible typed config (clamp, round, stratum)."""
        raw = np.asarray(raw, dtype=float).ravel()
        if raw.size != self.d:
            raise DomainError(f"expected {self.d} coordinates, got {raw.size}")
        if np.isnan(raw).any():
            raise DomainError("NaN coordinate")
        return {p.name: p.unit_to_value(u) for p, u in zip(self.params, raw)}

    def snap(self, raw: Sequence[float]) -> np.ndarray:
        """Unit vector of the repaired config (a repair fixed point)."""
        return self.to_unit(self.repair(raw))

    def as_row(self, config: Mapping[str, Any]) -> list[Any]:
        return self._values(config)

    def numeric_row(self, config: Mapping[str, Any] | Sequence[Any]) -> list[float]:
        return [p.as_number(v) for p, v in zip(self.params, self._values(config))]

    def to_dict(self) -> dict:
        return {"params": [p.to_dict() for p in self.params]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | Sequence[Mapping[str, Any]]) -> "SearchSpace":
        entries = data["params"] if isinstance(data, Mapping) else data
        params = []
        for e in entries:
            e = dict(e)
            if "levels" in e and e["levels"] is not None:
                e["levels"] = tuple(str(v) for v in e["levels"])
            params.append(ParamSpec(**e))
        return cls(tuple(params))


@dataclass
class ValidationReport:
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_space(space: SearchSpace) -> ValidationReport:
    problems = []
    if space.d < 1:
        problems.append("space has no parameters")
    seen = set()
    for p in space.params:
        if p.name in seen:
            problems.append(f"{p.name}: duplicate parameter name")
        seen.add(p.name)
        problems.extend(p.violations())
    return ValidationReport(problems)


def check_space(space: SearchSpace) -> SearchSpace:
    report = validate_space(space)
    if not report.ok:
        raise DomainError("invalid search space: " + "; ".join(report.violations))
    return space


# Presets: the reference MLP table and the narrower bounds of the desk-scale run.
# Both use linear axes.

TABLE2 = SearchSpace((
    ParamSpec("dropout1", "numeric", 1e-6, 1.0, default=0.4),
    ParamSpec("dropout2", "numeric", 1e-6, 1.0, default=0.3),
    ParamSpec("units1", "integer", 16, 512, default=256),
    ParamSpec("units2", "integer", 4, 256, default=128),
    ParamSpec("lr", "numeric", 1e-4, 0.1, default=0.001),
    ParamSpec("epochs", "integer", 5, 25, default=20),
    ParamSpec("batch_size", "integer", 8, 256, default=64),
    ParamSpec("rho", "numeric", 0.5, 0.999, default=0.9),
))

SECTION34 = SearchSpace((
    ParamSpec("dropout1", "numeric", 1e-6, 0.5, default=0.4),
    ParamSpec("dropout2", "numeric", 1e-6, 0.5, default=0.3),
    ParamSpec("units1", "integer", 16, 512, default=256),
    ParamSpec("units2", "integer", 16, 256, default=128),
    ParamSpec("lr", "numeric", 1e-9, 1e-2, default=0.001),
    ParamSpec("epochs", "integer", 10, 50, default=20),
    ParamSpec("batch_size", "integer", 16, 512, default=64),
    ParamSpec("rho", "numeric", 0.5, 1 - 1e-3, default=0.9),
))

SPHERE2 = SearchSpace((
    ParamSpec("x1", "numeric", 0.0, 1.0),
    ParamSpec("x2", "numeric", 0.0, 1.0),
))

PRESETS = {"table2": TABLE2, "section34": SECTION34, "sphere2": SPHERE2}


def get_preset(name: str) -> SearchSpace:
    try:
        return PRESETS[name]
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
