"""Kriging surrogate (Gaussian correlation, concentrated likelihood) and expected improvement.

Inputs live on the unit cube. Ordered dimensions contribute ``theta_i * (u_i - v_i)**2``
to the correlation exponent; factor dimensions contribute ``theta_i`` whenever the decoded
levels differ.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.optimize import minimize
from scipy.special import ndtr

from .errors import DomainError

THETA_BOUNDS = (1e-4, 100.0)
NUGGET_BOUNDS = (1e-8, 1e-2)
SIGMA2_FLOOR = 1e-12
# (max diag L / min diag L)^2 is a lower bound on cond(R); the fit rejects theta beyond it
MAX_CONDITION = 1e10
_INV_SQRT_2PI = 0.3989422804014327


def _levels(levels, d: int) -> np.ndarray:
    if levels is None:
        return np.zeros(d, dtype=int)
    levels = np.asarray(levels, dtype=int).ravel()
    if levels.size != d:
        raise DomainError(f"levels has {levels.size} entries for {d} dimensions")
    return levels


def _decode(U: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Replace factor coordinates by their level index; leave ordered ones alone."""
    out = np.array(U, dtype=float, copy=True)
    for j in np.flatnonzero(levels):
        out[..., j] = np.minimum(np.floor(np.clip(out[..., j], 0, 1) * levels[j]), levels[j] - 1)
    return out


def _distance_terms(A: np.ndarray, B: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Per-dimension distances, shape (len(A), len(B), d)."""
    fac = levels > 0
    if not fac.any():
        diff = A[:, None, :] - B[None, :, :]
        return diff * diff
    A, B = _decode(A, levels), _decode(B, levels)
    diff = A[:, None, :] - B[None, :, :]
    terms = diff**2
    terms[..., fac] = (diff[..., fac] != 0).astype(float)
    return terms


def correlation_matrix(A, B, theta, levels=None) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    theta = np.asarray(theta, dtype=float).ravel()
    if A.shape[1] != B.shape[1] or A.shape[1] != theta.size:
        raise DomainError(f"dimension mismatch: {A.shape[1]}, {B.shape[1]}, theta {theta.size}")
    lv = _levels(levels, theta.size)
    return np.exp(-(_distance_terms(A, B, lv) @ theta))


def correlation(u, v, theta, levels=None) -> float:
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.size != v.size:
        raise DomainError(f"dimension mismatch: {u.size} vs {v.size}")
    return float(correlation_matrix(u[None], v[None], theta, levels)[0, 0])


@dataclass
class _Factor:
    chol: tuple
    mu: float
    sigma2: float
    alpha: np.ndarray          # (R + nugget I)^-1 (y - mu)
    rinv_one: np.ndarray       # (R + nugget I)^-1 1
    one_rinv_one: float
    logdet: float


def _factorize(theta, X, y, levels, nugget, terms=None) -> _Factor | None:
    n = X.shape[0]
    if terms is None:
        terms = _distance_terms(X, X, _levels(levels, X.shape[1]))
    R = np.exp(-(terms @ np.asarray(theta, dtype=float))) + nugget * np.eye(n)
    if not np.all(np.isfinite(R)):
        return None
    try:
        c = cho_factor(R, lower=True, check_finite=False)
    except LinAlgError:
        return None
    diag = np.diag(c[0])
    if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
        return None
    one = np.ones(n)
    rinv_one = cho_solve(c, one, check_finite=False)
    rinv_y = cho_solve(c, y, check_finite=False)
    denom = float(one @ rinv_one)
    if not denom > 0:
        return None
    mu = float(one @ rinv_y) / denom
    resid = y - mu
    alpha = cho_solve(c, resid, check_finite=False)
    sigma2 = max(float(resid @ alpha) / n, SIGMA2_FLOOR)
    logdet = 2.0 * float(np.sum(np.log(diag)))
    return _Factor(c, mu, sigma2, alpha, rinv_one, denom, logdet)


def neg_log_likelihood(theta, X, y, levels=None, nugget: float = 0.0, _terms=None) -> float:
    """Concentrated negative log-likelihood; ``inf`` when the matrix is not positive definite."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 2:
        raise DomainError("likelihood needs at least 2 points")
    f = _factorize(np.asarray(theta, dtype=float), X, y, levels, nugget, _terms)
    if f is None:
        return np.inf
    n = X.shape[0]
    return 0.5 * n * np.log(f.sigma2) + 0.5 * f.logdet


@dataclass
class Prediction:
    mean: float | np.ndarray
    variance: float | np.ndarray


@dataclass
class KrigingControl:
    nugget: float | None = None     # fixed value; None -> 1e-8, or estimated if noisy
    noisy: bool = False
    starts: int = 8
    budget: int = 500
    random_evals: int = 100
    seed: int = 0
    theta_bounds: tuple[float, float] = THETA_BOUNDS
    nugget_bounds: tuple[float, float] = NUGGET_BOUNDS


@dataclass
class KrigingModel:
    X: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    mu: float
    sigma2: float
    nugget: float
    chol: tuple = field(repr=False)
    levels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    types: list[str] | None = None
    theta_bounds: tuple[float, float] = THETA_BOUNDS
    nll: float = np.nan
    fit_evals: int = 0
    _factor: _Factor | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def predict(self, x, mean_correction: bool = True) -> Prediction:
        """Predict at one point (1-d input) or many (2-d input)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        Q = np.atleast_2d(x)
        if Q.shape[1] != self.d:
            raise DomainError(f"expected {self.d} coordinates, got {Q.shape[1]}")
        f = self._factor
        r = np.exp(-(_distance_terms(Q, self.X, self.levels) @ self.theta))   # (m, n)
        mean = self.mu + r @ f.alpha
        rinv_r = cho_solve(f.chol, r.T, check_finite=False)              # (n, m)
        quad = np.einsum("ij,ji->i", r, rinv_r)
        var = 1.0 - quad
        if mean_correction:
            var = var + (1.0 - r @ f.rinv_one) ** 2 / f.one_rinv_one
        # a floored sigma2 means the responses carry no variation: no predictive spread
        scale = self.sigma2 if self.sigma2 > SIGMA2_FLOOR else 0.0
        var = np.maximum(scale * var, 0.0)
        if single:
            return Prediction(float(mean[0]), float(var[0]))
        return Prediction(mean, var)

    def summary(self) -> dict:
        return {
            "thetaLower": self.theta_bounds[0],
            "thetaUpper": self.theta_bounds[1],
            "types": list(self.types) if self.types is not None else ["numeric"] * self.d,
            "levels": [int(v) for v in self.levels],
            "theta": [float(t) for t in self.theta],
            "mu": self.mu,
            "sigma2": self.sigma2,
            "nugget": self.nugget,
            "nll": float(self.nll),
            "min": float(np.min(self.y)),
            "X": self.X.tolist(),
            "y": self.y.tolist(),
        }

    @classmethod
    def from_summary(cls, s: dict) -> "KrigingModel":
        return build_model(
            np.asarray(s["X"], dtype=float), np.asarray(s["y"], dtype=float),
            np.asarray(s["theta"], dtype=float), s.get("levels"), float(s["nugget"]),
            types=s.get("types"),
        )


def build_model(X, y, theta, levels=None, nugget: float = 0.0, types=None,
                theta_bounds=THETA_BOUNDS) -> KrigingModel:
    """Factorize at fixed ``theta``/``nugget``; no likelihood search."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    theta = np.asarray(theta, dtype=float).ravel()
    lv = _levels(levels, X.shape[1])
    f = _factorize(theta, X, y, lv, nugget)
    if f is None:
        raise DomainError("correlation matrix is not positive definite")
    n = X.shape[0]
    nll = 0.5 * n * np.log(f.sigma2) + 0.5 * f.logdet
    return KrigingModel(X, y, theta, f.mu, f.sigma2, nugget, f.chol, levels=lv, types=types,
                        theta_bounds=theta_bounds, nll=nll, _factor=f)


def kriging_fit(X, y, levels=None, control: KrigingControl | None = None,
                types=None) -> KrigingModel:
    """Maximum-likelihood fit of log10(theta) (and optionally log10(nugget)).

    Random search over the box, then Nelder-Mead from the ``starts`` best points;
    the total number of likelihood evaluations never exceeds ``control.budget``.
    Parameters whose correlation matrix is numerically singular (see ``MAX_CONDITION``)
    count as inadmissible, which keeps nugget-free fits interpolating.
    """
    control = control or KrigingControl()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if n < 2:
        raise DomainError("kriging_fit needs at least 2 points")
    if y.size != n:
        raise DomainError(f"{n} rows but {y.size} responses")
    if np.all(np.ptp(X, axis=0) == 0):
        raise DomainError("all design rows are identical")
    lv = _levels(levels, d)

    estimate_nugget = control.noisy and control.nugget is None
    fixed_nugget = 1e-8 if control.nugget is None else float(control.nugget)
    lo = [np.log10(control.theta_bounds[0])] * d
    hi = [np.log10(control.theta_bounds[1])] * d
    if estimate_nugget:
        lo.append(np.log10(control.nugget_bounds[0]))
        hi.append(np.log10(control.nugget_bounds[1]))
    lo, hi = np.array(lo), np.array(hi)

    terms = _distance_terms(X, X, lv)
    evals = 0

    def objective(z):
        nonlocal evals
        evals += 1
        z = np.clip(z, lo, hi)
        nug = 10.0 ** z[d] if estimate_nugget else fixed_nugget
        f = _factorize(10.0 ** z[:d], X, y, lv, nug, terms)
        if f is None:
            return 1e300
        diag = np.diag(f.chol[0])
        if (diag.max() / diag.min()) ** 2 > MAX_CONDITION:
            return 1e300
        return 0.5 * n * np.log(f.sigma2) + 0.5 * f.logdet

    rng = np.random.default_rng(control.seed)
    n_random = min(control.random_evals, control.budget)
    Z = lo + rng.random((n_random, lo.size)) * (hi - lo)
    Z[0] = (lo + hi) / 2
    scores = np.array([objective(z) for z in Z])
    order = np.argsort(scores, kind="stable")
    starts = Z[order[: control.starts]]

    best_z, best_val = Z[order[0]], scores[order[0]]
    per_start = (control.budget - evals) // max(len(starts), 1)
    if per_start > lo.size + 1:
        for z0 in starts:
            res = minimize(objective, z0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                           options={"maxfev": per_start, "xatol": 1e-4, "fatol": 1e-10})
            if res.fun < best_val:
                best_z, best_val = np.clip(res.x, lo, hi), res.fun
    if best_val >= 1e300:
        raise DomainError("no admissible correlation parameters (matrix never positive definite)")

    theta = 10.0 ** best_z[:d]
    nugget = 10.0 ** best_z[d] if estimate_nugget else fixed_nugget
    model = build_model(X, y, theta, lv, nugget, types=types, theta_bounds=control.theta_bounds)
    model.fit_evals = evals
    return model


def kriging_predict(model: KrigingModel, x) -> Prediction:
    return model.predict(x)


def expected_improvement(pred: Prediction, y_min: float):
    """EI of minimization under a normal predictive distribution; zero where variance is zero."""
    mean = np.asarray(pred.mean, dtype=float)
    var = np.asarray(pred.variance, dtype=float)
    s = np.sqrt(np.maximum(var, 0.0))
    gap = y_min - mean
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(s > 0, gap / np.where(s > 0, s, 1.0), 0.0)
        ei = gap * ndtr(z) + s * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    ei = np.where(s > 0, np.maximum(ei, 0.0), 0.0)
    return float(ei) if ei.ndim == 0 else ei
