"""Post-hoc analysis of a tuning run: summaries, linear model, regression tree, surrogate slices."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.special import betainc

from .errors import DomainError
from .kriging import KrigingModel
from .space import SearchSpace

SUMMARY_FIELDS = ("min", "q1", "median", "mean", "q3", "max")


def summary_stats(y) -> dict[str, float]:
    """Six-number summary; quartiles interpolate linearly between order statistics."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise DomainError("summary of an empty sample")
    q1, med, q3 = np.quantile(y, [0.25, 0.5, 0.75], method="linear")
    return dict(zip(SUMMARY_FIELDS, map(float, (y.min(), q1, med, y.mean(), q3, y.max()))))


# linear model

def student_t_cdf(t, nu: float):
    """P(T <= t) for Student's t with ``nu`` degrees of freedom."""
    t = np.asarray(t, dtype=float)
    tail = 0.5 * betainc(nu / 2.0, 0.5, nu / (nu + t * t))
    out = np.where(t >= 0, 1.0 - tail, tail)
    return float(out) if out.ndim == 0 else out


def f_sf(f: float, d1: float, d2: float) -> float:
    """Upper tail of the F distribution."""
    if f <= 0:
        return 1.0
    return float(betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))


@dataclass
class OlsSummary:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    residuals: np.ndarray
    sigma: float
    r2: float
    adj_r2: float
    f_stat: float
    df: tuple[int, int]
    f_pvalue: float

    def table(self) -> list[dict]:
        return [{"term": n, "estimate": c, "std_error": s, "t_value": t, "p_value": p}
                for n, c, s, t, p in zip(self.names, self.coef, self.se, self.t, self.p)]


def ols_fit(X, y, names: Sequence[str] | None = None) -> OlsSummary:
    """Least squares with intercept via pivoted QR; inference from the t and F distributions."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if y.size != n:
        raise DomainError(f"{n} rows but {y.size} responses")
    if n <= d + 1:
        raise DomainError(f"insufficient rows: need more than {d + 1}, have {n}")
    names = ["(Intercept)"] + list(names or [f"x{i + 1}" for i in range(d)])
    A = np.column_stack([np.ones(n), X])
    _, R_piv, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R_piv))
    rank = int(np.sum(diag > diag[0] * max(n, d + 1) * np.finfo(float).eps))
    if rank < d + 1:
        raise DomainError("design matrix is rank deficient; collinear columns: "
                          + ", ".join(names[i] for i in sorted(piv[rank:])))
    Q, R = np.linalg.qr(A)
    coef = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - A @ coef
    df_res = n - d - 1
    rss = float(resid @ resid)
    sigma2 = rss / df_res
    Rinv = scipy.linalg.solve_triangular(R, np.eye(d + 1))
    se = np.sqrt(sigma2 * np.sum(Rinv * Rinv, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.nan)
    t2 = np.nan_to_num(t) ** 2
    p = np.where(np.isfinite(t), betainc(df_res / 2.0, 0.5, df_res / (df_res + t2)), np.nan)
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    r2 = min(max(r2, 0.0), 1.0)
    adj = 1.0 - (1.0 - r2) * (n - 1) / df_res
    if rss > 0:
        f_stat = ((tss - rss) / d) / sigma2
        f_p = f_sf(f_stat, d, df_res)
    else:
        f_stat, f_p = np.inf, 0.0
    return OlsSummary(names, coef, se, t, p, resid, float(np.sqrt(sigma2)), r2, adj,
                      float(f_stat), (d, df_res), f_p)


# regression tree

@dataclass
class TreeNode:
    mean: float
    count: int
    sse: float
    depth: int
    dim: int | None = None
    threshold: float | None = None
    gain: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class RegressionTree:
    root: TreeNode
    d: int
    max_depth: int
    min_node: int
    names: list[str] = field(default_factory=list)

    def leaves(self) -> list[TreeNode]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend([node.right, node.left])
        return out

    def splits(self) -> list[TreeNode]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                out.append(node)
                stack.extend([node.right, node.left])
        return out

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.leaves())

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            node = self.root
            while not node.is_leaf:
                node = node.left if row[node.dim] <= node.threshold else node.right
            out[i] = node.mean
        return out

    def rows(self) -> list[dict]:
        """Preorder node table."""
        out = []

        def walk(node, nid, parent):
            out.append({"node": nid, "parent": parent, "depth": node.depth, "count": node.count,
                        "mean": node.mean, "sse": node.sse,
                        "split": "" if node.is_leaf else self._name(node.dim),
                        "threshold": "" if node.is_leaf else node.threshold,
                        "gain": node.gain})
            if not node.is_leaf:
                walk(node.left, 2 * nid, nid)
                walk(node.right, 2 * nid + 1, nid)

        walk(self.root, 1, 0)
        return out

    def _name(self, dim: int) -> str:
        return self.names[dim] if dim < len(self.names) else f"x{dim + 1}"


def _best_split(X: np.ndarray, y: np.ndarray, min_node: int):
    """Largest SSE reduction over (dimension, midpoint) candidates; ties keep the lowest
    dimension, then the lowest threshold."""
    n = y.size
    yc = y - y.mean()
    total = float(np.sum(yc * yc))
    tol = 1e-12 * total
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], yc[order]
        csum, csq = np.cumsum(ys), np.cumsum(ys * ys)
        for k in range(min_node, n - min_node + 1):
            if xs[k - 1] == xs[k]:
                continue
            nl, nr = k, n - k
            sl, sr = csum[k - 1], csum[-1] - csum[k - 1]
            ql, qr = csq[k - 1], csq[-1] - csq[k - 1]
            sse = (ql - sl * sl / nl) + (qr - sr * sr / nr)
            gain = total - sse
            if best is None or gain > best[0] + tol:
                best = (gain, j, 0.5 * (xs[k - 1] + xs[k]))
    return best, total


def tree_fit(X, y, max_depth: int = 4, min_node: int = 5, names=None) -> RegressionTree:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 2 * min_node:
        raise DomainError(f"need at least {2 * min_node} rows for min_node = {min_node}")

    def grow(idx, depth):
        ys = y[idx]
        node = TreeNode(float(ys.mean()), int(idx.size), float(np.sum((ys - ys.mean()) ** 2)), depth)
        if depth >= max_depth or idx.size < 2 * min_node:
            return node
        found, total = _best_split(X[idx], ys, min_node)
        if found is None or not found[0] > 1e-12 * max(total, 1e-300):
            return node
        gain, j, thr = found
        mask = X[idx, j] <= thr
        node.dim, node.threshold, node.gain = j, float(thr), float(gain)
        node.left = grow(idx[mask], depth + 1)
        node.right = grow(idx[~mask], depth + 1)
        return node

    return RegressionTree(grow(np.arange(y.size), 0), X.shape[1], max_depth, min_node,
                          list(names or []))


def tree_importance(tree: RegressionTree) -> tuple[np.ndarray, bool]:
    """Share of total SSE reduction attributed to each dimension.

    Returns ``(scores, has_splits)``; a single-leaf tree gives all zeros and ``False``.
    """
    scores = np.zeros(tree.d)
    for node in tree.splits():
        scores[node.dim] += node.gain
    total = scores.sum()
    if total <= 0:
        return scores, False
    return scores / total, True


# surrogate slices

@dataclass
class ContourGrid:
    dim_i: int
    dim_j: int
    u_i: np.ndarray
    u_j: np.ndarray
    mean: np.ndarray       # mean[a, b] at (u_i[a], u_j[b])
    variance: np.ndarray
    anchor: np.ndarray

    def rows(self, space: SearchSpace | None = None) -> list[dict]:
        out = []
        for a, ui in enumerate(self.u_i):
            for b, uj in enumerate(self.u_j):
                row = {"u_i": ui, "u_j": uj, "mean": self.mean[a, b], "variance": self.variance[a, b]}
                if space is not None:
                    pi, pj = space.params[self.dim_i], space.params[self.dim_j]
                    row[pi.name] = pi.unit_to_value(ui)
                    row[pj.name] = pj.unit_to_value(uj)
                out.append(row)
        return out


def contour_grid(model: KrigingModel, dim_i: int, dim_j: int, anchor, resolution: int = 20) -> ContourGrid:
    """Surrogate predictions over a resolution x resolution grid of cell midpoints in
    dimensions ``dim_i`` and ``dim_j``; other coordinates stay at ``anchor`` (unit scale)."""
    if dim_i == dim_j:
        raise DomainError("contour dimensions must differ")
    if resolution < 1:
        raise DomainError("resolution must be >= 1")
    anchor = np.asarray(anchor, dtype=float).ravel()
    if anchor.size != model.d or not (0 <= dim_i < model.d and 0 <= dim_j < model.d):
        raise DomainError("anchor or dimension index does not match the model")
    ticks = (np.arange(resolution) + 0.5) / resolution
    gi, gj = np.meshgrid(ticks, ticks, indexing="ij")
    Q = np.tile(anchor, (resolution * resolution, 1))
    Q[:, dim_i] = gi.ravel()
    Q[:, dim_j] = gj.ravel()
    pred = model.predict(Q)
    shape = (resolution, resolution)
    return ContourGrid(dim_i, dim_j, ticks, ticks.copy(), np.asarray(pred.mean).reshape(shape),
                       np.asarray(pred.variance).reshape(shape), anchor)


# box plots

def numeric_matrix(x: Sequence[Sequence[Any]], space: SearchSpace | None = None) -> np.ndarray:
    if space is None:
        return np.asarray(x, dtype=float)
    return np.array([space.numeric_row(row) for row in x], dtype=float).reshape(len(x), space.d)


def boxplot_stats(x, y, annotations: Mapping[str, Sequence[Any]] | None = None,
                  names: Sequence[str] | None = None, space: SearchSpace | None = None) -> dict:
    """Per-dimension five-number summaries of the evaluated configs plus named points."""
    X = numeric_matrix(x, space)
    if X.shape[0] == 0:
        raise DomainError("no evaluated configurations")
    names = list(names or (space.names if space else [f"x{i + 1}" for i in range(X.shape[1])]))
    dims = []
    for j, name in enumerate(names):
        s = summary_stats(X[:, j])
        dims.append({"name": name, **{k: s[k] for k in ("min", "q1", "median", "q3", "max")}})
    points = {label: list(cfg) for label, cfg in (annotations or {}).items()}
    return {"dimensions": dims, "annotations": points}


def default_annotations(result) -> dict[str, list]:
    """best (blue), worst overall (red), worst after the initial design (cyan)."""
    y = np.asarray(result.y, dtype=float)
    out = {"best": list(result.xbest), "worst": list(result.x[int(np.argmax(y))])}
    n0 = result.design_evals
    if y.size > n0:
        out["worst_tuning"] = list(result.x[n0 + int(np.argmax(y[n0:]))])
    return out


# tabular output

def write_table(path, rows: Sequence[Mapping[str, Any]], meta: Mapping[str, Any] | None = None,
                columns: Sequence[str] | None = None) -> Path:
    """CSV with a one-line ``# {json}`` metadata header."""
    path = Path(path)
    columns = list(columns or (rows[0].keys() if rows else []))
    with path.open("w", newline="") as fh:
        fh.write("# " + json.dumps(dict(meta or {}), default=_jsonable) + "\n")
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in columns})
    return path


def read_table(path) -> tuple[dict, list[dict]]:
    with Path(path).open() as fh:
        meta = json.loads(fh.readline()[2:])
        return meta, list(csv.DictReader(fh))


def _cell(v):
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v))
