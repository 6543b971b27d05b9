"""Covariate encoding and base-learner design blocks.

A *design block* is a basis matrix ``B`` together with a penalty ``P`` and a
penalty weight ``lam``; fitting it to a vector ``u`` solves
``(B'B + lam P) beta = B'u``. Penalised blocks are calibrated so that the
effective degrees of freedom ``tr(2S - S'S)`` of their smoother matrix
``S = B (B'B + lam P)^-1 B'`` hit a common target, which keeps the
component-wise selection in boosting from favouring flexible terms.

The module has two layers. Plain functions (``pspline_block``, ``mrf_block``,
...) build blocks from arrays. ``Term`` subclasses wrap the same
constructions with the state needed to rebuild the basis on new data and to
round-trip through JSON.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.interpolate import BSpline

__all__ = [
    "ColumnSchema",
    "Schema",
    "DesignBlock",
    "AdjacencyGraph",
    "OCTANTS",
    "octant",
    "circular_mean",
    "equidistant_knots",
    "bspline_basis",
    "difference_matrix",
    "effective_df",
    "calibrate_lambda",
    "pspline_block",
    "decompose_linear_smooth",
    "ridge_block",
    "ordinal_block",
    "mrf_block",
    "interaction_block",
    "aggregate_interval_bases",
    "Term",
    "InterceptTerm",
    "LinearTerm",
    "SmoothTerm",
    "RidgeTerm",
    "OrdinalTerm",
    "MRFTerm",
    "InteractionTerm",
    "TreeTerm",
    "term_from_dict",
    "build_terms",
]

OCTANTS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
DF_TOL = 1e-10
LOG_LAMBDA_RANGE = (-12.0, 12.0)
LOG_LAMBDA_MAX = 60.0


class DesignError(ValueError):
    """Invalid covariate data or block construction."""


# ---------------------------------------------------------------------------
# schema and encoding
# ---------------------------------------------------------------------------


def _level_str(v) -> str:
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return str(int(v))
    return str(v)


def octant(degrees) -> np.ndarray:
    """Bin compass degrees into 8 sectors; N covers [337.5, 22.5)."""
    d = np.mod(np.asarray(degrees, dtype=float), 360.0)
    return (np.floor(np.mod(d + 22.5, 360.0) / 45.0).astype(int)) % 8


def circular_mean(degrees: np.ndarray, axis: int = -1) -> np.ndarray:
    rad = np.deg2rad(np.asarray(degrees, dtype=float))
    ang = np.arctan2(np.mean(np.sin(rad), axis=axis), np.mean(np.cos(rad), axis=axis))
    return np.mod(np.rad2deg(ang), 360.0)


_REDUCERS = {
    "max": lambda m: np.max(m, axis=1),
    "min": lambda m: np.min(m, axis=1),
    "mean": lambda m: np.mean(m, axis=1),
    "sum": lambda m: np.sum(m, axis=1),
    "circmean": lambda m: circular_mean(m, axis=1),
}

KINDS = ("numeric", "categorical", "ordinal", "binary", "interval")


@dataclass
class ColumnSchema:
    """One modelling variable and how it is derived from raw columns.

    ``columns`` lists the raw source columns (defaults to ``[name]``).
    Multi-column variables are reduced row-wise with ``reduce`` unless the
    kind is ``interval``, which keeps all columns for basis aggregation.
    ``bin="octant"`` turns degrees into the eight compass sectors.
    """

    name: str
    kind: str
    columns: list[str] | None = None
    reduce: str | None = None
    bin: str | None = None
    levels: list[str] | None = None
    positive: Any = None
    mean: float | None = None
    sd: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DesignError(f"{self.name}: unknown kind {self.kind!r}")
        if self.columns is None:
            self.columns = [self.name]
        self.columns = list(self.columns)
        if self.bin == "octant" and self.levels is None:
            self.levels = list(OCTANTS)
        if self.levels is not None:
            self.levels = [_level_str(v) for v in self.levels]
            if len(self.levels) == 0 or len(set(self.levels)) != len(self.levels):
                raise DesignError(f"{self.name}: levels must be nonempty and unique")
        if len(self.columns) > 1 and self.kind != "interval" and self.reduce is None:
            raise DesignError(f"{self.name}: {len(self.columns)} source columns need a reduce rule")
        if self.reduce is not None and self.reduce not in _REDUCERS:
            raise DesignError(f"{self.name}: unknown reduce {self.reduce!r}")

    @property
    def is_categorical(self) -> bool:
        return self.kind in ("categorical", "ordinal")

    def raw(self, frame: pd.DataFrame) -> np.ndarray:
        """Derived raw values before standardisation or level coding."""
        missing = [c for c in self.columns if c not in frame.columns]
        if missing:
            raise DesignError(f"{self.name}: missing column(s) {missing}")
        sub = frame[self.columns]
        if sub.isna().any().any():
            bad = sub.columns[sub.isna().any()].tolist()
            raise DesignError(f"{self.name}: missing values in {bad}")
        if self.kind == "interval":
            return sub.to_numpy(dtype=float)
        if len(self.columns) == 1 and self.reduce is None:
            vals = sub.iloc[:, 0].to_numpy()
        else:
            vals = _REDUCERS[self.reduce](sub.to_numpy(dtype=float))
        if self.bin == "octant":
            return np.array([OCTANTS[i] for i in octant(vals)], dtype=object)
        return vals

    def fit(self, frame: pd.DataFrame) -> "ColumnSchema":
        vals = self.raw(frame)
        if self.kind in ("numeric", "interval"):
            v = np.asarray(vals, dtype=float)
            self.mean = float(np.mean(v))
            self.sd = float(np.std(v))
            if not self.sd > 0:
                raise DesignError(f"{self.name}: zero spread, cannot standardise")
        elif self.is_categorical and self.levels is None:
            uniq = sorted({_level_str(v) for v in vals}, key=_sort_key)
            self.levels = uniq
        return self

    def encode(self, frame: pd.DataFrame) -> np.ndarray:
        vals = self.raw(frame)
        if self.kind in ("numeric", "interval"):
            if self.mean is None:
                raise DesignError(f"{self.name}: schema not fitted")
            return (np.asarray(vals, dtype=float) - self.mean) / self.sd
        if self.kind == "binary":
            if self.positive is not None:
                return (np.array([_level_str(v) for v in vals]) == _level_str(self.positive)).astype(float)
            v = np.asarray(vals, dtype=float)
            if np.any((v != 0) & (v != 1)):
                raise DesignError(f"{self.name}: binary column must be 0/1")
            return v
        index = {lev: i for i, lev in enumerate(self.levels)}
        codes = np.empty(len(vals), dtype=int)
        for i, v in enumerate(vals):
            key = _level_str(v)
            if key not in index:
                raise DesignError(f"{self.name}: unseen level {key!r}")
            codes[i] = index[key]
        return codes

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("name", "kind", "columns", "reduce", "bin", "levels", "positive", "mean", "sd")}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        return cls(**d)


def _sort_key(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


class Schema:
    """Ordered collection of :class:`ColumnSchema` objects."""

    def __init__(self, columns: Sequence[ColumnSchema]):
        self.columns = {c.name: c for c in columns}

    def __getitem__(self, name: str) -> ColumnSchema:
        try:
            return self.columns[name]
        except KeyError:
            raise DesignError(f"unknown variable {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self.columns

    def fit(self, frame: pd.DataFrame, names: Sequence[str] | None = None) -> "Schema":
        for name in names if names is not None else self.columns:
            self[name].fit(frame)
        return self

    def encode(self, frame: pd.DataFrame, names: Sequence[str] | None = None) -> dict[str, np.ndarray]:
        """Encode the named variables; numeric ones use the stored training moments."""
        names = list(names if names is not None else self.columns)
        return {name: self[name].encode(frame) for name in names}

    def to_list(self) -> list[dict]:
        return [c.to_dict() for c in self.columns.values()]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "Schema":
        return cls([ColumnSchema.from_dict(d) for d in items])


# ---------------------------------------------------------------------------
# blocks, penalties and degrees of freedom
# ---------------------------------------------------------------------------


@dataclass
class DesignBlock:
    """Basis ``B`` (n x p), penalty ``P`` (p x p) and calibrated weight ``lam``."""

    term_id: str
    B: np.ndarray
    P: np.ndarray
    lam: float = 0.0
    df_target: float | None = None
    standardized: bool = True
    info: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.B.shape[1]

    def df(self, lam: float | None = None) -> float:
        return effective_df(self.B.T @ self.B, self.P, self.lam if lam is None else lam)


def difference_matrix(p: int, order: int) -> np.ndarray:
    if order == 0:
        return np.eye(p)
    return np.diff(np.eye(p), n=order, axis=0)


def equidistant_knots(lo: float, hi: float, n_knots: int, degree: int) -> np.ndarray:
    """Full knot vector with ``n_knots`` interior knots and ``degree`` extra per side."""
    if not hi > lo:
        raise DesignError("no spread for spline")
    h = (hi - lo) / (n_knots + 1)
    return lo + h * np.arange(-degree, n_knots + 2 + degree, dtype=float)


def bspline_basis(x, knots: np.ndarray, degree: int) -> np.ndarray:
    """B-spline design matrix; ``x`` is clamped to the boundary knots."""
    x = np.asarray(x, dtype=float)
    lo, hi = knots[degree], knots[len(knots) - degree - 1]
    xc = np.clip(x, lo, hi)
    return BSpline.design_matrix(xc, knots, degree).toarray()


class _DfSolver:
    """Demmler-Reinsch form of df(lam) when ``A = B'B`` is positive definite."""

    def __init__(self, A: np.ndarray, P: np.ndarray):
        self.A, self.P = A, P
        self.rank = int(np.linalg.matrix_rank(A, hermitian=True))
        self.d = None
        try:
            Lc = linalg.cholesky(A, lower=True)
        except linalg.LinAlgError:
            return
        Li = linalg.solve_triangular(Lc, np.eye(A.shape[0]), lower=True)
        M = Li @ P @ Li.T
        self.d = np.clip(linalg.eigvalsh(0.5 * (M + M.T)), 0.0, None)

    def __call__(self, lam: float) -> float:
        if lam == 0:
            return float(self.rank)
        if self.d is not None:
            s = 1.0 / (1.0 + lam * self.d)
            return float(np.sum(2.0 * s - s * s))
        H = np.linalg.lstsq(self.A + lam * self.P, self.A, rcond=None)[0]
        return float(2.0 * np.trace(H) - np.trace(H @ H))

    def df_inf(self) -> float:
        if self.d is not None:
            return float(np.sum(self.d <= 1e-10 * max(self.d.max(), 1.0)))
        return self(1e12 * self._scale())

    def _scale(self) -> float:
        tp = np.trace(self.P)
        return float(np.trace(self.A) / tp) if tp > 0 else 1.0


def effective_df(A: np.ndarray, P: np.ndarray, lam: float) -> float:
    """``tr(2S - S'S)`` computed in coefficient space from ``A = B'B``.

    With ``H = (A + lam P)^+ A`` one has ``tr(S) = tr(H)`` and
    ``tr(S'S) = tr(H^2)``; at ``lam = 0`` this is the rank of ``B``.
    """
    return _DfSolver(np.asarray(A, float), np.asarray(P, float))(float(lam))


def calibrate_lambda(A: np.ndarray, P: np.ndarray, df_target: float, max_iter: int = 200) -> float:
    """Penalty weight giving ``df(lam) = df_target``.

    Bisection on ``log(lam / s)`` over ``[-12, 12]`` (the upper end grows
    in steps up to 60 when needed) where
    ``s = tr(A) / tr(P)`` puts the bracket on the scale of the data.
    """
    solver = _DfSolver(np.asarray(A, float), np.asarray(P, float))
    if df_target >= solver.rank:
        return 0.0
    if not np.any(P):
        raise DesignError("zero penalty: df target below rank is unattainable")
    scale = solver._scale()
    lo, hi = LOG_LAMBDA_RANGE
    grid = np.linspace(lo, hi, 9)
    dfs = [solver(scale * math.exp(t)) for t in grid]
    if np.any(np.diff(dfs) > 1e-8):
        raise DesignError("df is not monotone in lambda")
    # weakly penalised directions can need a much heavier penalty
    top = dfs[-1]
    while top > df_target and hi < LOG_LAMBDA_MAX:
        lo, hi = hi, hi + 6.0
        top = solver(scale * math.exp(hi))
    if top > df_target:
        raise DesignError(
            f"df target {df_target} unattainable (df at largest lambda = {top:.6g})"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = solver(scale * math.exp(mid))
        if abs(val - df_target) < DF_TOL:
            break
        if val > df_target:
            lo = mid
        else:
            hi = mid
    return scale * math.exp(mid)


def _finish(block: DesignBlock) -> DesignBlock:
    if block.df_target is not None:
        block.lam = calibrate_lambda(block.B.T @ block.B, block.P, block.df_target)
    return block


def pspline_block(x, n_knots: int = 20, degree: int = 3, penalty_order: int = 2,
                  df_target: float | None = None, term_id: str = "pspline") -> DesignBlock:
    """Uncentred P-spline: equidistant B-splines with a difference penalty."""
    x = np.asarray(x, dtype=float)
    if np.unique(x).size < 2:
        raise DesignError("no spread for spline")
    n_basis = n_knots + degree + 1
    if n_knots < 1 or n_basis <= penalty_order:
        raise DesignError("too few knots for the penalty order")
    knots = equidistant_knots(x.min(), x.max(), n_knots, degree)
    B = bspline_basis(x, knots, degree)
    D = difference_matrix(n_basis, penalty_order)
    block = DesignBlock(term_id, B, D.T @ D, df_target=df_target,
                        info={"knots": knots, "degree": degree})
    return _finish(block)


def _null_space_split(P: np.ndarray, rtol: float = 1e-10):
    w, V = linalg.eigh(0.5 * (P + P.T))
    pos = w > rtol * max(w.max(), 1.0)
    return V[:, pos], w[pos], V[:, ~pos]


def _centered_smooth(Bs: np.ndarray, x_lin: np.ndarray, penalty_order: int):
    """Drop the polynomial null space and orthogonalise against ``[1, x]``."""
    D = difference_matrix(Bs.shape[1], penalty_order)
    G, w, _ = _null_space_split(D.T @ D)
    B1 = Bs @ G
    X0 = np.column_stack([np.ones(len(x_lin)), x_lin])
    C = np.linalg.lstsq(X0, B1, rcond=None)[0]
    return B1 - X0 @ C, np.diag(w), G, C


def decompose_linear_smooth(x, n_knots: int = 20, degree: int = 3, penalty_order: int = 2,
                            df_target: float = 1.0, name: str = "x"):
    """Split a numeric effect into an unpenalised slope and a centred smooth.

    The smooth block excludes the constant and linear parts and is
    calibrated to ``df_target``.
    """
    x = np.asarray(x, dtype=float)
    sd = x.std()
    if not sd > 0:
        raise DesignError("no spread for spline")
    xs = (x - x.mean()) / sd
    linear = DesignBlock(f"linear({name})", xs[:, None], np.zeros((1, 1)))
    knots = equidistant_knots(xs.min(), xs.max(), n_knots, degree)
    Bs = bspline_basis(xs, knots, degree)
    B, P, _, _ = _centered_smooth(Bs, xs, penalty_order)
    smooth = _finish(DesignBlock(f"smooth({name})", B, P, df_target=df_target))
    return linear, smooth


def _one_hot(codes: np.ndarray, n_levels: int) -> np.ndarray:
    out = np.zeros((len(codes), n_levels))
    out[np.arange(len(codes)), codes] = 1.0
    return out


def ridge_block(codes, n_levels: int, df_target: float = 1.0, term_id: str = "ridge") -> DesignBlock:
    B = _one_hot(np.asarray(codes, dtype=int), n_levels)
    return _finish(DesignBlock(term_id, B, np.eye(n_levels), df_target=df_target))


def ordinal_penalty(n_levels: int) -> np.ndarray:
    """Second-order difference penalty plus a unit ridge on its null space.

    The difference penalty alone leaves constant and linear level trends
    unpenalised (df >= 2); the null-space ridge lets the block reach df = 1.
    """
    D = difference_matrix(n_levels, 2) if n_levels > 2 else np.zeros((0, n_levels))
    P = D.T @ D
    _, _, N = _null_space_split(P) if n_levels > 2 else (None, None, np.eye(n_levels))
    return P + N @ N.T


def ordinal_block(codes, n_levels: int, df_target: float = 1.0, term_id: str = "ordinal") -> DesignBlock:
    B = _one_hot(np.asarray(codes, dtype=int), n_levels)
    return _finish(DesignBlock(term_id, B, ordinal_penalty(n_levels), df_target=df_target))


@dataclass
class AdjacencyGraph:
    """Undirected region graph; its Laplacian is the MRF penalty."""

    regions: list[str]
    edges: list[tuple[str, str]]

    def __post_init__(self):
        self.regions = [str(r) for r in self.regions]
        idx = set(self.regions)
        clean = []
        for a, b in self.edges:
            a, b = str(a), str(b)
            if a not in idx or b not in idx:
                raise DesignError(f"edge ({a}, {b}) references unknown region")
            if a != b:
                clean.append((a, b) if a < b else (b, a))
        self.edges = sorted(set(clean))

    @classmethod
    def from_file(cls, path: str | Path, regions: Sequence[str] | None = None) -> "AdjacencyGraph":
        """Read ``regionA,regionB`` lines; regions default to those named in edges."""
        edges = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise DesignError(f"bad adjacency line: {line!r}")
            edges.append((parts[0], parts[1]))
        names = list(regions) if regions is not None else sorted({r for e in edges for r in e})
        return cls(names, edges)

    def to_text(self) -> str:
        return "".join(f"{a},{b}\n" for a, b in self.edges)

    def laplacian(self) -> np.ndarray:
        index = {r: i for i, r in enumerate(self.regions)}
        L = np.zeros((len(self.regions), len(self.regions)))
        for a, b in self.edges:
            i, j = index[a], index[b]
            L[i, j] -= 1.0
            L[j, i] -= 1.0
            L[i, i] += 1.0
            L[j, j] += 1.0
        return L

    def n_components(self) -> int:
        parent = list(range(len(self.regions)))
        index = {r: i for i, r in enumerate(self.regions)}

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in self.edges:
            parent[find(index[a])] = find(index[b])
        return len({find(i) for i in range(len(self.regions))})


def _mrf_reparam(graph: AdjacencyGraph):
    L = graph.laplacian()
    if not np.any(L):
        return None, None
    G, w, _ = _null_space_split(L)
    return G, w


def mrf_block(regions, graph: AdjacencyGraph, df_target: float = 1.0, term_id: str = "mrf") -> DesignBlock:
    """Region effect with a graph-Laplacian penalty, centred on its null space.

    A graph without edges has a zero Laplacian; the block then falls back
    to a ridge penalty on the region indicators.
    """
    index = {r: i for i, r in enumerate(graph.regions)}
    codes = []
    for r in regions:
        key = _level_str(r)
        if key not in index:
            raise DesignError(f"region {key!r} not in adjacency graph")
        codes.append(index[key])
    ind = _one_hot(np.array(codes, dtype=int), len(graph.regions))
    G, w = _mrf_reparam(graph)
    if G is None:
        warnings.warn("adjacency graph has no edges; MRF falls back to a ridge penalty", stacklevel=2)
        return _finish(DesignBlock(term_id, ind, np.eye(ind.shape[1]), df_target=df_target,
                                   info={"fallback": "ridge"}))
    block = DesignBlock(term_id, ind @ G, np.diag(w), df_target=df_target, info={"G": G})
    return _finish(block)


def interaction_block(components: Sequence[DesignBlock], df_target: float = 1.0,
                      term_id: str = "interaction", drop_empty: bool = True) -> DesignBlock:
    """Row-wise Kronecker product of encoded components with a ridge penalty.

    Components flagged ``standardized=False`` are raw numeric columns; more
    than one of them would mix units under the isotropic penalty.
    """
    raw = [c.term_id for c in components if not c.standardized]
    if len(raw) > 1:
        raise DesignError(f"interaction of unstandardised numeric blocks {raw}; standardise first")
    B = np.ones((components[0].B.shape[0], 1))
    for c in components:
        B = (B[:, :, None] * c.B[:, None, :]).reshape(B.shape[0], -1)
    keep = np.any(B != 0, axis=0)
    if drop_empty and not np.all(keep):
        warnings.warn(f"{term_id}: dropping {int((~keep).sum())} empty interaction column(s)",
                      stacklevel=2)
        B = B[:, keep]
    block = DesignBlock(term_id, B, np.eye(B.shape[1]), df_target=df_target, info={"keep": keep})
    return _finish(block)


def aggregate_interval_bases(xs, kind: str = "smooth", knots=None, n_knots: int = 20,
                             degree: int = 3, penalty_order: int = 2,
                             term_id: str = "aggregate") -> DesignBlock:
    """Shared-effect block for a covariate recorded over ``T`` intervals.

    ``kind="linear"`` sums the interval values. ``kind="smooth"`` sums the
    interval B-spline bases built on one knot vector; the difference
    penalty is unchanged. ``knots`` may be a single vector or one per
    interval, in which case all must agree.
    """
    X = np.column_stack([np.asarray(x, dtype=float) for x in xs]) if not isinstance(xs, np.ndarray) \
        else np.asarray(xs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T = X.shape[1]
    if kind == "linear":
        return DesignBlock(term_id, X.sum(axis=1)[:, None], np.zeros((1, 1)))
    if kind != "smooth":
        raise DesignError(f"unknown aggregation kind {kind!r}")
    if knots is None:
        knots = equidistant_knots(X.min(), X.max(), n_knots, degree)
    elif isinstance(knots, (list, tuple)) and len(knots) and np.ndim(knots[0]) == 1:
        first = np.asarray(knots[0], dtype=float)
        for kv in knots[1:]:
            kv = np.asarray(kv, dtype=float)
            if kv.shape != first.shape or not np.array_equal(kv, first):
                raise DesignError("interval bases use mismatched knot vectors")
        if len(knots) != T:
            raise DesignError("one knot vector per interval expected")
        knots = first
    knots = np.asarray(knots, dtype=float)
    B = sum(bspline_basis(X[:, t], knots, degree) for t in range(T))
    D = difference_matrix(B.shape[1], penalty_order)
    return DesignBlock(term_id, B, D.T @ D, info={"knots": knots, "T": T})


# ---------------------------------------------------------------------------
# fitted terms (rebuildable on new data, JSON round-trip)
# ---------------------------------------------------------------------------


def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


class Term:
    """A base learner's covariate construction with its fitted state."""

    kind = ""
    penalized = True

    def __init__(self, variables: Sequence[str] = (), df_target: float = 1.0, params=None):
        self.variables = list(variables)
        self.df_target = df_target
        self.params = None if params is None else list(params)
        self.lam = 0.0
        self.P: np.ndarray | None = None

    @property
    def term_id(self) -> str:
        return f"{self.kind}({':'.join(self.variables)})" if self.variables else self.kind

    @property
    def label(self) -> str:
        """Learner class for importance tables."""
        return "linear" if self.kind in ("intercept", "linear", "ridge", "interaction") else \
            ("tree" if self.kind == "tree" else "smooth")

    def applies_to(self, param: str) -> bool:
        return self.params is None or param in self.params

    def fit(self, enc: dict, schema: Schema) -> DesignBlock:
        raise NotImplementedError

    def transform(self, enc: dict, schema: Schema) -> np.ndarray:
        raise NotImplementedError

    def _block(self, B: np.ndarray, P: np.ndarray, calibrate: bool = True) -> DesignBlock:
        block = DesignBlock(self.term_id, B, P, df_target=self.df_target if calibrate else None)
        _finish(block)
        self.lam, self.P = block.lam, P
        return block

    def state(self) -> dict:
        return {}

    def load_state(self, d: dict) -> None:
        pass

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "variables": self.variables, "df_target": self.df_target,
               "params": self.params, "lam": self.lam,
               "P": _arr(self.P)}
        out.update(self.state())
        return out


class InterceptTerm(Term):
    kind = "intercept"
    penalized = False

    def fit(self, enc, schema):
        n = _n_rows(enc)
        return self._block(np.ones((n, 1)), np.zeros((1, 1)), calibrate=False)

    def transform(self, enc, schema):
        return np.ones((_n_rows(enc), 1))


def _n_rows(enc: dict) -> int:
    if "__n__" in enc:
        return int(enc["__n__"])
    for v in enc.values():
        return len(v)
    raise DesignError("empty encoding")


class LinearTerm(Term):
    """Unpenalised slope on a standardised numeric, binary or interval-sum variable."""

    kind = "linear"
    penalized = False

    def _x(self, enc, schema):
        (name,) = self.variables
        col, v = schema[name], enc[name]
        if col.kind == "interval":
            return v.sum(axis=1)
        if col.is_categorical:
            raise DesignError(f"linear term on categorical {name!r}; use ridge or ordinal")
        return np.asarray(v, dtype=float)

    def fit(self, enc, schema):
        return self._block(self._x(enc, schema)[:, None], np.zeros((1, 1)), calibrate=False)

    def transform(self, enc, schema):
        return self._x(enc, schema)[:, None]


class SmoothTerm(Term):
    """Centred P-spline: no constant or linear part, df calibrated.

    Interval variables use one knot vector over the pooled range and sum the
    interval bases.
    """

    kind = "smooth"

    def __init__(self, variables, df_target=1.0, params=None, n_knots=20, degree=3, penalty_order=2):
        super().__init__(variables, df_target, params)
        self.n_knots, self.degree, self.penalty_order = n_knots, degree, penalty_order
        self.knots = self.G = self.C = None

    def _raw(self, enc, schema):
        (name,) = self.variables
        v = np.asarray(enc[name], dtype=float)
        if schema[name].is_categorical:
            raise DesignError(f"smooth term on categorical {name!r}")
        return v if v.ndim == 2 else v[:, None]

    def _basis(self, X):
        return sum(bspline_basis(X[:, t], self.knots, self.degree) for t in range(X.shape[1]))

    def fit(self, enc, schema):
        X = self._raw(enc, schema)
        if np.unique(X).size < 2:
            raise DesignError(f"{self.term_id}: no spread for spline")
        self.knots = equidistant_knots(X.min(), X.max(), self.n_knots, self.degree)
        B, P, self.G, self.C = _centered_smooth(self._basis(X), X.sum(axis=1), self.penalty_order)
        return self._block(B, P)

    def transform(self, enc, schema):
        X = self._raw(enc, schema)
        X0 = np.column_stack([np.ones(len(X)), X.sum(axis=1)])
        return self._basis(X) @ self.G - X0 @ self.C

    def state(self):
        return {"n_knots": self.n_knots, "degree": self.degree, "penalty_order": self.penalty_order,
                "knots": _arr(self.knots), "G": _arr(self.G), "C": _arr(self.C)}

    def load_state(self, d):
        self.knots, self.G, self.C = (np.asarray(d[k], dtype=float) for k in ("knots", "G", "C"))


class RidgeTerm(Term):
    kind = "ridge"

    def _codes(self, enc, schema):
        (name,) = self.variables
        if not schema[name].is_categorical:
            raise DesignError(f"ridge term needs a categorical variable, got {name!r}")
        return enc[name], len(schema[name].levels)

    def fit(self, enc, schema):
        codes, L = self._codes(enc, schema)
        return self._block(_one_hot(codes, L), np.eye(L))

    def transform(self, enc, schema):
        codes, L = self._codes(enc, schema)
        return _one_hot(codes, L)


class OrdinalTerm(RidgeTerm):
    kind = "ordinal"

    def fit(self, enc, schema):
        codes, L = self._codes(enc, schema)
        return self._block(_one_hot(codes, L), ordinal_penalty(L))


class MRFTerm(Term):
    """Markov random field over regions; needs an :class:`AdjacencyGraph`."""

    kind = "mrf"

    def __init__(self, variables, df_target=1.0, params=None, graph: AdjacencyGraph | None = None):
        super().__init__(variables, df_target, params)
        self.graph = graph
        self.G = None

    def _ind(self, enc, schema):
        if self.graph is None:
            raise DesignError("adjacency required for MRF term")
        (name,) = self.variables
        levels = schema[name].levels
        index = {r: i for i, r in enumerate(self.graph.regions)}
        missing = [lev for lev in levels if lev not in index]
        if missing:
            raise DesignError(f"region {missing[0]!r} not in adjacency graph")
        codes = np.array([index[levels[c]] for c in enc[name]], dtype=int)
        return _one_hot(codes, len(self.graph.regions))

    def fit(self, enc, schema):
        ind = self._ind(enc, schema)
        G, w = _mrf_reparam(self.graph)
        if G is None:
            warnings.warn("adjacency graph has no edges; MRF falls back to a ridge penalty",
                          stacklevel=2)
            self.G = np.eye(ind.shape[1])
            return self._block(ind, np.eye(ind.shape[1]))
        if self.graph.n_components() > 1:
            warnings.warn("adjacency graph is disconnected; between-component contrasts are "
                          "left to other region terms", stacklevel=2)
        self.G = G
        return self._block(ind @ G, np.diag(w))

    def transform(self, enc, schema):
        return self._ind(enc, schema) @ self.G

    def region_effects(self, coef: np.ndarray) -> dict[str, float]:
        vals = self.G @ np.asarray(coef, dtype=float)
        return dict(zip(self.graph.regions, vals.tolist()))

    def state(self):
        return {"G": _arr(self.G),
                "graph": {"regions": self.graph.regions, "edges": [list(e) for e in self.graph.edges]}}

    def load_state(self, d):
        self.G = np.asarray(d["G"], dtype=float)
        g = d["graph"]
        self.graph = AdjacencyGraph(g["regions"], [tuple(e) for e in g["edges"]])


class InteractionTerm(Term):
    """Ridge-penalised product of categorical, binary and standardised numeric parts."""

    kind = "interaction"

    def __init__(self, variables, df_target=1.0, params=None):
        super().__init__(variables, df_target, params)
        self.keep = None

    def _parts(self, enc, schema):
        parts = []
        for name in self.variables:
            col, v = schema[name], enc[name]
            if col.is_categorical:
                B = _one_hot(v, len(col.levels))
            elif col.kind == "interval":
                B = v.sum(axis=1)[:, None]
            else:
                B = np.asarray(v, dtype=float)[:, None]
            parts.append(DesignBlock(name, B, np.eye(B.shape[1])))
        return parts

    def fit(self, enc, schema):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            block = interaction_block(self._parts(enc, schema), df_target=None, term_id=self.term_id)
        for w in caught:
            warnings.warn(str(w.message), stacklevel=2)
        self.keep = block.info["keep"]
        return self._block(block.B, block.P)

    def transform(self, enc, schema):
        block = interaction_block(self._parts(enc, schema), df_target=None, drop_empty=False)
        return block.B[:, self.keep]

    def state(self):
        return {"keep": np.asarray(self.keep, dtype=bool).tolist()}

    def load_state(self, d):
        self.keep = np.asarray(d["keep"], dtype=bool)


class TreeTerm(Term):
    """Covariate matrix for a tree learner: numerics, level codes, binaries."""

    kind = "tree"
    penalized = False

    def __init__(self, variables, df_target=1.0, params=None):
        super().__init__(variables, df_target, params)
        self.columns: list[str] = []

    def _matrix(self, enc, schema):
        cols, names = [], []
        for name in self.variables:
            col, v = schema[name], enc[name]
            if col.kind == "categorical":
                oh = _one_hot(v, len(col.levels))
                cols.extend(oh.T)
                names.extend(f"{name}={lev}" for lev in col.levels)
            elif col.kind == "interval":
                cols.extend(np.asarray(v, dtype=float).T)
                names.extend(col.columns)
            else:
                cols.append(np.asarray(v, dtype=float))
                names.append(name)
        return np.column_stack(cols), names

    def fit(self, enc, schema):
        X, self.columns = self._matrix(enc, schema)
        self.P = np.zeros((0, 0))
        return DesignBlock(self.term_id, X, self.P)

    def transform(self, enc, schema):
        return self._matrix(enc, schema)[0]

    def state(self):
        return {"columns": self.columns}

    def load_state(self, d):
        self.columns = list(d["columns"])


_TERM_TYPES = {t.kind: t for t in (InterceptTerm, LinearTerm, SmoothTerm, RidgeTerm, OrdinalTerm,
                                  MRFTerm, InteractionTerm, TreeTerm)}


def term_from_dict(d: dict) -> Term:
    cls = _TERM_TYPES[d["kind"]]
    kw = {}
    if cls is SmoothTerm:
        kw = {k: d[k] for k in ("n_knots", "degree", "penalty_order")}
    t = cls(d["variables"], d["df_target"], d["params"], **kw)
    t.lam = d["lam"]
    t.P = None if d["P"] is None else np.asarray(d["P"], dtype=float)
    t.load_state(d)
    return t


def build_terms(specs: Sequence[dict], graph: AdjacencyGraph | None = None) -> list[Term]:
    """Expand term configuration entries into unfitted :class:`Term` objects.

    ``{"kind": "linear_smooth", "var": x}`` yields a linear and a centred
    smooth term. Interactions of three variables with ``"hierarchical": true``
    also add every pairwise interaction. Duplicate terms are dropped.
    """
    out: list[Term] = []
    seen: set[tuple] = set()

    def add(t: Term):
        key = (t.term_id, tuple(t.params or ()))
        if key not in seen:
            seen.add(key)
            out.append(t)

    for spec in specs:
        spec = dict(spec)
        kind = spec.pop("kind")
        params = spec.pop("params", None)
        df = spec.pop("df", 1.0)
        names = spec.pop("vars", None) or ([spec.pop("var")] if "var" in spec else [])
        if kind == "intercept":
            add(InterceptTerm((), df, params))
        elif kind == "linear":
            add(LinearTerm(names, df, params))
        elif kind == "smooth":
            add(SmoothTerm(names, df, params, **spec))
        elif kind == "linear_smooth":
            add(LinearTerm(names, df, params))
            add(SmoothTerm(names, df, params, **spec))
        elif kind == "ridge":
            add(RidgeTerm(names, df, params))
        elif kind == "ordinal":
            add(OrdinalTerm(names, df, params))
        elif kind == "mrf":
            if graph is None:
                raise DesignError("adjacency required for MRF term")
            add(MRFTerm(names, df, params, graph=graph))
        elif kind == "interaction":
            if spec.pop("hierarchical", False) and len(names) > 2:
                for i in range(len(names)):
                    for j in range(i + 1, len(names)):
                        add(InteractionTerm([names[i], names[j]], df, params))
            add(InteractionTerm(names, df, params))
        elif kind == "tree":
            add(TreeTerm(names, df, params))
        else:
            raise DesignError(f"unknown term kind {kind!r}")
    return out
