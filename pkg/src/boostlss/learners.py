"""Base learners fitted to a gradient vector.

Penalised least-squares learners cache the Cholesky factor of
``B'B + lam P`` because boosting refits every block at every iteration with
only the response changing. Trees are greedy binary regression trees that
minimise the children's residual sum of squares.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .design import DesignBlock, DesignError

__all__ = ["LearnerFit", "PenalizedLearner", "fit_penalized", "TreeConfig", "Tree",
           "TreeLearner", "fit_tree"]


@dataclass
class LearnerFit:
    """Result of fitting one base learner to one gradient vector."""

    term_id: str
    kind: str
    rss: float
    fitted: np.ndarray
    coef: np.ndarray | None = None
    tree: "Tree | None" = None

    def predict(self, B: np.ndarray) -> np.ndarray:
        """Contribution for a basis (penalised) or covariate matrix (tree)."""
        if self.kind == "tree":
            return self.tree.predict(B)
        return B @ self.coef


class PenalizedLearner:
    """Penalised least squares on a fixed block, factorised once."""

    JITTER = 1e-10

    def __init__(self, block: DesignBlock):
        self.block = block
        self.B = np.ascontiguousarray(block.B, dtype=float)
        M = self.B.T @ self.B + block.lam * block.P
        M = 0.5 * (M + M.T)
        try:
            self.factor = linalg.cho_factor(M, lower=True)
        except linalg.LinAlgError:
            jitter = self.JITTER * max(np.trace(M) / M.shape[0], 1.0)
            try:
                self.factor = linalg.cho_factor(M + jitter * np.eye(M.shape[0]), lower=True)
            except linalg.LinAlgError:
                raise DesignError(f"{block.term_id}: penalised system is singular") from None

    def fit(self, u: np.ndarray) -> LearnerFit:
        beta = linalg.cho_solve(self.factor, self.B.T @ u)
        fitted = self.B @ beta
        r = u - fitted
        return LearnerFit(self.block.term_id, "penalized_ls", float(r @ r), fitted, coef=beta)


def fit_penalized(block: DesignBlock, u) -> LearnerFit:
    """``beta = (B'B + lam P)^-1 B'u`` with ``rss = ||u - B beta||^2``."""
    return PenalizedLearner(block).fit(np.asarray(u, dtype=float))


# ---------------------------------------------------------------------------
# trees
# ---------------------------------------------------------------------------


@dataclass
class TreeConfig:
    """Tree hyperparameters. Depth counts edges from the root (root = 0)."""

    max_depth: int = 2
    min_split: int = 200
    min_leaf: int = 50
    mtry: int = 8
    min_gain: float = 0.0

    def __post_init__(self):
        if not 1 <= self.max_depth:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1 or self.mtry < 1:
            raise ValueError("min_leaf and mtry must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("max_depth", "min_split", "min_leaf", "mtry", "min_gain")}


@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def _add(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.value) - 1

    @property
    def n_leaves(self) -> int:
        return sum(f < 0 for f in self.feature)

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=int)
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        active = feat[node] >= 0
        while np.any(active):
            idx = np.nonzero(active)[0]
            f = feat[node[idx]]
            go_left = X[idx, f] <= thr[node[idx]]
            node[idx] = np.where(go_left, left[node[idx]], right[node[idx]])
            active = feat[node] >= 0
        return np.asarray(self.value)[node]

    def to_dict(self) -> dict:
        return {"feature": list(self.feature), "threshold": [float(t) for t in self.threshold],
                "left": list(self.left), "right": list(self.right),
                "value": [float(v) for v in self.value]}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(list(d["feature"]), list(d["threshold"]), list(d["left"]), list(d["right"]),
                   list(d["value"]))


class TreeLearner:
    """Greedy regression trees on a fixed covariate matrix (presorted once)."""

    def __init__(self, X: np.ndarray, config: TreeConfig, term_id: str = "tree"):
        self.X = np.asarray(X, dtype=float)
        self.config = config
        self.term_id = term_id
        self.order = [np.argsort(self.X[:, j], kind="stable") for j in range(self.X.shape[1])]

    def _best_split(self, mask, u, features):
        cfg = self.config
        best = None  # (gain, feature, threshold)
        n = int(mask.sum())
        S = float(u[mask].sum())
        parent = S * S / n
        ss = float(np.dot(u[mask], u[mask]))
        floor = max(cfg.min_gain, 1e-12 * ss)
        for j in sorted(features):
            o = self.order[j][mask[self.order[j]]]
            xs, us = self.X[o, j], u[o]
            cs = np.cumsum(us)[:-1]
            nl = np.arange(1, n)
            valid = (xs[:-1] < xs[1:]) & (nl >= cfg.min_leaf) & (n - nl >= cfg.min_leaf)
            if not np.any(valid):
                continue
            gain = cs**2 / nl + (S - cs) ** 2 / (n - nl) - parent
            gain = np.where(valid, gain, -np.inf)
            i = int(np.argmax(gain))
            if gain[i] > floor and (best is None or gain[i] > best[0]):
                best = (float(gain[i]), j, 0.5 * (xs[i] + xs[i + 1]))
        return best

    def fit(self, u: np.ndarray, rng: np.random.Generator | None = None) -> LearnerFit:
        u = np.asarray(u, dtype=float)
        cfg = self.config
        n, q = self.X.shape
        tree = Tree()
        fitted = np.empty(n)
        stack = [(tree._add(u.mean()), np.ones(n, dtype=bool), 0)]
        while stack:
            node, mask, depth = stack.pop()
            m = int(mask.sum())
            split = None
            if depth < cfg.max_depth and m >= cfg.min_split and m >= 2 * cfg.min_leaf:
                k = min(cfg.mtry, q)
                if k < q:
                    gen = rng if rng is not None else np.random.default_rng(0)
                    features = gen.choice(q, size=k, replace=False).tolist()
                else:
                    features = list(range(q))
                split = self._best_split(mask, u, features)
            if split is None:
                fitted[mask] = tree.value[node]
                continue
            _, j, thr = split
            go_left = mask & (self.X[:, j] <= thr)
            go_right = mask & ~go_left
            tree.feature[node], tree.threshold[node] = j, float(thr)
            lnode = tree._add(u[go_left].mean())
            rnode = tree._add(u[go_right].mean())
            tree.left[node], tree.right[node] = lnode, rnode
            # right pushed first so the left subtree is expanded first
            stack.append((rnode, go_right, depth + 1))
            stack.append((lnode, go_left, depth + 1))
        r = u - fitted
        return LearnerFit(self.term_id, "tree", float(r @ r), fitted, tree=tree)


def fit_tree(config: TreeConfig, X, u, rng: np.random.Generator | None = None) -> LearnerFit:
    """Fit one greedy regression tree to ``u``."""
    return TreeLearner(X, config).fit(u, rng)
