"""Two-stage zero-adjusted model: a Bernoulli stage for ``P(y = 0)`` and a
positive-family stage fitted to the nonzero responses.

The joint log-likelihood factorises, so each stage is boosted and early
stopped on its own and the stage scores add up to the joint score.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .boost import FittedEnsemble, StoppingRule, train
from .design import AdjacencyGraph, Schema, Term, build_terms
from .distributions import (DomainError, exceedance_probability, get_family, zadj_cdf, zadj_logpdf,
                            zadj_quantile)
from .learners import TreeConfig
from .pipeline import TrainingRanges, extrapolation_check, training_ranges

__all__ = [
    "FORMAT_VERSION",
    "ModelError",
    "ModelConfig",
    "ZeroAdjustedModel",
    "Prediction",
    "RocResult",
    "fit_two_stage",
    "roc_auc",
    "roc_points",
    "brute_force_auc",
]

FORMAT_VERSION = 1
XI0 = "xi0"


class ModelError(ValueError):
    """Unusable data or model file."""


@dataclass
class ModelConfig:
    """Everything needed to fit both stages.

    ``terms`` configures the positive stage; ``zero_terms`` the Bernoulli
    stage (defaults to ``terms`` without parameter restrictions).
    """

    family: str = "gamma"
    terms: list[dict] = field(default_factory=lambda: [{"kind": "intercept"}])
    zero_terms: list[dict] | None = None
    nu: float = 0.3
    batch: int = 50
    patience: int = 100
    max_iter: int = 5000
    seed: int = 0
    tree: dict | None = None
    response: str = "faults"

    @property
    def stopping(self) -> StoppingRule:
        return StoppingRule(self.batch, self.patience, self.max_iter)

    @property
    def tree_config(self) -> TreeConfig | None:
        return None if self.tree is None else TreeConfig(**self.tree)

    def to_dict(self) -> dict:
        return asdict(self)


def _variables(terms: Sequence[Term]) -> list[str]:
    out: list[str] = []
    for t in terms:
        for v in t.variables:
            if v not in out:
                out.append(v)
    return out


@dataclass
class Prediction:
    xi0: np.ndarray
    theta: np.ndarray
    warnings: list[list[str]]


@dataclass
class RocResult:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"fpr": self.fpr, "tpr": self.tpr, "threshold": self.thresholds})


def _labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype == bool:
        return y
    return np.asarray(y, dtype=float) > 0


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; tied scores count one half."""
    s = np.asarray(scores, dtype=float)
    lab = _labels(labels)
    n1, n0 = int(lab.sum()), int((~lab).sum())
    if n1 == 0 or n0 == 0:
        raise ModelError("ROC needs both classes; all labels are identical")
    r = stats.rankdata(s)
    return float((r[lab].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def brute_force_auc(scores, labels) -> float:
    """``(concordant + ties / 2) / pairs`` by enumerating every positive-negative pair."""
    s = np.asarray(scores, dtype=float)
    lab = _labels(labels)
    pos, neg = s[lab], s[~lab]
    if len(pos) == 0 or len(neg) == 0:
        raise ModelError("ROC needs both classes; all labels are identical")
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else (0.5 if a == b else 0.0)
    return total / (len(pos) * len(neg))


def roc_points(scores, labels) -> RocResult:
    """ROC curve over every distinct score; tied scores move in one diagonal step."""
    s = np.asarray(scores, dtype=float)
    lab = _labels(labels)
    auc = roc_auc(s, lab)
    order = np.argsort(-s, kind="stable")
    s, lab = s[order], lab[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(lab)[last]
    fp = np.cumsum(~lab)[last]
    tpr = np.r_[0.0, tp / lab.sum()]
    fpr = np.r_[0.0, fp / (~lab).sum()]
    thr = np.r_[np.inf, s[last]]
    return RocResult(fpr, tpr, thr, auc)


class ZeroAdjustedModel:
    """Bernoulli ensemble for ``xi0`` plus a positive-family ensemble for ``theta``."""

    def __init__(self, zero: FittedEnsemble, pos: FittedEnsemble, schema: Schema,
                 ranges: TrainingRanges, config: ModelConfig | None = None):
        self.zero = zero
        self.pos = pos
        self.schema = schema
        self.ranges = ranges
        self.config = config
        self.family = pos.family

    # -- prediction ------------------------------------------------------------
    def predict(self, frame: pd.DataFrame, check: bool = True) -> Prediction:
        xi0 = self.zero.predict_theta(frame)[:, 0]
        theta = self.pos.predict_theta(frame)
        # logit inverse saturates in floating point; keep xi0 strictly inside (0, 1)
        xi0 = np.clip(xi0, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
        warns = extrapolation_check(self.ranges, self.schema, frame) if check else [[] for _ in range(len(frame))]
        return Prediction(xi0, theta, warns)

    predict_distribution = predict

    def logpdf(self, frame: pd.DataFrame, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise ModelError("responses must be >= 0")
        p = self.predict(frame, check=False)
        return zadj_logpdf(y, p.xi0, self.family, p.theta)

    def log_score(self, frame: pd.DataFrame, y) -> tuple[float, float]:
        """``(l_total, l_average)`` of the joint zero-adjusted density."""
        ll = self.logpdf(frame, y)
        return float(ll.sum()), float(ll.sum() / len(ll))

    def stage_scores(self, frame: pd.DataFrame, y) -> tuple[float, float]:
        """Bernoulli-stage log-likelihood on all rows and positive-stage on ``y > 0``."""
        y = np.asarray(y, dtype=float)
        p = self.predict(frame, check=False)
        zero = (y == 0).astype(float)
        l_zero = float(np.sum(get_family("bernoulli").loglik(zero, p.xi0[:, None])))
        pos = y > 0
        l_pos = float(np.sum(self.family.loglik(y[pos], p.theta[pos]))) if pos.any() else 0.0
        return l_zero, l_pos

    def cdf(self, frame, y) -> np.ndarray:
        p = self.predict(frame, check=False)
        return zadj_cdf(y, p.xi0, self.family, p.theta)

    def quantile(self, frame, q: float = 0.99) -> np.ndarray:
        p = self.predict(frame, check=False)
        return zadj_quantile(q, p.xi0, self.family, p.theta)

    def exceedance(self, frame, t: float = 14.0) -> np.ndarray:
        p = self.predict(frame, check=False)
        return exceedance_probability(p.xi0, self.family, p.theta, t)

    def roc_curve(self, frame, y, t: float = 14.0) -> RocResult:
        if t <= 0:
            raise DomainError("exceedance threshold must be > 0")
        labels = np.asarray(y, dtype=float) >= t
        return roc_points(self.exceedance(frame, t), labels)

    # -- interpretation ---------------------------------------------------------
    def importance(self) -> pd.DataFrame:
        """Summed in-sample log-likelihood gain per stage, parameter and term."""
        parts = []
        for stage, ens in (("zero", self.zero), ("positive", self.pos)):
            t = ens.importance()
            if stage == "zero":
                t["parameter"] = XI0
            t.insert(0, "stage", stage)
            parts.append(t)
        nonempty = [t for t in parts if len(t)] or parts[:1]
        out = pd.concat(nonempty, ignore_index=True)
        return out.rename(columns={"learner": "kind"})

    def _stage(self, param: str) -> tuple[FittedEnsemble, int]:
        if param == XI0:
            return self.zero, 0
        names = self.family.param_names
        if param not in names:
            raise ModelError(f"unknown parameter {param!r}; choose from {[XI0, *names]}")
        return self.pos, names.index(param)

    def partial_effect(self, param: str, term_id: str, grid) -> pd.DataFrame:
        """One term's accumulated contribution on the link scale of ``param``.

        Numeric grids are in raw units; categorical terms take level labels.
        All other terms are ignored.
        """
        ens, k = self._stage(param)
        ids = [t.term_id for t in ens.terms]
        if term_id not in ids:
            raise ModelError(f"term {term_id!r} not in the model; available: {ids}")
        t = ids.index(term_id)
        term = ens.terms[t]
        if len(term.variables) != 1:
            raise ModelError("partial effects are available for single-variable terms")
        (name,) = term.variables
        col = self.schema[name]
        grid = list(grid)
        if col.kind in ("numeric", "interval"):
            g = np.asarray(grid, dtype=float)
            z = (g - col.mean) / col.sd
            enc = {name: np.tile(z[:, None], (1, len(col.columns))) if col.kind == "interval" else z}
            lo, hi = self.ranges.numeric.get(name, (-np.inf, np.inf))
            extrap = (g < lo) | (g > hi)
        elif col.kind == "binary":
            g = np.asarray(grid, dtype=float)
            enc = {name: g}
            extrap = ~np.isin(g, [0.0, 1.0])
        else:
            levels = [str(v) for v in grid]
            index = {lev: i for i, lev in enumerate(col.levels)}
            unknown = [lev for lev in levels if lev not in index]
            if unknown:
                raise ModelError(f"{name}: unseen level {unknown[0]!r}")
            enc = {name: np.array([index[lev] for lev in levels], dtype=int)}
            extrap = np.zeros(len(levels), dtype=bool)
            g = np.asarray(levels, dtype=object)
        enc["__n__"] = len(grid)
        beta = ens.coefficients(k, t)
        if beta is None:
            effect = np.zeros(len(grid))
        else:
            effect = term.transform(enc, self.schema) @ beta
        return pd.DataFrame({"x": g, "effect": effect, "extrapolated": extrap})

    # -- serialisation ----------------------------------------------------------
    def to_dict(self) -> dict:
        z, p = self.zero.to_dict(), self.pos.to_dict()
        z.pop("schema")
        p.pop("schema")
        return {
            "format_version": FORMAT_VERSION,
            "family": self.family.name,
            "schema": self.schema.to_list(),
            "ranges": self.ranges.to_dict(),
            "config": None if self.config is None else self.config.to_dict(),
            "zero": z,
            "positive": p,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, ensure_ascii=False,
                          allow_nan=False) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "ZeroAdjustedModel":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ModelError(f"unsupported model format_version {version!r} (expected {FORMAT_VERSION})")
        schema = Schema.from_list(d["schema"])
        ens = []
        for key in ("zero", "positive"):
            e = FittedEnsemble.from_dict({**d[key], "schema": []})
            e.schema = schema
            ens.append(e)
        cfg = None if d["config"] is None else ModelConfig(**d["config"])
        return cls(ens[0], ens[1], schema, TrainingRanges.from_dict(d["ranges"]), cfg)

    @classmethod
    def load(cls, path) -> "ZeroAdjustedModel":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ModelError(f"{path}: not a model file ({e})") from None
        return cls.from_dict(d)


def fit_two_stage(frame: pd.DataFrame, y, schema: Schema, config: ModelConfig,
                  holdout: tuple[pd.DataFrame, np.ndarray] | None = None,
                  graph: AdjacencyGraph | None = None, progress=None) -> ZeroAdjustedModel:
    """Boost the Bernoulli stage on ``1(y = 0)`` and the positive stage on ``y > 0``.

    The schema is fitted once on all training rows and shared by both stages.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ModelError("responses must be finite and >= 0")
    _check_both(y, "training")
    pos_terms = build_terms(config.terms, graph)
    zero_specs = config.zero_terms
    if zero_specs is None:
        zero_specs = [{k: v for k, v in s.items() if k != "params"} for s in config.terms]
    zero_terms = build_terms(zero_specs, graph)
    variables = _variables(pos_terms + zero_terms)
    schema.fit(frame, variables)
    interactions = [t.variables for t in pos_terms + zero_terms if t.kind == "interaction"]
    ranges = training_ranges(frame, schema, variables, interactions)

    hz = hp = None
    if holdout is not None:
        fh, yh = holdout[0], np.asarray(holdout[1], dtype=float)
        _check_both(yh, "holdout")
        hz = (fh, (yh == 0).astype(float))
        hp = (fh[yh > 0], yh[yh > 0])

    def stage_progress(tag):
        return None if progress is None else (lambda line: progress(f"stage={tag} {line}"))

    zero = train("bernoulli", frame, (y == 0).astype(float), schema, zero_terms, nu=config.nu,
                 stopping=config.stopping, holdout=hz, seed=config.seed,
                 tree_config=config.tree_config, fit_schema=False, progress=stage_progress("zero"))
    keep = y > 0
    pos = train(config.family, frame[keep], y[keep], schema, pos_terms, nu=config.nu,
                stopping=config.stopping, holdout=hp, seed=config.seed,
                tree_config=config.tree_config, fit_schema=False, progress=stage_progress("positive"))
    return ZeroAdjustedModel(zero, pos, schema, ranges, config)


def _check_both(y, what):
    if not np.any(y == 0):
        raise ModelError(f"{what} data has no zero responses; fit a single-stage positive model instead")
    if not np.any(y > 0):
        raise ModelError(f"{what} data has no positive responses; fit a single-stage Bernoulli model instead")
