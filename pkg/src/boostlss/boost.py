"""Noncyclical component-wise gradient boosting for distribution parameters.

Each iteration computes the link-scale score for every parameter, fits all of
that parameter's base learners to it and keeps the one with the lowest
residual sum of squares. Of the per-parameter champions only the one whose
shrunken update gives the largest in-sample log-likelihood is added.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .design import Schema, Term, TreeTerm, term_from_dict
from .distributions import DomainError, Family, get_family
from .learners import PenalizedLearner, Tree, TreeConfig, TreeLearner

__all__ = [
    "BoostError",
    "StoppingRule",
    "Update",
    "BoostState",
    "FittedEnsemble",
    "compute_gradients",
    "mad_stabilize",
    "init_state",
    "boost_step",
    "train",
    "thread_count",
]

log = logging.getLogger(__name__)

MAD_FLOOR = 1e-10


class BoostError(RuntimeError):
    """Training could not continue (non-finite gradient or likelihood)."""


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("BOOSTLSS_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class StoppingRule:
    """Grow the ensemble in batches until the holdout score stalls.

    Training halts once the best holdout log-likelihood is at least
    ``patience`` iterations old at a batch boundary, or at ``max_iter``.
    """

    batch: int = 50
    patience: int = 100
    max_iter: int = 10_000


@dataclass
class Update:
    m: int
    param: int
    term: int
    delta: float
    coef: np.ndarray | None = None
    tree: Tree | None = None

    def to_dict(self) -> dict:
        d = {"m": self.m, "param": self.param, "term": self.term, "delta": self.delta}
        if self.tree is not None:
            d["tree"] = self.tree.to_dict()
        else:
            d["coef"] = [float(c) for c in self.coef]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Update":
        tree = Tree.from_dict(d["tree"]) if "tree" in d else None
        coef = np.asarray(d["coef"], dtype=float) if "coef" in d else None
        return cls(d["m"], d["param"], d["term"], d["delta"], coef, tree)


def compute_gradients(family: Family, y, eta) -> np.ndarray:
    """Link-scale scores ``d loglik / d eta_k`` as an ``(n, K)`` array."""
    family = get_family(family)
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise BoostError("non-finite linear predictor")
    theta = family.theta_from_eta(eta)
    y = np.asarray(y, dtype=float)
    out = np.column_stack([family.grad_eta(y, theta, k) for k in range(family.K)])
    bad = ~np.isfinite(out)
    if np.any(bad):
        i, k = map(int, np.argwhere(bad)[0])
        raise BoostError(f"non-finite gradient at row {i} for parameter {family.param_names[k]}")
    return out


def mad_stabilize(u) -> np.ndarray:
    """Scale a gradient vector by ``max(median(|u|), 1e-10)``.

    The median of absolute values (not of deviations from the median) is
    used, so an all-zero vector is returned unchanged.
    """
    u = np.asarray(u, dtype=float)
    return u / max(float(np.median(np.abs(u))), MAD_FLOOR)


@dataclass
class BoostState:
    family: Family
    y: np.ndarray
    offsets: np.ndarray
    eta: np.ndarray
    trace_in: list[float]
    y_hold: np.ndarray | None = None
    eta_hold: np.ndarray | None = None
    trace_hold: list[float] = field(default_factory=list)
    updates: list[Update] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.updates)

    def loglik(self, eta=None) -> float:
        eta = self.eta if eta is None else eta
        return _safe_loglik(self.family, self.y, eta)

    def holdout_loglik(self) -> float:
        return _safe_loglik(self.family, self.y_hold, self.eta_hold)


def _safe_loglik(family: Family, y, eta) -> float:
    """Summed log-likelihood, ``-inf`` when ``eta`` maps outside the parameter space."""
    with np.errstate(over="ignore"):
        try:
            th = family.theta_from_eta(eta)
            return float(np.sum(family.loglik(y, th)))
        except DomainError:
            return -np.inf


def init_state(family, y, offsets=None, y_hold=None) -> BoostState:
    """Start from intercept-only offsets (natural scale ``offsets`` override the fit)."""
    family = get_family(family)
    y = family.check_y(np.asarray(y, dtype=float))
    theta0 = family.offset(y) if offsets is None else np.asarray(offsets, dtype=float)
    eta0 = family.eta_from_theta(family.check_theta(theta0))
    eta = np.tile(eta0, (len(y), 1))
    state = BoostState(family, y, eta0, eta, [])
    state.trace_in.append(state.loglik())
    if y_hold is not None:
        state.y_hold = family.check_y(np.asarray(y_hold, dtype=float))
        state.eta_hold = np.tile(eta0, (len(state.y_hold), 1))
        state.trace_hold.append(state.holdout_loglik())
    return state


@dataclass
class _Learners:
    """Per-term training learners and holdout bases."""

    learners: list
    holdout: list
    by_param: list[list[int]]


def _fit_all(learners, idx, u, rng_for):
    def one(i):
        lrn = learners[i]
        if isinstance(lrn, TreeLearner):
            return lrn.fit(u, rng_for(i))
        return lrn.fit(u)

    n = thread_count()
    if n > 1 and len(idx) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(one, idx))
    return [one(i) for i in idx]


def boost_step(state: BoostState, learners: _Learners | Sequence, nu: float,
               stabilize: str = "mad", seed: int = 0):
    """Run one noncyclical iteration and append the accepted update.

    ``learners`` is either a prepared :class:`_Learners` or, for direct use,
    a list with one sequence of learners per parameter. Returns the accepted
    :class:`Update` and its :class:`LearnerFit`.
    """
    if not isinstance(learners, _Learners):
        flat, by_param = [], []
        for group in learners:
            by_param.append(list(range(len(flat), len(flat) + len(group))))
            flat.extend(group)
        learners = _Learners(flat, [None] * len(flat), by_param)
    family = state.family
    m = state.m + 1
    grads = compute_gradients(family, state.y, state.eta)
    base = state.trace_in[-1]
    best = None  # (loglik, k, term index, fit)
    for k in range(family.K):
        idx = learners.by_param[k]
        if not idx:
            continue
        u = grads[:, k]
        if stabilize == "mad":
            u = mad_stabilize(u)
        fits = _fit_all(learners.learners, idx, u,
                        lambda i, k=k: np.random.default_rng([seed, m, k, i]))
        # equal RSS: the lexicographically lowest term id wins
        j = min(range(len(fits)), key=lambda i: (fits[i].rss, fits[i].term_id))
        fit = fits[j]
        cand = state.eta.copy()
        cand[:, k] += nu * fit.fitted
        ll = state.loglik(cand)
        if not np.isfinite(ll):
            continue
        if best is None or ll > best[0]:
            best = (ll, k, idx[j], fit)
    if best is None:
        raise BoostError(f"iteration {m}: no candidate update has a finite log-likelihood")
    ll, k, t, fit = best
    state.eta[:, k] += nu * fit.fitted
    upd = Update(m, k, t, ll - base, coef=fit.coef, tree=fit.tree)
    state.updates.append(upd)
    state.trace_in.append(ll)
    if state.eta_hold is not None:
        Bh = learners.holdout[t]
        state.eta_hold[:, k] += nu * fit.predict(Bh)
        hl = state.holdout_loglik()
        if not np.isfinite(hl):
            raise BoostError(f"holdout log-likelihood diverged at iteration {m}")
        state.trace_hold.append(hl)
    return upd, fit


class FittedEnsemble:
    """Offsets plus the ordered list of shrunken learner updates."""

    def __init__(self, family, schema: Schema, terms: list[Term], offsets, nu: float,
                 updates: list[Update], m_stop: int, trace_in=(), trace_hold=(),
                 stabilize: str = "mad", seed: int = 0, tree_config: TreeConfig | None = None):
        self.family = get_family(family)
        self.schema = schema
        self.terms = terms
        self.offsets = np.asarray(offsets, dtype=float)
        self.nu = float(nu)
        self.updates = list(updates)
        self.m_stop = int(m_stop)
        self.trace_in = list(trace_in)
        self.trace_hold = list(trace_hold)
        self.stabilize = stabilize
        self.seed = seed
        self.tree_config = tree_config

    @property
    def variables(self) -> list[str]:
        names: list[str] = []
        for t in self.terms:
            for v in t.variables:
                if v not in names:
                    names.append(v)
        return names

    def truncate(self, m: int) -> "FittedEnsemble":
        m = min(int(m), len(self.updates))
        return FittedEnsemble(self.family, self.schema, self.terms, self.offsets, self.nu,
                              self.updates[:m], m, self.trace_in[: m + 1], self.trace_hold[: m + 1],
                              self.stabilize, self.seed, self.tree_config)

    def encode(self, frame: pd.DataFrame) -> dict:
        enc = self.schema.encode(frame, self.variables)
        enc["__n__"] = len(frame)
        return enc

    def predict_eta(self, frame: pd.DataFrame | None = None, m: int | None = None,
                    enc: dict | None = None) -> np.ndarray:
        """Linear predictors ``(n, K)`` using the first ``m`` updates (default all)."""
        if enc is None:
            enc = self.encode(frame)
        n = int(enc["__n__"])
        m = len(self.updates) if m is None else min(int(m), len(self.updates))
        eta = np.tile(self.offsets, (n, 1))
        coef_sum: dict[tuple[int, int], np.ndarray] = {}
        trees: list[Update] = []
        for upd in self.updates[:m]:
            if upd.tree is not None:
                trees.append(upd)
            else:
                key = (upd.param, upd.term)
                coef_sum[key] = coef_sum[key] + upd.coef if key in coef_sum else upd.coef.copy()
        bases: dict[int, np.ndarray] = {}

        def basis(t):
            if t not in bases:
                bases[t] = self.terms[t].transform(enc, self.schema)
            return bases[t]

        for (k, t), beta in sorted(coef_sum.items()):
            eta[:, k] += self.nu * (basis(t) @ beta)
        for upd in trees:
            eta[:, upd.param] += self.nu * upd.tree.predict(basis(upd.term))
        return eta

    def predict_theta(self, frame=None, m=None, enc=None) -> np.ndarray:
        return self.family.theta_from_eta(self.predict_eta(frame, m, enc))

    def loglik(self, frame, y, m=None) -> float:
        th = self.predict_theta(frame, m)
        return float(np.sum(self.family.loglik(np.asarray(y, dtype=float), th)))

    def importance(self) -> pd.DataFrame:
        """Summed in-sample log-likelihood gain per (parameter, term)."""
        rows: dict[tuple[int, int], float] = {}
        for upd in self.updates:
            rows[(upd.param, upd.term)] = rows.get((upd.param, upd.term), 0.0) + upd.delta
        recs = [
            {"parameter": self.family.param_names[k], "term": self.terms[t].term_id,
             "learner": self.terms[t].label, "delta_loglik": d, "n_selected":
             sum(1 for u in self.updates if u.param == k and u.term == t)}
            for (k, t), d in sorted(rows.items())
        ]
        return pd.DataFrame(recs, columns=["parameter", "term", "learner", "delta_loglik", "n_selected"])

    def coefficients(self, param: int, term: int, m: int | None = None) -> np.ndarray | None:
        """Accumulated shrunken coefficients of one penalised term."""
        m = len(self.updates) if m is None else m
        total = None
        for upd in self.updates[:m]:
            if upd.param == param and upd.term == term and upd.coef is not None:
                total = upd.coef.copy() if total is None else total + upd.coef
        return None if total is None else self.nu * total

    def to_dict(self) -> dict:
        return {
            "family": self.family.name,
            "schema": self.schema.to_list(),
            "terms": [t.to_dict() for t in self.terms],
            "offsets": [float(v) for v in self.offsets],
            "nu": self.nu,
            "m_stop": self.m_stop,
            "stabilize": self.stabilize,
            "seed": self.seed,
            "tree_config": None if self.tree_config is None else self.tree_config.to_dict(),
            "trace_in": [float(v) for v in self.trace_in],
            "trace_hold": [float(v) for v in self.trace_hold],
            "updates": [u.to_dict() for u in self.updates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedEnsemble":
        tc = None if d["tree_config"] is None else TreeConfig(**d["tree_config"])
        return cls(d["family"], Schema.from_list(d["schema"]), [term_from_dict(t) for t in d["terms"]],
                   d["offsets"], d["nu"], [Update.from_dict(u) for u in d["updates"]], d["m_stop"],
                   d["trace_in"], d["trace_hold"], d["stabilize"], d["seed"], tc)


def _prepare(terms, schema, frame, frame_hold, family, tree_config):
    enc = schema.encode(frame, _vars(terms))
    enc["__n__"] = len(frame)
    enc_h = None
    if frame_hold is not None:
        enc_h = schema.encode(frame_hold, _vars(terms))
        enc_h["__n__"] = len(frame_hold)
    learners, holdout = [], []
    for t in terms:
        block = t.fit(enc, schema)
        if isinstance(t, TreeTerm):
            learners.append(TreeLearner(block.B, tree_config or TreeConfig(), t.term_id))
        else:
            learners.append(PenalizedLearner(block))
        holdout.append(None if enc_h is None else t.transform(enc_h, schema))
    by_param = [[i for i, t in enumerate(terms) if t.applies_to(p)] for p in family.param_names]
    return _Learners(learners, holdout, by_param)


def _vars(terms) -> list[str]:
    out: list[str] = []
    for t in terms:
        for v in t.variables:
            if v not in out:
                out.append(v)
    return out


def train(family, frame: pd.DataFrame, y, schema: Schema, terms: list[Term], nu: float = 0.3,
          stopping: StoppingRule | None = None, holdout: tuple[pd.DataFrame, np.ndarray] | None = None,
          seed: int = 0, tree_config: TreeConfig | None = None, stabilize: str | None = None,
          offsets=None, progress: Callable[[str], None] | None = None,
          fit_schema: bool = True) -> FittedEnsemble:
    """Boost until the holdout log-likelihood stops improving.

    Without a holdout the ensemble runs to ``stopping.max_iter``. The
    returned ensemble is truncated at the holdout-best iteration. Pass
    ``fit_schema=False`` when the schema was already fitted elsewhere.
    """
    family = get_family(family)
    stopping = stopping or StoppingRule()
    if stabilize is None:
        stabilize = "mad" if family.K > 1 else "none"
    if fit_schema:
        schema.fit(frame, _vars(terms))
    frame_h, y_h = holdout if holdout is not None else (None, None)
    lrn = _prepare(terms, schema, frame, frame_h, family, tree_config)
    state = init_state(family, y, offsets=offsets, y_hold=y_h)
    best_m, best_h = 0, (state.trace_hold[0] if y_h is not None else None)
    while state.m < stopping.max_iter:
        upd, _ = boost_step(state, lrn, nu, stabilize, seed)
        if y_h is not None and state.trace_hold[-1] > best_h:
            best_m, best_h = state.m, state.trace_hold[-1]
        line = (f"iter={state.m} insample={state.trace_in[-1]:.6f} "
                f"holdout={state.trace_hold[-1] if y_h is not None else float('nan'):.6f} "
                f"param={family.param_names[upd.param]} term={terms[upd.term].term_id}")
        log.debug(line)
        if progress is not None:
            progress(line)
        if y_h is not None and state.m % stopping.batch == 0 and state.m - best_m >= stopping.patience:
            break
    m_stop = best_m if y_h is not None else state.m
    ens = FittedEnsemble(family, schema, terms, state.offsets, nu, state.updates, state.m,
                         state.trace_in, state.trace_hold, stabilize, seed, tree_config)
    ens.n_run = state.m
    return ens.truncate(m_stop)
