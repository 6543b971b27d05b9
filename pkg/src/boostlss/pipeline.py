"""Data ingestion, fault allocation, splitting and synthetic data.

The weather table has one row per (forecast region, date, horizon). Fault
counts recorded on administrative regions are moved onto forecast regions
with area-overlap weights before modelling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .design import AdjacencyGraph, ColumnSchema, Schema, _level_str
from .distributions import DomainError, get_family

__all__ = [
    "WEATHER_COLUMNS",
    "OVERLAP_COLUMNS",
    "PipelineError",
    "read_weather_csv",
    "write_weather_csv",
    "validate_weather",
    "read_overlap_csv",
    "validate_overlap",
    "allocate_faults",
    "split",
    "TrainingRanges",
    "training_ranges",
    "extrapolation_check",
    "SyntheticSpec",
    "TrueModel",
    "SyntheticData",
    "generate_synthetic",
    "reference_spec",
    "simulate_weather",
    "weather_schema",
    "weather_terms",
]

WIND_DIR = [f"wind_dir_q{i}" for i in range(1, 5)]
WIND_GUST = [f"wind_gust_q{i}" for i in range(1, 5)]
WIND_MEAN = [f"wind_mean_q{i}" for i in range(1, 5)]

WEATHER_COLUMNS = (
    ["region", "date", "horizon", "risk", "temp_min", "temp_max"]
    + WIND_DIR + WIND_GUST + WIND_MEAN
    + ["rain_min_h1", "rain_max_h1", "rain_min_h2", "rain_max_h2",
       "snow_depth_h1", "snow_height_h1", "icing_h1",
       "snow_depth_h2", "snow_height_h2", "icing_h2",
       "lightning_h1", "lightning_h2", "faults"]
)
OVERLAP_COLUMNS = ["forecast_region", "admin_region", "weight"]
RISK_LEVELS = ["green", "yellow", "red"]
WEIGHT_TOL = 1e-9


class PipelineError(ValueError):
    """Malformed input data."""


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def validate_weather(df: pd.DataFrame) -> pd.DataFrame:
    """Check the column set and the physical invariants of a weather table."""
    cols = list(df.columns)
    if cols != WEATHER_COLUMNS:
        missing = [c for c in WEATHER_COLUMNS if c not in cols]
        extra = [c for c in cols if c not in WEATHER_COLUMNS]
        if missing:
            raise PipelineError(f"weather table missing column {missing[0]!r}")
        if extra:
            raise PipelineError(f"weather table has unexpected column {extra[0]!r}")
        raise PipelineError("weather columns are out of order")
    numeric = [c for c in WEATHER_COLUMNS if c not in ("region", "date", "risk")]
    for c in numeric:
        if not pd.api.types.is_numeric_dtype(df[c]):
            raise PipelineError(f"column {c!r} must be numeric")
        if df[c].isna().any():
            raise PipelineError(f"column {c!r} has missing values")
    if not df["horizon"].isin([1, 2]).all():
        raise PipelineError("column 'horizon' must be 1 or 2")
    if not df["risk"].isin(RISK_LEVELS).all():
        raise PipelineError("column 'risk' must be one of green, yellow, red")
    if (df["temp_min"] > df["temp_max"]).any():
        raise PipelineError("temp_min exceeds temp_max")
    for h in ("h1", "h2"):
        if (df[f"rain_min_{h}"] > df[f"rain_max_{h}"]).any():
            raise PipelineError(f"rain_min_{h} exceeds rain_max_{h}")
        if not df[f"icing_{h}"].isin([0, 1]).all():
            raise PipelineError(f"column 'icing_{h}' must be 0 or 1")
        if not df[f"lightning_{h}"].isin([1, 2, 3, 4, 5]).all():
            raise PipelineError(f"column 'lightning_{h}' must be an integer in 1..5")
    if (df["faults"] < 0).any():
        raise PipelineError("column 'faults' must be >= 0")
    try:
        pd.to_datetime(df["date"], format="ISO8601")
    except ValueError:
        raise PipelineError("column 'date' must hold ISO-8601 dates") from None
    return df


def read_weather_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"region": str, "date": str, "risk": str},
                     float_precision="round_trip")
    return validate_weather(df)


def write_weather_csv(df: pd.DataFrame, path) -> None:
    validate_weather(df).to_csv(path, index=False, lineterminator="\n")


def validate_overlap(df: pd.DataFrame) -> pd.DataFrame:
    if list(df.columns) != OVERLAP_COLUMNS:
        raise PipelineError(f"overlap table needs columns {OVERLAP_COLUMNS}")
    w = df["weight"]
    if w.isna().any() or (w < 0).any() or (w > 1).any():
        raise PipelineError("overlap weights must lie in [0, 1]")
    sums = df.groupby("admin_region")["weight"].sum()
    bad = sums[(sums - 1.0).abs() > WEIGHT_TOL]
    if len(bad):
        raise PipelineError(f"weights for admin region {bad.index[0]!r} sum to {bad.iloc[0]!r}, not 1")
    return df


def read_overlap_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"forecast_region": str, "admin_region": str},
                     float_precision="round_trip")
    return validate_overlap(df)


def allocate_faults(counts: Mapping[str, float] | pd.Series, weights: pd.DataFrame) -> pd.Series:
    """Area-weighted responses ``sum_a weight(f, a) * count(a)`` per forecast region."""
    counts = pd.Series(counts, dtype=float)
    counts.index = counts.index.astype(str)
    if (counts < 0).any():
        raise PipelineError("fault counts must be >= 0")
    admin = weights["admin_region"].astype(str)
    unknown = sorted(set(admin) - set(counts.index))
    if unknown:
        raise PipelineError(f"weight row references unknown admin region {unknown[0]!r}")
    uncovered = sorted(set(counts.index) - set(admin))
    if uncovered:
        raise PipelineError(f"admin region {uncovered[0]!r} has counts but no overlap weights")
    contrib = weights["weight"].to_numpy(dtype=float) * counts.loc[admin].to_numpy()
    out = pd.Series(contrib, index=weights["forecast_region"].astype(str).to_numpy())
    return out.groupby(level=0, sort=True).sum().rename("faults")


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def split(df: pd.DataFrame, fractions: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0,
          date_col: str = "date") -> tuple[pd.DataFrame, ...]:
    """Assign whole dates at random to (train, holdout, test).

    Partition sizes are set by the number of dates, so row counts are only
    approximately proportional to ``fractions``.
    """
    fr = np.asarray(fractions, dtype=float)
    if np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise PipelineError("split fractions must be nonnegative and sum to 1")
    dates = np.array(sorted(df[date_col].astype(str).unique()))
    perm = np.random.default_rng(seed).permutation(len(dates))
    bounds = np.rint(np.cumsum(fr) * len(dates)).astype(int)
    bounds[-1] = len(dates)
    starts = np.concatenate([[0], bounds[:-1]])
    key = df[date_col].astype(str)
    parts = []
    for i, (a, b) in enumerate(zip(starts, bounds)):
        chosen = set(dates[perm[a:b]])
        part = df[key.isin(chosen)]
        if fr[i] > 0 and len(part) == 0:
            raise PipelineError(f"split partition {i} is empty")
        parts.append(part)
    return tuple(parts)


# ---------------------------------------------------------------------------
# extrapolation guard
# ---------------------------------------------------------------------------


@dataclass
class TrainingRanges:
    """Raw-unit ranges of numeric variables, overall and per categorical cell."""

    numeric: dict[str, tuple[float, float]] = field(default_factory=dict)
    # (categorical names, numeric name or None, {cell key: (min, max)})
    cells: list[tuple[list[str], str | None, dict[str, tuple[float, float]]]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"numeric": {k: list(v) for k, v in self.numeric.items()},
                "cells": [{"categorical": c, "numeric": n, "ranges": {k: list(v) for k, v in r.items()}}
                          for c, n, r in self.cells]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingRanges":
        return cls({k: tuple(v) for k, v in d["numeric"].items()},
                   [(c["categorical"], c["numeric"], {k: tuple(v) for k, v in c["ranges"].items()})
                    for c in d["cells"]])


def _raw_numeric_range(col, frame):
    v = np.asarray(col.raw(frame), dtype=float)
    lo = v.min(axis=1) if v.ndim == 2 else v
    hi = v.max(axis=1) if v.ndim == 2 else v
    return lo, hi


def _cell_keys(schema, cats, frame):
    labels = [np.array([_level_str(x) for x in schema[c].raw(frame)], dtype=object) for c in cats]
    return ["|".join(t) for t in zip(*labels)]


def training_ranges(frame: pd.DataFrame, schema: Schema, variables: Sequence[str],
                    interactions: Sequence[Sequence[str]] = ()) -> TrainingRanges:
    out = TrainingRanges()
    for name in variables:
        col = schema[name]
        if col.kind in ("numeric", "interval"):
            lo, hi = _raw_numeric_range(col, frame)
            out.numeric[name] = (float(lo.min()), float(hi.max()))
    for names in interactions:
        cats = [n for n in names if schema[n].is_categorical or schema[n].kind == "binary"]
        nums = [n for n in names if n not in cats]
        if not cats:
            continue
        keys = _cell_keys(schema, cats, frame)
        for num in nums or [None]:
            ranges: dict[str, tuple[float, float]] = {}
            if num is None:
                ranges = {k: (0.0, 0.0) for k in keys}
            else:
                lo, hi = _raw_numeric_range(schema[num], frame)
                s = pd.DataFrame({"k": keys, "lo": lo, "hi": hi}).groupby("k")
                ranges = {k: (float(a), float(b)) for k, a, b in
                          zip(s["lo"].min().index, s["lo"].min(), s["hi"].max())}
            out.cells.append((list(cats), num, dict(sorted(ranges.items()))))
    return out


def extrapolation_check(ranges: TrainingRanges, schema: Schema, frame: pd.DataFrame) -> list[list[str]]:
    """Per-row warnings for values outside the training support. Never raises on range."""
    n = len(frame)
    warns: list[list[str]] = [[] for _ in range(n)]
    for name, (lo, hi) in ranges.numeric.items():
        vlo, vhi = _raw_numeric_range(schema[name], frame)
        for i in np.nonzero(vlo < lo)[0]:
            warns[i].append(f"{name}={vlo[i]:g} below training min {lo:g}")
        for i in np.nonzero(vhi > hi)[0]:
            warns[i].append(f"{name}={vhi[i]:g} above training max {hi:g}")
    for cats, num, cell in ranges.cells:
        keys = _cell_keys(schema, cats, frame)
        if num is not None:
            vlo, vhi = _raw_numeric_range(schema[num], frame)
        label = ":".join(cats + ([num] if num else []))
        for i, k in enumerate(keys):
            if k not in cell:
                warns[i].append(f"{label} at {k}: no comparable training data")
            elif num is not None:
                lo, hi = cell[k]
                if vlo[i] < lo or vhi[i] > hi:
                    warns[i].append(f"{label} at {k}: {num} outside training range [{lo:g}, {hi:g}]")
    return warns


# ---------------------------------------------------------------------------
# synthetic data with a known generating model
# ---------------------------------------------------------------------------


def _effect(x, spec) -> np.ndarray:
    if isinstance(spec, (int, float)):
        return float(spec) * x
    if "sin" in spec:
        return spec["sin"] * np.sin(x)
    if "step" in spec:
        c, a = spec["step"]
        return a * (x > c)
    if "square" in spec:
        return spec["square"] * (x**2 - 1.0)
    raise DomainError(f"unknown effect {spec!r}")


@dataclass
class SyntheticSpec:
    """Generator of zero-adjusted data with linear-predictor effects.

    ``effects`` maps each positive-family parameter (and ``"xi0"``) to an
    intercept on the link scale plus per-covariate effects. An effect is a
    slope, ``{"sin": a}``, ``{"square": a}`` or ``{"step": [c, a]}``. Region
    effects go under ``"region"`` as a level-to-value map. ``xi0_constant``
    replaces the Bernoulli stage with a fixed zero probability.
    """

    family: str = "gamma"
    n: int = 1000
    n_covariates: int = 8
    effects: dict = field(default_factory=lambda: {"xi0": {"intercept": 0.0}, "mu": {"intercept": 0.0},
                                                   "sigma": {"intercept": 0.0}})
    xi0_constant: float | None = None
    regions: list[str] | None = None
    rows_per_date: int = 10
    covariate_range: tuple[float, float] = (-2.0, 2.0)

    def to_dict(self) -> dict:
        return {"family": self.family, "n": self.n, "n_covariates": self.n_covariates,
                "effects": self.effects, "xi0_constant": self.xi0_constant, "regions": self.regions,
                "rows_per_date": self.rows_per_date, "covariate_range": list(self.covariate_range)}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "covariate_range" in d:
            d["covariate_range"] = tuple(d["covariate_range"])
        return cls(**d)


class TrueModel:
    """The generating zero-adjusted model, usable as a scoring oracle."""

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        self.family = get_family(spec.family)
        if self.family.support != "positive":
            raise DomainError(f"{spec.family} is not a positive continuous family")
        allowed = set(self.family.param_names) | {"xi0"}
        unknown = set(spec.effects) - allowed
        if unknown:
            raise DomainError(f"effects for unknown parameter(s) {sorted(unknown)}")
        if spec.xi0_constant is not None and not 0.0 <= spec.xi0_constant <= 1.0:
            raise DomainError("xi0_constant must lie in [0, 1]")

    def _eta(self, param: str, frame: pd.DataFrame) -> np.ndarray:
        eff = self.spec.effects.get(param, {})
        eta = np.full(len(frame), float(eff.get("intercept", 0.0)))
        for name, e in eff.items():
            if name == "intercept":
                continue
            if name == "region":
                eta += frame["region"].map(lambda r: e.get(str(r), 0.0)).to_numpy(dtype=float)
            else:
                eta += _effect(frame[name].to_numpy(dtype=float), e)
        return eta

    def xi0(self, frame: pd.DataFrame) -> np.ndarray:
        if self.spec.xi0_constant is not None:
            return np.full(len(frame), float(self.spec.xi0_constant))
        return 1.0 / (1.0 + np.exp(-self._eta("xi0", frame)))

    def theta(self, frame: pd.DataFrame) -> np.ndarray:
        eta = np.column_stack([self._eta(p, frame) for p in self.family.param_names])
        theta = self.family.theta_from_eta(eta)
        try:
            return self.family.check_theta(theta)
        except DomainError as e:
            raise DomainError(f"inadmissible true parameters: {e}") from None

    def logpdf(self, frame: pd.DataFrame, y) -> np.ndarray:
        from .distributions import zadj_logpdf

        return zadj_logpdf(y, self.xi0(frame), self.family, self.theta(frame))

    def log_score(self, frame, y) -> tuple[float, float]:
        ll = self.logpdf(frame, y)
        return float(ll.sum()), float(ll.mean())


@dataclass
class SyntheticData:
    frame: pd.DataFrame
    y: np.ndarray
    truth: TrueModel

    def with_response(self, name: str = "y") -> pd.DataFrame:
        return self.frame.assign(**{name: self.y})


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> SyntheticData:
    """Draw covariates ``x1..xp`` uniformly and responses from the true model."""
    truth = TrueModel(spec)
    rng = np.random.default_rng(seed)
    lo, hi = spec.covariate_range
    cols = {f"x{j + 1}": rng.uniform(lo, hi, spec.n) for j in range(spec.n_covariates)}
    frame = pd.DataFrame(cols)
    if spec.regions:
        frame["region"] = np.asarray(spec.regions, dtype=object)[rng.integers(0, len(spec.regions), spec.n)]
    day = np.arange(spec.n) // max(1, spec.rows_per_date)
    frame["date"] = (pd.Timestamp("2020-01-01") + pd.to_timedelta(day, unit="D")).strftime("%Y-%m-%d")
    xi0 = truth.xi0(frame)
    theta = truth.theta(frame)
    zero = rng.random(spec.n) < xi0
    u = rng.uniform(np.finfo(float).eps, 1.0 - np.finfo(float).epsneg, spec.n)
    y = np.zeros(spec.n)
    if np.any(~zero):
        y[~zero] = truth.family.quantile(u[~zero], theta[~zero])
        # guard against underflow to 0 in extreme lower tails
        y[~zero] = np.maximum(y[~zero], np.finfo(float).tiny)
    return SyntheticData(frame, y, truth)


def reference_spec(n: int = 5000, family: str = "gamma") -> SyntheticSpec:
    """Three informative covariates (``x1``-``x3``) and five pure-noise ones."""
    effects = {
        "xi0": {"intercept": -0.8, "x1": 0.7, "x3": {"step": [0.0, -0.6]}},
        "mu": {"intercept": 1.0, "x1": 0.5, "x2": {"sin": 0.6}, "x3": {"step": [0.0, 0.4]}},
        "sigma": {"intercept": -0.6, "x2": 0.2},
    }
    if family == "bcto":
        effects["nu"] = {"intercept": 0.3}
        effects["tau"] = {"intercept": math.log(4.0)}
    elif family == "gengamma":
        effects["nu"] = {"intercept": 0.8}
    return SyntheticSpec(family=family, n=n, n_covariates=8, effects=effects)


# ---------------------------------------------------------------------------
# weather-schema simulator and default model configuration
# ---------------------------------------------------------------------------


def _ring_graph(regions: Sequence[str]) -> AdjacencyGraph:
    edges = [(regions[i], regions[(i + 1) % len(regions)]) for i in range(len(regions))]
    if len(regions) == 2:
        edges = edges[:1]
    return AdjacencyGraph(list(regions), edges if len(regions) > 1 else [])


def simulate_weather(n_days: int = 200, n_regions: int = 6, seed: int = 0
                     ) -> tuple[pd.DataFrame, AdjacencyGraph, pd.DataFrame]:
    """Weather table with faults from a known zero-adjusted gamma model.

    Returns the table, a ring adjacency graph and an identity overlap table.
    Storm days (high gusts) raise both the chance of any fault and the
    expected count.
    """
    rng = np.random.default_rng(seed)
    regions = [f"R{i + 1:02d}" for i in range(n_regions)]
    dates = (pd.Timestamp("2021-01-01") + pd.to_timedelta(np.arange(n_days), unit="D")).strftime("%Y-%m-%d")
    rows = []
    region_eff = dict(zip(regions, rng.normal(0.0, 0.3, n_regions)))
    for d in dates:
        storm = rng.gamma(2.0, 4.0)
        temp = rng.normal(5.0, 6.0)
        for r in regions:
            for h in (1, 2):
                g = np.maximum(storm + rng.gamma(2.0, 3.0, 4), 0.5)
                wm = g * rng.uniform(0.4, 0.7, 4)
                tmin = temp + rng.normal(0, 1.5) - rng.gamma(2.0, 1.5)
                tmax = tmin + rng.gamma(3.0, 1.5)
                rmax = rng.gamma(0.6, 4.0, 2)
                rmin = rmax * rng.uniform(0, 1, 2)
                sd = np.where(tmin < 0, rng.gamma(1.0, 5.0, 2), 0.0)
                sh = sd * rng.uniform(0.5, 1.5, 2)
                ice = (rng.random(2) < np.where(tmin < 0, 0.2, 0.01)).astype(int)
                light = rng.integers(1, 6, 2)
                risk = RISK_LEVELS[int(np.clip((g.max() - 8) // 8, 0, 2))]
                rows.append([r, d, h, risk, round(tmin, 2), round(tmax, 2),
                             *np.round(rng.uniform(0, 360, 4), 1), *np.round(g, 2), *np.round(wm, 2),
                             round(rmin[0], 2), round(rmax[0], 2), round(rmin[1], 2), round(rmax[1], 2),
                             round(sd[0], 2), round(sh[0], 2), int(ice[0]),
                             round(sd[1], 2), round(sh[1], 2), int(ice[1]),
                             int(light[0]), int(light[1]), 0.0])
    df = pd.DataFrame(rows, columns=WEATHER_COLUMNS)
    gust = df[WIND_GUST].max(axis=1).to_numpy()
    reg = df["region"].map(region_eff).to_numpy()
    zgust = (gust - 15.0) / 6.0
    xi0 = 1.0 / (1.0 + np.exp(-(0.6 - 1.6 * zgust - reg - 0.5 * df["icing_h1"].to_numpy())))
    mu = np.exp(0.5 + 0.8 * np.clip(zgust, -2, 3) + reg)
    sigma = 0.9
    zero = rng.random(len(df)) < xi0
    pos = rng.gamma(1.0 / sigma**2, mu * sigma**2)
    df["faults"] = np.where(zero, 0.0, np.round(np.maximum(pos, 1e-3), 3))
    # stay clear of exact zeros from rounding
    df.loc[~zero & (df["faults"] == 0), "faults"] = 0.001
    overlap = pd.DataFrame({"forecast_region": regions, "admin_region": regions, "weight": 1.0})
    return validate_weather(df), _ring_graph(regions), overlap


def weather_schema() -> Schema:
    """Modelling variables derived from the weather columns."""
    return Schema([
        ColumnSchema("region", "categorical"),
        ColumnSchema("horizon", "binary", positive=2),
        ColumnSchema("risk", "ordinal", levels=RISK_LEVELS),
        ColumnSchema("temp_min", "numeric"),
        ColumnSchema("temp_max", "numeric"),
        ColumnSchema("wind_dir8", "categorical", columns=WIND_DIR, reduce="circmean", bin="octant"),
        ColumnSchema("gust_max", "numeric", columns=WIND_GUST, reduce="max"),
        ColumnSchema("wind_mean_max", "numeric", columns=WIND_MEAN, reduce="max"),
        ColumnSchema("gust", "interval", columns=WIND_GUST),
        ColumnSchema("rain_max", "numeric", columns=["rain_max_h1", "rain_max_h2"], reduce="max"),
        ColumnSchema("snow_depth", "numeric", columns=["snow_depth_h1", "snow_depth_h2"], reduce="max"),
        ColumnSchema("snow_height", "numeric", columns=["snow_height_h1", "snow_height_h2"], reduce="max"),
        ColumnSchema("icing", "binary", columns=["icing_h1", "icing_h2"], reduce="max"),
        ColumnSchema("lightning", "ordinal", columns=["lightning_h1", "lightning_h2"], reduce="max",
                     levels=["1", "2", "3", "4", "5"]),
    ])


NUMERIC_WEATHER = ["temp_min", "temp_max", "gust_max", "wind_mean_max", "rain_max"]


def weather_terms(with_mrf: bool = True, interactions: bool = True) -> list[dict]:
    """Default term configuration for the weather schema."""
    terms: list[dict] = [{"kind": "intercept"}, {"kind": "linear", "var": "horizon"},
                         {"kind": "ridge", "var": "region"}]
    if with_mrf:
        terms.append({"kind": "mrf", "var": "region"})
    terms += [{"kind": "ordinal", "var": "risk"}, {"kind": "ordinal", "var": "lightning"},
              {"kind": "linear", "var": "icing"}, {"kind": "ridge", "var": "wind_dir8"},
              {"kind": "linear_smooth", "var": "snow_depth"}]
    terms += [{"kind": "linear_smooth", "var": v} for v in NUMERIC_WEATHER]
    if interactions:
        terms.append({"kind": "interaction", "vars": ["region", "wind_dir8", "gust_max"],
                      "hierarchical": True})
    return terms
