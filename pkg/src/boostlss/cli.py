"""Command-line interface.

Every command reads a JSON run configuration (``--config``) or a saved model
and writes UTF-8 CSV/JSON files. Exit codes: 0 success, 1 internal error,
2 user or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .boost import StoppingRule
from .design import AdjacencyGraph, ColumnSchema, DesignError, Schema
from .distributions import DomainError, exceedance_probability, zadj_quantile
from .learners import TreeConfig
from .pipeline import (WEATHER_COLUMNS, PipelineError, allocate_faults, read_overlap_csv,
                       simulate_weather, split, validate_weather, weather_schema, weather_terms)
from .tune import GAConfig, tune_tree_model
from .zadj_model import ModelConfig, ModelError, ZeroAdjustedModel, fit_two_stage

__all__ = ["RunConfig", "ConfigError", "main"]


class ConfigError(ValueError):
    """Bad command-line arguments or run configuration."""


USER_ERRORS = (ConfigError, DesignError, PipelineError, ModelError, DomainError,
               FileNotFoundError, json.JSONDecodeError, KeyError)


@dataclass
class RunConfig:
    """Declarative description of a run; relative paths resolve against the config file."""

    data: str = "weather.csv"
    adjacency: str | None = None
    overlap: str | None = None
    counts: str | None = None
    schema: list[dict] | None = None
    response: str = "faults"
    family: str = "gamma"
    nu: float = 0.3
    batch: int = 50
    patience: int = 100
    max_iter: int = 5000
    fractions: list[float] = field(default_factory=lambda: [0.6, 0.2, 0.2])
    seed: int = 0
    threshold: float = 14.0
    terms: list[dict] | None = None
    zero_terms: list[dict] | None = None
    tree: dict | None = None
    tree_variables: list[str] | None = None
    ga: dict | None = None
    base_dir: str = field(default=".", repr=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "RunConfig":
        names = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        return cls(**d, base_dir=base_dir)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(d, str(path.parent))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def model_config(self, graph: AdjacencyGraph | None) -> ModelConfig:
        terms = self.terms if self.terms is not None else weather_terms(with_mrf=graph is not None)
        if any(t.get("kind") == "mrf" for t in terms + (self.zero_terms or [])) and graph is None:
            raise ConfigError("adjacency required for MRF term (set 'adjacency' to an existing file)")
        return ModelConfig(family=self.family, terms=terms, zero_terms=self.zero_terms, nu=self.nu,
                           batch=self.batch, patience=self.patience, max_iter=self.max_iter,
                           seed=self.seed, tree=self.tree, response=self.response)

    def make_schema(self) -> Schema:
        if self.schema is None:
            return weather_schema()
        return Schema([ColumnSchema(**c) for c in self.schema])


# ---------------------------------------------------------------------------
# data loading
# ---------------------------------------------------------------------------


def read_table(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    df = pd.read_csv(path, dtype={"region": str, "date": str, "risk": str}, float_precision="round_trip")
    if list(df.columns) == WEATHER_COLUMNS:
        validate_weather(df)
    return df


def load_graph(cfg: RunConfig, df: pd.DataFrame) -> AdjacencyGraph | None:
    p = cfg.path(cfg.adjacency)
    if p is None:
        return None
    if not p.exists():
        raise ConfigError(f"adjacency required for MRF term: file not found {p}")
    g = AdjacencyGraph.from_file(p)
    regions = sorted(set(g.regions) | set(df["region"].astype(str))) if "region" in df else g.regions
    return AdjacencyGraph(regions, g.edges)


def apply_counts(cfg: RunConfig, df: pd.DataFrame) -> pd.DataFrame:
    """Replace the response by overlap-weighted admin counts when both files are configured."""
    if cfg.counts is None and cfg.overlap is None:
        return df
    if cfg.counts is None or cfg.overlap is None:
        raise ConfigError("'counts' and 'overlap' must be given together")
    weights = read_overlap_csv(cfg.path(cfg.overlap))
    counts = pd.read_csv(cfg.path(cfg.counts), dtype={"admin_region": str, "date": str})
    if list(counts.columns) != ["admin_region", "date", "count"]:
        raise PipelineError("counts table needs columns ['admin_region', 'date', 'count']")
    df = df.copy()
    resp = np.zeros(len(df))
    for date, grp in counts.groupby("date", sort=True):
        alloc = allocate_faults(grp.set_index("admin_region")["count"], weights)
        rows = (df["date"] == date).to_numpy()
        resp[rows] = df.loc[rows, "region"].map(alloc).fillna(0.0).to_numpy()
    df[cfg.response] = resp
    return df


def _response(df: pd.DataFrame, name: str) -> np.ndarray:
    if name not in df.columns:
        raise ConfigError(f"response column {name!r} missing from data")
    return df[name].to_numpy(dtype=float)


def _write_csv(df: pd.DataFrame, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n")


def _write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _overrides(cfg: RunConfig, args) -> RunConfig:
    for name in ("family", "nu", "seed", "batch", "patience", "max_iter", "threshold"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    return cfg


def cmd_train(args) -> int:
    cfg = _overrides(RunConfig.load(args.config), args)
    df = apply_counts(cfg, read_table(cfg.path(cfg.data)))
    graph = load_graph(cfg, df)
    mcfg = cfg.model_config(graph)
    train_df, hold_df, test_df = split(df, cfg.fractions, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    model = fit_two_stage(train_df, _response(train_df, cfg.response), cfg.make_schema(), mcfg,
                          holdout=(hold_df, _response(hold_df, cfg.response)), graph=graph,
                          progress=lines.append)
    model.save(out / "model.json")
    (out / "iterations.log").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    report = {"m_stop": {"zero": model.zero.m_stop, "positive": model.pos.m_stop}}
    for name, part in (("train", train_df), ("holdout", hold_df), ("test", test_df)):
        if len(part):
            total, avg = model.log_score(part, _response(part, cfg.response))
            report[name] = {"n": len(part), "l_total": total, "l_average": avg}
    imp = model.importance()
    report["delta_loglik"] = {s: float(imp.loc[imp.stage == s, "delta_loglik"].sum())
                              for s in ("zero", "positive")}
    _write_json(report, out / "report.json")
    _write_csv(imp, out / "importance.csv")
    print(f"model written to {out / 'model.json'}")
    return 0


def _model_and_data(args):
    model = ZeroAdjustedModel.load(args.model)
    df = read_table(args.data)
    return model, df


def cmd_predict(args) -> int:
    model, df = _model_and_data(args)
    pred = model.predict(df)
    fam = model.family
    out = pd.DataFrame({"row_id": np.arange(len(df)), "xi0": pred.xi0})
    for k, name in enumerate(fam.param_names):
        out[name] = pred.theta[:, k]
    out["q99"] = zadj_quantile(0.99, pred.xi0, fam, pred.theta)
    out["p_exceed"] = exceedance_probability(pred.xi0, fam, pred.theta, args.threshold)
    out["warnings"] = ["; ".join(w) for w in pred.warnings]
    _write_csv(out, args.out)
    return 0


def cmd_evaluate(args) -> int:
    model, df = _model_and_data(args)
    resp = model.config.response if model.config else "faults"
    y = _response(df, resp)
    total, avg = model.log_score(df, y)
    l_zero, l_pos = model.stage_scores(df, y)
    out = pd.DataFrame([{"n": len(df), "l_total": total, "l_average": avg,
                         "l_zero_stage": l_zero, "l_positive_stage": l_pos}])
    _write_csv(out, args.out)
    return 0


def cmd_roc(args) -> int:
    model, df = _model_and_data(args)
    resp = model.config.response if model.config else "faults"
    roc = model.roc_curve(df, _response(df, resp), args.threshold)
    out = roc.to_frame()
    out["auc"] = roc.auc
    _write_csv(out, args.out)
    print(f"AUC={roc.auc!r}")
    return 0


def cmd_importance(args) -> int:
    model = ZeroAdjustedModel.load(args.model)
    _write_csv(model.importance(), args.out)
    return 0


def _grid(spec: str) -> list:
    parts = spec.split(":")
    if len(parts) == 3:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 2:
            raise ConfigError("grid needs at least 2 points")
        return np.linspace(lo, hi, n).tolist()
    return [p for p in spec.split(",") if p]


def cmd_partial(args) -> int:
    model = ZeroAdjustedModel.load(args.model)
    _write_csv(model.partial_effect(args.param, args.term, _grid(args.grid)), args.out)
    return 0


def cmd_tune(args) -> int:
    cfg = _overrides(RunConfig.load(args.config), args)
    df = apply_counts(cfg, read_table(cfg.path(cfg.data)))
    train_df, hold_df, _ = split(df, cfg.fractions, cfg.seed)
    schema = cfg.make_schema()
    variables = cfg.tree_variables or [c for c in schema.columns if schema[c].kind != "interval"]
    ga = GAConfig(**{**(cfg.ga or {}), "seed": cfg.seed})
    base = TreeConfig(**cfg.tree) if cfg.tree else None
    best, result = tune_tree_model(train_df, _response(train_df, cfg.response),
                                   (hold_df, _response(hold_df, cfg.response)), schema, variables,
                                   family=cfg.family, ga=ga, nu=args.nu if args.nu is not None else 0.1,
                                   stopping=StoppingRule(cfg.batch, cfg.patience, cfg.max_iter),
                                   seed=cfg.seed, base=base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tuning.csv").write_text(result.report(), encoding="utf-8")
    _write_json({"best_genome": str(result.best), "tree": best.to_dict(),
                 "holdout_loglik": result.best_fitness, "generation_best": result.generation_best},
                out / "best.json")
    return 0


def cmd_simulate(args) -> int:
    df, graph, overlap = simulate_weather(args.days, args.regions, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    df.to_csv(out / "weather.csv", index=False, lineterminator="\n")
    (out / "adjacency.txt").write_text(graph.to_text(), encoding="utf-8")
    _write_csv(overlap, out / "overlap.csv")
    cfg = RunConfig(data="weather.csv", adjacency="adjacency.txt", seed=args.seed)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boostlss", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def config_cmd(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="run configuration JSON")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--family")
        s.add_argument("--nu", type=float)
        s.add_argument("--seed", type=int)
        s.add_argument("--batch", type=int)
        s.add_argument("--patience", type=int)
        s.add_argument("--max-iter", dest="max_iter", type=int)
        return s

    config_cmd("train", "fit both stages and write model, log and report").set_defaults(func=cmd_train)
    config_cmd("tune", "genetic search over tree settings").set_defaults(func=cmd_tune)

    def model_cmd(name, help_, data=True):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--model", required=True)
        if data:
            s.add_argument("--data", required=True, help="CSV with covariates (and response)")
        s.add_argument("--out", required=True, help="output CSV")
        return s

    s = model_cmd("predict", "per-row distribution summaries")
    s.add_argument("--threshold", "-t", type=float, default=14.0)
    s.set_defaults(func=cmd_predict)
    model_cmd("evaluate", "log-score on a dataset").set_defaults(func=cmd_evaluate)
    s = model_cmd("roc", "ROC curve of exceedance scores")
    s.add_argument("--threshold", "-t", type=float, default=14.0)
    s.set_defaults(func=cmd_roc)
    model_cmd("importance", "log-likelihood gain per term", data=False).set_defaults(func=cmd_importance)
    s = model_cmd("partial", "partial effect of one term", data=False)
    s.add_argument("--param", required=True, help="xi0 or a family parameter")
    s.add_argument("--term", required=True, help="term id, e.g. smooth(gust_max)")
    s.add_argument("--grid", required=True, help="lo:hi:n or comma-separated levels")
    s.set_defaults(func=cmd_partial)

    s = sub.add_parser("simulate", help="write a synthetic weather dataset and config")
    s.add_argument("--out", required=True)
    s.add_argument("--days", type=int, default=200)
    s.add_argument("--regions", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except USER_ERRORS as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"internal error: {e}", file=sys.stderr)
        traceback.print_exc(file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
