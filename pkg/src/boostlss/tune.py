"""Binary genetic algorithm over tree-learner hyperparameters.

A genome is 7 bits: 2 for depth (1..4), 3 for ``mtry`` (1..8) and 2 indexing
``min_leaf`` in (50, 250, 450, 650). Every bit pattern decodes to a valid
configuration.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .boost import thread_count
from .learners import TreeConfig

__all__ = [
    "GENOME_BITS",
    "MIN_LEAF_CHOICES",
    "Genome",
    "GAConfig",
    "GAResult",
    "run_ga",
    "random_search",
    "tune_tree_model",
]

GENOME_BITS = 7
MIN_LEAF_CHOICES = (50, 250, 450, 650)


def _to_int(bits: Sequence[int]) -> int:
    return int("".join(str(int(b)) for b in bits), 2)


def _to_bits(value: int, width: int) -> tuple[int, ...]:
    return tuple(int(c) for c in format(value, f"0{width}b"))


@dataclass(frozen=True)
class Genome:
    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) != GENOME_BITS or any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"genome must be {GENOME_BITS} bits of 0/1")

    def __str__(self) -> str:
        return "".join(map(str, self.bits))

    @classmethod
    def from_string(cls, s: str) -> "Genome":
        return cls(tuple(int(c) for c in s))

    def decode(self) -> dict:
        return {"max_depth": _to_int(self.bits[:2]) + 1, "mtry": _to_int(self.bits[2:5]) + 1,
                "min_leaf": MIN_LEAF_CHOICES[_to_int(self.bits[5:])]}

    @classmethod
    def encode(cls, max_depth: int, mtry: int, min_leaf: int) -> "Genome":
        if not 1 <= max_depth <= 4 or not 1 <= mtry <= 8 or min_leaf not in MIN_LEAF_CHOICES:
            raise ValueError("configuration outside the genome's range")
        return cls(_to_bits(max_depth - 1, 2) + _to_bits(mtry - 1, 3)
                   + _to_bits(MIN_LEAF_CHOICES.index(min_leaf), 2))

    def tree_config(self, base: TreeConfig | None = None) -> TreeConfig:
        base = base or TreeConfig()
        d = self.decode()
        return replace(base, max_depth=d["max_depth"], mtry=d["mtry"], min_leaf=d["min_leaf"],
                       min_split=max(base.min_split, 2 * d["min_leaf"]))


@dataclass
class GAConfig:
    n_population: int = 8
    n_generations: int = 3
    p_crossover: float = 0.8
    p_mutation: float = 0.1
    elitism: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_population < 1 or self.n_generations < 1:
            raise ValueError("population and generations must be >= 1")
        if not 0 <= self.elitism < self.n_population:
            raise ValueError("elitism must be smaller than the population")
        for p in (self.p_crossover, self.p_mutation):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


@dataclass
class GAResult:
    best: Genome
    best_fitness: float
    generation_best: list[float]
    history: list[tuple[int, Genome, float]] = field(default_factory=list)

    def report(self, base: TreeConfig | None = None) -> str:
        """CSV with one row per evaluated genome."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generation", "genome", "max_depth", "mtry", "min_leaf", "holdout_loglik"])
        for g, genome, fit in self.history:
            d = genome.decode()
            w.writerow([g, str(genome), d["max_depth"], d["mtry"], d["min_leaf"], repr(float(fit))])
        return buf.getvalue()


def _score(fitness, genome) -> float:
    try:
        v = float(fitness(genome))
    except Exception:  # a failing genome is just unfit
        return -math.inf
    return v if math.isfinite(v) else -math.inf


def _evaluate(fitness, pop, cache):
    todo = [g for g in dict.fromkeys(pop) if g not in cache]
    n = thread_count()
    if n > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            vals = list(ex.map(lambda g: _score(fitness, g), todo))
    else:
        vals = [_score(fitness, g) for g in todo]
    cache.update(zip(todo, vals))
    return [cache[g] for g in pop]


def run_ga(config: GAConfig, fitness: Callable[[Genome], float],
           initial: Sequence[Genome] | None = None) -> GAResult:
    """Maximise ``fitness`` with tournament selection, one-point crossover and bit flips.

    Fitness values are cached per genome, so a genome is evaluated once
    even when it survives several generations.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_population
    if initial is None:
        pop = [Genome(tuple(int(b) for b in rng.integers(0, 2, GENOME_BITS))) for _ in range(n)]
    else:
        pop = list(initial)
    cache: dict[Genome, float] = {}
    history: list[tuple[int, Genome, float]] = []
    gen_best: list[float] = []
    best_g, best_f = None, -math.inf
    for gen in range(config.n_generations):
        fit = _evaluate(fitness, pop, cache)
        history.extend((gen, g, f) for g, f in zip(pop, fit))
        order = sorted(range(len(pop)), key=lambda i: (-fit[i], i))
        i0 = order[0]
        if best_g is None or fit[i0] > best_f:
            best_g, best_f = pop[i0], fit[i0]
        gen_best.append(best_f)
        if gen == config.n_generations - 1:
            break
        elites = [pop[i] for i in order[: config.elitism] if math.isfinite(fit[i])]
        children: list[Genome] = list(elites)

        def pick():
            a, b = rng.integers(0, len(pop), 2)
            return pop[a] if fit[a] >= fit[b] else pop[b]

        while len(children) < n:
            p1, p2 = pick().bits, pick().bits
            if rng.random() < config.p_crossover:
                cut = int(rng.integers(1, GENOME_BITS))
                c1, c2 = p1[:cut] + p2[cut:], p2[:cut] + p1[cut:]
            else:
                c1, c2 = p1, p2
            for c in (c1, c2):
                flip = rng.random(GENOME_BITS) < config.p_mutation
                c = tuple(int(b) ^ int(f) for b, f in zip(c, flip))
                if len(children) < n:
                    children.append(Genome(c))
        pop = children
    return GAResult(best_g, best_f, gen_best, history)


def random_search(n_draws: int, fitness: Callable[[Genome], float], seed: int = 0) -> float:
    """Best fitness among ``n_draws`` uniformly random genomes."""
    rng = np.random.default_rng(seed)
    return max(_score(fitness, Genome(tuple(int(b) for b in rng.integers(0, 2, GENOME_BITS))))
               for _ in range(n_draws))


def tune_tree_model(frame: pd.DataFrame, y, holdout: tuple[pd.DataFrame, np.ndarray], schema,
                    variables: Sequence[str], family: str = "gamma", ga: GAConfig | None = None,
                    nu: float = 0.1, stopping=None, seed: int = 0,
                    base: TreeConfig | None = None) -> tuple[TreeConfig, GAResult]:
    """Pick tree settings by holdout log-likelihood of the positive-stage model."""
    from .boost import train
    from .design import InterceptTerm, TreeTerm

    y = np.asarray(y, dtype=float)
    fh, yh = holdout
    yh = np.asarray(yh, dtype=float)
    keep, keep_h = y > 0, yh > 0
    ftr, ytr, fho, yho = frame[keep], y[keep], fh[keep_h], yh[keep_h]
    schema.fit(frame, list(variables))

    def fitness(genome: Genome) -> float:
        cfg = genome.tree_config(base)
        terms = [InterceptTerm(), TreeTerm(list(variables))]
        ens = train(family, ftr, ytr, schema, terms, nu=nu, stopping=stopping, holdout=(fho, yho),
                    seed=seed, tree_config=cfg, fit_schema=False)
        return ens.loglik(fho, yho)

    result = run_ga(ga or GAConfig(seed=seed), fitness)
    return result.best.tree_config(base), result
