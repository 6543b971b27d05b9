"""Genetic search over tree settings on simulated weather data, against random search.

    python scripts/tune_trees.py --days 150 --seed 0
"""

import argparse

import numpy as np

from boostlss.boost import StoppingRule
from boostlss.pipeline import simulate_weather, split, weather_schema
from boostlss.tune import GAConfig, Genome, random_search, run_ga, tune_tree_model

VARIABLES = ["horizon", "temp_min", "temp_max", "gust_max", "wind_mean_max", "rain_max", "snow_depth", "icing"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--days", type=int, default=150)
    ap.add_argument("--regions", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-iter", type=int, default=400)
    ap.add_argument("--surrogate-seeds", type=int, default=50)
    args = ap.parse_args()

    df, _, _ = simulate_weather(args.days, args.regions, args.seed)
    tr, ho, _ = split(df, seed=args.seed)
    best, res = tune_tree_model(tr, tr.faults.to_numpy(), (ho, ho.faults.to_numpy()), weather_schema(), VARIABLES,
                                ga=GAConfig(seed=args.seed), stopping=StoppingRule(max_iter=args.max_iter),
                                seed=args.seed)
    print(res.report(), end="")
    print(f"\nbest genome {res.best} -> {best}")
    print("per-generation best holdout l_total:", ", ".join(f"{v:.2f}" for v in res.generation_best))

    # the same budget on a surrogate whose optimum is known
    target = Genome.from_string("1011010")

    def surrogate(g):
        return -float(sum(a != b for a, b in zip(g.bits, target.bits)))

    ga = [run_ga(GAConfig(seed=s), surrogate).best_fitness for s in range(args.surrogate_seeds)]
    rs = [random_search(24, surrogate, seed=10_000 + s) for s in range(args.surrogate_seeds)]
    print(f"\nsurrogate (negative Hamming distance to {target}), {args.surrogate_seeds} seeds")
    print(f"  GA 8x3       median {np.median(ga):.2f}  mean {np.mean(ga):.2f}  hits {np.mean(np.array(ga) == 0):.0%}")
    print(f"  random 24    median {np.median(rs):.2f}  mean {np.mean(rs):.2f}  hits {np.mean(np.array(rs) == 0):.0%}")


if __name__ == "__main__":
    main()
