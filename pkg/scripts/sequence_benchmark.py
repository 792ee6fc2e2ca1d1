#!/usr/bin/env python3
"""GA sequencing benchmark against brute-force enumeration.

Builds random small task sets, compares the GA's best cost with the exhaustive
optimum, and reports hit rate and generation-zero vs final fitness.

Usage: python scripts/sequence_benchmark.py [n_tasks] [n_instances]
"""

import itertools
import sys

import numpy as np

from autosand import planner as pl


def instance(seed, n_tasks):
    rng = np.random.default_rng(seed)
    configs = rng.uniform(-1, 1, (n_tasks + 1, 4))
    w = np.array([1.0, 1.0, 0.3, 0.3])

    def cost(i, j):
        return pl.path_cost(pl.Path([configs[i + 1], configs[j + 1]]), w)

    return cost


def main():
    n_tasks = int(sys.argv[1]) if len(sys.argv) > 1 else 6
    n_instances = int(sys.argv[2]) if len(sys.argv) > 2 else 10
    hits = 0
    for seed in range(n_instances):
        cost = instance(seed, n_tasks)
        result = pl.ga_optimize_sequence(list(range(n_tasks)),
                                         pl.GaParams(seed=seed), cost)
        best = min(
            sum([cost(-1, p[0])] + [cost(a, b) for a, b in zip(p[:-1], p[1:])])
            for p in itertools.permutations(range(n_tasks)))
        hit = abs(result.total_cost - best) < 1e-9
        hits += hit
        print(f"seed {seed}: ga {result.total_cost:.4f} vs optimum "
              f"{best:.4f} ({'hit' if hit else 'MISS'}), first-gen best "
              f"{result.best_history[0]:.4f}")
    print(f"\n{hits}/{n_instances} instances solved to optimality "
          f"({n_tasks} tasks, {math_perms(n_tasks)} permutations each)")


def math_perms(n):
    out = 1
    for k in range(2, n + 1):
        out *= k
    return out


if __name__ == "__main__":
    main()
