"""Fit the repulsive mixture to three well-separated 1-D clusters.

Prints the posterior of K, the adjusted Rand index of the point-estimate
partition and the posterior mean density at a few points.

    python demos/mixture_recovery.py [--iterations 20000] [--seed 7]
"""

import argparse

import numpy as np

from dpplatent import (
    MixturePriorConfig,
    Schedule,
    adjusted_rand_index,
    density_on_grid,
    fit_mixture,
    k_distribution,
    k_mode,
    point_estimate_partition,
    simulate_mixture_data,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--iterations", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    y, truth = simulate_mixture_data([-3.0, 0.0, 3.0], [0.5] * 3, [1 / 3] * 3, 300, rng)
    trace = fit_mixture(y, MixturePriorConfig(), Schedule(args.iterations, args.iterations // 4), rng)

    pmf = k_distribution(trace)
    print("posterior of K:")
    for k, p in enumerate(pmf):
        if p >= 0.0005:
            print(f"  K = {k}: {p:.3f}")
    print(f"K_hat = {k_mode(pmf)}")
    print(f"ARI of point-estimate partition = {adjusted_rand_index(point_estimate_partition(trace), truth):.3f}")
    grid = np.linspace(-5, 5, 11)
    for x, d in zip(grid, density_on_grid(trace, grid)):
        print(f"  density({x:+.1f}) = {d:.4f}")


if __name__ == "__main__":
    main()
