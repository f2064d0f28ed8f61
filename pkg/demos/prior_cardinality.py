"""Prior law of the number of mixture components.

Runs a prior-only chain at fixed sigma_q = theta = 1 and compares its K
frequencies with the cardinality law of two eigenvalue sets: the closed
form 2^-h (eigenvalues of the similarity under the Gaussian weight) and the
spectrum of the kernel's integral operator, which is what the chain
actually targets.

    python demos/prior_cardinality.py [--sweeps 50000]
"""

import argparse

import numpy as np

from dpplatent import GaussianSpectralKernel, MixturePriorConfig, Schedule, cardinality_pmf, fit_mixture


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sweeps", type=int, default=50000)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    config = MixturePriorConfig(fix_hyperparams=True, K_max=12, birth_attempts=1)
    trace = fit_mixture(None, config, Schedule(args.sweeps, 1000), np.random.default_rng(args.seed),
                        prior_only=True, dim=1)
    emp = np.bincount(trace.values("K"), minlength=13)[1:] / len(trace)
    kernel = GaussianSpectralKernel(1.0, 1.0, 1)
    laws = {}
    for spectrum in ("weighted", "lebesgue"):
        p = cardinality_pmf(kernel.eigenvalues(spectrum), 12)[1:]
        laws[spectrum] = p / p.sum()
    print(" K   chain   weighted  operator")
    for k in range(1, 5):
        print(f"{k:2d}  {emp[k - 1]:.4f}   {laws['weighted'][k - 1]:.4f}    {laws['lebesgue'][k - 1]:.4f}")
    for name, p in laws.items():
        print(f"TV to {name}: {0.5 * np.abs(emp - p).sum():.4f}")


if __name__ == "__main__":
    main()
