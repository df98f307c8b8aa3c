#!/usr/bin/env python3
"""Latent Langevin posteriors under misspecified affine priors, against the exact posterior."""

import argparse

import numpy as np

from shiftgen.posterior import AffineGenerator, LangevinConfig, LinearGaussianLikelihood, latent_langevin


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scales", type=float, nargs="+", default=[0.5, 1.0, 1.5, 2.0, 3.0])
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    y, noise = 1.0, 1.0
    lik = LinearGaussianLikelihood(np.array([[1.0]]), noise, [y])
    print(f"{'scale':>6} {'mean':>8} {'exact':>8} {'var':>8} {'exact':>8}")
    for a in args.scales:
        xs = latent_langevin(AffineGenerator([[a]], [0.0]), lik, LangevinConfig(step=1e-3, n_steps=args.steps, seed=args.seed, chains=8))
        var = 1.0 / (1.0 / a ** 2 + 1.0 / noise)
        print(f"{a:6.2f} {xs.mean():8.4f} {var * y / noise:8.4f} {xs.var():8.4f} {var:8.4f}")


if __name__ == "__main__":
    main()
