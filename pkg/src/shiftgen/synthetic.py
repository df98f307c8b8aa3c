"""Built-in synthetic datasets for the two demonstration pipelines."""

from __future__ import annotations

import numpy as np

from .ndmath import RngState


def correlated_counts(n: int, rng: RngState, d: int = 10, rho: float = 0.6, base_rate: float = 20.0, shape: float = 2.0) -> np.ndarray:
    """Over-dispersed, spatially correlated counts (one row per period).

    A latent Gaussian field with exponentially decaying correlation
    rho^|i - j| modulates per-column rates; counts are Poisson given
    gamma-mixed rates, so the marginals are negative-binomial-like.
    """
    idx = np.arange(d)
    corr = rho ** np.abs(idx[:, None] - idx[None, :])
    L = np.linalg.cholesky(corr)
    field = rng.normal((n, d)) @ L.T
    rates = base_rate * (1.0 + idx / d) * np.exp(0.5 * field - 0.125)
    g = rng.numpy.gamma(shape, 1.0 / shape, size=(n, d))
    return rng.numpy.poisson(rates * g).astype(np.float64)


def factor_returns(n: int, rng: RngState, d: int = 6, market_vol: float = 0.01, idio_vol: float = 0.008, drift: float = 3e-4) -> np.ndarray:
    """Daily returns with one common market factor plus idiosyncratic noise."""
    loadings = np.linspace(0.6, 1.4, d)
    mu = drift * np.linspace(0.5, 1.5, d)
    market = market_vol * rng.normal(n)
    return mu + np.outer(market, loadings) + idio_vol * rng.normal((n, d))
