"""Resampling schemes: multinomial, residual, stratified, systematic.

Each scheme maps normalized weights ``W`` (length N, summing to 1) to N
ancestor indices; post-resampling weights are uniform 1/N. Indices are
0-based. ``systematic`` with exactly uniform weights reproduces every index
once.
"""

from __future__ import annotations

import numpy as np

KINDS = ("multinomial", "residual", "stratified", "systematic")


def multinomial(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.shape[0]
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, rng.uniform(size=n), side="right").astype(np.int64)


def residual(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.shape[0]
    counts = np.floor(n * weights).astype(np.int64)
    deterministic = int(counts.sum())
    out = np.repeat(np.arange(n), counts)
    remainder = n - deterministic
    if remainder > 0:
        residuals = n * weights - counts
        residuals /= residuals.sum()
        cum = np.cumsum(residuals)
        cum[-1] = 1.0
        extra = np.searchsorted(cum, rng.uniform(size=remainder), side="right")
        out = np.concatenate([out, extra.astype(np.int64)])
    return out


def _inverse_cdf(weights: np.ndarray, points: np.ndarray) -> np.ndarray:
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, points, side="left").astype(np.int64)


def stratified(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.shape[0]
    points = (np.arange(n) + rng.uniform(size=n)) / n
    return _inverse_cdf(weights, points)


def systematic(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.shape[0]
    points = (np.arange(n) + rng.uniform()) / n
    return _inverse_cdf(weights, points)


_SCHEMES = {"multinomial": multinomial, "residual": residual,
            "stratified": stratified, "systematic": systematic}


def resample(weights: np.ndarray, kind: str, rng: np.random.Generator) -> np.ndarray:
    """N ancestor indices drawn according to the named scheme."""
    scheme = _SCHEMES.get(kind)
    if scheme is None:
        raise ValueError(f"unknown resampling kind {kind!r}; "
                         f"choose from {', '.join(KINDS)}")
    weights = np.asarray(weights, dtype=np.float64)
    return scheme(weights, rng)
