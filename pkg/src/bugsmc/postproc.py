"""Summary statistics, kernel density estimates, and discrete mass tables.

All routines accept weighted particle values or unweighted MCMC traces
(weights default to uniform). Weighted quantiles use the left-continuous
inverse of the cumulative weight function: q(p) is the smallest sample value
whose cumulative weight reaches p.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .smc import posterior_expectation


def _normalized_weights(values: np.ndarray, weights) -> np.ndarray:
    if weights is None:
        return np.full(values.shape[0], 1.0 / values.shape[0])
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != values.shape:
        raise ValueError("weights and values must have the same length")
    total = w.sum()
    if not total > 0:
        raise ValueError("weights must have positive total mass")
    if abs(total - 1.0) < 1e-12:
        # particle-cloud weights arrive normalized; keep them verbatim so
        # summary means match posterior_expectation bitwise
        return w
    return w / total


def weighted_quantile(values: np.ndarray, weights: np.ndarray,
                      prob: float) -> float:
    """Left-continuous inverse CDF: smallest x with F(x) >= prob."""
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    idx = int(np.searchsorted(cum, prob, side="left"))
    idx = min(idx, len(values) - 1)
    return float(values[order[idx]])


@dataclass
class SummaryStats:
    mean: float
    variance: float
    quantiles: dict[float, float]
    mode: float | None = None
    n_eff: float | None = None

    def to_row(self) -> dict:
        row = {"mean": self.mean, "variance": self.variance}
        for p, q in self.quantiles.items():
            row[f"q{p:g}"] = q
        if self.mode is not None:
            row["mode"] = self.mode
        return row


def summary(values, weights=None, probs=(0.025, 0.5, 0.975),
            discrete: bool = False) -> SummaryStats:
    """Weighted mean, variance, and quantiles of one scalar quantity.

    MCMC traces pass ``weights=None`` for uniform weighting. ``discrete``
    additionally reports the highest-mass support point.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty sample set")
    for p in probs:
        if not 0.0 < p < 1.0:
            raise ValueError(f"quantile level {p} outside (0, 1)")
    w = _normalized_weights(values, weights)
    mean = float(posterior_expectation(values, w))
    variance = float(np.sum(w * (values - mean) ** 2))
    quantiles = {float(p): weighted_quantile(values, w, float(p))
                 for p in probs}
    mode = None
    if discrete:
        mode = table(values, w).mode()
    n_eff = float(1.0 / np.sum(w * w))
    return SummaryStats(mean, variance, quantiles, mode, n_eff)


@dataclass
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def at(self, x: float) -> float:
        return float(np.interp(x, self.grid, self.density))


def silverman_bandwidth(values: np.ndarray, weights: np.ndarray) -> float:
    """Weighted Silverman rule 0.9 * min(sd, IQR/1.34) * n_eff^(-1/5)."""
    mean = float(np.sum(weights * values))
    sd = math.sqrt(max(float(np.sum(weights * (values - mean) ** 2)), 0.0))
    iqr = (weighted_quantile(values, weights, 0.75)
           - weighted_quantile(values, weights, 0.25))
    n_eff = 1.0 / float(np.sum(weights * weights))
    scale = min(sd, iqr / 1.34) if iqr > 0 else sd
    if scale <= 0:
        raise ValueError("degenerate sample: all values identical; "
                         "use a mass table for discrete quantities")
    return 0.9 * scale * n_eff ** (-0.2)


def density(values, weights=None, bandwidth: float | None = None,
            grid_size: int = 512) -> DensityEstimate:
    """Gaussian-kernel weighted density estimate on a regular grid.

    The grid spans the data plus three bandwidths on each side. Raises for
    all-identical values (a mass table is the right tool there).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2 or np.unique(values).size < 2:
        raise ValueError("density needs at least two distinct values; "
                         "use a mass table for discrete quantities")
    w = _normalized_weights(values, weights)
    h = float(bandwidth) if bandwidth is not None \
        else silverman_bandwidth(values, w)
    if h <= 0:
        raise ValueError("bandwidth must be > 0")
    lo = values.min() - 3.0 * h
    hi = values.max() + 3.0 * h
    grid = np.linspace(lo, hi, grid_size)
    out = np.empty(grid_size)
    norm = 1.0 / (h * math.sqrt(2.0 * math.pi))
    block = max(1, int(2_000_000 // max(values.size, 1)))
    for start in range(0, grid_size, block):
        chunk = grid[start:start + block, None]
        z = (chunk - values[None, :]) / h
        out[start:start + block] = norm * np.sum(
            w[None, :] * np.exp(-0.5 * z * z), axis=1)
    return DensityEstimate(grid, out, h)


@dataclass
class MassTable:
    values: np.ndarray
    probs: np.ndarray

    def mode(self) -> float:
        return float(self.values[int(np.argmax(self.probs))])

    def prob_of(self, value: float) -> float:
        hits = np.nonzero(self.values == value)[0]
        return float(self.probs[hits[0]]) if hits.size else 0.0

    def as_dict(self) -> dict[float, float]:
        return {float(v): float(p) for v, p in zip(self.values, self.probs)}


def table(values, weights=None) -> MassTable:
    """Aggregate weight per support value of a discrete quantity."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty sample set")
    w = _normalized_weights(values, weights)
    support, inverse = np.unique(values, return_inverse=True)
    probs = np.bincount(inverse, weights=w, minlength=support.size)
    probs = probs / probs.sum()
    return MassTable(support, probs)


# ---------------------------------------------------------------------------
# Result emitters (plot-ready CSV/JSON)
# ---------------------------------------------------------------------------

def summaries_to_csv(rows: list[dict]) -> str:
    """Rows of {variable, element, flavor, mean, ...} to CSV text."""
    if not rows:
        return ""
    fields: list[str] = []
    for row in rows:
        for key in row:
            if key not in fields:
                fields.append(key)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def density_to_json(estimates: dict[str, DensityEstimate]) -> str:
    payload = {name: {"grid": est.grid.tolist(),
                      "density": est.density.tolist(),
                      "bandwidth": est.bandwidth}
               for name, est in estimates.items()}
    return json.dumps(payload, sort_keys=True)


def table_to_json(tables: dict[str, MassTable]) -> str:
    payload = {name: {"values": t.values.tolist(), "probs": t.probs.tolist()}
               for name, t in tables.items()}
    return json.dumps(payload, sort_keys=True)


def summarize_smc(output, probs=(0.025, 0.5, 0.975)) -> list[dict]:
    """Flatten an SmcOutput into filtering/smoothing summary rows."""
    rows = []
    for var, clouds in output.filtering.items():
        for cloud in clouds:
            for element, values in cloud.values.items():
                stats = summary(values, cloud.weights, probs)
                rows.append({"variable": var, "element": element,
                             "flavor": "filtering", "step": cloud.step,
                             **stats.to_row()})
        smoothing = output.smoothing[var]
        for element, values in smoothing.values.items():
            stats = summary(values, smoothing.weights, probs)
            rows.append({"variable": var, "element": element,
                         "flavor": "smoothing", "step": "",
                         **stats.to_row()})
    return rows


def summarize_traces(traces: dict[str, np.ndarray],
                     probs=(0.025, 0.5, 0.975)) -> list[dict]:
    """Summary rows for MCMC traces (uniform weights)."""
    rows = []
    for element, values in traces.items():
        stats = summary(values, None, probs)
        rows.append({"variable": element.split("[")[0], "element": element,
                     "flavor": "mcmc", "step": "", **stats.to_row()})
    return rows
