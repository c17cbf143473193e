"""Agreement metrics between analytical predictions and the load-flow oracle:
Jensen-Shannon distance, violation-count error, and the timing benchmark.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import loadflow
from .network import Phase
from .sensitivity import PowerChange, delta_v_cumulative


@dataclass(frozen=True)
class Histogram:
    """Counts over ascending bin edges; len(counts) == len(bin_edges) - 1."""

    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.asarray(self.counts, dtype=np.int64)
        if edges.ndim != 1 or counts.shape != (edges.size - 1,):
            raise ValueError("need len(counts) == len(bin_edges) - 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly ascending")
        if np.any(counts < 0) or counts.sum() == 0:
            raise ValueError("histogram needs non-negative counts with a positive total")
        edges.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def density(self):
        """Probability mass per bin (sums to 1)."""
        return self.counts / self.total


def make_histogram(samples, pred=None, bins=50):
    """Equal-width histogram spanning the samples and, when a prediction is
    given, its 1e-6 / 1-1e-6 quantile range as well."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("no samples")
    lo, hi = float(samples.min()), float(samples.max())
    if pred is not None:
        if pred.degenerate:
            lo, hi = min(lo, pred.kappa), max(hi, pred.kappa)
        else:
            lo = min(lo, _rician_quantile(pred, 1e-6))
            hi = max(hi, _rician_quantile(pred, 1.0 - 1e-6))
    if hi <= lo:
        hi = lo + 1e-12
    counts, edges = np.histogram(samples, bins=bins, range=(lo, hi))
    return Histogram(bin_edges=edges, counts=counts)


def _rician_quantile(pred, q):
    """Quantile by bisection on the prediction's CDF."""
    lo = 0.0
    hi = pred.kappa + 12.0 * pred.sigma + 1e-12
    while pred.cdf(hi) < q:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if pred.cdf(mid) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def _js_distance_pq(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)
    # bins empty on both sides contribute zero; log base 2 bounds the
    # divergence by 1 so the distance lands in [0, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_p = np.where(p > 0, p * np.log2(p / m), 0.0)
        kl_q = np.where(q > 0, q * np.log2(q / m), 0.0)
    div = 0.5 * kl_p.sum() + 0.5 * kl_q.sum()
    return float(np.sqrt(max(div, 0.0)))


def jensen_shannon_distance(empirical, theoretical):
    """JS distance between a histogram and a prediction's bin masses.

    The Rician density is integrated over the histogram's own bins (CDF
    differences) and renormalized over the binned range.
    """
    edges = empirical.bin_edges
    if theoretical.degenerate:
        # point mass: all weight in the bin containing kappa
        if not edges[0] <= theoretical.kappa <= edges[-1]:
            return 1.0
        q = np.zeros(edges.size - 1)
        q[min(np.searchsorted(edges, theoretical.kappa, side="right") - 1, q.size - 1)] = 1.0
        return _js_distance_pq(empirical.density(), q)
    cdf = theoretical.cdf(edges)
    q = np.diff(cdf)
    if q.sum() <= 0.0:
        # prediction has no mass on the histogram support: total mismatch
        return 1.0
    return _js_distance_pq(empirical.density(), q)


@dataclass(frozen=True)
class ErrorReport:
    """Predicted vs actual violation-count series and the mean error."""

    predicted: tuple
    actual: tuple
    abs_errors: tuple
    mean_error_pct: float
    metadata: dict = field(default_factory=dict)


def violation_count_series(predicted, actual, metadata=None):
    """Mean absolute count error, as % of the mean actual count (floor 1)."""
    predicted = [int(x) for x in predicted]
    actual = [int(x) for x in actual]
    if len(predicted) != len(actual):
        raise ValueError(f"series lengths differ: {len(predicted)} vs {len(actual)}")
    if not predicted:
        raise ValueError("empty series")
    errs = [abs(p - a) for p, a in zip(predicted, actual)]
    denom = max(1.0, float(np.mean(actual)))
    pct = 100.0 * float(np.mean(errs)) / denom
    return ErrorReport(predicted=tuple(predicted), actual=tuple(actual),
                       abs_errors=tuple(errs), mean_error_pct=pct,
                       metadata=dict(metadata or {}))


def _median_time(fn, repetitions, warmup=5):
    for _ in range(warmup):
        fn()
    out = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return float(np.median(out))


def benchmark_sensitivity_vs_loadflow(feeder, state, actors, repetitions=30,
                                      obs=None, ds=0.01):
    """Median wall time of one-node analytical sensitivity vs one full solve.

    ``actors`` is a list of node ids receiving a balanced dP of ``ds`` per
    phase.  Returns (t_analytical, t_loadflow, ratio).
    """
    if repetitions < 30:
        raise ValueError("need at least 30 repetitions")
    if obs is None:
        obs = feeder.node_ids[len(feeder.node_ids) // 2]
    pairs = [(a, PowerChange.balanced(ds, feeder.phase_mask[feeder.index(a)]))
             for a in actors]
    inj = loadflow.base_injections(feeder)

    t_sens = _median_time(lambda: delta_v_cumulative(feeder, state, obs, pairs), repetitions)
    t_flow = _median_time(lambda: loadflow.solve(feeder, inj), repetitions)
    return t_sens, t_flow, t_flow / t_sens
