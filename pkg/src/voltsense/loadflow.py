"""Ground-truth unbalanced power flow: forward-backward sweep, current summation.

Loads are constant-power (PQ) at every non-source node; the source holds
its base phasor exactly (slack).  This solver is the validation oracle for
the analytical sensitivity path and the baseline for the timing benchmark.

Sign and phase conventions used across the package:

* complex power is positive for consumption; PV generation enters with a
  negative sign;
* a length-2n power-change vector ``[dP_1..dP_n, dQ_1..dQ_n]`` (nodes in
  sorted-id order) describes a per-phase change applied identically to
  every energized phase of each node (balanced injection).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .network import Phase, PhasorSet


class ConvergenceError(RuntimeError):
    """Load flow failed to converge where a converged solution is required."""


@dataclass(frozen=True)
class InjectionSet:
    """Per (node, phase) complex power in per-unit, positive = consumption."""

    node_ids: tuple
    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=complex)
        if s.shape != (len(self.node_ids), 3):
            raise ValueError("injections must be (n_nodes, 3)")
        if not np.all(np.isfinite(s.view(float))):
            raise ValueError("non-finite injection")
        s.setflags(write=False)
        object.__setattr__(self, "s", s)


@dataclass(frozen=True)
class SolveReport:
    voltages: PhasorSet | None  # None when the iteration collapsed a phase to zero
    iterations: int
    max_mismatch: float
    converged: bool
    wall_time: float


def base_injections(feeder):
    """InjectionSet of the feeder's spot loads."""
    return InjectionSet(feeder.node_ids, feeder.base_loads.copy())


def apply_power_change(feeder, base, delta):
    """Add a length-2n (dP.., dQ..) vector to an InjectionSet.

    Each node's (dP_k, dQ_k) lands on every energized phase of that node;
    entries for the source are ignored (slack).
    """
    n = feeder.n_nodes
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (2 * n,):
        raise ValueError(f"power-change vector must have length {2 * n}")
    ds = delta[:n] + 1j * delta[n:]
    ds[feeder.index(feeder.source)] = 0.0
    s = base.s + np.where(feeder.phase_mask, ds[:, None], 0.0)
    return InjectionSet(feeder.node_ids, s)


def solve(feeder, injections, tol=1e-8, max_iter=100, v_init=None):
    """Forward-backward sweep power flow.

    Converged when the largest per-phase voltage update is below ``tol``
    (per-unit).  Non-convergence is reported, not raised.
    """
    t0 = time.perf_counter()
    mask = feeder.phase_mask
    src = feeder.index(feeder.source)
    v_src = feeder.source_phasor()
    if v_init is None:
        v = np.where(mask, np.tile(v_src, (feeder.n_nodes, 1)), 0.0)
    else:
        v = np.array(v_init, dtype=complex)
        v[src] = v_src
    s = np.where(mask, injections.s, 0.0)
    s[src] = 0.0  # slack absorbs the balance

    order = feeder.topo_order
    parent = feeder.parent
    parent_line = feeder.parent_line
    z = [ln.impedance for ln in feeder.lines]

    mismatch = np.inf
    iterations = 0
    i_branch = np.zeros((len(z), 3), dtype=complex)
    for iterations in range(1, max_iter + 1):
        # Backward: nodal load currents, then accumulate toward the source.
        with np.errstate(divide="ignore", invalid="ignore"):
            i_acc = np.where(mask & (v != 0.0), np.conj(s / np.where(v == 0, 1.0, v)), 0.0)
        for u in order[:0:-1]:
            i_branch[parent_line[u]] = i_acc[u]
            i_acc[parent[u]] += i_acc[u]
        # Forward: propagate voltage drops from the source.
        mismatch = 0.0
        for u in order[1:]:
            v_new = v[parent[u]] - z[parent_line[u]] @ i_branch[parent_line[u]]
            v_new[~mask[u]] = 0.0
            step = np.max(np.abs(v_new - v[u]))
            if step > mismatch:
                mismatch = step
            v[u] = v_new
        if mismatch < tol:
            break
    converged = mismatch < tol

    state = None
    if np.all(np.abs(v[mask]) > 0.0):
        state = PhasorSet(feeder.node_ids, v, mask.copy())
    return SolveReport(
        voltages=state,
        iterations=iterations,
        max_mismatch=float(mismatch),
        converged=bool(converged) and state is not None,
        wall_time=time.perf_counter() - t0,
    )


def source_power(feeder, report, injections):
    """Complex power leaving the source at a converged solution."""
    v = report.voltages.voltages
    mask = feeder.phase_mask
    with np.errstate(divide="ignore", invalid="ignore"):
        i_node = np.where(mask & (v != 0.0), np.conj(injections.s / np.where(v == 0, 1, v)), 0.0)
    i_node[feeder.index(feeder.source)] = 0.0
    i_acc = i_node.copy()
    for u in feeder.topo_order[:0:-1]:
        i_acc[feeder.parent[u]] = i_acc[feeder.parent[u]] + i_acc[u]
    src = feeder.index(feeder.source)
    return complex(np.sum(v[src] * np.conj(i_acc[src])))


def line_losses(feeder, report, injections):
    """Total complex line loss at a converged solution."""
    v = report.voltages.voltages
    mask = feeder.phase_mask
    with np.errstate(divide="ignore", invalid="ignore"):
        i_node = np.where(mask & (v != 0.0), np.conj(injections.s / np.where(v == 0, 1, v)), 0.0)
    i_node[feeder.index(feeder.source)] = 0.0
    i_acc = i_node.copy()
    loss = 0j
    for u in feeder.topo_order[:0:-1]:
        p = feeder.parent[u]
        loss += np.sum((v[p] - v[u]) * np.conj(i_acc[u]))
        i_acc[p] = i_acc[p] + i_acc[u]
    return complex(loss)


# -- seeded sampling --------------------------------------------------------

def gaussian_draws(seed, shape):
    """Standard normals from a Philox stream via inverse-CDF of open uniforms.

    Philox is counter-based and platform-stable; the inverse-CDF transform
    pins the uniform->normal mapping so fixtures stay bit-reproducible.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    u = (rng.integers(0, 1 << 53, size=shape, dtype=np.int64) + 0.5) / float(1 << 53)
    return ndtri(u)


def _psd_factor(sigma, tol=1e-10):
    """Factor L with L @ L.T == sigma, tolerating tiny negative eigenvalues."""
    sigma = np.asarray(sigma, dtype=float)
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        w, q = np.linalg.eigh(sigma)
        if w.min() < -tol * max(1.0, w.max()):
            raise ValueError(f"covariance not PSD (min eigenvalue {w.min():.3e})") from None
        return q * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class MonteCarloSamples:
    """|V| samples at one (node, phase) from seeded load-flow re-solves."""

    values: np.ndarray
    n_requested: int
    n_failed: int
    seed: int

    def __len__(self):
        return len(self.values)


def monte_carlo_voltage_samples(feeder, base, model, node, phase, n_samples, seed):
    """Sample |V(node, phase)| under ``delta_s ~ N(mu, sigma)`` re-solves.

    Draw i uses the sub-seed (seed, i), so results are independent of
    batching and reproducible per seed.  Non-convergent draws are excluded
    and counted, never redrawn.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    i_node = feeder.index(node)
    p = Phase(phase)
    mu, sigma = model.mu, model.sigma
    lfac = _psd_factor(sigma)
    base_report = solve(feeder, base)
    v_warm = base_report.voltages.voltages if base_report.converged else None
    out = np.empty(n_samples)
    failed = 0
    kept = 0
    for i in range(n_samples):
        z = gaussian_draws([seed, i], 2 * feeder.n_nodes)
        delta = mu + lfac @ z
        rep = solve(feeder, apply_power_change(feeder, base, delta), v_init=v_warm)
        if not rep.converged:
            failed += 1
            continue
        out[kept] = np.abs(rep.voltages.voltages[i_node, p])
        kept += 1
    values = out[:kept].copy()
    values.setflags(write=False)
    return MonteCarloSamples(values=values, n_requested=n_samples, n_failed=failed, seed=seed)
