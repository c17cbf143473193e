"""Probabilistic voltage prediction: Gaussian voltage-change moments, the
scaled non-central chi-square / Rician magnitude approximation, and the
violation-probability classifier.

Power-change model convention (shared with `loadflow.apply_power_change`):
a length-2n vector ``[dP_1..dP_n, dQ_1..dQ_n]`` over the feeder's nodes in
sorted-id order, per-unit, positive = consumption, each node's change
applied identically to every energized phase of that node.

The chi-square moment matching exists in two variants:

* ``"symmetric"`` (default): the weighted chi-square components carry their
  standardized non-centralities (mu/sigma)^2, which collapses the matched
  location parameter to exactly |mu| and yields two degrees of freedom when
  the component variances are equal;
* ``"paper"``: a verbatim transcription of the source formulas with raw
  (unscaled) means, kept so the validation suite can score both readings.

In either variant the prediction is Rician in the location/scale sense:
kappa is the non-centrality in per-unit volts and sigma the scale, so the
CDF at x is the non-central chi-square CDF of (x/sigma)^2 with
non-centrality (kappa/sigma)^2 and two degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import i0e, i1e
from scipy.stats import ncx2

from .network import PHASES, Phase

VARIANTS = ("symmetric", "paper")

DEFAULT_LIMITS = (0.95, 1.05)
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class PowerChangeModel:
    """Mean vector and covariance of the 2n-dimensional power change."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if mu.ndim != 1 or mu.size % 2 != 0:
            raise ValueError("mu must be a length-2n vector")
        if sigma.shape != (mu.size, mu.size):
            raise ValueError("sigma must be 2n x 2n")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("non-finite model entries")
        if not np.allclose(sigma, sigma.T, atol=1e-12):
            raise ValueError("sigma must be symmetric")
        scale = max(1.0, float(np.max(np.abs(sigma))))
        if np.linalg.eigvalsh(sigma).min() < -1e-10 * scale:
            raise ValueError("sigma must be positive semi-definite")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_nodes(self):
        return self.mu.size // 2


@dataclass(frozen=True)
class SensitivityVectors:
    """Constant coefficient vectors mapping a power change to (dV_r, dV_i)."""

    c_r: np.ndarray
    c_i: np.ndarray
    node: int
    phase: Phase

    def __post_init__(self):
        c_r = np.asarray(self.c_r, dtype=float)
        c_i = np.asarray(self.c_i, dtype=float)
        if c_r.shape != c_i.shape or c_r.ndim != 1 or c_r.size % 2 != 0:
            raise ValueError("c_r/c_i must be equal-length 2n vectors")
        if not (np.all(np.isfinite(c_r)) and np.all(np.isfinite(c_i))):
            raise ValueError("non-finite sensitivity entries")
        c_r.setflags(write=False)
        c_i.setflags(write=False)
        object.__setattr__(self, "c_r", c_r)
        object.__setattr__(self, "c_i", c_i)
        object.__setattr__(self, "phase", Phase(self.phase))


@dataclass(frozen=True)
class GaussianDeltaV:
    """Bivariate normal of (dV_real, dV_imag) at one (node, phase)."""

    mu1: np.ndarray
    sigma1: np.ndarray

    def __post_init__(self):
        mu1 = np.asarray(self.mu1, dtype=float)
        sigma1 = np.asarray(self.sigma1, dtype=float)
        if mu1.shape != (2,) or sigma1.shape != (2, 2):
            raise ValueError("GaussianDeltaV needs mu1 (2,) and sigma1 (2,2)")
        if not np.allclose(sigma1, sigma1.T, atol=1e-14):
            raise ValueError("sigma1 must be symmetric")
        if np.linalg.eigvalsh(sigma1).min() < -1e-12 * max(1.0, float(np.max(np.abs(sigma1)))):
            raise ValueError("sigma1 must be positive semi-definite")
        mu1.setflags(write=False)
        sigma1.setflags(write=False)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "sigma1", sigma1)


@dataclass(frozen=True)
class RicianPrediction:
    """Rician magnitude prediction |V| ~ Rice(kappa, sigma) plus diagnostics.

    ``kappa = sqrt(w)`` and ``sigma = sqrt(lam)`` always hold; ``v`` is the
    matched chi-square degrees of freedom, retained for the comparison
    evaluation mode.  ``degenerate`` marks the zero-variance point mass at
    ``kappa`` (where lam == 0).
    """

    kappa: float
    sigma: float
    lam: float
    w: float
    v: float
    mu_r: float
    mu_i: float
    var_r: float
    var_i: float
    variant: str = "symmetric"
    degenerate: bool = False

    def mean(self):
        """E|V|, evaluated stably for any kappa/sigma ratio."""
        if self.degenerate:
            return self.kappa
        q = self.kappa**2 / (4.0 * self.sigma**2)
        lag = (1.0 + 2.0 * q) * i0e(q) + 2.0 * q * i1e(q)
        return self.sigma * np.sqrt(np.pi / 2.0) * lag

    def variance(self):
        if self.degenerate:
            return 0.0
        return self.kappa**2 + 2.0 * self.sigma**2 - self.mean() ** 2

    def cdf(self, x, use_dof_v=False):
        """P(|V| <= x) via the non-central chi-square CDF of (x/sigma)^2.

        ``use_dof_v`` evaluates with the matched degrees of freedom instead
        of the Rician reduction's fixed 2, for approximation-gap studies.
        """
        x = np.asarray(x, dtype=float)
        if self.degenerate:
            return np.where(x >= self.kappa, 1.0, 0.0)
        dof = self.v if use_dof_v else 2.0
        with np.errstate(over="ignore"):
            return ncx2.cdf((x / self.sigma) ** 2, dof, (self.kappa / self.sigma) ** 2)


@dataclass(frozen=True)
class ViolationAssessment:
    node: int
    phase: Phase
    p_violation: float
    vulnerable: bool
    limits: tuple


def build_c_vectors(feeder, state, obs, phase):
    """Assemble the 2n coefficient vectors for one (observation, phase).

    Entry k weights dP at node k, entry n+k weights dQ, summing the
    R cos / X sin combinations over every energized phase of node k with
    that node's voltage magnitude and angle from ``state``.  Source-node
    entries are zero (no shared path with itself as reference).
    """
    c_r, c_i = _c_matrices(feeder, state, phase)
    i = feeder.index(obs)
    return SensitivityVectors(c_r=c_r[i], c_i=c_i[i], node=obs, phase=Phase(phase))


def _c_matrices(feeder, state, phase):
    """(C_r, C_i), each (n_nodes, 2n): rows are c-vectors of every observation node."""
    u = Phase(phase)
    z = feeder.shared_impedance[:, :, u, :]  # (n_obs, n_actor, 3)
    r, x = z.real, z.imag
    v = state.voltages
    mask = feeder.phase_mask
    mag = np.where(mask, np.abs(v), 1.0)
    ang = np.angle(np.where(mask, v, 1.0))
    cos_t, sin_t = np.cos(ang), np.sin(ang)

    # alpha = (R cos - X sin)/|V|, beta = (R sin + X cos)/|V|, per (obs, actor, inj phase)
    alpha = np.where(mask, (r * cos_t - x * sin_t) / mag, 0.0)
    beta = np.where(mask, (r * sin_t + x * cos_t) / mag, 0.0)
    a = alpha.sum(axis=2)
    b = beta.sum(axis=2)
    c_r = np.hstack([-a, -b])
    c_i = np.hstack([-b, a])
    return c_r, c_i


def delta_v_distribution(sv, model):
    """Push the power-change model through the sensitivity vectors."""
    if model.mu.size != sv.c_r.size:
        raise ValueError(
            f"model dimension {model.mu.size} != sensitivity dimension {sv.c_r.size}")
    mu1 = np.array([sv.c_r @ model.mu, sv.c_i @ model.mu])
    s_cr = model.sigma @ sv.c_r
    s_ci = model.sigma @ sv.c_i
    var_r = float(sv.c_r @ s_cr)
    var_i = float(sv.c_i @ s_ci)
    cov = float(sv.c_r @ s_ci)
    # quadratic forms of a PSD matrix; clip the round-off
    var_r = max(var_r, 0.0)
    var_i = max(var_i, 0.0)
    if cov * cov > var_r * var_i:
        cov = np.sign(cov) * np.sqrt(var_r * var_i)
    return GaussianDeltaV(mu1=mu1, sigma1=np.array([[var_r, cov], [cov, var_i]]))


def _chisq_match(var_r, var_i, mu_r, mu_i, variant):
    """Moment-match the weighted chi-square sum: returns (lam, w, v).

    The squared magnitude is ``var_r * X1 + var_i * X2`` with X1, X2
    non-central chi-squares of one degree of freedom and standardized
    non-centralities ``mu^2 / var``.  Matching mean and variance against a
    scaled chi-square and reading the result in the location/scale Rician
    parametrisation gives, division-free,

        lam = (var^2 + 2 var mu^2 summed) / (var + 2 mu^2 summed)
        w   = mu_r^2 + mu_i^2          (so kappa = |mu| exactly)
        v   = (var_r + var_i) / lam

    which reduces to the verbatim source formulas when var_r == var_i.
    The ``paper`` branch transcribes those formulas with raw (unscaled)
    means instead, for side-by-side scoring.
    """
    if variant == "symmetric":
        sa1 = var_r + var_i + 2.0 * (mu_r**2 + mu_i**2)
        sa2 = var_r**2 + var_i**2 + 2.0 * (var_r * mu_r**2 + var_i * mu_i**2)
        lam = sa2 / sa1
        w = mu_r**2 + mu_i**2
        v = (var_r + var_i) / lam
        return lam, w, v
    if variant == "paper":
        s2r, s2i = var_r, var_i
        m2r, m2i = mu_r**2, mu_i**2
        lam = (s2r**2 * (1 + 2 * m2r) + s2i**2 * (1 + 2 * m2i)) / (
            s2r * (1 + 2 * m2r) + s2i * (1 + 2 * m2i))
        w = ((s2r * m2r + s2i * m2i) * (s2r + s2i + 2 * s2r * m2r + 2 * s2i * m2i)) / (
            s2r**2 + s2i**2 + 2 * s2r**2 * m2r + 2 * s2r**2 * m2i)
        v = ((s2r + s2i) * (s2r + s2i + 2 * s2r * m2r + 2 * s2i * m2i)) / (
            s2r + s2i + 2 * s2r**2 * m2r + 2 * s2i**2 * m2i)
        return lam, w, v
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def predicted_voltage_distribution(v_present, g, variant="symmetric"):
    """Rician prediction of |V_present + dV| from the Gaussian dV moments."""
    v_present = complex(v_present)
    mu_r = v_present.real + g.mu1[0]
    mu_i = v_present.imag + g.mu1[1]
    var_r = float(g.sigma1[0, 0])
    var_i = float(g.sigma1[1, 1])
    if var_r == 0.0 and var_i == 0.0:
        k = float(np.hypot(mu_r, mu_i))
        return RicianPrediction(kappa=k, sigma=0.0, lam=0.0, w=k * k, v=2.0,
                                mu_r=mu_r, mu_i=mu_i, var_r=0.0, var_i=0.0,
                                variant=variant, degenerate=True)
    lam, w, v = _chisq_match(var_r, var_i, mu_r, mu_i, variant)
    return RicianPrediction(kappa=float(np.sqrt(w)), sigma=float(np.sqrt(lam)),
                            lam=float(lam), w=float(w), v=float(v),
                            mu_r=float(mu_r), mu_i=float(mu_i),
                            var_r=var_r, var_i=var_i, variant=variant)


def rician_interval_probability(pred, lower, upper, use_dof_v=False):
    """P(lower < |V| < upper) under the prediction; upper may be inf."""
    if not (0.0 <= lower < upper):
        raise ValueError(f"invalid interval ({lower}, {upper})")
    hi = 1.0 if np.isinf(upper) else float(pred.cdf(upper, use_dof_v))
    lo = float(pred.cdf(lower, use_dof_v))
    return min(max(hi - lo, 0.0), 1.0)


def violation_probability(pred, limits=DEFAULT_LIMITS, threshold=DEFAULT_THRESHOLD,
                          node=-1, phase=Phase.A):
    """Probability of |V| leaving the band, flagged vulnerable above threshold.

    The comparison is strict: p_violation exactly at the threshold is not
    vulnerable.
    """
    lo, hi = limits
    p = 1.0 - rician_interval_probability(pred, lo, hi)
    return ViolationAssessment(node=node, phase=Phase(phase), p_violation=p,
                               vulnerable=bool(p > threshold), limits=(lo, hi))


def assess_network(feeder, state, model, limits=DEFAULT_LIMITS,
                   threshold=DEFAULT_THRESHOLD, variant="symmetric"):
    """One ViolationAssessment per energized (node, phase), node-major order."""
    if model.mu.size != 2 * feeder.n_nodes:
        raise ValueError(
            f"model dimension {model.mu.size} != 2 x {feeder.n_nodes} nodes")
    lo, hi = limits
    per_phase = {}
    for u in PHASES:
        c_r, c_i = _c_matrices(feeder, state, u)
        mu_r = state.voltages[:, u].real + c_r @ model.mu
        mu_i = state.voltages[:, u].imag + c_i @ model.mu
        var_r = np.maximum(np.einsum("ij,jk,ik->i", c_r, model.sigma, c_r), 0.0)
        var_i = np.maximum(np.einsum("ij,jk,ik->i", c_i, model.sigma, c_i), 0.0)
        per_phase[u] = _p_violation_batch(mu_r, mu_i, var_r, var_i, lo, hi, variant)

    out = []
    for node in feeder.node_ids:
        i = feeder.index(node)
        for u in PHASES:
            if not feeder.phase_mask[i, u]:
                continue
            p = float(per_phase[u][i])
            out.append(ViolationAssessment(node=node, phase=u, p_violation=p,
                                           vulnerable=bool(p > threshold), limits=(lo, hi)))
    return out


def _p_violation_batch(mu_r, mu_i, var_r, var_i, lo, hi, variant):
    """Vectorized band-violation probabilities over nodes."""
    n = mu_r.size
    p = np.empty(n)
    degenerate = (var_r == 0.0) & (var_i == 0.0)
    for i in np.nonzero(degenerate)[0]:
        k = np.hypot(mu_r[i], mu_i[i])
        p[i] = 0.0 if lo < k < hi else 1.0
    live = ~degenerate
    if np.any(live):
        lam = np.empty(n)
        w = np.empty(n)
        for i in np.nonzero(live)[0]:
            lam[i], w[i], _ = _chisq_match(var_r[i], var_i[i], mu_r[i], mu_i[i], variant)
        nc = w[live] / lam[live]
        with np.errstate(over="ignore"):
            inside = (ncx2.cdf(hi**2 / lam[live], 2.0, nc)
                      - ncx2.cdf(lo**2 / lam[live], 2.0, nc))
        p[live] = 1.0 - np.clip(inside, 0.0, 1.0)
    return p
