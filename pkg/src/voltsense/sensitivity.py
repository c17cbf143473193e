"""First-order voltage-change prediction from complex power changes.

The complex route (`delta_v_single`, `delta_v_cumulative`) and the
real/imaginary trigonometric route (`delta_v_real_imag`) are implemented
independently; they must agree to floating-point round-off, which the test
suite enforces as the decomposition identity.

For each observation phase u, a consumption change on phase v of the actor
node contributes ``-conj(dS_v) * Z_uv / conj(V_v)`` with the shared-path
impedance entry Z_uv and the actor's own phase-v voltage.  The conjugate on
dS follows from the load-current increment ``dI = conj(dS / V)`` and gives
the familiar -(R dP + X dQ) drop near a flat voltage; the load-flow oracle
confirms this orientation for reactive changes.  The same pairing is
applied uniformly to all three phase rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import PHASES, Phase, shared_path_impedance


class SingularVoltageError(ZeroDivisionError):
    """Actor voltage is zero on a phase carrying a nonzero power change."""


@dataclass(frozen=True)
class PowerChange:
    """Per-phase complex power change (dP + j dQ), per-unit, at one node."""

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=complex)
        if s.shape != (3,):
            raise ValueError("power change must have one entry per phase")
        if not np.all(np.isfinite(s.view(float))):
            raise ValueError("non-finite power change")
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @classmethod
    def balanced(cls, s, mask=(True, True, True)):
        """The same complex change on every phase selected by ``mask``."""
        return cls(np.where(np.asarray(mask, dtype=bool), complex(s), 0.0))

    @classmethod
    def single_phase(cls, phase, s):
        out = np.zeros(3, dtype=complex)
        out[Phase(phase)] = s
        return cls(out)

    def scaled(self, alpha):
        return PowerChange(self.s * alpha)


@dataclass(frozen=True)
class VoltageChange:
    """Per-phase complex voltage change, per-unit, at the observation node."""

    dv: np.ndarray

    def __post_init__(self):
        dv = np.asarray(self.dv, dtype=complex)
        if dv.shape != (3,):
            raise ValueError("voltage change must have one entry per phase")
        if not np.all(np.isfinite(dv.view(float))):
            raise ValueError("non-finite voltage change")
        dv.setflags(write=False)
        object.__setattr__(self, "dv", dv)

    def real_part(self, phase):
        return float(self.dv[Phase(phase)].real)

    def imag_part(self, phase):
        return float(self.dv[Phase(phase)].imag)

    def __add__(self, other):
        return VoltageChange(self.dv + other.dv)


def _actor_voltages(feeder, state, actor, ds):
    """Actor phase voltages, validating against division singularities."""
    i = feeder.index(actor)
    v = state.voltages[i]
    active = np.asarray(ds.s) != 0.0
    if np.any(active & (v == 0.0)):
        raise SingularVoltageError(
            f"node {actor} has zero voltage on a phase with nonzero power change")
    return v


def delta_v_single(feeder, state, obs, actor, ds):
    """Three-phase complex voltage change at ``obs`` from one actor's dS.

    Each phase row u sums ``-conj(dS_v) * Z_uv / conj(V_v)`` over injecting
    phases v; Z is the shared-path impedance between obs and actor.
    """
    z = shared_path_impedance(feeder, obs, actor)
    v = _actor_voltages(feeder, state, actor, ds)
    dv = np.zeros(3, dtype=complex)
    for u in PHASES:
        acc = 0j
        for w in PHASES:
            s = ds.s[w]
            if s != 0.0:
                acc -= np.conj(s) * z[u, w] / np.conj(v[w])
        dv[u] = acc
    return VoltageChange(dv)


def delta_v_cumulative(feeder, state, obs, actors):
    """Sum of `delta_v_single` over (actor, PowerChange) pairs."""
    dv = np.zeros(3, dtype=complex)
    for actor, ds in actors:
        dv = dv + delta_v_single(feeder, state, obs, actor, ds).dv
    return VoltageChange(dv)


def delta_v_real_imag(feeder, state, obs, actor, ds, phase):
    """(dV_real, dV_imag) for one observation phase, via the trig expansion.

    Expands each injecting-phase term with R cos / X sin combinations of
    the actor's voltage angle instead of complex division, summing over
    the phase sequences (ua, ub, uc) of the observation phase u.
    """
    u = Phase(phase)
    z = shared_path_impedance(feeder, obs, actor)
    v = _actor_voltages(feeder, state, actor, ds)
    dvr = 0.0
    dvi = 0.0
    for w in PHASES:
        s = ds.s[w]
        if s == 0.0:
            continue
        dp, dq = s.real, s.imag
        mag = abs(v[w])
        theta = np.angle(v[w])
        r, x = z[u, w].real, z[u, w].imag
        alpha = r * np.cos(theta) - x * np.sin(theta)
        beta = r * np.sin(theta) + x * np.cos(theta)
        dvr += -(dp * alpha + dq * beta) / mag
        dvi += -(dp * beta - dq * alpha) / mag
    return dvr, dvi
