"""PV generation scenarios: trend-plus-noise profiles, penetration
allocation, per-step power-change models, and seeded time-series runs.

Scenario packs are line-oriented text files with keyword sections::

    PACK                name / version
    PV                  noise_std / power_factor / correlation
    LOADS               variability_std
    LOADTREND           "HH:MM multiplier" rows (load level vs time of day)
    TREND <name>        "HH:MM value" rows (PV output, per-unit of rating)

Realized time series draw fresh per-instant PV noise around the trend
(uncorrelated in time); load levels follow the LOADTREND deterministically
while the forecast model still carries the configured load variability.
All node-level changes follow the package's balanced per-phase convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .loadflow import ConvergenceError, apply_power_change, base_injections, gaussian_draws, solve
from .network import PHASES
from .probabilistic import PowerChangeModel, assess_network


def parse_hhmm(text):
    """'HH:MM' -> minutes since midnight."""
    try:
        hh, mm = text.strip().split(":")
        h, m = int(hh), int(mm)
        if not (0 <= h < 24 and 0 <= m < 60):
            raise ValueError
    except ValueError:
        raise ValueError(f"bad time of day {text!r}, expected HH:MM") from None
    return 60 * h + m


def format_hhmm(minutes):
    return f"{int(minutes) // 60:02d}:{int(minutes) % 60:02d}"


@dataclass(frozen=True)
class PVProfile:
    """Piecewise-linear output trend (per-unit of unit rating) plus noise."""

    name: str
    points: tuple  # ((minute, value), ...) ascending
    noise_std: float

    def __post_init__(self):
        pts = tuple((int(t), float(v)) for t, v in self.points)
        if len(pts) < 2:
            raise ValueError(f"profile {self.name!r} needs at least two trend points")
        times = [t for t, _ in pts]
        if sorted(times) != times or len(set(times)) != len(times):
            raise ValueError(f"profile {self.name!r} trend times must be strictly ascending")
        if any(v < 0 for _, v in pts):
            raise ValueError(f"profile {self.name!r} trend must be non-negative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        object.__setattr__(self, "points", pts)

    def value(self, minutes):
        xs = [t for t, _ in self.points]
        ys = [v for _, v in self.points]
        return float(np.interp(minutes, xs, ys))


@dataclass(frozen=True)
class TimeGrid:
    start: int   # minutes since midnight
    end: int
    step: int = 15

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("grid start must precede end")
        if self.step <= 0:
            raise ValueError("grid step must be positive")

    def instants(self):
        return list(range(self.start, self.end + 1, self.step))


@dataclass(frozen=True)
class GenerationLossEvent:
    """Complete PV loss at event_time; empty affected_actors means all."""

    event_time: int
    affected_actors: tuple = ()

    def applies(self, actor, minutes):
        if minutes < self.event_time:
            return False
        return not self.affected_actors or actor in self.affected_actors


@dataclass(frozen=True)
class ScenarioPack:
    """Named parameter set: PV noise/correlation/power factor, load
    variability and trend, and a table of PV output profiles."""

    name: str
    version: int
    pv_noise_std: float
    pv_power_factor: float
    pv_correlation: float
    load_variability_std: float
    load_trend: tuple  # ((minute, multiplier), ...), empty = flat 1.0
    profiles: dict = field(default_factory=dict)

    def load_multiplier(self, minutes):
        if not self.load_trend:
            return 1.0
        xs = [t for t, _ in self.load_trend]
        ys = [v for _, v in self.load_trend]
        return float(np.interp(minutes, xs, ys))

    @property
    def pv_tan_phi(self):
        pf = self.pv_power_factor
        return float(np.sqrt(1.0 - pf * pf) / pf)

    def profile(self, name):
        try:
            return self.profiles[name]
        except KeyError:
            raise KeyError(f"pack {self.name!r} has no profile {name!r}") from None

    def profile_list(self):
        return [self.profiles[k] for k in sorted(self.profiles)]


@dataclass(frozen=True)
class PenetrationConfig:
    """Seeded PV allocation: which nodes host units and at what rating."""

    penetration_level: float
    actor_nodes: tuple
    unit_rating: float            # per actor, all phases combined, per-unit
    profile_assignment: dict      # actor node -> PVProfile
    allocation_seed: int
    total_load_p: float

    def __post_init__(self):
        total = self.unit_rating * len(self.actor_nodes)
        want = self.penetration_level * self.total_load_p
        if abs(total - want) > 1e-6:
            raise ValueError("ratings do not sum to the penetration level")
        if set(self.profile_assignment) != set(self.actor_nodes):
            raise ValueError("profile assignment must cover exactly the actor nodes")


def allocate_penetration(feeder, pl, n_actors, seed, profiles):
    """Seeded uniform choice of actor nodes with an equal rating split.

    ``profiles`` (one PVProfile or a sequence) is assigned round-robin over
    the chosen actors in ascending node order.
    """
    if not 0.0 < pl <= 1.0:
        raise ValueError("penetration level must be in (0, 1]")
    eligible = [n for n in feeder.node_ids if n != feeder.source]
    if not 1 <= n_actors <= len(eligible):
        raise ValueError(f"n_actors must be between 1 and {len(eligible)}")
    if isinstance(profiles, PVProfile):
        profiles = [profiles]
    if not profiles:
        raise ValueError("at least one PVProfile is required")

    # Fisher-Yates on the raw integer stream keeps the draw platform-stable.
    rng = np.random.Generator(np.random.Philox([int(seed), 0xA110C]))
    idx = list(range(len(eligible)))
    for i in range(len(idx) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        idx[i], idx[j] = idx[j], idx[i]
    actors = tuple(sorted(eligible[k] for k in idx[:n_actors]))

    total_p = feeder.total_load().real
    rating = pl * total_p / n_actors
    assignment = {a: profiles[k % len(profiles)] for k, a in enumerate(actors)}
    return PenetrationConfig(penetration_level=pl, actor_nodes=actors,
                             unit_rating=rating, profile_assignment=assignment,
                             allocation_seed=int(seed), total_load_p=total_p)


def _per_phase_share(feeder):
    """Per-node phase counts, mean per-phase active load, and load Q/P ratio."""
    nph = feeder.phase_mask.sum(axis=1)
    p_total = feeder.base_loads.real.sum(axis=1)
    q_total = feeder.base_loads.imag.sum(axis=1)
    pbar = p_total / nph
    with np.errstate(divide="ignore", invalid="ignore"):
        tan_load = np.where(p_total != 0.0, q_total / np.where(p_total == 0, 1, p_total), 0.0)
    return nph, pbar, tan_load


def _generation_level(config, actor, minutes, loss):
    if loss is not None and loss.applies(actor, minutes):
        return 0.0
    return config.profile_assignment[actor].value(minutes)


def net_power_change(feeder, config, pack, t, t_prev, loss=None, present_generation=None):
    """Forward-looking PowerChangeModel for the step t_prev -> t.

    Actor means are -(generation(t) - generation(t_prev)) x per-phase rating
    (generation offsets consumption); every node also carries the load-trend
    delta.  If ``present_generation`` gives the realized per-unit output at
    t_prev, the mean conditions on it instead of the trend value.
    """
    n = feeder.n_nodes
    src = feeder.index(feeder.source)
    nph, pbar, tan_load = _per_phase_share(feeder)

    dm = pack.load_multiplier(t) - pack.load_multiplier(t_prev)
    mu_p = dm * pbar
    mu_q = dm * pbar * tan_load
    sig_load = pack.load_variability_std * pbar

    sig_pv = np.zeros(n)
    tan_pv = pack.pv_tan_phi
    for actor in config.actor_nodes:
        i = feeder.index(actor)
        r_phase = config.unit_rating / nph[i]
        g_now = _generation_level(config, actor, t, loss)
        if present_generation is not None and actor in present_generation:
            g_prev = present_generation[actor]
        else:
            g_prev = _generation_level(config, actor, t_prev, loss)
        dp = -(g_now - g_prev) * r_phase
        mu_p[i] += dp
        mu_q[i] += tan_pv * dp
        if g_now > 0.0:
            sig_pv[i] = pack.pv_noise_std * r_phase

    mu_p[src] = 0.0
    mu_q[src] = 0.0
    sig_load[src] = 0.0
    sig_pv[src] = 0.0

    rho = pack.pv_correlation
    c_pv = rho * np.outer(sig_pv, sig_pv)
    np.fill_diagonal(c_pv, sig_pv**2)
    d_load = sig_load**2

    sigma = np.zeros((2 * n, 2 * n))
    sigma[:n, :n] = c_pv + np.diag(d_load)
    sigma[:n, n:] = tan_pv * c_pv + np.diag(tan_load * d_load)
    sigma[n:, :n] = sigma[:n, n:].T
    sigma[n:, n:] = tan_pv**2 * c_pv + np.diag(tan_load**2 * d_load)
    return PowerChangeModel(mu=np.concatenate([mu_p, mu_q]), sigma=sigma)


@dataclass(frozen=True)
class TimeStep:
    """One realized instant plus the forward-looking model to the next."""

    time: int
    state: object                 # PhasorSet from the converged solve
    injections: object            # InjectionSet actually solved
    generation: dict              # actor -> realized per-unit output
    model_to_next: object         # PowerChangeModel or None at the last instant


def run_timeseries(feeder, config, pack, grid, loss=None, seed=0):
    """Realize the scenario instant by instant; deterministic per seed.

    ``seed`` may be an int or a sequence of ints (sub-run keys); instant k
    draws from the stream keyed (seed..., k).
    """
    seed_key = [int(s) for s in seed] if isinstance(seed, (list, tuple)) else [int(seed)]
    instants = grid.instants()
    if loss is not None and not (grid.start <= loss.event_time <= grid.end):
        raise ValueError("loss event time outside the grid span")
    n = feeder.n_nodes
    src = feeder.index(feeder.source)
    nph, pbar, tan_load = _per_phase_share(feeder)
    base = base_injections(feeder)
    actors = config.actor_nodes
    tan_pv = pack.pv_tan_phi

    steps = []
    v_warm = None
    for k, t in enumerate(instants):
        eps = pack.pv_noise_std * gaussian_draws(seed_key + [k], len(actors))
        gen = {}
        for a, e in zip(actors, eps):
            trend = _generation_level(config, a, t, loss)
            gen[a] = max(0.0, trend + e) if trend > 0.0 else 0.0

        m = pack.load_multiplier(t)
        dp = (m - 1.0) * pbar
        dq = (m - 1.0) * pbar * tan_load
        for a in actors:
            i = feeder.index(a)
            g = gen[a] * config.unit_rating / nph[i]
            dp[i] -= g
            dq[i] -= tan_pv * g
        dp[src] = 0.0
        dq[src] = 0.0
        inj = apply_power_change(feeder, base, np.concatenate([dp, dq]))
        rep = solve(feeder, inj, v_init=v_warm)
        if not rep.converged:
            raise ConvergenceError(f"load flow diverged at instant {k} ({format_hhmm(t)})")
        v_warm = rep.voltages.voltages

        model = None
        if k + 1 < len(instants):
            model = net_power_change(feeder, config, pack, instants[k + 1], t,
                                     loss=loss, present_generation=gen)
        steps.append(TimeStep(time=t, state=rep.voltages, injections=inj,
                              generation=gen, model_to_next=model))
    return steps


def actual_violation_count(feeder, state, limits=(0.95, 1.05)):
    """Energized (node, phase) pairs outside the open voltage band."""
    lo, hi = limits
    mag = np.abs(state.voltages[feeder.phase_mask])
    return int(np.count_nonzero(~((mag > lo) & (mag < hi))))


def violation_trajectory(feeder, steps, limits=(0.95, 1.05), threshold=0.5,
                         variant="symmetric"):
    """Per-instant predicted vs realized violation counts.

    The prediction for instant k+1 uses instant k's state and forward model,
    so the series starts at the second instant.
    """
    times, predicted, actual = [], [], []
    for prev, cur in zip(steps, steps[1:]):
        assessments = assess_network(feeder, prev.state, prev.model_to_next,
                                     limits=limits, threshold=threshold, variant=variant)
        times.append(cur.time)
        predicted.append(sum(1 for a in assessments if a.vulnerable))
        actual.append(actual_violation_count(feeder, cur.state, limits))
    return times, predicted, actual


# -- pack files -------------------------------------------------------------

_PACK_SECTIONS = ("PACK", "PV", "LOADS", "LOADTREND", "TREND")


def parse_pack(text):
    """Build a ScenarioPack from pack-file text (see module docstring)."""
    meta, pv, loads = {}, {}, {}
    load_trend = []
    trends = {}
    section, trend_name = None, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if toks[0].upper() in _PACK_SECTIONS:
            section = toks[0].upper()
            if section == "TREND":
                if len(toks) != 2:
                    raise ValueError(f"line {lineno}: TREND needs a name")
                trend_name = toks[1]
                trends[trend_name] = []
            elif len(toks) != 1:
                raise ValueError(f"line {lineno}: unexpected tokens after {section}")
            continue
        if section is None:
            raise ValueError(f"line {lineno}: data before any section header")
        if section == "PACK":
            meta[toks[0].lower()] = toks[1]
        elif section == "PV":
            pv[toks[0].lower()] = float(toks[1])
        elif section == "LOADS":
            loads[toks[0].lower()] = float(toks[1])
        elif section == "LOADTREND":
            load_trend.append((parse_hhmm(toks[0]), float(toks[1])))
        elif section == "TREND":
            trends[trend_name].append((parse_hhmm(toks[0]), float(toks[1])))

    noise = pv.get("noise_std", 0.0)
    profiles = {name: PVProfile(name=name, points=tuple(pts), noise_std=noise)
                for name, pts in trends.items()}
    return ScenarioPack(
        name=meta.get("name", "unnamed"),
        version=int(meta.get("version", 0)),
        pv_noise_std=noise,
        pv_power_factor=pv.get("power_factor", 1.0),
        pv_correlation=pv.get("correlation", 0.0),
        load_variability_std=loads.get("variability_std", 0.0),
        load_trend=tuple(load_trend),
        profiles=profiles,
    )


def load_pack(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_pack(fh.read())
