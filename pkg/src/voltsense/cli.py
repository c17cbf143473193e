"""Command-line entry point: reproduce the validation and case-study
experiments from a config file, emitting CSV tables.

Commands: ``validate-node``, ``predict``, ``montecarlo``, ``bench``.
Exit codes: 0 success, 1 config/validation error, 2 numerical failure
(load-flow non-convergence), 3 acceptance-bound failure in validate-node.

Output files are staged in a temporary directory and moved into place only
after the command finishes, so failed runs leave no partial outputs.
"""

from __future__ import annotations

import argparse
import csv
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from . import bundled_path
from .loadflow import ConvergenceError, base_injections, monte_carlo_voltage_samples, solve
from .metrics import benchmark_sensitivity_vs_loadflow, jensen_shannon_distance, make_histogram
from .network import Phase, chain_feeder, load_feeder
from .probabilistic import (VARIANTS, build_c_vectors, delta_v_distribution,
                            predicted_voltage_distribution)
from .scenarios import (GenerationLossEvent, PenetrationConfig, TimeGrid,
                        allocate_penetration, format_hhmm, load_pack, net_power_change,
                        parse_hhmm, run_timeseries, violation_trajectory)
from .metrics import violation_count_series


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    feeder: str
    pack: str
    out_dir: str
    variant: str
    seed: int
    grid_start: int
    grid_end: int
    grid_step: int
    penetration: float
    n_actors: int
    allocation_seed: int
    validate_node: int
    validate_actors: tuple
    validate_samples: int
    validate_bins: int
    js_bound: float
    mc_runs: int
    mc_penetrations: tuple
    mc_actors: int
    bench_repetitions: int
    bench_sizes: tuple
    loss_time: int | None


_CFG_SECTIONS = ("EXPERIMENT", "GRID", "PV", "VALIDATE", "MONTECARLO", "BENCH", "LOSS")


def load_experiment(path):
    """Parse the sectioned key/value experiment file."""
    data = {s: {} for s in _CFG_SECTIONS}
    section = None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) == 1 and toks[0].upper() in _CFG_SECTIONS:
            section = toks[0].upper()
            continue
        if section is None or len(toks) != 2:
            raise ConfigError(f"{path}:{lineno}: expected 'key value' inside a section")
        data[section][toks[0].lower()] = toks[1]

    def need(sec, key, cast=str):
        try:
            return cast(data[sec][key])
        except KeyError:
            raise ConfigError(f"{path}: missing {sec}.{key}") from None
        except ValueError as e:
            raise ConfigError(f"{path}: bad {sec}.{key}: {e}") from None

    def opt(sec, key, cast, default):
        if key not in data[sec]:
            return default
        return need(sec, key, cast)

    ints_csv = lambda s: tuple(int(x) for x in s.split(","))
    floats_csv = lambda s: tuple(float(x) for x in s.split(","))

    variant = opt("EXPERIMENT", "variant", str, "symmetric")
    if variant not in VARIANTS:
        raise ConfigError(f"{path}: variant must be one of {VARIANTS}")
    loss_time = opt("LOSS", "time", parse_hhmm, None)
    return ExperimentConfig(
        feeder=need("EXPERIMENT", "feeder"),
        pack=need("EXPERIMENT", "pack"),
        out_dir=opt("EXPERIMENT", "out", str, "out"),
        variant=variant,
        seed=opt("EXPERIMENT", "seed", int, 0),
        grid_start=need("GRID", "start", parse_hhmm),
        grid_end=need("GRID", "end", parse_hhmm),
        grid_step=opt("GRID", "step", int, 15),
        penetration=need("PV", "penetration", float),
        n_actors=need("PV", "actors", int),
        allocation_seed=opt("PV", "allocation_seed", int, 1),
        validate_node=opt("VALIDATE", "node", int, 22),
        validate_actors=opt("VALIDATE", "actors", ints_csv, (2, 11, 20, 29)),
        validate_samples=opt("VALIDATE", "samples", int, 10_000),
        validate_bins=opt("VALIDATE", "bins", int, 50),
        js_bound=opt("VALIDATE", "js_bound", float, 0.05),
        mc_runs=opt("MONTECARLO", "runs", int, 100),
        mc_penetrations=opt("MONTECARLO", "penetrations", floats_csv, (0.30, 0.70)),
        mc_actors=opt("MONTECARLO", "actors", int, 20),
        bench_repetitions=opt("BENCH", "repetitions", int, 50),
        bench_sizes=opt("BENCH", "sizes", ints_csv, (37, 74, 148)),
        loss_time=loss_time,
    )


def _resolve(ref, kind):
    """Map 'builtin:<name>' onto bundled data, anything else onto a path."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1] + (".feeder" if kind == "feeder" else ".pack")
        p = bundled_path(name)
        if not p.is_file():
            raise ConfigError(f"no bundled {kind} named {ref!r}")
        return str(p)
    if not os.path.isfile(ref):
        raise ConfigError(f"{kind} file not found: {ref}")
    return ref


def _load_inputs(cfg):
    feeder = load_feeder(_resolve(cfg.feeder, "feeder"))
    pack = load_pack(_resolve(cfg.pack, "pack"))
    return feeder, pack


class _Staging:
    """Collects output files, then moves them into out_dir atomically."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.tmp = tempfile.mkdtemp(prefix=".staging-", dir=out_dir)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.tmp, name)

    def commit(self):
        for name in self.files:
            os.replace(os.path.join(self.tmp, name), os.path.join(self.out_dir, name))
        os.rmdir(self.tmp)

    def abort(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return f"{x:.10g}"


def _grid(cfg):
    return TimeGrid(cfg.grid_start, cfg.grid_end, cfg.grid_step)


def cmd_validate_node(cfg, feeder, pack, staging):
    """Rician prediction vs Monte Carlo histogram at one observation node."""
    node = cfg.validate_node
    actors = cfg.validate_actors
    rating = cfg.penetration * feeder.total_load().real / cfg.n_actors
    profile = pack.profile_list()[0]
    pcfg = PenetrationConfig(
        penetration_level=rating * len(actors) / feeder.total_load().real,
        actor_nodes=tuple(actors), unit_rating=rating,
        profile_assignment={a: profile for a in actors},
        allocation_seed=cfg.allocation_seed, total_load_p=feeder.total_load().real)
    t0 = cfg.grid_start
    model = net_power_change(feeder, pcfg, pack, t0 + cfg.grid_step, t0)

    inj = base_injections(feeder)
    rep = solve(feeder, inj)
    if not rep.converged:
        raise ConvergenceError("base case did not converge")
    state = rep.voltages

    sv = build_c_vectors(feeder, state, node, Phase.A)
    g = delta_v_distribution(sv, model)
    v_present = state.get(node, Phase.A)
    preds = {v: predicted_voltage_distribution(v_present, g, variant=v) for v in VARIANTS}
    pred = preds[cfg.variant]

    mc = monte_carlo_voltage_samples(feeder, inj, model, node, Phase.A,
                                     cfg.validate_samples, seed=cfg.seed)
    hist = make_histogram(mc.values, pred, bins=cfg.validate_bins)
    if pred.degenerate:
        # zero-variance model: distribution distance is ill-posed, compare values
        spread = float(np.max(np.abs(mc.values - pred.kappa)))
        match = spread <= 5e-4
        js = {v: (0.0 if match else 1.0) for v in VARIANTS}
        print(f"validate-node {node}: degenerate zero-variance prediction; "
              f"point-mass deviation {spread:.2e} p.u.")
    else:
        js = {v: jensen_shannon_distance(hist, preds[v]) for v in VARIANTS}

    widths = np.diff(hist.bin_edges)
    emp = hist.density() / widths
    theo = np.diff(pred.cdf(hist.bin_edges)) / widths
    _write_csv(staging.path(f"validate_{node}.csv"),
               ["bin_lo", "bin_hi", "empirical_density", "theoretical_density"],
               [[_fmt(lo), _fmt(hi), _fmt(e), _fmt(t)]
                for lo, hi, e, t in zip(hist.bin_edges[:-1], hist.bin_edges[1:], emp, theo)])
    _write_csv(staging.path(f"validate_{node}.summary.csv"),
               ["node", "phase", "variant", "js_distance", "js_symmetric", "js_paper",
                "kappa", "sigma", "lam", "w", "v", "samples", "failed_draws", "js_bound"],
               [[node, "a", cfg.variant, _fmt(js[cfg.variant]), _fmt(js["symmetric"]),
                 _fmt(js["paper"]), _fmt(pred.kappa), _fmt(pred.sigma), _fmt(pred.lam),
                 _fmt(pred.w), _fmt(pred.v), len(mc), mc.n_failed, _fmt(cfg.js_bound)]])
    print(f"validate-node {node}: JS[{cfg.variant}] = {js[cfg.variant]:.4f} "
          f"(bound {cfg.js_bound})")
    return 0 if js[cfg.variant] <= cfg.js_bound else 3


def cmd_predict(cfg, feeder, pack, staging):
    """Violation-count trajectory: analytical prediction vs realized solves."""
    grid = _grid(cfg)
    pcfg = allocate_penetration(feeder, cfg.penetration, cfg.n_actors,
                                seed=cfg.allocation_seed, profiles=pack.profile_list())
    loss = GenerationLossEvent(cfg.loss_time) if cfg.loss_time is not None else None
    steps = run_timeseries(feeder, pcfg, pack, grid, loss=loss, seed=cfg.seed)
    times, pred, act = violation_trajectory(feeder, steps, variant=cfg.variant)

    from .probabilistic import assess_network
    pviol_rows = []
    for prev, t in zip(steps, times):
        for a in assess_network(feeder, prev.state, prev.model_to_next, variant=cfg.variant):
            pviol_rows.append([format_hhmm(t), a.node, a.phase.letter,
                               _fmt(a.p_violation), int(a.vulnerable)])
    _write_csv(staging.path("pviolations.csv"),
               ["time", "node", "phase", "p_violation", "vulnerable"], pviol_rows)
    _write_csv(staging.path("violations.csv"),
               ["time", "predicted_count", "actual_count", "pviolation_file"],
               [[format_hhmm(t), p, a, "pviolations.csv"]
                for t, p, a in zip(times, pred, act)])
    err = violation_count_series(pred, act)
    print(f"predict: {len(times)} instants, mean count error "
          f"{err.mean_error_pct:.2f}% (PL {cfg.penetration:.0%})")
    return 0


def cmd_montecarlo(cfg, feeder, pack, staging, runs=None):
    """Repeated seeded trajectories; per-run and mean count errors per PL."""
    runs = cfg.mc_runs if runs is None else runs
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    grid = _grid(cfg)
    loss = GenerationLossEvent(cfg.loss_time) if cfg.loss_time is not None else None
    rows = []
    means = []
    for pl in cfg.mc_penetrations:
        pcfg = allocate_penetration(feeder, pl, cfg.mc_actors,
                                    seed=cfg.allocation_seed, profiles=pack.profile_list())
        errs = []
        for r in range(runs):
            steps = run_timeseries(feeder, pcfg, pack, grid, loss=loss,
                                   seed=[cfg.seed, r])
            _, pred, act = violation_trajectory(feeder, steps, variant=cfg.variant)
            err = violation_count_series(pred, act).mean_error_pct
            errs.append(err)
            rows.append([r, _fmt(pl), _fmt(err)])
        means.append((pl, float(np.mean(errs))))
    for pl, m in means:
        rows.append(["mean", _fmt(pl), _fmt(m)])
    _write_csv(staging.path("mc_error.csv"), ["run", "pl", "error_pct"], rows)
    for pl, m in means:
        print(f"montecarlo: PL {pl:.0%}, {runs} runs, mean error {m:.2f}%")
    return 0


def cmd_bench(cfg, feeder, pack, staging):
    """Analytical sensitivity vs one load-flow solve, across feeder sizes."""
    if cfg.bench_repetitions < 30:
        raise ConfigError("BENCH.repetitions must be at least 30")
    rows = []
    ratios = []
    for size in cfg.bench_sizes:
        fd = feeder if size == feeder.n_nodes else chain_feeder(size)
        rep = solve(fd, base_injections(fd))
        if not rep.converged:
            raise ConvergenceError(f"bench feeder ({size} nodes) did not converge")
        actors = [n for n in fd.node_ids if n != fd.source][:: max(1, (fd.n_nodes - 1) // 8)]
        t_sens, t_flow, ratio = benchmark_sensitivity_vs_loadflow(
            fd, rep.voltages, actors, repetitions=cfg.bench_repetitions)
        ratios.append(ratio)
        rows.append([size, "analytical", _fmt(t_sens), cfg.bench_repetitions, _fmt(ratio)])
        rows.append([size, "loadflow", _fmt(t_flow), cfg.bench_repetitions, _fmt(ratio)])
        print(f"bench: {size} nodes, analytical {t_sens*1e6:.0f} us, "
              f"loadflow {t_flow*1e3:.2f} ms, ratio {ratio:.1f}x")
    _write_csv(staging.path("bench.csv"),
               ["feeder_nodes", "method", "median_seconds", "repetitions", "ratio"], rows)
    return 0


def _parse_args(argv):
    ap = argparse.ArgumentParser(
        prog="voltsense",
        description="Probabilistic voltage-violation prediction experiments")
    ap.add_argument("--config", required=True, help="experiment config file")
    ap.add_argument("--seed", type=int, help="override EXPERIMENT.seed")
    ap.add_argument("--variant", choices=list(VARIANTS), help="override EXPERIMENT.variant")
    ap.add_argument("--out", help="override EXPERIMENT.out")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-node", help="distribution validation at one node")
    p.add_argument("--node", type=int)
    p.add_argument("--actors", help="comma-separated actor node ids")
    p.add_argument("--samples", type=int)

    p = sub.add_parser("predict", help="violation-count trajectory")
    p.add_argument("--penetration", type=float)
    p.add_argument("--actors", type=int, help="number of PV actor nodes")
    p.add_argument("--loss-time", help="generation-loss time HH:MM")

    p = sub.add_parser("montecarlo", help="repeated runs, count-error table")
    p.add_argument("--runs", type=int)

    sub.add_parser("bench", help="analytical vs load-flow timing")
    return ap.parse_args(argv)


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.variant is not None:
        cfg = replace(cfg, variant=args.variant)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.command == "validate-node":
        if args.node is not None:
            cfg = replace(cfg, validate_node=args.node)
        if args.actors is not None:
            cfg = replace(cfg, validate_actors=tuple(int(x) for x in args.actors.split(",")))
        if args.samples is not None:
            cfg = replace(cfg, validate_samples=args.samples)
    elif args.command == "predict":
        if args.penetration is not None:
            cfg = replace(cfg, penetration=args.penetration)
        if args.actors is not None:
            cfg = replace(cfg, n_actors=args.actors)
        if args.loss_time is not None:
            cfg = replace(cfg, loss_time=parse_hhmm(args.loss_time))
    return cfg


def main(argv=None):
    try:
        args = _parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = _apply_overrides(load_experiment(args.config), args)
        feeder, pack = _load_inputs(cfg)
        _grid(cfg)  # validate before any computation
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    staging = _Staging(cfg.out_dir)
    try:
        if args.command == "validate-node":
            code = cmd_validate_node(cfg, feeder, pack, staging)
        elif args.command == "predict":
            code = cmd_predict(cfg, feeder, pack, staging)
        elif args.command == "montecarlo":
            code = cmd_montecarlo(cfg, feeder, pack, staging, runs=args.runs)
        else:
            code = cmd_bench(cfg, feeder, pack, staging)
    except ConfigError as e:
        staging.abort()
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ConvergenceError as e:
        staging.abort()
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    except Exception:
        staging.abort()
        raise
    staging.commit()
    return code


if __name__ == "__main__":
    sys.exit(main())
