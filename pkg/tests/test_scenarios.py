"""Scenario engine: packs, penetration allocation, power-change models,
and seeded time-series realization."""

import numpy as np
import pytest

import voltsense as vs
from voltsense.scenarios import (GenerationLossEvent, PVProfile, ScenarioPack, TimeGrid,
                                 allocate_penetration, format_hhmm, net_power_change,
                                 parse_hhmm, parse_pack, run_timeseries,
                                 violation_trajectory)


def test_time_parsing():
    assert parse_hhmm("12:00") == 720
    assert parse_hhmm("16:32") == 992
    assert format_hhmm(992) == "16:32"
    for bad in ("25:00", "12:61", "noon", "1200"):
        with pytest.raises(ValueError):
            parse_hhmm(bad)


def test_time_grid():
    g = TimeGrid(720, 1080, 15)
    inst = g.instants()
    assert len(inst) == 25
    assert inst[0] == 720 and inst[-1] == 1080
    with pytest.raises(ValueError):
        TimeGrid(720, 720)
    with pytest.raises(ValueError):
        TimeGrid(720, 1080, 0)


def test_profile_interpolation_and_validation():
    p = PVProfile("p", ((600, 0.0), (720, 1.0), (840, 0.0)), 0.05)
    assert p.value(660) == pytest.approx(0.5)
    assert p.value(0) == 0.0      # clamped to endpoints
    assert p.value(1440) == 0.0
    with pytest.raises(ValueError):
        PVProfile("bad", ((600, 0.0),), 0.05)
    with pytest.raises(ValueError):
        PVProfile("bad", ((600, 0.0), (500, 1.0)), 0.05)
    with pytest.raises(ValueError):
        PVProfile("bad", ((600, -0.1), (700, 1.0)), 0.05)


def test_bundled_pack_contents(pack):
    assert pack.name == "default"
    assert pack.version == 1
    assert pack.pv_noise_std == pytest.approx(0.05)
    assert pack.pv_correlation == pytest.approx(0.30)
    assert set(pack.profiles) == {"midday", "morning", "afternoon"}
    assert pack.load_multiplier(parse_hhmm("12:00")) == pytest.approx(1.0)
    assert pack.load_multiplier(parse_hhmm("18:00")) > 1.3
    assert pack.pv_tan_phi == pytest.approx(np.sqrt(1 - 0.95**2) / 0.95)


def test_pack_parse_errors():
    with pytest.raises(ValueError):
        parse_pack("noise 0.05\n")  # data before a section
    with pytest.raises(ValueError):
        parse_pack("TREND\n")  # unnamed trend


def test_allocation_reproducible(feeder37, pack):
    profs = pack.profile_list()
    a = allocate_penetration(feeder37, 0.30, 14, seed=5, profiles=profs)
    b = allocate_penetration(feeder37, 0.30, 14, seed=5, profiles=profs)
    assert a.actor_nodes == b.actor_nodes
    assert a.unit_rating == b.unit_rating
    c = allocate_penetration(feeder37, 0.30, 14, seed=6, profiles=profs)
    assert c.actor_nodes != a.actor_nodes


def test_allocation_invariants(feeder37, pack):
    cfg = allocate_penetration(feeder37, 0.30, 14, seed=5, profiles=pack.profile_list())
    assert len(cfg.actor_nodes) == 14
    assert len(set(cfg.actor_nodes)) == 14
    assert feeder37.source not in cfg.actor_nodes
    assert cfg.unit_rating * 14 == pytest.approx(0.30 * feeder37.total_load().real, abs=1e-9)
    assert set(cfg.profile_assignment) == set(cfg.actor_nodes)


def test_allocation_single_actor(feeder37, pack):
    cfg = allocate_penetration(feeder37, 0.5, 1, seed=2, profiles=pack.profile("midday"))
    assert len(cfg.actor_nodes) == 1
    assert cfg.unit_rating == pytest.approx(0.5 * feeder37.total_load().real)


def test_allocation_rejects_bad_input(feeder37, pack):
    profs = pack.profile_list()
    with pytest.raises(ValueError):
        allocate_penetration(feeder37, 0.3, 37, seed=1, profiles=profs)  # > eligible
    with pytest.raises(ValueError):
        allocate_penetration(feeder37, 0.0, 5, seed=1, profiles=profs)
    with pytest.raises(ValueError):
        allocate_penetration(feeder37, 1.5, 5, seed=1, profiles=profs)
    with pytest.raises(ValueError):
        allocate_penetration(feeder37, 0.3, 5, seed=1, profiles=[])


def test_net_power_change_no_movement(feeder37, pack):
    cfg = allocate_penetration(feeder37, 0.3, 14, seed=5, profiles=pack.profile_list())
    t = parse_hhmm("13:00")
    model = net_power_change(feeder37, cfg, pack, t, t)
    assert np.all(model.mu == 0.0)
    assert np.any(model.sigma.diagonal() > 0)  # variability-only covariance


def test_net_power_change_diagonal_when_uncorrelated():
    # pure-P loads and unity power factor isolate the correlation effect
    feeder = vs.chain_feeder(6, total_load_kvar=0.0)
    prof = PVProfile("p", ((600, 0.0), (720, 1.0), (840, 0.0)), 0.05)
    pack0 = ScenarioPack(name="t", version=1, pv_noise_std=0.05, pv_power_factor=1.0,
                         pv_correlation=0.0, load_variability_std=0.01,
                         load_trend=(), profiles={"p": prof})
    cfg = allocate_penetration(feeder, 0.4, 3, seed=1, profiles=prof)
    model = net_power_change(feeder, cfg, pack0, 700, 685)
    off_diag = model.sigma - np.diag(model.sigma.diagonal())
    assert np.all(off_diag == 0.0)

    pack_rho = ScenarioPack(name="t", version=1, pv_noise_std=0.05, pv_power_factor=1.0,
                            pv_correlation=0.4, load_variability_std=0.01,
                            load_trend=(), profiles={"p": prof})
    model2 = net_power_change(feeder, cfg, pack_rho, 700, 685)
    assert np.any(model2.sigma - np.diag(model2.sigma.diagonal()) != 0.0)


def test_net_power_change_signs(feeder37, pack):
    # rising PV output decreases net consumption at actor nodes
    cfg = allocate_penetration(feeder37, 0.3, 14, seed=5, profiles=[pack.profile("midday")])
    t_prev, t = parse_hhmm("09:00"), parse_hhmm("09:15")
    model = net_power_change(feeder37, cfg, pack, t, t_prev)
    i = feeder37.index(cfg.actor_nodes[0])
    trend = pack.profile("midday")
    rising = trend.value(t) > trend.value(t_prev)
    load_part = (pack.load_multiplier(t) - pack.load_multiplier(t_prev)) * \
        feeder37.base_loads.real[i].sum() / feeder37.phase_mask[i].sum()
    pv_part = model.mu[i] - load_part
    assert rising and pv_part < 0


def test_net_power_curve_reverses_at_high_pv(feeder37, pack):
    # per-actor net consumption crosses zero at peak PV for small-load actors
    cfg = allocate_penetration(feeder37, 0.3, 14, seed=11, profiles=[pack.profile("midday")])
    trend = pack.profile("midday")

    def actor_net(t):
        out = []
        for a in cfg.actor_nodes:
            i = feeder37.index(a)
            load = pack.load_multiplier(t) * feeder37.base_loads.real[i].sum()
            out.append(load - trend.value(t) * cfg.unit_rating)
        return out

    at_peak = actor_net(parse_hhmm("12:30"))
    at_dusk = actor_net(parse_hhmm("18:00"))
    assert min(at_peak) < 0.0            # reversed flow at peak PV
    assert min(at_dusk) > min(at_peak)   # reversal fades as PV wanes
    assert max(at_dusk) > 0.0            # loaded actors back to consumption


def test_net_power_change_conditions_on_present_generation(feeder37, pack):
    cfg = allocate_penetration(feeder37, 0.3, 14, seed=5, profiles=[pack.profile("midday")])
    t_prev, t = parse_hhmm("12:00"), parse_hhmm("12:15")
    realized = {a: 0.8 for a in cfg.actor_nodes}
    model = net_power_change(feeder37, cfg, pack, t, t_prev, present_generation=realized)
    i = feeder37.index(cfg.actor_nodes[0])
    nph = feeder37.phase_mask[i].sum()
    load_part = (pack.load_multiplier(t) - pack.load_multiplier(t_prev)) * \
        feeder37.base_loads.real[i].sum() / nph
    expected_pv = -(pack.profile("midday").value(t) - 0.8) * cfg.unit_rating / nph
    assert model.mu[i] == pytest.approx(load_part + expected_pv)


def test_emitted_covariances_psd(feeder37, pack):
    cfg = allocate_penetration(feeder37, 0.7, 20, seed=8, profiles=pack.profile_list())
    grid = TimeGrid(parse_hhmm("12:00"), parse_hhmm("18:00"), 15)
    steps = run_timeseries(feeder37, cfg, pack, grid, seed=3)
    for st in steps[:-1]:
        sigma = st.model_to_next.sigma
        assert np.linalg.eigvalsh(sigma).min() >= -1e-10 * max(1.0, sigma.max())
    assert steps[-1].model_to_next is None


def test_timeseries_flat_scenario_is_constant():
    feeder = vs.chain_feeder(5)
    prof = PVProfile("flat", ((0, 0.5), (1439, 0.5)), 0.0)
    pack0 = ScenarioPack(name="flat", version=1, pv_noise_std=0.0, pv_power_factor=1.0,
                         pv_correlation=0.0, load_variability_std=0.0,
                         load_trend=(), profiles={"flat": prof})
    cfg = allocate_penetration(feeder, 0.2, 2, seed=1, profiles=prof)
    grid = TimeGrid(600, 720, 30)
    steps = run_timeseries(feeder, cfg, pack0, grid, seed=9)
    v0 = steps[0].state.voltages
    for st in steps[1:]:
        # identical up to the solver's voltage-update tolerance
        assert np.allclose(st.state.voltages, v0, atol=1e-7, rtol=0)


def test_timeseries_seed_reproducible(feeder37, pack):
    cfg = allocate_penetration(feeder37, 0.3, 14, seed=5, profiles=pack.profile_list())
    grid = TimeGrid(parse_hhmm("12:00"), parse_hhmm("14:00"), 15)
    a = run_timeseries(feeder37, cfg, pack, grid, seed=4)
    b = run_timeseries(feeder37, cfg, pack, grid, seed=4)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.state.voltages, sb.state.voltages)
        assert sa.generation == sb.generation
    c = run_timeseries(feeder37, cfg, pack, grid, seed=5)
    assert any(not np.array_equal(sa.state.voltages, sc.state.voltages)
               for sa, sc in zip(a, c))


def test_loss_event_zeroes_generation(feeder37, pack):
    cfg = allocate_penetration(feeder37, 0.7, 20, seed=8, profiles=pack.profile_list())
    grid = TimeGrid(parse_hhmm("12:00"), parse_hhmm("18:00"), 15)
    loss = GenerationLossEvent(parse_hhmm("16:32"))
    steps = run_timeseries(feeder37, cfg, pack, grid, loss=loss, seed=3)
    for st in steps:
        if st.time >= loss.event_time:
            assert all(g == 0.0 for g in st.generation.values())
        else:
            assert any(g > 0.0 for g in st.generation.values())


def test_loss_event_subset_of_actors(feeder37, pack):
    cfg = allocate_penetration(feeder37, 0.7, 20, seed=8, profiles=pack.profile_list())
    affected = cfg.actor_nodes[:5]
    loss = GenerationLossEvent(parse_hhmm("13:00"), affected_actors=affected)
    grid = TimeGrid(parse_hhmm("12:00"), parse_hhmm("14:00"), 30)
    steps = run_timeseries(feeder37, cfg, pack, grid, loss=loss, seed=3)
    last = steps[-1]
    assert all(last.generation[a] == 0.0 for a in affected)
    assert any(last.generation[a] > 0.0 for a in cfg.actor_nodes if a not in affected)


def test_loss_event_outside_grid_rejected(feeder37, pack):
    cfg = allocate_penetration(feeder37, 0.3, 14, seed=5, profiles=pack.profile_list())
    grid = TimeGrid(parse_hhmm("12:00"), parse_hhmm("14:00"), 15)
    with pytest.raises(ValueError):
        run_timeseries(feeder37, cfg, pack, grid,
                       loss=GenerationLossEvent(parse_hhmm("16:32")), seed=1)


def test_violation_trajectory_shapes(feeder37, pack):
    cfg = allocate_penetration(feeder37, 0.3, 14, seed=11, profiles=pack.profile_list())
    grid = TimeGrid(parse_hhmm("16:00"), parse_hhmm("18:00"), 15)
    steps = run_timeseries(feeder37, cfg, pack, grid, seed=2)
    times, pred, act = violation_trajectory(feeder37, steps)
    assert len(times) == len(steps) - 1
    assert times[0] == steps[1].time
    assert all(p >= 0 and a >= 0 for p, a in zip(pred, act))
