"""Forward-backward sweep solver and the seeded Monte Carlo sampler."""

import numpy as np
import pytest

import voltsense as vs
from voltsense.loadflow import (InjectionSet, apply_power_change, base_injections,
                                gaussian_draws, line_losses, monte_carlo_voltage_samples,
                                solve, source_power)
from voltsense.probabilistic import PowerChangeModel

# regression value: base-case sweep count on the bundled dataset
IEEE37_BASE_ITERATIONS = 6


def test_zero_injections_flat_profile(feeder37):
    inj = InjectionSet(feeder37.node_ids, np.zeros((37, 3), dtype=complex))
    rep = solve(feeder37, inj)
    assert rep.converged
    src = feeder37.source_phasor()
    for i in range(37):
        assert np.allclose(rep.voltages.voltages[i], src, atol=1e-15)


def test_two_node_hand_fixed_point(feeder2):
    rep = solve(feeder2, base_injections(feeder2))
    assert rep.converged

    # hand iteration of v2 = v1 - z * conj(s / v2)
    v1 = 1.0 + 0j
    z = 0.05 + 0j
    s = 0.1 + 0.05j
    v2 = v1
    for _ in range(200):
        v2_new = v1 - z * np.conj(s / v2)
        if abs(v2_new - v2) < 1e-12:
            v2 = v2_new
            break
        v2 = v2_new
    assert rep.voltages.get(2, vs.Phase.A) == pytest.approx(v2, abs=1e-8)


def test_bundled_base_case_convergence(feeder37):
    rep = solve(feeder37, base_injections(feeder37))
    assert rep.converged
    assert rep.iterations <= 30
    assert rep.iterations == IEEE37_BASE_ITERATIONS
    assert rep.max_mismatch < 1e-8


def test_slack_invariance(feeder37, base_state37):
    src = feeder37.index(feeder37.source)
    assert np.array_equal(base_state37.voltages[src], feeder37.source_phasor())


def test_power_balance(feeder37):
    inj = base_injections(feeder37)
    rep = solve(feeder37, inj)
    s_src = source_power(feeder37, rep, inj)
    s_load = feeder37.total_load()
    s_loss = line_losses(feeder37, rep, inj)
    assert abs(s_src - (s_load + s_loss)) < 1e-6


def test_non_convergence_reported(feeder2):
    # gross overload: 60x the base load collapses the 2-node fixed point
    s = np.zeros((2, 3), dtype=complex)
    s[1, 0] = 6.0 + 3.0j
    rep = solve(feeder2, InjectionSet(feeder2.node_ids, s))
    assert not rep.converged


def test_apply_power_change_conventions(feeder37):
    base = base_injections(feeder37)
    n = feeder37.n_nodes
    d = np.zeros(2 * n)
    d[feeder37.index(22)] = 0.01
    d[n + feeder37.index(22)] = 0.004
    d[feeder37.index(1)] = 5.0  # source entry must be ignored
    d[n + feeder37.index(1)] = 5.0
    inj = apply_power_change(feeder37, base, d)
    i22, i1 = feeder37.index(22), feeder37.index(1)
    assert np.allclose(inj.s[i22] - base.s[i22], np.full(3, 0.01 + 0.004j))
    assert np.array_equal(inj.s[i1], base.s[i1])
    with pytest.raises(ValueError):
        apply_power_change(feeder37, base, np.zeros(3))


def test_gaussian_draws_deterministic():
    a = gaussian_draws([7, 3], 64)
    b = gaussian_draws([7, 3], 64)
    assert np.array_equal(a, b)
    c = gaussian_draws([7, 4], 64)
    assert not np.array_equal(a, c)
    big = gaussian_draws(123, 200_000)
    assert abs(big.mean()) < 3.0 / np.sqrt(big.size)
    assert abs(big.std() - 1.0) < 3.0 / np.sqrt(big.size)


def _small_model(feeder, scale=1e-3):
    n = feeder.n_nodes
    rng = np.random.default_rng(5)
    mu = np.zeros(2 * n)
    a = rng.normal(size=(2 * n, 2 * n)) * scale
    sigma = a @ a.T
    return PowerChangeModel(mu=mu, sigma=sigma)


def test_monte_carlo_zero_covariance_is_deterministic(feeder37):
    n = feeder37.n_nodes
    mu = np.zeros(2 * n)
    mu[feeder37.index(29)] = 0.01
    model = PowerChangeModel(mu=mu, sigma=np.zeros((2 * n, 2 * n)))
    base = base_injections(feeder37)
    mc = monte_carlo_voltage_samples(feeder37, base, model, 22, vs.Phase.A, 20, seed=3)
    assert mc.n_failed == 0
    det = solve(feeder37, apply_power_change(feeder37, base, mu))
    expected = abs(det.voltages.get(22, vs.Phase.A))
    assert np.allclose(mc.values, expected, atol=1e-12)


def test_monte_carlo_seed_reproducible(feeder37):
    model = _small_model(feeder37, scale=2e-4)
    base = base_injections(feeder37)
    a = monte_carlo_voltage_samples(feeder37, base, model, 22, vs.Phase.A, 50, seed=11)
    b = monte_carlo_voltage_samples(feeder37, base, model, 22, vs.Phase.A, 50, seed=11)
    assert np.array_equal(a.values, b.values)
    one = monte_carlo_voltage_samples(feeder37, base, model, 22, vs.Phase.A, 1, seed=11)
    assert one.values[0] == a.values[0]  # per-draw sub-seeds: batching independent
    c = monte_carlo_voltage_samples(feeder37, base, model, 22, vs.Phase.A, 50, seed=12)
    assert not np.array_equal(a.values, c.values)


def test_monte_carlo_excludes_failed_draws(feeder2):
    # variance large enough that some draws overload the 2-node feeder
    mu = np.zeros(4)
    sigma = np.diag([0.0, 4.0, 0.0, 1.0])
    model = PowerChangeModel(mu=mu, sigma=sigma)
    mc = monte_carlo_voltage_samples(feeder2, base_injections(feeder2), model,
                                     2, vs.Phase.A, 200, seed=1)
    assert mc.n_failed > 0
    assert len(mc.values) + mc.n_failed == mc.n_requested == 200


def test_monte_carlo_rejects_bad_input(feeder37):
    model = _small_model(feeder37)
    with pytest.raises(ValueError):
        monte_carlo_voltage_samples(feeder37, base_injections(feeder37), model,
                                    22, vs.Phase.A, 0, seed=1)
