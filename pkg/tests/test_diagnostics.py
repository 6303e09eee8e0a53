import math

import numpy as np
import pytest

from torusflow import diagnostics as D
from torusflow import fields as F
from torusflow import fluid as FL
from torusflow import noise as N
from torusflow import scenarios as SC
from torusflow import stepping as S

from conftest import band_limited, random_state


def _noisy_record(grid, seed=11, horizon=0.05, viscous=True, count=2, stride=1):
    mu = 1e-3 if viscous else 0.0
    params = FL.FluidParams(gamma=1.4, a=1.0, mu=mu, lam=mu)
    noise = N.build_solenoidal_library(grid, count, 2, amplitude=0.2, seed=5)
    path = N.WienerPath(seed=seed, dt_base=1e-3, count=count)
    initial = SC.vortex_pair(grid, amplitude=0.3, rho_epsilon=0.1)
    config = S.StepConfig(scheme=S.ITO_EM, spatial_scheme=FL.CENTRAL_SPECTRAL,
                          substeps=1, stride=stride)
    record = S.advance(initial, horizon, path, params, noise, config)
    return record, params, noise


# --- energies -----------------------------------------------------------------


def test_energy_examples(grid32):
    vol = (2 * math.pi) ** 2
    state = SC.constant_state(grid32, 1.0)
    assert D.total_energy(state, FL.FluidParams(gamma=2.0, a=1.0)) == pytest.approx(vol)

    rho = 2.0 * np.ones(grid32.shape)
    m = np.stack([2.0 * np.ones(grid32.shape), np.zeros(grid32.shape)])
    state = FL.make_state(grid32, rho, m)
    assert D.total_energy(state, FL.FluidParams(gamma=2.0, a=1.0)) == pytest.approx(5 * vol)


def test_energy_compositional_oracle(grid64):
    params = FL.FluidParams(gamma=1.4, a=0.8)
    state = random_state(grid64, seed=44)
    u = FL.velocity(state, params)
    kinetic = 0.5 * state.rho.values * np.sum(u.components**2, axis=0)
    oracle = F.integrate_array(kinetic + FL.pressure_potential(state.rho.values, params),
                               grid64)
    assert D.total_energy(state, params) == pytest.approx(oracle, rel=1e-12)


def test_energy_with_defect(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    state = SC.constant_state(grid32, 1.0)
    base = D.total_energy(state, params)
    assert D.total_energy_with_defect(state, None, params) == base

    vol = (2 * math.pi) ** 2
    c = 0.3
    conv = np.zeros((2, 2, *grid32.shape))
    conv[0, 0] = c
    conv[1, 1] = c
    defect = D.DefectEstimate(grid=grid32, scale=0.5, conv=conv, press=np.zeros(grid32.shape))
    total = D.total_energy_with_defect(state, defect, params)
    assert total == pytest.approx(base + 0.5 * 2 * c * vol, rel=1e-12)


def test_energy_with_two_scale_defect_exceeds_base(grid64):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    state = SC.two_scale_oscillatory(grid64, amplitude=1.0, mode_number=16)
    defect = D.defect_estimate(state, scale=0.8, params=params)
    total = D.total_energy_with_defect(state, defect, params)
    assert total >= D.total_energy(state, params)


# --- relative energy ------------------------------------------------------------


def test_relative_energy_coincident(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    state = random_state(grid32, seed=3)
    r = state.rho
    v = FL.velocity(state, params)
    assert abs(D.relative_energy(state, r, v, None, params)) <= 1e-12


def test_relative_energy_kinetic_perturbation(grid64):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    base = random_state(grid64, seed=5)
    r = base.rho
    v = FL.velocity(base, params)
    w = 0.1 * np.stack([band_limited(grid64, 60), band_limited(grid64, 61)])
    perturbed = FL.make_state(grid64, r.values, r.values * (v.components + w))
    value = D.relative_energy(perturbed, r, v, None, params)
    oracle = 0.5 * F.integrate_array(r.values * np.sum(w * w, axis=0), grid64)
    assert value == pytest.approx(oracle, rel=1e-12)


def test_relative_energy_positivity_random(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    base = random_state(grid32, seed=7)
    r = base.rho
    v = FL.velocity(base, params)
    rng = np.random.Generator(np.random.Philox(key=77))
    for trial in range(1000):
        d_rho = 0.2 * rng.uniform(-1, 1) * band_limited(grid32, 1000 + trial, max_mode=4)
        d_m = 0.2 * np.stack([band_limited(grid32, 3000 + trial, max_mode=4),
                              band_limited(grid32, 5000 + trial, max_mode=4)])
        state = FL.make_state(grid32, np.maximum(r.values + d_rho, 0.05),
                              base.momentum.components + d_m)
        assert D.relative_energy(state, r, v, None, params) >= 0.0
    # zero only at coincidence
    assert D.relative_energy(base, r, v, None, params) <= 1e-12


def test_rate_zero_at_coincidence_and_bregman_at_rest(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    base = random_state(grid32, seed=15)
    r = base.rho
    v = FL.velocity(base, params)
    assert abs(D.relative_energy_rate(base, r, v, None, params)) <= 1e-12

    still = F.VectorField(grid32, np.zeros((2, *grid32.shape)))
    rr = F.ScalarField(grid32, np.full(grid32.shape, 1.1))
    q = D.relative_energy_rate(base, rr, still, None, params)
    bregman = F.integrate_array(
        FL.pressure_potential(base.rho.values, params)
        - FL.pressure_potential(rr.values, params)
        - FL.pressure_potential_prime(rr.values, params) * (base.rho.values - rr.values),
        grid32)
    assert q == pytest.approx(bregman, rel=1e-12)


def test_rate_bounded_by_gronwall_constant(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    base = random_state(grid32, seed=25, m_amp=0.5)
    r = base.rho
    v = FL.velocity(base, params)
    c = D.gronwall_constant(v, params)
    rng = np.random.Generator(np.random.Philox(key=99))
    for trial in range(200):
        d_rho = 0.3 * rng.uniform(-1, 1) * band_limited(grid32, 7000 + trial, max_mode=4)
        d_m = 0.3 * np.stack([band_limited(grid32, 8000 + trial, max_mode=4),
                              band_limited(grid32, 9000 + trial, max_mode=4)])
        state = FL.make_state(grid32, np.maximum(r.values + d_rho, 0.05),
                              base.momentum.components + d_m)
        k_val = D.relative_energy(state, r, v, None, params)
        q_val = D.relative_energy_rate(state, r, v, None, params)
        assert abs(q_val) <= c * k_val + 1e-12


# --- martingale probes ----------------------------------------------------------


def test_probe_constant_trajectory_identically_zero(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    noise = N.build_solenoidal_library(grid32, 2, 2, amplitude=0.3, seed=5)
    path = N.WienerPath(seed=2, dt_base=1e-3, count=2)
    record = S.advance(SC.constant_state(grid32, 1.0), 0.05, path, params, noise,
                       S.StepConfig(substeps=1, spatial_scheme=FL.RUSANOV_FV))
    x, y = grid32.coordinates()
    phi = F.ScalarField(grid32, np.sin(x))
    phiv = F.VectorField(grid32, np.stack([np.sin(y), np.zeros(grid32.shape)]))
    p1 = D.weak_residual_continuity(record, phi, noise, params)
    p2 = D.weak_residual_momentum(record, phiv, noise, params)
    assert np.abs(p1.residual).max() <= 1e-12
    assert np.abs(p2.residual).max() <= 1e-12


def test_probe_matches_ito_sums_exactly(grid64):
    # with left-endpoint quadrature the residual reproduces the accumulated
    # Ito sums of the Euler-Maruyama update to round-off
    record, params, noise = _noisy_record(grid64)
    x, y = grid64.coordinates()
    p1 = D.weak_residual_continuity(record, F.ScalarField(grid64, np.sin(x)), noise, params)
    comps = np.stack([np.sin(y), np.zeros(grid64.shape)])
    p2 = D.weak_residual_momentum(record, F.VectorField(grid64, comps), noise, params)
    for probe in (p1, p2):
        ito = np.concatenate(
            [[0.0], np.cumsum(-np.sum(probe.noise_weights * record.step_increments, axis=1))])
        scale = max(np.abs(probe.residual).max(), 1e-30)
        assert np.abs(probe.residual - ito).max() <= 1e-10 * max(scale, 1.0)
        assert np.abs(probe.residual).max() > 1e-6  # the probe actually sees noise


def test_probe_deterministic_run_residual_vanishes(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    x, _ = grid32.coordinates()
    phi = F.ScalarField(grid32, np.sin(x))
    sups = []
    for substeps in (2, 1):
        path = N.WienerPath(seed=2, dt_base=1e-3, count=0)
        record = S.advance(SC.vortex_pair(grid32, amplitude=0.3, rho_epsilon=0.05),
                           0.04, path, params, None,
                           S.StepConfig(substeps=substeps,
                                        spatial_scheme=FL.CENTRAL_SPECTRAL))
        probe = D.weak_residual_continuity(record, phi, None, params)
        sups.append(np.abs(probe.residual).max())
    assert max(sups) <= 1e-10


def test_probe_mass_and_momentum_test_functions(grid64):
    record, params, noise = _noisy_record(grid64)
    one = F.ScalarField(grid64, np.ones(grid64.shape))
    p = D.weak_residual_continuity(record, one, noise, params)
    assert np.abs(p.residual).max() <= 1e-9
    const = F.VectorField(grid64, np.stack([np.ones(grid64.shape), np.zeros(grid64.shape)]))
    p = D.weak_residual_momentum(record, const, noise, params)
    assert np.abs(p.residual).max() <= 1e-9


def test_probe_requires_full_rate_record(grid32):
    record, params, noise = _noisy_record(grid32, stride=5)
    x, _ = grid32.coordinates()
    with pytest.raises(D.DiagnosticsError):
        D.weak_residual_continuity(record, F.ScalarField(grid32, np.sin(x)), noise, params)


def test_predicted_variation_nondecreasing_and_starts_at_zero(grid32):
    record, params, noise = _noisy_record(grid32)
    x, _ = grid32.coordinates()
    probe = D.weak_residual_continuity(record, F.ScalarField(grid32, np.sin(x)), noise, params)
    qv = probe.predicted_quadratic_variation()
    assert qv[0] == 0.0
    assert np.diff(qv).min() >= 0.0
    assert np.allclose(probe.predicted_quadratic_variation(half=True), 0.5 * qv, atol=0)


# --- quadratic variation oracles ---------------------------------------------


def test_empirical_qv_of_brownian_motion():
    # QV of W over [0, 1] is 1; the estimator mean over 100 paths carries a
    # CLT band of 4 sd(QV)/10 with sd(QV) = sqrt(2 dt)
    dt = 1e-4
    steps = 10_000
    finals = []
    for seed in range(100):
        path = N.WienerPath(seed=seed, dt_base=dt, count=1)
        incs = np.array([path.increments(j)[0] for j in range(steps)])
        w = np.concatenate([[0.0], np.cumsum(incs)])
        finals.append(D.empirical_quadratic_variation(w)[-1])
    finals = np.array(finals)
    assert 0.9 <= finals.min() and finals.max() <= 1.1
    assert abs(finals.mean() - 1.0) <= 4.0 * math.sqrt(2.0 * dt) / 10.0


def test_empirical_qv_smooth_path_vanishes():
    t = np.linspace(0.0, 1.0, 1001)
    smooth = np.sin(3 * t)
    qv = D.empirical_quadratic_variation(smooth)
    # bounded-variation path: QV <= max|f'|^2 T dt
    assert qv[-1] <= 9.0 * 1e-3


def test_empirical_cross_variation_independent_paths():
    dt = 1e-4
    steps = 10_000
    vals = []
    for seed in range(50):
        pa = N.WienerPath(seed=seed, dt_base=dt, count=2)
        incs = np.stack([pa.increments(j) for j in range(steps)])
        wa = np.concatenate([[0.0], np.cumsum(incs[:, 0])])
        wb = np.concatenate([[0.0], np.cumsum(incs[:, 1])])
        vals.append(D.empirical_cross_variation(wa, wb)[-1])
    vals = np.array(vals)
    # Var[cross] = dt * T for independent paths
    assert abs(vals.mean()) <= 4.0 * math.sqrt(dt / 50.0)


def test_qv_needs_two_samples():
    with pytest.raises(D.DiagnosticsError):
        D.empirical_quadratic_variation(np.array([1.0]))


# --- defect estimates -----------------------------------------------------------


def test_defect_constant_state_is_zero(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    est = D.defect_estimate(SC.constant_state(grid32, 1.3), 0.5, params)
    assert np.abs(est.conv).max() <= 1e-12
    assert np.abs(est.press).max() <= 1e-12


def test_defect_vanishes_quadratically_in_scale():
    # Taylor expansion of the mollification error gives O(ell^2) decay once
    # ell * k_max < 1; outside that regime the defect saturates at the
    # field-variance level, so low-mode content and a fine grid are needed
    grid = F.GridSpec((128, 128))
    params = FL.FluidParams(gamma=1.4, a=1.0)
    state = random_state(grid, seed=71, rho_amp=0.2, m_amp=0.3, max_mode=2)
    sups = []
    for scale in (0.4, 0.2, 0.1):
        est = D.defect_estimate(state, scale, params)
        sups.append(max(np.abs(est.conv).max(), np.abs(est.press).max()))
    assert sups[0] > sups[1] > sups[2]
    assert sups[1] / sups[2] >= 3.0  # approaching the asymptotic factor 4
    assert sups[2] <= 0.3 * sups[0]


def test_defect_two_scale_sin_squared_oracle(grid64):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    state = SC.two_scale_oscillatory(grid64, amplitude=1.0, mode_number=16)
    est = D.defect_estimate(state, 0.8, params)
    trace = np.einsum("ii...->...", est.conv)
    assert abs(trace.mean() - 0.5) <= 0.025  # within 5 percent of the sin^2 average
    assert np.abs(est.conv[0, 0] - 0.5).max() <= 0.025
    assert np.abs(est.conv[1, 1]).max() <= 1e-10
    assert est.min_conv_eigenvalue() >= -1e-10


def test_defect_signs_random_states(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    worst_press = 0.0
    worst_eig = 0.0
    for seed in range(100):
        state = random_state(grid32, seed=10_000 + seed, rho_amp=0.4, m_amp=0.8)
        est = D.defect_estimate(state, 0.5, params)
        worst_press = min(worst_press, est.min_press())
        worst_eig = min(worst_eig, est.min_conv_eigenvalue())
    assert worst_press >= -1e-12
    assert worst_eig >= -1e-10


def test_defect_ensemble_mode(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    states = [random_state(grid32, seed=400 + k) for k in range(4)]
    est = D.defect_estimate(states, 0.5, params)
    assert est.min_press() >= -1e-12
    assert est.min_conv_eigenvalue() >= -1e-10
    # ensemble spread adds defect beyond any single member's
    single = D.defect_estimate(states[0], 0.5, params)
    assert est.press_integral() >= single.press_integral() - 1e-12


def test_defect_scale_below_grid_rejected(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    with pytest.raises(D.DiagnosticsError):
        D.defect_estimate(SC.constant_state(grid32), 0.01, params)


# --- cancellation identities -----------------------------------------------------


def test_weak_strong_cancellation_identities(grid64):
    # the four integrand pairs behind the relative-energy expansion cancel
    # after discrete integration by parts for solenoidal sigma
    params = FL.FluidParams(gamma=1.4, a=1.0)
    noise = N.build_solenoidal_library(grid64, 3, 3, amplitude=0.5, seed=31)
    rho = 1.0 + 0.2 * band_limited(grid64, 81, max_mode=5)
    r = 1.0 + 0.2 * band_limited(grid64, 82, max_mode=5)
    m = 0.4 * np.stack([band_limited(grid64, 83, max_mode=5),
                        band_limited(grid64, 84, max_mode=5)])
    v = 0.4 * np.stack([band_limited(grid64, 85, max_mode=5),
                        band_limited(grid64, 86, max_mode=5)])
    grad_v = FL.velocity_gradient_arrays(v, grid64)
    for k in range(noise.count):
        sigma = noise.sigmas[k]
        sig_grad = lambda f: np.einsum("i...,i...->...", sigma, F.gradient_arrays(f, grid64))

        # momentum pairing: (m x sigma) : grad v = m . (sigma . grad) v
        lhs = F.integrate_array(
            np.einsum("i...,j...,ji...->...", m, sigma, grad_v), grid64)
        rhs = F.integrate_array(
            np.einsum("i...,i...->...", m, np.einsum("j...,ji...->i...", sigma, grad_v)),
            grid64)
        assert abs(lhs - rhs) <= 1e-8

        # kinetic pairing: rho v . (sigma . grad) v = (1/2) rho sigma . grad |v|^2
        lhs = F.integrate_array(
            rho * np.einsum("i...,i...->...", v, np.einsum("j...,ji...->i...", sigma, grad_v)),
            grid64)
        rhs = 0.5 * F.integrate_array(rho * sig_grad(np.sum(v * v, axis=0)), grid64)
        assert abs(lhs - rhs) <= 1e-8

        # pressure pairing: int r sigma . grad p'(r) = 0
        p_prime = params.a * params.gamma * r ** (params.gamma - 1.0)
        assert abs(F.integrate_array(r * sig_grad(p_prime), grid64)) <= 1e-8

        # mixed pairing: int rho sigma . grad P'(r) = int rho P''(r) sigma . grad r
        pp_prime = FL.pressure_potential_prime(r, params)
        p_second = params.a * params.gamma * r ** (params.gamma - 2.0)
        lhs = F.integrate_array(rho * sig_grad(pp_prime), grid64)
        rhs = F.integrate_array(rho * p_second * sig_grad(r), grid64)
        assert abs(lhs - rhs) <= 1e-8


# --- maximum principle ------------------------------------------------------------


def test_max_principle_divergence_free_reference(grid32):
    # incompressible flow: both bounds stay constant and hold exactly
    params = FL.FluidParams(gamma=1.4, a=1.0)
    path = N.WienerPath(seed=4, dt_base=1e-3, count=0)
    initial = SC.constant_state(grid32, 1.0)
    record = S.advance(initial, 0.05, path, params, None,
                       S.StepConfig(substeps=1, guard=100.0,
                                    spatial_scheme=FL.CENTRAL_SPECTRAL))
    report = D.max_principle_bounds(record)
    assert np.allclose(report.lower, 1.0, atol=0)
    assert np.allclose(report.upper, 1.0, atol=0)
    assert not report.violated
    assert report.max_violation == 0.0


def test_max_principle_compressible_run_refines(grid64):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    violations = []
    for substeps in (4, 2):
        path = N.WienerPath(seed=4, dt_base=5e-4, count=0)
        record = S.advance(SC.vortex_pair(grid64, amplitude=0.4, rho_epsilon=0.1),
                           0.2, path, params, None,
                           S.StepConfig(substeps=substeps, guard=100.0,
                                        spatial_scheme=FL.CENTRAL_SPECTRAL))
        report = D.max_principle_bounds(record)
        violations.append(report.max_violation)
        assert not report.violated
    assert violations[1] <= violations[0] + 1e-12


# --- ledgers ----------------------------------------------------------------------


def test_energy_ledger_from_record(grid32):
    record, params, noise = _noisy_record(grid32, viscous=True)
    ledger = D.EnergyLedger.from_record(record)
    assert ledger.initial_energy == pytest.approx(record.series["energy"][0])
    assert np.diff(ledger.dissipation).min() >= 0.0
    assert ledger.budget_residual()[0] == 0.0


def test_relative_energy_ledger_envelope():
    ledger = D.RelativeEnergyLedger(
        times=np.array([0.0, 1.0]), values=np.array([0.5, 0.6]),
        rates=np.zeros(2), gronwall=2.0, guard_ok=np.array([True, True]),
        initial_offset=0.1)
    env = ledger.envelope()
    assert env[0] == pytest.approx(0.6)
    assert env[1] == pytest.approx(0.6 * math.exp(2.0))
