import math

import numpy as np
import pytest

from torusflow import fields as F
from torusflow import fluid as FL

from conftest import band_limited, random_state


def test_params_validation():
    with pytest.raises(FL.FluidError):
        FL.FluidParams(gamma=1.0)
    with pytest.raises(FL.FluidError):
        FL.FluidParams(gamma=1.4, a=0.0)
    with pytest.raises(FL.FluidError):
        FL.FluidParams(gamma=1.4, mu=-1.0)
    p = FL.FluidParams(gamma=1.4, mu=0.1, lam=0.2)
    assert p.viscous
    assert not FL.FluidParams(gamma=1.4).viscous


def test_pressure_examples(grid32):
    ones = np.ones(grid32.shape)
    p = FL.pressure(F.ScalarField(grid32, 2 * ones), FL.FluidParams(gamma=2.0, a=1.0))
    assert np.abs(p.values - 4.0).max() <= 1e-13
    p = FL.pressure(F.ScalarField(grid32, 8 * ones), FL.FluidParams(gamma=5.0 / 3.0, a=0.5))
    assert np.abs(p.values - 16.0).max() <= 1e-12


def test_pressure_log_exp_oracle(grid32):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    rho = 1.0 + 0.5 * np.abs(band_limited(grid32, seed=4))
    oracle = params.a * np.exp(params.gamma * np.log(rho))
    value = FL.pressure_array(rho, params)
    assert np.abs(value / oracle - 1.0).max() <= 1e-13


def test_pressure_rejects_negative_density(grid32):
    rho = np.ones(grid32.shape)
    rho[0, 0] = -0.1
    with pytest.raises(FL.FluidError):
        FL.pressure_array(rho, FL.FluidParams(gamma=1.4))


def test_pressure_potential_examples():
    params = FL.FluidParams(gamma=2.0, a=1.0)
    assert FL.pressure_potential(0.0, params) == 0.0
    assert FL.pressure_potential(3.0, params) == pytest.approx(9.0)
    with pytest.raises(FL.FluidError):
        FL.pressure_potential(-1.0, params)


def test_pressure_potential_bregman_convexity():
    params = FL.FluidParams(gamma=1.4, a=0.7)
    rng = np.random.Generator(np.random.Philox(key=8))
    x = rng.uniform(0.05, 5.0, size=1000)
    y = rng.uniform(0.05, 5.0, size=1000)
    gap = (FL.pressure_potential(x, params) - FL.pressure_potential(y, params)
           - FL.pressure_potential_prime(y, params) * (x - y))
    assert gap.min() >= 0.0
    # z P'(z) - P(z) = p(z), the classical potential/pressure relation
    z = rng.uniform(0.05, 5.0, size=100)
    lhs = z * FL.pressure_potential_prime(z, params) - FL.pressure_potential(z, params)
    assert np.abs(lhs - FL.pressure_array(z, params)).max() <= 1e-12


def test_velocity_examples(grid32):
    params = FL.FluidParams(gamma=1.4)
    rho = 2.0 * np.ones(grid32.shape)
    m = np.stack([4.0 * np.ones(grid32.shape), np.zeros(grid32.shape)])
    u = FL.velocity(FL.make_state(grid32, rho, m), params)
    assert np.abs(u.components[0] - 2.0).max() == 0.0
    assert np.abs(u.components[1]).max() == 0.0

    state = random_state(grid32, seed=9)
    u = FL.velocity(state, params)
    recovered = u.components * state.rho.values
    assert np.abs(recovered - state.momentum.components).max() <= 1e-13


def test_velocity_floor(grid32):
    params = FL.FluidParams(gamma=1.4, density_floor=0.5)
    rho = 0.4 * np.ones(grid32.shape)
    with pytest.raises(FL.FluidError):
        FL.velocity_arrays(rho, np.zeros((2, *grid32.shape)), params)


def test_viscous_stress_shear_mode(grid64):
    # u = sin(x2) e1: only d_2 u_1 = cos(x2); mu=1, lam=0 gives the symmetric
    # off-diagonal pair and zero trace
    _, y = grid64.coordinates()
    u = np.stack([np.sin(y), np.zeros(grid64.shape)])
    grad_u = FL.velocity_gradient_arrays(u, grid64)
    stress = FL.viscous_stress_arrays(grad_u, FL.FluidParams(gamma=1.4, mu=1.0, lam=0.0))
    assert np.abs(stress[0, 1] - np.cos(y)).max() <= 1e-12
    assert np.abs(stress[1, 0] - np.cos(y)).max() <= 1e-12
    assert np.abs(stress[0, 0]).max() <= 1e-12
    trace = np.einsum("ii...->...", stress)
    assert np.abs(trace).max() <= 1e-12


def test_viscous_stress_symmetry(grid32):
    grad_u = np.stack([np.stack([band_limited(grid32, seed=50 + 2 * i + j)
                                 for j in range(2)]) for i in range(2)])
    stress = FL.viscous_stress_arrays(grad_u, FL.FluidParams(gamma=1.4, mu=0.7, lam=0.3))
    assert np.abs(stress - np.swapaxes(stress, 0, 1)).max() <= 1e-13


def test_rhs_constant_state(grid64):
    rho = 1.3 * np.ones(grid64.shape)
    m = np.zeros((2, *grid64.shape))
    params = FL.FluidParams(gamma=2.0, a=1.0, mu=0.01, lam=0.01)
    for scheme in (FL.CENTRAL_SPECTRAL, FL.RUSANOV_FV):
        d_rho, d_m = FL.deterministic_rhs_arrays(rho, m, grid64, params, scheme)
        assert np.abs(d_rho).max() <= 1e-12
        assert np.abs(d_m).max() <= 1e-12


def test_rhs_acoustic_linearization(grid64):
    # rho = rhobar + eps sin(x1), m = 0: the momentum slot must equal
    # -grad p = -eps gamma a rhobar^(gamma-1) cos(x1) e1 + O(eps^2)
    params = FL.FluidParams(gamma=1.4, a=1.0)
    x, _ = grid64.coordinates()
    rhobar = 1.0
    errors = []
    for eps in (1e-3, 1e-4):
        rho = rhobar + eps * np.sin(x)
        d_rho, d_m = FL.deterministic_rhs_arrays(
            rho, np.zeros((2, *grid64.shape)), grid64, params, FL.CENTRAL_SPECTRAL)
        predicted = -eps * params.gamma * params.a * rhobar ** (params.gamma - 1.0) * np.cos(x)
        errors.append(np.abs(d_m[0] - predicted).max())
        assert np.abs(d_m[1]).max() <= 1e-12
        assert np.abs(d_rho).max() <= 1e-12  # m = 0
    # quadratic remainder: shrinks ~100x for a 10x smaller amplitude
    assert errors[1] <= 0.02 * errors[0]


def test_rhs_conservation_integrals(grid64):
    state = random_state(grid64, seed=11)
    params = FL.FluidParams(gamma=1.4, a=1.0, mu=1e-2, lam=1e-2)
    for scheme in (FL.CENTRAL_SPECTRAL, FL.RUSANOV_FV):
        d_rho, d_m = FL.deterministic_rhs_arrays(
            state.rho.values, state.momentum.components, grid64, params, scheme)
        assert abs(F.integrate_array(d_rho, grid64)) <= 1e-10
        if scheme == FL.CENTRAL_SPECTRAL:
            for i in range(2):
                assert abs(F.integrate_array(d_m[i], grid64)) <= 1e-10


def _energy_production(state, params, scheme):
    grid = state.grid
    rho = state.rho.values
    m = state.momentum.components
    d_rho, d_m = FL.deterministic_rhs_arrays(rho, m, grid, params, scheme)
    u = m / rho
    e_rho = -0.5 * np.sum(u * u, axis=0) + FL.pressure_potential_prime(rho, params)
    return F.integrate_array(e_rho * d_rho + np.sum(u * d_m, axis=0), grid)


def test_energy_compatibility_central_spectral(grid64):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    for seed in range(5):
        state = random_state(grid64, seed=100 + seed, rho_amp=0.15, m_amp=0.25)
        assert abs(_energy_production(state, params, FL.CENTRAL_SPECTRAL)) <= 1e-8


def test_energy_dissipation_rusanov(grid64):
    params = FL.FluidParams(gamma=1.4, a=1.0)
    for seed in range(5):
        state = random_state(grid64, seed=200 + seed, rho_amp=0.25, m_amp=0.4)
        assert _energy_production(state, params, FL.RUSANOV_FV) <= 0.0


def test_viscous_energy_production_matches_dissipation(grid64):
    params = FL.FluidParams(gamma=1.4, a=1.0, mu=1e-2, lam=2e-2)
    state = random_state(grid64, seed=300)
    u = state.momentum.components / state.rho.values
    grad_u = FL.velocity_gradient_arrays(u, grid64)
    stress = FL.viscous_stress_arrays(grad_u, params)
    dissipation = F.integrate_array(np.einsum("ij...,ij...->...", stress, grad_u), grid64)
    production = _energy_production(state, params, FL.CENTRAL_SPECTRAL)
    assert production + dissipation == pytest.approx(0.0, abs=1e-8)
    assert dissipation > 0.0


def test_unknown_scheme_rejected(grid32):
    state = random_state(grid32, seed=2)
    with pytest.raises(FL.FluidError):
        FL.deterministic_rhs(state, FL.FluidParams(gamma=1.4), scheme="weno5")
