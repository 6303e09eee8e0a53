"""Constitutive laws and deterministic right-hand sides for the two systems.

The inviscid system is selected by mu = lambda = 0, the viscous one by
positive coefficients.  Two spatial schemes are provided: "central-spectral"
(all fluxes evaluated pointwise, derivatives spectral; conservative and
energy-consistent to spectral accuracy on smooth states) and "rusanov-fv"
(dimension-split local Lax-Friedrichs fluxes; robust and energy-dissipative).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    CENTRAL,
    SPECTRAL,
    FieldError,
    GridSpec,
    ScalarField,
    TensorField,
    VectorField,
    divergence_arrays,
    gradient_arrays,
)

CENTRAL_SPECTRAL = "central-spectral"
RUSANOV_FV = "rusanov-fv"
_SCHEMES = (CENTRAL_SPECTRAL, RUSANOV_FV)


class FluidError(ValueError):
    """Invalid fluid state or parameters."""


@dataclass(frozen=True)
class FluidParams:
    """Barotropic pressure law p = a rho^gamma and Newtonian viscosities."""

    gamma: float
    a: float = 1.0
    mu: float = 0.0
    lam: float = 0.0
    density_floor: float = 1e-8

    def __post_init__(self):
        if self.gamma <= 1.0:
            raise FluidError(f"adiabatic exponent must exceed 1, got {self.gamma}")
        if self.a <= 0.0:
            raise FluidError(f"pressure constant must be positive, got {self.a}")
        if self.mu < 0.0 or self.lam < 0.0:
            raise FluidError("viscosities must be non-negative")
        if self.density_floor <= 0.0:
            raise FluidError("density floor must be positive")

    @property
    def viscous(self) -> bool:
        return self.mu > 0.0 or self.lam > 0.0


@dataclass(frozen=True)
class State:
    """Density and momentum at one time instant."""

    rho: ScalarField
    momentum: VectorField
    time: float = 0.0

    def __post_init__(self):
        if self.rho.grid != self.momentum.grid:
            raise FluidError("density and momentum live on different grids")
        if self.time < 0.0:
            raise FluidError(f"time must be >= 0, got {self.time}")
        if float(self.rho.values.min()) <= 0.0:
            raise FluidError("density must be strictly positive")

    @property
    def grid(self) -> GridSpec:
        return self.rho.grid


def make_state(grid: GridSpec, rho: np.ndarray, momentum: np.ndarray, time: float = 0.0) -> State:
    return State(ScalarField(grid, rho), VectorField(grid, momentum), time)


def pressure_array(rho: np.ndarray, params: FluidParams) -> np.ndarray:
    if float(rho.min()) < 0.0:
        raise FluidError("negative density in pressure law")
    return params.a * rho ** params.gamma


def pressure(rho: ScalarField, params: FluidParams) -> ScalarField:
    """Barotropic pressure p = a rho^gamma."""
    return ScalarField(rho.grid, pressure_array(rho.values, params))


def pressure_potential(z, params: FluidParams):
    """P(z) = a z^gamma / (gamma - 1); accepts scalars or arrays."""
    z = np.asarray(z, dtype=np.float64)
    if float(z.min()) < 0.0:
        raise FluidError("pressure potential requires z >= 0")
    out = params.a * z ** params.gamma / (params.gamma - 1.0)
    return float(out) if out.ndim == 0 else out


def pressure_potential_prime(z, params: FluidParams):
    """P'(z) = a gamma z^(gamma-1) / (gamma - 1)."""
    z = np.asarray(z, dtype=np.float64)
    out = params.a * params.gamma * z ** (params.gamma - 1.0) / (params.gamma - 1.0)
    return float(out) if out.ndim == 0 else out


def sound_speed_array(rho: np.ndarray, params: FluidParams) -> np.ndarray:
    return np.sqrt(params.gamma * params.a * rho ** (params.gamma - 1.0))


def velocity_arrays(rho: np.ndarray, momentum: np.ndarray, params: FluidParams) -> np.ndarray:
    if float(rho.min()) < params.density_floor:
        raise FluidError(
            f"density {float(rho.min()):.3e} below floor {params.density_floor:.3e}"
        )
    return momentum / rho


def velocity(state: State, params: FluidParams) -> VectorField:
    """Velocity u = m / rho."""
    return VectorField(
        state.grid, velocity_arrays(state.rho.values, state.momentum.components, params)
    )


def viscous_stress_arrays(grad_u: np.ndarray, params: FluidParams) -> np.ndarray:
    """S = mu (grad u + grad u^T) + lambda div(u) I, from grad_u[i, j] = d_i u_j."""
    dim = grad_u.shape[0]
    div_u = np.einsum("ii...->...", grad_u)
    stress = params.mu * (grad_u + np.swapaxes(grad_u, 0, 1))
    for i in range(dim):
        stress[i, i] += params.lam * div_u
    return stress


def viscous_stress(grad_u: TensorField, params: FluidParams) -> TensorField:
    return TensorField(grad_u.grid, viscous_stress_arrays(grad_u.components, params))


def velocity_gradient_arrays(u: np.ndarray, grid: GridSpec, method: str = SPECTRAL) -> np.ndarray:
    """grad_u[i, j] = d_i u_j, stacked (dim, dim, *shape)."""
    out = np.empty((grid.dim, grid.dim, *grid.shape))
    for j in range(grid.dim):
        out[:, j] = gradient_arrays(u[j], grid, method)
    return out


def deterministic_rhs_arrays(
    rho: np.ndarray, momentum: np.ndarray, grid: GridSpec, params: FluidParams, scheme: str
) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand sides (-div(rho u), -div(rho u x u) - grad p + div S) as raw arrays."""
    if scheme == CENTRAL_SPECTRAL:
        return _rhs_central_spectral(rho, momentum, grid, params)
    if scheme == RUSANOV_FV:
        return _rhs_rusanov(rho, momentum, grid, params)
    raise FluidError(f"unknown spatial scheme {scheme!r}; expected one of {_SCHEMES}")


def deterministic_rhs(state: State, params: FluidParams, scheme: str = RUSANOV_FV):
    d_rho, d_m = deterministic_rhs_arrays(
        state.rho.values, state.momentum.components, state.grid, params, scheme
    )
    return ScalarField(state.grid, d_rho), VectorField(state.grid, d_m)


def _rhs_central_spectral(rho, momentum, grid, params):
    dim = grid.dim
    u = velocity_arrays(rho, momentum, params)
    p = pressure_array(rho, params)

    d_rho = -divergence_arrays(momentum, grid, SPECTRAL)

    d_m = np.empty_like(momentum)
    for i in range(dim):
        d_m[i] = -divergence_arrays(momentum[i] * u, grid, SPECTRAL)
    d_m -= gradient_arrays(p, grid, SPECTRAL)

    if params.viscous:
        grad_u = velocity_gradient_arrays(u, grid, SPECTRAL)
        stress = viscous_stress_arrays(grad_u, params)
        for i in range(dim):
            # (div S)_i = d_j S_{ji}; S symmetric so the row/column reading agree
            d_m[i] += divergence_arrays(stress[:, i], grid, SPECTRAL)
    return d_rho, d_m


def _rhs_rusanov(rho, momentum, grid, params):
    dim = grid.dim
    u = velocity_arrays(rho, momentum, params)
    p = pressure_array(rho, params)
    c = sound_speed_array(rho, params)

    cons = np.concatenate([rho[None], momentum])
    d_cons = np.zeros_like(cons)
    for ax in range(dim):
        flux = np.empty_like(cons)
        flux[0] = momentum[ax]
        for i in range(dim):
            flux[1 + i] = momentum[i] * u[ax]
        flux[1 + ax] += p

        speed = np.abs(u[ax]) + c
        flux_r = np.roll(flux, -1, axis=1 + ax)
        cons_r = np.roll(cons, -1, axis=1 + ax)
        alpha = np.maximum(speed, np.roll(speed, -1, axis=ax))
        face = 0.5 * (flux + flux_r) - 0.5 * alpha * (cons_r - cons)
        d_cons -= (face - np.roll(face, 1, axis=1 + ax)) / grid.spacing[ax]

    d_rho = d_cons[0]
    d_m = d_cons[1:]
    if params.viscous:
        grad_u = velocity_gradient_arrays(u, grid, CENTRAL)
        stress = viscous_stress_arrays(grad_u, params)
        for i in range(dim):
            d_m[i] += divergence_arrays(stress[:, i], grid, CENTRAL)
    return d_rho, d_m
