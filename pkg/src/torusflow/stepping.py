"""Stochastic time integration of both systems, trajectory recording, guards.

Two schemes integrate the same equations: "ito-em" advances the Ito form
(Euler-Maruyama plus the explicit correction drifts) and "strat-heun"
advances the Stratonovich form directly by a predictor-corrector, with no
correction term.  Their pathwise gap on a shared Wiener path must vanish
under step refinement; that consistency is the central cross-check.

Steps are taken on an integer number of base Wiener increments, so one
underlying path is shared exactly across time resolutions, schemes, and
parameter sweeps.  The transport terms are discretized in advective form
(sigma_k . grad field, spectral backend), which coincides with the
conservative form for solenoidal sigma_k up to round-off and keeps every
noise contribution an exact total divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fluid
from .fields import SPECTRAL, GridSpec, ScalarField, VectorField, gradient_arrays, divergence_arrays
from .fluid import FluidParams, State
from .noise import NoiseCoefficients, WienerPath

ITO_EM = "ito-em"
STRAT_HEUN = "strat-heun"
_SCHEMES = (ITO_EM, STRAT_HEUN)

COMPLETED = "completed"
GUARD_TRIPPED = "guard-tripped"
FLOOR_TRIPPED = "floor-tripped"


class NumericalError(RuntimeError):
    """Non-finite values produced by a step; unrecoverable."""


class FloorViolation(RuntimeError):
    """Step produced density below the floor; the step is rejected."""


class StepConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StepConfig:
    cfl: float = 0.4
    scheme: str = ITO_EM
    spatial_scheme: str = fluid.RUSANOV_FV
    guard: float = math.inf  # trip when the discrete C1 norm of u exceeds this
    density_floor: float | None = None  # None -> use FluidParams.density_floor
    substeps: int = 0  # fixed dt = substeps * path.dt_base; 0 -> automatic from CFL
    stride: int = 1  # record every stride-th state (initial and final always kept)
    max_halvings: int = 8

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise StepConfigError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.guard <= 0.0:
            raise StepConfigError(f"guard must be positive, got {self.guard}")
        if self.scheme not in _SCHEMES:
            raise StepConfigError(f"unknown scheme {self.scheme!r}; expected one of {_SCHEMES}")
        if self.spatial_scheme not in (fluid.CENTRAL_SPECTRAL, fluid.RUSANOV_FV):
            raise StepConfigError(f"unknown spatial scheme {self.spatial_scheme!r}")
        if self.substeps < 0 or self.stride < 1:
            raise StepConfigError("substeps must be >= 0 and stride >= 1")

    def floor(self, params: FluidParams) -> float:
        return params.density_floor if self.density_floor is None else self.density_floor


@dataclass
class Termination:
    kind: str
    time: float


@dataclass
class TrajectoryRecord:
    """Everything a run produced: strided states, per-step noise, scalar series.

    The scalar series (energy, mass, ...) are sampled at every accepted step
    regardless of the state stride, so conservation and energy budgets can be
    checked at full rate without storing every field.
    """

    grid: GridSpec
    sample_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    states: list[State] = field(default_factory=list)
    step_dts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step_increments: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    series: dict[str, np.ndarray] = field(default_factory=dict)
    termination: Termination = field(default_factory=lambda: Termination(COMPLETED, 0.0))

    @property
    def times(self) -> np.ndarray:
        """Times of the scalar series samples (step boundaries, including t=0)."""
        return self.series["time"]

    @property
    def final_state(self) -> State:
        return self.states[-1]


# --- single steps -----------------------------------------------------------


def _noise_gradients(rho, momentum, grid):
    grad_rho = gradient_arrays(rho, grid, SPECTRAL)
    grad_m = [gradient_arrays(momentum[i], grid, SPECTRAL) for i in range(grid.dim)]
    return grad_rho, grad_m


def _transport_increments(grads, noise: NoiseCoefficients, dW: np.ndarray):
    """(sum_k dW_k sigma_k) . grad applied to density and momentum components."""
    grad_rho, grad_m = grads
    sigma_w = np.einsum("k,kd...->d...", dW, noise.sigmas)
    d_rho = np.einsum("d...,d...->...", sigma_w, grad_rho)
    d_m = np.stack([np.einsum("d...,d...->...", sigma_w, g) for g in grad_m])
    return d_rho, d_m


def _correction_drifts(grads, grid, noise: NoiseCoefficients):
    """(1/2) sum_k div(sigma_k (sigma_k . grad .)) for density and momentum."""
    grad_rho, grad_m = grads
    dim = grid.dim
    flux_rho = np.zeros((dim, *grid.shape))
    flux_m = np.zeros((dim, dim, *grid.shape))
    for k in range(noise.count):
        sigma = noise.sigmas[k]
        flux_rho += sigma * np.einsum("d...,d...->...", sigma, grad_rho)
        for i in range(dim):
            flux_m[i] += sigma * np.einsum("d...,d...->...", sigma, grad_m[i])
    corr_rho = 0.5 * divergence_arrays(flux_rho, grid, SPECTRAL)
    corr_m = np.stack([0.5 * divergence_arrays(flux_m[i], grid, SPECTRAL) for i in range(dim)])
    return corr_rho, corr_m


def _check_step_output(rho, momentum, floor):
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(momentum))):
        raise NumericalError("non-finite values after step")
    if float(rho.min()) < floor:
        raise FloorViolation(f"density {float(rho.min()):.3e} fell below floor {floor:.3e}")


def _step_arrays(rho, momentum, grid, dt, dW, params, noise, config):
    has_noise = noise is not None and noise.count > 0 and dW.size > 0
    if config.scheme == ITO_EM:
        d_rho, d_m = fluid.deterministic_rhs_arrays(rho, momentum, grid, params, config.spatial_scheme)
        if has_noise:
            grads = _noise_gradients(rho, momentum, grid)
            corr_rho, corr_m = _correction_drifts(grads, grid, noise)
            n_rho, n_m = _transport_increments(grads, noise, dW)
            new_rho = rho + dt * (d_rho + corr_rho) + n_rho
            new_m = momentum + dt * (d_m + corr_m) + n_m
        else:
            new_rho = rho + dt * d_rho
            new_m = momentum + dt * d_m
    else:  # strat-heun
        d_rho0, d_m0 = fluid.deterministic_rhs_arrays(rho, momentum, grid, params, config.spatial_scheme)
        if has_noise:
            n_rho0, n_m0 = _transport_increments(_noise_gradients(rho, momentum, grid), noise, dW)
        else:
            n_rho0 = 0.0
            n_m0 = 0.0
        pred_rho = rho + dt * d_rho0 + n_rho0
        pred_m = momentum + dt * d_m0 + n_m0
        if not (np.all(np.isfinite(pred_rho)) and np.all(np.isfinite(pred_m))):
            raise NumericalError("non-finite predictor state")
        if float(pred_rho.min()) <= 0.0:
            raise FloorViolation("predictor density non-positive")
        d_rho1, d_m1 = fluid.deterministic_rhs_arrays(pred_rho, pred_m, grid, params, config.spatial_scheme)
        if has_noise:
            n_rho1, n_m1 = _transport_increments(_noise_gradients(pred_rho, pred_m, grid), noise, dW)
        else:
            n_rho1 = 0.0
            n_m1 = 0.0
        new_rho = rho + 0.5 * dt * (d_rho0 + d_rho1) + 0.5 * (n_rho0 + n_rho1)
        new_m = momentum + 0.5 * dt * (d_m0 + d_m1) + 0.5 * (n_m0 + n_m1)
    _check_step_output(new_rho, new_m, config.floor(params))
    return new_rho, new_m


def step_ito_em(state: State, dt: float, dW: np.ndarray, params: FluidParams,
                noise: NoiseCoefficients | None, config: StepConfig) -> State:
    """One Euler-Maruyama step of the Ito form (correction drifts included)."""
    cfg = config if config.scheme == ITO_EM else _with_scheme(config, ITO_EM)
    rho, m = _step_arrays(state.rho.values, state.momentum.components, state.grid,
                          dt, np.asarray(dW, dtype=np.float64), params, noise, cfg)
    return fluid.make_state(state.grid, rho, m, state.time + dt)


def step_strat_heun(state: State, dt: float, dW: np.ndarray, params: FluidParams,
                    noise: NoiseCoefficients | None, config: StepConfig) -> State:
    """One Heun predictor-corrector step of the Stratonovich form."""
    cfg = config if config.scheme == STRAT_HEUN else _with_scheme(config, STRAT_HEUN)
    rho, m = _step_arrays(state.rho.values, state.momentum.components, state.grid,
                          dt, np.asarray(dW, dtype=np.float64), params, noise, cfg)
    return fluid.make_state(state.grid, rho, m, state.time + dt)


def _with_scheme(config: StepConfig, scheme: str) -> StepConfig:
    return StepConfig(cfl=config.cfl, scheme=scheme, spatial_scheme=config.spatial_scheme,
                      guard=config.guard, density_floor=config.density_floor,
                      substeps=config.substeps, stride=config.stride,
                      max_halvings=config.max_halvings)


def cfl_dt(state: State, params: FluidParams, noise: NoiseCoefficients | None,
           config: StepConfig) -> float:
    """dt = cfl * h / (max |u| + max c_s + max_k sup |sigma_k|)."""
    u = fluid.velocity_arrays(state.rho.values, state.momentum.components, params)
    speed = float(np.sqrt(np.sum(u * u, axis=0)).max())
    speed += float(fluid.sound_speed_array(state.rho.values, params).max())
    if noise is not None:
        speed += noise.max_sup_norm
    h = state.grid.min_spacing
    if speed <= 0.0:
        return config.cfl * h
    return config.cfl * h / speed


class _Kahan:
    """Compensated accumulator for long scalar sums (energy ledger totals)."""

    __slots__ = ("total", "_c")

    def __init__(self, value: float = 0.0):
        self.total = value
        self._c = 0.0

    def add(self, x: float) -> float:
        y = x - self._c
        t = self.total + y
        self._c = (t - self.total) - y
        self.total = t
        return self.total


def _state_diagnostics(rho, momentum, grid, params, need_gradients=True):
    """Scalar observables of one state; grad u is computed once and reused.

    Gradient-based entries (velocity C1 norm, div sup, dissipation rate) are
    skipped when no guard and no viscosity needs them; they then read 0.
    """
    u = fluid.velocity_arrays(rho, momentum, params)
    vol = grid.cell_volume
    speed = np.sqrt(np.sum(u * u, axis=0))
    kinetic = 0.5 * np.sum(momentum * momentum, axis=0) / rho
    potential = fluid.pressure_potential(rho, params)
    max_grad = 0.0
    div_sup = 0.0
    diss_rate = 0.0
    if need_gradients:
        grad_u = fluid.velocity_gradient_arrays(u, grid, SPECTRAL)
        max_grad = float(np.abs(grad_u).max())
        div_sup = float(np.abs(np.einsum("ii...->...", grad_u)).max())
        if params.viscous:
            stress = fluid.viscous_stress_arrays(grad_u, params)
            diss_rate = vol * float(np.sum(stress * grad_u))
    return {
        "energy": vol * float(np.sum(kinetic + potential)),
        "mass": vol * float(np.sum(rho)),
        "momentum": vol * momentum.reshape(grid.dim, -1).sum(axis=1),
        "rho_min": float(rho.min()),
        "rho_max": float(rho.max()),
        "max_speed": float(speed.max()),
        "max_velocity_gradient": max_grad,
        "div_sup": div_sup,
        "diss_rate": diss_rate,
    }


def advance(initial: State, horizon: float, path: WienerPath, params: FluidParams,
            noise: NoiseCoefficients | None, config: StepConfig) -> TrajectoryRecord:
    """March to t >= horizon (or a guard/floor trip), recording as configured.

    The horizon must be an integer multiple of the path's base step, so the
    run consumes a well-defined prefix of the underlying Wiener path.
    """
    if horizon <= 0.0:
        raise StepConfigError(f"horizon must be positive, got {horizon}")
    if noise is not None and noise.count != path.count:
        raise StepConfigError(
            f"noise library has {noise.count} modes but path carries {path.count} processes")
    n_base = round(horizon / path.dt_base)
    if n_base < 1 or abs(n_base * path.dt_base - horizon) > 1e-9 * max(1.0, horizon):
        raise StepConfigError(
            f"horizon {horizon} is not an integer multiple of dt_base {path.dt_base}")

    grid = initial.grid
    rho = initial.rho.values
    momentum = initial.momentum.components
    floor = config.floor(params)
    if float(rho.min()) < floor:
        raise FloorViolation("initial density below floor")

    record = TrajectoryRecord(grid=grid)
    times = [initial.time]
    dts: list[float] = []
    increments: list[np.ndarray] = []
    series: dict[str, list[float]] = {
        k: [] for k in ("time", "energy", "dissipation_cum", "mass", "rho_min", "rho_max",
                        "max_speed", "max_velocity_gradient", "div_sup", "c1_norm")}
    momentum_series: list[np.ndarray] = []
    dissipation = _Kahan()

    def log_state(t, diag):
        series["time"].append(t)
        series["energy"].append(diag["energy"])
        series["dissipation_cum"].append(dissipation.total)
        series["mass"].append(diag["mass"])
        momentum_series.append(diag["momentum"])
        series["rho_min"].append(diag["rho_min"])
        series["rho_max"].append(diag["rho_max"])
        series["max_speed"].append(diag["max_speed"])
        series["max_velocity_gradient"].append(diag["max_velocity_gradient"])
        series["div_sup"].append(diag["div_sup"])
        series["c1_norm"].append(diag["max_speed"] + diag["max_velocity_gradient"])

    record.states.append(initial)
    base_pos = 0
    steps_taken = 0
    termination = Termination(COMPLETED, initial.time)

    need_gradients = params.viscous or math.isfinite(config.guard)
    while True:
        t = initial.time + base_pos * path.dt_base
        diag = _state_diagnostics(rho, momentum, grid, params, need_gradients)
        log_state(t, diag)
        c1 = diag["max_speed"] + diag["max_velocity_gradient"]
        if c1 > config.guard:
            termination = Termination(GUARD_TRIPPED, t)
            break
        if base_pos >= n_base:
            termination = Termination(COMPLETED, t)
            break

        if config.substeps > 0:
            n_sub = config.substeps
        else:
            state_view = fluid.make_state(grid, rho, momentum, t)
            n_sub = int(cfl_dt(state_view, params, noise, config) / path.dt_base)
            if n_sub < 1:
                raise NumericalError(
                    f"CFL limit at t={t:.6g} is below the path base step {path.dt_base:.3e}; "
                    "rerun with a finer dt_base")
        n_sub = min(n_sub, n_base - base_pos)

        accepted = False
        for _ in range(config.max_halvings + 1):
            dW = path.window(base_pos, n_sub) if (noise is not None and noise.count) else np.zeros(0)
            dt = n_sub * path.dt_base
            try:
                new_rho, new_m = _step_arrays(rho, momentum, grid, dt, dW, params, noise, config)
            except FloorViolation:
                if n_sub >= 2:
                    n_sub //= 2
                    continue
                break
            accepted = True
            break
        if not accepted:
            termination = Termination(FLOOR_TRIPPED, t)
            break

        dissipation.add(dt * diag["diss_rate"])
        rho, momentum = new_rho, new_m
        base_pos += n_sub
        steps_taken += 1
        dts.append(dt)
        increments.append(dW)
        t_new = initial.time + base_pos * path.dt_base
        if steps_taken % config.stride == 0 or base_pos >= n_base:
            record.states.append(fluid.make_state(grid, rho, momentum, t_new))
            times.append(t_new)

    # keep the terminal state even off-stride (guard/floor trips land here too)
    final_t = initial.time + base_pos * path.dt_base
    if times[-1] != final_t or not record.states:
        record.states.append(fluid.make_state(grid, rho, momentum, final_t))
        times.append(final_t)

    record.sample_times = np.asarray(times)
    record.step_dts = np.asarray(dts)
    k = path.count
    record.step_increments = (
        np.stack(increments) if increments else np.zeros((0, k)))
    record.series = {key: np.asarray(vals) for key, vals in series.items()}
    mom = np.stack(momentum_series) if momentum_series else np.zeros((0, grid.dim))
    for i in range(grid.dim):
        record.series[f"momentum_{'xyz'[i]}"] = mom[:, i]
    record.termination = termination
    return record
