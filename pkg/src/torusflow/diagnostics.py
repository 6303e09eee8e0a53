"""Structure diagnostics: energies, relative energy, weak-form martingale
residuals with predicted variations, mollification defect estimates, and the
continuity-equation maximum principle.

The weak-form residuals use left-endpoint quadrature for every time integral,
matching the Euler-Maruyama update exactly: along an "ito-em" trajectory the
residual path reproduces the accumulated Ito sums to round-off, so its
statistics probe the noise model and nothing else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import fluid
from .fields import (
    SPECTRAL,
    FieldError,
    GridSpec,
    ScalarField,
    VectorField,
    gradient_arrays,
    integrate_array,
)
from .fluid import FluidParams, State
from .noise import NoiseCoefficients, correction_drift_array
from .stepping import TrajectoryRecord


class DiagnosticsError(ValueError):
    pass


# --- energies ---------------------------------------------------------------


def total_energy(state: State, params: FluidParams) -> float:
    """Kinetic plus pressure-potential energy, integral of |m|^2/(2 rho) + P(rho)."""
    rho = state.rho.values
    if float(rho.min()) < params.density_floor:
        raise DiagnosticsError("density below floor in energy evaluation")
    m = state.momentum.components
    kinetic = 0.5 * np.sum(m * m, axis=0) / rho
    potential = fluid.pressure_potential(rho, params)
    return integrate_array(kinetic + potential, state.grid)


def total_energy_with_defect(state: State, defect: "DefectEstimate | None", params: FluidParams) -> float:
    """Base energy plus (1/2) tr of the convective defect plus 1/(gamma-1) of the pressure defect."""
    out = total_energy(state, params)
    if defect is not None:
        out += 0.5 * defect.conv_trace_integral()
        out += defect.press_integral() / (params.gamma - 1.0)
    return out


@dataclass
class EnergyLedger:
    """Per-step energy series of one run, with the accumulated dissipation."""

    times: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    mass: np.ndarray
    momentum: np.ndarray  # (n_samples, dim)

    def __post_init__(self):
        if np.any(np.diff(self.dissipation) < 0.0):
            raise DiagnosticsError("accumulated dissipation must be non-decreasing")

    @property
    def initial_energy(self) -> float:
        return float(self.energy[0])

    def budget_residual(self) -> np.ndarray:
        """energy(t) + dissipation(t) - energy(0); <= O(dt) for viscous runs."""
        return self.energy + self.dissipation - self.energy[0]

    @classmethod
    def from_record(cls, record: TrajectoryRecord) -> "EnergyLedger":
        dim = record.grid.dim
        momentum = np.stack([record.series[f"momentum_{'xyz'[i]}"] for i in range(dim)], axis=1)
        return cls(times=record.series["time"], energy=record.series["energy"],
                   dissipation=record.series["dissipation_cum"],
                   mass=record.series["mass"], momentum=momentum)


# --- relative energy --------------------------------------------------------


def _bregman_pressure(rho: np.ndarray, r: np.ndarray, params: FluidParams) -> np.ndarray:
    return (fluid.pressure_potential(rho, params) - fluid.pressure_potential(r, params)
            - fluid.pressure_potential_prime(r, params) * (rho - r))


def relative_energy(state: State, r: ScalarField, v: VectorField,
                    defect: "DefectEstimate | None", params: FluidParams) -> float:
    """Bregman-type distance between the state and a smooth reference (r, v)."""
    if r.grid != state.grid or v.grid != state.grid:
        raise DiagnosticsError("reference fields live on a different grid")
    rho = state.rho.values
    if float(r.values.min()) < params.density_floor:
        raise DiagnosticsError("reference density below floor")
    u = fluid.velocity_arrays(rho, state.momentum.components, params)
    w = u - v.components
    kinetic = 0.5 * integrate_array(rho * np.sum(w * w, axis=0), state.grid)
    bregman = integrate_array(_bregman_pressure(rho, r.values, params), state.grid)
    out = kinetic + bregman
    if defect is not None:
        out += 0.5 * defect.conv_trace_integral()
        out += defect.press_integral() / (params.gamma - 1.0)
    return out


def relative_energy_rate(state: State, r: ScalarField, v: VectorField,
                         defect: "DefectEstimate | None", params: FluidParams) -> float:
    """Growth-rate functional bounded by gronwall_constant(v) times the relative energy.

    Sum of the velocity-gradient cross term, the Bregman pressure term, and
    the defect contractions -int grad v : R_conv - int div v R_press.
    """
    if r.grid != state.grid or v.grid != state.grid:
        raise DiagnosticsError("reference fields live on a different grid")
    rho = state.rho.values
    u = fluid.velocity_arrays(rho, state.momentum.components, params)
    w = u - v.components
    grad_v = fluid.velocity_gradient_arrays(v.components, state.grid, SPECTRAL)
    # (u - v) . grad v . (v - u) = - w_i d_i(v_j) w_j
    cross = -integrate_array(rho * np.einsum("i...,ij...,j...->...", w, grad_v, w), state.grid)
    bregman = integrate_array(_bregman_pressure(rho, r.values, params), state.grid)
    out = cross + bregman
    if defect is not None:
        div_v = np.einsum("ii...->...", grad_v)
        out -= integrate_array(np.einsum("ij...,ij...->...", grad_v, defect.conv), state.grid)
        out -= integrate_array(div_v * defect.press, state.grid)
    return out


def gronwall_constant(v: VectorField, params: FluidParams) -> float:
    """c with |rate| <= c * relative_energy, from the implemented term bounds."""
    grad_v = fluid.velocity_gradient_arrays(v.components, v.grid, SPECTRAL)
    frobenius_max = float(np.sqrt(np.einsum("ij...,ij...->...", grad_v, grad_v)).max())
    div_max = float(np.abs(np.einsum("ii...->...", grad_v)).max())
    return max(1.0, 2.0 * frobenius_max, (params.gamma - 1.0) * div_max)


@dataclass
class RelativeEnergyLedger:
    """Relative-energy series of a weak-strong comparison run."""

    times: np.ndarray
    values: np.ndarray
    rates: np.ndarray
    gronwall: float  # sup over the run of the per-time constant
    guard_ok: np.ndarray  # False past a reference guard/floor trip
    initial_offset: float  # the epsilon in the envelope (K(0) + eps) e^{ct}

    def envelope(self) -> np.ndarray:
        return (self.values[0] + self.initial_offset) * np.exp(self.gronwall * self.times)


# --- weak-form martingale probes ---------------------------------------------


@dataclass
class MartingaleProbe:
    """Weak-form residual path of one trajectory against one test function.

    residual[n] is the tested increment minus all drift time-integrals up to
    sample n (zero at n = 0); for the exact solution it is the martingale
    part.  noise_weights[j, k] holds the per-step integrand of the stochastic
    integral, from which the predicted quadratic and cross variations follow.
    """

    kind: str
    times: np.ndarray
    residual: np.ndarray
    noise_weights: np.ndarray  # (n_steps, K)
    step_dts: np.ndarray

    def __post_init__(self):
        if abs(float(self.residual[0])) > 0.0:
            raise DiagnosticsError("residual path must start at zero")

    def predicted_quadratic_variation(self, half: bool = False) -> np.ndarray:
        """Ito-isometry prediction sum_k int (weight_k)^2 ds; `half` applies the
        alternative 1/2 normalization for comparison reports."""
        rates = np.sum(self.noise_weights**2, axis=1)
        out = np.concatenate([[0.0], np.cumsum(self.step_dts * rates)])
        return 0.5 * out if half else out

    def empirical_quadratic_variation(self) -> np.ndarray:
        return empirical_quadratic_variation(self.residual)


def empirical_quadratic_variation(path_values: np.ndarray) -> np.ndarray:
    """Cumulative sum of squared increments of a sampled path."""
    values = np.asarray(path_values, dtype=np.float64)
    if values.size < 2:
        raise DiagnosticsError("need at least two samples for a quadratic variation")
    return np.concatenate([[0.0], np.cumsum(np.diff(values) ** 2)])


def empirical_cross_variation(path_a: np.ndarray, path_b: np.ndarray) -> np.ndarray:
    """Cumulative sum of increment products of two paths on the same samples."""
    a = np.asarray(path_a, dtype=np.float64)
    b = np.asarray(path_b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise DiagnosticsError("cross variation needs two equally sampled paths")
    return np.concatenate([[0.0], np.cumsum(np.diff(a) * np.diff(b))])


def predicted_cross_variation(probe_a: MartingaleProbe, probe_b: MartingaleProbe,
                              half: bool = False) -> np.ndarray:
    """sum_k int (weight_a_k weight_b_k) ds along the shared trajectory."""
    if probe_a.noise_weights.shape != probe_b.noise_weights.shape:
        raise DiagnosticsError("probes come from different trajectories")
    rates = np.sum(probe_a.noise_weights * probe_b.noise_weights, axis=1)
    out = np.concatenate([[0.0], np.cumsum(probe_a.step_dts * rates)])
    return 0.5 * out if half else out


def _full_rate_states(record: TrajectoryRecord) -> list[State]:
    if len(record.states) != len(record.step_dts) + 1:
        raise DiagnosticsError(
            "martingale probes need a stride-1 trajectory record "
            f"({len(record.states)} states for {len(record.step_dts)} steps)")
    return record.states


def weak_residual_continuity(record: TrajectoryRecord, phi: ScalarField,
                             noise: NoiseCoefficients | None,
                             params: FluidParams) -> MartingaleProbe:
    """Residual of the tested continuity equation along a recorded trajectory."""
    grid = record.grid
    if phi.grid != grid:
        raise DiagnosticsError("test function grid mismatch")
    states = _full_rate_states(record)
    grad_phi = gradient_arrays(phi.values, grid, SPECTRAL)
    count = noise.count if noise is not None else 0
    if count:
        corr_phi = correction_drift_array(phi.values, noise, SPECTRAL)
        weight_fields = np.stack([
            np.einsum("d...,d...->...", noise.sigmas[k], grad_phi) for k in range(count)])
    n_steps = len(record.step_dts)
    vol = grid.cell_volume

    tested0 = integrate_array(states[0].rho.values * phi.values, grid)
    residual = np.zeros(n_steps + 1)
    weights = np.zeros((n_steps, max(count, 1)))[:, :count]
    drift = 0.0
    for j in range(n_steps):
        rho = states[j].rho.values
        m = states[j].momentum.components
        dt = record.step_dts[j]
        flux = vol * float(np.sum(np.einsum("d...,d...->...", m, grad_phi)))
        corr = vol * float(np.sum(rho * corr_phi)) if count else 0.0
        drift += dt * (flux + corr)
        if count:
            weights[j] = vol * np.sum(weight_fields * rho, axis=tuple(range(1, grid.dim + 1)))
        tested = integrate_array(states[j + 1].rho.values * phi.values, grid)
        residual[j + 1] = (tested - tested0) - drift
    return MartingaleProbe(kind="continuity", times=record.sample_times.copy(),
                           residual=residual, noise_weights=weights,
                           step_dts=record.step_dts.copy())


def weak_residual_momentum(record: TrajectoryRecord, phi_vec: VectorField,
                           noise: NoiseCoefficients | None, params: FluidParams,
                           defect: "DefectEstimate | None" = None) -> MartingaleProbe:
    """Residual of the tested momentum equation along a recorded trajectory.

    Includes the viscous-stress integral whenever params carries viscosity,
    and the defect contractions when a defect estimate is supplied (resolved
    single-trajectory runs pass None).
    """
    grid = record.grid
    if phi_vec.grid != grid:
        raise DiagnosticsError("test function grid mismatch")
    states = _full_rate_states(record)
    dim = grid.dim
    vol = grid.cell_volume
    grad_phi = fluid.velocity_gradient_arrays(phi_vec.components, grid, SPECTRAL)  # [i, j] = d_i phi_j
    div_phi = np.einsum("ii...->...", grad_phi)
    count = noise.count if noise is not None else 0
    if count:
        corr_phi = np.stack([
            correction_drift_array(phi_vec.components[i], noise, SPECTRAL) for i in range(dim)])
        # per-mode field sigma_k . grad phi_i, flattened to (K, dim * cells)
        advected_phi = np.stack([
            np.stack([np.einsum("d...,d...->...", noise.sigmas[k], grad_phi[:, i])
                      for i in range(dim)]) for k in range(count)]).reshape(count, -1)
    defect_rate = 0.0
    if defect is not None:
        defect_rate = (integrate_array(np.einsum("ij...,ij...->...", grad_phi, defect.conv), grid)
                       + integrate_array(div_phi * defect.press, grid))

    tested0 = vol * float(np.sum(states[0].momentum.components * phi_vec.components))
    n_steps = len(record.step_dts)
    residual = np.zeros(n_steps + 1)
    weights = np.zeros((n_steps, max(count, 1)))[:, :count]
    drift = 0.0
    for j in range(n_steps):
        rho = states[j].rho.values
        m = states[j].momentum.components
        dt = record.step_dts[j]
        u = fluid.velocity_arrays(rho, m, params)
        # (m x u) : grad phi with the contraction m_i u_j d_j phi_i
        conv = vol * float(np.sum(np.einsum("i...,j...,ji...->...", m, u, grad_phi)))
        press = vol * float(np.sum(fluid.pressure_array(rho, params) * div_phi))
        rate = conv + press + defect_rate
        if params.viscous:
            grad_u = fluid.velocity_gradient_arrays(u, grid, SPECTRAL)
            stress = fluid.viscous_stress_arrays(grad_u, params)
            rate -= vol * float(np.sum(stress * grad_phi))
        if count:
            corr = vol * float(np.sum(m * corr_phi))
            rate += corr
            weights[j] = vol * (advected_phi @ m.reshape(-1))
        drift += dt * rate
        tested = vol * float(np.sum(states[j + 1].momentum.components * phi_vec.components))
        residual[j + 1] = (tested - tested0) - drift
    return MartingaleProbe(kind="momentum", times=record.sample_times.copy(),
                           residual=residual, noise_weights=weights,
                           step_dts=record.step_dts.copy())


# --- defect estimates --------------------------------------------------------


@lru_cache(maxsize=16)
def _mollifier_transform(shape: tuple[int, ...], scale: float) -> np.ndarray:
    """rfftn of the periodized Gaussian kernel, normalized to unit mass.

    The kernel is evaluated in real space (sum over periodic images), so its
    grid weights are strictly positive and mollification is a convex average;
    the Jensen signs of the defect estimates then hold to round-off.
    """
    axes = []
    length = 2.0 * math.pi
    images = int(math.ceil(6.0 * scale / length)) + 1
    for n in shape:
        x = np.arange(n) * (length / n)
        acc = np.zeros(n)
        for j in range(-images, images + 1):
            acc += np.exp(-((x + length * j) ** 2) / (2.0 * scale**2))
        axes.append(acc)
    kernel = axes[0]
    for a in axes[1:]:
        kernel = np.multiply.outer(kernel, a)
    kernel /= kernel.sum()
    out = np.fft.rfftn(kernel)
    out.flags.writeable = False
    return out


def mollify_array(values: np.ndarray, grid: GridSpec, scale: float) -> np.ndarray:
    """Periodic convolution with the positive Gaussian kernel of width `scale`."""
    if scale < max(grid.spacing):
        raise DiagnosticsError(
            f"mollification scale {scale:.3e} below grid spacing {max(grid.spacing):.3e}")
    kernel_hat = _mollifier_transform(grid.shape, float(scale))
    return np.fft.irfftn(np.fft.rfftn(values) * kernel_hat, s=grid.shape, axes=tuple(range(len(grid.shape))))


@dataclass(frozen=True)
class DefectEstimate:
    """Mollification (and optionally ensemble) defects of the nonlinear fluxes."""

    grid: GridSpec
    scale: float
    conv: np.ndarray  # (dim, dim, *shape), symmetric PSD up to round-off
    press: np.ndarray  # (*shape), non-negative up to round-off

    def conv_trace_integral(self) -> float:
        return integrate_array(np.einsum("ii...->...", self.conv), self.grid)

    def press_integral(self) -> float:
        return integrate_array(self.press, self.grid)

    def min_press(self) -> float:
        return float(self.press.min())

    def min_conv_eigenvalue(self) -> float:
        """Smallest eigenvalue of the convective defect over all cells."""
        d = self.grid.dim
        if d == 2:
            a = self.conv[0, 0]
            b = 0.5 * (self.conv[0, 1] + self.conv[1, 0])
            c = self.conv[1, 1]
            lam = 0.5 * (a + c) - np.sqrt((0.5 * (a - c)) ** 2 + b * b)
            return float(lam.min())
        mats = np.moveaxis(self.conv.reshape(d, d, -1), -1, 0)
        mats = 0.5 * (mats + np.swapaxes(mats, 1, 2))
        return float(np.linalg.eigvalsh(mats)[:, 0].min())


def defect_estimate(states: State | list[State], scale: float, params: FluidParams) -> DefectEstimate:
    """Reynolds-type and pressure defects at mollification scale `scale`.

    Given several states (an ensemble at one time), raw moments are averaged
    across realizations before differencing.
    """
    if isinstance(states, State):
        states = [states]
    if not states:
        raise DiagnosticsError("need at least one state")
    grid = states[0].grid
    dim = grid.dim

    conv_raw = np.zeros((dim, dim, *grid.shape))
    press_raw = np.zeros(grid.shape)
    rho_bar = np.zeros(grid.shape)
    m_bar = np.zeros((dim, *grid.shape))
    for st in states:
        if st.grid != grid:
            raise DiagnosticsError("ensemble states live on different grids")
        rho = st.rho.values
        m = st.momentum.components
        conv_raw += np.einsum("i...,j...->ij...", m, m) / rho
        press_raw += fluid.pressure_array(rho, params)
        rho_bar += rho
        m_bar += m
    n = float(len(states))
    conv_raw /= n
    press_raw /= n
    rho_bar /= n
    m_bar /= n

    smooth = lambda arr: mollify_array(arr, grid, scale)
    rho_s = smooth(rho_bar)
    m_s = np.stack([smooth(m_bar[i]) for i in range(dim)])
    conv = np.empty_like(conv_raw)
    for i in range(dim):
        for j in range(dim):
            conv[i, j] = smooth(conv_raw[i, j]) - m_s[i] * m_s[j] / rho_s
    press = smooth(press_raw) - fluid.pressure_array(rho_s, params)
    return DefectEstimate(grid=grid, scale=float(scale), conv=conv, press=press)


# --- maximum principle --------------------------------------------------------


@dataclass
class MaxPrincipleReport:
    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    max_violation: float
    violated: bool


def max_principle_bounds(record: TrajectoryRecord, tolerance: float = 1e-6) -> MaxPrincipleReport:
    """Exponential density envelopes r_min(0) e^{-I(t)} <= r <= r_max(0) e^{+I(t)}.

    I(t) accumulates ||div u||_inf along the recorded trajectory; solenoidal
    transport noise does not enter.  Violations beyond `tolerance` (relative
    to the initial bounds) raise the flag.
    """
    div_sup = record.series["div_sup"]
    times = record.series["time"]
    dts = np.diff(times)
    integral = np.concatenate([[0.0], np.cumsum(dts * div_sup[:-1])])
    lower = record.series["rho_min"][0] * np.exp(-integral)
    upper = record.series["rho_max"][0] * np.exp(integral)
    below = lower - record.series["rho_min"]
    above = record.series["rho_max"] - upper
    max_violation = float(np.maximum(np.maximum(below, above), 0.0).max())
    scale = max(record.series["rho_max"][0], 1.0)
    return MaxPrincipleReport(times=times, lower=lower, upper=upper,
                              max_violation=max_violation,
                              violated=bool(max_violation > tolerance * scale))
