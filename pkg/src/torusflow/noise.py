"""Solenoidal noise coefficient fields, Wiener increments, and correction drifts.

Each coefficient field sigma_k is built from a single Fourier mode so that it
is divergence-free by construction (a rotated gradient in 2D, a curl in 3D),
not merely to truncation error.  Wiener increments come from a counter-based
generator keyed on (seed, realization, step), so any increment can be
regenerated out of order and ensembles are reproducible under any scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import (
    SPECTRAL,
    FieldError,
    GridSpec,
    ScalarField,
    VectorField,
    divergence_arrays,
    gradient_arrays,
)


class NoiseError(ValueError):
    """Invalid noise construction arguments."""


@dataclass(frozen=True)
class NoiseMode:
    """Metadata for one coefficient field: wavevector, polarization, amplitude, phase."""

    wavevector: tuple[int, ...]
    amplitude: float
    phase: float
    axis: int  # curl axis in 3D; ignored in 2D


@dataclass(frozen=True)
class NoiseCoefficients:
    """The K solenoidal fields sigma_k realized on a grid, with their sup-norms."""

    grid: GridSpec
    sigmas: np.ndarray  # (K, dim, *shape); empty (0, dim, *shape) for K = 0
    modes: tuple[NoiseMode, ...]
    sup_norms: tuple[float, ...]

    @property
    def count(self) -> int:
        return len(self.modes)

    @property
    def max_sup_norm(self) -> float:
        return max(self.sup_norms, default=0.0)

    def as_vector_field(self, k: int) -> VectorField:
        return VectorField(self.grid, self.sigmas[k])


def _mode_profile(grid: GridSpec, wavevector, phase: float) -> tuple[np.ndarray, np.ndarray]:
    coords = grid.coordinates()
    arg = sum(float(k) * x for k, x in zip(wavevector, coords)) + phase
    return np.sin(arg), np.cos(arg)


def solenoidal_mode_field(grid: GridSpec, mode: NoiseMode) -> np.ndarray:
    """Realize one divergence-free mode on the grid.

    2D: amplitude * perp-gradient of sin(xi.x + theta) = amplitude * (-xi_2, xi_1) cos(...).
    3D: amplitude * curl(sin(xi.x + theta) e_axis).
    """
    xi = mode.wavevector
    _, cos = _mode_profile(grid, xi, mode.phase)
    if grid.dim == 2:
        comps = np.stack([-float(xi[1]) * cos, float(xi[0]) * cos])
    else:
        a = mode.axis
        comps = np.zeros((3, *grid.shape))
        # curl(psi e_a)_i = eps_{ija} d_j psi
        for i in range(3):
            for j in range(3):
                eps = _levi_civita(i, j, a)
                if eps:
                    comps[i] += eps * float(xi[j]) * cos
    return mode.amplitude * comps


def _levi_civita(i: int, j: int, k: int) -> int:
    if (i, j, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        return 1
    if (i, j, k) in ((0, 2, 1), (2, 1, 0), (1, 0, 2)):
        return -1
    return 0


def build_solenoidal_library(
    grid: GridSpec,
    count: int,
    max_wavenumber: int,
    amplitude: float = 0.05,
    decay: float = 2.0,
    seed: int = 0,
    modes: tuple[NoiseMode, ...] | None = None,
) -> NoiseCoefficients:
    """Construct K solenoidal coefficient fields.

    Wavevectors are drawn without replacement from the integer lattice with
    sup-norm <= max_wavenumber, with random phases; per-mode amplitudes follow
    amplitude * |xi|^(-decay).  Passing explicit modes bypasses the draw.
    """
    if count < 0:
        raise NoiseError(f"mode count must be >= 0, got {count}")
    if max_wavenumber > grid.max_resolved_wavenumber():
        raise NoiseError(
            f"max wavenumber {max_wavenumber} beyond resolved range "
            f"{grid.max_resolved_wavenumber()} for grid {grid.shape}"
        )
    if modes is None:
        modes = _draw_modes(grid.dim, count, max_wavenumber, amplitude, decay, seed)
    else:
        modes = tuple(modes)
        for m in modes:
            if max(abs(c) for c in m.wavevector) > grid.max_resolved_wavenumber():
                raise NoiseError(f"mode {m.wavevector} beyond Nyquist for grid {grid.shape}")
    sigmas = np.zeros((len(modes), grid.dim, *grid.shape))
    for k, m in enumerate(modes):
        sigmas[k] = solenoidal_mode_field(grid, m)
    sup_norms = tuple(
        float(np.sqrt(np.sum(sigmas[k] ** 2, axis=0)).max()) for k in range(len(modes))
    )
    sigmas.flags.writeable = False
    return NoiseCoefficients(grid=grid, sigmas=sigmas, modes=modes, sup_norms=sup_norms)


def _draw_modes(dim, count, max_wavenumber, amplitude, decay, seed) -> tuple[NoiseMode, ...]:
    if count == 0:
        return ()
    if max_wavenumber < 1:
        raise NoiseError("max_wavenumber must be >= 1 when count > 0")
    lattice = []
    ranges = [range(-max_wavenumber, max_wavenumber + 1)] * dim
    grids = np.meshgrid(*[np.array(r) for r in ranges], indexing="ij")
    for idx in range(grids[0].size):
        vec = tuple(int(g.flat[idx]) for g in grids)
        if any(vec):
            lattice.append(vec)
    if count > len(lattice):
        raise NoiseError(f"cannot draw {count} distinct modes from {len(lattice)} lattice points")
    rng = np.random.Generator(np.random.Philox(key=seed))
    chosen = rng.choice(len(lattice), size=count, replace=False)
    modes = []
    for idx in chosen:
        xi = lattice[int(idx)]
        norm = math.sqrt(sum(c * c for c in xi))
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        axis = int(np.argmin([abs(c) for c in xi])) if dim == 3 else 0
        modes.append(NoiseMode(xi, amplitude * norm ** (-decay), phase, axis))
    return tuple(modes)


# --- Wiener increments -----------------------------------------------------


@dataclass(frozen=True)
class WienerPath:
    """Lazy K-dimensional Wiener increments on a uniform base step.

    The increment vector at step j is a pure function of
    (seed, realization, j); schemes that step at an integer multiple of
    dt_base consume consecutive base increments summed, so one underlying
    path is shared consistently across time resolutions.
    """

    seed: int
    dt_base: float
    count: int
    realization: int = 0

    def __post_init__(self):
        if self.dt_base <= 0.0:
            raise NoiseError(f"dt_base must be positive, got {self.dt_base}")
        if self.count < 0:
            raise NoiseError(f"process count must be >= 0, got {self.count}")

    def increments(self, step: int) -> np.ndarray:
        """K independent N(0, dt_base) variates for base step index `step`."""
        if self.count == 0:
            return np.zeros(0)
        gen = np.random.Generator(
            np.random.Philox(key=self.seed, counter=[0, 0, self.realization, step])
        )
        return gen.standard_normal(self.count) * math.sqrt(self.dt_base)

    def window(self, start: int, length: int) -> np.ndarray:
        """Sum of base increments over steps [start, start+length)."""
        out = np.zeros(self.count)
        for j in range(start, start + length):
            out += self.increments(j)
        return out


# --- Ito-Stratonovich correction drifts ------------------------------------


def correction_drift_array(values: np.ndarray, noise: NoiseCoefficients, method: str = SPECTRAL) -> np.ndarray:
    """(1/2) sum_k div(sigma_k (sigma_k . grad f)) on a raw scalar array.

    The flux sum_k sigma_k (sigma_k . grad f) is accumulated pointwise before
    the single outer divergence; by linearity this equals the per-mode sum of
    divergences while costing one transform instead of K.
    """
    grid = noise.grid
    if values.shape != grid.shape:
        raise FieldError(f"field shape {values.shape} does not match noise grid {grid.shape}")
    if noise.count == 0:
        return np.zeros(grid.shape)
    grad = gradient_arrays(values, grid, method)
    flux = np.zeros((grid.dim, *grid.shape))
    for k in range(noise.count):
        sigma = noise.sigmas[k]
        along = np.einsum("i...,i...->...", sigma, grad)
        flux += sigma * along
    return 0.5 * divergence_arrays(flux, grid, method)


def ito_correction_drift_scalar(f: ScalarField, noise: NoiseCoefficients, method: str = SPECTRAL) -> ScalarField:
    """Correction drift converting Stratonovich transport of a scalar to Ito form."""
    if f.grid != noise.grid:
        raise FieldError("field and noise live on different grids")
    return ScalarField(f.grid, correction_drift_array(f.values, noise, method))


def ito_correction_drift_vector(v: VectorField, noise: NoiseCoefficients, method: str = SPECTRAL) -> VectorField:
    """Componentwise correction drift for a vector field (momentum slot)."""
    if v.grid != noise.grid:
        raise FieldError("field and noise live on different grids")
    comps = np.stack(
        [correction_drift_array(v.components[i], noise, method) for i in range(v.grid.dim)]
    )
    return VectorField(v.grid, comps)
