"""Periodic-grid fields and discrete calculus on the flat torus [0, 2*pi)^N.

Scalar, vector and tensor fields live on a uniform grid with N in {2, 3}.
Derivatives come in two backends: "spectral" (FFT, exact on resolved
trigonometric polynomials) and "central" (2nd-order central differences,
periodic wraparound).  Both backends are antisymmetric as matrices, so
discrete integration by parts holds to round-off; every conservation
statement downstream leans on that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

DOMAIN_LENGTH = 2.0 * math.pi

SPECTRAL = "spectral"
CENTRAL = "central-difference"
_METHODS = (SPECTRAL, CENTRAL)


class FieldError(ValueError):
    """Invalid field data (non-finite entries, grid mismatch, bad arguments)."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on [0, 2*pi)^N, N = 2 or 3."""

    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) not in (2, 3):
            raise FieldError(f"grid dimension must be 2 or 3, got {len(shape)}")
        if any(n < 8 for n in shape):
            raise FieldError(f"all resolutions must be >= 8, got {shape}")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(DOMAIN_LENGTH / n for n in self.shape)

    @property
    def min_spacing(self) -> float:
        return DOMAIN_LENGTH / max(self.shape)

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Meshgrid of cell coordinates, ij indexing."""
        return _coordinates(self.shape)

    def max_resolved_wavenumber(self) -> int:
        """Largest integer mode k with both +k and -k representable on every axis."""
        return min(self.shape) // 2 - 1


def _check_values(values, grid: GridSpec, what: str):
    if values.shape != grid.shape:
        raise FieldError(f"{what} has shape {values.shape}, grid expects {grid.shape}")
    if not np.all(np.isfinite(values)):
        raise FieldError(f"{what} contains non-finite entries")


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        _check_values(values, self.grid, "scalar field")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class VectorField:
    """dim component fields, stacked as one array of shape (dim, *grid.shape)."""

    grid: GridSpec
    components: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=np.float64)
        if comps.shape != (self.grid.dim, *self.grid.shape):
            raise FieldError(
                f"vector field has shape {comps.shape}, expected {(self.grid.dim, *self.grid.shape)}"
            )
        if not np.all(np.isfinite(comps)):
            raise FieldError("vector field contains non-finite entries")
        comps = comps.copy()
        comps.flags.writeable = False
        object.__setattr__(self, "components", comps)

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.components[i])


@dataclass(frozen=True)
class TensorField:
    """dim x dim component fields, shape (dim, dim, *grid.shape); T[i, j] ~ i-th row, j-th column."""

    grid: GridSpec
    components: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=np.float64)
        d = self.grid.dim
        if comps.shape != (d, d, *self.grid.shape):
            raise FieldError(
                f"tensor field has shape {comps.shape}, expected {(d, d, *self.grid.shape)}"
            )
        if not np.all(np.isfinite(comps)):
            raise FieldError("tensor field contains non-finite entries")
        comps = comps.copy()
        comps.flags.writeable = False
        object.__setattr__(self, "components", comps)


# --- cached grid tables ---------------------------------------------------


@lru_cache(maxsize=32)
def _coordinates(shape: tuple[int, ...]) -> tuple[np.ndarray, ...]:
    axes = [np.arange(n) * (DOMAIN_LENGTH / n) for n in shape]
    grids = np.meshgrid(*axes, indexing="ij")
    for g in grids:
        g.flags.writeable = False
    return tuple(grids)


@lru_cache(maxsize=32)
def _rfft_derivative_symbols(shape: tuple[int, ...]) -> tuple[np.ndarray, ...]:
    """Per-axis multipliers i*k on the rfftn layout, Nyquist mode zeroed.

    Zeroing the Nyquist column keeps each derivative matrix real and exactly
    antisymmetric, which is what makes discrete integration by parts exact.
    """
    dim = len(shape)
    symbols = []
    for axis in range(dim):
        n = shape[axis]
        if axis == dim - 1:
            k = np.arange(n // 2 + 1, dtype=np.float64)
        else:
            k = np.fft.fftfreq(n) * n
        if n % 2 == 0:
            k = k.copy()
            k[np.abs(k) == n // 2] = 0.0
        shape_bcast = [1] * dim
        shape_bcast[axis] = k.size
        sym = (1j * k).reshape(shape_bcast)
        sym.flags.writeable = False
        symbols.append(sym)
    return tuple(symbols)


@lru_cache(maxsize=32)
def _full_mode_norms_squared(shape: tuple[int, ...]) -> np.ndarray:
    """|xi|^2 over the full fftn lattice (integer wavevectors)."""
    axes = [np.fft.fftfreq(n) * n for n in shape]
    grids = np.meshgrid(*axes, indexing="ij")
    out = sum(g * g for g in grids)
    out.flags.writeable = False
    return out


def _spectral_partial(field_hat: np.ndarray, shape: tuple[int, ...], axis: int) -> np.ndarray:
    sym = _rfft_derivative_symbols(shape)[axis]
    return np.fft.irfftn(field_hat * sym, s=shape, axes=tuple(range(len(shape))))


def gradient_arrays(values: np.ndarray, grid: GridSpec, method: str = SPECTRAL) -> np.ndarray:
    """Partial derivatives of a raw array; shape (dim, *grid.shape)."""
    if method == SPECTRAL:
        fh = np.fft.rfftn(values)
        return np.stack([_spectral_partial(fh, grid.shape, ax) for ax in range(grid.dim)])
    if method == CENTRAL:
        out = np.empty((grid.dim, *grid.shape))
        for ax, h in enumerate(grid.spacing):
            out[ax] = (np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax)) / (2.0 * h)
        return out
    raise FieldError(f"unknown derivative method {method!r}; expected one of {_METHODS}")


def divergence_arrays(components: np.ndarray, grid: GridSpec, method: str = SPECTRAL) -> np.ndarray:
    """Divergence of raw stacked components; returns array of grid shape."""
    if method == SPECTRAL:
        symbols = _rfft_derivative_symbols(grid.shape)
        acc = None
        for ax in range(grid.dim):
            term = np.fft.rfftn(components[ax]) * symbols[ax]
            acc = term if acc is None else acc + term
        return np.fft.irfftn(acc, s=grid.shape, axes=tuple(range(len(grid.shape))))
    if method == CENTRAL:
        out = np.zeros(grid.shape)
        for ax, h in enumerate(grid.spacing):
            out += (np.roll(components[ax], -1, axis=ax) - np.roll(components[ax], 1, axis=ax)) / (2.0 * h)
        return out
    raise FieldError(f"unknown derivative method {method!r}; expected one of {_METHODS}")


def gradient(f: ScalarField, method: str = SPECTRAL) -> VectorField:
    """Discrete gradient of a scalar field."""
    return VectorField(f.grid, gradient_arrays(f.values, f.grid, method))


def divergence(v: VectorField, method: str = SPECTRAL) -> ScalarField:
    """Discrete divergence of a vector field."""
    return ScalarField(v.grid, divergence_arrays(v.components, v.grid, method))


def tensor_divergence_arrays(components: np.ndarray, grid: GridSpec, method: str = SPECTRAL) -> np.ndarray:
    """Row-wise divergence of a tensor: out_i = sum_j d_j T[i, j]."""
    return np.stack([divergence_arrays(components[i], grid, method) for i in range(grid.dim)])


def tensor_divergence(t: TensorField, method: str = SPECTRAL) -> VectorField:
    return VectorField(t.grid, tensor_divergence_arrays(t.components, t.grid, method))


def integrate_array(values: np.ndarray, grid: GridSpec) -> float:
    return grid.cell_volume * float(np.sum(values))


def integrate(f: ScalarField) -> float:
    """Integral over the torus; midpoint rule, exact for resolved trig polynomials."""
    return integrate_array(f.values, f.grid)


def negative_sobolev_norm(f: ScalarField, k: int) -> float:
    """Spectral-multiplier norm (sum_xi (1+|xi|^2)^{-k} |fhat(xi)|^2)^{1/2}.

    fhat is normalised so that k = 0 reproduces the L^2 norm
    integrate(f^2)^{1/2}.
    """
    if k < 1:
        raise FieldError(f"Sobolev order k must be >= 1, got {k}")
    return _sobolev_norm_array(f.values, f.grid, k)


def _sobolev_norm_array(values: np.ndarray, grid: GridSpec, k: int) -> float:
    coeffs = np.fft.fftn(values) / grid.cell_count
    weights = (1.0 + _full_mode_norms_squared(grid.shape)) ** (-float(k))
    total = float(np.sum(weights * np.abs(coeffs) ** 2))
    return math.sqrt((DOMAIN_LENGTH ** grid.dim) * total)


def low_pass_arrays(values: np.ndarray, grid: GridSpec, max_mode: int) -> np.ndarray:
    """Zero every Fourier mode with any |k_axis| > max_mode."""
    fh = np.fft.rfftn(values)
    dim = grid.dim
    for axis in range(dim):
        n = grid.shape[axis]
        if axis == dim - 1:
            k = np.arange(n // 2 + 1)
        else:
            k = np.abs(np.fft.fftfreq(n) * n)
        mask_shape = [1] * dim
        mask_shape[axis] = k.size
        fh = fh * (k <= max_mode).reshape(mask_shape)
    return np.fft.irfftn(fh, s=grid.shape, axes=tuple(range(len(grid.shape))))
