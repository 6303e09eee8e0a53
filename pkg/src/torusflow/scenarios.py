"""Initial-condition recipes for the scenario runner."""

from __future__ import annotations

import numpy as np

from .fields import GridSpec
from .fluid import FluidParams, State, make_state


class ScenarioError(ValueError):
    pass


def constant_state(grid: GridSpec, rho0: float = 1.0) -> State:
    return make_state(grid, np.full(grid.shape, float(rho0)), np.zeros((grid.dim, *grid.shape)))


def acoustic_mode(grid: GridSpec, rho0: float = 1.0, epsilon: float = 0.05,
                  mode=(1, 0)) -> State:
    """Small density perturbation rho0 (1 + eps sin(xi . x)) at rest."""
    coords = grid.coordinates()
    arg = sum(float(k) * x for k, x in zip(mode, coords))
    rho = rho0 * (1.0 + float(epsilon) * np.sin(arg))
    return make_state(grid, rho, np.zeros((grid.dim, *grid.shape)))


def vortex_pair(grid: GridSpec, rho0: float = 1.0, amplitude: float = 0.4,
                rho_epsilon: float = 0.0) -> State:
    """Counter-rotating cellular vortices from a single-mode streamfunction,
    optionally overlaid with the acoustic perturbation eps (sin x1 + cos x2)."""
    coords = grid.coordinates()
    x, y = coords[0], coords[1]
    u = np.zeros((grid.dim, *grid.shape))
    u[0] = amplitude * np.sin(x) * np.cos(y)
    u[1] = -amplitude * np.cos(x) * np.sin(y)
    rho = rho0 * (1.0 + float(rho_epsilon) * (np.sin(x) + np.cos(y)))
    return make_state(grid, rho, rho * u)


def two_scale_oscillatory(grid: GridSpec, rho0: float = 1.0, amplitude: float = 1.0,
                          mode_number: int = 16) -> State:
    """Unit density with fast single-direction momentum oscillations; the
    mollification defect of this state has the closed-form sin^2 average."""
    if mode_number >= min(grid.shape) // 2:
        raise ScenarioError(f"oscillation mode {mode_number} unresolved on {grid.shape}")
    x = grid.coordinates()[0]
    m = np.zeros((grid.dim, *grid.shape))
    m[0] = amplitude * np.sin(mode_number * x)
    return make_state(grid, np.full(grid.shape, float(rho0)), m)


def from_file(grid: GridSpec, path: str) -> State:
    data = np.load(path)
    if "rho" not in data or "momentum" not in data:
        raise ScenarioError(f"{path} must contain arrays 'rho' and 'momentum'")
    return make_state(grid, data["rho"], data["momentum"])


_RECIPES = {
    "constant": constant_state,
    "acoustic-mode": acoustic_mode,
    "vortex-pair": vortex_pair,
    "two-scale-oscillatory": two_scale_oscillatory,
    "from-file": from_file,
}


def initial_state(grid: GridSpec, recipe: dict) -> State:
    """Build the initial state from a validated recipe table."""
    kind = recipe.get("kind")
    if kind not in _RECIPES:
        raise ScenarioError(f"unknown initial-condition kind {kind!r}; "
                            f"expected one of {sorted(_RECIPES)}")
    kwargs = {k: v for k, v in recipe.items() if k != "kind"}
    if "mode" in kwargs:
        kwargs["mode"] = tuple(kwargs["mode"])
    return _RECIPES[kind](grid, **kwargs)
