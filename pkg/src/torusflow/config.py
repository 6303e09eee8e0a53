"""Scenario configuration: a single TOML file, strictly validated.

Unknown keys anywhere are rejected, so a typo never silently falls back to a
default.  Every defaulted field is echoed into the resolved configuration
that the run manifest records.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SINGLE = "single"
ENSEMBLE = "ensemble"
SWEEP = "viscosity-sweep"
WEAK_STRONG = "weak-strong"
SCHEME_COMPARE = "scheme-compare"
_SCENARIOS = (SINGLE, ENSEMBLE, SWEEP, WEAK_STRONG, SCHEME_COMPARE)


class ConfigError(ValueError):
    """Invalid or unknown configuration content; maps to exit code 2."""


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


# schema: section -> key -> (checker, default); checker returns the resolved value
def _number(lo=None, hi=None, allow_inf=False):
    def check(x, path):
        if not _is_number(x):
            raise ConfigError(f"{path}: expected a number, got {x!r}")
        v = float(x)
        if not allow_inf and not math.isfinite(v):
            raise ConfigError(f"{path}: must be finite")
        if lo is not None and v < lo:
            raise ConfigError(f"{path}: must be >= {lo}, got {v}")
        if hi is not None and v > hi:
            raise ConfigError(f"{path}: must be <= {hi}, got {v}")
        return v
    return check


def _integer(lo=None, hi=None):
    def check(x, path):
        if not isinstance(x, int) or isinstance(x, bool):
            raise ConfigError(f"{path}: expected an integer, got {x!r}")
        if lo is not None and x < lo:
            raise ConfigError(f"{path}: must be >= {lo}, got {x}")
        if hi is not None and x > hi:
            raise ConfigError(f"{path}: must be <= {hi}, got {x}")
        return x
    return check


def _choice(*options):
    def check(x, path):
        if x not in options:
            raise ConfigError(f"{path}: expected one of {options}, got {x!r}")
        return x
    return check


def _int_list(min_len=1):
    def check(x, path):
        if not isinstance(x, list) or len(x) < min_len or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in x):
            raise ConfigError(f"{path}: expected a list of integers, got {x!r}")
        return list(x)
    return check


def _number_list(min_len=1, lo=None):
    def check(x, path):
        if not isinstance(x, list) or len(x) < min_len or not all(_is_number(v) for v in x):
            raise ConfigError(f"{path}: expected a list of numbers, got {x!r}")
        vals = [float(v) for v in x]
        if lo is not None and any(v < lo for v in vals):
            raise ConfigError(f"{path}: entries must be >= {lo}")
        return vals
    return check


def _string():
    def check(x, path):
        if not isinstance(x, str):
            raise ConfigError(f"{path}: expected a string, got {x!r}")
        return x
    return check


_TOP_SCHEMA = {
    "scenario": (_choice(*_SCENARIOS), SINGLE),
    "seed": (_integer(lo=0), 0),
    "horizon": (_number(lo=0.0), 0.5),
    "workers": (_integer(lo=1), 1),
}

_SECTION_SCHEMA = {
    "grid": {
        "dim": (_integer(lo=2, hi=3), 2),
        "resolution": (None, 64),  # int or list; handled specially
    },
    "fluid": {
        "gamma": (_number(lo=1.0), 1.4),
        "a": (_number(lo=0.0), 1.0),
        "mu": (_number(lo=0.0), 0.0),
        "lambda": (_number(lo=0.0), 0.0),
        "density_floor": (_number(lo=0.0), 1e-8),
    },
    "noise": {
        "modes": (_integer(lo=0), 0),
        "max_wavenumber": (_integer(lo=1), 2),
        "amplitude": (_number(lo=0.0), 0.05),
        "decay": (_number(), 2.0),
        # explicit mode control (overrides the seeded draw when non-empty)
        "wavevectors": (None, []),
        "phases": (_number_list(min_len=0), []),
    },
    "stepping": {
        "cfl": (_number(lo=0.0, hi=1.0), 0.4),
        "scheme": (_choice("ito-em", "strat-heun"), "ito-em"),
        "spatial": (_choice("central-spectral", "rusanov-fv"), "rusanov-fv"),
        "guard": (_number(lo=0.0, allow_inf=True), math.inf),
        "dt_base": (_number(lo=0.0), 1e-3),
        "substeps": (_integer(lo=0), 0),
        "stride": (_integer(lo=1), 1),
    },
    "initial": {
        "kind": (_choice("constant", "acoustic-mode", "vortex-pair",
                         "two-scale-oscillatory", "from-file"), "constant"),
        "rho0": (_number(lo=0.0), 1.0),
        "epsilon": (_number(), 0.05),
        "mode": (_int_list(), [1, 0]),
        "amplitude": (_number(), 0.4),
        "rho_epsilon": (_number(), 0.0),
        "mode_number": (_integer(lo=1), 16),
        "path": (_string(), ""),
    },
    "ensemble": {
        "paths": (_integer(lo=2), 64),
        "probe_scalar_mode": (_int_list(), [1, 0]),
        "probe_vector_mode": (_int_list(), [0, 1]),
    },
    "sweep": {
        "mu": (_number_list(lo=0.0), [0.1, 0.05, 0.025]),
        "lambda_ratio": (_number(lo=0.0), 1.0),
        "sobolev_order": (_integer(lo=1), 4),
    },
    "weak_strong": {
        "refinement": (_integer(lo=1), 4),
        "envelope_offset": (_number(lo=0.0), 1e-6),
    },
    "compare": {
        "substeps": (_int_list(), [4, 2, 1]),
    },
}

# keys of [initial] that each recipe actually consumes (besides "kind")
_INITIAL_KEYS = {
    "constant": {"rho0"},
    "acoustic-mode": {"rho0", "epsilon", "mode"},
    "vortex-pair": {"rho0", "amplitude", "rho_epsilon"},
    "two-scale-oscillatory": {"rho0", "amplitude", "mode_number"},
    "from-file": {"path"},
}


@dataclass
class ScenarioConfig:
    """Fully resolved configuration; `raw` is the echo written to manifests."""

    scenario: str
    seed: int
    horizon: float
    workers: int
    grid: dict
    fluid: dict
    noise: dict
    stepping: dict
    initial: dict
    ensemble: dict
    sweep: dict
    weak_strong: dict
    compare: dict

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "seed": self.seed, "horizon": self.horizon,
            "workers": self.workers, "grid": self.grid, "fluid": self.fluid,
            "noise": self.noise, "stepping": self.stepping, "initial": self.initial,
            "ensemble": self.ensemble, "sweep": self.sweep,
            "weak_strong": self.weak_strong, "compare": self.compare,
        }

    @property
    def resolution(self) -> tuple[int, ...]:
        return tuple(self.grid["resolution"])


def _resolve_resolution(value, dim: int, path: str) -> list[int]:
    if isinstance(value, int) and not isinstance(value, bool):
        value = [value] * dim
    if not isinstance(value, list) or len(value) != dim or not all(
            isinstance(v, int) and not isinstance(v, bool) and v >= 8 for v in value):
        raise ConfigError(f"{path}: expected an integer >= 8 or a list of {dim} of them")
    return list(value)


def parse_config(data: dict) -> ScenarioConfig:
    """Validate a parsed TOML table and fill in every default."""
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a table")
    known_top = set(_TOP_SCHEMA) | set(_SECTION_SCHEMA)
    for key in data:
        if key not in known_top:
            raise ConfigError(f"unknown configuration key {key!r}")

    resolved_top = {}
    for key, (checker, default) in _TOP_SCHEMA.items():
        resolved_top[key] = checker(data[key], key) if key in data else default

    sections = {}
    for name, schema in _SECTION_SCHEMA.items():
        given = data.get(name, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{name}] must be a table")
        for key in given:
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
        out = {}
        for key, (checker, default) in schema.items():
            if key in given:
                out[key] = given[key] if checker is None else checker(given[key], f"{name}.{key}")
            else:
                out[key] = default
        sections[name] = out

    dim = sections["grid"]["dim"]
    sections["grid"]["resolution"] = _resolve_resolution(
        sections["grid"]["resolution"], dim, "grid.resolution")

    init = sections["initial"]
    given_init = set(data.get("initial", {}))
    allowed = _INITIAL_KEYS[init["kind"]] | {"kind"}
    extras = given_init - allowed
    if extras:
        raise ConfigError(
            f"[initial] keys {sorted(extras)} do not apply to kind {init['kind']!r}")
    if init["kind"] == "from-file" and not init["path"]:
        raise ConfigError("[initial] kind 'from-file' requires a path")
    if len(init["mode"]) != dim:
        raise ConfigError(f"initial.mode must have {dim} entries")

    cfg = ScenarioConfig(
        scenario=resolved_top["scenario"], seed=resolved_top["seed"],
        horizon=resolved_top["horizon"], workers=resolved_top["workers"],
        grid=sections["grid"], fluid=sections["fluid"], noise=sections["noise"],
        stepping=sections["stepping"], initial=init, ensemble=sections["ensemble"],
        sweep=sections["sweep"], weak_strong=sections["weak_strong"],
        compare=sections["compare"],
    )
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ScenarioConfig):
    step = cfg.stepping
    n_base = round(cfg.horizon / step["dt_base"])
    if n_base < 1 or abs(n_base * step["dt_base"] - cfg.horizon) > 1e-9 * max(1.0, cfg.horizon):
        raise ConfigError(
            f"horizon {cfg.horizon} must be a positive integer multiple of "
            f"stepping.dt_base {step['dt_base']}")
    if cfg.scenario == SCHEME_COMPARE:
        subs = cfg.compare["substeps"]
        if not subs or any(v < 1 for v in subs) or not all(
                a > b for a, b in zip(subs, subs[1:])):
            raise ConfigError("compare.substeps must be strictly decreasing positive integers")
    if cfg.scenario in (ENSEMBLE, SWEEP, WEAK_STRONG) and step["substeps"] < 1:
        raise ConfigError(
            f"scenario {cfg.scenario!r} couples runs through a shared Wiener path "
            "and needs a fixed step: set stepping.substeps >= 1")
    if cfg.scenario == SWEEP:
        mus = cfg.sweep["mu"]
        if not all(a >= b for a, b in zip(mus, mus[1:])):
            raise ConfigError("sweep.mu must be non-increasing")
    if len(cfg.ensemble["probe_scalar_mode"]) != cfg.grid["dim"] or \
            len(cfg.ensemble["probe_vector_mode"]) != cfg.grid["dim"]:
        raise ConfigError("ensemble probe modes must match the grid dimension")
    wv = cfg.noise["wavevectors"]
    if wv:
        if not isinstance(wv, list) or not all(
                isinstance(v, list) and len(v) == cfg.grid["dim"]
                and all(isinstance(c, int) and not isinstance(c, bool) for c in v)
                for v in wv):
            raise ConfigError(
                f"noise.wavevectors must be a list of integer {cfg.grid['dim']}-vectors")
        if cfg.noise["phases"] and len(cfg.noise["phases"]) != len(wv):
            raise ConfigError("noise.phases must match noise.wavevectors in length")
        cfg.noise["modes"] = len(wv)
    elif not isinstance(wv, list):
        raise ConfigError("noise.wavevectors must be a list")


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"configuration file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    return parse_config(data)
