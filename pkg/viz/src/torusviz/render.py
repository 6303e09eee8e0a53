"""Figure builders, one per kind.

Rendering is deterministic: fixed style, fixed DPI, no timestamps in the
output metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .loading import SCHEMAS, SchemaError, load_csv, load_jsonl

_STYLE = {
    "figure.figsize": (7.0, 4.5),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "lines.linewidth": 1.4,
}

_PNG_METADATA = {"Software": "torusviz"}


@dataclass
class FigureSpec:
    kind: str
    inputs: list[str]
    output: str
    title: str = ""
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in SCHEMAS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; "
                              f"expected one of {sorted(SCHEMAS)}")
        if not self.inputs:
            raise SchemaError("at least one input file is required")
        if self.kind != "energy" and len(self.inputs) != 1:
            raise SchemaError(f"figure kind {self.kind!r} takes exactly one input")


def render(spec: FigureSpec) -> Path:
    """Build the figure and write the image; returns the output path."""
    with plt.rc_context(_STYLE):
        fig = _BUILDERS[spec.kind](spec)
        out = Path(spec.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, metadata=_PNG_METADATA if out.suffix == ".png" else None)
        plt.close(fig)
    return out


def _label(spec: FigureSpec, index: int) -> str:
    if index < len(spec.labels):
        return spec.labels[index]
    return Path(spec.inputs[index]).stem if len(spec.inputs) > 1 else ""


def _energy_figure(spec: FigureSpec):
    fig, (top, bottom) = plt.subplots(
        2, 1, sharex=True, gridspec_kw={"height_ratios": [2, 1]})
    for i, path in enumerate(spec.inputs):
        data = load_csv(path, "energy")
        suffix = f" [{_label(spec, i)}]" if _label(spec, i) else ""
        top.plot(data["time"], data["energy_ns"], label="energy" + suffix)
        top.plot(data["time"], data["dissipation_cum"], "--",
                 label="dissipation" + suffix)
        top.plot(data["time"], data["energy_ns"] + data["dissipation_cum"], ":",
                 label="energy + dissipation" + suffix)
        bottom.plot(data["time"], data["energy_budget_residual"],
                    label="budget residual" + suffix)
    top.set_ylabel("energy")
    top.legend(loc="best", fontsize=7)
    bottom.set_xlabel("time")
    bottom.set_ylabel("residual")
    fig.suptitle(spec.title or "Energy trace with dissipation budget")
    return fig


def _convergence_figure(spec: FigureSpec):
    data = load_csv(spec.inputs[0], "convergence")
    dt = data["dt"]
    gap = data["gap_rel_l2"]
    fig, ax = plt.subplots()
    ax.loglog(dt, gap, "o-", label="pathwise gap")
    if len(dt) >= 2 and np.all(gap > 0):
        order = np.polyfit(np.log(dt), np.log(gap), 1)[0]
        ref = gap[0] * (dt / dt[0]) ** 1.0
        ax.loglog(dt, ref, "k--", alpha=0.6, label="slope 1")
        ax.set_title(spec.title or f"Ito vs Stratonovich gap (fitted order {order:.2f})")
    else:
        ax.set_title(spec.title or "Ito vs Stratonovich gap")
    ax.set_xlabel("dt")
    ax.set_ylabel("relative L2 gap at horizon")
    ax.legend()
    return fig


def _sweep_figure(spec: FigureSpec):
    data = load_csv(spec.inputs[0], "sweep")
    have_gap = ~np.isnan(data["gap_rho"])
    if not np.any(have_gap):
        raise SchemaError(f"{spec.inputs[0]}: no gap rows to plot")
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    mu = data["mu"][have_gap]
    left.loglog(mu, data["gap_rho"][have_gap], "o-", label="density gap")
    left.loglog(mu, data["gap_momentum"][have_gap], "s-", label="momentum gap")
    left.set_xlabel("viscosity")
    left.set_ylabel("sup-in-time W^{-4,2} Cauchy gap")
    left.legend()
    right.loglog(data["mu"], data["dissipation_total"], "d-")
    right.set_xlabel("viscosity")
    right.set_ylabel("total dissipation")
    fig.suptitle(spec.title or "Vanishing-viscosity Cauchy gaps")
    fig.tight_layout()
    return fig


def _weak_strong_figure(spec: FigureSpec):
    data = load_csv(spec.inputs[0], "weak-strong")
    fig, ax = plt.subplots()
    ax.plot(data["time"], data["relative_energy"], label="relative energy")
    ax.plot(data["time"], data["envelope"], "k--", label="Gronwall envelope")
    bad = data["guard_ok"] == 0.0
    if np.any(bad):
        ax.axvspan(data["time"][bad].min(), data["time"].max(), color="red",
                   alpha=0.15, label="guard tripped")
    ax.set_xlabel("time")
    ax.set_ylabel("relative energy")
    ax.set_yscale("log")
    floor = max(1e-18, float(np.abs(data["relative_energy"]).max()) * 1e-8)
    ax.set_ylim(bottom=floor)
    ax.legend()
    ax.set_title(spec.title or "Weak-strong relative energy")
    return fig


def _martingale_figure(spec: FigureSpec):
    data = load_jsonl(spec.inputs[0], "martingale")
    t = data["time"]
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    for name, color in (("m1", "tab:blue"), ("m2", "tab:orange")):
        mean = data[f"{name}_mean"]
        band = 4.0 * data[f"{name}_se"]
        left.plot(t, mean, color=color, label=f"{name} mean")
        left.fill_between(t, mean - band, mean + band, color=color, alpha=0.2)
    left.axhline(0.0, color="k", linewidth=0.8)
    left.set_xlabel("time")
    left.set_ylabel("residual mean (4 SE band)")
    left.legend()
    right.plot(t, data["m2_var"], label="empirical Var[m2]")
    right.plot(t, data["qv2_pred_mean"], "--", label="predicted variation")
    right.plot(t, data["qv2_pred_half_mean"], ":", label="1/2-normalized prediction")
    right.plot(t, data["cross_emp_mean"], label="empirical cross variation")
    right.plot(t, data["cross_pred_mean"], "--", label="predicted cross variation")
    right.set_xlabel("time")
    right.set_ylabel("variation")
    right.legend(fontsize=7)
    fig.suptitle(spec.title or "Martingale residual statistics")
    fig.tight_layout()
    return fig


_BUILDERS = {
    "energy": _energy_figure,
    "convergence": _convergence_figure,
    "sweep": _sweep_figure,
    "weak-strong": _weak_strong_figure,
    "martingale": _martingale_figure,
}
