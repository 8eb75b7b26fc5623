"""Figure rendering for the command-line reports.

Everything draws through the Agg backend and writes PNG files next to the
delimited output, so runs work headless.  Figures are diagnostic summaries;
the CSVs stay the authoritative record.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "render_nominal",
    "render_gain_prediction",
    "render_ensemble",
    "render_lc_overlay",
]

_KM = 1e-3


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_nominal(ref, r_p: float, out_png: str | Path) -> Path:
    """Altitude/velocity profile, flown bank angle, and ground track."""
    t = np.asarray(ref.t)
    alt_km = (np.asarray(ref.r) - r_p) * _KM
    fig, axes = plt.subplots(2, 2, figsize=(9.5, 6.5))

    ax = axes[0][0]
    ax.plot(np.asarray(ref.v) * _KM, alt_km, lw=1.2)
    ax.set_xlabel("velocity, km/s")
    ax.set_ylabel("altitude, km")
    ax.invert_xaxis()
    ax.grid(alpha=0.3)

    ax = axes[0][1]
    ax.plot(t, np.degrees(np.asarray(ref.sigma_flown)), lw=1.0, label="flown")
    ax.plot(t, np.degrees(np.arccos(np.clip(np.asarray(ref.u_nom), -1.0, 1.0))),
            lw=1.0, ls="--", label="profile magnitude")
    if ref.ha_start_time is not None:
        ax.axvline(ref.ha_start_time, color="k", lw=0.8, ls=":")
    ax.set_xlabel("time, s")
    ax.set_ylabel("bank angle, deg")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)

    ax = axes[1][0]
    q = 0.5 * np.asarray(ref.density) * np.asarray(ref.v) ** 2
    ax.plot(t, q * 1e-3, lw=1.2)
    ax.set_xlabel("time, s")
    ax.set_ylabel("dynamic pressure, kPa")
    ax.grid(alpha=0.3)

    ax = axes[1][1]
    ax.plot(np.degrees(np.asarray(ref.theta)), np.degrees(np.asarray(ref.phi)), lw=1.2)
    ax.set_xlabel("longitude, deg")
    ax.set_ylabel("latitude, deg")
    ax.grid(alpha=0.3)

    fig.tight_layout()
    return _save(fig, out_png)


def render_gain_prediction(cov, margins, cap: float, out_png: str | Path) -> Path:
    """Predicted 3-sigma state envelopes and control correction vs bounds."""
    times = np.asarray(cov.times)
    sig = 3.0 * np.sqrt(np.maximum(np.einsum("kii->ki", np.asarray(cov.p)), 0.0))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.8))

    ax1.plot(times, sig[:, 0] * _KM, label="altitude, km")
    ax1.plot(times, sig[:, 3] * _KM, label="downrange, km")
    ax1.plot(times, np.degrees(sig[:, 2]), label="fpa, deg")
    ax1.set_xlabel("time, s")
    ax1.set_ylabel("3-sigma dispersion")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)

    t_u = times[:-1]
    su = 3.0 * np.sqrt(np.maximum(np.asarray(cov.var_u), 0.0))
    ax2.step(t_u, su, where="post", label="3-sigma correction")
    m = np.minimum(np.asarray(margins), cap)
    ax2.step(t_u, m, where="post", ls="--", color="k", label="headroom")
    ax2.set_xlabel("time, s")
    ax2.set_ylabel("cos-bank correction")
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)

    fig.tight_layout()
    return _save(fig, out_png)


def render_ensemble(stats_by_name: dict, out_png: str | Path) -> Path:
    """Terminal range error histogram and range-velocity scatter per schedule."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.8))
    for name, stats in stats_by_name.items():
        rng = np.asarray(
            [tr.range_error_m for tr in stats.trials if not tr.flagged], dtype=float
        )
        vel = np.asarray(
            [tr.velocity_error_mps for tr in stats.trials if not tr.flagged],
            dtype=float,
        )
        if rng.size == 0:
            continue
        ax1.hist(rng * _KM, bins=40, alpha=0.5, label=name)
        ax2.scatter(vel, rng * _KM, s=4, alpha=0.4, label=name)
    ax1.set_xlabel("terminal range error, km")
    ax1.set_ylabel("trials")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.set_xlabel("terminal velocity error, m/s")
    ax2.set_ylabel("terminal range error, km")
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, out_png)


_OVERLAY_PANELS = (
    (0, 1e-3, "radius, km"),
    (1, 1.0, "velocity, m/s"),
    (2, 180.0 / math.pi, "fpa, deg"),
    (3, 1e-3, "downrange, km"),
    (4, 1.0, "density, kg/m^3"),
)


def render_lc_overlay(stats, out_png: str | Path) -> Path:
    """Monte Carlo standard deviations against the linear-covariance curve."""
    t = np.asarray(stats.grid_times)
    fig, axes = plt.subplots(1, 5, figsize=(14.0, 2.9))
    for ax, (idx, scale, label) in zip(axes, _OVERLAY_PANELS):
        ax.plot(t, np.asarray(stats.grid_std)[:, idx] * scale, lw=1.2, label="MC")
        ax.plot(t, np.asarray(stats.lc_std)[:, idx] * scale, lw=1.2, ls="--",
                label="LinCov")
        ax.set_xlabel("time, s")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.suptitle(f"dispersion check: {stats.name}", fontsize=10)
    fig.tight_layout()
    return _save(fig, out_png)
