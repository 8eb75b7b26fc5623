"""Seeded Monte Carlo campaign over the entry scenario.

Each trial perturbs the entry state, the trim angle of attack, and the
atmosphere (one fresh Ornstein-Uhlenbeck density path, sampled progressively
in sink distance), then flies the closed loop with the same integrator as the
nominal.  Every random draw is a pure function of (master seed, trial id), so
ensembles reproduce bit-for-bit regardless of worker count or scheduling
order.  Statistics are order-statistic percentiles plus sampled moments on
the control-partition grid, with the linear-covariance prediction alongside
for comparison.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .atmosphere import DensityPath
from .dynamics import FullState, PropagationError, ReferenceTrajectory, propagate_nominal
from .gains import GainSchedule
from .guidance import BankPilot
from .lincov import gain_rows, propagate_covariance
from .scenario import (
    ScenarioConfig,
    discrete_model,
    initial_covariance,
    nominal_reference,
)
from .targeting import downrange_crossrange, signed_downrange_to_go

__all__ = [
    "ScenarioConfig",
    "TrialInputs",
    "TrialResult",
    "EnsembleStats",
    "LoftingDiagnostic",
    "sample_trial_inputs",
    "run_trial",
    "run_ensemble",
    "lofting_guard",
    "worker_count",
    "save_trials_csv",
    "save_summary_csv",
    "save_lc_overlay_csv",
]

WORKERS_ENV = "ENTRYSTEER_WORKERS"

# quantities reported per trial and summarized per ensemble, in CSV order
QUANTITIES = (
    "range_error_m",
    "crossrange_error_m",
    "altitude_error_m",
    "velocity_error_mps",
    "fpa_error_rad",
    "terminal_time_s",
)

_STATE_STREAM = 0
_ALPHA_STREAM = 1
_DENSITY_STREAM = 2


def _stream(master_seed: int, trial_id: int, stream: int) -> np.random.Generator:
    """Independent, reproducible generator for one (trial, purpose) pair."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(trial_id, stream))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class TrialInputs:
    trial_id: int
    state: FullState
    alpha_deg: float


def sample_trial_inputs(config: ScenarioConfig, trial_id: int) -> TrialInputs:
    """Entry-state and trim-alpha draws for one trial.

    Gaussian dispersions use sigma = (3-sigma value)/3 in the order altitude,
    velocity, flight-path angle, heading, downrange, crossrange; the last two
    displace the initial position along/across the nominal initial heading at
    the target's reference radius.
    """
    rng = _stream(config.master_seed, trial_id, _STATE_STREAM)
    g = rng.standard_normal(6)
    d = config.dispersions
    x0 = config.initial_state
    dr = g[0] * d.altitude_m / 3.0
    dv = g[1] * d.velocity_mps / 3.0
    dgamma = g[2] * d.fpa_rad / 3.0
    dpsi = g[3] * d.heading_rad / 3.0
    along = g[4] * d.downrange_m / 3.0
    across = g[5] * d.crossrange_m / 3.0

    r_ref = config.target.reference_radius
    sin_psi = math.sin(x0.psi)
    cos_psi = math.cos(x0.psi)
    dtheta = (along * sin_psi - across * cos_psi) / (r_ref * math.cos(x0.phi))
    dphi = (along * cos_psi + across * sin_psi) / r_ref

    alpha_rng = _stream(config.master_seed, trial_id, _ALPHA_STREAM)
    lo, hi = config.alpha_range_deg
    alpha = lo + float(alpha_rng.uniform()) * (hi - lo)

    state = FullState(
        r=x0.r + dr,
        theta=x0.theta + dtheta,
        phi=x0.phi + dphi,
        v=x0.v + dv,
        gamma=x0.gamma + dgamma,
        psi=x0.psi + dpsi,
    )
    return TrialInputs(trial_id=trial_id, state=state, alpha_deg=alpha)


@dataclass
class TrialResult:
    """Outcome of one closed-loop trial.

    Errors are terminal differences against the nominal endpoint (altitude,
    velocity, flight-path angle, range: positive means the trial stopped
    beyond the nominal point) except crossrange, which is measured off the
    target track (positive left).  sampled_states holds the longitudinal
    state interpolated on the shared grid, NaN past this trial's stopping
    time.
    """

    trial_id: int
    master_seed: int
    alpha_deg: float
    flagged: bool = False
    flag_reason: str = ""
    terminal_time_s: float = math.nan
    terminal_state: tuple[float, ...] = (math.nan,) * 5
    range_error_m: float = math.nan
    crossrange_error_m: float = math.nan
    altitude_error_m: float = math.nan
    velocity_error_mps: float = math.nan
    fpa_error_rad: float = math.nan
    saturation_events: int = 0
    control_steps: int = 0
    reversal_count: int = 0
    climb_distance_m: float = math.nan
    climb_fraction: float = math.nan
    sampled_states: np.ndarray | None = None
    trajectory: ReferenceTrajectory | None = None

    def value(self, quantity: str) -> float:
        return getattr(self, quantity)


@dataclass(frozen=True)
class LoftingDiagnostic:
    """How badly a trajectory violated monotone descent."""

    climb_distance_m: float
    climb_time_fraction: float


def lofting_guard(trajectory: ReferenceTrajectory) -> LoftingDiagnostic:
    """Total altitude regained during climbs and the fraction of flight time
    spent climbing.  The density model holds its path frozen during climbs,
    so this diagnostic bounds how much of the flight used replayed values."""
    r = np.asarray(trajectory.r, dtype=float)
    t = np.asarray(trajectory.t, dtype=float)
    dr = np.diff(r)
    climbing = dr > 0.0
    climb_distance = float(dr[climbing].sum()) if climbing.any() else 0.0
    span = float(t[-1] - t[0])
    climb_time = float(np.diff(t)[climbing].sum()) if climbing.any() else 0.0
    return LoftingDiagnostic(
        climb_distance_m=climb_distance,
        climb_time_fraction=climb_time / span if span > 0.0 else 0.0,
    )


def nominal_terminal_tuple(config: ScenarioConfig) -> tuple[float, float, float, float]:
    """(radius, velocity, fpa, signed downrange-to-go) at the nominal endpoint."""
    nom = nominal_reference(config)
    x_f = nom.state(len(nom) - 1)
    togo = signed_downrange_to_go(x_f, config.target, nom.t_f, config.planet.omega)
    return (float(nom.r[-1]), float(nom.v[-1]), float(nom.gamma[-1]), float(togo))


def run_trial(
    config: ScenarioConfig,
    schedule: GainSchedule | None,
    trial_id: int,
    nominal_terminal: tuple[float, float, float, float] | None = None,
    grid_times: np.ndarray | None = None,
    keep_trajectory: bool = False,
) -> TrialResult:
    """Fly one dispersed trial under the given schedule (None = profile only).

    nominal_terminal is (radius, velocity, flight-path angle, signed
    downrange-to-go) of the nominal endpoint; it is recomputed from the
    config when omitted.  All terminal errors, range included, are deviations
    from that nominal endpoint: the nominal deliberately stops short of the
    target (drift allowance for the following flight phase), so distance to
    target would carry that designed offset as a bias.
    """
    inputs = sample_trial_inputs(config, trial_id)
    vehicle = config.vehicle.with_alpha(inputs.alpha_deg)
    path = DensityPath(
        config.atmosphere, _stream(config.master_seed, trial_id, _DENSITY_STREAM)
    )
    pilot = BankPilot(
        config.lateral,
        config.target,
        config.planet.omega,
        schedule=schedule,
        control_delta_cap=config.synthesis.control_delta_cap,
    )
    result = TrialResult(
        trial_id=trial_id, master_seed=config.master_seed, alpha_deg=inputs.alpha_deg
    )
    try:
        traj = propagate_nominal(
            inputs.state,
            config.bank_profile,
            config.planet,
            vehicle,
            config.atmosphere,
            pilot,
            config.trigger,
            dt=config.dt,
            max_time=config.max_time,
            density=path.density,
        )
    except PropagationError as exc:
        result.flagged = True
        result.flag_reason = str(exc)
        return result

    if nominal_terminal is None:
        nominal_terminal = nominal_terminal_tuple(config)

    t_f = traj.t_f
    x_f = traj.state(len(traj) - 1)
    _, eps = downrange_crossrange(x_f, config.target, t_f, config.planet.omega)
    togo = signed_downrange_to_go(x_f, config.target, t_f, config.planet.omega)
    r_ref = config.target.reference_radius

    result.terminal_time_s = t_f
    result.terminal_state = tuple(traj.longitudinal(len(traj) - 1))
    result.range_error_m = (nominal_terminal[3] - togo) * r_ref
    result.crossrange_error_m = eps * r_ref
    result.altitude_error_m = float(traj.r[-1]) - nominal_terminal[0]
    result.velocity_error_mps = float(traj.v[-1]) - nominal_terminal[1]
    result.fpa_error_rad = float(traj.gamma[-1]) - nominal_terminal[2]
    result.saturation_events = pilot.saturation_events
    result.control_steps = pilot.control_steps
    result.reversal_count = pilot.reversal_count
    loft = lofting_guard(traj)
    result.climb_distance_m = loft.climb_distance_m
    result.climb_fraction = loft.climb_time_fraction
    if grid_times is not None:
        sampled = np.full((len(grid_times), 5), math.nan)
        inside = np.asarray(grid_times, dtype=float) <= t_f
        for j, col in enumerate((traj.r, traj.v, traj.gamma, traj.downrange, traj.density)):
            sampled[inside, j] = np.interp(grid_times[inside], traj.t, col)
        result.sampled_states = sampled
    if keep_trajectory:
        result.trajectory = traj
    return result


def _run_chunk(args) -> list[TrialResult]:
    config, schedule, ids, nominal_terminal, grid_times = args
    return [
        run_trial(config, schedule, i, nominal_terminal, grid_times) for i in ids
    ]


@dataclass
class EnsembleStats:
    """Aggregate view of one schedule's ensemble.

    percentiles maps each quantity to its (1st, 50th, 99th) order statistics.
    grid_* are sample moments of the longitudinal state on the partition
    grid (NaN-aware: trials that stopped early leave the grid); lc_std is the
    linear-covariance prediction of the same standard deviations.
    """

    name: str
    n_trials: int
    n_flagged: int
    percentiles: dict[str, tuple[float, float, float]]
    range_velocity_correlation: float
    saturation_rate: float
    mean_reversals: float
    grid_times: np.ndarray
    grid_mean: np.ndarray
    grid_std: np.ndarray
    grid_cov: np.ndarray
    lc_std: np.ndarray | None
    trials: list[TrialResult] = field(repr=False, default_factory=list)
    warning: str | None = None


def worker_count() -> int:
    """Worker-pool size: the override env var, else every available CPU."""
    override = os.environ.get(WORKERS_ENV, "")
    if override.strip():
        n = int(override)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer")
        return n
    return os.cpu_count() or 1


def _aggregate(
    name: str,
    results: list[TrialResult],
    grid_times: np.ndarray,
    lc_std: np.ndarray | None,
) -> EnsembleStats:
    results = sorted(results, key=lambda r: r.trial_id)
    good = [r for r in results if not r.flagged]
    n_flagged = len(results) - len(good)
    if not good:
        raise RuntimeError(f"every trial in ensemble {name!r} failed")
    percentiles: dict[str, tuple[float, float, float]] = {}
    for q in QUANTITIES:
        vals = np.array([r.value(q) for r in good])
        p = np.percentile(vals, [1.0, 50.0, 99.0])
        percentiles[q] = (float(p[0]), float(p[1]), float(p[2]))
    range_vals = np.array([r.range_error_m for r in good])
    vel_vals = np.array([r.velocity_error_mps for r in good])
    if len(good) > 2 and range_vals.std() > 0.0 and vel_vals.std() > 0.0:
        corr = float(np.corrcoef(range_vals, vel_vals)[0, 1])
    else:
        corr = 0.0
    steps = sum(r.control_steps for r in good)
    events = sum(r.saturation_events for r in good)
    sampled = np.array([
        r.sampled_states if r.sampled_states is not None
        else np.full((len(grid_times), 5), math.nan)
        for r in good
    ])
    with np.errstate(invalid="ignore"):
        grid_mean = np.nanmean(sampled, axis=0)
        grid_std = np.nanstd(sampled, axis=0, ddof=1)
    n_t = len(grid_times)
    grid_cov = np.full((n_t, 5, 5), math.nan)
    for it in range(n_t):
        rows = sampled[:, it, :]
        ok = ~np.isnan(rows[:, 0])
        if ok.sum() > 2:
            grid_cov[it] = np.cov(rows[ok].T, ddof=1)
    warning = None
    if n_flagged > 0.01 * len(results):
        warning = (
            f"{n_flagged} of {len(results)} trials failed to terminate"
        )
    return EnsembleStats(
        name=name,
        n_trials=len(results),
        n_flagged=n_flagged,
        percentiles=percentiles,
        range_velocity_correlation=corr,
        saturation_rate=events / steps if steps else 0.0,
        mean_reversals=float(np.mean([r.reversal_count for r in good])),
        grid_times=np.asarray(grid_times, dtype=float),
        grid_mean=grid_mean,
        grid_std=grid_std,
        grid_cov=grid_cov,
        lc_std=lc_std,
        trials=results,
        warning=warning,
    )


def _lc_prediction(config: ScenarioConfig, schedule: GainSchedule | None) -> np.ndarray:
    """Predicted per-state standard deviations on the partition grid."""
    model = discrete_model(config)
    if schedule is None:
        rows = np.zeros((model.n_steps, 5))
    else:
        rows = gain_rows(model, schedule)
    cov = propagate_covariance(initial_covariance(config), model, rows)
    return np.sqrt(np.maximum(0.0, np.einsum("kii->ki", cov.p)))


def run_ensemble(
    config: ScenarioConfig,
    schedules: dict[str, GainSchedule | None],
    n_trials: int | None = None,
) -> dict[str, EnsembleStats]:
    """Run every schedule over the same seeded trial population.

    Trials are distributed over a process pool (size from worker_count());
    results merge by trial id, so the output is identical for any pool size.
    """
    n = config.n_trials if n_trials is None else n_trials
    if n < 1:
        raise ValueError("trial count must be at least 1")
    nom = nominal_reference(config)
    model = discrete_model(config)
    grid_times = model.times.copy()
    nominal_terminal = nominal_terminal_tuple(config)

    workers = worker_count()
    stats: dict[str, EnsembleStats] = {}
    for name, schedule in schedules.items():
        lc_std = _lc_prediction(config, schedule)
        ids = list(range(n))
        if workers == 1 or n < 4:
            results = _run_chunk((config, schedule, ids, nominal_terminal, grid_times))
        else:
            chunk_size = max(1, math.ceil(n / (workers * 4)))
            chunks = [ids[i:i + chunk_size] for i in range(0, n, chunk_size)]
            results = []
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for part in pool.map(
                    _run_chunk,
                    [(config, schedule, c, nominal_terminal, grid_times) for c in chunks],
                ):
                    results.extend(part)
        stats[name] = _aggregate(name, results, grid_times, lc_std)
    return stats


_TRIAL_COLUMNS = [
    "trial_id",
    "alpha_deg",
    "terminal_time_s",
    "range_error_m",
    "crossrange_error_m",
    "altitude_error_m",
    "velocity_error_mps",
    "fpa_error_rad",
    "saturation_events",
    "control_steps",
    "reversal_count",
    "climb_distance_m",
    "climb_fraction",
    "flagged",
    "flag_reason",
]


def save_trials_csv(stats: EnsembleStats, path) -> None:
    """One row per trial, sorted by trial id."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TRIAL_COLUMNS)
        for r in stats.trials:
            writer.writerow([
                r.trial_id,
                repr(float(r.alpha_deg)),
                repr(float(r.terminal_time_s)),
                repr(float(r.range_error_m)),
                repr(float(r.crossrange_error_m)),
                repr(float(r.altitude_error_m)),
                repr(float(r.velocity_error_mps)),
                repr(float(r.fpa_error_rad)),
                r.saturation_events,
                r.control_steps,
                r.reversal_count,
                repr(float(r.climb_distance_m)),
                repr(float(r.climb_fraction)),
                int(r.flagged),
                r.flag_reason,
            ])


def save_summary_csv(stats_by_name: dict[str, EnsembleStats], path) -> None:
    """Comparison table: one row per (quantity, percentile), one column per
    schedule."""
    names = list(stats_by_name)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantity", "percentile"] + names)
        for q in QUANTITIES:
            for label, idx in (("1", 0), ("50", 1), ("99", 2)):
                writer.writerow(
                    [q, label]
                    + [repr(float(stats_by_name[n].percentiles[q][idx])) for n in names]
                )
        writer.writerow(["range_velocity_correlation", ""]
                        + [repr(float(stats_by_name[n].range_velocity_correlation))
                           for n in names])
        writer.writerow(["saturation_rate", ""]
                        + [repr(float(stats_by_name[n].saturation_rate)) for n in names])
        writer.writerow(["n_trials", ""]
                        + [stats_by_name[n].n_trials for n in names])
        writer.writerow(["n_flagged", ""]
                        + [stats_by_name[n].n_flagged for n in names])


_STATE_LABELS = ("r_m", "v_mps", "fpa_rad", "downrange_m", "density_kgpm3")


def save_lc_overlay_csv(stats: EnsembleStats, path) -> None:
    """Monte Carlo vs linear-covariance standard deviations on the grid."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t_s"]
        for label in _STATE_LABELS:
            header += [f"mc_std_{label}", f"lc_std_{label}"]
        writer.writerow(header)
        for i, t in enumerate(stats.grid_times):
            row = [repr(float(t))]
            for j in range(5):
                row.append(repr(float(stats.grid_std[i, j])))
                lc = stats.lc_std[i, j] if stats.lc_std is not None else math.nan
                row.append(repr(float(lc)))
            writer.writerow(row)
