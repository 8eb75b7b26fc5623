"""Command-line front end.

Three subcommands cover the workflow: ``nominal`` flies and records the
reference trajectory, ``gains`` designs a feedback schedule and reports the
predicted dispersions, ``montecarlo`` runs a seeded dispersion campaign
against one or more gain tables.  Every run writes a manifest.json recording
the config hash, seed, tool version, and output files.

Exit codes: 0 success, 2 config error, 3 infeasible synthesis, 4 degraded
ensemble (more than 1 percent of trials flagged).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_sha256, load_config
from .dynamics import save_trajectory_csv
from .gains import SynthesisError, load_gain_schedule_csv, save_gain_schedule_csv
from .montecarlo import (
    run_ensemble,
    save_lc_overlay_csv,
    save_summary_csv,
    save_trials_csv,
)
from .scenario import (
    control_margins,
    design_gains,
    discrete_model,
    nominal_reference,
    scenario_transform,
    terminal_drift,
    with_trigger_kind,
)
from .triggers import stopping_time_variance
from . import reports

__all__ = ["main", "RunManifest"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DEGRADED = 4


@dataclasses.dataclass
class RunManifest:
    """Provenance record written next to every command's outputs."""

    command: str
    config_path: str
    config_sha256: str
    master_seed: int
    tool_version: str
    outputs: list[dict]
    duration_s: float

    def write(self, path: Path) -> None:
        path.write_text(
            json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"
        )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Run:
    """Collects output files and writes the manifest at the end."""

    def __init__(self, command: str, config_path: Path, seed: int, outdir: Path):
        self.command = command
        self.config_path = config_path
        self.seed = seed
        self.outdir = outdir
        self.outputs: list[Path] = []
        self.t0 = time.perf_counter()
        outdir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.outdir / name
        self.outputs.append(p)
        return p

    def finish(self) -> None:
        manifest = RunManifest(
            command=self.command,
            config_path=str(self.config_path),
            config_sha256=config_sha256(self.config_path),
            master_seed=self.seed,
            tool_version=__version__,
            outputs=[
                {"name": p.name, "sha256": _sha256(p)}
                for p in self.outputs
                if p.exists()
            ],
            duration_s=round(time.perf_counter() - self.t0, 3),
        )
        manifest.write(self.outdir / "manifest.json")


def _reversal_events(ref) -> list[tuple[str, float, float]]:
    events: list[tuple[str, float, float]] = []
    for i in range(1, len(ref.t)):
        if ref.bank_dir[i] != ref.bank_dir[i - 1]:
            events.append(("reversal", ref.t[i], float(ref.bank_dir[i])))
    if ref.ha_start_time is not None:
        events.append(("heading_alignment_start", ref.ha_start_time, 0.0))
    q = 0.5 * np.asarray(ref.density) * np.asarray(ref.v) ** 2
    i_q = int(np.argmax(q))
    events.append(("peak_dynamic_pressure_pa", ref.t[i_q], float(q[i_q])))
    events.append(("terminal_velocity_mps", ref.t_f, float(ref.v[-1])))
    events.sort(key=lambda e: e[1])
    return events


def _write_events_csv(events, path: Path) -> None:
    with path.open("w", newline="") as fh:
        fh.write("event,time_s,value\n")
        for name, t, value in events:
            fh.write(f"{name},{t!r},{value!r}\n")


def cmd_nominal(args) -> int:
    config = load_config(args.config)
    run = _Run("nominal", Path(args.config), config.master_seed, Path(args.outdir))
    ref = nominal_reference(config)
    save_trajectory_csv(ref, run.path("trajectory.csv"))
    _write_events_csv(_reversal_events(ref), run.path("events.csv"))
    reports.render_nominal(ref, config.planet.r_p, run.path("nominal.png"))
    run.finish()
    alt_f = (ref.r[-1] - config.planet.r_p) / 1e3
    print(
        f"nominal: t_f={ref.t_f:.1f} s  V_f={ref.v[-1]:.1f} m/s  "
        f"h_f={alt_f:.2f} km  range_to_target={-ref.downrange[-1] / 1e3:.2f} km"
    )
    return EXIT_OK


def _report_json(config, method, schedule, cov, report) -> dict:
    transform = scenario_transform(config)
    p_hat = transform.terminal_covariance(cov.p_final)
    sig = np.sqrt(np.maximum(np.diag(p_hat), 0.0))
    nu = config.trigger.normal
    f_hat = terminal_drift(config)
    var_t = stopping_time_variance(
        nu if nu is not None else config.trigger, f_hat, cov.p_final
    )
    doc = {
        "method": method,
        "trigger": config.trigger.kind,
        "engage_time": schedule.engage_time,
        "terminal_sigma": {
            "altitude_m": float(sig[0]),
            "velocity_mps": float(sig[1]),
            "fpa_deg": math.degrees(float(sig[2])),
            "downrange_m": float(sig[3]),
            "density_kgpm3": float(sig[4]),
        },
        "stopping_time_sigma_s": math.sqrt(max(var_t, 0.0)),
        "control_sigma_max": float(np.sqrt(np.max(np.maximum(cov.var_u, 0.0)))),
    }
    if report is not None:
        doc["synthesis"] = {
            "feasible": report.feasible,
            "state_sigmas": [float(v) for v in report.state_sigmas],
            "state_bounds": [float(v) for v in report.state_bounds],
            "state_margins": [float(v) for v in report.state_margins],
            "control_sigma_max": float(report.control_sigma_max),
            "control_margin": float(report.control_margin),
            "xi_state": [float(v) for v in report.xi_state],
            "xi_control": [float(v) for v in report.xi_control],
            "j_range": float(report.j_range),
            "j_reference": float(report.j_reference),
            "penalty_rounds": report.penalty_rounds,
            "n_evaluations": report.n_evaluations,
            "warning": report.warning,
        }
    return doc


def cmd_gains(args) -> int:
    config = load_config(args.config)
    config = with_trigger_kind(config, args.trigger)
    run = _Run("gains", Path(args.config), config.master_seed, Path(args.outdir))
    tag = f"{args.method}_{args.trigger}"
    try:
        schedule, cov, report = design_gains(config, args.method)
    except SynthesisError as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    save_gain_schedule_csv(schedule, run.path(f"gains_{tag}.csv"))
    doc = _report_json(config, args.method, schedule, cov, report)
    run.path(f"synthesis_{tag}.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )
    model = discrete_model(config)
    margins = control_margins(model, config.synthesis.control_delta_cap)
    reports.render_gain_prediction(
        cov, margins, config.synthesis.control_delta_cap,
        run.path(f"prediction_{tag}.png"),
    )
    run.finish()
    sig3 = 3.0 * doc["terminal_sigma"]["altitude_m"] / 1e3
    print(
        f"gains[{tag}]: terminal altitude 3-sigma {sig3:.3f} km, "
        f"max control 3-sigma {3.0 * doc['control_sigma_max']:.3f}"
    )
    if report is not None and not report.feasible:
        print(f"infeasible: {report.warning}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    config = load_config(args.config)
    if args.trigger:
        config = with_trigger_kind(config, args.trigger)
    if args.n is not None:
        if args.n < 1:
            raise ConfigError("trial count must be at least 1")
        config.n_trials = args.n
    if args.seed is not None:
        config.master_seed = args.seed
    run = _Run(
        "montecarlo", Path(args.config), config.master_seed, Path(args.outdir)
    )
    schedules = {}
    for table in args.tables:
        p = Path(table)
        try:
            schedules[p.stem] = load_gain_schedule_csv(p)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"gain table {p}: {exc}") from exc
    if not schedules:
        schedules["openloop"] = None
    stats_by_name = run_ensemble(config, schedules)
    for name, stats in stats_by_name.items():
        save_trials_csv(stats, run.path(f"trials_{name}.csv"))
        if stats.lc_std is not None:
            save_lc_overlay_csv(stats, run.path(f"lc_overlay_{name}.csv"))
            reports.render_lc_overlay(stats, run.path(f"lc_overlay_{name}.png"))
    save_summary_csv(stats_by_name, run.path("summary.csv"))
    reports.render_ensemble(stats_by_name, run.path("ensemble.png"))
    run.finish()
    degraded = False
    for name, stats in stats_by_name.items():
        p1, p50, p99 = stats.percentiles["range_error_m"]
        print(
            f"{name}: n={stats.n_trials} flagged={stats.n_flagged}  "
            f"range error p1={p1 / 1e3:+.2f} km  p50={p50 / 1e3:+.2f} km  "
            f"p99={p99 / 1e3:+.2f} km  saturation={stats.saturation_rate:.4f}"
        )
        if stats.warning:
            print(f"{name}: {stats.warning}", file=sys.stderr)
        if stats.n_flagged > 0.01 * stats.n_trials:
            degraded = True
    return EXIT_DEGRADED if degraded else EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entrysteer",
        description="Covariance-steered bank-angle entry guidance toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nominal", help="fly and record the reference trajectory")
    p.add_argument("config", help="scenario YAML")
    p.add_argument("-o", "--outdir", default="out_nominal")
    p.set_defaults(func=cmd_nominal)

    p = sub.add_parser("gains", help="design a feedback gain schedule")
    p.add_argument("config", help="scenario YAML")
    p.add_argument(
        "--method", choices=("apollo", "stochastic"), default="stochastic"
    )
    p.add_argument("--trigger", choices=("velocity", "time"), default="velocity")
    p.add_argument("-o", "--outdir", default="out_gains")
    p.set_defaults(func=cmd_gains)

    p = sub.add_parser("montecarlo", help="run a seeded dispersion campaign")
    p.add_argument("config", help="scenario YAML")
    p.add_argument("tables", nargs="*", help="gain table CSVs (default: open loop)")
    p.add_argument("-n", type=int, default=None, help="override trial count")
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    p.add_argument(
        "--trigger", choices=("velocity", "time"), default=None,
        help="override the terminal trigger kind",
    )
    p.add_argument("-o", "--outdir", default="out_montecarlo")
    p.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
