"""Scenario file loading.

Configs are YAML with nested sections; every physical key carries a unit
suffix (_m, _mps, _deg, ...) and is converted to SI + radians here, so unit
errors die at the boundary.  Parse failures raise ConfigError with the full
section.field name.  The atmosphere profile table lives in a separate CSV
referenced from the config (resolved relative to the config file).
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path

import yaml

from .atmosphere import AtmosphereModel, load_profile_csv
from .dynamics import FullState, PlanetParams, VehicleParams
from .guidance import LateralConfig
from .scenario import InitialDispersions, ScenarioConfig, SynthesisSettings
from .tables import PiecewiseLinear, StepTable
from .targeting import TargetSpec
from .triggers import FIXED_TIME, HYPERPLANE, TriggerSpec

__all__ = ["ConfigError", "load_config", "config_sha256", "default_config_path"]


def default_config_path() -> Path:
    """Path of the Mars entry scenario shipped with the package."""
    return Path(__file__).resolve().parent / "data" / "mars_entry.yaml"


class ConfigError(ValueError):
    """Scenario file is missing a field or holds an unusable value."""


def _section(doc: dict, name: str) -> dict:
    if name not in doc:
        raise ConfigError(f"missing section '{name}'")
    sec = doc[name]
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return sec


def _field(sec: dict, section: str, name: str):
    if name not in sec:
        label = f"{section}.{name}" if section else name
        raise ConfigError(f"missing field '{label}'")
    return sec[name]


def _num(sec: dict, section: str, name: str) -> float:
    value = _field(sec, section, name)
    label = f"{section}.{name}" if section else name
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{label}' is not a number: {value!r}") from None


def _num_opt(sec: dict, section: str, name: str, default: float) -> float:
    if name not in sec or sec[name] is None:
        return default
    return _num(sec, section, name)


def _num_list(sec: dict, section: str, name: str) -> list[float]:
    value = _field(sec, section, name)
    label = f"{section}.{name}" if section else name
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"field '{label}' must be a nonempty list")
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"field '{label}' holds a non-number") from None


def config_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse a scenario YAML into a ready-to-run ScenarioConfig."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")

    sec = _section(doc, "planet")
    r_p = _num(sec, "planet", "surface_radius_m")
    r_atm = r_p + _num(sec, "planet", "atmosphere_top_altitude_m")
    try:
        planet = PlanetParams(
            mu=_num(sec, "planet", "mu_m3ps2"),
            omega=_num(sec, "planet", "omega_radps"),
            r_p=r_p,
            r_atm=r_atm,
        )
    except ValueError as exc:
        raise ConfigError(f"planet: {exc}") from exc

    sec = _section(doc, "vehicle")
    try:
        vehicle = VehicleParams(
            mass=_num(sec, "vehicle", "mass_kg"),
            a_ref=_num(sec, "vehicle", "reference_area_m2"),
            c_l0=_num(sec, "vehicle", "c_l0"),
            c_d0=_num(sec, "vehicle", "c_d0"),
            dcl_dalpha=_num(sec, "vehicle", "dcl_dalpha_perdeg"),
            dcd_dalpha=_num(sec, "vehicle", "dcd_dalpha_perdeg"),
            alpha_trim_deg=_num(sec, "vehicle", "alpha_trim_deg"),
        )
    except ValueError as exc:
        raise ConfigError(f"vehicle: {exc}") from exc

    sec = _section(doc, "atmosphere")
    profile_rel = _field(sec, "atmosphere", "profile_csv")
    profile_path = (path.parent / str(profile_rel)).resolve()
    zeta0 = sec.get("zeta0")
    try:
        atmosphere = load_profile_csv(
            profile_path,
            r_atm=r_atm,
            r_p=r_p,
            surface_density=_num(sec, "atmosphere", "surface_density_kgpm3"),
            zeta0=None if zeta0 is None else float(zeta0),
        )
    except (OSError, ValueError) as exc:
        raise ConfigError(f"atmosphere.profile_csv: {exc}") from exc

    sec = _section(doc, "initial_state")
    initial_state = FullState(
        r=r_p + _num(sec, "initial_state", "altitude_m"),
        theta=math.radians(_num(sec, "initial_state", "longitude_deg")),
        phi=math.radians(_num(sec, "initial_state", "latitude_deg")),
        v=_num(sec, "initial_state", "velocity_mps"),
        gamma=math.radians(_num(sec, "initial_state", "fpa_deg")),
        psi=math.radians(_num(sec, "initial_state", "heading_deg")),
    )

    sec = _section(doc, "dispersions_3sigma")
    try:
        dispersions = InitialDispersions(
            altitude_m=_num_opt(sec, "dispersions_3sigma", "altitude_m", 0.0),
            velocity_mps=_num(sec, "dispersions_3sigma", "velocity_mps"),
            fpa_rad=math.radians(_num(sec, "dispersions_3sigma", "fpa_deg")),
            heading_rad=math.radians(_num(sec, "dispersions_3sigma", "heading_deg")),
            downrange_m=_num(sec, "dispersions_3sigma", "downrange_m"),
            crossrange_m=_num(sec, "dispersions_3sigma", "crossrange_m"),
        )
    except ValueError as exc:
        raise ConfigError(f"dispersions_3sigma: {exc}") from exc

    alpha_range = _num_list(doc, "", "alpha_range_deg")
    if len(alpha_range) != 2:
        raise ConfigError("field 'alpha_range_deg' must be [low, high]")

    sec = _section(doc, "target")
    reference_radius = _num_opt(sec, "target", "reference_radius_m", r_p)
    try:
        target = TargetSpec(
            theta=math.radians(_num(sec, "target", "longitude_deg")),
            phi=math.radians(_num(sec, "target", "latitude_deg")),
            eta0=_num_opt(sec, "target", "eta0_rad", 0.0),
            reference_radius=reference_radius,
        )
    except ValueError as exc:
        raise ConfigError(f"target: {exc}") from exc

    sec = _section(doc, "trigger")
    kind = str(_field(sec, "trigger", "kind"))
    try:
        if kind == "velocity":
            trigger = TriggerSpec(
                kind=HYPERPLANE,
                nu=(0.0, 1.0, 0.0, 0.0, 0.0),
                beta=_num(sec, "trigger", "velocity_mps"),
            )
        elif kind in (FIXED_TIME, "time"):
            trigger = TriggerSpec(kind=FIXED_TIME, beta=_num(sec, "trigger", "time_s"))
        elif kind == HYPERPLANE:
            trigger = TriggerSpec(
                kind=HYPERPLANE,
                nu=tuple(_num_list(sec, "trigger", "normal")),
                beta=_num(sec, "trigger", "beta"),
            )
        else:
            raise ConfigError(f"field 'trigger.kind' unknown: {kind!r}")
    except ValueError as exc:
        raise ConfigError(f"trigger: {exc}") from exc

    sec = _section(doc, "guidance")
    deadband_sec = _section(sec, "deadband")
    times = _num_list(deadband_sec, "guidance.deadband", "times_s")
    widths = _num_list(deadband_sec, "guidance.deadband", "widths_m")
    if len(times) != len(widths):
        raise ConfigError("guidance.deadband lists must have equal length")
    sat_sec = _section(sec, "ha_saturation")
    sat_v = _num_list(sat_sec, "guidance.ha_saturation", "velocities_mps")
    sat_lim = _num_list(sat_sec, "guidance.ha_saturation", "limits_deg")
    if len(sat_lim) != len(sat_v) + 1:
        raise ConfigError(
            "guidance.ha_saturation.limits_deg needs one more entry than velocities_mps"
        )
    try:
        lateral = LateralConfig(
            deadband=PiecewiseLinear(
                tuple(times), tuple(w / reference_radius for w in widths)
            ),
            k_ha=_num(sec, "guidance", "k_ha"),
            ha_entry_velocity=_num(sec, "guidance", "ha_entry_velocity_mps"),
            ha_saturation=StepTable(
                tuple(sat_v), tuple(math.radians(v) for v in sat_lim)
            ),
            rate_limit=math.radians(_num(sec, "guidance", "rate_limit_degps")),
            cadence=_num_opt(sec, "guidance", "cadence_s", 1.0),
            initial_bank_dir=int(_num_opt(sec, "guidance", "initial_bank_dir", 1)),
        )
    except ValueError as exc:
        raise ConfigError(f"guidance: {exc}") from exc

    sec = _section(doc, "bank_profile")
    v_list = _num_list(sec, "bank_profile", "velocities_mps")
    u_list = _num_list(sec, "bank_profile", "cos_bank")
    if len(v_list) != len(u_list):
        raise ConfigError("bank_profile lists must have equal length")
    try:
        bank_profile = PiecewiseLinear(tuple(v_list), tuple(u_list))
    except ValueError as exc:
        raise ConfigError(f"bank_profile: {exc}") from exc

    sec = _section(doc, "synthesis")
    try:
        synthesis = SynthesisSettings(
            a_f=(0.0, 0.0, 0.0, _num(sec, "synthesis", "range_weight"), 0.0),
            control_weight=_num(sec, "synthesis", "control_weight"),
            altitude_delta_m=_num(sec, "synthesis", "altitude_delta_m"),
            altitude_p=_num(sec, "synthesis", "altitude_p"),
            fpa_delta_rad=math.radians(_num(sec, "synthesis", "fpa_delta_deg")),
            fpa_p=_num(sec, "synthesis", "fpa_p"),
            control_delta_cap=_num(sec, "synthesis", "control_delta_cap"),
            control_p=_num(sec, "synthesis", "control_p"),
            overcontrol_gain=_num(sec, "synthesis", "overcontrol_gain"),
            n_control_segments=int(_num_opt(sec, "synthesis", "n_control_segments", 8)),
        )
    except ValueError as exc:
        raise ConfigError(f"synthesis: {exc}") from exc

    sec = _section(doc, "montecarlo")
    try:
        return ScenarioConfig(
            planet=planet,
            vehicle=vehicle,
            atmosphere=atmosphere,
            initial_state=initial_state,
            dispersions=dispersions,
            alpha_range_deg=(alpha_range[0], alpha_range[1]),
            target=target,
            trigger=trigger,
            lateral=lateral,
            bank_profile=bank_profile,
            synthesis=synthesis,
            n_trials=int(_num(sec, "montecarlo", "n_trials")),
            master_seed=int(_num(sec, "montecarlo", "master_seed")),
            partition_step=_num_opt(sec, "montecarlo", "partition_step_s", 2.0),
            dt=_num_opt(sec, "montecarlo", "dt_s", 0.2),
            max_time=_num_opt(sec, "montecarlo", "max_time_s", 900.0),
        )
    except ValueError as exc:
        raise ConfigError(f"montecarlo: {exc}") from exc
