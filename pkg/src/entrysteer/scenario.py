"""Scenario assembly and the gain-design pipeline.

A ScenarioConfig gathers everything one entry case needs: planet, vehicle,
atmosphere, entry-interface statistics, target, stopping trigger, guidance
settings, and synthesis weights.  The pipeline functions here fly the
nominal, linearize about it, pull terminal weights and constraint directions
back through the stopping-time projection, and hand the pieces to the gain
synthesizers.  Expensive intermediates (nominal trajectory, linear models)
are cached on the config object, so repeated queries are free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .atmosphere import (
    AtmosphereModel,
    density_sde_coefficients,
    mean_density_at_depth,
    variation_variance,
)
from .dynamics import (
    FullState,
    PlanetParams,
    ReferenceTrajectory,
    VehicleParams,
    long_derivative,
    propagate_nominal,
)
from .gains import (
    ConstraintSet,
    GainSchedule,
    RangeCost,
    StateConstraint,
    SynthesisReport,
    apollo_gains,
    synthesize_stochastic_gains,
)
from .guidance import BankPilot, LateralConfig
from .lincov import (
    ContinuousLinearModel,
    CovarianceTrajectory,
    DiscreteLinearModel,
    N_STATES,
    build_continuous_model,
    discretize,
    propagate_covariance,
    uniform_partition,
)
from .tables import PiecewiseLinear
from .targeting import TargetSpec
from .triggers import (
    FIXED_TIME,
    HYPERPLANE,
    TriggerSpec,
    TriggerTransform,
    trigger_transform,
)

__all__ = [
    "InitialDispersions",
    "SynthesisSettings",
    "ScenarioConfig",
    "initial_covariance",
    "nominal_reference",
    "continuous_model",
    "discrete_model",
    "terminal_drift",
    "scenario_transform",
    "control_margins",
    "build_constraint_set",
    "design_gains",
    "with_trigger_kind",
]


@dataclass(frozen=True)
class InitialDispersions:
    """Entry-interface 3-sigma values (Gaussian) in SI units and radians.

    Downrange and crossrange displace the initial position along and across
    the nominal initial heading; altitude dispersion is normally zero because
    the interface is defined at a fixed radius.
    """

    altitude_m: float = 0.0
    velocity_mps: float = 0.0
    fpa_rad: float = 0.0
    heading_rad: float = 0.0
    downrange_m: float = 0.0
    crossrange_m: float = 0.0

    def __post_init__(self) -> None:
        for name in ("altitude_m", "velocity_mps", "fpa_rad", "heading_rad",
                     "downrange_m", "crossrange_m"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"3-sigma value {name} must be nonnegative")

    def scaled(self, factor: float) -> "InitialDispersions":
        return InitialDispersions(
            altitude_m=self.altitude_m * factor,
            velocity_mps=self.velocity_mps * factor,
            fpa_rad=self.fpa_rad * factor,
            heading_rad=self.heading_rad * factor,
            downrange_m=self.downrange_m * factor,
            crossrange_m=self.crossrange_m * factor,
        )


@dataclass(frozen=True)
class SynthesisSettings:
    """Weights and chance constraints for gain design.

    a_f and the constraint directions refer to the fixed-time terminal state;
    the pipeline pulls them through the stopping-time projection when the
    scenario uses a state trigger.
    """

    a_f: tuple[float, ...] = (0.0, 0.0, 0.0, 1e6, 0.0)
    control_weight: float = 1e-2
    altitude_delta_m: float = 2000.0
    altitude_p: float = 0.0027
    fpa_delta_rad: float = math.radians(1.55)
    fpa_p: float = 0.0027
    control_delta_cap: float = 0.45
    control_p: float = 0.0027
    overcontrol_gain: float = 5.0
    n_control_segments: int = 8

    def a_f_vector(self) -> np.ndarray:
        return np.asarray(self.a_f, dtype=float)


@dataclass
class ScenarioConfig:
    """One complete entry case, sufficient for nominal flight, gain design,
    and a Monte Carlo campaign."""

    planet: PlanetParams
    vehicle: VehicleParams
    atmosphere: AtmosphereModel
    initial_state: FullState
    dispersions: InitialDispersions
    alpha_range_deg: tuple[float, float]
    target: TargetSpec
    trigger: TriggerSpec
    lateral: LateralConfig
    bank_profile: PiecewiseLinear
    synthesis: SynthesisSettings
    n_trials: int = 1000
    master_seed: int = 0
    partition_step: float = 2.0
    dt: float = 0.2
    max_time: float = 900.0

    def __post_init__(self) -> None:
        if self.n_trials < 1:
            raise ValueError("trial count must be at least 1")
        if self.alpha_range_deg[1] < self.alpha_range_deg[0]:
            raise ValueError("trim-alpha interval is reversed")
        if self.partition_step <= 0.0 or self.dt <= 0.0:
            raise ValueError("time steps must be positive")

    def _cache(self, key: str, build):
        store = self.__dict__.setdefault("_derived", {})
        if key not in store:
            store[key] = build()
        return store[key]


def nominal_reference(config: ScenarioConfig) -> ReferenceTrajectory:
    """Closed-loop nominal flight (mean atmosphere, no feedback schedule)."""

    def build() -> ReferenceTrajectory:
        pilot = BankPilot(config.lateral, config.target, config.planet.omega)
        return propagate_nominal(
            config.initial_state,
            config.bank_profile,
            config.planet,
            config.vehicle,
            config.atmosphere,
            pilot,
            config.trigger,
            dt=config.dt,
            max_time=config.max_time,
        )

    return config._cache("nominal", build)


def continuous_model(config: ScenarioConfig) -> ContinuousLinearModel:
    """Linearization along the nominal, control zeroed during heading
    alignment."""

    def build() -> ContinuousLinearModel:
        ref = nominal_reference(config)
        return build_continuous_model(
            ref,
            config.planet,
            config.vehicle,
            config.atmosphere,
            zero_control_after=ref.ha_start_time,
            bank_profile=config.bank_profile,
        )

    return config._cache("continuous", build)


def discrete_model(config: ScenarioConfig) -> DiscreteLinearModel:
    """Exact discretization on the uniform control partition."""

    def build() -> DiscreteLinearModel:
        ref = nominal_reference(config)
        part = uniform_partition(0.0, ref.t_f, config.partition_step)
        return discretize(continuous_model(config), part)

    return config._cache("discrete", build)


def initial_covariance(config: ScenarioConfig) -> np.ndarray:
    """Longitudinal initial covariance: diagonal Gaussian state dispersions
    (sigma = 3-sigma value / 3) plus the stationary density variance mapped
    through the mean profile.  Heading and crossrange are lateral quantities
    and do not enter."""
    d = config.dispersions
    s0 = config.planet.r_atm - config.initial_state.r
    rho0 = mean_density_at_depth(max(s0, 0.0), config.atmosphere)
    zeta0 = variation_variance(max(s0, 0.0), config.atmosphere)
    sig = np.array([
        d.altitude_m / 3.0,
        d.velocity_mps / 3.0,
        d.fpa_rad / 3.0,
        d.downrange_m / 3.0,
        math.sqrt(zeta0) * rho0,
    ])
    return np.diag(sig**2)


def terminal_drift(config: ScenarioConfig, ref: ReferenceTrajectory | None = None) -> np.ndarray:
    """Nominal drift of the augmented longitudinal state at the final node."""
    if ref is None:
        ref = nominal_reference(config)
    z = ref.longitudinal(len(ref) - 1)
    u_l = math.cos(float(ref.sigma_flown[-1]))
    r4 = long_derivative(z, u_l, config.planet, config.vehicle)
    s = config.planet.r_atm - z.r
    f_rho, _ = density_sde_coefficients(s, z.rho, config.atmosphere)
    s_dot = -z.v * math.sin(z.gamma)
    return np.array([*r4, f_rho * s_dot])


def scenario_transform(config: ScenarioConfig) -> TriggerTransform:
    """Stopping-time projection for the scenario's trigger (identity when the
    trigger is fixed-time)."""

    def build() -> TriggerTransform:
        return trigger_transform(config.trigger, terminal_drift(config))

    return config._cache("transform", build)


def control_margins(model: DiscreteLinearModel, cap: float) -> np.ndarray:
    """Per-step correction margin: the commanded cosine can move by at most
    min(cap, distance to either cosine limit) before clamping."""
    u_nom = model.nominal_control[:-1]
    margins = np.minimum(cap, np.minimum(1.0 - u_nom, u_nom + 1.0))
    return np.maximum(margins, 1e-6)


def build_constraint_set(
    config: ScenarioConfig,
    model: DiscreteLinearModel,
    transform: TriggerTransform,
) -> ConstraintSet:
    """Altitude and flight-path-angle terminal constraints (pulled back
    through the trigger projection) plus the per-step control bound."""
    syn = config.synthesis
    e_alt = np.zeros(N_STATES)
    e_alt[0] = 1.0
    e_fpa = np.zeros(N_STATES)
    e_fpa[2] = 1.0
    state = (
        StateConstraint(
            d=tuple(transform.pullback(e_alt)),
            delta=syn.altitude_delta_m,
            p=syn.altitude_p,
            label="altitude",
        ),
        StateConstraint(
            d=tuple(transform.pullback(e_fpa)),
            delta=syn.fpa_delta_rad,
            p=syn.fpa_p,
            label="fpa",
        ),
    )
    return ConstraintSet(
        state=state,
        control_delta=control_margins(model, syn.control_delta_cap),
        control_p=syn.control_p,
    )


def design_gains(
    config: ScenarioConfig, method: str
) -> tuple[GainSchedule, CovarianceTrajectory, SynthesisReport | None]:
    """Gain synthesis for the scenario.

    method "stochastic" runs the constrained outer search; "apollo" builds
    the adjoint baseline with the scenario's overcontrol gain.  Both return
    the predicted closed-loop covariance on the partition grid; the report is
    None for the baseline (it has no constraints to account for).
    """
    transform = scenario_transform(config)
    e_range = np.zeros(N_STATES)
    e_range[3] = 1.0
    if method == "apollo":
        schedule = apollo_gains(
            continuous_model(config),
            transform.pullback(e_range),
            config.synthesis.overcontrol_gain,
        )
        model = discrete_model(config)
        cov = propagate_covariance(initial_covariance(config), model, schedule)
        return schedule, cov, None
    if method == "stochastic":
        model = discrete_model(config)
        constraints = build_constraint_set(config, model, transform)
        cost = RangeCost(
            a_f=transform.pullback(config.synthesis.a_f_vector()),
            r=config.synthesis.control_weight,
        )
        return synthesize_stochastic_gains(
            model,
            initial_covariance(config),
            cost,
            constraints,
            n_control_segments=config.synthesis.n_control_segments,
        )
    raise ValueError(f"unknown synthesis method {method!r}")


def with_trigger_kind(config: ScenarioConfig, kind: str) -> ScenarioConfig:
    """The same scenario stopped by velocity (as configured) or at the fixed
    time where the nominal meets the configured trigger."""
    if kind == "velocity":
        if config.trigger.kind != HYPERPLANE:
            raise ValueError("scenario trigger is not a state trigger")
        return config
    if kind == "time":
        if config.trigger.kind == FIXED_TIME:
            return config
        t_f = nominal_reference(config).t_f
        return replace(config, trigger=TriggerSpec(kind=FIXED_TIME, beta=t_f))
    raise ValueError(f"unknown trigger kind {kind!r}")
