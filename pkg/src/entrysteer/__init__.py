"""Covariance-steered bank-angle guidance for atmospheric entry.

The package splits into a physics layer (atmosphere, dynamics, targeting),
a linear-covariance layer (lincov, triggers), gain design (gains), the
flight software model (guidance), and campaign tooling (scenario,
montecarlo, config, reports, cli).
"""

from .atmosphere import AtmosphereModel, DensityPath, load_profile_csv
from .config import ConfigError, config_sha256, load_config
from .dynamics import (
    FullState,
    PlanetParams,
    PropagationError,
    ReferenceTrajectory,
    VehicleParams,
    propagate_nominal,
)
from .gains import (
    GainSchedule,
    SynthesisError,
    apollo_gains,
    chance_bound,
    lqg_gains,
    synthesize_stochastic_gains,
)
from .guidance import BankPilot, LateralConfig
from .lincov import discretize, propagate_covariance
from .montecarlo import EnsembleStats, run_ensemble, run_trial
from .scenario import ScenarioConfig, design_gains, nominal_reference, with_trigger_kind
from .targeting import TargetSpec
from .triggers import DegenerateTriggerError, TriggerSpec, trigger_transform

__version__ = "0.1.0"

__all__ = [
    "AtmosphereModel",
    "BankPilot",
    "ConfigError",
    "DegenerateTriggerError",
    "DensityPath",
    "EnsembleStats",
    "FullState",
    "GainSchedule",
    "LateralConfig",
    "PlanetParams",
    "PropagationError",
    "ReferenceTrajectory",
    "ScenarioConfig",
    "SynthesisError",
    "TargetSpec",
    "TriggerSpec",
    "VehicleParams",
    "apollo_gains",
    "chance_bound",
    "config_sha256",
    "design_gains",
    "discretize",
    "load_config",
    "load_profile_csv",
    "lqg_gains",
    "nominal_reference",
    "propagate_covariance",
    "propagate_nominal",
    "run_ensemble",
    "run_trial",
    "synthesize_stochastic_gains",
    "trigger_transform",
    "with_trigger_kind",
    "__version__",
]
