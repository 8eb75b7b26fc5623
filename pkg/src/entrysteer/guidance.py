"""Closed-loop flight software.

One BankPilot instance owns the guidance state for a single trajectory.  At a
fixed cadence it turns the vehicle state into a flown bank angle: a
longitudinal bank-cosine command (nominal profile plus gain-schedule
correction), a lateral deadband that picks the bank sign, a terminal
heading-alignment law, and a slew-rate limit chaining consecutive flown
angles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

from .dynamics import FullState, LongitudinalState
from .tables import PiecewiseLinear, StepTable
from .targeting import TargetSpec, downrange_crossrange, signed_downrange_to_go

if TYPE_CHECKING:
    from .gains import GainSchedule

__all__ = [
    "RANGE_CONTROL",
    "HEADING_ALIGNMENT",
    "GuidanceState",
    "LateralConfig",
    "BankPilot",
    "longitudinal_command",
    "bank_from_cosine",
    "rate_limit",
    "update_bank_direction",
    "heading_alignment_command",
    "save_command_log",
]

RANGE_CONTROL = "range_control"
HEADING_ALIGNMENT = "heading_alignment"


@dataclass
class GuidanceState:
    """Mutable per-trajectory guidance memory."""

    mode: str = RANGE_CONTROL
    bank_dir: int = 1
    sigma_prev: float = 0.0  # last flown bank, rad
    t_prev: float = 0.0

    def __post_init__(self) -> None:
        if self.bank_dir not in (-1, 1):
            raise ValueError("bank direction must be -1 or +1")


@dataclass(frozen=True)
class LateralConfig:
    """Deadband, heading-alignment, and slew parameters.

    deadband: crossrange corridor half-width vs time, rad.
    k_ha: proportional gain of the heading-alignment law.
    ha_entry_velocity: range control hands over at or below this speed, m/s.
    ha_saturation: velocity-scheduled bank limit during heading alignment, rad.
    rate_limit: bank slew limit, rad/s.
    cadence: command recomputation interval, s.
    """

    deadband: PiecewiseLinear
    k_ha: float
    ha_entry_velocity: float
    ha_saturation: StepTable
    rate_limit: float
    cadence: float = 1.0
    initial_bank_dir: int = 1

    def __post_init__(self) -> None:
        if self.k_ha <= 0.0:
            raise ValueError("heading-alignment gain must be positive")
        if any(e <= 0.0 for e in self.deadband.y):
            raise ValueError("deadband must be positive")
        if self.rate_limit <= 0.0 or self.cadence <= 0.0:
            raise ValueError("rate limit and cadence must be positive")
        if self.initial_bank_dir not in (-1, 1):
            raise ValueError("bank direction must be -1 or +1")


def longitudinal_command(t: float, x: LongitudinalState, schedule: "GainSchedule") -> float:
    """Bank-cosine command: nominal control plus the scheduled linear
    correction, clamped to a valid cosine.

    Time-indexed schedules hold the gain row and nominal-state entry over each
    partition subinterval; velocity-indexed schedules interpolate linearly in
    velocity.  Outside the table span the boundary row applies.
    """
    u, _ = _command_terms(t, x, schedule)
    return u


def _command_terms(t: float, x: LongitudinalState, schedule: "GainSchedule") -> tuple[float, float]:
    u_tilde = schedule.correction(t, x)
    u = schedule.feedforward(t, x.v) + u_tilde
    return min(1.0, max(-1.0, u)), u_tilde


def bank_from_cosine(u_l: float, bank_dir: int) -> float:
    """Signed bank angle from its cosine: the lateral logic owns the sign."""
    if not -1.0 <= u_l <= 1.0:
        raise ValueError("bank cosine outside [-1, 1]; clamp upstream")
    return bank_dir * math.acos(u_l)


def rate_limit(sigma_cmd: float, sigma_prev: float, dt: float, limit: float) -> float:
    """Clamp the commanded bank so consecutive flown angles differ by at most
    limit*dt."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    step = limit * dt
    delta = sigma_cmd - sigma_prev
    if delta > step:
        return sigma_prev + step
    if delta < -step:
        return sigma_prev - step
    return sigma_cmd


def update_bank_direction(eps: float, eps_max: float, bank_dir: int) -> int:
    """Deadband reversal logic: flip only when the crossrange leaves the
    corridor, toward the side that brings the target back."""
    if eps < -eps_max:
        return 1
    if eps > eps_max:
        return -1
    return bank_dir


def heading_alignment_command(
    delta_go: float, eps: float, config: LateralConfig, v: float
) -> float:
    """Terminal proportional bank law steering the velocity great circle
    through the target.

    The magnitude follows k_ha*atan(delta_go/|eps|), which saturates against
    the velocity-scheduled limit for any appreciable geometry; the sign banks
    toward the target (positive crossrange means the target is left of track,
    so the command is a left, negative, bank).
    """
    magnitude = config.k_ha * math.atan2(delta_go, abs(eps))
    limit = config.ha_saturation(v)
    sigma = min(magnitude, limit)
    return -sigma if eps >= 0.0 else sigma


class BankPilot:
    """Guidance for one trajectory: call reset once, then epoch every cadence.

    With no gain schedule the longitudinal command is the supplied profile
    cosine (nominal flight).  With a schedule, corrections follow its
    indexing: time-indexed corrections refresh only at partition boundaries
    and are held in between, velocity-indexed corrections refresh every epoch
    once past the schedule's engage time.
    """

    def __init__(
        self,
        lateral: LateralConfig,
        target: TargetSpec,
        omega: float,
        schedule: "GainSchedule | None" = None,
        control_delta_cap: float | None = None,
        keep_log: bool = False,
    ) -> None:
        self.lateral = lateral
        self.target = target
        self.omega = omega
        self.schedule = schedule
        self.control_delta_cap = control_delta_cap
        self.state = GuidanceState(bank_dir=lateral.initial_bank_dir)
        self.ha_start_time = math.inf
        self.reversal_count = 0
        self.saturation_events = 0
        self.control_steps = 0
        self.log: list[tuple] | None = [] if keep_log else None
        self._held_correction = 0.0
        self._held_row = -1

    @property
    def cadence(self) -> float:
        return self.lateral.cadence

    @property
    def bank_dir(self) -> int:
        return self.state.bank_dir

    @property
    def mode(self) -> str:
        return self.state.mode

    def measured_downrange(self, t: float, x: FullState) -> float:
        """Along-track position relative to the target, in meters on the
        reference sphere.  Negative while uprange, zero at the target; an
        initial position offset is visible here, unlike in integrated path
        length."""
        togo = signed_downrange_to_go(x, self.target, t, self.omega)
        return -togo * self.target.reference_radius

    def reset(self, t: float, x: FullState, profile_cos: float,
              downrange: float = 0.0, rho: float = 0.0) -> float:
        """First command; the vehicle starts at the commanded attitude, so no
        rate limiting applies."""
        self.state = GuidanceState(bank_dir=self.lateral.initial_bank_dir)
        self.ha_start_time = math.inf
        self.reversal_count = 0
        self.saturation_events = 0
        self.control_steps = 0
        self._held_correction = 0.0
        self._held_row = -1
        if self.log is not None:
            self.log = []
        sigma, _ = self._command(t, x, profile_cos, downrange, rho, first=True)
        return sigma

    def epoch(self, t: float, x: FullState, profile_cos: float = math.nan,
              downrange: float = 0.0, rho: float = 0.0) -> float:
        sigma, _ = self._command(t, x, profile_cos, downrange, rho, first=False)
        return sigma

    def _command(
        self, t: float, x: FullState, profile_cos: float,
        downrange: float, rho: float, first: bool,
    ) -> tuple[float, float]:
        st = self.state
        delta_go, eps = downrange_crossrange(x, self.target, t, self.omega)
        if st.mode == RANGE_CONTROL and x.v <= self.lateral.ha_entry_velocity:
            st.mode = HEADING_ALIGNMENT
            self.ha_start_time = t

        if st.mode == RANGE_CONTROL:
            new_dir = update_bank_direction(eps, self.lateral.deadband(t), st.bank_dir)
            if new_dir != st.bank_dir:
                self.reversal_count += 1
                st.bank_dir = new_dir
            u = self._longitudinal(t, x, profile_cos, downrange, rho)
            sigma_cmd = bank_from_cosine(u, st.bank_dir)
        else:
            u = math.nan
            sigma_cmd = heading_alignment_command(delta_go, eps, self.lateral, x.v)

        if first:
            sigma = sigma_cmd
        else:
            sigma = rate_limit(sigma_cmd, st.sigma_prev, t - st.t_prev, self.lateral.rate_limit)
        st.sigma_prev = sigma
        st.t_prev = t
        if self.log is not None:
            self.log.append((t, st.mode, u, sigma_cmd, sigma, st.bank_dir, eps, delta_go))
        return sigma, sigma_cmd

    def _longitudinal(
        self, t: float, x: FullState, profile_cos: float, downrange: float, rho: float
    ) -> float:
        # feedforward is always the profile at current velocity, so a
        # zero-deviation flight reproduces the nominal commands exactly
        u_ff = min(1.0, max(-1.0, profile_cos))
        schedule = self.schedule
        if schedule is None:
            return u_ff
        z = LongitudinalState(x.r, x.v, x.gamma, downrange, rho)
        if schedule.kind == "time":
            row = schedule.row_index(t)
            if row != self._held_row:
                self._held_row = row
                self._held_correction = schedule.correction(t, z)
                self._count_saturation(self._held_correction, u_ff)
            u = u_ff + self._held_correction
        else:
            correction = schedule.correction(t, z)
            if schedule.engage_time is None or t >= schedule.engage_time:
                self._count_saturation(correction, u_ff)
            u = u_ff + correction
        return min(1.0, max(-1.0, u))

    def _count_saturation(self, correction: float, u_nom: float) -> None:
        self.control_steps += 1
        cap = self.control_delta_cap
        if cap is None:
            return
        delta_u = min(cap, 1.0 - u_nom, u_nom + 1.0)
        if abs(correction) > delta_u:
            self.saturation_events += 1


_COMMAND_LOG_COLUMNS = ["t_s", "mode", "u_l", "sigma_cmd_rad", "sigma_flown_rad",
                        "bank_dir", "crossrange_rad", "downrange_to_go_rad"]


def save_command_log(log: list[tuple], path: str | Path) -> None:
    """Write one row per guidance epoch (columns as in the header)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COMMAND_LOG_COLUMNS)
        for t, mode, u, cmd, flown, bank_dir, eps, delta_go in log:
            writer.writerow([
                repr(float(t)), mode, repr(float(u)), repr(float(cmd)),
                repr(float(flown)), str(int(bank_dir)), repr(float(eps)),
                repr(float(delta_go)),
            ])
