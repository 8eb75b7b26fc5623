"""3-DOF entry dynamics over a spherical rotating planet.

Two models share one longitudinal core: the full 6-state point-mass equations
(radius, longitude, latitude, velocity, flight-path angle, heading) used for
simulation, and the planar 4-state reduction (radius, velocity, flight-path
angle, downrange) used for linearization and gain design.  Heading is an
azimuth measured clockwise from north, so 90 deg flies due east and a
positive bank turns the track to the right.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .atmosphere import AtmosphereModel, mean_density_at_depth
from .tables import PiecewiseLinear

__all__ = [
    "PlanetParams",
    "VehicleParams",
    "FullState",
    "LongitudinalState",
    "ReferenceTrajectory",
    "aero_coefficients",
    "full_derivative",
    "long_derivative",
    "sink_rate",
    "propagate_nominal",
    "load_bank_profile_csv",
    "save_trajectory_csv",
    "load_trajectory_csv",
    "PropagationError",
]


@dataclass(frozen=True)
class PlanetParams:
    """Spherical rotating planet: gravity, spin, surface and atmosphere radii."""

    mu: float  # m^3/s^2
    omega: float  # rad/s
    r_p: float  # m
    r_atm: float  # m

    def __post_init__(self) -> None:
        if self.mu <= 0.0:
            raise ValueError("mu must be positive")
        if self.r_atm <= self.r_p:
            raise ValueError("r_atm must exceed r_p")


def _constant_table(value: float) -> PiecewiseLinear:
    return PiecewiseLinear((0.0,), (value,))


@dataclass(frozen=True)
class VehicleParams:
    """Lifting capsule: mass, reference area, and an affine trim aero model.

    Lift and drag coefficients are expanded about the trim angle of attack:
    C = C0 + slope * (alpha - alpha_trim), slopes per degree.  The trim
    schedule alpha(V) defaults to a constant.
    """

    mass: float  # kg
    a_ref: float  # m^2
    c_l0: float
    c_d0: float
    dcl_dalpha: float  # per deg
    dcd_dalpha: float  # per deg
    alpha_trim_deg: float
    alpha_schedule: PiecewiseLinear | None = None

    def __post_init__(self) -> None:
        if self.mass <= 0.0 or self.a_ref <= 0.0 or self.c_d0 <= 0.0:
            raise ValueError("mass, reference area, and C_D0 must be positive")
        if self.alpha_schedule is None:
            object.__setattr__(self, "alpha_schedule", _constant_table(self.alpha_trim_deg))

    def with_alpha(self, alpha_deg: float) -> "VehicleParams":
        """Copy flying at a fixed off-trim angle of attack (dispersed trials)."""
        return VehicleParams(
            mass=self.mass,
            a_ref=self.a_ref,
            c_l0=self.c_l0,
            c_d0=self.c_d0,
            dcl_dalpha=self.dcl_dalpha,
            dcd_dalpha=self.dcd_dalpha,
            alpha_trim_deg=self.alpha_trim_deg,
            alpha_schedule=_constant_table(alpha_deg),
        )


class FullState(NamedTuple):
    r: float  # m
    theta: float  # longitude, rad
    phi: float  # latitude, rad
    v: float  # m/s
    gamma: float  # flight-path angle, rad
    psi: float  # heading azimuth from north, rad


class LongitudinalState(NamedTuple):
    r: float  # m
    v: float  # m/s
    gamma: float  # rad
    range: float  # along-track position relative to the target, m (negative uprange)
    rho: float  # kg/m^3


@dataclass
class ReferenceTrajectory:
    """Closed-loop nominal trajectory sampled on the integrator grid.

    The control column holds the unsigned bank-cosine profile (the reversal
    sign lives in bank_dir), matching the longitudinal model's control.
    The downrange column is along-track position relative to the target on
    the reference sphere, negative while uprange, so it carries initial
    position offsets and reads the same for guidance and for recording.
    """

    t: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    psi: np.ndarray
    downrange: np.ndarray
    density: np.ndarray
    u_nom: np.ndarray
    bank_dir: np.ndarray
    sigma_flown: np.ndarray
    ha_start_time: float  # inf when heading alignment never engaged

    def __post_init__(self) -> None:
        if np.any(np.diff(self.t) <= 0.0):
            raise ValueError("time grid must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def t_f(self) -> float:
        return float(self.t[-1])

    def state(self, i: int) -> FullState:
        return FullState(
            float(self.r[i]), float(self.theta[i]), float(self.phi[i]),
            float(self.v[i]), float(self.gamma[i]), float(self.psi[i]),
        )

    def longitudinal(self, i: int) -> LongitudinalState:
        return LongitudinalState(
            float(self.r[i]), float(self.v[i]), float(self.gamma[i]),
            float(self.downrange[i]), float(self.density[i]),
        )

    def interp_longitudinal(self, t: float) -> LongitudinalState:
        return LongitudinalState(
            float(np.interp(t, self.t, self.r)),
            float(np.interp(t, self.t, self.v)),
            float(np.interp(t, self.t, self.gamma)),
            float(np.interp(t, self.t, self.downrange)),
            float(np.interp(t, self.t, self.density)),
        )


def aero_coefficients(alpha_deg: float, vehicle: VehicleParams) -> tuple[float, float]:
    """Affine lift/drag coefficients about the trim angle of attack."""
    d_alpha = alpha_deg - vehicle.alpha_trim_deg
    c_l = vehicle.c_l0 + vehicle.dcl_dalpha * d_alpha
    c_d = vehicle.c_d0 + vehicle.dcd_dalpha * d_alpha
    return c_l, c_d


def _longitudinal_rates(
    r: float, v: float, gamma: float, rho: float, u_l: float,
    mu: float, mass: float, a_ref: float, c_l: float, c_d: float,
) -> tuple[float, float, float, float]:
    """Planar rates shared verbatim by both dynamics models.

    u_l is the bank cosine scaling the in-plane lift component.
    """
    sin_g = math.sin(gamma)
    cos_g = math.cos(gamma)
    grav = mu / (r * r)
    q_area = 0.5 * rho * v * v * a_ref
    r_dot = v * sin_g
    v_dot = -q_area * c_d / mass - grav * sin_g
    gamma_dot = q_area * c_l * u_l / (mass * v) - (grav - v * v / r) * cos_g / v
    range_dot = v * cos_g
    return r_dot, v_dot, gamma_dot, range_dot


def long_derivative(
    z: LongitudinalState, u_l: float, planet: PlanetParams, vehicle: VehicleParams
) -> tuple[float, float, float, float]:
    """Planar entry rates (r, V, gamma, downrange); no planet-rotation terms."""
    if z.v <= 0.0:
        raise ValueError("velocity must be positive")
    alpha = vehicle.alpha_schedule(z.v)
    c_l, c_d = aero_coefficients(alpha, vehicle)
    return _longitudinal_rates(
        z.r, z.v, z.gamma, z.rho, u_l,
        planet.mu, vehicle.mass, vehicle.a_ref, c_l, c_d,
    )


def full_derivative(
    x: FullState, sigma: float, rho: float, planet: PlanetParams, vehicle: VehicleParams
) -> tuple[float, float, float, float, float, float]:
    """Rates for the rotating-planet 6-state model at bank angle sigma."""
    r, theta, phi, v, gamma, psi = x
    if v <= 0.0:
        raise ValueError("velocity must be positive")
    cos_g = math.cos(gamma)
    if cos_g == 0.0:
        raise ValueError("flight-path angle at +/-90 deg is singular in heading")
    alpha = vehicle.alpha_schedule(v)
    c_l, c_d = aero_coefficients(alpha, vehicle)
    cos_sigma = math.cos(sigma)
    r_dot, v_dot, gamma_dot, _ = _longitudinal_rates(
        r, v, gamma, rho, cos_sigma,
        planet.mu, vehicle.mass, vehicle.a_ref, c_l, c_d,
    )

    sin_g = math.sin(gamma)
    sin_phi = math.sin(phi)
    cos_phi = math.cos(phi)
    sin_psi = math.sin(psi)
    cos_psi = math.cos(psi)
    omega = planet.omega
    lift_per_mass = 0.5 * rho * v * v * vehicle.a_ref * c_l / vehicle.mass

    theta_dot = v * cos_g * sin_psi / (r * cos_phi)
    phi_dot = v * cos_g * cos_psi / r

    v_dot += omega * omega * r * cos_phi * (sin_g * cos_phi - cos_g * sin_phi * cos_psi)
    gamma_dot += (
        2.0 * omega * v * cos_phi * sin_psi
        + omega * omega * r * cos_phi * (cos_g * cos_phi + sin_g * sin_phi * cos_psi)
    ) / v
    psi_dot = (
        lift_per_mass * math.sin(sigma) / cos_g
        + v * v * cos_g * sin_psi * math.tan(phi) / r
        + 2.0 * omega * v * (sin_phi - math.tan(gamma) * cos_phi * cos_psi)
        + omega * omega * r * sin_phi * cos_phi * sin_psi / cos_g
    ) / v
    return r_dot, theta_dot, phi_dot, v_dot, gamma_dot, psi_dot


def sink_rate(x: FullState | LongitudinalState) -> float:
    """Rate of descent -V*sin(gamma); positive when losing altitude."""
    return -x.v * math.sin(x.gamma)


def load_bank_profile_csv(path: str | Path) -> PiecewiseLinear:
    """Read the nominal bank-cosine schedule (columns velocity_mps, cos_bank)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["velocity_mps", "cos_bank"]:
            raise ValueError(f"{path}: expected header velocity_mps,cos_bank")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: empty bank profile")
    rows.sort(key=lambda r: r[0])
    return PiecewiseLinear(tuple(r[0] for r in rows), tuple(r[1] for r in rows))


class PropagationError(RuntimeError):
    """Nominal propagation failed to reach its stopping condition."""


def _rk4_step(
    t: float,
    y: tuple[float, ...],
    h: float,
    rates: Callable[[float, tuple[float, ...]], tuple[float, ...]],
) -> tuple[float, ...]:
    k1 = rates(t, y)
    k2 = rates(t + 0.5 * h, tuple(a + 0.5 * h * b for a, b in zip(y, k1)))
    k3 = rates(t + 0.5 * h, tuple(a + 0.5 * h * b for a, b in zip(y, k2)))
    k4 = rates(t + h, tuple(a + h * b for a, b in zip(y, k3)))
    return tuple(
        a + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
    )


def propagate_nominal(
    x0: FullState,
    bank_profile: PiecewiseLinear,
    planet: PlanetParams,
    vehicle: VehicleParams,
    atmosphere: AtmosphereModel,
    lateral_logic,
    stop,
    dt: float = 0.1,
    max_time: float = 900.0,
    density=None,
) -> ReferenceTrajectory:
    """Fly one closed-loop trajectory: bank-cosine profile vs velocity with
    lateral reversal/heading-alignment logic injected via ``lateral_logic``.

    ``lateral_logic`` must expose cadence, bank_dir, ha_start_time,
    measured_downrange(t, state) -> m, plus reset(t, state, profile_cos,
    downrange, rho) -> sigma and an epoch method with the same signature,
    called every cadence seconds (an integer multiple of dt); the flown bank
    is held in between.  The recorded downrange column is the lateral
    logic's measurement (anchored to its target, so an initial position
    offset shows up in it), not the integrated path length.  ``stop`` is a
    trigger specification: integration ends where stop.margin first reaches
    zero, located by linear interpolation inside the step.  ``density`` maps
    sink distance to density; the default is the mean profile (nominal
    flight), Monte Carlo trials pass their sampled path.
    """
    cadence = lateral_logic.cadence
    n_sub = round(cadence / dt)
    if n_sub < 1 or abs(n_sub * dt - cadence) > 1e-9:
        raise ValueError("guidance cadence must be an integer multiple of dt")
    if density is None:
        def density(s: float) -> float:
            return mean_density_at_depth(s, atmosphere)

    r_atm = planet.r_atm
    sigma = 0.0

    def rates(t: float, y: tuple[float, ...]) -> tuple[float, ...]:
        r, theta, phi, v, gamma, psi = y
        state = FullState(r, theta, phi, v, gamma, psi)
        rho = density(r_atm - r)
        return full_derivative(state, sigma, rho, planet, vehicle)

    rows: list[tuple] = []

    def record(t: float, y: tuple[float, ...], dr: float, rho: float) -> None:
        rows.append(
            (t, *y, dr, rho, bank_profile(y[3]), lateral_logic.bank_dir, sigma)
        )

    t = 0.0
    y = tuple(x0)
    rho_now = density(r_atm - y[0])
    dr_now = lateral_logic.measured_downrange(t, x0)
    sigma = lateral_logic.reset(t, x0, bank_profile(x0.v), dr_now, rho_now)
    record(t, y, dr_now, rho_now)
    trigger_prev = stop.margin(t, (y[0], y[3], y[4], dr_now, rho_now))
    if trigger_prev <= 0.0:
        raise PropagationError("stopping condition already met at the initial state")

    n_epochs = 0
    while t < max_time:
        # one guidance interval: hold sigma, step dt at a time, watch the trigger
        for _ in range(n_sub):
            y_next = _rk4_step(t, y, dt, rates)
            t_next = t + dt
            rho_now = density(r_atm - y_next[0])
            dr_now = lateral_logic.measured_downrange(t_next, FullState(*y_next))
            trigger_next = stop.margin(
                t_next, (y_next[0], y_next[3], y_next[4], dr_now, rho_now)
            )
            if trigger_next <= 0.0:
                w = trigger_prev / (trigger_prev - trigger_next)
                t_hit = t + w * dt
                y_hit = tuple(a + w * (b - a) for a, b in zip(y, y_next))
                record(
                    t_hit, y_hit,
                    lateral_logic.measured_downrange(t_hit, FullState(*y_hit)),
                    density(r_atm - y_hit[0]),
                )
                return _build_reference(rows, lateral_logic.ha_start_time)
            t, y, trigger_prev = t_next, y_next, trigger_next
            record(t, y, dr_now, rho_now)
        n_epochs += 1
        t_epoch = n_epochs * cadence  # exact epoch time, free of step roundoff
        state = FullState(*y)
        sigma = lateral_logic.epoch(t_epoch, state, bank_profile(state.v), dr_now, rho_now)
        # rewrite the epoch row so the logged bank reflects the new command
        rows[-1] = rows[-1][:10] + (lateral_logic.bank_dir, sigma)
    raise PropagationError(f"stopping condition not reached within {max_time} s")


def _build_reference(rows: list[tuple], ha_start_time: float) -> ReferenceTrajectory:
    cols = list(zip(*rows))
    return ReferenceTrajectory(
        t=np.array(cols[0]),
        r=np.array(cols[1]),
        theta=np.array(cols[2]),
        phi=np.array(cols[3]),
        v=np.array(cols[4]),
        gamma=np.array(cols[5]),
        psi=np.array(cols[6]),
        downrange=np.array(cols[7]),
        density=np.array(cols[8]),
        u_nom=np.array(cols[9]),
        bank_dir=np.array(cols[10]).astype(float),
        sigma_flown=np.array(cols[11]),
        ha_start_time=ha_start_time,
    )


_TRAJECTORY_COLUMNS = [
    "t_s",
    "r_m",
    "lon_rad",
    "lat_rad",
    "v_mps",
    "fpa_rad",
    "heading_rad",
    "downrange_m",
    "density_kgpm3",
    "cos_bank_nominal",
    "bank_dir",
    "sigma_flown_rad",
]


def save_trajectory_csv(ref: ReferenceTrajectory, path: str | Path) -> None:
    """Write one row per integrator node; column order as in the header."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TRAJECTORY_COLUMNS)
        for i in range(len(ref)):
            writer.writerow(
                [
                    repr(float(v))
                    for v in (
                        ref.t[i], ref.r[i], ref.theta[i], ref.phi[i], ref.v[i],
                        ref.gamma[i], ref.psi[i], ref.downrange[i], ref.density[i],
                        ref.u_nom[i], ref.bank_dir[i], ref.sigma_flown[i],
                    )
                ]
            )


def load_trajectory_csv(path: str | Path, ha_start_time: float = math.inf) -> ReferenceTrajectory:
    """Read a trajectory written by save_trajectory_csv."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _TRAJECTORY_COLUMNS:
            raise ValueError(f"{path}: unexpected trajectory columns")
        data = np.array([[float(v) for v in row] for row in reader if row])
    return ReferenceTrajectory(
        t=data[:, 0], r=data[:, 1], theta=data[:, 2], phi=data[:, 3], v=data[:, 4],
        gamma=data[:, 5], psi=data[:, 6], downrange=data[:, 7], density=data[:, 8],
        u_nom=data[:, 9], bank_dir=data[:, 10], sigma_flown=data[:, 11],
        ha_start_time=ha_start_time,
    )
