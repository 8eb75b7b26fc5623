"""Linear covariance machinery.

The planar entry state is augmented with density into x = (r, V, gamma,
range, rho); its deviation from the reference obeys dx = (A x + B u) dt +
G dw with the density row driven in sink distance and rescaled to time by the
descent rate.  This module builds the node-wise continuous model, the exact
discrete model on a control partition (state transition, control influence,
and process noise by joint quadrature), and the closed-loop covariance
recursion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .atmosphere import (
    AtmosphereModel,
    mean_density_at_depth,
    ou_coefficients,
)
from .dynamics import (
    LongitudinalState,
    PlanetParams,
    ReferenceTrajectory,
    VehicleParams,
    aero_coefficients,
)

__all__ = [
    "ContinuousLinearModel",
    "Partition",
    "DiscreteLinearModel",
    "CovarianceTrajectory",
    "jacobians",
    "build_continuous_model",
    "uniform_partition",
    "discretize",
    "state_transition",
    "propagate_covariance",
    "save_discrete_model_json",
]

N_STATES = 5


def jacobians(
    z: LongitudinalState,
    u_l: float,
    planet: PlanetParams,
    vehicle: VehicleParams,
    atmosphere: AtmosphereModel,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Drift, control, and diffusion sensitivities at one reference point.

    Returns (A, B, G): A is the 5x5 Jacobian of the augmented drift, B the
    5-vector of control sensitivities (only the flight-path-angle row is
    nonzero), and G the 5-vector diffusion (only the density row, scaled by
    the square root of the non-negative part of the descent rate).
    """
    r, v, gamma, _, rho = z
    if v <= 0.0:
        raise ValueError("velocity must be positive")
    mu = planet.mu
    mass, area = vehicle.mass, vehicle.a_ref
    alpha = vehicle.alpha_schedule(v)
    c_l, c_d = aero_coefficients(alpha, vehicle)
    alpha_slope = vehicle.alpha_schedule.derivative(v)
    dcl_dv = vehicle.dcl_dalpha * alpha_slope
    dcd_dv = vehicle.dcd_dalpha * alpha_slope

    sin_g, cos_g = math.sin(gamma), math.cos(gamma)
    grav = mu / (r * r)
    k_aero = 0.5 * area / mass  # q*A/m = k_aero * rho * V^2

    a = np.zeros((N_STATES, N_STATES))
    # altitude rate: V sin(gamma)
    a[0, 1] = sin_g
    a[0, 2] = v * cos_g
    # velocity rate: -k rho V^2 C_D - g sin(gamma)
    a[1, 0] = 2.0 * grav * sin_g / r
    a[1, 1] = -k_aero * rho * (2.0 * v * c_d + v * v * dcd_dv)
    a[1, 2] = -grav * cos_g
    a[1, 4] = -k_aero * v * v * c_d
    # flight-path rate: k rho V C_L u - (g/V - V/r) cos(gamma)
    a[2, 0] = 2.0 * grav * cos_g / (r * v) - v * cos_g / (r * r)
    a[2, 1] = k_aero * rho * (c_l + v * dcl_dv) * u_l + grav * cos_g / (v * v) + cos_g / r
    a[2, 2] = (grav / v - v / r) * sin_g
    a[2, 4] = k_aero * v * c_l * u_l
    # downrange rate: V cos(gamma)
    a[3, 1] = cos_g
    a[3, 2] = -v * sin_g
    # density rate: f_rho(s, rho) * sdot, driven through s = r_atm - r
    s = planet.r_atm - r
    h = atmosphere.scale_height(s)
    h_slope = atmosphere.scale_height.derivative(s)
    rhobar = mean_density_at_depth(s, atmosphere)
    lam, phi = ou_coefficients(s, atmosphere)
    f_rho = (1.0 / h - lam) * rho + lam * rhobar
    s_dot = -v * sin_g
    # d(f_rho)/ds via H'(s) and d(rhobar)/ds = rhobar/H
    df_ds = (rho * h_slope + 2.0 * rhobar - 2.0 * rhobar * h_slope) / (h * h)
    a[4, 0] = -s_dot * df_ds
    a[4, 1] = -f_rho * sin_g
    a[4, 2] = -f_rho * v * cos_g
    a[4, 4] = s_dot * (1.0 / h - lam)

    b = np.zeros(N_STATES)
    b[2] = k_aero * rho * v * c_l

    g = np.zeros(N_STATES)
    g[4] = rhobar * math.sqrt(phi) * math.sqrt(max(s_dot, 0.0))
    return a, b, g


@dataclass
class ContinuousLinearModel:
    """Node-wise linearization along the reference trajectory."""

    t: np.ndarray  # (n,)
    a: np.ndarray  # (n, 5, 5)
    b: np.ndarray  # (n, 5)
    g: np.ndarray  # (n, 5)
    ref: ReferenceTrajectory

    def __post_init__(self) -> None:
        if not (len(self.t) == len(self.a) == len(self.b) == len(self.g)):
            raise ValueError("node count mismatch")

    def interp(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Linear interpolation of (A, B, GG^T-ready G) between nodes."""
        grid = self.t
        if t <= grid[0]:
            return self.a[0], self.b[0], self.g[0]
        if t >= grid[-1]:
            return self.a[-1], self.b[-1], self.g[-1]
        i = int(np.searchsorted(grid, t, side="right")) - 1
        w = (t - grid[i]) / (grid[i + 1] - grid[i])
        a = self.a[i] * (1.0 - w) + self.a[i + 1] * w
        b = self.b[i] * (1.0 - w) + self.b[i + 1] * w
        g = self.g[i] * (1.0 - w) + self.g[i + 1] * w
        return a, b, g


def build_continuous_model(
    ref: ReferenceTrajectory,
    planet: PlanetParams,
    vehicle: VehicleParams,
    atmosphere: AtmosphereModel,
    zero_control_after: float | None = None,
    bank_profile=None,
) -> ContinuousLinearModel:
    """Linearize at every reference node.

    The linearization control is the cosine of the flown bank (the motion the
    reference actually followed, reversal transients included), not the
    commanded profile.  ``zero_control_after`` zeroes the control column from
    that time on (control authority is not modeled once heading alignment
    owns the bank angle); pass the reference's ha_start_time for
    flight-consistent models.  When ``bank_profile`` is given, the feedback
    the pilot gets for free by reading the profile at its own velocity,
    du/dV times the velocity deviation, is folded into the A matrix.
    """
    n = len(ref)
    a = np.empty((n, N_STATES, N_STATES))
    b = np.empty((n, N_STATES))
    g = np.empty((n, N_STATES))
    for i in range(n):
        u_i = math.cos(float(ref.sigma_flown[i]))
        a[i], b[i], g[i] = jacobians(
            ref.longitudinal(i), u_i, planet, vehicle, atmosphere
        )
    if zero_control_after is not None:
        b[ref.t >= zero_control_after] = 0.0
    if bank_profile is not None:
        for i in range(n):
            slope = bank_profile.derivative(float(ref.v[i]))
            if slope != 0.0:
                a[i, :, 1] += b[i] * slope
    return ContinuousLinearModel(t=ref.t.copy(), a=a, b=b, g=g, ref=ref)


@dataclass(frozen=True)
class Partition:
    """Control partition: gains are constant on each [t_k, t_{k+1})."""

    times: np.ndarray

    def __post_init__(self) -> None:
        if len(self.times) < 2 or np.any(np.diff(self.times) <= 0.0):
            raise ValueError("partition times must be strictly increasing")

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


def uniform_partition(t0: float, t_f: float, step: float) -> Partition:
    """Uniform partition; a short leftover at the end is merged into the last
    interval so no step is shorter than half the nominal spacing."""
    if t_f <= t0:
        raise ValueError("empty time span")
    times = list(np.arange(t0, t_f, step))
    if len(times) >= 2 and (t_f - times[-1]) < 0.5 * step:
        times.pop()
    times.append(t_f)
    return Partition(times=np.array(times))


@dataclass
class DiscreteLinearModel:
    """Zero-order-hold discretization of the continuous model on a partition.

    Per step k: x_{k+1} = A_k x_k + B_k u_k + w_k with Cov(w_k) = W_k.
    Nominal longitudinal states and controls at the partition nodes ride
    along for gain-schedule assembly.
    """

    partition: Partition
    a: np.ndarray  # (N_p, 5, 5)
    b: np.ndarray  # (N_p, 5)
    w: np.ndarray  # (N_p, 5, 5)
    nominal_states: np.ndarray  # (N_p + 1, 5)
    nominal_control: np.ndarray  # (N_p + 1,)

    @property
    def n_steps(self) -> int:
        return self.partition.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.partition.times


class DiscretizationError(RuntimeError):
    pass


def _joint_step(
    model: ContinuousLinearModel,
    t: float,
    h: float,
    phi: np.ndarray,
    bacc: np.ndarray,
    wacc: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One RK4 step of the coupled transition/control/noise quadrature.

    d(Phi)/dt = A Phi;  d(Bacc)/dt = A Bacc + B;  d(Wacc)/dt = A Wacc +
    Wacc A^T + G G^T, all from the step's start node.
    """

    def rates(tt: float, y: tuple) -> tuple:
        a, b, g = model.interp(tt)
        phi_d = a @ y[0]
        b_d = a @ y[1] + b
        w_d = a @ y[2] + y[2] @ a.T + np.outer(g, g)
        return phi_d, b_d, w_d

    y = (phi, bacc, wacc)
    k1 = rates(t, y)
    y2 = tuple(v + 0.5 * h * d for v, d in zip(y, k1))
    k2 = rates(t + 0.5 * h, y2)
    y3 = tuple(v + 0.5 * h * d for v, d in zip(y, k2))
    k3 = rates(t + 0.5 * h, y3)
    y4 = tuple(v + h * d for v, d in zip(y, k3))
    k4 = rates(t + h, y4)
    return tuple(
        v + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        for v, d1, d2, d3, d4 in zip(y, k1, k2, k3, k4)
    )


def _integration_step(model: ContinuousLinearModel) -> float:
    diffs = np.diff(model.t)
    return float(np.median(diffs))


def state_transition(model: ContinuousLinearModel, t0: float, t1: float) -> np.ndarray:
    """State transition matrix over [t0, t1] by direct integration."""
    phi = np.eye(N_STATES)
    bacc = np.zeros(N_STATES)
    wacc = np.zeros((N_STATES, N_STATES))
    h_ref = _integration_step(model)
    n = max(1, round((t1 - t0) / h_ref))
    h = (t1 - t0) / n
    t = t0
    for _ in range(n):
        phi, bacc, wacc = _joint_step(model, t, h, phi, bacc, wacc)
        t += h
    return phi


def discretize(model: ContinuousLinearModel, partition: Partition) -> DiscreteLinearModel:
    """Integrate the transition, control-influence, and noise integrals
    jointly over every partition step at the reference grid resolution."""
    times = partition.times
    if times[0] < model.t[0] - 1e-9 or times[-1] > model.t[-1] + 1e-9:
        raise DiscretizationError("partition extends beyond the reference span")
    n_p = partition.n_steps
    a_k = np.empty((n_p, N_STATES, N_STATES))
    b_k = np.empty((n_p, N_STATES))
    w_k = np.empty((n_p, N_STATES, N_STATES))
    h_ref = _integration_step(model)
    for k in range(n_p):
        t_a, t_b = float(times[k]), float(times[k + 1])
        n = max(1, round((t_b - t_a) / h_ref))
        h = (t_b - t_a) / n
        phi = np.eye(N_STATES)
        bacc = np.zeros(N_STATES)
        wacc = np.zeros((N_STATES, N_STATES))
        t = t_a
        for _ in range(n):
            phi, bacc, wacc = _joint_step(model, t, h, phi, bacc, wacc)
            t += h
        if not np.all(np.isfinite(phi)):
            raise DiscretizationError(f"transition integration diverged at step {k}")
        a_k[k] = phi
        b_k[k] = bacc
        w_k[k] = 0.5 * (wacc + wacc.T)
    nominal_states = np.array(
        [model.ref.interp_longitudinal(float(t)) for t in times]
    )
    nominal_control = np.array(
        [float(np.interp(t, model.ref.t, model.ref.u_nom)) for t in times]
    )
    return DiscreteLinearModel(
        partition=partition,
        a=a_k,
        b=b_k,
        w=w_k,
        nominal_states=nominal_states,
        nominal_control=nominal_control,
    )


@dataclass
class CovarianceTrajectory:
    """Closed-loop second moments on the partition grid."""

    times: np.ndarray  # (N_p + 1,)
    p: np.ndarray  # (N_p + 1, 5, 5)
    var_u: np.ndarray  # (N_p,)

    @property
    def p_final(self) -> np.ndarray:
        return self.p[-1]


def _check_p0(p0: np.ndarray) -> np.ndarray:
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (N_STATES, N_STATES):
        raise ValueError("initial covariance must be 5x5")
    sym = 0.5 * (p0 + p0.T)
    min_eig = float(np.linalg.eigvalsh(sym).min())
    if min_eig < -1e-12 * max(np.trace(sym), 1.0):
        raise ValueError("initial covariance is not positive semidefinite")
    return sym


def gain_rows(model: DiscreteLinearModel, schedule) -> np.ndarray:
    """Resolve a gain schedule (or raw array) to one 5-row per partition step.

    Velocity-indexed schedules are sampled at the nominal velocity of each
    step's start node, mirroring how the pilot looks them up in flight.
    """
    n_p = model.n_steps
    if schedule is None:
        return np.zeros((n_p, N_STATES))
    if isinstance(schedule, np.ndarray):
        rows = schedule
    elif schedule.kind == "time":
        rows = schedule.gains
    else:
        rows = np.empty((n_p, N_STATES))
        for k in range(n_p):
            t_k = float(model.times[k])
            v_k = float(model.nominal_states[k, 1])
            rows[k] = schedule.row_at_velocity(v_k, t_k)
    if rows.shape != (n_p, N_STATES):
        raise ValueError(f"expected {n_p} gain rows of width {N_STATES}")
    return rows


def propagate_covariance(
    p0: np.ndarray, model: DiscreteLinearModel, gains
) -> CovarianceTrajectory:
    """Run the closed-loop covariance recursion
    P_{k+1} = (A_k + B_k K_k) P_k (A_k + B_k K_k)^T + W_k, recording the
    control variance K_k P_k K_k^T of every step."""
    rows = gain_rows(model, gains)
    n_p = model.n_steps
    p = np.empty((n_p + 1, N_STATES, N_STATES))
    var_u = np.empty(n_p)
    p[0] = _check_p0(p0)
    for k in range(n_p):
        k_row = rows[k]
        var_u[k] = float(k_row @ p[k] @ k_row)
        closed = model.a[k] + np.outer(model.b[k], k_row)
        nxt = closed @ p[k] @ closed.T + model.w[k]
        p[k + 1] = 0.5 * (nxt + nxt.T)
    return CovarianceTrajectory(times=model.times.copy(), p=p, var_u=var_u)


def save_discrete_model_json(model: DiscreteLinearModel, path: str | Path) -> None:
    """Dump the per-step matrices for debugging and cross-language checks."""
    doc = {
        "partition_times_s": [float(t) for t in model.times],
        "steps": [
            {
                "a": model.a[k].tolist(),
                "b": model.b[k].tolist(),
                "w": model.w[k].tolist(),
            }
            for k in range(model.n_steps)
        ],
        "nominal_states": model.nominal_states.tolist(),
        "nominal_control": model.nominal_control.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))
