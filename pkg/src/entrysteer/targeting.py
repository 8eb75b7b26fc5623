"""Great-circle targeting geometry.

Positions live on a sphere; the planet-fixed frame rotates by eta = eta0 +
Omega*t relative to inertial.  Downrange-to-go is the central angle between
the vehicle and the target; crossrange is the target's elevation out of the
instantaneous velocity great circle, positive when the target lies left of
the track (an eastbound vehicle with the target to the north has positive
crossrange).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import FullState

__all__ = [
    "TargetSpec",
    "inertial_position",
    "inertial_velocity",
    "downrange_crossrange",
    "signed_downrange_to_go",
]


@dataclass(frozen=True)
class TargetSpec:
    """Planet-fixed target point and the angle-to-distance convention."""

    theta: float  # longitude, rad
    phi: float  # latitude, rad
    eta0: float  # planet rotation angle at t = 0, rad
    reference_radius: float  # m, converts central angles to ground distance

    def __post_init__(self) -> None:
        if abs(self.phi) > 0.5 * math.pi:
            raise ValueError("target latitude must lie within +/-90 deg")
        if self.reference_radius <= 0.0:
            raise ValueError("reference radius must be positive")


def _position(r: float, theta: float, phi: float, eta: float) -> tuple[float, float, float]:
    ang = eta + theta
    cos_phi = math.cos(phi)
    return (r * cos_phi * math.cos(ang), r * cos_phi * math.sin(ang), r * math.sin(phi))


def _velocity(x: FullState, eta: float, omega: float) -> tuple[float, float, float]:
    # planet-relative velocity in the local up-east-north basis
    v_up = x.v * math.sin(x.gamma)
    v_east = x.v * math.cos(x.gamma) * math.sin(x.psi)
    v_north = x.v * math.cos(x.gamma) * math.cos(x.psi)
    ang = eta + x.theta
    sin_a, cos_a = math.sin(ang), math.cos(ang)
    sin_p, cos_p = math.sin(x.phi), math.cos(x.phi)
    vx = v_up * cos_a * cos_p - v_east * sin_a - v_north * cos_a * sin_p
    vy = v_up * sin_a * cos_p + v_east * cos_a - v_north * sin_a * sin_p
    vz = v_up * sin_p + v_north * cos_p
    # transport term from the rotating frame
    px, py, _ = _position(x.r, x.theta, x.phi, eta)
    return (vx - omega * py, vy + omega * px, vz)


def inertial_position(x: FullState, eta: float) -> np.ndarray:
    """Vehicle position in planet-centered inertial axes at rotation angle eta."""
    return np.array(_position(x.r, x.theta, x.phi, eta))


def inertial_velocity(x: FullState, eta: float, omega: float) -> np.ndarray:
    """Inertial velocity: rotated relative velocity plus the Omega cross term."""
    return np.array(_velocity(x, eta, omega))


def _angles(
    x: FullState, target: TargetSpec, t: float, omega: float
) -> tuple[float, float, float]:
    """(downrange-to-go, crossrange, signed along-track angle), all rad."""
    eta = target.eta0 + omega * t
    px, py, pz = _position(x.r, x.theta, x.phi, eta)
    vx, vy, vz = _velocity(x, eta, omega)
    hx = py * vz - pz * vy
    hy = pz * vx - px * vz
    hz = px * vy - py * vx
    h_norm = math.sqrt(hx * hx + hy * hy + hz * hz)
    if h_norm <= 1e-9 * x.r * max(x.v, 1.0):
        raise ValueError("degenerate geometry: angular momentum is numerically zero")
    hx, hy, hz = hx / h_norm, hy / h_norm, hz / h_norm
    rx, ry, rz = px / x.r, py / x.r, pz / x.r
    tx, ty, tz = _position(1.0, target.theta, target.phi, eta)
    along = tx * rx + ty * ry + tz * rz
    out = tx * hx + ty * hy + tz * hz
    delta_go = math.acos(min(1.0, max(-1.0, along)))
    eps = math.asin(min(1.0, max(-1.0, out)))
    # downrange axis completes the track triad: positive ahead of the vehicle
    dx = hy * rz - hz * ry
    dy = hz * rx - hx * rz
    dz = hx * ry - hy * rx
    signed = math.atan2(tx * dx + ty * dy + tz * dz, along)
    return delta_go, eps, signed


def downrange_crossrange(
    x: FullState, target: TargetSpec, t: float, omega: float
) -> tuple[float, float]:
    """Central angle to the target and its out-of-plane elevation (rad)."""
    delta_go, eps, _ = _angles(x, target, t, omega)
    return delta_go, eps


def signed_downrange_to_go(
    x: FullState, target: TargetSpec, t: float, omega: float
) -> float:
    """Along-track angle to the target (rad), negative once it is behind."""
    _, _, signed = _angles(x, target, t, omega)
    return signed
