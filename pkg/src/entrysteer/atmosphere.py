"""Random atmosphere model: exponential mean profile with an altitude-correlated
Ornstein-Uhlenbeck relative density variation.

The variation delta is driven in sink distance s (depth below the atmosphere
interface at r_atm), so a trajectory that descends, climbs, and descends again
sees a frozen field: values already generated are replayed on the way back
down.  Total density is rho = rhobar(s) * (1 + delta(s)).
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .tables import PiecewiseLinear

__all__ = [
    "AtmosphereModel",
    "VariationSample",
    "DensityPath",
    "load_profile_csv",
    "mean_density",
    "mean_density_at_depth",
    "ou_coefficients",
    "variation_variance",
    "sample_variation",
    "density_sde_coefficients",
]

# slack beyond the table domain tolerated before mean_density raises, so that
# finite-difference probes straddling the interface stay usable
_DOMAIN_SLACK = 500.0  # m


@dataclass(frozen=True)
class AtmosphereModel:
    """Mean profile plus OU variation parameters.

    r_atm, r_p: sensible-atmosphere edge and surface radii [m].
    scale_height: H(s) [m], piecewise linear in sink distance s = r_atm - r.
    stationary_variance: zeta_d(s), dimensionless variance the OU process
        relaxes to at depth s.
    surface_density: rhobar at r = r_p [kg/m^3].
    zeta0: variance of delta at the interface (s = 0).
    em_step: Euler-Maruyama grid step in sink distance [m].
    """

    r_atm: float
    r_p: float
    scale_height: PiecewiseLinear
    stationary_variance: PiecewiseLinear
    surface_density: float
    zeta0: float
    em_step: float = 100.0

    def __post_init__(self) -> None:
        if self.r_atm <= self.r_p:
            raise ValueError("r_atm must exceed r_p")
        if self.surface_density <= 0.0:
            raise ValueError("surface density must be positive")
        if self.zeta0 < 0.0:
            raise ValueError("zeta0 must be nonnegative")
        if self.em_step <= 0.0:
            raise ValueError("em_step must be positive")
        if any(h <= 0.0 for h in self.scale_height.y):
            raise ValueError("scale height must be positive")
        if any(z < 0.0 for z in self.stationary_variance.y):
            raise ValueError("stationary variance must be nonnegative")

    @property
    def depth(self) -> float:
        """Sink distance of the planet surface below the interface [m]."""
        return self.r_atm - self.r_p


@dataclass(frozen=True)
class VariationSample:
    """One OU variation path on a depth grid starting at the interface."""

    s_grid: np.ndarray
    delta_rho: np.ndarray


def load_profile_csv(
    path: str | Path,
    r_atm: float,
    r_p: float,
    surface_density: float,
    zeta0: float | None = None,
    em_step: float = 100.0,
) -> AtmosphereModel:
    """Read an atmosphere profile table.

    Expects a header row ``sink_distance_m,scale_height_m,variance`` followed
    by rows with strictly increasing sink distance.  When ``zeta0`` is omitted
    the table's variance at zero depth is used, which starts the variation
    process stationary.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:3]] != [
            "sink_distance_m",
            "scale_height_m",
            "variance",
        ]:
            raise ValueError(f"{path}: expected header sink_distance_m,scale_height_m,variance")
        rows = [(float(r[0]), float(r[1]), float(r[2])) for r in reader if r]
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two profile rows")
    s = tuple(r[0] for r in rows)
    scale_height = PiecewiseLinear(s, tuple(r[1] for r in rows))
    variance = PiecewiseLinear(s, tuple(r[2] for r in rows))
    if zeta0 is None:
        zeta0 = variance(0.0)
    return AtmosphereModel(
        r_atm=r_atm,
        r_p=r_p,
        scale_height=scale_height,
        stationary_variance=variance,
        surface_density=surface_density,
        zeta0=zeta0,
        em_step=em_step,
    )


@lru_cache(maxsize=8)
def _profile_cache(model: AtmosphereModel) -> tuple:
    """Cumulative integral of 1/H at the scale-height breakpoints plus the
    log-density anchor that pins the surface value.

    Per linear segment H = H_lo + b*(s - s_lo) the integral contribution is
    log(H_hi/H_lo)/b, or length/H for a flat segment.  Outside the table H is
    held constant, continuing the profile exponentially.
    """
    xs = model.scale_height.x
    ys = model.scale_height.y
    cumulative = [0.0]
    for i in range(len(xs) - 1):
        span = xs[i + 1] - xs[i]
        b = (ys[i + 1] - ys[i]) / span
        if b == 0.0:
            cumulative.append(cumulative[-1] + span / ys[i])
        else:
            cumulative.append(cumulative[-1] + math.log(ys[i + 1] / ys[i]) / b)
    # shift so the integral runs from s = 0 even if the table starts deeper
    head = xs[0] / ys[0]
    cumulative = tuple(c + head for c in cumulative)
    i_surface = _integral_from_nodes(xs, ys, cumulative, model.depth)
    log_anchor = math.log(model.surface_density) - i_surface
    return xs, ys, cumulative, log_anchor


def _integral_from_nodes(
    xs: tuple[float, ...], ys: tuple[float, ...], cumulative: tuple[float, ...], s: float
) -> float:
    if s <= xs[0]:
        return cumulative[0] + (s - xs[0]) / ys[0]
    if s >= xs[-1]:
        return cumulative[-1] + (s - xs[-1]) / ys[-1]
    i = bisect_right(xs, s) - 1
    b = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
    if b == 0.0:
        return cumulative[i] + (s - xs[i]) / ys[i]
    h_here = ys[i] + b * (s - xs[i])
    return cumulative[i] + math.log(h_here / ys[i]) / b


def mean_density_at_depth(s: float, model: AtmosphereModel) -> float:
    """Mean density at sink distance s below the interface."""
    xs, ys, cumulative, log_anchor = _profile_cache(model)
    return math.exp(log_anchor + _integral_from_nodes(xs, ys, cumulative, s))


def mean_density(r: float, model: AtmosphereModel) -> float:
    """Mean density at radius r.

    rhobar solves d(rhobar)/dr = -rhobar/H with rhobar(r_p) equal to the
    surface density; for constant H this reduces to the plain exponential
    rhobar_p * exp(-(r - r_p)/H).
    """
    if r < model.r_p - _DOMAIN_SLACK or r > model.r_atm + _DOMAIN_SLACK:
        raise ValueError(f"radius {r} m outside the modeled atmosphere")
    return mean_density_at_depth(model.r_atm - r, model)


def ou_coefficients(s: float, model: AtmosphereModel) -> tuple[float, float]:
    """Reversion rate and diffusion intensity (lam, phi) of the variation at s.

    lam = 2/H ties the correlation length to the local scale height;
    phi = 4*zeta_d/H makes zeta_d(s) the local stationary variance
    (phi*H/4 recovers zeta_d identically).
    """
    h = model.scale_height(s)
    lam = 2.0 / h
    phi = 4.0 * model.stationary_variance(s) / h
    return lam, phi


def _variance_ode_grid(
    lam_phi, zeta0: float, s_end: float, step: float
) -> tuple[np.ndarray, np.ndarray]:
    """RK4 solution of d(zeta)/ds = -2*lam*zeta + phi on a uniform grid."""

    def rate(s: float, z: float) -> float:
        lam, phi = lam_phi(s)
        return -2.0 * lam * z + phi

    n = max(1, math.ceil(s_end / step))
    h = s_end / n
    s_grid = np.empty(n + 1)
    zeta_grid = np.empty(n + 1)
    s, zeta = 0.0, zeta0
    s_grid[0], zeta_grid[0] = s, zeta
    for i in range(n):
        k1 = rate(s, zeta)
        k2 = rate(s + 0.5 * h, zeta + 0.5 * h * k1)
        k3 = rate(s + 0.5 * h, zeta + 0.5 * h * k2)
        k4 = rate(s + h, zeta + h * k3)
        zeta += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s += h
        s_grid[i + 1], zeta_grid[i + 1] = s, zeta
    return s_grid, zeta_grid


@lru_cache(maxsize=8)
def _variance_solution(model: AtmosphereModel) -> tuple[np.ndarray, np.ndarray]:
    return _variance_ode_grid(
        lambda s: ou_coefficients(s, model), model.zeta0, model.depth, model.em_step
    )


def variation_variance(s: float, model: AtmosphereModel) -> float:
    """Variance of the OU variation at sink distance s.

    Solves the moment equation d(zeta)/ds = -2*lam*zeta + phi from
    zeta(0) = zeta0; values between solver nodes are linearly interpolated.
    """
    if s < 0.0:
        raise ValueError("sink distance must be nonnegative")
    s_grid, zeta_grid = _variance_solution(model)
    if s >= s_grid[-1]:
        return float(zeta_grid[-1])
    return float(np.interp(s, s_grid, zeta_grid))


def sample_variation(s_grid: np.ndarray, seed: int, model: AtmosphereModel) -> VariationSample:
    """Draw one OU variation path by Euler-Maruyama on the given depth grid.

    The initial value is N(0, zeta0), the stream is a counter-based generator
    keyed by the seed alone, and one normal increment is consumed per grid
    interval with coefficients frozen at the left node.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    if s_grid.ndim != 1 or len(s_grid) < 1:
        raise ValueError("s_grid must be a 1-d array")
    if s_grid[0] != 0.0:
        raise ValueError("s_grid must start at 0")
    if np.any(np.diff(s_grid) <= 0.0):
        raise ValueError("s_grid must be strictly increasing")
    rng = np.random.Generator(np.random.Philox(seed))
    n = len(s_grid)
    noise = rng.standard_normal(n)
    delta = np.empty(n)
    delta[0] = math.sqrt(model.zeta0) * noise[0] if model.zeta0 > 0.0 else 0.0
    value = delta[0]
    for i in range(n - 1):
        s = s_grid[i]
        ds = s_grid[i + 1] - s
        lam, phi = ou_coefficients(s, model)
        value = (1.0 - lam * ds) * value + math.sqrt(phi * ds) * noise[i + 1]
        delta[i + 1] = value
    return VariationSample(s_grid=s_grid, delta_rho=delta)


def density_sde_coefficients(
    s: float, rho: float, model: AtmosphereModel
) -> tuple[float, float]:
    """Drift and diffusion of total density with respect to sink distance.

    The chain rule on rho = rhobar(s)*(1 + delta(s)) gives
    f = (1/H - lam)*rho + lam*rhobar and g = rhobar*sqrt(phi).
    """
    h = model.scale_height(s)
    rhobar = mean_density_at_depth(s, model)
    lam, phi = ou_coefficients(s, model)
    f = (1.0 / h - lam) * rho + lam * rhobar
    g = rhobar * math.sqrt(phi)
    return f, g


class DensityPath:
    """Lazily generated density realization for one trajectory.

    The OU variation is stepped on a fixed depth grid only when the query
    depth exceeds the deepest point generated so far; shallower queries
    interpolate the stored path.  This freezes the field so climbs replay
    what was already seen, and makes a trial's draw count depend only on the
    deepest point reached.
    """

    def __init__(self, model: AtmosphereModel, rng: np.random.Generator) -> None:
        self._model = model
        self._rng = rng
        self._step = model.em_step
        first = rng.normal(0.0, math.sqrt(model.zeta0)) if model.zeta0 > 0.0 else 0.0
        self._delta: list[float] = [float(first)]
        self._scale_height = model.scale_height
        self._stationary_variance = model.stationary_variance

    def _extend_to(self, s: float) -> None:
        delta = self._delta
        step = self._step
        normal = self._rng.normal
        while (len(delta) - 1) * step < s:
            s_i = (len(delta) - 1) * step
            h = self._scale_height(s_i)
            lam = 2.0 / h
            phi = 4.0 * self._stationary_variance(s_i) / h
            delta.append((1.0 - lam * step) * delta[-1] + math.sqrt(phi * step) * normal())

    def variation(self, s: float) -> float:
        """OU variation delta at sink distance s (frozen-field interpolation)."""
        if s <= 0.0:
            return self._delta[0]
        self._extend_to(s)
        u = s / self._step
        i = int(u)
        if i >= len(self._delta) - 1:
            return self._delta[-1]
        w = u - i
        return self._delta[i] * (1.0 - w) + self._delta[i + 1] * w

    def density(self, s: float) -> float:
        """Total density rhobar*(1 + delta) at sink distance s."""
        return mean_density_at_depth(s, self._model) * (1.0 + self.variation(s))
