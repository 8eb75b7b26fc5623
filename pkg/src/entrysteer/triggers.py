"""Stopping-time triggers.

Entry guidance does not end at a clock time: integration stops when a state
crossing occurs (velocity falling through a threshold, for the scenarios
here).  The stopping time is random under dispersions, and to first order the
state at the crossing is an oblique projection of the fixed-time state, x(T)
~ Z_f x(t_f), with Z_f annihilating motion along the nominal terminal drift.
This module holds the trigger description, crossing detection on sampled
trajectories, the projection Z_f, and the induced weight transforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TriggerSpec",
    "TriggerTransform",
    "DegenerateTriggerError",
    "TriggerNotReached",
    "trigger_transform",
    "transformed_weight",
    "detect_crossing",
    "stopping_time_variance",
]

FIXED_TIME = "fixed-time"
HYPERPLANE = "hyperplane"

_TRANSVERSALITY_TOL = 1e-9


class DegenerateTriggerError(ValueError):
    """Nominal terminal motion is (numerically) parallel to the trigger surface."""


class TriggerNotReached(RuntimeError):
    """The trajectory never crossed the trigger surface."""


@dataclass(frozen=True)
class TriggerSpec:
    """Stopping condition: first time nu^T x drops to beta.

    kind "hyperplane" uses the state functional; kind "fixed-time" stops at
    t = beta and ignores nu.  margin() is positive strictly before the stop,
    so integrators can bracket the crossing by a sign change.
    """

    kind: str
    nu: tuple[float, ...] = ()
    beta: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in (FIXED_TIME, HYPERPLANE):
            raise ValueError(f"unknown trigger kind {self.kind!r}")
        nu = tuple(float(v) for v in self.nu)
        object.__setattr__(self, "nu", nu)
        if self.kind == HYPERPLANE:
            if not nu or not any(v != 0.0 for v in nu):
                raise ValueError("hyperplane trigger needs a nonzero normal")

    def margin(self, t: float, x) -> float:
        if self.kind == FIXED_TIME:
            return self.beta - t
        return sum(n * xi for n, xi in zip(self.nu, x)) - self.beta

    @property
    def normal(self) -> np.ndarray:
        return np.array(self.nu, dtype=float)


def velocity_trigger(v_stop: float, n_states: int = 5) -> TriggerSpec:
    """Stop when velocity falls to v_stop (state layout r, V, gamma, ...)."""
    nu = [0.0] * n_states
    nu[1] = 1.0
    return TriggerSpec(kind=HYPERPLANE, nu=tuple(nu), beta=v_stop)


@dataclass(frozen=True)
class TriggerTransform:
    """Oblique projection onto the trigger surface along the terminal drift.

    z maps fixed-time dispersions to stopping-time dispersions:
    Cov(x(T)) ~ z P(t_f) z^T.  For a fixed-time trigger z is the identity.
    """

    z: np.ndarray
    f_hat: np.ndarray
    nu: np.ndarray | None = field(default=None)

    def terminal_covariance(self, p_f: np.ndarray) -> np.ndarray:
        cov = self.z @ np.asarray(p_f, dtype=float) @ self.z.T
        return 0.5 * (cov + cov.T)

    def pullback(self, a_ft: np.ndarray) -> np.ndarray:
        return self.z.T @ np.asarray(a_ft, dtype=float)


def _normal_of(spec_or_nu) -> tuple[np.ndarray | None, bool]:
    """Accept a TriggerSpec or a bare normal vector; None normal = fixed time."""
    if isinstance(spec_or_nu, TriggerSpec):
        if spec_or_nu.kind == FIXED_TIME:
            return None, True
        return spec_or_nu.normal, False
    return np.asarray(spec_or_nu, dtype=float), False


def trigger_transform(spec_or_nu, f_hat) -> TriggerTransform:
    """Build Z = I - f_hat nu^T / (nu^T f_hat) from the trigger normal and the
    nominal terminal drift.  Raises DegenerateTriggerError when the drift is
    numerically tangent to the trigger surface."""
    f_hat = np.asarray(f_hat, dtype=float)
    nu, is_fixed_time = _normal_of(spec_or_nu)
    if is_fixed_time:
        return TriggerTransform(z=np.eye(len(f_hat)), f_hat=f_hat, nu=None)
    if nu.shape != f_hat.shape:
        raise ValueError("trigger normal and drift dimensions differ")
    nf = float(nu @ f_hat)
    scale = float(np.linalg.norm(nu) * np.linalg.norm(f_hat))
    if scale == 0.0 or abs(nf) <= _TRANSVERSALITY_TOL * scale:
        raise DegenerateTriggerError(
            f"nu.f_hat = {nf:.3e} is too small relative to |nu||f_hat| = {scale:.3e}"
        )
    z = np.eye(len(f_hat)) - np.outer(f_hat, nu) / nf
    return TriggerTransform(z=z, f_hat=f_hat, nu=nu)


def transformed_weight(a_ft, transform: TriggerTransform) -> np.ndarray:
    """Pull a terminal-state weight back through the stopping-time projection."""
    return transform.pullback(np.asarray(a_ft, dtype=float))


def _as_arrays(trajectory) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(trajectory, tuple):
        times, states = trajectory
        return np.asarray(times, dtype=float), np.asarray(states, dtype=float)
    # a reference trajectory: sample its longitudinal states
    times = np.asarray(trajectory.t, dtype=float)
    states = np.column_stack(
        [trajectory.r, trajectory.v, trajectory.gamma, trajectory.downrange,
         trajectory.density]
    )
    return times, states


def detect_crossing(trajectory, spec: TriggerSpec) -> tuple[float, np.ndarray]:
    """First crossing of the trigger on a sampled trajectory.

    ``trajectory`` is either a (times, states) pair with states row-per-node,
    or a reference trajectory object.  The crossing is located by linear
    interpolation inside the first bracketing step; a fixed-time spec
    interpolates the state at exactly t = beta.
    """
    times, states = _as_arrays(trajectory)
    if spec.kind == FIXED_TIME:
        t_f = spec.beta
        if t_f < times[0] or t_f > times[-1]:
            raise TriggerNotReached(
                f"fixed time {t_f} s outside trajectory span "
                f"[{times[0]}, {times[-1]}] s"
            )
        x = np.array([np.interp(t_f, times, states[:, j]) for j in range(states.shape[1])])
        return float(t_f), x
    margins = states @ spec.normal - spec.beta
    if margins[0] <= 0.0:
        raise ValueError("trajectory starts at or past the trigger surface")
    below = np.nonzero(margins <= 0.0)[0]
    if len(below) == 0:
        raise TriggerNotReached(
            f"trigger value never reached {spec.beta}; final value "
            f"{margins[-1] + spec.beta}"
        )
    i = int(below[0])
    w = margins[i - 1] / (margins[i - 1] - margins[i])
    t_hit = times[i - 1] + w * (times[i] - times[i - 1])
    x_hit = states[i - 1] + w * (states[i] - states[i - 1])
    return float(t_hit), x_hit


def stopping_time_variance(spec_or_nu, f_hat, p_f) -> float:
    """First-order variance of the stopping time:
    (nu^T f_hat)^-2 nu^T P_f nu.  Zero for a fixed-time trigger."""
    nu, is_fixed_time = _normal_of(spec_or_nu)
    if is_fixed_time:
        return 0.0
    f_hat = np.asarray(f_hat, dtype=float)
    nf = float(nu @ f_hat)
    scale = float(np.linalg.norm(nu) * np.linalg.norm(f_hat))
    if scale == 0.0 or abs(nf) <= _TRANSVERSALITY_TOL * scale:
        raise DegenerateTriggerError(f"nu.f_hat = {nf:.3e} too small")
    return float(nu @ np.asarray(p_f, dtype=float) @ nu) / (nf * nf)
