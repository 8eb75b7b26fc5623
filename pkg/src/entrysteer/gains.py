"""Feedback-gain synthesis for the longitudinal channel.

Three layers live here.  chance_bound turns a probabilistic inequality on a
Gaussian scalar into a plain standard-deviation bound.  lqg_gains runs the
discrete backward recursion for a terminal-cost LQ problem with scalar
control.  synthesize_stochastic_gains wraps that recursion in an outer
search over the terminal weight and control weights: the optimal weights
have the form Q = a_f a_f^T + sum_i xi_i d_i d_i^T and R_k = r_k + xi_u, so
the search runs over the nonnegative multipliers xi instead of full
matrices, with penalty terms enforcing the variance bounds.  apollo_gains
provides the classical adjoint-based comparison controller.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import erfinv

from .lincov import (
    ContinuousLinearModel,
    CovarianceTrajectory,
    DiscreteLinearModel,
    N_STATES,
    propagate_covariance,
)

__all__ = [
    "StateConstraint",
    "ConstraintSet",
    "RangeCost",
    "LQWeights",
    "GainSchedule",
    "SynthesisError",
    "SynthesisReport",
    "chance_bound",
    "lqg_gains",
    "lq_cost",
    "range_cost_value",
    "synthesize_stochastic_gains",
    "apollo_gains",
    "save_gain_schedule_csv",
    "load_gain_schedule_csv",
]


class SynthesisError(RuntimeError):
    """Gain synthesis failed (singular recursion or empty usable span)."""


def chance_bound(delta: float, p: float) -> float:
    """Largest standard deviation such that a zero-mean Gaussian stays inside
    [-delta, delta] except with probability p: delta / (sqrt(2) erfinv(1-p)).
    p = 1 disables the constraint (returns +inf)."""
    if delta <= 0.0:
        raise ValueError("constraint width must be positive")
    if not 0.0 < p <= 1.0:
        raise ValueError("violation probability must lie in (0, 1]")
    if p == 1.0:
        return math.inf
    return delta / (math.sqrt(2.0) * float(erfinv(1.0 - p)))


@dataclass(frozen=True)
class StateConstraint:
    """Two-sided bound on a terminal linear functional: |d^T x| <= delta with
    violation probability at most p."""

    d: tuple[float, ...]
    delta: float
    p: float
    label: str = ""

    def __post_init__(self) -> None:
        if self.delta <= 0.0:
            raise ValueError("constraint width must be positive")
        if not 0.0 < self.p <= 1.0:
            raise ValueError("violation probability must lie in (0, 1]")
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))

    @property
    def sigma_bound(self) -> float:
        return chance_bound(self.delta, self.p)


@dataclass
class ConstraintSet:
    """Terminal-state constraints plus a per-step control-correction bound.

    control_delta is the saturation margin for each partition step (scalar or
    length-N_p array); control_p the allowed per-step saturation probability.
    """

    state: tuple[StateConstraint, ...] = ()
    control_delta: np.ndarray | float = 1.0
    control_p: float = 1.0

    def __post_init__(self) -> None:
        self.state = tuple(self.state)
        if not 0.0 < self.control_p <= 1.0:
            raise ValueError("violation probability must lie in (0, 1]")
        if np.any(np.asarray(self.control_delta, dtype=float) <= 0.0):
            raise ValueError("control margins must be positive")

    def control_sigma_bounds(self, n_steps: int) -> np.ndarray:
        """Per-step standard-deviation bound on the control correction."""
        delta = np.broadcast_to(
            np.asarray(self.control_delta, dtype=float), (n_steps,)
        )
        if self.control_p == 1.0:
            return np.full(n_steps, math.inf)
        scale = math.sqrt(2.0) * float(erfinv(1.0 - self.control_p))
        return delta / scale


@dataclass
class RangeCost:
    """Objective for the outer synthesis: terminal error along a_f plus
    control effort weighted by r (scalar or per step, >= 0)."""

    a_f: np.ndarray
    r: np.ndarray | float

    def __post_init__(self) -> None:
        self.a_f = np.asarray(self.a_f, dtype=float)
        if self.a_f.shape != (N_STATES,):
            raise ValueError("terminal weight must be a 5-vector")
        if np.any(np.asarray(self.r, dtype=float) < 0.0):
            raise ValueError("control weight must be nonnegative")

    def r_vector(self, n_steps: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.r, dtype=float), (n_steps,)).copy()


@dataclass
class LQWeights:
    """Inner-problem weights: terminal Q (PSD) and per-step control R (> 0)."""

    q: np.ndarray
    r: np.ndarray | float

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=float)
        if self.q.shape != (N_STATES, N_STATES):
            raise ValueError("terminal weight must be 5x5")
        sym = 0.5 * (self.q + self.q.T)
        if float(np.linalg.eigvalsh(sym).min()) < -1e-8 * max(np.trace(sym), 1.0):
            raise ValueError("terminal weight must be positive semidefinite")
        self.q = sym
        if np.any(np.asarray(self.r, dtype=float) <= 0.0):
            raise ValueError("control weight must be positive")

    def r_vector(self, n_steps: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.r, dtype=float), (n_steps,)).copy()


@dataclass
class GainSchedule:
    """Piecewise feedback law u = u_nom + K (x - x_nom).

    Time-indexed: breakpoints are the N_p + 1 partition times, row k applies
    on [t_k, t_{k+1}), and corrections use the nominal state at the step's
    start node.  Velocity-indexed: breakpoints are ascending nominal
    velocities, rows and nominal tables are interpolated at the current
    velocity, and corrections are zero before engage_time (nominal velocity
    is not yet monotone there, so the lookup would be ill-posed).
    """

    kind: str
    breakpoints: np.ndarray
    gains: np.ndarray
    nominal_states: np.ndarray
    nominal_control: np.ndarray
    engage_time: float | None = None
    _bp: list = field(init=False, repr=False)
    _gain_cols: list = field(init=False, repr=False)
    _state_cols: list = field(init=False, repr=False)
    _u_col: list = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in ("time", "velocity"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.gains = np.asarray(self.gains, dtype=float)
        self.nominal_states = np.asarray(self.nominal_states, dtype=float)
        self.nominal_control = np.asarray(self.nominal_control, dtype=float)
        n_bp = len(self.breakpoints)
        if np.any(np.diff(self.breakpoints) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        expected_rows = n_bp - 1 if self.kind == "time" else n_bp
        if self.gains.shape != (expected_rows, N_STATES):
            raise ValueError(
                f"expected {expected_rows} gain rows for a {self.kind} schedule"
            )
        if self.nominal_states.shape != (n_bp, N_STATES):
            raise ValueError("nominal state table must match the breakpoints")
        if self.nominal_control.shape != (n_bp,):
            raise ValueError("nominal control table must match the breakpoints")
        # plain-float caches: the flight loop calls these hundreds of times
        self._bp = [float(v) for v in self.breakpoints]
        self._gain_cols = [list(map(float, col)) for col in self.gains.T]
        self._state_cols = [list(map(float, col)) for col in self.nominal_states.T]
        self._u_col = list(map(float, self.nominal_control))

    @property
    def n_steps(self) -> int:
        return len(self.gains)

    def row_index(self, t: float) -> int:
        """Partition step containing t (time-indexed schedules only)."""
        if self.kind != "time":
            raise ValueError("row_index applies to time-indexed schedules")
        i = bisect_right(self._bp, t + 1e-9) - 1
        return min(max(i, 0), self.n_steps - 1)

    def _locate(self, xq: float) -> tuple[int, float]:
        bp = self._bp
        if xq <= bp[0]:
            return 0, 0.0
        if xq >= bp[-1]:
            return len(bp) - 2, 1.0
        i = bisect_right(bp, xq) - 1
        return i, (xq - bp[i]) / (bp[i + 1] - bp[i])

    def feedforward(self, t: float, v: float) -> float:
        """Nominal bank cosine, interpolated at time (time kind) or at the
        current velocity (velocity kind)."""
        i, w = self._locate(t if self.kind == "time" else v)
        u = self._u_col
        return u[i] + w * (u[i + 1] - u[i])

    def correction(self, t: float, x) -> float:
        """Linear feedback term K (x - x_nom) for the flight state x."""
        if self.kind == "time":
            k = self.row_index(t)
            row = [col[k] for col in self._gain_cols]
            ref = [col[k] for col in self._state_cols]
        else:
            if self.engage_time is not None and t < self.engage_time:
                return 0.0
            i, w = self._locate(x[1])
            row = [col[i] + w * (col[i + 1] - col[i]) for col in self._gain_cols]
            ref = [col[i] + w * (col[i + 1] - col[i]) for col in self._state_cols]
        return sum(g * (xi - ri) for g, xi, ri in zip(row, x, ref))

    def row_at_velocity(self, v: float, t: float) -> np.ndarray:
        """Interpolated gain row at a velocity (velocity-indexed schedules);
        zero before engage_time."""
        if self.kind != "velocity":
            raise ValueError("row_at_velocity applies to velocity-indexed schedules")
        if self.engage_time is not None and t < self.engage_time:
            return np.zeros(N_STATES)
        i, w = self._locate(v)
        return self.gains[i] * (1.0 - w) + self.gains[i + 1] * w


def _factor_rows(q: np.ndarray) -> np.ndarray:
    """Rows c with q = c.T @ c, dropping null directions."""
    w, v = np.linalg.eigh(0.5 * (q + q.T))
    top = float(w.max()) if w.size else 0.0
    if top <= 0.0:
        return np.zeros((0, q.shape[0]))
    keep = w > 1e-15 * top
    return (v[:, keep] * np.sqrt(w[keep])).T


def _backward_gains(
    a: np.ndarray, b: np.ndarray, q: np.ndarray, r_vec: np.ndarray
) -> np.ndarray:
    """Backward sweep of the terminal-cost LQ recursion with scalar control.

    S_N = Q; K_k = -(B^T S B + R)^{-1} B^T S A; S_k = A^T S A - K^T (R +
    B^T S B) K.  The cost-to-go is carried in square-root form S = C^T C,
    with the Schur complement applied as a rank-1 downdate of the factor;
    that keeps S positive semidefinite at any weight scale, where the raw
    recursion loses definiteness to cancellation."""
    n_p = len(a)
    krows = np.empty((n_p, N_STATES))
    c = _factor_rows(q)
    for k in range(n_p - 1, -1, -1):
        rk = float(r_vec[k])
        if rk <= 0.0:
            raise SynthesisError(f"singular control weighting at step {k}")
        m = c @ a[k]
        y = c @ b[k]
        yy = float(y @ y)
        denom = yy + rk
        ym = y @ m
        krows[k] = -ym / denom
        if yy > 0.0:
            # (I - beta y y^T) M factors I - y y^T / denom exactly
            beta = (1.0 - math.sqrt(rk / denom)) / yy
            c = m - beta * np.outer(y, ym)
        else:
            c = m
    return krows


def lqg_gains(model: DiscreteLinearModel, weights: LQWeights) -> GainSchedule:
    """Terminal-cost LQ feedback on the model's partition."""
    r_vec = weights.r_vector(model.n_steps)
    krows = _backward_gains(model.a, model.b, weights.q, r_vec)
    return GainSchedule(
        kind="time",
        breakpoints=model.times,
        gains=krows,
        nominal_states=model.nominal_states,
        nominal_control=model.nominal_control,
    )


def _closed_loop_stats(
    p0: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    w: np.ndarray,
    krows: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Terminal covariance and per-step control variances (lean inner loop)."""
    p = 0.5 * (p0 + p0.T)
    n_p = len(a)
    var_u = np.empty(n_p)
    for k in range(n_p):
        krow = krows[k]
        var_u[k] = float(krow @ p @ krow)
        closed = a[k] + np.outer(b[k], krow)
        p = closed @ p @ closed.T + w[k]
        p = 0.5 * (p + p.T)
    return p, var_u


def lq_cost(
    p0: np.ndarray,
    model: DiscreteLinearModel,
    gains,
    q: np.ndarray,
    r,
) -> float:
    """Expected quadratic cost tr(Q P_N) + sum_k R_k Var(u_k) under the given
    feedback, including process noise."""
    from .lincov import gain_rows

    krows = gain_rows(model, gains)
    p_f, var_u = _closed_loop_stats(p0, model.a, model.b, model.w, krows)
    r_vec = np.broadcast_to(np.asarray(r, dtype=float), (model.n_steps,))
    return float(np.trace(q @ p_f)) + float(r_vec @ var_u)


def range_cost_value(
    p0: np.ndarray, model: DiscreteLinearModel, gains, cost: RangeCost
) -> float:
    """The outer objective: a_f^T P_N a_f + sum_k r_k Var(u_k)."""
    return lq_cost(p0, model, gains, np.outer(cost.a_f, cost.a_f), cost.r)


@dataclass
class SynthesisReport:
    """Constraint margins and optimizer diagnostics from the outer search.

    Margins are normalized: 1 - sigma/bound, nonnegative when satisfied.
    objective_history holds one list per penalty round, each the sequence of
    accepted (incumbent) penalized objective values, non-increasing within a
    round.
    """

    feasible: bool
    state_sigmas: np.ndarray
    state_bounds: np.ndarray
    state_margins: np.ndarray
    control_sigma_max: float
    control_margin: float
    xi_state: np.ndarray
    xi_control: np.ndarray
    j_range: float
    j_reference: float
    penalty_rounds: int
    n_evaluations: int
    objective_history: list[list[float]]
    warning: str | None = None


def _control_segments(model: DiscreteLinearModel, n_segments: int) -> np.ndarray:
    """Map each partition step to a control-weight segment; -1 where the
    control column is identically zero (no weight can matter there)."""
    active = np.array([float(np.abs(model.b[k]).max()) > 0.0 for k in range(model.n_steps)])
    seg = np.full(model.n_steps, -1, dtype=int)
    idx = np.nonzero(active)[0]
    if len(idx) == 0:
        return seg
    n_seg = min(n_segments, len(idx))
    for j, k in enumerate(idx):
        seg[k] = j * n_seg // len(idx)
    return seg


def synthesize_stochastic_gains(
    model: DiscreteLinearModel,
    p0: np.ndarray,
    cost: RangeCost,
    constraints: ConstraintSet,
    n_control_segments: int = 8,
    penalty_start: float = 1e2,
    penalty_growth: float = 10.0,
    max_penalty_rounds: int = 3,
    max_evaluations_per_round: int = 1500,
) -> tuple[GainSchedule, CovarianceTrajectory, SynthesisReport]:
    """Feedback gains minimizing the range cost subject to variance bounds.

    The terminal weight is searched within Q = a_f a_f^T + sum_i xi_i d_i
    d_i^T and the control weight within R_k = r_k + xi_u(segment of k), xi >=
    0, which is the structure the constrained optimum takes: the xi are the
    Lagrange multipliers of the variance bounds, and for fixed xi the inner
    minimization over gains is exactly an LQ solve with the inflated weights.
    The dual function (inner minimum plus the weighted constraint residuals)
    is concave in xi and its supergradient is the residual vector itself, so
    the multipliers are found by bound-constrained quasi-Newton ascent.  A
    final polish inflates the multipliers of any residually violated
    constraint, then releases multipliers that can shrink without losing
    feasibility or raising the cost.
    """
    p0 = np.asarray(p0, dtype=float)
    n_p = model.n_steps
    r_range = cost.r_vector(n_p)
    a_f = cost.a_f
    q_base = np.outer(a_f, a_f)

    state_cons = [c for c in constraints.state if c.p < 1.0]
    d_mat = np.array([c.d for c in state_cons]).reshape(len(state_cons), N_STATES)
    d_bounds2 = np.array([c.sigma_bound**2 for c in state_cons])
    u_bounds2 = constraints.control_sigma_bounds(n_p) ** 2
    control_on = bool(np.any(np.isfinite(u_bounds2)))
    seg = _control_segments(model, n_control_segments) if control_on else np.full(n_p, -1)
    n_seg = int(seg.max()) + 1 if control_on else 0
    n_x = len(state_cons)

    def build_weights(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = q_base.copy()
        for i in range(n_x):
            q += xi[i] * np.outer(d_mat[i], d_mat[i])
        r_vec = r_range.copy()
        for k in range(n_p):
            if seg[k] >= 0:
                r_vec[k] += xi[n_x + seg[k]]
        return q, r_vec

    evaluations = 0

    def evaluate(xi: np.ndarray) -> tuple[float, float, np.ndarray, np.ndarray]:
        """Returns (range cost, total normalized violation, P_N, var_u)."""
        nonlocal evaluations
        evaluations += 1
        q, r_vec = build_weights(xi)
        krows = _backward_gains(model.a, model.b, q, r_vec)
        p_f, var_u = _closed_loop_stats(p0, model.a, model.b, model.w, krows)
        j = float(a_f @ p_f @ a_f) + float(r_range @ var_u)
        viol = 0.0
        for i in range(n_x):
            viol += max(0.0, float(d_mat[i] @ p_f @ d_mat[i]) / d_bounds2[i] - 1.0)
        if control_on:
            finite = np.isfinite(u_bounds2)
            viol += float(np.sum(np.maximum(0.0, var_u[finite] / u_bounds2[finite] - 1.0)))
        return j, viol, p_f, var_u

    # unconstrained reference solves the problem outright when nothing binds
    xi_zero = np.zeros(n_x + n_seg)
    j_ref, viol_ref, _, _ = evaluate(xi_zero)
    j_scale = j_ref if j_ref > 0.0 else 1.0

    def finalize(xi: np.ndarray, rounds: int, history, warning=None):
        q, r_vec = build_weights(xi)
        schedule = lqg_gains(model, LQWeights(q=q, r=r_vec))
        cov = propagate_covariance(p0, model, schedule)
        p_f = cov.p_final
        sigmas = np.sqrt(np.maximum(0.0, np.einsum("ij,jk,ik->i", d_mat, p_f, d_mat))) \
            if n_x else np.zeros(0)
        bounds = np.sqrt(d_bounds2)
        margins = 1.0 - sigmas / bounds if n_x else np.zeros(0)
        sig_u = np.sqrt(np.maximum(0.0, cov.var_u))
        finite = np.isfinite(u_bounds2)
        if control_on and np.any(finite):
            ratios = sig_u[finite] / np.sqrt(u_bounds2[finite])
            control_margin = float(1.0 - ratios.max())
            control_sigma_max = float(sig_u[finite].max())
        else:
            control_margin = math.inf
            control_sigma_max = float(sig_u.max()) if n_p else 0.0
        feasible = bool(
            (margins >= -1e-9).all() and (control_margin >= -1e-9 or not control_on)
        )
        report = SynthesisReport(
            feasible=feasible,
            state_sigmas=sigmas,
            state_bounds=bounds,
            state_margins=margins,
            control_sigma_max=control_sigma_max,
            control_margin=control_margin,
            xi_state=xi[:n_x].copy(),
            xi_control=xi[n_x:].copy(),
            j_range=range_cost_value(p0, model, schedule, cost),
            j_reference=j_ref,
            penalty_rounds=rounds,
            n_evaluations=evaluations,
            objective_history=history,
            warning=warning,
        )
        return schedule, cov, report

    if n_x == 0 and not control_on:
        return finalize(xi_zero, rounds=0, history=[])
    if viol_ref <= 0.0:
        # already feasible with zero multipliers: nothing can do better
        return finalize(xi_zero, rounds=0, history=[[1.0]])

    # starting multipliers: a constraint violated at the reference enters Q at
    # roughly a tenth of the terminal-cost scale; one already holding starts
    # near zero so the search is not biased away from the reference optimum
    _, _, p_ref, var_ref = evaluate(xi_zero)
    xi_hot = np.empty(n_x + n_seg)
    xi0 = np.empty(n_x + n_seg)
    for i in range(n_x):
        var_i = max(float(d_mat[i] @ p_ref @ d_mat[i]), 1e-300)
        xi_hot[i] = 0.1 * j_scale / var_i
        xi0[i] = xi_hot[i] if var_i > d_bounds2[i] else xi_hot[i] * 1e-8
    if n_seg:
        r_typ = float(np.median(r_range[seg >= 0])) if np.any(seg >= 0) else 1.0
        xi_hot[n_x:] = max(r_typ, 1e-12)
        for s in range(n_seg):
            on = (seg == s) & np.isfinite(u_bounds2)
            hot = bool(np.any(var_ref[on] > u_bounds2[on])) if np.any(on) else False
            xi0[n_x + s] = xi_hot[n_x + s] if hot else xi_hot[n_x + s] * 1e-8

    # dual ascent over scaled multipliers: zeta_i = xi_i * bound_i^2 / j_scale
    # for state bounds and zeta_s = xi_s * (segment sum of control bounds) /
    # j_scale, so every component of the dual gradient is a dimensionless
    # violation residual of order one
    seg_u2 = np.array([
        float(np.sum(u_bounds2[(seg == s) & np.isfinite(u_bounds2)]))
        for s in range(n_seg)
    ]) if n_seg else np.zeros(0)
    state_scale = j_scale / d_bounds2 if n_x else np.zeros(0)
    ctrl_scale = np.where(seg_u2 > 0.0, j_scale / np.maximum(seg_u2, 1e-300), 0.0)
    scale = np.concatenate([state_scale, ctrl_scale])

    accepted: list[float] = []
    incumbent = [math.inf]

    def neg_dual(zeta: np.ndarray) -> tuple[float, np.ndarray]:
        zeta = np.maximum(zeta, 0.0)
        j, _, p_f, var_u = evaluate(zeta * scale)
        grad = np.empty(n_x + n_seg)
        phi = j / j_scale
        for i in range(n_x):
            res = float(d_mat[i] @ p_f @ d_mat[i]) / d_bounds2[i] - 1.0
            grad[i] = res
            phi += zeta[i] * res
        for s in range(n_seg):
            on = (seg == s) & np.isfinite(u_bounds2)
            res = (float(np.sum(var_u[on])) - seg_u2[s]) / max(seg_u2[s], 1e-300) \
                if np.any(on) else 0.0
            grad[n_x + s] = res
            phi += zeta[n_x + s] * res
        value = -phi
        if value < incumbent[0]:
            incumbent[0] = value
            accepted.append(value)
        return value, -grad

    # concave maximization still deserves a few starts: the curvature is
    # near-flat along overdamped directions and a bad start can trip the
    # relative-reduction stop short of the optimum
    starts = [
        np.full(n_x + n_seg, 1.0),
        np.zeros(n_x + n_seg),
        xi0 / np.where(scale > 0.0, scale, 1.0),
    ]
    best_phi = -math.inf
    best_zeta = starts[0]
    rounds = 0
    for z0 in starts:
        rounds += 1
        result = minimize(
            neg_dual,
            z0,
            jac=True,
            method="L-BFGS-B",
            bounds=[(0.0, None)] * (n_x + n_seg),
            options={
                "maxfun": max_evaluations_per_round * max_penalty_rounds,
                "maxiter": max_evaluations_per_round,
                "ftol": 1e-16,
                "gtol": 1e-12,
            },
        )
        if -result.fun > best_phi:
            best_phi = -result.fun
            best_zeta = np.maximum(result.x, 0.0)
    history = [accepted]
    best_xi = best_zeta * scale

    # monotone polish: inflate multipliers of any still-violated constraint
    warning = None
    xi = best_xi
    floor = np.maximum(xi_hot * 1e-3, 1e-12)
    for _ in range(80):
        _, _, p_f, var_u = evaluate(xi)
        bumped = False
        for i in range(n_x):
            if float(d_mat[i] @ p_f @ d_mat[i]) > d_bounds2[i]:
                xi[i] = max(1.5 * xi[i], floor[i])
                bumped = True
        if control_on:
            for k in range(n_p):
                if seg[k] >= 0 and math.isfinite(u_bounds2[k]) and var_u[k] > u_bounds2[k]:
                    jseg = n_x + seg[k]
                    xi[jseg] = max(1.5 * xi[jseg], floor[jseg])
                    bumped = True
        if not bumped:
            break
    else:
        warning = "could not drive every variance bound to feasibility"

    # release pass: a multiplier the simplex left stranded high keeps a slack
    # constraint overweighted and drags the range cost, so shrink wherever the
    # shrunk point stays feasible and no more expensive
    j_cur, viol_cur, _, _ = evaluate(xi)
    if viol_cur <= 1e-9:
        budget = 800
        changed = True
        while changed and budget > 0:
            changed = False
            for i in range(len(xi)):
                if xi[i] <= 0.0 or budget <= 0:
                    continue
                trial = xi.copy()
                trial[i] = 0.0 if trial[i] <= floor[i] else trial[i] / 2.0
                j_t, viol_t, _, _ = evaluate(trial)
                budget -= 1
                if viol_t <= 1e-9 and j_t <= j_cur * (1.0 + 1e-9):
                    xi = trial
                    j_cur = j_t
                    changed = True
    return finalize(xi, rounds=rounds, history=history, warning=warning)


def apollo_gains(
    model: ContinuousLinearModel,
    theta_f: np.ndarray,
    k_oc: float,
) -> GainSchedule:
    """Adjoint-based reference-following gains, indexed by nominal velocity.

    Integrates the costate pair backward from (theta_f, 0):
    theta' = -A^T theta, theta_u' = -B^T theta; the gain row at each node is
    -k_oc * theta / theta_u, zeroed wherever |theta_u| falls below 1e-6 of
    its peak (it vanishes at the terminal node by construction).  The
    schedule engages at the nominal velocity peak; before that, velocity is
    not a valid index.
    """
    theta_f = np.asarray(theta_f, dtype=float)
    times = model.t
    n = len(times)
    theta = np.empty((n, N_STATES))
    theta_u = np.empty(n)
    theta[-1] = theta_f
    theta_u[-1] = 0.0

    def rates(t: float, th: np.ndarray, thu: float) -> tuple[np.ndarray, float]:
        a, b, _ = model.interp(t)
        return -a.T @ th, -float(b @ th)

    for i in range(n - 1, 0, -1):
        h = float(times[i - 1] - times[i])  # negative: backward in time
        t = float(times[i])
        th, thu = theta[i], theta_u[i]
        k1 = rates(t, th, thu)
        k2 = rates(t + 0.5 * h, th + 0.5 * h * k1[0], thu + 0.5 * h * k1[1])
        k3 = rates(t + 0.5 * h, th + 0.5 * h * k2[0], thu + 0.5 * h * k2[1])
        k4 = rates(t + h, th + h * k3[0], thu + h * k3[1])
        theta[i - 1] = th + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        theta_u[i - 1] = thu + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])

    peak = float(np.abs(theta_u).max())
    if peak == 0.0:
        raise SynthesisError("control never influences the terminal condition")
    floor = 1e-6 * peak
    rows = np.zeros((n, N_STATES))
    usable = np.abs(theta_u) >= floor
    rows[usable] = -k_oc * theta[usable] / theta_u[usable, None]

    ref = model.ref
    i_peak = int(np.argmax(ref.v))
    engage_time = float(ref.t[i_peak])
    keep: list[int] = []
    v_last = math.inf
    for i in range(i_peak, n):
        v_i = float(ref.v[i])
        if v_i < v_last - 1e-9:
            keep.append(i)
            v_last = v_i
    if len(keep) < 2:
        raise SynthesisError("nominal velocity never decreases; cannot index gains")
    keep_arr = np.array(keep[::-1])  # ascending velocity
    states = np.array([ref.longitudinal(int(i)) for i in keep_arr])
    return GainSchedule(
        kind="velocity",
        breakpoints=ref.v[keep_arr],
        gains=rows[keep_arr],
        nominal_states=states,
        nominal_control=ref.u_nom[keep_arr],
        engage_time=engage_time,
    )


_GAIN_COLUMNS = [
    "index_value",
    "K_r",
    "K_V",
    "K_gamma",
    "K_R",
    "K_rho",
    "r_m",
    "v_mps",
    "fpa_rad",
    "downrange_m",
    "density_kgpm3",
    "cos_bank_nominal",
]


def save_gain_schedule_csv(schedule: GainSchedule, path: str | Path) -> None:
    """Write the schedule as CSV: two metadata comment lines, then one row
    per breakpoint.  A time-indexed schedule has one fewer gain row than
    breakpoints; the terminal row leaves the gain cells empty."""
    path = Path(path)
    et = "none" if schedule.engage_time is None else repr(float(schedule.engage_time))
    with path.open("w", newline="") as fh:
        fh.write(f"# kind={schedule.kind}\n")
        fh.write(f"# engage_time={et}\n")
        writer = csv.writer(fh)
        writer.writerow(_GAIN_COLUMNS)
        n_bp = len(schedule.breakpoints)
        for i in range(n_bp):
            if i < len(schedule.gains):
                gain_cells = [repr(float(g)) for g in schedule.gains[i]]
            else:
                gain_cells = [""] * N_STATES
            writer.writerow(
                [repr(float(schedule.breakpoints[i]))]
                + gain_cells
                + [repr(float(v)) for v in schedule.nominal_states[i]]
                + [repr(float(schedule.nominal_control[i]))]
            )


def load_gain_schedule_csv(path: str | Path) -> GainSchedule:
    """Read a schedule written by save_gain_schedule_csv (bit-exact inverse)."""
    path = Path(path)
    with path.open(newline="") as fh:
        kind_line = fh.readline().strip()
        et_line = fh.readline().strip()
        if not kind_line.startswith("# kind=") or not et_line.startswith("# engage_time="):
            raise ValueError(f"{path}: missing gain-table metadata lines")
        kind = kind_line.removeprefix("# kind=")
        et_text = et_line.removeprefix("# engage_time=")
        engage_time = None if et_text == "none" else float(et_text)
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _GAIN_COLUMNS:
            raise ValueError(f"{path}: unexpected gain-table columns")
        bp, gains, states, control = [], [], [], []
        for row in reader:
            if not row:
                continue
            bp.append(float(row[0]))
            if row[1] != "":
                gains.append([float(v) for v in row[1:6]])
            states.append([float(v) for v in row[6:11]])
            control.append(float(row[11]))
    return GainSchedule(
        kind=kind,
        breakpoints=np.array(bp),
        gains=np.array(gains),
        nominal_states=np.array(states),
        nominal_control=np.array(control),
        engage_time=engage_time,
    )
