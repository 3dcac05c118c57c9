"""Execution engine for hybrid systems with boolean jump guards.

The engine alternates continuous flow with discrete jumps.  Flow uses an
embedded Dormand-Prince 5(4) pair with a fourth-order dense output; the
jump guard is an arbitrary set-membership predicate, so crossings are
bracketed by scanning the dense output and then localized by bisection
down to a configurable time tolerance.  Jumps take priority: whenever the
state satisfies the jump guard, the jump map is applied before any
further flow.

Solutions are recorded on hybrid time: a sample carries both the flow
time ``t`` and the jump counter ``j``, and a jump produces two samples
with the same ``t`` and consecutive ``j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "StepControl",
    "StopRule",
    "HybridSystemDef",
    "JumpRecord",
    "HybridSolution",
    "DenseStep",
    "FlowSegment",
    "HybridSemanticsError",
    "rk45_step",
    "integrate_flow",
    "locate_event",
    "simulate",
    "distance_trace",
    "TERMINATIONS",
]

# Dormand-Prince 5(4) tableau.  The pair is first-same-as-last: the 7th
# stage equals the derivative at the accepted endpoint and seeds the next
# step.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    np.array([], dtype=float),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# Difference against the embedded 4th-order weights; dotted with the
# stages it gives the local error estimate.
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200,
               22 / 525, -1 / 40])
# Coefficients of the quartic interpolant (in the normalized step
# coordinate) associated with the pair.
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608,
     -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933,
     87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304,
     -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408,
     701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883,
     -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

TERMINATIONS = ("converged", "t_budget", "j_budget", "zeno_guard", "flow_stall")


class HybridSemanticsError(RuntimeError):
    """The system definition broke a structural rule during execution."""


@dataclass
class StepControl:
    """Adaptive step-size policy and sampling resolution."""

    rtol: float = 1e-9
    atol: float = 1e-11
    max_step: float = math.inf
    # Optional state-dependent cap; called with (state, derivative).
    max_step_fn: Callable[[np.ndarray, np.ndarray], float] | None = None
    dt_sample: float = 0.01
    tol_event: float = 1e-10
    # When set, disables error control and takes exactly this step.
    fixed_step: float | None = None
    safety: float = 0.9
    min_factor: float = 0.2
    max_factor: float = 10.0
    # Attempt budget per flow segment; a field that pins the controller
    # (e.g. flowing along a discontinuity surface) ends as a stall
    # instead of spinning.
    max_attempts: int = 50_000


@dataclass
class StopRule:
    """Termination policy for a full hybrid run."""

    t_max: float = 30.0
    j_max: int = 100
    converged: Callable[[np.ndarray], bool] | None = None
    # Applied to the final state on convergence (e.g. snapping a
    # finite-time-stable component to its limit).
    snap: Callable[[np.ndarray], np.ndarray] | None = None
    zeno_total: int | None = None
    zeno_window: float = 1e-6
    zeno_window_jumps: int = 2


@dataclass
class HybridSystemDef:
    """Callable description of one hybrid system on flat state vectors."""

    dim: int
    flow_field: Callable[[np.ndarray], np.ndarray]
    jump_map: Callable[[np.ndarray], np.ndarray]
    flow_set: Callable[[np.ndarray], bool]
    jump_set: Callable[[np.ndarray], bool]
    # Which obstacle (or other discrete cause) triggered a jump; purely
    # diagnostic.
    jump_obstacle: Callable[[np.ndarray], int | None] | None = None
    diagnostics: Callable[[np.ndarray], dict] | None = None
    rho_index: int | None = None
    xi_slice: slice | None = None
    # Edge-triggered flow breakpoint: when a segment starts with this
    # predicate false, the first crossing to true is located like a guard
    # event and flow resumes there without a jump.  Keeps derivative kinks
    # (e.g. a throttle reopening) on step boundaries.
    release_guard: Callable[[np.ndarray], bool] | None = None


@dataclass(frozen=True)
class JumpRecord:
    t: float
    j_before: int
    obstacle: int | None
    rho_before: float | None
    rho_after: float | None


@dataclass
class HybridSolution:
    """Sampled hybrid arc plus bookkeeping.

    ``t``, ``j`` and ``y`` are aligned arrays; ``diag`` maps a column name
    to an equally long array.  ``info`` carries run-level metadata set by
    the caller (e.g. gate flags for coupled runs).
    """

    t: np.ndarray
    j: np.ndarray
    y: np.ndarray
    diag: dict[str, np.ndarray]
    jumps: list[JumpRecord]
    termination: str
    xi_slice: slice | None = None
    info: dict = field(default_factory=dict)

    @property
    def final_state(self) -> np.ndarray:
        return self.y[-1]

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def xi(self) -> np.ndarray:
        if self.xi_slice is None:
            return self.y
        return self.y[:, self.xi_slice]


@dataclass
class DenseStep:
    """Quartic interpolant over one accepted integration step."""

    t0: float
    h: float
    y0: np.ndarray
    q: np.ndarray  # (dim, 4)

    @property
    def t1(self) -> float:
        return self.t0 + self.h

    def eval(self, t: float) -> np.ndarray:
        x = (t - self.t0) / self.h
        powers = np.array([x, x * x, x ** 3, x ** 4])
        return self.y0 + self.h * (self.q @ powers)


def rk45_step(f, t, y, h, k1=None):
    """One Dormand-Prince step.

    Returns ``(y1, err, dense, k7)`` where ``err`` is the embedded error
    estimate, ``dense`` interpolates on ``[t, t+h]`` and ``k7`` is the
    derivative at ``y1`` (reusable as the next step's first stage).
    """
    k = np.empty((7, y.shape[0]))
    k[0] = f(y) if k1 is None else k1
    for i in range(1, 6):
        k[i] = f(y + h * (_A[i] @ k[:i]))
    y1 = y + h * (_A[6] @ k[:6])
    k[6] = f(y1)
    err = h * (_E @ k)
    dense = DenseStep(t, h, y.copy(), k.T @ _P)
    return y1, err, dense, k[6]


def _error_norm(err, y0, y1, ctrl):
    scale = ctrl.atol + ctrl.rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def locate_event(dense: DenseStep, guard, t_lo: float, t_hi: float,
                 tol: float):
    """Bisect a guard crossing inside one dense step.

    ``guard`` must be false at ``t_lo`` and true at ``t_hi`` (if it is
    already true at ``t_lo``, that endpoint is returned as the earliest
    detected crossing).  Returns ``(t_event, state)`` with the state taken
    on the guard-true side of the final bracket.
    """
    if guard(dense.eval(t_lo)):
        return t_lo, dense.eval(t_lo)
    while t_hi - t_lo > tol:
        t_mid = 0.5 * (t_lo + t_hi)
        if t_mid <= t_lo or t_mid >= t_hi:
            break  # bracket at floating-point resolution
        if guard(dense.eval(t_mid)):
            t_hi = t_mid
        else:
            t_lo = t_mid
    return t_hi, dense.eval(t_hi)


def _advance(f, ctrl: StepControl, t0: float, y0, t1: float):
    """Error-controlled reintegration of a short stretch, no bookkeeping.

    Used to confirm guard crossings on accurate states: the step
    interpolant can drift by orders more than rtol in the interior of a
    step whose derivative has a kink, and guard boundaries sit exactly on
    such kinks.
    """
    y = y0.copy()
    t = t0
    h = t1 - t0
    k1 = f(y)
    for _ in range(10000):
        if t1 - t <= 1e-15 * max(1.0, abs(t1)):
            return y
        h = min(h, t1 - t)
        y1, err, _, k7 = rk45_step(f, t, y, h, k1)
        enorm = _error_norm(err, y, y1, ctrl)
        if enorm > 1.0:
            h *= max(ctrl.min_factor, ctrl.safety * enorm ** -0.2)
            continue
        t, y, k1 = t + h, y1, k7
        if enorm > 0.0:
            h *= min(ctrl.max_factor, ctrl.safety * enorm ** -0.2)
    raise FloatingPointError(f"event refinement stalled near t={t}")


def _locate_event_exact(f, ctrl: StepControl, guard, t_lo: float, y_lo,
                        t_hi: float, y_hi, tol: float):
    """Bisect a guard crossing on reintegrated states.

    ``y_lo``/``y_hi`` are accurate states with the guard false/true;
    the returned state is on the guard-true side of the final bracket.
    """
    while t_hi - t_lo > tol:
        t_mid = 0.5 * (t_lo + t_hi)
        if t_mid <= t_lo or t_mid >= t_hi:
            break
        y_mid = _advance(f, ctrl, t_lo, y_lo, t_mid)
        if guard(y_mid):
            t_hi, y_hi = t_mid, y_mid
        else:
            t_lo, y_lo = t_mid, y_mid
    return t_hi, y_hi


@dataclass
class FlowSegment:
    """Outcome of one continuous segment."""

    t: float
    y: np.ndarray
    reason: str  # "guard_event", "budget", "flow_stall"
    samples: list  # [(t, y), ...] excluding the entry state
    n_steps: int = 0


def _initial_step(f0_norm, y_norm, ctrl, remaining):
    h = 0.01 * max(1.0, y_norm) / max(f0_norm, 1e-8)
    bound = min(ctrl.max_step, remaining)
    return min(max(h, 1e-8), bound, 1.0)


def integrate_flow(y0, flow_field, ctrl: StepControl, guard=None,
                   t0: float = 0.0, t_end: float = math.inf) -> FlowSegment:
    """Flow from ``y0`` until the guard fires or the time budget runs out.

    Samples are emitted at global multiples of ``ctrl.dt_sample`` plus
    every accepted step endpoint; the guard is evaluated at the same
    points, so ``ctrl.max_step`` (and the state-dependent cap) bound how
    far a crossing can be overshot before detection.
    """
    y = np.asarray(y0, dtype=float).copy()
    t = t0
    samples: list = []
    if guard is not None and guard(y):
        return FlowSegment(t, y, "guard_event", samples)
    k1 = flow_field(y)
    if not np.all(np.isfinite(k1)):
        raise FloatingPointError(f"non-finite derivative at t={t}")
    h = ctrl.fixed_step or _initial_step(
        float(np.linalg.norm(k1)), float(np.linalg.norm(y)), ctrl, t_end - t)
    n_steps = 0
    attempts = 0
    # Next global sampling grid point strictly after t0.
    grid_k = math.floor(t / ctrl.dt_sample + 1e-9) + 1

    while t < t_end:
        if t_end - t <= 1e-12 * max(1.0, abs(t_end)):
            break
        attempts += 1
        if attempts > ctrl.max_attempts:
            return FlowSegment(t, y, "flow_stall", samples, n_steps)
        cap = min(ctrl.max_step, t_end - t)
        if ctrl.max_step_fn is not None:
            cap = min(cap, ctrl.max_step_fn(y, k1))
        h = min(h, cap)
        if ctrl.fixed_step is None and h < 1e-13 * max(1.0, abs(t)):
            return FlowSegment(t, y, "flow_stall", samples, n_steps)

        y1, err, dense, k7 = rk45_step(flow_field, t, y, h, k1)
        if not np.all(np.isfinite(y1)):
            raise FloatingPointError(f"non-finite state at t={t + h}")
        if ctrl.fixed_step is None:
            enorm = _error_norm(err, y, y1, ctrl)
            if enorm > 1.0:
                h *= max(ctrl.min_factor, ctrl.safety * enorm ** -0.2)
                continue
            factor = ctrl.max_factor if enorm == 0.0 else min(
                ctrl.max_factor, ctrl.safety * enorm ** -0.2)
            h_next = h * max(ctrl.min_factor, factor)
        else:
            h_next = h
        n_steps += 1
        t1 = t + h

        # Check points inside this step: sampling grid plus the endpoint.
        check_ts = []
        while grid_k * ctrl.dt_sample < t1 - 1e-12 * max(1.0, t1):
            ct = grid_k * ctrl.dt_sample
            if ct > t:
                check_ts.append(ct)
            grid_k += 1
        check_ts.append(t1)

        if guard is not None:
            # (tv, yv): latest point whose accurate state fails the guard.
            tv, yv = t, y
            for ct in check_ts:
                yc = y1 if ct == t1 else dense.eval(ct)
                if not guard(yc):
                    continue
                yt = y1 if ct == t1 else _advance(flow_field, ctrl, tv, yv, ct)
                if not guard(yt):
                    tv, yv = ct, yt  # interpolant artifact, keep scanning
                    continue
                te, ye = _locate_event_exact(flow_field, ctrl, guard,
                                             tv, yv, ct, yt, ctrl.tol_event)
                # Reintegrate the pre-event samples too: mixing interpolant
                # values with the exact event state can fake a reversal.
                tc, yc = t, y
                for st in check_ts:
                    if st < te:
                        yc = _advance(flow_field, ctrl, tc, yc, st)
                        tc = st
                        samples.append((st, yc))
                samples.append((te, ye))
                return FlowSegment(te, ye, "guard_event", samples, n_steps)
        for ct in check_ts:
            samples.append((ct, y1 if ct == t1 else dense.eval(ct)))
        t, y, k1, h = t1, y1, k7, h_next

    return FlowSegment(t, y, "budget", samples, n_steps)


def _rho_of(sysdef, y):
    if sysdef.rho_index is None:
        return None
    return float(y[sysdef.rho_index])


def simulate(sysdef: HybridSystemDef, y0, ctrl: StepControl,
             stop: StopRule) -> HybridSolution:
    """Run a hybrid system to termination.

    Jump priority: from a state in the jump set the jump map is applied
    immediately, with flow resuming only once the guard clears.  The run
    ends on the convergence predicate, the time or jump budget, a flow
    stall (step underflow) or the Zeno guard.
    """
    y = np.asarray(y0, dtype=float).copy()
    if y.shape != (sysdef.dim,):
        raise ValueError(f"initial state has shape {y.shape}, expected ({sysdef.dim},)")
    if not (sysdef.flow_set(y) or sysdef.jump_set(y)):
        raise ValueError("initial state lies outside the flow and jump sets")

    ts: list[float] = []
    js: list[int] = []
    ys: list[np.ndarray] = []
    diag_rows: list[dict] = []
    jumps: list[JumpRecord] = []
    jump_times: list[float] = []
    releases: list[float] = []

    t = 0.0
    j = 0

    def record(tv, jv, yv):
        ts.append(tv)
        js.append(jv)
        ys.append(np.array(yv))
        if sysdef.diagnostics is not None:
            diag_rows.append(sysdef.diagnostics(yv))

    record(t, j, y)
    termination = None

    while termination is None:
        if sysdef.jump_set(y):
            if stop.zeno_total is not None and len(jump_times) + 1 > stop.zeno_total:
                termination = "zeno_guard"
                break
            if (len(jump_times) >= stop.zeno_window_jumps and
                    t - jump_times[-stop.zeno_window_jumps] < stop.zeno_window):
                termination = "zeno_guard"
                break
            if j >= stop.j_max:
                termination = "j_budget"
                break
            y2 = np.asarray(sysdef.jump_map(y), dtype=float)
            if sysdef.jump_set(y2):
                raise HybridSemanticsError(
                    f"jump map landed back in the jump set at t={t}")
            if not sysdef.flow_set(y2):
                raise HybridSemanticsError(
                    f"jump map left the state space at t={t}")
            obstacle = sysdef.jump_obstacle(y) if sysdef.jump_obstacle else None
            jumps.append(JumpRecord(t, j, obstacle,
                                    _rho_of(sysdef, y), _rho_of(sysdef, y2)))
            j += 1
            y = y2
            jump_times.append(t)
            record(t, j, y)
            continue

        if stop.converged is not None and stop.converged(y):
            termination = "converged"
            break
        if t >= stop.t_max:
            termination = "t_budget"
            break

        armed = (sysdef.release_guard is not None
                 and not sysdef.release_guard(y))

        def guard_any(state):
            if sysdef.jump_set(state):
                return True
            if armed and sysdef.release_guard(state):
                return True
            return stop.converged is not None and stop.converged(state)

        seg = integrate_flow(y, sysdef.flow_field, ctrl, guard_any,
                             t0=t, t_end=stop.t_max)
        for st, sy in seg.samples:
            record(st, j, sy)
        t, y = seg.t, seg.y
        if seg.reason == "budget":
            termination = "t_budget"
        elif seg.reason == "flow_stall":
            termination = "flow_stall"
        elif stop.converged is not None and stop.converged(y):
            termination = "converged"
        elif not sysdef.jump_set(y):
            releases.append(t)  # breakpoint crossing; resume flowing
        # otherwise the guard event was a jump; loop back to take it

    if termination == "converged" and stop.snap is not None:
        y = stop.snap(y)
        ys[-1] = np.array(y)
        if sysdef.diagnostics is not None:
            diag_rows[-1] = sysdef.diagnostics(y)

    diag: dict[str, np.ndarray] = {}
    if diag_rows:
        for key in diag_rows[0]:
            diag[key] = np.array([row[key] for row in diag_rows])
    return HybridSolution(
        t=np.array(ts), j=np.array(js, dtype=int), y=np.array(ys),
        diag=diag, jumps=jumps, termination=termination,
        xi_slice=sysdef.xi_slice, info={"release_times": releases})


def distance_trace(sol: HybridSolution, obstacles, xi_slice=None) -> np.ndarray:
    """Per-obstacle minimum distance between the sampled arc and the
    obstacle centers."""
    sl = xi_slice if xi_slice is not None else sol.xi_slice
    pts = sol.y if sl is None else sol.y[:, sl]
    out = np.empty(len(obstacles))
    for i, obs in enumerate(obstacles):
        out[i] = float(np.min(np.linalg.norm(pts - obs.center, axis=1)))
    return out
