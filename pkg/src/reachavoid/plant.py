"""Coupling of the virtual reference to a tracked physical plant.

The reference only advances while the plant's tracking Lyapunov value
stays below a clearance budget ``d`` computed from the obstacle geometry;
the resulting gate ``max(0, ell * (d - V))`` throttles the reference
velocity so the plant output can never be dragged into an obstacle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .geometry import InitialState, Obstacle, Scenario
from .virtual_ctrl import (VirtualControllerParams, mu_bar,
                           obstacle_step_cap, virtual_hybrid_system)
from .hybrid_engine import (HybridSystemDef, StepControl, StopRule,
                            simulate)

__all__ = [
    "PlantModel",
    "TrackingController",
    "PlantBundle",
    "CoupledState",
    "DBound",
    "shift_to_origin",
    "d_bound",
    "coupled_flow",
    "build_coupled_system",
    "simulate_closed_loop",
]


@dataclass(frozen=True)
class PlantModel:
    """Control-affine plant ``x' = f(x, u)`` with output map ``h``."""

    n: int
    m: int
    p: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TrackingController:
    """Tracking feedback for a movable setpoint ``z_e``.

    ``V(x, z_e)`` is the tracking Lyapunov function, ``grad_V`` its
    gradient in ``x``, and ``u(x, z_e)`` the feedback input.
    """

    V: Callable[[np.ndarray, np.ndarray], float]
    grad_V: Callable[[np.ndarray, np.ndarray], np.ndarray]
    u: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PlantBundle:
    """Everything the runner needs to couple one plant type.

    ``v_restriction(z_e, z)`` lower-bounds ``V`` over plant states with
    output ``z`` and feeds the generic clearance computation; ``d_fn`` is
    an optional closed form that replaces it.  ``equilibrium(z_e)`` builds
    a zero-``V`` state used as the default initial condition.
    """

    name: str
    model: PlantModel
    controller: TrackingController
    v_restriction: Callable[[np.ndarray, np.ndarray], float] | None = None
    d_fn: Callable[..., float] | None = None
    equilibrium: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass
class CoupledState:
    """Composite state (plant, reference, mode) with flat-vector codecs."""

    x: np.ndarray
    zeta: np.ndarray
    rho: float

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.zeta, [self.rho]])

    @classmethod
    def from_vector(cls, v, n: int, p: int) -> "CoupledState":
        v = np.asarray(v, dtype=float)
        return cls(x=v[:n], zeta=v[n:n + p], rho=float(v[n + p]))


def shift_to_origin(scenario: Scenario) -> tuple[Scenario, np.ndarray]:
    """Move the target to the origin.

    Returns the translated scenario and the applied offset (the original
    target), so callers can undo the shift on serialized output.  Only
    output-space data moves: obstacle centers and the initial reference.
    Plant states stay in their own frame; the coupled runner composes the
    offset into the output map instead.
    """
    offset = scenario.target.copy()
    obstacles = tuple(replace(o, center=o.center - offset)
                      for o in scenario.obstacles)
    init = scenario.init
    if init is not None and init.xi is not None:
        init = InitialState(xi=init.xi - offset, rho=init.rho, x=init.x)
    shifted = replace(scenario, target=np.zeros_like(offset),
                      obstacles=obstacles, init=init)
    return shifted, offset


@dataclass(frozen=True)
class DBound:
    """Clearance value plus an estimate of the discretization error."""

    value: float
    disc_error: float


def d_bound(z_e, obstacles, v_restriction, eps_tilde: float = 0.0,
            points: int = 720) -> DBound:
    """Clearance budget from discretized obstacle boundaries.

    Minimizes ``v_restriction(z_e, .)`` over ``points`` samples of each
    obstacle's hard boundary circle and subtracts ``eps_tilde``.  With no
    obstacles the budget is unbounded and the sentinel ``inf`` is
    returned.  Planar only; plants with a closed form bypass this.
    """
    z_e = np.asarray(z_e, dtype=float)
    if not obstacles:
        return DBound(math.inf, 0.0)
    if z_e.shape[-1] != 2:
        raise NotImplementedError("boundary discretization is planar only")
    phi = np.linspace(0.0, 2.0 * math.pi, points, endpoint=False)
    ring = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    best = math.inf
    best_err = 0.0
    for obs in obstacles:
        pts = obs.center + obs.radius * ring
        vals = np.array([v_restriction(z_e, pt) for pt in pts])
        lo = float(np.min(vals))
        # Spacing of the infimand between adjacent samples bounds how much
        # the true boundary minimum can undercut the sampled one.
        err = 0.5 * float(np.max(np.abs(np.diff(np.concatenate([vals, vals[:1]])))))
        if lo < best:
            best, best_err = lo, err
    return DBound(best - eps_tilde, best_err)


def coupled_flow(state: CoupledState, model: PlantModel,
                 controller: TrackingController,
                 params: VirtualControllerParams, ell: float,
                 d_fn: Callable[[np.ndarray], float],
                 eps_freeze: float = 0.0) -> CoupledState:
    """Closed-loop derivative of the coupled system.

    The plant runs its tracking feedback toward the current reference;
    the reference flows along the hybrid law scaled by the gate
    ``max(0, ell * (d(zeta) - V(x, zeta)))`` and is frozen entirely once
    within ``eps_freeze`` of the origin (the stabilizer is not Lipschitz
    there, and the reference has already arrived).
    """
    x, zeta, rho = state.x, state.zeta, state.rho
    u = controller.u(x, zeta)
    dx = model.f(x, u)
    if eps_freeze > 0.0 and float(np.linalg.norm(zeta)) <= eps_freeze:
        dzeta = np.zeros_like(zeta)
    else:
        gate = max(0.0, ell * (d_fn(zeta) - controller.V(x, zeta)))
        dzeta = gate * mu_bar(zeta, int(round(rho)), params)
    return CoupledState(x=dx, zeta=dzeta, rho=0.0)


def _capped_d_fn(scenario: Scenario, bundle: PlantBundle):
    obstacles = scenario.obstacles
    cap = scenario.d_cap
    if bundle.d_fn is not None:
        base = lambda z: bundle.d_fn(z, obstacles)
    elif bundle.v_restriction is not None:
        base = lambda z: d_bound(z, obstacles, bundle.v_restriction).value
    else:
        base = lambda z: math.inf
    return lambda z: min(cap, base(z))


def build_coupled_system(scenario: Scenario,
                         bundle: PlantBundle) -> HybridSystemDef:
    """Package plant + reference + mode as one hybrid system.

    State layout ``[x_1 .. x_n, zeta_1 .. zeta_p, rho]``.  The jump logic
    acts on the reference exactly as in the reference-only system; the
    plant state rides through jumps unchanged.
    """
    model, controller = bundle.model, bundle.controller
    n, p = model.n, model.p
    params = VirtualControllerParams.from_scenario(scenario)
    ell = scenario.ell
    d_fn = _capped_d_fn(scenario, bundle)
    eps_freeze = scenario.stop.eps_stop
    virtual = virtual_hybrid_system(scenario, law="hybrid")
    zslice = slice(n, n + p)

    def flow_field(y):
        state = CoupledState.from_vector(y, n, p)
        ds = coupled_flow(state, model, controller, params, ell, d_fn,
                          eps_freeze)
        return ds.to_vector()

    def jump_map(y):
        y2 = y.copy()
        y2[n + p] = 1.0 - y2[n + p]
        return y2

    def jump_set(y):
        return virtual.jump_set(np.concatenate([y[zslice], [y[n + p]]]))

    def jump_obstacle(y):
        if virtual.jump_obstacle is None:
            return None
        return virtual.jump_obstacle(np.concatenate([y[zslice], [y[n + p]]]))

    def flow_set(y):
        return virtual.flow_set(np.concatenate([y[zslice], [y[n + p]]]))

    def diagnostics(y):
        state = CoupledState.from_vector(y, n, p)
        z = model.h(state.x)
        V = float(controller.V(state.x, state.zeta))
        d_val = float(d_fn(state.zeta))
        row = {"rho": state.rho, "V": V, "d": d_val, "gate": d_val - V}
        for k in range(p):
            row[f"z_{k + 1}"] = float(z[k])
        for i, o in enumerate(scenario.obstacles):
            row[f"dist_{i}"] = float(np.linalg.norm(state.zeta - o.center))
            row[f"dist_out_{i}"] = float(np.linalg.norm(z - o.center))
        return row

    def release_guard(y):
        # Throttle reopening: while d - V < 0 the reference sits still;
        # locating the sign change keeps frozen samples exact.
        state = CoupledState.from_vector(y, n, p)
        return float(d_fn(state.zeta)) >= float(controller.V(state.x,
                                                             state.zeta))

    return HybridSystemDef(
        dim=n + p + 1, flow_field=flow_field, jump_map=jump_map,
        flow_set=flow_set, jump_set=jump_set, jump_obstacle=jump_obstacle,
        diagnostics=diagnostics, rho_index=n + p, xi_slice=zslice,
        release_guard=release_guard)


def _shifted_bundle(bundle: PlantBundle, offset: np.ndarray) -> PlantBundle:
    """Compose the target offset into the plant-facing maps.

    In the shifted frame the reference lives at ``z - offset``; the
    plant's own coordinates are untouched, so its output map subtracts
    the offset and every setpoint argument adds it back.
    """
    if not np.any(offset):
        return bundle
    model, ctrl = bundle.model, bundle.controller
    shifted_model = PlantModel(
        n=model.n, m=model.m, p=model.p, f=model.f,
        h=lambda x: model.h(x) - offset)
    shifted_ctrl = TrackingController(
        V=lambda x, z: ctrl.V(x, z + offset),
        grad_V=lambda x, z: ctrl.grad_V(x, z + offset),
        u=lambda x, z: ctrl.u(x, z + offset))
    return PlantBundle(
        name=bundle.name, model=shifted_model, controller=shifted_ctrl,
        v_restriction=bundle.v_restriction, d_fn=bundle.d_fn,
        equilibrium=(None if bundle.equilibrium is None
                     else lambda z: bundle.equilibrium(z + offset)))


def simulate_closed_loop(scenario: Scenario, bundle: PlantBundle,
                         x0=None, zeta0=None, rho0=None):
    """Run the coupled closed loop to termination.

    Works internally in the origin-shifted frame; the applied offset is
    stored under ``info["offset"]`` so serializers can restore the
    original frame.  Initial conditions fall back to the scenario's
    ``init`` block, and a missing plant state defaults to the plant's
    zero-``V`` equilibrium at the initial reference.
    """
    shifted, offset = shift_to_origin(scenario)
    bundle = _shifted_bundle(bundle, offset)
    model = bundle.model
    n, p = model.n, model.p

    if zeta0 is None:
        if shifted.init is None or shifted.init.xi is None:
            raise ValueError("no initial reference: pass zeta0 or set init.xi")
        zeta0 = shifted.init.xi
    else:
        zeta0 = np.asarray(zeta0, dtype=float) - offset
    if rho0 is None:
        rho0 = shifted.init.rho if shifted.init is not None else 0
    if x0 is None and shifted.init is not None and shifted.init.x is not None:
        x0 = shifted.init.x
    if x0 is None:
        if bundle.equilibrium is None:
            raise ValueError("no initial plant state and no equilibrium map")
        x0 = bundle.equilibrium(np.asarray(zeta0, dtype=float))
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({n},)")

    sysdef = build_coupled_system(shifted, bundle)
    obstacles = shifted.obstacles
    zslice = slice(n, n + p)

    def max_step_fn(y, dy):
        return obstacle_step_cap(obstacles, y[zslice],
                                 float(np.linalg.norm(dy[zslice])))

    integ = shifted.integrator
    ctrl = StepControl(rtol=integ.rtol, atol=integ.atol,
                       max_step=integ.max_step, max_step_fn=max_step_fn,
                       dt_sample=integ.dt_sample, tol_event=integ.tol_event)

    eps_stop = shifted.stop.eps_stop
    z_stop = shifted.stop.z_stop

    def converged(y):
        if float(np.linalg.norm(y[zslice])) > eps_stop:
            return False
        return float(np.linalg.norm(model.h(y[:n]))) <= z_stop

    def snap(y):
        y2 = y.copy()
        y2[zslice] = 0.0
        return y2

    stop = StopRule(t_max=shifted.stop.t_max, j_max=shifted.stop.j_max,
                    converged=converged, snap=snap,
                    zeno_total=10 * len(obstacles))

    y0 = np.concatenate([x0, np.asarray(zeta0, dtype=float), [float(rho0)]])
    sol = simulate(sysdef, y0, ctrl, stop)

    gate = sol.diag.get("gate")
    held = bool(gate is not None and gate[0] >= 0.0)
    recovered_at = None
    if not held:
        times = sol.info.get("release_times", [])
        recovered_at = float(times[0]) if times else None
    sol.info.update({
        "offset": offset,
        "plant": bundle.name,
        "x_slice": slice(0, n),
        "gate_held_initially": held,
        "gate_recovered_at": recovered_at,
    })
    return sol
