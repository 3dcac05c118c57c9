"""Feedback laws for the virtual reference state.

The stabilizer drives the reference to the origin in finite time; around
each obstacle it is blended with a tangential avoidance direction.  The
hybrid variant adds a detour mode that replaces the avoidance direction
with a fixed-handedness sideways push, which is what gets the reference
off the measure-zero set of initial conditions where the blend alone
stalls.

All functions accept a single state of shape ``(p,)`` or a batch with the
state on the last axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Obstacle, Scenario

__all__ = [
    "VirtualControllerParams",
    "velocity_scaling",
    "nu_s",
    "orthogonal_projection",
    "nu_a",
    "sigma",
    "alpha_s",
    "alpha_a",
    "mu_single",
    "mu_multi",
    "select_qbar",
    "mu_bar",
    "virtual_hybrid_system",
    "simulate_virtual",
]


@dataclass(frozen=True)
class VirtualControllerParams:
    c: float
    obstacles: tuple[Obstacle, ...]

    @classmethod
    def from_scenario(cls, s: Scenario) -> "VirtualControllerParams":
        return cls(c=s.c, obstacles=tuple(s.obstacles))


def velocity_scaling(r, c: float):
    """Norm scaling for the finite-time stabilizer.

    Returns ``c**(2/3) * r**(1/3)`` for ``r <= c`` and ``r`` beyond, which
    is continuous, increasing, and makes the stabilizer a unit vector
    whenever the state is at least ``c`` from the origin.
    """
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("r must be nonnegative")
    out = np.where(r_arr <= c, c ** (2.0 / 3.0) * np.cbrt(r_arr), r_arr)
    return float(out) if out.ndim == 0 else out


def nu_s(xi, c: float):
    """Finite-time stabilizing direction ``-xi / s(||xi||)``; zero at zero."""
    xi = np.asarray(xi, dtype=float)
    r = np.linalg.norm(xi, axis=-1)
    s = velocity_scaling(r, c)
    safe = np.where(np.asarray(s) > 0.0, s, 1.0)
    return np.where(np.asarray(r)[..., None] > 0.0, -xi / np.asarray(safe)[..., None], 0.0)


def orthogonal_projection(z) -> np.ndarray:
    """Projector onto the hyperplane orthogonal to z, as a matrix."""
    z = np.asarray(z, dtype=float)
    n2 = float(z @ z)
    if n2 == 0.0:
        raise ValueError("cannot project along the zero vector")
    return np.eye(z.shape[-1]) - np.outer(z, z) / n2


def _project_out(d, v):
    # v minus its component along d; batched form of orthogonal_projection @ v.
    n2 = np.sum(d * d, axis=-1)
    if np.any(n2 == 0.0):
        raise ValueError("cannot project along the zero vector")
    return v - d * (np.sum(d * v, axis=-1) / n2)[..., None]


def nu_a(xi, q, c: float):
    """Avoidance direction: the stabilizer with its radial part (relative
    to the obstacle center q) projected out.  Flowing along it keeps
    ``||xi - q||`` constant."""
    xi = np.asarray(xi, dtype=float)
    q = np.asarray(q, dtype=float)
    return _project_out(xi - q, nu_s(xi, c))


def sigma(xi, q):
    """Ahead-of-obstacle indicator, ramped: 1 on <xi, xi-q> >= 0, 0 below -1."""
    xi = np.asarray(xi, dtype=float)
    q = np.asarray(q, dtype=float)
    ip = np.sum(xi * (xi - q), axis=-1)
    out = np.clip(ip + 1.0, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def alpha_s(xi, obs: Obstacle):
    """Stabilizer weight: ramps from 0 at the (sigma-shrunk) safety ball to
    1 at the activation radius."""
    xi = np.asarray(xi, dtype=float)
    dist = np.linalg.norm(xi - obs.center, axis=-1)
    s = sigma(xi, obs.center)
    out = np.clip((dist - obs.Delta * s) / (obs.lam - obs.Delta), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def alpha_a(xi, obs: Obstacle):
    """Avoidance weight ``sigma * (1 - alpha_s)``."""
    out = sigma(xi, obs.center) * (1.0 - np.asarray(alpha_s(xi, obs)))
    return float(out) if np.ndim(out) == 0 else out


def _check_not_centered(xi, obstacles):
    xi = np.asarray(xi, dtype=float)
    for obs in obstacles:
        if np.any(np.sum((xi - obs.center) ** 2, axis=-1) == 0.0):
            raise ValueError("state coincides with an obstacle center")


def mu_single(xi, obs: Obstacle, c: float):
    """Blend of stabilizer and avoidance around one obstacle."""
    _check_not_centered(xi, (obs,))
    ws = np.asarray(alpha_s(xi, obs))[..., None]
    wa = np.asarray(alpha_a(xi, obs))[..., None]
    return ws * nu_s(xi, c) + wa * nu_a(xi, obs.center, c)


def mu_multi(xi, params: VirtualControllerParams):
    """Multi-obstacle blend: product of stabilizer weights, sum of
    avoidance terms.  Separation of the activation shells means at most
    one avoidance term is active at a time."""
    xi = np.asarray(xi, dtype=float)
    _check_not_centered(xi, params.obstacles)
    ws = np.ones(xi.shape[:-1])
    out = np.zeros_like(xi)
    for obs in params.obstacles:
        ws = ws * np.asarray(alpha_s(xi, obs))
        wa = np.asarray(alpha_a(xi, obs))
        if np.any(wa > 0.0):
            out = out + wa[..., None] * nu_a(xi, obs.center, params.c)
    return out + np.asarray(ws)[..., None] * nu_s(xi, params.c)


_ROT_CCW = np.array([[0.0, -1.0], [1.0, 0.0]])


def select_qbar(xi, q, convention: str = "ccw"):
    """Unit vector orthogonal to ``xi - q``, of fixed handedness.

    In the plane the convention picks the quarter-turn direction (``ccw``
    rotates ``xi - q`` by +90 degrees, ``cw`` by -90).  In dimension three
    or more the first coordinate axis (or the second, when ``xi - q`` is
    aligned with the first) is projected onto the orthogonal complement
    and normalized; the convention argument is ignored there.
    """
    if convention not in ("ccw", "cw"):
        raise ValueError(f"unknown handedness {convention!r}")
    xi = np.asarray(xi, dtype=float)
    q = np.asarray(q, dtype=float)
    d = xi - q
    n = np.linalg.norm(d, axis=-1)
    if np.any(n == 0.0):
        raise ValueError("state coincides with the obstacle center")
    u = d / np.asarray(n)[..., None]
    p = xi.shape[-1]
    if p == 2:
        out = u @ _ROT_CCW.T if convention == "ccw" else u @ (-_ROT_CCW.T)
        return out
    e1 = np.zeros(p)
    e1[0] = 1.0
    e2 = np.zeros(p)
    e2[1] = 1.0
    v1 = e1 - u * np.sum(u * e1, axis=-1)[..., None]
    n1 = np.linalg.norm(v1, axis=-1)
    v2 = e2 - u * np.sum(u * e2, axis=-1)[..., None]
    n2 = np.linalg.norm(v2, axis=-1)
    # e1 fails only when xi - q is (nearly) along e1, in which case e2 works.
    use2 = np.asarray(n1 <= 1e-9)
    n1 = np.where(n1 > 0.0, n1, 1.0)
    n2 = np.where(n2 > 0.0, n2, 1.0)
    out = np.where(use2[..., None], v2 / np.asarray(n2)[..., None],
                   v1 / np.asarray(n1)[..., None])
    return out


def mu_bar(xi, rho, params: VirtualControllerParams):
    """Hybrid law: the blend in mode 0, the sideways detour in mode 1.

    In mode 1 the avoidance weight multiplies a fixed-handedness unit
    vector orthogonal to ``xi - q`` instead of the projected stabilizer,
    so the reference is carried around the obstacle even from states where
    the blend vanishes.  The detour direction is recomputed from the
    current state at every evaluation.
    """
    if rho not in (0, 1):
        raise ValueError(f"rho must be 0 or 1, got {rho}")
    if rho == 0:
        return mu_multi(xi, params)
    xi = np.asarray(xi, dtype=float)
    _check_not_centered(xi, params.obstacles)
    ws = np.ones(xi.shape[:-1])
    out = np.zeros_like(xi)
    for obs in params.obstacles:
        ws = ws * np.asarray(alpha_s(xi, obs))
        wa = np.asarray(alpha_a(xi, obs))
        if np.any(wa > 0.0):
            qb = select_qbar(xi, obs.center, obs.qbar)
            out = out + wa[..., None] * _project_out(xi - obs.center, qb)
    return out + np.asarray(ws)[..., None] * nu_s(xi, params.c)


# ---------------------------------------------------------------------------
# Closed-loop packaging of the virtual dynamics for the hybrid engine.

def _qbar_override(scenario: Scenario, qbar: str | None) -> Scenario:
    if qbar is None:
        return scenario
    from dataclasses import replace
    obstacles = tuple(replace(o, qbar=qbar) for o in scenario.obstacles)
    return replace(scenario, obstacles=obstacles)


def virtual_hybrid_system(scenario: Scenario, law: str = "hybrid",
                          qbar: str | None = None):
    """Package the virtual dynamics as a hybrid system definition.

    State layout is ``[xi_1 .. xi_p, rho]``.  With ``law="hybrid"`` the
    flow is the mode-dependent field and the jumps implement the
    hysteresis switching: mode 0 engages the detour on entering any
    obstacle's narrow cone section, mode 1 releases it once the state is
    clear of every widened cone.  (Releasing per obstacle would re-arm
    immediately through the other obstacles' release sets and jump
    forever; requiring all of them keeps the jump map's image outside the
    jump set.)  With ``law="blend"`` the flow is the non-hybrid blend and
    the jump set is empty.
    """
    from . import geometry
    from .hybrid_engine import HybridSystemDef

    if law not in ("hybrid", "blend"):
        raise ValueError(f"unknown law {law!r}")
    scenario = _qbar_override(scenario, qbar)
    params = VirtualControllerParams.from_scenario(scenario)
    obstacles = scenario.obstacles
    p = scenario.dimension
    xi_slice = slice(0, p)

    def flow_field(y):
        xi = y[:p]
        out = np.zeros_like(y)
        if law == "blend":
            out[:p] = mu_multi(xi, params)
        else:
            out[:p] = mu_bar(xi, int(round(y[p])), params)
        return out

    def jump_map(y):
        y2 = y.copy()
        y2[p] = 1.0 - y2[p]
        return y2

    if law == "blend" or not obstacles:
        def jump_set(y):
            return False

        jump_obstacle = None
    else:
        def jump_set(y):
            xi = y[:p]
            if y[p] == 0.0:
                return any(geometry.m1_membership(xi, o) for o in obstacles)
            return all(geometry.m0_membership(xi, o) for o in obstacles)

        def jump_obstacle(y):
            xi = y[:p]
            if y[p] == 0.0:
                for i, o in enumerate(obstacles):
                    if geometry.m1_membership(xi, o):
                        return i
                return None
            dists = [float(np.linalg.norm(xi - o.center)) for o in obstacles]
            return int(np.argmin(dists))

    def flow_set(y):
        return bool(geometry.in_safe_set(y[:p], obstacles))

    def diagnostics(y):
        xi = y[:p]
        row = {"rho": float(y[p])}
        for i, o in enumerate(obstacles):
            row[f"dist_{i}"] = float(np.linalg.norm(xi - o.center))
            row[f"alpha_s_{i}"] = alpha_s(xi, o)
            row[f"alpha_a_{i}"] = alpha_a(xi, o)
        return row

    return HybridSystemDef(
        dim=p + 1, flow_field=flow_field, jump_map=jump_map,
        flow_set=flow_set, jump_set=jump_set, jump_obstacle=jump_obstacle,
        diagnostics=diagnostics, rho_index=p, xi_slice=xi_slice)


def obstacle_step_cap(obstacles, xi, speed: float) -> float:
    """Step cap near obstacles: a quarter of the activation gap, scaled
    down by the current speed, whenever the state is within twice the
    activation radius of a center.  Keeps one step from skipping across
    a switching surface."""
    cap = math.inf
    for o in obstacles:
        if np.linalg.norm(xi - o.center) <= 2.0 * o.lam:
            cap = min(cap, 0.25 * (o.lam - o.Delta) / max(1.0, speed))
    return cap


def simulate_virtual(scenario: Scenario, xi0=None, rho0=None,
                     law: str = "hybrid", qbar: str | None = None):
    """Run the virtual reference system by itself.

    Initial conditions fall back to the scenario's ``init`` block.  On
    convergence (norm at most ``eps_stop``) the final reference sample is
    snapped to the origin exactly.
    """
    from .hybrid_engine import StepControl, StopRule, simulate

    scenario = _qbar_override(scenario, qbar)
    p = scenario.dimension
    if xi0 is None:
        if scenario.init is None or scenario.init.xi is None:
            raise ValueError("no initial reference state: pass xi0 or set init.xi")
        xi0 = scenario.init.xi
    xi0 = np.asarray(xi0, dtype=float)
    if xi0.shape != (p,):
        raise ValueError(f"xi0 has shape {xi0.shape}, expected ({p},)")
    if rho0 is None:
        rho0 = scenario.init.rho if scenario.init is not None else 0

    sysdef = virtual_hybrid_system(scenario, law=law)
    obstacles = scenario.obstacles

    def max_step_fn(y, dy):
        return obstacle_step_cap(obstacles, y[:p],
                                 float(np.linalg.norm(dy[:p])))

    integ = scenario.integrator
    ctrl = StepControl(rtol=integ.rtol, atol=integ.atol,
                       max_step=integ.max_step, max_step_fn=max_step_fn,
                       dt_sample=integ.dt_sample, tol_event=integ.tol_event)

    eps_stop = scenario.stop.eps_stop

    def converged(y):
        return float(np.linalg.norm(y[:p])) <= eps_stop

    def snap(y):
        y2 = y.copy()
        y2[:p] = 0.0
        return y2

    stop = StopRule(t_max=scenario.stop.t_max, j_max=scenario.stop.j_max,
                    converged=converged, snap=snap,
                    zeno_total=10 * len(obstacles))
    y0 = np.concatenate([xi0, [float(rho0)]])
    sol = simulate(sysdef, y0, ctrl, stop)
    sol.info["law"] = law
    return sol
