"""Geometric primitives for reach-and-avoid scenarios.

Obstacles are closed balls with a safety margin and an activation shell
around them.  The module owns the scenario description (JSON in, JSON out),
the half-space and cone predicates used by the hysteresis switching logic,
and the well-posedness validation of a scenario.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Obstacle",
    "IntegratorSettings",
    "StopSettings",
    "InitialState",
    "Scenario",
    "Violation",
    "ScenarioFormatError",
    "q_halfspace_membership",
    "cone_membership",
    "m1_membership",
    "m0_membership",
    "in_safe_set",
    "validate_scenario",
    "load_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "save_scenario",
    "random_point_in_safe_set",
]

DEFAULT_THETA1 = math.pi / 12
DEFAULT_THETA0 = math.pi / 6


class ScenarioFormatError(ValueError):
    """Raised when a scenario file is structurally malformed."""


def _point(x, dim=None, name="point"):
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        raise ScenarioFormatError(f"{name} must be a vector, got a scalar")
    if dim is not None and a.shape[-1] != dim:
        raise ScenarioFormatError(
            f"{name} has dimension {a.shape[-1]}, expected {dim}")
    return a


def _norm(v):
    return np.linalg.norm(v, axis=-1)


@dataclass(frozen=True, eq=False)
class Obstacle:
    """Ball obstacle with safety margin and hysteresis cone parameters.

    The hard ball has radius ``radius``; ``delta`` widens it to the safety
    ball of radius ``Delta = radius + delta`` that trajectories must never
    enter.  ``lam`` is the outer radius of the activation shell where the
    avoidance blend takes over.  ``theta1 < theta0`` are the half-opening
    angles of the narrow (detour-engaging) and wide (detour-releasing)
    cones; ``eps`` pads the wide cone's radial reach so the two switching
    sets cannot touch.
    """

    center: np.ndarray
    radius: float
    lam: float
    delta: float | None = None
    theta1: float = DEFAULT_THETA1
    theta0: float = DEFAULT_THETA0
    eps: float | None = None
    qbar: str = "ccw"

    def __post_init__(self):
        object.__setattr__(self, "center", _point(self.center, name="center"))
        if self.delta is None:
            object.__setattr__(self, "delta", 0.25 * self.radius)
        if self.eps is None:
            object.__setattr__(self, "eps", 0.1 * self.lam)
        if self.qbar not in ("ccw", "cw"):
            raise ScenarioFormatError(
                f"qbar must be 'ccw' or 'cw', got {self.qbar!r}")

    @property
    def Delta(self) -> float:
        """Radius of the safety ball (hard radius plus margin)."""
        return self.radius + self.delta


@dataclass(frozen=True)
class IntegratorSettings:
    rtol: float = 1e-9
    atol: float = 1e-11
    dt_sample: float = 0.01
    tol_event: float = 1e-10
    max_step: float = math.inf


@dataclass(frozen=True)
class StopSettings:
    t_max: float = 30.0
    j_max: int = 100
    eps_stop: float = 1e-8
    z_stop: float = 1e-3


@dataclass(frozen=True, eq=False)
class InitialState:
    xi: np.ndarray | None = None
    rho: int = 0
    x: np.ndarray | None = None

    def __post_init__(self):
        if self.xi is not None:
            object.__setattr__(self, "xi", _point(self.xi, name="init.xi"))
        if self.x is not None:
            object.__setattr__(self, "x", _point(self.x, name="init.x"))
        if self.rho not in (0, 1):
            raise ScenarioFormatError(f"init.rho must be 0 or 1, got {self.rho}")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Complete problem description for one reach-and-avoid run."""

    dimension: int = 2
    c: float = 1.0
    ell: float = 1.0
    target: np.ndarray | None = None
    obstacles: tuple[Obstacle, ...] = ()
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)
    stop: StopSettings = field(default_factory=StopSettings)
    init: InitialState | None = None
    d_cap: float = 10.0

    def __post_init__(self):
        if self.target is None:
            object.__setattr__(self, "target", np.zeros(self.dimension))
        else:
            object.__setattr__(
                self, "target", _point(self.target, self.dimension, "target"))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))


def q_halfspace_membership(a, q, relation: str):
    """Test <a, a - q> against zero.

    ``relation`` selects the comparison: one of ``<``, ``<=``, ``==``,
    ``>=``, ``>`` (the symbols ``≤``, ``≥``, ``=`` are accepted as
    aliases).  The boundary set (``==``) is the sphere through 0 and q
    centered at q/2.  Accepts a batch of points in the leading axes.
    """
    a = np.asarray(a, dtype=float)
    q = np.asarray(q, dtype=float)
    if a.shape[-1] != q.shape[-1]:
        raise ValueError(
            f"dimension mismatch: point has {a.shape[-1]}, center has {q.shape[-1]}")
    ip = np.sum(a * (a - q), axis=-1)
    ops = {
        "<": np.less, "<=": np.less_equal, "≤": np.less_equal,
        "=": np.equal, "==": np.equal,
        ">=": np.greater_equal, "≥": np.greater_equal, ">": np.greater,
    }
    try:
        op = ops[relation]
    except KeyError:
        raise ValueError(f"unknown relation {relation!r}") from None
    out = op(ip, 0.0)
    return bool(out) if out.ndim == 0 else out


def cone_membership(z, theta: float, q, eta: float):
    """Membership in the closed cone section with vertex q and axis q.

    The set contains the points z with ``||z - q|| <= eta`` whose direction
    from q makes an angle of at most ``theta`` with q itself.  The vertex
    z = q is excluded (the angle is undefined there).  Comparisons are
    exact; callers that need slack own it themselves.
    """
    z = np.asarray(z, dtype=float)
    q = np.asarray(q, dtype=float)
    qn = float(_norm(q))
    if qn == 0.0:
        raise ValueError("cone axis q must be nonzero")
    d = z - q
    dist = _norm(d)
    inside = (dist <= eta) & (dist > 0.0)
    angle_ok = np.sum(d * q, axis=-1) >= math.cos(theta) * dist * qn
    out = inside & angle_ok
    return bool(out) if out.ndim == 0 else out


def _cone_interior(z, theta, q, eta):
    # Strict-inequality version used for the closure-of-complement test.
    z = np.asarray(z, dtype=float)
    q = np.asarray(q, dtype=float)
    qn = float(_norm(q))
    if qn == 0.0:
        raise ValueError("cone axis q must be nonzero")
    d = z - q
    dist = _norm(d)
    return (dist < eta) & (np.sum(d * q, axis=-1) > math.cos(theta) * dist * qn)


def m1_membership(xi, obs: Obstacle):
    """Detour-engaging set: narrow cone section minus the safety ball."""
    dist = _norm(np.asarray(xi, dtype=float) - obs.center)
    out = cone_membership(xi, obs.theta1, obs.center, obs.lam) & (dist >= obs.Delta)
    return bool(out) if np.ndim(out) == 0 else out


def m0_membership(xi, obs: Obstacle):
    """Detour-releasing set: closed complement of the widened cone, minus
    the safety ball.

    The closure of the complement is the complement of the interior, so the
    test uses strict inequalities on the widened cone (angle theta0, reach
    lam + eps).
    """
    xi = np.asarray(xi, dtype=float)
    dist = _norm(xi - obs.center)
    interior = _cone_interior(xi, obs.theta0, obs.center, obs.lam + obs.eps)
    out = (~interior) & (dist >= obs.Delta)
    return bool(out) if np.ndim(out) == 0 else out


def in_safe_set(xi, obstacles) -> bool | np.ndarray:
    """True where xi lies outside every open safety ball."""
    xi = np.asarray(xi, dtype=float)
    ok = np.ones(xi.shape[:-1], dtype=bool)
    for obs in obstacles:
        ok &= _norm(xi - obs.center) >= obs.Delta
    return bool(ok) if ok.ndim == 0 else ok


@dataclass(frozen=True)
class Violation:
    """One failed well-posedness rule; indices point into the obstacle list."""

    rule: str
    obstacles: tuple[int, ...]
    message: str

    def __str__(self):
        return f"[{self.rule}] {self.message}"


def validate_scenario(scenario: Scenario) -> list[Violation]:
    """Check every standing assumption; violations are returned, not raised.

    An empty list means the scenario is well posed.  The checks are run in
    the frame of the scenario as given (the target is only used for the
    clearance rule), so callers may validate before or after shifting the
    target to the origin.
    """
    out: list[Violation] = []
    obs = scenario.obstacles
    p = scenario.dimension

    def bad(rule, idx, msg):
        out.append(Violation(rule, tuple(idx), msg))

    if not scenario.c > 0:
        bad("stabilizer radius", (), f"c must be positive, got {scenario.c}")
    if not scenario.ell > 0:
        bad("gate gain", (), f"ell must be positive, got {scenario.ell}")

    for i, o in enumerate(obs):
        if o.center.shape[-1] != p:
            bad("dimension", (i,),
                f"obstacle {i} center has dimension {o.center.shape[-1]}, scenario has {p}")
        if not o.radius > 0:
            bad("radius positive", (i,), f"obstacle {i} radius {o.radius} <= 0")
        if not o.delta > 0:
            bad("margin positive", (i,), f"obstacle {i} delta {o.delta} <= 0")
        if not o.eps > 0:
            bad("cone padding positive", (i,), f"obstacle {i} eps {o.eps} <= 0")
        if not (0 < o.theta1 < o.theta0 < math.pi / 4):
            bad("cone angle ordering", (i,),
                f"obstacle {i} needs 0 < theta1 < theta0 < pi/4, "
                f"got theta1={o.theta1}, theta0={o.theta0}")

    for i, o in enumerate(obs):
        # Activation shell must clear the safety ball and stay clear of the
        # other obstacles' safety balls.
        others = [
            _norm(o.center - o2.center) - o2.Delta
            for k, o2 in enumerate(obs) if k != i
        ]
        upper = min(others) if others else math.inf
        if not (o.Delta < o.lam < upper):
            bad("activation radius interval", (i,),
                f"obstacle {i} needs Delta={o.Delta:.6g} < lambda < {upper:.6g}, "
                f"got lambda={o.lam}")

    for i in range(len(obs)):
        for k in range(i + 1, len(obs)):
            gap = float(_norm(obs[i].center - obs[k].center))
            if gap <= obs[i].Delta + obs[k].Delta:
                bad("pairwise separation", (i, k),
                    f"safety balls of obstacles {i} and {k} intersect "
                    f"(center gap {gap:.6g} <= {obs[i].Delta + obs[k].Delta:.6g})")

    for i, o in enumerate(obs):
        clearance = float(_norm(o.center - scenario.target))
        if clearance < scenario.c + o.Delta:
            bad("target clearance", (i,),
                f"safety ball of obstacle {i} meets the stabilizer ball "
                f"(target gap {clearance:.6g} < {scenario.c + o.Delta:.6g})")

    return out


# ---------------------------------------------------------------------------
# Scenario (de)serialization.

def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioFormatError("scenario root must be a JSON object")
    try:
        dim = int(data.get("dimension", 2))
        obstacles = []
        for k, entry in enumerate(data.get("obstacles", [])):
            kwargs = dict(
                center=_point(entry["center"], dim, f"obstacles[{k}].center"),
                radius=float(entry["radius"]),
                lam=float(entry["lambda"]),
            )
            for key, attr in (("delta", "delta"), ("theta0", "theta0"),
                              ("theta1", "theta1"), ("eps", "eps"),
                              ("qbar", "qbar")):
                if key in entry:
                    kwargs[attr] = entry[key]
            obstacles.append(Obstacle(**kwargs))
        integ = IntegratorSettings(**data.get("integrator", {}))
        stop = StopSettings(**data.get("stop", {}))
        init = None
        if "init" in data:
            raw = data["init"]
            init = InitialState(
                xi=raw.get("xi"), rho=int(raw.get("rho", 0)), x=raw.get("x"))
        return Scenario(
            dimension=dim,
            c=float(data.get("c", 1.0)),
            ell=float(data.get("ell", 1.0)),
            target=data.get("target"),
            obstacles=tuple(obstacles),
            integrator=integ,
            stop=stop,
            init=init,
            d_cap=float(data.get("d_cap", 10.0)),
        )
    except ScenarioFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"malformed scenario: {exc}") from exc


def scenario_to_dict(s: Scenario) -> dict:
    obstacles = []
    for o in s.obstacles:
        obstacles.append({
            "center": o.center.tolist(),
            "radius": o.radius,
            "delta": o.delta,
            "lambda": o.lam,
            "theta0": o.theta0,
            "theta1": o.theta1,
            "eps": o.eps,
            "qbar": o.qbar,
        })
    out = {
        "dimension": s.dimension,
        "c": s.c,
        "ell": s.ell,
        "target": s.target.tolist(),
        "obstacles": obstacles,
        "integrator": {
            "rtol": s.integrator.rtol,
            "atol": s.integrator.atol,
            "dt_sample": s.integrator.dt_sample,
            "tol_event": s.integrator.tol_event,
        },
        "stop": {
            "t_max": s.stop.t_max,
            "j_max": s.stop.j_max,
            "eps_stop": s.stop.eps_stop,
            "z_stop": s.stop.z_stop,
        },
        "d_cap": s.d_cap,
    }
    if math.isfinite(s.integrator.max_step):
        out["integrator"]["max_step"] = s.integrator.max_step
    if s.init is not None:
        init = {"rho": s.init.rho}
        if s.init.xi is not None:
            init["xi"] = s.init.xi.tolist()
        if s.init.x is not None:
            init["x"] = s.init.x.tolist()
        out["init"] = init
    return out


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data)


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


def random_point_in_safe_set(scenario: Scenario, rng, rmin: float, rmax: float,
                             max_tries: int = 1000) -> np.ndarray:
    """Draw a point with norm in [rmin, rmax] outside every safety ball."""
    p = scenario.dimension
    for _ in range(max_tries):
        v = rng.normal(size=p)
        v /= np.linalg.norm(v)
        xi = v * rng.uniform(rmin, rmax)
        if in_safe_set(xi, scenario.obstacles):
            return xi
    raise RuntimeError("could not place a point outside the safety balls")
