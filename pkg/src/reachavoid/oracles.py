"""Independent verification utilities.

Everything here deliberately avoids the production code paths it checks:
gradients come from central differences, clearance values from a brute
boundary sweep, and trajectory properties are recomputed from the raw
samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Scenario
from .hybrid_engine import HybridSolution

__all__ = [
    "PropertyReport",
    "fd_gradient",
    "d_discretized",
    "winding_angle",
    "check_trajectory",
    "ALL_CHECKS",
]


@dataclass(frozen=True)
class PropertyReport:
    name: str
    passed: bool
    tolerance: float
    # Worst-case witness: sample time/jump/value context.  Present on
    # failure, usually also on pass (the extremal sample).
    witness: dict | None = None
    detail: str = ""

    def __str__(self):
        tag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{tag} {self.name}{extra}"


def fd_gradient(field, point, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar field."""
    point = np.asarray(point, dtype=float)
    out = np.empty_like(point)
    for k in range(point.size):
        hi = point.copy()
        lo = point.copy()
        hi[k] += step
        lo[k] -= step
        out[k] = (field(hi) - field(lo)) / (2.0 * step)
    return out


def d_discretized(z_e, obstacles, v_restriction, points: int = 10_000) -> float:
    """Clearance by brute minimization over sampled obstacle boundaries."""
    if points < 16:
        raise ValueError("need at least 16 boundary points")
    z_e = np.asarray(z_e, dtype=float)
    best = math.inf
    phi = np.linspace(0.0, 2.0 * math.pi, points, endpoint=False)
    ring = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    for obs in obstacles:
        for pt in obs.center + obs.radius * ring:
            best = min(best, float(v_restriction(z_e, pt)))
    return best


def winding_angle(points, center) -> float:
    """Total signed angle swept by ``points - center``; sign gives the
    side on which a path passes the center."""
    d = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
    a, b = d[:-1], d[1:]
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    dot = np.sum(a * b, axis=1)
    return float(np.sum(np.arctan2(cross, dot)))


ALL_CHECKS = ("hybrid_domain", "safety_radii", "norm_monotonicity",
              "gate_invariance", "jump_budget")


def check_trajectory(sol: HybridSolution, scenario: Scenario,
                     checks=None) -> list[PropertyReport]:
    """Recompute trajectory-level guarantees from the samples.

    ``gate_invariance`` is skipped automatically for runs without gate
    diagnostics (reference-only runs).
    """
    if sol.t.size == 0:
        raise ValueError("empty solution")
    if checks is None:
        checks = ALL_CHECKS
    out = []
    for name in checks:
        if name == "gate_invariance" and "gate" not in sol.diag:
            continue
        out.append(_CHECKS[name](sol, scenario))
    return out


def _check_hybrid_domain(sol, scenario):
    t, j = sol.t, sol.j
    bad = None
    if np.any(np.diff(t) < 0):
        k = int(np.argmax(np.diff(t) < 0))
        bad = {"index": k, "t": float(t[k + 1]), "value": "t decreased"}
    dj = np.diff(j)
    if bad is None and np.any((dj != 0) & (dj != 1)):
        k = int(np.argmax((dj != 0) & (dj != 1)))
        bad = {"index": k, "t": float(t[k + 1]), "value": f"j stepped by {dj[k]}"}
    if bad is None and np.any((dj == 1) & (np.diff(t) != 0.0)):
        k = int(np.argmax((dj == 1) & (np.diff(t) != 0.0)))
        bad = {"index": k, "t": float(t[k + 1]), "value": "flow time moved across a jump"}
    if bad is None and int(j[-1]) - int(j[0]) != len(sol.jumps):
        bad = {"value": f"{len(sol.jumps)} jump records but j advanced by {int(j[-1]) - int(j[0])}"}
    return PropertyReport(
        "hybrid_domain", bad is None, 0.0, bad,
        detail="" if bad is None else str(bad.get("value")))


def _check_safety(sol, scenario, tol: float = 1e-6):
    xi = sol.xi()
    worst = None
    ok = True
    for i, obs in enumerate(scenario.obstacles):
        dist = np.linalg.norm(xi - obs.center, axis=1)
        k = int(np.argmin(dist))
        margin = float(dist[k] - obs.Delta)
        if worst is None or margin < worst["margin"]:
            worst = {"obstacle": i, "t": float(sol.t[k]), "j": int(sol.j[k]),
                     "distance": float(dist[k]), "margin": margin}
        if dist[k] < obs.Delta - tol:
            ok = False
    detail = ("no obstacles" if worst is None
              else f"worst margin {worst['margin']:.3e} at obstacle {worst['obstacle']}")
    return PropertyReport("safety_radii", ok, tol, worst, detail)


def _check_monotone(sol, scenario, slack: float = 1e-9):
    rho = sol.diag.get("rho")
    if rho is None:
        rho = np.zeros(sol.t.size)
    norms = np.linalg.norm(sol.xi(), axis=1)
    worst = {"increase": 0.0}
    ok = True
    if norms.size >= 2:
        # Compare consecutive samples inside maximal rho = 0 stretches.
        same_mode = (rho[:-1] == 0.0) & (rho[1:] == 0.0)
        growth = np.where(same_mode, norms[1:] - norms[:-1], -math.inf)
        k = int(np.argmax(growth))
        if math.isfinite(growth[k]) and growth[k] > 0.0:
            worst = {"increase": float(growth[k]), "t": float(sol.t[k + 1]),
                     "j": int(sol.j[k + 1]), "norm": float(norms[k + 1])}
    if worst["increase"] > slack:
        ok = False
    return PropertyReport(
        "norm_monotonicity", ok, slack, worst,
        f"max increase {worst['increase']:.3e} on rho=0 segments")


def _check_gate(sol, scenario, tol: float = 1e-6):
    gate = sol.diag["gate"]
    zeta = sol.xi()
    held0 = bool(gate[0] >= 0.0)
    start = 0
    if not held0:
        idx = np.nonzero(gate >= 0.0)[0]
        start = int(idx[0]) if idx.size else gate.size
    ok = True
    witness = None
    if start < gate.size:
        k = start + int(np.argmin(gate[start:]))
        witness = {"t": float(sol.t[k]), "j": int(sol.j[k]),
                   "gate": float(gate[k]), "held_initially": held0}
        if gate[k] < -tol:
            ok = False
    # While the gate is closed the reference velocity is exactly zero, and
    # its reopening is step-aligned, so closed-gate samples must agree to
    # the bit.
    frozen = gate < 0.0
    pair = frozen[:-1] & frozen[1:]
    if np.any(pair):
        drift = float(np.max(np.abs(zeta[1:][pair] - zeta[:-1][pair])))
        if drift > 0.0:
            ok = False
            witness = (witness or {}) | {
                "value": f"reference drifted {drift:.3e} while gate closed"}
    detail = f"min gate {float(np.min(gate[start:])) if start < gate.size else float('nan'):.3e}"
    if not held0:
        detail += f", recovered at sample {start}"
    return PropertyReport("gate_invariance", ok, tol, witness, detail)


def _check_jump_budget(sol, scenario):
    n_obs = len(scenario.obstacles)
    budget = 2 * n_obs
    count = len(sol.jumps)
    ok = count <= budget and sol.termination != "zeno_guard"
    # Three jumps inside a vanishing window is the chattering signature.
    times = [rec.t for rec in sol.jumps]
    for a, b in zip(times, times[2:]):
        if b - a < 1e-6:
            ok = False
    return PropertyReport(
        "jump_budget", ok, 0.0,
        {"jumps": count, "budget": budget, "termination": sol.termination},
        f"{count} jumps (budget {budget})")


_CHECKS = {
    "hybrid_domain": _check_hybrid_domain,
    "safety_radii": _check_safety,
    "norm_monotonicity": _check_monotone,
    "gate_invariance": _check_gate,
    "jump_budget": _check_jump_budget,
}
