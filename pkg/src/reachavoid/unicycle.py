"""Extended unicycle: dynamics, tracking Lyapunov function, feedback.

State is ``(p1, p2, theta, w1, w2)``: planar position, heading, forward
and angular speed, with the inputs driving the two speeds.  The tracking
construction works in the body frame: the position error is rotated by
the heading, a polynomial velocity profile ``v`` plays the role of the
desired speeds, and the feedback cancels the profile's drift so the speed
error decays linearly.  All functions broadcast over leading axes.
"""
from __future__ import annotations

import math

import numpy as np

from .plant import PlantBundle, PlantModel, TrackingController

__all__ = [
    "P_MATRIX",
    "LAMBDA_MIN",
    "unicycle_f",
    "body_frame_error",
    "v_profile",
    "lyapunov_V",
    "lyapunov_grad",
    "unicycle_u",
    "d_unicycle",
    "equilibrium_state",
    "make_bundle",
]

P_MATRIX = np.array([[1.0, 1.0], [1.0, 2.0]])
# Smallest eigenvalue of P_MATRIX, computed once in closed form.
LAMBDA_MIN = (3.0 - math.sqrt(5.0)) / 2.0


def unicycle_f(x, u):
    """State derivative ``(w1 cos(theta), w1 sin(theta), w2, u1, u2)``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    theta, w1, w2 = x[..., 2], x[..., 3], x[..., 4]
    return np.stack([w1 * np.cos(theta), w1 * np.sin(theta), w2,
                     u[..., 0], u[..., 1]], axis=-1)


def body_frame_error(x, z_e):
    """Position error rotated into the body frame: ``R(theta)^T (z_e - p)``."""
    x = np.asarray(x, dtype=float)
    z_e = np.asarray(z_e, dtype=float)
    e1 = z_e[..., 0] - x[..., 0]
    e2 = z_e[..., 1] - x[..., 1]
    ct, st = np.cos(x[..., 2]), np.sin(x[..., 2])
    return np.stack([ct * e1 + st * e2, -st * e1 + ct * e2], axis=-1)


def v_profile(pbar):
    """Desired body-frame speeds ``(20 b1 b2^2 + 25 b1^3 + 20 b2^3, 20 b1 b2)``."""
    pbar = np.asarray(pbar, dtype=float)
    b1, b2 = pbar[..., 0], pbar[..., 1]
    return np.stack([20.0 * b1 * b2 ** 2 + 25.0 * b1 ** 3 + 20.0 * b2 ** 3,
                     20.0 * b1 * b2], axis=-1)


def lyapunov_V(x, z_e):
    """Tracking Lyapunov value: quadratic-plus-quartic in the body-frame
    error and quadratic in the speed error against the profile."""
    x = np.asarray(x, dtype=float)
    pbar = body_frame_error(x, z_e)
    b1, b2 = pbar[..., 0], pbar[..., 1]
    v = v_profile(pbar)
    ew1 = x[..., 3] - v[..., 0]
    ew2 = x[..., 4] - v[..., 1]
    quad = 0.5 * (b1 * b1 + 2.0 * b1 * b2 + 2.0 * b2 * b2)
    quart = 0.25 * (b1 ** 4 + b2 ** 4)
    out = quad + quart + 0.5 * ew1 * ew1 + 0.5 * ew2 * ew2
    return float(out) if out.ndim == 0 else out


def _v_jacobian(b1, b2):
    # Rows: dv1/db, dv2/db.
    return ((75.0 * b1 ** 2 + 20.0 * b2 ** 2, 40.0 * b1 * b2 + 60.0 * b2 ** 2),
            (20.0 * b2, 20.0 * b1))


def lyapunov_grad(x, z_e):
    """Analytic gradient of ``lyapunov_V`` in the five state coordinates."""
    x = np.asarray(x, dtype=float)
    pbar = body_frame_error(x, z_e)
    b1, b2 = pbar[..., 0], pbar[..., 1]
    v = v_profile(pbar)
    ew1 = x[..., 3] - v[..., 0]
    ew2 = x[..., 4] - v[..., 1]
    (dv1_b1, dv1_b2), (dv2_b1, dv2_b2) = _v_jacobian(b1, b2)
    # Partials of V in the body-frame error, including the profile's
    # feedback into the speed-error terms.
    g1 = b1 + b2 + b1 ** 3 - ew1 * dv1_b1 - ew2 * dv2_b1
    g2 = b1 + 2.0 * b2 + b2 ** 3 - ew1 * dv1_b2 - ew2 * dv2_b2
    ct, st = np.cos(x[..., 2]), np.sin(x[..., 2])
    return np.stack([
        -g1 * ct + g2 * st,          # d pbar / d p1 = -R^T column 1
        -g1 * st - g2 * ct,
        g1 * b2 - g2 * b1,           # d pbar / d theta rotates pbar a quarter turn
        ew1,
        ew2,
    ], axis=-1)


def unicycle_u(x, z_e):
    """Printed tracking feedback; cancels the profile drift so the speed
    error obeys ``e' = -e``."""
    x = np.asarray(x, dtype=float)
    pbar = body_frame_error(x, z_e)
    b1, b2 = pbar[..., 0], pbar[..., 1]
    v = v_profile(pbar)
    w1, w2 = x[..., 3], x[..., 4]
    u1 = (-w1 + v[..., 0]
          + (75.0 * b1 ** 2 + 20.0 * b2 ** 2) * (-w1 + w2 * b2)
          - (60.0 * b2 ** 2 + 40.0 * b1 * b2) * w2 * b1)
    u2 = (-w2 + v[..., 1]
          + 20.0 * b2 * (-w1 + w2 * b2)
          - 20.0 * b1 ** 2 * w2)
    return np.stack([u1, u2], axis=-1)


def _radial_bound(s):
    # Lower envelope of V over plant states at output distance s from the
    # setpoint: quadratic term through the smallest eigenvalue of P plus
    # the worst-case split of the quartic term.
    return 0.5 * LAMBDA_MIN * s ** 2 + s ** 4 / 8.0


def d_unicycle(z_e, obstacles, eps_tilde: float = 0.0) -> float:
    """Closed-form clearance budget.

    The infimand depends only on the distance between the setpoint and an
    obstacle point and is increasing in it, so the infimum over each ball
    sits at the nearest point: ``g(max(0, ||z_e - q|| - r))`` with
    ``g(s) = (lambda_min / 2) s^2 + s^4 / 8``.
    """
    z_e = np.asarray(z_e, dtype=float)
    best = math.inf
    for obs in obstacles:
        s = max(0.0, float(np.linalg.norm(z_e - obs.center)) - obs.radius)
        best = min(best, _radial_bound(s))
    return best - eps_tilde


def v_output_restriction(z_e, z) -> float:
    """Radial lower bound of V at output ``z``: feeds the generic
    boundary-discretization clearance as the infimand."""
    s = float(np.linalg.norm(np.asarray(z_e, float) - np.asarray(z, float)))
    return _radial_bound(s)


def equilibrium_state(z_e) -> np.ndarray:
    """Zero-V state at the setpoint: positioned on it, at rest."""
    z_e = np.asarray(z_e, dtype=float)
    return np.array([z_e[0], z_e[1], 0.0, 0.0, 0.0])


def make_bundle() -> PlantBundle:
    """Plant registration: model, tracking controller, clearance maps."""
    model = PlantModel(n=5, m=2, p=2, f=unicycle_f, h=lambda x: x[..., :2])
    controller = TrackingController(
        V=lyapunov_V, grad_V=lyapunov_grad, u=unicycle_u)
    return PlantBundle(
        name="unicycle", model=model, controller=controller,
        v_restriction=v_output_restriction, d_fn=d_unicycle,
        equilibrium=equilibrium_state)
