import math

import numpy as np
import pytest

from reachavoid import plant as pl
from reachavoid.geometry import InitialState, Obstacle
from reachavoid.plant import (
    CoupledState,
    PlantBundle,
    PlantModel,
    TrackingController,
    d_bound,
    shift_to_origin,
    simulate_closed_loop,
)
from reachavoid.virtual_ctrl import VirtualControllerParams, mu_bar

from conftest import plain_scenario, trap_scenario


def integrator_bundle(with_restriction=True):
    """Velocity-controlled point mass: x' = u, output = x."""
    model = PlantModel(n=2, m=2, p=2, f=lambda x, u: u, h=lambda x: x)
    ctrl = TrackingController(
        V=lambda x, z: 0.5 * float(np.sum((x - z) ** 2)),
        grad_V=lambda x, z: x - z,
        u=lambda x, z: -(x - z),
    )
    return PlantBundle(
        name="point", model=model, controller=ctrl,
        v_restriction=(lambda z_e, z: 0.5 * float(np.sum((z - z_e) ** 2)))
        if with_restriction else None,
        equilibrium=lambda z_e: np.array(z_e, dtype=float),
    )


def test_coupled_state_round_trip():
    s = CoupledState(x=np.arange(3.0), zeta=np.array([5.0, 6.0]), rho=1.0)
    v = s.to_vector()
    assert v.tolist() == [0.0, 1.0, 2.0, 5.0, 6.0, 1.0]
    back = CoupledState.from_vector(v, n=3, p=2)
    assert np.array_equal(back.x, s.x)
    assert np.array_equal(back.zeta, s.zeta)
    assert back.rho == 1.0


def test_shift_to_origin():
    sc = plain_scenario(
        target=np.array([1.0, 1.0]),
        obstacles=(Obstacle(center=np.array([4.0, 1.0]), radius=0.5,
                            delta=0.5, lam=2.0),),
        init=InitialState(xi=np.array([3.0, 1.0])))
    shifted, offset = shift_to_origin(sc)
    assert np.array_equal(offset, [1.0, 1.0])
    assert np.array_equal(shifted.target, [0.0, 0.0])
    assert np.array_equal(shifted.obstacles[0].center, [3.0, 0.0])
    assert np.array_equal(shifted.init.xi, [2.0, 0.0])
    # The input scenario is not mutated.
    assert np.array_equal(sc.target, [1.0, 1.0])
    assert np.array_equal(sc.obstacles[0].center, [4.0, 1.0])


def v_out(z_e, z):
    return 0.5 * float(np.sum((z - z_e) ** 2))


def test_d_bound_no_obstacles():
    got = d_bound(np.zeros(2), (), v_out)
    assert got.value == math.inf and got.disc_error == 0.0


def test_d_bound_planar_only():
    obs = (Obstacle(center=np.array([3.0, 0.0]), radius=0.5, delta=0.5,
                    lam=2.0),)
    with pytest.raises(NotImplementedError):
        d_bound(np.zeros(3), obs, v_out)


def test_d_bound_ring_minimum():
    obs = (Obstacle(center=np.array([3.0, 0.0]), radius=0.5, delta=0.5,
                    lam=2.0),)
    got = d_bound(np.zeros(2), obs, v_out)
    # Nearest hard-boundary point is (2.5, 0), which the ring hits exactly.
    assert got.value == pytest.approx(0.5 * 2.5 ** 2, rel=1e-12)
    assert 0.0 < got.disc_error < 0.1
    shifted = d_bound(np.zeros(2), obs, v_out, eps_tilde=0.25)
    assert shifted.value == pytest.approx(got.value - 0.25, rel=1e-12)


def test_d_bound_takes_nearest_obstacle():
    obs = (
        Obstacle(center=np.array([3.0, 0.0]), radius=0.5, delta=0.5, lam=2.0),
        Obstacle(center=np.array([0.0, 2.0]), radius=0.5, delta=0.5, lam=1.4),
    )
    got = d_bound(np.zeros(2), obs, v_out)
    assert got.value == pytest.approx(0.5 * 1.5 ** 2, rel=1e-12)


def test_coupled_flow_gate():
    bundle = integrator_bundle()
    params = VirtualControllerParams(c=1.0, obstacles=())
    d_fn = lambda z: 2.0

    # Tracking error above the budget: the reference is pinned.
    s = CoupledState(x=np.array([10.0, 0.0]), zeta=np.array([4.0, 0.0]),
                     rho=0.0)
    ds = pl.coupled_flow(s, bundle.model, bundle.controller, params,
                         ell=5.0, d_fn=d_fn)
    assert np.array_equal(ds.zeta, np.zeros(2))
    assert np.array_equal(ds.x, -(s.x - s.zeta))
    assert ds.rho == 0.0

    # Open gate: reference speed is ell * (d - V) along the hybrid law.
    s = CoupledState(x=np.array([4.0, 1.0]), zeta=np.array([4.0, 0.0]),
                     rho=0.0)
    ds = pl.coupled_flow(s, bundle.model, bundle.controller, params,
                         ell=5.0, d_fn=d_fn)
    want = 5.0 * (2.0 - 0.5) * mu_bar(s.zeta, 0, params)
    assert np.allclose(ds.zeta, want)

    # Arrival freeze.
    s = CoupledState(x=np.array([1.0, 0.0]), zeta=np.array([1e-10, 0.0]),
                     rho=0.0)
    ds = pl.coupled_flow(s, bundle.model, bundle.controller, params,
                         ell=5.0, d_fn=d_fn, eps_freeze=1e-8)
    assert np.array_equal(ds.zeta, np.zeros(2))


def test_closed_loop_obstacle_free_uses_budget_cap():
    sc = plain_scenario(init=InitialState(xi=np.array([2.0, 0.0])))
    sol = simulate_closed_loop(sc, integrator_bundle(with_restriction=False))
    # No obstacles means no finite clearance; the configured cap applies.
    assert np.all(sol.diag["d"] == sc.d_cap)
    assert sol.info["gate_held_initially"] is True
    assert sol.info["gate_recovered_at"] is None
    assert sol.termination in ("converged", "t_budget")
    assert np.linalg.norm(sol.y[-1, 2:4]) < 1e-2
    assert np.linalg.norm(sol.y[-1, 0:2]) < 1e-2


def test_closed_loop_gate_freeze_and_recovery():
    # Start the plant far from the reference: the gate is shut until the
    # tracking error decays, and the reference must not move a bit before
    # that.
    sc = trap_scenario(stop=plain_scenario().stop.__class__(t_max=2.0))
    bundle = integrator_bundle()
    x0 = np.array([20.0, 0.0])
    sol = simulate_closed_loop(sc, bundle, x0=x0)

    assert sol.info["gate_held_initially"] is False
    # V(t) = V0 exp(-2t) crosses d = 3.125 at a computable time.
    v0 = 0.5 * 14.0 ** 2
    t_star = 0.5 * math.log(v0 / 3.125)
    rec = sol.info["gate_recovered_at"]
    assert rec == pytest.approx(t_star, abs=1e-6)

    frozen = sol.t < rec - 1e-12
    assert np.count_nonzero(frozen) > 10
    assert np.all(sol.y[frozen][:, 2:4] == np.array([6.0, 0.0]))
    moved = sol.t > rec + 0.1
    assert np.any(sol.y[moved][:, 2] < 6.0)
    assert "dist_0" in sol.diag and "dist_out_0" in sol.diag


def test_closed_loop_world_frame():
    sc = plain_scenario(target=np.array([1.0, 1.0]),
                        init=InitialState(xi=np.array([3.0, 1.0])))
    sol = simulate_closed_loop(sc, integrator_bundle())
    assert np.array_equal(sol.info["offset"], [1.0, 1.0])
    assert sol.info["plant"] == "point"
    assert sol.info["x_slice"] == slice(0, 2)
    # Internal frame drives the reference to the origin (= world target).
    assert np.linalg.norm(sol.y[-1, 2:4]) < 1e-2


def test_closed_loop_input_validation():
    bundle = integrator_bundle()
    with pytest.raises(ValueError):
        simulate_closed_loop(plain_scenario(), bundle)
    sc = plain_scenario(init=InitialState(xi=np.array([2.0, 0.0])))
    with pytest.raises(ValueError):
        simulate_closed_loop(sc, bundle, x0=np.zeros(3))
