import numpy as np
import pytest

from reachavoid import geometry, virtual_ctrl as vc
from reachavoid.virtual_ctrl import VirtualControllerParams

from conftest import trap_scenario

TRAP_OBS = trap_scenario().obstacles[0]  # center (3,0), Delta=1, lam=2


def test_velocity_scaling_branches():
    assert vc.velocity_scaling(8.0, 1.0) == 8.0
    assert vc.velocity_scaling(0.125, 1.0) == pytest.approx(0.5)
    assert vc.velocity_scaling(1.0, 1.0) == pytest.approx(1.0)
    # Continuity across the knee.
    lo = vc.velocity_scaling(1.0 - 1e-12, 1.0)
    hi = vc.velocity_scaling(1.0 + 1e-12, 1.0)
    assert abs(hi - lo) < 1e-11
    out = vc.velocity_scaling(np.array([0.0, 0.125, 4.0]), 2.0)
    assert out.shape == (3,)
    with pytest.raises(ValueError):
        vc.velocity_scaling(-1.0, 1.0)
    with pytest.raises(ValueError):
        vc.velocity_scaling(1.0, 0.0)


def test_stabilizer_direction():
    assert np.array_equal(vc.nu_s(np.zeros(2), 1.0), np.zeros(2))
    v = vc.nu_s(np.array([3.0, 4.0]), 1.0)
    # Unit speed outside the c-ball, pointing at the origin.
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.allclose(v, [-0.6, -0.8])
    # Inside, speed scales as a power of the radius: r = c/8 gives 1/4.
    v = vc.nu_s(np.array([0.125, 0.0]), 1.0)
    assert np.linalg.norm(v) == pytest.approx(0.25)


def test_orthogonal_projection():
    z = np.array([1.0, 2.0, 2.0])
    P = vc.orthogonal_projection(z)
    assert np.allclose(P, P.T)
    assert np.allclose(P @ P, P)
    assert np.allclose(P @ z, 0.0)
    w = np.array([2.0, -1.0, 0.0])  # orthogonal to z
    assert np.allclose(P @ w, w)
    with pytest.raises(ValueError):
        vc.orthogonal_projection(np.zeros(3))


def test_avoidance_is_tangential(rng):
    q = np.array([3.0, 0.0])
    for _ in range(20):
        xi = rng.uniform(-5, 5, size=2)
        if np.allclose(xi, q):
            continue
        v = vc.nu_a(xi, q, 1.0)
        # No radial component: the obstacle distance is constant along v.
        assert abs(np.dot(v, xi - q)) < 1e-12


def test_sigma_ramp():
    q = np.array([3.0, 0.0])
    assert vc.sigma(np.array([4.0, 0.0]), q) == 1.0
    assert vc.sigma(np.array([1.0, 0.0]), q) == 0.0
    # On the ramp the value is the inner product shifted by one.
    x = 2.8
    assert vc.sigma(np.array([x, 0.0]), q) == pytest.approx(x * (x - 3.0) + 1.0)


def test_weights_on_trap_obstacle():
    obs = TRAP_OBS
    assert vc.alpha_s(np.array([5.0, 0.0]), obs) == 1.0
    assert vc.alpha_s(np.array([4.0, 0.0]), obs) == pytest.approx(0.0)
    assert vc.alpha_s(np.array([4.5, 0.0]), obs) == pytest.approx(0.5)
    # Behind the obstacle the safety ball does not shrink the ramp.
    assert vc.alpha_s(np.array([2.5, 0.0]), obs) == pytest.approx(0.5)
    assert vc.alpha_a(np.array([4.5, 0.0]), obs) == pytest.approx(0.5)
    assert vc.alpha_a(np.array([2.5, 0.0]), obs) == 0.0
    assert vc.alpha_a(np.array([6.0, 0.0]), obs) == 0.0


def test_blend_single_matches_multi(rng):
    params = VirtualControllerParams(c=1.0, obstacles=(TRAP_OBS,))
    for _ in range(30):
        xi = rng.uniform(-2, 8, size=2)
        a = vc.mu_single(xi, TRAP_OBS, 1.0)
        b = vc.mu_multi(xi, params)
        assert np.allclose(a, b, atol=1e-14)
    with pytest.raises(ValueError):
        vc.mu_single(TRAP_OBS.center, TRAP_OBS, 1.0)


def test_blend_far_field_is_stabilizer():
    params = VirtualControllerParams(c=1.0, obstacles=(TRAP_OBS,))
    xi = np.array([-4.0, 3.0])
    assert np.allclose(vc.mu_multi(xi, params), vc.nu_s(xi, 1.0))
    assert np.allclose(vc.mu_bar(xi, 1, params), vc.nu_s(xi, 1.0))


def test_blend_stalls_on_trap_axis():
    # Collinear behind the obstacle both terms vanish; this is the stall
    # the detour mode exists to break.
    params = VirtualControllerParams(c=1.0, obstacles=(TRAP_OBS,))
    xi = np.array([4.0, 0.0])
    assert np.linalg.norm(vc.mu_multi(xi, params)) < 1e-15
    assert np.linalg.norm(vc.mu_bar(xi, 1, params)) > 0.1


def test_detour_direction_2d():
    q = np.array([3.0, 0.0])
    xi = np.array([4.0, 0.0])
    assert np.allclose(vc.select_qbar(xi, q, "ccw"), [0.0, 1.0])
    assert np.allclose(vc.select_qbar(xi, q, "cw"), [0.0, -1.0])
    with pytest.raises(ValueError):
        vc.select_qbar(xi, q, "left")
    with pytest.raises(ValueError):
        vc.select_qbar(q, q, "ccw")


def test_detour_direction_general(rng):
    q = np.array([1.0, -2.0, 0.5])
    for _ in range(20):
        xi = q + rng.normal(size=3)
        v = vc.select_qbar(xi, q)
        assert np.linalg.norm(v) == pytest.approx(1.0)
        assert abs(np.dot(v, xi - q)) < 1e-12
    # Degenerate axis: falls back to the second coordinate direction.
    v = vc.select_qbar(q + np.array([2.0, 0.0, 0.0]), q)
    assert np.allclose(v, [0.0, 1.0, 0.0])


def test_mode_switch_validation():
    params = VirtualControllerParams(c=1.0, obstacles=(TRAP_OBS,))
    with pytest.raises(ValueError):
        vc.mu_bar(np.array([5.0, 0.0]), 2, params)
    a = vc.mu_bar(np.array([5.0, 2.0]), 0, params)
    assert np.allclose(a, vc.mu_multi(np.array([5.0, 2.0]), params))


def test_jump_image_leaves_jump_set(rng):
    # After any switch the state must flow before it can switch again.
    sc = trap_scenario(obstacles=(
        TRAP_OBS,
        geometry.Obstacle(center=np.array([-4.0, 1.0]), radius=0.5,
                          delta=0.5, lam=2.0),
    ))
    assert geometry.validate_scenario(sc) == []
    sysdef = vc.virtual_hybrid_system(sc)
    hits = 0
    for _ in range(3000):
        y = np.empty(3)
        y[:2] = rng.uniform(-8, 8, size=2)
        y[2] = float(rng.integers(0, 2))
        if not sysdef.jump_set(y):
            continue
        hits += 1
        assert not sysdef.jump_set(sysdef.jump_map(y))
    assert hits > 50


def test_jump_obstacle_reports_engaged_index():
    sc = trap_scenario()
    sysdef = vc.virtual_hybrid_system(sc)
    y = np.array([4.5, 0.0, 0.0])
    assert sysdef.jump_set(y)
    assert sysdef.jump_obstacle(y) == 0


def test_step_cap_near_obstacle():
    cap = vc.obstacle_step_cap((TRAP_OBS,), np.array([5.0, 0.0]), 0.5)
    assert cap == pytest.approx(0.25)
    cap = vc.obstacle_step_cap((TRAP_OBS,), np.array([5.0, 0.0]), 2.0)
    assert cap == pytest.approx(0.125)
    assert vc.obstacle_step_cap((TRAP_OBS,), np.array([20.0, 0.0]), 1.0) == np.inf


def test_law_validation():
    with pytest.raises(ValueError):
        vc.virtual_hybrid_system(trap_scenario(), law="open-loop")
    sysdef = vc.virtual_hybrid_system(trap_scenario(), law="blend")
    assert not sysdef.jump_set(np.array([4.5, 0.0, 0.0]))


def test_simulate_virtual_converges_and_snaps():
    sol = vc.simulate_virtual(trap_scenario(), xi0=np.array([0.5, 0.5]))
    assert sol.termination == "converged"
    assert np.array_equal(sol.y[-1, :2], np.zeros(2))
    assert sol.t[-1] < 3.0
    with pytest.raises(ValueError):
        vc.simulate_virtual(trap_scenario(), xi0=np.zeros(3))
