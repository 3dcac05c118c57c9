import numpy as np
import pytest

from reachavoid import geometry


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def plain_scenario(**kw):
    """No obstacles, origin target."""
    defaults = dict(dimension=2, c=1.0, ell=5.0, target=np.zeros(2),
                    obstacles=())
    defaults.update(kw)
    return geometry.Scenario(**defaults)


def trap_scenario(**kw):
    """Single obstacle dead ahead of a collinear start."""
    defaults = dict(
        dimension=2, c=1.0, ell=5.0, target=np.zeros(2),
        obstacles=(geometry.Obstacle(center=np.array([3.0, 0.0]),
                                     radius=0.5, delta=0.5, lam=2.0),),
        stop=geometry.StopSettings(t_max=40.0),
        init=geometry.InitialState(xi=np.array([6.0, 0.0])),
    )
    defaults.update(kw)
    return geometry.Scenario(**defaults)


def course_scenario(**kw):
    """Three-obstacle slalom for the coupled loop."""
    defaults = dict(
        dimension=2, c=1.0, ell=5.0, target=np.zeros(2),
        obstacles=(
            geometry.Obstacle(center=np.array([9.0, 0.0]), radius=0.8,
                              delta=0.3, lam=2.0),
            geometry.Obstacle(center=np.array([5.2, 1.0]), radius=0.7,
                              delta=0.3, lam=1.8),
            geometry.Obstacle(center=np.array([2.6, -1.1]), radius=0.5,
                              delta=0.25, lam=1.3),
        ),
        integrator=geometry.IntegratorSettings(dt_sample=0.5),
        stop=geometry.StopSettings(t_max=5e4, j_max=100),
        init=geometry.InitialState(xi=np.array([12.0, 0.0])),
    )
    defaults.update(kw)
    return geometry.Scenario(**defaults)


def random_scenario(rng, max_obstacles=5):
    """Valid random 2-D scenario with 1..max_obstacles obstacles."""
    for _ in range(200):
        n = int(rng.integers(1, max_obstacles + 1))
        obstacles = []
        for _ in range(n):
            radius = float(rng.uniform(0.3, 1.0))
            delta = 0.25 * radius
            lam = radius + delta + float(rng.uniform(0.3, 1.5))
            dist = float(rng.uniform(lam + 1.2, 9.0))
            ang = float(rng.uniform(0.0, 2.0 * np.pi))
            center = dist * np.array([np.cos(ang), np.sin(ang)])
            obstacles.append(geometry.Obstacle(center=center, radius=radius,
                                               delta=delta, lam=lam))
        sc = geometry.Scenario(dimension=2, c=1.0, ell=5.0,
                               target=np.zeros(2),
                               obstacles=tuple(obstacles))
        if not geometry.validate_scenario(sc):
            return sc
    raise RuntimeError("no valid random scenario found")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
