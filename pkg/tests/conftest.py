"""Shared fixtures. The ladders are expensive, so they are built once per session."""
import time

import numpy as np
import pytest

from exterior_bounds.approx import alg1_run
from exterior_bounds.conforming import compute_bounds
from exterior_bounds.fem import FeSpace
from exterior_bounds.mesh import generate
from exterior_bounds.nonconforming import fabricate_flux, nc_bounds
from exterior_bounds.problem import ProblemSpec

BALL_R = 5.0
BALL_LADDER = [(6, 4), (7, 5), (8, 6)]
CUBE_R = 10.0
CUBE_LADDER = [(8, 4), (10, 5), (12, 6)]
DELTAS = (0.01, 0.1)
THETAS = (0.5, 1.0, 2.0)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def _ladder_entry(geometry, R, nr, na):
    t0 = time.perf_counter()
    mesh = generate(geometry, R, nr, na)
    problem = ProblemSpec(mesh, geometry=geometry)
    approx = alg1_run(FeSpace(mesh, 1, 1), problem)
    report, maj, mnr = compute_bounds(approx, problem)
    return dict(entry=(nr, na), mesh=mesh, problem=problem, approx=approx, report=report, maj=maj, mnr=mnr,
                seconds=time.perf_counter() - t0)


@pytest.fixture(scope="session")
def ball_ladder():
    return [_ladder_entry("ball", BALL_R, *e) for e in BALL_LADDER]


@pytest.fixture(scope="session")
def cube_ladder():
    return [_ladder_entry("cube", CUBE_R, *e) for e in CUBE_LADDER]


@pytest.fixture(scope="session")
def ball_nc(ball_ladder):
    """Non-conforming reports on the two coarser ladder meshes, keyed by (index, delta)."""
    out = {}
    for i, run in enumerate(ball_ladder[:2]):
        for d in (0.0,) + DELTAS if i == 0 else DELTAS:
            v = fabricate_flux(run["approx"], run["problem"], d)
            out[i, d] = nc_bounds(v, run["problem"], thetas=THETAS, delta=d)
    return out


@pytest.fixture(scope="session")
def small_ball():
    mesh = generate("ball", BALL_R, 3, 2)
    return mesh, ProblemSpec(mesh)


@pytest.fixture(scope="session")
def small_ball_run(small_ball):
    mesh, problem = small_ball
    return alg1_run(FeSpace(mesh, 1, 1), problem)


@pytest.fixture(scope="session")
def small_cube():
    mesh = generate("cube", 3.0, 2, 2)
    return mesh, ProblemSpec(mesh, geometry="cube")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def reference_tet_mesh():
    from exterior_bounds.mesh import TetMesh

    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    faces = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
    return TetMesh(v, np.array([[0, 1, 2, 3]]), faces, np.array([1, 2, 3, 4]))
