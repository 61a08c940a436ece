import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from exterior_bounds.approx import from_function
from exterior_bounds.conforming import (
    FluxForms,
    MajorantConfig,
    compute_bounds,
    element_indicator,
    exact_error_ball,
    flux_constraints,
    maximize_minorant,
    minimize_majorant,
    optimal_beta,
    quadratic_majorant,
)
from exterior_bounds.errors import ParameterError, UsageError
from exterior_bounds.fem import FeSpace, interpolate
from exterior_bounds.mesh import BoundaryTag, SYMMETRY_TAGS

# measured on the medium ball mesh (7, 5): 0.903; coarse (6, 4): 0.857
SPEARMAN_MIN = 0.8


def test_config_validation():
    for bad in (dict(flux_degree=3), dict(beta0=0.0), dict(beta_tol=0.0), dict(beta_max_iter=0),
                dict(cg_rel_tol=-1.0), dict(preconditioner="ilu")):
        with pytest.raises(ParameterError):
            MajorantConfig(**bad)


def test_flux_constraints(small_ball):
    mesh, _ = small_ball
    space = FeSpace(mesh, 2, 3)
    n = space.n_scalar
    cs0 = flux_constraints(space, 0.0)
    sph = space.scalar_dofs_on(BoundaryTag.SPHERE)
    on_sphere = np.isin(cs0.indices % n, sph)
    assert np.all(cs0.values[on_sphere] == 0.0)

    cs = flux_constraints(space, 2.0)
    x = space.dof_coords
    k = int(np.flatnonzero(np.all(np.isclose(x, [5.0, 0, 0]), axis=1))[0])
    got = {c: cs.values[np.searchsorted(cs.indices, k + c * n)] for c in range(3)}
    assert got[0] == pytest.approx(-2.0 / 25, rel=1e-14)
    assert got[1] == 0.0 and got[2] == 0.0

    sym = {c: set(space.scalar_dofs_on(t)) - set(sph) for c, t in enumerate(SYMMETRY_TAGS)}
    assert len(cs) == 3 * len(sph) + sum(len(s) for s in sym.values())
    with pytest.raises(UsageError):
        flux_constraints(FeSpace(mesh, 2), 1.0)


def test_beta_identity():
    c, a_sq, b_sq = 2.0, 0.3, 0.7
    beta = optimal_beta(c, a_sq, b_sq)
    exact = (c * math.sqrt(a_sq) + math.sqrt(b_sq)) ** 2
    assert quadratic_majorant(c, beta, a_sq, b_sq) == pytest.approx(exact, rel=1e-14)
    for other in (0.5 * beta, 2 * beta):
        assert quadratic_majorant(c, other, a_sq, b_sq) > exact
    assert math.isinf(optimal_beta(c, a_sq, 0.0))
    assert quadratic_majorant(c, math.inf, a_sq, 0.0) == c**2 * a_sq


@pytest.fixture(scope="module")
def small_bounds(small_ball, small_ball_run):
    _, problem = small_ball
    return compute_bounds(small_ball_run, problem)


def test_majorant_history_monotone_and_identity(small_bounds, small_ball):
    report, maj, _ = small_bounds
    h = np.array(maj.history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])
    c = small_ball[1].constants.c_N_alpha
    exact = (c * math.sqrt(maj.div_residual_sq) + math.sqrt(maj.flux_mismatch_sq)) ** 2
    assert maj.majorant_sq == pytest.approx(exact, rel=1e-12)
    assert not maj.beta_infinite
    assert report.div_term + report.flux_term == pytest.approx(report.majorant_sq, rel=1e-15)


def test_beta_iteration_converges(small_ball, small_ball_run):
    maj = minimize_majorant(small_ball_run, small_ball[1], MajorantConfig(beta_max_iter=60))
    assert maj.converged
    assert maj.beta == pytest.approx(optimal_beta(small_ball[1].constants.c_N_alpha,
                                                  maj.div_residual_sq, maj.flux_mismatch_sq), rel=1e-15)


def test_literal_display_variant_is_not_smaller(small_bounds, small_ball):
    _, maj, _ = small_bounds
    c = small_ball[1].constants.c_N_alpha
    lit = maj.literal_display_value(c)
    assert lit == pytest.approx(c**2 * (1 + maj.beta) * maj.div_residual_sq + (1 + maj.beta) * maj.flux_mismatch_sq)


def test_bracketing_on_small_mesh(small_bounds):
    report, _, mnr = small_bounds
    assert mnr.minorant >= 0
    assert report.bracketing_holds()
    assert report.efficiency >= 1


def test_indicator_additivity(small_bounds):
    report, maj, _ = small_bounds
    assert np.all(report.indicator >= 0)
    assert 8 * report.indicator.sum() == pytest.approx(maj.flux_mismatch_sq, rel=1e-12)


def test_indicator_zero_for_matching_flux(small_ball, small_ball_run):
    _, problem = small_ball
    # a globally linear u has a constant gradient that the P2 flux reproduces exactly
    space = FeSpace(problem.mesh, 1)
    approx = from_function(space, lambda p: 1 + p[..., 0] - 2 * p[..., 1], 0.0, problem.R)
    fspace = FeSpace(problem.mesh, 2, 3)
    v = interpolate(fspace, lambda p: np.broadcast_to([1.0, -2.0, 0.0], p.shape))

    class _Maj:
        pass

    m = _Maj()
    m.space, m.flux = fspace, v
    assert np.abs(element_indicator(approx, m, problem)).max() <= 1e-24


def test_minorant_zero_for_discrete_solution(small_ball):
    # a P2 discrete harmonic function maximises the P2 minorant at zero
    from exterior_bounds.approx import Algorithm1

    mesh, problem = small_ball
    out = Algorithm1(FeSpace(mesh, 2), problem, cg_rel_tol=1e-13).run()
    mnr = maximize_minorant(out, problem, cg_rel_tol=1e-12)
    assert abs(mnr.minorant) <= 1e-16
    assert np.abs(mnr.correction).max() <= 1e-8


def test_exact_error_tail_terms(small_ball):
    mesh, problem = small_ball
    space = FeSpace(mesh, 1)
    zero = from_function(space, lambda p: np.zeros(len(p)), 0.0, 5.0)
    tot, loc = exact_error_ball(zero, per_tet=True)
    assert tot - 8 * loc.sum() == pytest.approx(4 * math.pi / 5, rel=1e-14)
    one = from_function(space, lambda p: np.zeros(len(p)), 1.0, 5.0)
    assert exact_error_ball(one) == pytest.approx(8 * loc.sum(), rel=1e-14)


def test_exact_error_wrong_geometry(small_cube):
    mesh, _ = small_cube
    approx = from_function(FeSpace(mesh, 1), lambda p: np.zeros(len(p)), 1.0, 3.0)
    with pytest.raises(UsageError):
        exact_error_ball(approx)


def test_exact_error_of_interpolant_converges():
    from exterior_bounds.mesh import generate

    vals = []
    for n in (3, 6):
        mesh = generate("ball", 5.0, n, n)
        approx = from_function(FeSpace(mesh, 1), lambda p: 1 / np.linalg.norm(p, axis=-1), 1.0, 5.0)
        vals.append(exact_error_ball(approx))
    # halving h: the squared error falls by roughly 4
    assert vals[1] < vals[0] / 3


def test_beta_infinite_when_flux_matches(small_ball):
    mesh, problem = small_ball
    space = FeSpace(mesh, 1)
    approx = from_function(space, lambda p: np.zeros(len(p)), 0.0, problem.R)
    maj = minimize_majorant(approx, problem)
    assert maj.majorant_sq <= 1e-20


def test_jacobi_and_lu_agree(small_ball, small_ball_run):
    _, problem = small_ball
    a = minimize_majorant(small_ball_run, problem, MajorantConfig(preconditioner="jacobi", cg_rel_tol=1e-12))
    b = minimize_majorant(small_ball_run, problem, MajorantConfig(preconditioner="lu", cg_rel_tol=1e-12))
    assert a.majorant_sq == pytest.approx(b.majorant_sq, rel=1e-9)
    assert b.factorizations >= 1


def test_indicator_ranks_like_oracle_on_medium_mesh(ball_ladder):
    report = ball_ladder[1]["report"]
    rho = spearmanr(report.indicator, report.oracle_per_tet).correlation
    assert rho >= SPEARMAN_MIN


def test_flux_forms_reusable(small_ball, small_ball_run):
    _, problem = small_ball
    forms = FluxForms(FeSpace(problem.mesh, 2, 3), problem)
    a = minimize_majorant(small_ball_run, problem, forms=forms)
    b = minimize_majorant(small_ball_run, problem, forms=forms)
    assert a.majorant_sq == b.majorant_sq
