"""Guaranteed two-sided bounds for a conforming approximation.

Upper bound (majorant), for any flux v whose normal component matches the
tail flux on the sphere:

    ||grad e||^2 <= c^2 (1 + 1/beta) ||f + div v||^2_{+1} + (1 + beta) ||grad u - A^{-1} v||^2_A

Lower bound (minorant), for any w vanishing on Gamma and the sphere:

    ||grad e||^2 >= 2 (f, w) - (A grad(2u + w), grad w)

Both are evaluated on the octant and reported in full-domain normalisation.
The flux is minimised over 3-vector P2 fields (alternating with beta), the
minorant is maximised over scalar P2 fields.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import linalg as sla

from .errors import ParameterError, UsageError
from .fem import (
    ConstraintSet,
    FeSpace,
    apply_constraints,
    assemble_stiffness,
    assemble_vector_mass,
    assemble_weighted_div_form,
    divergence_at,
    gradients_at,
    load_from_divergence,
    load_from_gradient,
    load_from_values,
    solve_cg,
    values_at,
    weight_plus1,
)
from .mesh import SYMMETRY_TAGS, BoundaryTag
from .problem import OCTANT_FACTOR, ProblemSpec, exact_solution_ball
from .quadrature import QuadratureRule, default_rule


@dataclass
class MajorantConfig:
    flux_degree: int = 2
    beta0: float = 1.0
    beta_tol: float = 1e-6
    beta_max_iter: int = 20
    cg_rel_tol: float = 1e-10
    cg_max_iter: Optional[int] = None
    # "lu": PCG preconditioned by a sparse factorisation at a nearby beta;
    # "jacobi": plain diagonal PCG (slow: the div-div form has a large kernel)
    preconditioner: str = "lu"
    refactor_after: int = 40

    def __post_init__(self):
        if self.flux_degree not in (1, 2):
            raise ParameterError(f"flux_degree must be 1 or 2, got {self.flux_degree}")
        if not (self.beta0 > 0 and self.beta_tol > 0 and self.cg_rel_tol > 0):
            raise ParameterError("beta0, beta_tol and cg_rel_tol must be positive")
        if self.beta_max_iter < 1 or self.refactor_after < 1:
            raise ParameterError("beta_max_iter and refactor_after must be at least 1")
        if self.preconditioner not in ("lu", "jacobi"):
            raise ParameterError(f"unknown preconditioner {self.preconditioner!r}")


class _FluxSolver:
    """Solves (s_div D + s_flux M) v = rhs on the constrained flux space.

    A sparse factorisation at one beta preconditions PCG at the next ones;
    it is rebuilt once a solve needs more than ``refactor_after`` iterations.
    """

    def __init__(self, forms: "FluxForms", cs: ConstraintSet, config: MajorantConfig):
        self.forms, self.cs, self.config = forms, cs, config
        self.lu = None
        self.stale = True
        self.factorizations = 0
        self.cg_iterations: list[int] = []

    def _factor(self, matrix):
        self.lu = sla.splu(matrix.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
        self.stale = False
        self.factorizations += 1

    def solve(self, s_div: float, s_flux: float, rhs, v_start):
        K = s_div * self.forms.D + s_flux * self.forms.M
        red = apply_constraints(K, rhs, self.cs)
        precond = None
        if self.config.preconditioner == "lu":
            if self.stale:
                self._factor(red.matrix)
            # PCG is invariant under scaling of the preconditioner, so only the ratio matters
            precond = self.lu.solve
        x, stats = solve_cg(red.matrix, red.rhs, self.config.cg_rel_tol, self.config.cg_max_iter,
                            x0=red.restrict(v_start), precond=precond)
        self.cg_iterations.append(stats.iterations)
        self.stale = stats.iterations > self.config.refactor_after
        return red.reconstruct(x)


def flux_constraints(space: FeSpace, zeta: float, R: float | None = None) -> ConstraintSet:
    """Sphere dofs carry the tail flux -zeta x / |x|^3 in all components;
    the component normal to each symmetry plane vanishes on it."""
    if space.components != 3:
        raise UsageError("flux constraints need a vector space")
    n = space.n_scalar
    sph = space.scalar_dofs_on(BoundaryTag.SPHERE)
    x = space.dof_coords[sph]
    val = -zeta * x / np.linalg.norm(x, axis=1)[:, None] ** 3
    idx = [sph + c * n for c in range(3)]
    vals = [val[:, c] for c in range(3)]
    for c, tag in enumerate(SYMMETRY_TAGS):
        s = space.scalar_dofs_on(tag)
        idx.append(s + c * n)
        vals.append(np.zeros(len(s)))
    return ConstraintSet.build(np.concatenate(idx), np.concatenate(vals), space.ndofs)


def _integrate(space: FeSpace, density: np.ndarray, rule: QuadratureRule) -> float:
    return float(np.sum(space.quad_weights(rule) * density))


class FluxForms:
    """Assembled forms of the majorant on one flux space (reused across beta)."""

    def __init__(self, space: FeSpace, problem: ProblemSpec, rule: QuadratureRule | None = None):
        self.space = space
        self.problem = problem
        self.rule = rule or default_rule()
        self.D = assemble_weighted_div_form(space, self.rule)
        self.M = assemble_vector_mass(space, problem.A, self.rule)
        self.weight = weight_plus1(space.quad_points(self.rule))
        self.f_qp = problem.source_at(space, self.rule)
        if problem.has_source:
            self.d_f = load_from_divergence(space, self.weight * self.f_qp, self.rule)
        else:
            self.d_f = np.zeros(space.ndofs)

    def div_residual_sq(self, v) -> float:
        """||f + div v||^2_{L2_{+1}} over the octant."""
        r = self.f_qp + divergence_at(self.space, v, self.rule)
        return _integrate(self.space, self.weight * r**2, self.rule)

    def flux_mismatch_density(self, g: np.ndarray, v) -> np.ndarray:
        """A (g - A^{-1} v) . (g - A^{-1} v) at quadrature points."""
        A = self.problem.coefficient
        Av_inv = np.einsum("tde,tqe->tqd", np.linalg.inv(A), values_at(self.space, v, self.rule))
        d = g - Av_inv
        return np.einsum("tqd,tde,tqe->tq", d, A, d)

    def flux_mismatch_sq(self, g, v) -> float:
        return _integrate(self.space, self.flux_mismatch_density(g, v), self.rule)


@dataclass
class MajorantResult:
    space: FeSpace
    flux: np.ndarray
    beta: float
    majorant_sq: float        # full domain
    div_term: float           # c^2 (1 + 1/beta) a^2, full domain
    flux_term: float          # (1 + beta) b^2, full domain
    div_residual_sq: float    # a^2, full domain
    flux_mismatch_sq: float   # b^2, full domain
    converged: bool
    history: list = field(default_factory=list)
    cg_iterations: list = field(default_factory=list)
    factorizations: int = 0

    @property
    def beta_infinite(self) -> bool:
        return math.isinf(self.beta)

    def literal_display_value(self, c: float) -> float:
        """The variant with (1 + beta) on the divergence term, for comparison only."""
        return c**2 * (1 + self.beta) * self.div_residual_sq + (1 + self.beta) * self.flux_mismatch_sq


def quadratic_majorant(c: float, beta: float, a_sq: float, b_sq: float) -> float:
    if math.isinf(beta):
        return c**2 * a_sq
    return c**2 * (1 + 1 / beta) * a_sq + (1 + beta) * b_sq


def optimal_beta(c: float, a_sq: float, b_sq: float) -> float:
    if b_sq <= 0.0:
        return math.inf
    return c * math.sqrt(a_sq) / math.sqrt(b_sq)


def minimize_flux_majorant(forms: FluxForms, g: np.ndarray, zeta: float,
                           config: MajorantConfig | None = None, v0=None) -> MajorantResult:
    """Alternate the flux solve (fixed beta) and the closed-form beta update.

    ``g`` (nt, nq, 3) is the gradient being tested: grad u for a conforming
    approximation, A^{-1} v~ for a flux approximation.
    """
    config = config or MajorantConfig()
    space, problem = forms.space, forms.problem
    c = problem.constants.c_N_alpha
    cs = flux_constraints(space, zeta, problem.R)
    b = load_from_values(space, g, forms.rule)

    if v0 is None:
        # constrained projection of A g: the beta -> infinity limit problem
        red = apply_constraints(forms.M, b, cs)
        x, _ = solve_cg(red.matrix, red.rhs, config.cg_rel_tol, config.cg_max_iter)
        v = red.reconstruct(x)
    else:
        v = np.array(v0, dtype=float)
        v[cs.indices] = cs.values

    def terms(v):
        return OCTANT_FACTOR * forms.div_residual_sq(v), OCTANT_FACTOR * forms.flux_mismatch_sq(g, v)

    solver = _FluxSolver(forms, cs, config)
    beta = config.beta0
    a_sq, b_sq = terms(v)
    history = [quadratic_majorant(c, beta, a_sq, b_sq)]
    converged = False
    for _ in range(config.beta_max_iter):
        if math.isinf(beta):
            break
        s_div, s_flux = c**2 * (1 + 1 / beta), 1 + beta
        v = solver.solve(s_div, s_flux, s_flux * b - s_div * forms.d_f, v)
        a_sq, b_sq = terms(v)
        history.append(quadratic_majorant(c, beta, a_sq, b_sq))
        beta_new = optimal_beta(c, a_sq, b_sq)
        history.append(quadratic_majorant(c, beta_new, a_sq, b_sq))
        change = abs(beta_new - beta) / beta if not math.isinf(beta_new) else math.inf
        beta = beta_new
        if change < config.beta_tol:
            converged = True
            break
    if math.isinf(beta):
        converged = True
        div_term, flux_term = c**2 * a_sq, 0.0
    else:
        div_term, flux_term = c**2 * (1 + 1 / beta) * a_sq, (1 + beta) * b_sq
    return MajorantResult(space, v, beta, div_term + flux_term, div_term, flux_term,
                          a_sq, b_sq, converged, history, solver.cg_iterations, solver.factorizations)


def minimize_majorant(approx, problem: ProblemSpec, config: MajorantConfig | None = None,
                      v0=None, forms: FluxForms | None = None) -> MajorantResult:
    config = config or MajorantConfig()
    if forms is None:
        forms = FluxForms(FeSpace(problem.mesh, config.flux_degree, 3), problem)
    g = gradients_at(approx.space, approx.coeffs, forms.rule)
    return minimize_flux_majorant(forms, g, approx.zeta, config, v0)


@dataclass
class MinorantResult:
    space: FeSpace
    correction: np.ndarray
    minorant: float           # full domain


def maximize_minorant_for(space: FeSpace, problem: ProblemSpec, g: np.ndarray,
                          rule: QuadratureRule | None = None, cg_rel_tol: float = 1e-10,
                          cg_max_iter: int | None = None, K=None) -> MinorantResult:
    """sup over w (zero on Gamma and sphere) of 2 (f, w) - (A (grad w + 2 g), grad w)."""
    rule = rule or default_rule()
    A = problem.coefficient
    if K is None:
        K = assemble_stiffness(space, A, rule)
    Ag = np.einsum("tde,tqe->tqd", A, g)
    rhs = -load_from_gradient(space, Ag, rule)
    f_qp = problem.source_at(space, rule)
    if problem.has_source:
        rhs += load_from_values(space, f_qp, rule)
    fixed = space.scalar_dofs_on(BoundaryTag.GAMMA, BoundaryTag.SPHERE)
    red = apply_constraints(K, rhs, ConstraintSet.build(fixed, 0.0))
    x, _ = solve_cg(red.matrix, red.rhs, cg_rel_tol, cg_max_iter)
    w = red.reconstruct(x)
    gw = gradients_at(space, w, rule)
    dens = 2.0 * f_qp * values_at(space, w, rule) - np.einsum("tqd,tde,tqe->tq", gw + 2.0 * g, A, gw)
    return MinorantResult(space, w, OCTANT_FACTOR * _integrate(space, dens, rule))


def maximize_minorant(approx, problem: ProblemSpec, degree: int = 2, rule: QuadratureRule | None = None,
                      cg_rel_tol: float = 1e-10) -> MinorantResult:
    space = FeSpace(problem.mesh, degree, 1)
    g = gradients_at(approx.space, approx.coeffs, rule or default_rule())
    return maximize_minorant_for(space, problem, g, rule, cg_rel_tol)


def element_indicator(approx, majorant: MajorantResult, problem: ProblemSpec,
                      rule: QuadratureRule | None = None) -> np.ndarray:
    """Per-tet ||grad u - A^{-1} v||^2_{L2,A(T)} on the octant.

    Eight times the sum equals the majorant's flux mismatch b^2.
    """
    rule = rule or default_rule()
    forms_space = majorant.space
    g = gradients_at(approx.space, approx.coeffs, rule)
    A = problem.coefficient
    v = values_at(forms_space, majorant.flux, rule)
    d = g - np.einsum("tde,tqe->tqd", np.linalg.inv(A), v)
    dens = np.einsum("tqd,tde,tqe->tq", d, A, d)
    return np.sum(forms_space.quad_weights(rule) * dens, axis=1)


def _check_ball(mesh):
    r = np.linalg.norm(mesh.vertices[mesh.vertices_with_tag(BoundaryTag.GAMMA)], axis=1)
    if len(r) == 0 or np.abs(r - 1.0).max() > 1e-10:
        raise UsageError("exact error oracle is only available for the unit-ball obstacle")


def exact_error_ball(approx, rule: QuadratureRule | None = None, per_tet: bool = False):
    """||grad(1/r - u)||^2 over the whole exterior for the glued approximation.

    Octant quadrature on the mesh (x8) plus the tail 4 pi (1 - zeta)^2 / R.
    With ``per_tet`` the octant per-element contributions are returned as well.
    """
    rule = rule or default_rule()
    space = approx.space
    _check_ball(space.mesh)
    _, gex = exact_solution_ball(space.quad_points(rule), r_min=0.5)
    d = gex - gradients_at(space, approx.coeffs, rule)
    local = np.sum(space.quad_weights(rule) * np.einsum("tqd,tqd->tq", d, d), axis=1)
    total = OCTANT_FACTOR * float(local.sum()) + 4.0 * math.pi * (1.0 - approx.zeta) ** 2 / approx.R
    return (total, local) if per_tet else total


@dataclass
class BoundReport:
    n_tets: int
    zeta: float
    energy_sq: float                # ||grad u||^2 over the whole exterior
    majorant_sq: float
    minorant: float
    beta: float
    div_term: float
    flux_term: float
    flux_mismatch_sq: float
    indicator: np.ndarray
    oracle_error_sq: Optional[float] = None
    oracle_per_tet: Optional[np.ndarray] = None
    majorant_history: list = field(default_factory=list)
    beta_converged: bool = True

    @property
    def efficiency(self) -> Optional[float]:
        if self.oracle_error_sq is None or self.oracle_error_sq == 0:
            return None
        return self.majorant_sq / self.oracle_error_sq

    def relative(self, value: float) -> float:
        return value / self.energy_sq

    def bracketing_holds(self, rtol: float = 1e-8) -> bool:
        lo, hi = self.minorant, self.majorant_sq
        if self.oracle_error_sq is not None:
            e = self.oracle_error_sq
            return lo <= e * (1 + rtol) and e <= hi * (1 + rtol)
        return lo <= hi * (1 + rtol)


def compute_bounds(approx, problem: ProblemSpec, config: MajorantConfig | None = None,
                   with_oracle: bool | None = None, v0=None) -> tuple[BoundReport, MajorantResult, MinorantResult]:
    from .approx import energy as approx_energy

    config = config or MajorantConfig()
    maj = minimize_majorant(approx, problem, config, v0=v0)
    mnr = maximize_minorant(approx, problem, cg_rel_tol=config.cg_rel_tol)
    ind = element_indicator(approx, maj, problem)
    if with_oracle is None:
        with_oracle = problem.geometry == "ball"
    oracle = per_tet = None
    if with_oracle:
        oracle, per_tet = exact_error_ball(approx, per_tet=True)
    e = approx_energy(approx, problem)
    report = BoundReport(
        n_tets=problem.mesh.n_tets,
        zeta=approx.zeta,
        energy_sq=e.interior + e.tail,
        majorant_sq=maj.majorant_sq,
        minorant=mnr.minorant,
        beta=maj.beta,
        div_term=maj.div_term,
        flux_term=maj.flux_term,
        flux_mismatch_sq=maj.flux_mismatch_sq,
        indicator=ind,
        oracle_error_sq=oracle,
        oracle_per_tet=per_tet,
        majorant_history=maj.history,
        beta_converged=maj.converged,
    )
    return report, maj, mnr
