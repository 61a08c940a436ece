"""Bounds for a flux approximation that need not be a gradient.

For a square-integrable v~ approximating A grad u, with tail -zeta r^{-2} e_r,
the error E = grad u - A^{-1} v~ satisfies

    M_lower <= ||E||^2_A <= M_upper,

where M_upper adds to the conforming-type majorant (tested on A^{-1} v~) the
distance of A^{-1} v~ from admissible gradients, and M_lower adds to the
minorant a term tested on divergence-free fields. The divergence-free
candidate is the remainder of a discrete Helmholtz split of E.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .conforming import (
    FluxForms,
    MajorantConfig,
    MajorantResult,
    maximize_minorant_for,
    minimize_flux_majorant,
)
from .errors import ParameterError, UsageError
from .fem import (
    ConstraintSet,
    FeSpace,
    apply_constraints,
    assemble_stiffness,
    gradients_at,
    load_from_gradient,
    solve_cg,
    tabulate,
)
from .mesh import BoundaryTag
from .problem import OCTANT_FACTOR, ProblemSpec, exact_solution_ball
from .quadrature import QuadratureRule, default_rule


def _local_values(degree: int, bary: np.ndarray) -> np.ndarray:
    if degree == 0:
        return np.ones((len(bary), 1))
    return tabulate(degree, bary)[0]


def _lattice(degree: int) -> np.ndarray:
    """Barycentric nodes of the local Lagrange basis of ``degree``."""
    if degree == 0:
        return np.full((1, 4), 0.25)
    if degree == 1:
        return np.eye(4)
    edges = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
    mids = np.zeros((6, 4))
    mids[np.arange(6)[:, None], edges] = 0.5
    return np.vstack([np.eye(4), mids])


@dataclass
class FluxApproximation:
    """Piecewise polynomial 3-vector field, discontinuous across faces.

    ``local`` has shape (nt, nb, 3): coefficients of the local Lagrange basis
    of ``degree`` (0, 1 or 2) on each tet. Outside the sphere the field is the
    tail flux -zeta x / |x|^3.
    """

    mesh: object
    degree: int
    local: np.ndarray
    zeta: float

    def __post_init__(self):
        if self.degree not in (0, 1, 2):
            raise UsageError(f"flux degree must be 0, 1 or 2, got {self.degree}")
        nb = {0: 1, 1: 4, 2: 10}[self.degree]
        self.local = np.asarray(self.local, dtype=float)
        if self.local.shape != (self.mesh.n_tets, nb, 3):
            raise UsageError(f"expected local coefficients of shape {(self.mesh.n_tets, nb, 3)}")
        if not np.all(np.isfinite(self.local)):
            raise UsageError("flux coefficients must be finite")

    def values_at(self, rule: QuadratureRule | None = None) -> np.ndarray:
        rule = rule or default_rule()
        return np.einsum("qb,tbc->tqc", _local_values(self.degree, rule.points), self.local)

    @classmethod
    def from_gradient(cls, space: FeSpace, coeffs, zeta: float, A=None) -> "FluxApproximation":
        """A grad u for a scalar FE function u (the conforming case)."""
        if space.components != 1:
            raise UsageError("need a scalar space")
        degree = space.degree - 1
        nodes = _lattice(degree)
        rule = QuadratureRule(nodes, np.full(len(nodes), 1.0 / (6 * len(nodes))), 0)
        g = gradients_at(space, coeffs, rule)
        if A is not None:
            from .fem import coefficient_field
            g = np.einsum("tde,tqe->tqd", coefficient_field(space.mesh, A), g)
        return cls(space.mesh, degree, g, float(zeta))


def fabricate_flux(approx, problem: ProblemSpec, delta: float, seed: int = 0) -> FluxApproximation:
    """v~ = A grad u + delta w with w a seeded per-tet constant field.

    w has volume-weighted zero mean (deliberate jumps across faces) and is
    scaled so that ||w||_{L2} equals ||grad u||_{L2} on the mesh.
    """
    if approx.space.degree != 1:
        raise UsageError("fabricated fluxes are built from degree-1 approximations")
    base = FluxApproximation.from_gradient(approx.space, approx.coeffs, approx.zeta, problem.A)
    mesh = problem.mesh
    vol = np.abs(mesh.signed_volumes())
    w = np.random.default_rng(seed).standard_normal((mesh.n_tets, 3))
    w -= (vol[:, None] * w).sum(axis=0) / vol.sum()
    g = gradients_at(approx.space, approx.coeffs, default_rule())
    grad_sq = float(np.sum(approx.space.quad_weights(default_rule()) * np.einsum("tqd,tqd->tq", g, g)))
    w_sq = float(np.sum(vol * np.einsum("td,td->t", w, w)))
    w *= math.sqrt(grad_sq / w_sq)
    return FluxApproximation(mesh, 0, base.local + delta * w[:, None, :], approx.zeta)


def _a_inverse(problem: ProblemSpec, v: np.ndarray) -> np.ndarray:
    return np.einsum("tde,tqe->tqd", np.linalg.inv(problem.coefficient), v)


def _a_norm_sq(space: FeSpace, problem: ProblemSpec, d: np.ndarray, rule: QuadratureRule) -> float:
    """Full-domain-normalised int A d . d over the mesh."""
    dens = np.einsum("tqd,tde,tqe->tq", d, problem.coefficient, d)
    return OCTANT_FACTOR * float(np.sum(space.quad_weights(rule) * dens))


@dataclass
class GradientFit:
    """Best admissible gradient for A^{-1} v~ (the second majorant infimum)."""

    space: FeSpace
    coeffs: np.ndarray
    value: float              # full domain


def fit_gradient(vflux: FluxApproximation, problem: ProblemSpec, space: FeSpace | None = None,
                 rule: QuadratureRule | None = None, cg_rel_tol: float = 1e-10, K=None) -> GradientFit:
    """min ||grad u - A^{-1} v~||_A over P2 u with u = u0 on Gamma and zeta/R on the sphere."""
    rule = rule or default_rule()
    space = space or FeSpace(problem.mesh, 2, 1)
    if K is None:
        K = assemble_stiffness(space, problem.A, rule)
    v = vflux.values_at(rule)
    gamma = space.scalar_dofs_on(BoundaryTag.GAMMA)
    sphere = space.scalar_dofs_on(BoundaryTag.SPHERE)
    cs = ConstraintSet.build(np.concatenate([gamma, sphere]),
                             np.concatenate([np.full(len(gamma), problem.u0),
                                             np.full(len(sphere), vflux.zeta / problem.R)]))
    red = apply_constraints(K, load_from_gradient(space, v, rule), cs)
    x, _ = solve_cg(red.matrix, red.rhs, cg_rel_tol)
    u = red.reconstruct(x)
    d = gradients_at(space, u, rule) - _a_inverse(problem, v)
    return GradientFit(space, u, _a_norm_sq(space, problem, d, rule))


@dataclass
class HelmholtzSplit:
    """E = grad phi + A^{-1} psi with phi zero on Gamma and the sphere.

    Fields are sampled at quadrature points; norms are full-domain (x8)
    over the mesh.
    """

    space: FeSpace
    phi: np.ndarray
    psi: np.ndarray           # (nt, nq, 3)
    error_sq: float           # ||E||^2_A
    grad_part_sq: float       # ||grad phi||^2_A
    remainder_sq: float       # ||A^{-1} psi||^2_A


def helmholtz_split(E: np.ndarray, problem: ProblemSpec, space: FeSpace | None = None,
                    rule: QuadratureRule | None = None, cg_rel_tol: float = 1e-12, K=None) -> HelmholtzSplit:
    """Discrete A-orthogonal split of a gradient error sampled at quadrature points."""
    rule = rule or default_rule()
    space = space or FeSpace(problem.mesh, 2, 1)
    if K is None:
        K = assemble_stiffness(space, problem.A, rule)
    A = problem.coefficient
    AE = np.einsum("tde,tqe->tqd", A, E)
    fixed = space.scalar_dofs_on(BoundaryTag.GAMMA, BoundaryTag.SPHERE)
    red = apply_constraints(K, load_from_gradient(space, AE, rule), ConstraintSet.build(fixed, 0.0))
    x, _ = solve_cg(red.matrix, red.rhs, cg_rel_tol)
    phi = red.reconstruct(x)
    gphi = gradients_at(space, phi, rule)
    psi = AE - np.einsum("tde,tqe->tqd", A, gphi)
    return HelmholtzSplit(
        space, phi, psi,
        error_sq=_a_norm_sq(space, problem, E, rule),
        grad_part_sq=_a_norm_sq(space, problem, gphi, rule),
        remainder_sq=_a_norm_sq(space, problem, _a_inverse(problem, psi), rule),
    )


def divergence_free_term(fit: GradientFit, vflux: FluxApproximation, psi: np.ndarray,
                         problem: ProblemSpec, rule: QuadratureRule | None = None) -> tuple[float, float]:
    """sup over t of <2 grad u - A^{-1}(2 v~ + t psi), A^{-1} t psi>_A.

    Returns (value, t). The line through 0 and psi contains both zero and
    psi itself, so the value dominates either candidate.
    """
    rule = rule or default_rule()
    d = gradients_at(fit.space, fit.coeffs, rule) - _a_inverse(problem, vflux.values_at(rule))
    w = fit.space.quad_weights(rule)
    num = OCTANT_FACTOR * float(np.sum(w * np.einsum("tqd,tqd->tq", d, psi)))
    den = _a_norm_sq(fit.space, problem, _a_inverse(problem, psi), rule)
    if den <= 0.0:
        return 0.0, 0.0
    t = num / den
    return num * num / den, t


def exact_flux_error_ball(vflux: FluxApproximation, problem: ProblemSpec,
                          rule: QuadratureRule | None = None) -> float:
    """||grad(1/r) - A^{-1} v~||^2_A over the whole exterior (mesh x8 plus tail)."""
    from .conforming import _check_ball

    rule = rule or default_rule()
    _check_ball(problem.mesh)
    space = FeSpace(problem.mesh, 1, 1)
    _, gex = exact_solution_ball(space.quad_points(rule), r_min=0.5)
    d = gex - _a_inverse(problem, vflux.values_at(rule))
    return _a_norm_sq(space, problem, d, rule) + 4.0 * math.pi * (1.0 - vflux.zeta) ** 2 / problem.R


def appendix_bounds(inf_majorant: float, inf_fit: float, thetas: Sequence[float]) -> dict:
    """(1 + 4/theta) inf M+^2 + (4 + theta) inf M~+^2 for each theta."""
    out = {}
    for th in thetas:
        if not th > 0:
            raise ParameterError(f"theta must be positive, got {th}")
        out[float(th)] = (1.0 + 4.0 / th) * inf_majorant + (4.0 + th) * inf_fit
    return out


@dataclass
class NcBoundReport:
    delta: Optional[float]
    inf_majorant: float           # inf_v M+^2 (tested on A^{-1} v~)
    inf_fit: float                # inf_u M~+^2
    sup_minorant: float           # sup_u M-
    sup_divfree: float            # sup M~- over the Helmholtz line
    appendix: dict = field(default_factory=dict)
    oracle_error_sq: Optional[float] = None
    beta: float = math.nan
    divfree_t: float = math.nan
    surrogate: bool = False

    @property
    def upper(self) -> float:
        return self.inf_majorant + self.inf_fit

    @property
    def lower(self) -> float:
        return self.sup_minorant + self.sup_divfree

    @property
    def appendix_lower(self) -> float:
        return self.sup_minorant

    def chain_holds(self, rtol: float = 1e-8) -> bool:
        ok = self.lower <= self.upper * (1 + rtol)
        if self.oracle_error_sq is not None:
            e = self.oracle_error_sq
            ok = ok and self.lower <= e * (1 + rtol) and e <= self.upper * (1 + rtol)
        return ok and all(self.upper <= v * (1 + rtol) for v in self.appendix.values())


def nc_majorant(vflux: FluxApproximation, problem: ProblemSpec, config: MajorantConfig | None = None,
                forms: FluxForms | None = None, fit_space: FeSpace | None = None):
    """(majorant result, gradient fit, total upper bound)."""
    config = config or MajorantConfig()
    if forms is None:
        forms = FluxForms(FeSpace(problem.mesh, config.flux_degree, 3), problem)
    g = _a_inverse(problem, vflux.values_at(forms.rule))
    maj: MajorantResult = minimize_flux_majorant(forms, g, vflux.zeta, config)
    fit = fit_gradient(vflux, problem, fit_space, forms.rule, config.cg_rel_tol)
    return maj, fit, maj.majorant_sq + fit.value


def reference_error(vflux: FluxApproximation, problem: ProblemSpec, reference=None,
                    rule: QuadratureRule | None = None) -> np.ndarray:
    """E = grad u_ref - A^{-1} v~ at quadrature points.

    ``reference`` is an approximation object (surrogate truth); without it
    the exact ball solution is sampled.
    """
    rule = rule or default_rule()
    if reference is None:
        from .conforming import _check_ball

        _check_ball(problem.mesh)
        pts = FeSpace(problem.mesh, 1, 1).quad_points(rule)
        _, gref = exact_solution_ball(pts, r_min=0.5)
    else:
        gref = gradients_at(reference.space, reference.coeffs, rule)
    return gref - _a_inverse(problem, vflux.values_at(rule))


def nc_minorant(vflux: FluxApproximation, problem: ProblemSpec, fit: GradientFit, reference=None,
                rule: QuadratureRule | None = None, cg_rel_tol: float = 1e-10, space: FeSpace | None = None):
    """(sup M-, sup M~-, Helmholtz split, t)."""
    rule = rule or default_rule()
    space = space or fit.space
    K = assemble_stiffness(space, problem.A, rule)
    g = _a_inverse(problem, vflux.values_at(rule))
    mnr = maximize_minorant_for(space, problem, g, rule, cg_rel_tol, K=K)
    split = helmholtz_split(reference_error(vflux, problem, reference, rule), problem, space, rule, K=K)
    divfree, t = divergence_free_term(fit, vflux, split.psi, problem, rule)
    return mnr.minorant, divfree, split, t


def nc_bounds(vflux: FluxApproximation, problem: ProblemSpec, config: MajorantConfig | None = None,
              thetas: Sequence[float] = (0.5, 1.0, 2.0), reference=None, with_oracle: bool | None = None,
              delta: float | None = None) -> NcBoundReport:
    config = config or MajorantConfig()
    maj, fit, _ = nc_majorant(vflux, problem, config)
    sup_m, sup_d, _, t = nc_minorant(vflux, problem, fit, reference, cg_rel_tol=config.cg_rel_tol)
    if with_oracle is None:
        with_oracle = reference is None and problem.geometry == "ball"
    oracle = exact_flux_error_ball(vflux, problem) if with_oracle else None
    return NcBoundReport(
        delta=delta,
        inf_majorant=maj.majorant_sq,
        inf_fit=fit.value,
        sup_minorant=sup_m,
        sup_divfree=sup_d,
        appendix=appendix_bounds(maj.majorant_sq, fit.value, thetas),
        oracle_error_sq=oracle,
        beta=maj.beta,
        divfree_t=t,
        surrogate=reference is not None,
    )
