"""Problem data, weighted norms, Poincare constants and the ball oracle."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, UsageError
from .fem import FeSpace, coefficient_field, gradients_at, check_spd, values_at
from .mesh import BoundaryTag, TetMesh
from .quadrature import QuadratureRule, default_rule

#: every mesh is one octant; full-domain integrals are 8x the octant ones
OCTANT_FACTOR = 8.0


@dataclass(frozen=True)
class Constants:
    c_N: float
    c_N_alpha: float


def constants(N: int, alpha: float) -> Constants:
    """c_N = 2 / (N - 2) and c_{N,alpha} = alpha * c_N."""
    if N < 3:
        raise DomainError(f"the exterior Poincare estimate needs N >= 3, got N={N}")
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    c = 2.0 / (N - 2)
    return Constants(c, alpha * c)


def alpha_from_coefficient(A) -> float:
    """alpha = (min over tets of the smallest eigenvalue of A)^(-1/2)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        A = A[None]
    check_spd(A)
    return float(np.linalg.eigvalsh(A)[..., 0].min() ** -0.5)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """-div A grad u = f in the exterior domain, u = u0 on Gamma.

    ``A`` is per-tet constant (None means identity); ``f`` maps points (..., 3)
    to values and is only ever sampled inside the truncated domain. ``u0`` is
    a constant. ``geometry`` selects the inner obstacle ("ball" or "cube").
    """

    mesh: TetMesh
    A: Optional[np.ndarray] = None
    f: Optional[Callable] = None
    u0: float = 1.0
    N: int = 3
    geometry: str = "ball"

    def __post_init__(self):
        if self.geometry not in ("ball", "cube"):
            raise UsageError(f"unknown geometry {self.geometry!r}")
        constants(self.N, 1.0)

    @cached_property
    def coefficient(self) -> np.ndarray:
        return coefficient_field(self.mesh, self.A)

    @cached_property
    def alpha(self) -> float:
        return alpha_from_coefficient(self.coefficient)

    @cached_property
    def constants(self) -> Constants:
        return constants(self.N, self.alpha)

    @cached_property
    def R(self) -> float:
        return self.mesh.outer_radius()

    @property
    def has_source(self) -> bool:
        return self.f is not None

    def source_at(self, space: FeSpace, rule: QuadratureRule | None = None) -> np.ndarray:
        rule = rule or default_rule()
        if self.f is None:
            return np.zeros((space.mesh.n_tets, rule.size))
        return np.asarray(self.f(space.quad_points(rule)), dtype=float)


def weighted_norm(space: FeSpace, coeffs, s: int, rule: QuadratureRule | None = None) -> float:
    """(sum_T int_T (1 + r^2)^s |u|^2)^(1/2) over the octant, s in {-1, 0, 1}."""
    if s not in (-1, 0, 1):
        raise UsageError(f"weight exponent must be -1, 0 or 1, got {s}")
    rule = rule or default_rule()
    u = values_at(space, coeffs, rule)
    sq = u**2 if space.components == 1 else np.einsum("tqc,tqc->tq", u, u)
    x = space.quad_points(rule)
    w = space.quad_weights(rule) * (1.0 + np.einsum("tqd,tqd->tq", x, x)) ** s
    return float(np.sqrt(np.sum(w * sq)))


def energy_norm(space: FeSpace, coeffs, A=None, rule: QuadratureRule | None = None) -> float:
    """||grad u||_{L2,A} for scalar u; ||A^{-1} w||_{L2,A} = ||A^{-1/2} w|| for vector w."""
    rule = rule or default_rule()
    A = coefficient_field(space.mesh, A)
    w = space.quad_weights(rule)
    if space.components == 1:
        g = gradients_at(space, coeffs, rule)
        return float(np.sqrt(np.einsum("tq,tqd,tde,tqe->", w, g, A, g)))
    v = values_at(space, coeffs, rule)
    Ainv = np.linalg.inv(A)
    return float(np.sqrt(np.einsum("tq,tqd,tde,tqe->", w, v, Ainv, v)))


def exact_solution_ball(points, r_min: float = 1.0 - 1e-12):
    """Value 1/|x| and gradient -x/|x|^3 of the exterior-ball solution.

    ``r_min`` may be lowered to sample at quadrature points of a polyhedral
    approximation of the unit sphere, whose facets dip inside it.
    """
    x = np.asarray(points, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r < r_min):
        raise DomainError(f"point inside the obstacle: |x| = {r.min():.6g} < {r_min}")
    return 1.0 / r, -x / r[..., None] ** 3


def poincare_check(space: FeSpace, coeffs, A=None, alpha: float | None = None, N: int = 3,
                   rule: QuadratureRule | None = None, atol: float = 0.0):
    """Both sides of ||u||_{L2_{-1}} <= c_{N,alpha} ||grad u||_{L2,A}.

    ``u`` must vanish at every dof on Gamma and on the sphere.
    """
    if space.components != 1:
        raise UsageError("Poincare check needs a scalar function")
    c = np.asarray(coeffs, dtype=float)
    fixed = space.scalar_dofs_on(BoundaryTag.GAMMA, BoundaryTag.SPHERE)
    if np.any(np.abs(c[fixed]) > atol):
        raise UsageError("function does not vanish on Gamma and the sphere")
    if alpha is None:
        alpha = alpha_from_coefficient(coefficient_field(space.mesh, A))
    k = constants(N, alpha)
    lhs = weighted_norm(space, c, -1, rule)
    rhs = k.c_N_alpha * energy_norm(space, c, A, rule)
    return lhs, rhs
