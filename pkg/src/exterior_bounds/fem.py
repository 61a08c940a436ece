"""Nodal P1/P2 finite elements on tetrahedra, sparse assembly and PCG."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import (
    CoefficientError,
    ConstraintError,
    ConvergenceError,
    DataError,
    UsageError,
)
from .mesh import BoundaryTag, TetMesh
from .quadrature import QuadratureRule, default_rule

LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


def tabulate(degree: int, bary: np.ndarray):
    """Basis values (nq, nb) and barycentric derivatives (nq, nb, 4)."""
    lam = np.atleast_2d(bary)
    nq = len(lam)
    if degree == 1:
        return lam.copy(), np.broadcast_to(np.eye(4), (nq, 4, 4)).copy()
    if degree != 2:
        raise UsageError(f"unsupported degree {degree}")
    vals = np.empty((nq, 10))
    dl = np.zeros((nq, 10, 4))
    for i in range(4):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        dl[:, i, i] = 4.0 * lam[:, i] - 1.0
    for e, (i, j) in enumerate(LOCAL_EDGES):
        vals[:, 4 + e] = 4.0 * lam[:, i] * lam[:, j]
        dl[:, 4 + e, i] = 4.0 * lam[:, j]
        dl[:, 4 + e, j] = 4.0 * lam[:, i]
    return vals, dl


def check_spd(A: np.ndarray, name: str = "coefficient") -> None:
    if not np.allclose(A, np.swapaxes(A, -1, -2), rtol=1e-12, atol=1e-14):
        raise CoefficientError(f"{name} is not symmetric")
    ev = np.linalg.eigvalsh(A)
    bad = np.flatnonzero(ev.min(axis=-1) <= 0.0)
    if len(bad):
        raise CoefficientError(f"{name} is not positive definite on tet {bad[0]}")


def coefficient_field(mesh: TetMesh, A=None) -> np.ndarray:
    """Broadcast ``A`` (None, scalar, 3x3 or per-tet) to shape (nt, 3, 3)."""
    nt = mesh.n_tets
    if A is None:
        return np.broadcast_to(np.eye(3), (nt, 3, 3))
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A * np.eye(3)
    A = np.broadcast_to(A, (nt, 3, 3))
    check_spd(A)
    return A


class FeSpace:
    """Lagrange space of ``degree`` 1 or 2 with 1 or 3 components.

    Vector dofs are blocked by component: ``dof = c * n_scalar + s``.
    """

    def __init__(self, mesh: TetMesh, degree: int = 1, components: int = 1):
        if degree not in (1, 2):
            raise UsageError(f"degree must be 1 or 2, got {degree}")
        if components not in (1, 3):
            raise UsageError(f"components must be 1 or 3, got {components}")
        self.mesh = mesh
        self.degree = degree
        self.components = components
        nv = mesh.n_vertices
        if degree == 1:
            self.edges = np.empty((0, 2), dtype=np.int64)
            self.scalar_dofs = np.asarray(mesh.tets)
        else:
            pairs = np.sort(mesh.tets[:, LOCAL_EDGES].reshape(-1, 2), axis=1)
            self.edges, inv = np.unique(pairs, axis=0, return_inverse=True)
            self.tet_edges = inv.reshape(-1, 6)
            self.scalar_dofs = np.hstack([mesh.tets, nv + self.tet_edges])
        self.n_scalar = nv + len(self.edges)
        self.n_local = self.scalar_dofs.shape[1]
        if components == 1:
            self.dofs = self.scalar_dofs
        else:
            self.dofs = np.hstack([self.scalar_dofs + c * self.n_scalar for c in range(3)])

    @property
    def ndofs(self) -> int:
        return self.components * self.n_scalar

    def __repr__(self):
        return f"FeSpace(P{self.degree}, components={self.components}, ndofs={self.ndofs})"

    @cached_property
    def dof_coords(self) -> np.ndarray:
        """Coordinates of the scalar dofs (vertices, then edge midpoints)."""
        v = self.mesh.vertices
        if self.degree == 1:
            return v.copy()
        return np.vstack([v, 0.5 * (v[self.edges[:, 0]] + v[self.edges[:, 1]])])

    def edge_index(self, pairs: np.ndarray) -> np.ndarray:
        keys = self.edges[:, 0] * self.mesh.n_vertices + self.edges[:, 1]
        p = np.sort(np.reshape(pairs, (-1, 2)), axis=1)
        q = p[:, 0] * self.mesh.n_vertices + p[:, 1]
        idx = np.searchsorted(keys, q)
        if np.any(idx >= len(keys)) or np.any(keys[np.minimum(idx, len(keys) - 1)] != q):
            raise UsageError("pair is not a mesh edge")
        return idx

    def scalar_dofs_on(self, *tags: BoundaryTag) -> np.ndarray:
        """Sorted scalar dof indices on faces carrying any of ``tags``."""
        faces = np.vstack([self.mesh.faces_with_tag(t) for t in tags])
        out = [np.unique(faces)]
        if self.degree == 2 and len(faces):
            pairs = faces[:, [[0, 1], [0, 2], [1, 2]]].reshape(-1, 2)
            out.append(self.mesh.n_vertices + np.unique(self.edge_index(pairs)))
        return np.unique(np.concatenate(out))

    # ---------------------------------------------------------- geometry

    @cached_property
    def _geometry(self):
        p = self.mesh.vertices[self.mesh.tets]
        J = np.swapaxes(p[:, 1:] - p[:, :1], 1, 2)  # columns x_k - x_0
        det = np.linalg.det(J)
        Jinv = np.linalg.inv(J)
        grad_lam = np.empty((len(p), 4, 3))
        grad_lam[:, 1:] = Jinv
        grad_lam[:, 0] = -Jinv.sum(axis=1)
        return det, grad_lam

    @property
    def jacobian_det(self) -> np.ndarray:
        return self._geometry[0]

    @property
    def grad_lambda(self) -> np.ndarray:
        return self._geometry[1]

    def quad_points(self, rule: QuadratureRule) -> np.ndarray:
        """Physical quadrature points, shape (nt, nq, 3)."""
        return np.einsum("qk,tkd->tqd", rule.points, self.mesh.vertices[self.mesh.tets])

    def quad_weights(self, rule: QuadratureRule) -> np.ndarray:
        """Physical quadrature weights, shape (nt, nq)."""
        return np.abs(self.jacobian_det)[:, None] * rule.weights[None, :]

    def basis(self, rule: QuadratureRule):
        """Scalar basis values (nq, nb) and physical gradients (nt, nq, nb, 3)."""
        vals, dl = tabulate(self.degree, rule.points)
        grads = np.einsum("qbk,tkd->tqbd", dl, self.grad_lambda)
        return vals, grads


# ------------------------------------------------------------ FE functions


def _local_coeffs(space: FeSpace, coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (space.ndofs,):
        raise UsageError(f"expected {space.ndofs} coefficients, got shape {c.shape}")
    loc = c[space.dofs]
    if space.components == 3:
        loc = loc.reshape(len(loc), 3, space.n_local)
    return loc


def values_at(space: FeSpace, coeffs, rule: QuadratureRule | None = None) -> np.ndarray:
    """FE function values at quadrature points: (nt, nq) or (nt, nq, 3)."""
    rule = rule or default_rule()
    vals, _ = tabulate(space.degree, rule.points)
    loc = _local_coeffs(space, coeffs)
    if space.components == 1:
        return loc @ vals.T
    return np.einsum("tcb,qb->tqc", loc, vals)


def gradients_at(space: FeSpace, coeffs, rule: QuadratureRule | None = None) -> np.ndarray:
    """Gradients (nt, nq, 3) of a scalar FE function, or Jacobians (nt, nq, 3, 3)
    with ``[..., c, d] = d v_c / d x_d`` for a vector one."""
    rule = rule or default_rule()
    _, grads = space.basis(rule)
    loc = _local_coeffs(space, coeffs)
    if space.components == 1:
        return np.einsum("tb,tqbd->tqd", loc, grads)
    return np.einsum("tcb,tqbd->tqcd", loc, grads)


def divergence_at(space: FeSpace, coeffs, rule: QuadratureRule | None = None) -> np.ndarray:
    if space.components != 3:
        raise UsageError("divergence needs a vector space")
    return np.einsum("tqcc->tq", gradients_at(space, coeffs, rule))


def _point_rule(bary) -> QuadratureRule:
    b = np.asarray(bary, dtype=float).reshape(1, 4)
    return QuadratureRule(b, np.ones(1), 0)


def _check_tet(space: FeSpace, tet: int):
    if not 0 <= tet < space.mesh.n_tets:
        raise UsageError(f"tet index {tet} out of range")


def evaluate_value(space: FeSpace, coeffs, tet: int, bary) -> np.ndarray | float:
    _check_tet(space, tet)
    vals, _ = tabulate(space.degree, np.asarray(bary, float).reshape(1, 4))
    loc = _local_coeffs(space, coeffs)[tet]
    if space.components == 1:
        return float(loc @ vals[0])
    return loc @ vals[0]


def evaluate_gradient(space: FeSpace, coeffs, tet: int, bary) -> np.ndarray:
    _check_tet(space, tet)
    _, dl = tabulate(space.degree, np.asarray(bary, float).reshape(1, 4))
    g = dl[0] @ space.grad_lambda[tet]  # (nb, 3)
    loc = _local_coeffs(space, coeffs)[tet]
    return loc @ g


def interpolate(space: FeSpace, func) -> np.ndarray:
    """Nodal interpolant; ``func`` maps points (n, 3) to (n,) or (n, 3)."""
    vals = np.asarray(func(space.dof_coords), dtype=float)
    if space.components == 1:
        vals = np.broadcast_to(vals, (space.n_scalar,))
    else:
        vals = np.broadcast_to(vals, (space.n_scalar, 3)).T
    if not np.all(np.isfinite(vals)):
        raise DataError("interpolated function is not finite at every dof")
    return np.ascontiguousarray(vals).ravel().copy()


def prolongate(coarse: FeSpace, coeffs, fine: FeSpace) -> np.ndarray:
    """Exact embedding of a P1 function into the P2 space on the same mesh."""
    if coarse.mesh is not fine.mesh or coarse.components != fine.components:
        raise UsageError("spaces must share mesh and component count")
    if coarse.degree == fine.degree:
        return np.array(coeffs, dtype=float)
    if (coarse.degree, fine.degree) != (1, 2):
        raise UsageError("only P1 -> P2 embedding is supported")
    c = np.asarray(coeffs, float).reshape(coarse.components, coarse.n_scalar)
    mid = 0.5 * (c[:, fine.edges[:, 0]] + c[:, fine.edges[:, 1]])
    return np.hstack([c, mid]).ravel()


# ---------------------------------------------------------------- assembly


def _scatter(space: FeSpace, local: np.ndarray) -> sparse.csr_matrix:
    dofs = space.dofs
    n = dofs.shape[1]
    rows = np.broadcast_to(dofs[:, :, None], (len(dofs), n, n))
    cols = np.broadcast_to(dofs[:, None, :], (len(dofs), n, n))
    K = sparse.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(space.ndofs,) * 2).tocsr()
    K = 0.5 * (K + K.T)
    K.sum_duplicates()
    return K.tocsr()


def _scatter_vector(space: FeSpace, local: np.ndarray) -> np.ndarray:
    out = np.zeros(space.ndofs)
    np.add.at(out, space.dofs.ravel(), local.ravel())
    return out


def assemble_stiffness(space: FeSpace, A=None, rule: QuadratureRule | None = None):
    """K_ij = sum_T int_T A grad(phi_j) . grad(phi_i)."""
    if space.components != 1:
        raise UsageError("stiffness needs a scalar space")
    rule = rule or default_rule()
    A = coefficient_field(space.mesh, A)
    _, G = space.basis(rule)
    w = space.quad_weights(rule)
    AG = np.einsum("tde,tqbe->tqbd", A, G)
    local = np.einsum("tq,tqbd,tqcd->tbc", w, G, AG)
    return _scatter(space, local)


def assemble_mass(space: FeSpace, rule: QuadratureRule | None = None):
    rule = rule or default_rule()
    vals, _ = tabulate(space.degree, rule.points)
    w = space.quad_weights(rule)
    m = np.einsum("tq,qb,qc->tbc", w, vals, vals)
    if space.components == 3:
        nt, nb = len(m), space.n_local
        local = np.zeros((nt, 3, nb, 3, nb))
        for c in range(3):
            local[:, c, :, c, :] = m
        m = local.reshape(nt, 3 * nb, 3 * nb)
    return _scatter(space, m)


def assemble_vector_mass(space: FeSpace, A=None, rule: QuadratureRule | None = None):
    """M_ij = sum_T int_T A^{-1} psi_j . psi_i for a 3-vector space."""
    if space.components != 3:
        raise UsageError("vector mass needs a vector space")
    rule = rule or default_rule()
    Ainv = np.linalg.inv(coefficient_field(space.mesh, A))
    vals, _ = tabulate(space.degree, rule.points)
    w = space.quad_weights(rule)
    m = np.einsum("tq,qb,qe->tbe", w, vals, vals)
    local = np.einsum("tcd,tbe->tcbde", Ainv, m)
    nt, nb = len(m), space.n_local
    return _scatter(space, local.reshape(nt, 3 * nb, 3 * nb))


def weight_plus1(points: np.ndarray) -> np.ndarray:
    return 1.0 + np.einsum("...d,...d->...", points, points)


def assemble_weighted_div_form(space: FeSpace, rule: QuadratureRule | None = None):
    """D_ij = sum_T int_T (1 + r^2) div(psi_j) div(psi_i)."""
    if space.components != 3:
        raise UsageError("weighted divergence form needs a vector space")
    rule = rule or default_rule()
    _, G = space.basis(rule)
    w = space.quad_weights(rule) * weight_plus1(space.quad_points(rule))
    local = np.einsum("tq,tqbc,tqed->tcbde", w, G, G)
    nt, nb = len(G), space.n_local
    return _scatter(space, local.reshape(nt, 3 * nb, 3 * nb))


def load_from_values(space: FeSpace, g: np.ndarray, rule: QuadratureRule | None = None):
    """b_i = int g . phi_i for g sampled at quadrature points."""
    rule = rule or default_rule()
    vals, _ = tabulate(space.degree, rule.points)
    w = space.quad_weights(rule)
    if space.components == 1:
        local = np.einsum("tq,tq,qb->tb", w, g, vals)
    else:
        local = np.einsum("tq,tqc,qb->tcb", w, g, vals).reshape(len(w), -1)
    return _scatter_vector(space, local)


def load_from_gradient(space: FeSpace, g: np.ndarray, rule: QuadratureRule | None = None):
    """b_i = int g . grad(phi_i) for a vector field g (nt, nq, 3)."""
    if space.components != 1:
        raise UsageError("gradient load needs a scalar space")
    rule = rule or default_rule()
    _, G = space.basis(rule)
    w = space.quad_weights(rule)
    return _scatter_vector(space, np.einsum("tq,tqd,tqbd->tb", w, g, G))


def load_from_divergence(space: FeSpace, g: np.ndarray, rule: QuadratureRule | None = None):
    """b_i = int g div(psi_i) for a scalar g (nt, nq) and a vector space."""
    if space.components != 3:
        raise UsageError("divergence load needs a vector space")
    rule = rule or default_rule()
    _, G = space.basis(rule)
    w = space.quad_weights(rule)
    local = np.einsum("tq,tq,tqbc->tcb", w, g, G).reshape(len(w), -1)
    return _scatter_vector(space, local)


# ------------------------------------------------------------- constraints


@dataclass(frozen=True)
class ConstraintSet:
    """Fixed dof values; indices are sorted and unique."""

    indices: np.ndarray
    values: np.ndarray

    @classmethod
    def build(cls, indices, values, ndofs: int | None = None, atol: float = 1e-12):
        idx = np.asarray(indices, dtype=np.int64).ravel()
        val = np.broadcast_to(np.asarray(values, dtype=float), idx.shape).copy()
        if ndofs is not None and len(idx) and (idx.min() < 0 or idx.max() >= ndofs):
            raise ConstraintError("constraint index out of range")
        order = np.argsort(idx, kind="stable")
        idx, val = idx[order], val[order]
        uniq, first = np.unique(idx, return_index=True)
        if len(uniq) < len(idx):
            ref = np.repeat(val[first], np.diff(np.append(first, len(idx))))
            if np.any(np.abs(val - ref) > atol * np.maximum(1.0, np.abs(ref))):
                bad = idx[np.flatnonzero(np.abs(val - ref) > atol * np.maximum(1.0, np.abs(ref)))[0]]
                raise ConstraintError(f"conflicting values for dof {bad}")
        return cls(uniq, val[first])

    @classmethod
    def empty(cls):
        return cls(np.empty(0, dtype=np.int64), np.empty(0))

    def merge(self, other: "ConstraintSet") -> "ConstraintSet":
        return ConstraintSet.build(
            np.concatenate([self.indices, other.indices]),
            np.concatenate([self.values, other.values]),
        )

    def __len__(self):
        return len(self.indices)


@dataclass
class ReducedSystem:
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    constraints: ConstraintSet
    ndofs: int

    def reconstruct(self, x_free) -> np.ndarray:
        x = np.zeros(self.ndofs)
        x[self.constraints.indices] = self.constraints.values
        x[self.free] = x_free
        return x

    def restrict(self, x) -> np.ndarray:
        return np.asarray(x)[self.free]


def apply_constraints(K, b, constraints: ConstraintSet) -> ReducedSystem:
    """Symmetric elimination: K_ff x_f = b_f - K_fc g."""
    n = K.shape[0]
    if len(constraints) and (constraints.indices.min() < 0 or constraints.indices.max() >= n):
        raise ConstraintError("constraint index out of range")
    mask = np.ones(n, dtype=bool)
    mask[constraints.indices] = False
    free = np.flatnonzero(mask)
    K = sparse.csr_matrix(K)
    g = np.zeros(n)
    g[constraints.indices] = constraints.values
    rhs = (np.asarray(b, dtype=float) - K @ g)[free]
    Kff = K[free][:, free].tocsr()
    return ReducedSystem(Kff, rhs, free, constraints, n)


# --------------------------------------------------------------------- PCG


@dataclass
class CgStats:
    iterations: int
    residual: float
    energies: list = field(default_factory=list)


def solve_cg(K, b, rel_tol: float = 1e-10, max_iter: int | None = None, x0=None,
             record_energy: bool = False, precond=None):
    """Preconditioned conjugate gradients (Jacobi unless ``precond`` is given).

    Stops when ``|b - K x| / |b| <= rel_tol`` (true residual). Raises
    ConvergenceError after ``max_iter`` iterations (default 10 * n).
    ``precond`` is an SPD map r -> z, e.g. a sparse LU solve.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    if max_iter is None:
        max_iter = 10 * max(n, 1)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if n == 0:
        return x, CgStats(0, 0.0)
    if bnorm == 0.0:
        return np.zeros(n), CgStats(0, 0.0)
    d = K.diagonal()
    if np.any(d <= 0):
        raise UsageError("matrix has non-positive diagonal; not SPD")
    if precond is None:
        dinv = 1.0 / d
        precond = lambda r: dinv * r  # noqa: E731
    energies = []

    def energy(x, r):
        # 1/2 x'Kx - b'x = -1/2 x'(b + r)
        return -0.5 * float(x @ (b + r))

    r = b - K @ x
    if record_energy:
        energies.append(energy(x, r))
    p = None
    rz_old = 0.0
    it = 0
    while True:
        if np.linalg.norm(r) <= rel_tol * bnorm:
            r_true = b - K @ x
            if np.linalg.norm(r_true) <= rel_tol * bnorm:
                return x, CgStats(it, float(np.linalg.norm(r_true) / bnorm), energies)
            # recursive residual drifted; restart from the true one
            r, p = r_true, None
        if it >= max_iter:
            res = float(np.linalg.norm(b - K @ x) / bnorm)
            raise ConvergenceError(
                f"CG did not reach rel_tol={rel_tol:g} in {max_iter} iterations (residual {res:.3e})",
                residual=res, iterations=it,
            )
        z = precond(r)
        rz = r @ z
        p = z if p is None else z + (rz / rz_old) * p
        Kp = K @ p
        alpha = rz / (p @ Kp)
        x = x + alpha * p
        r = r - alpha * Kp
        rz_old = rz
        it += 1
        if record_energy:
            energies.append(energy(x, r))
