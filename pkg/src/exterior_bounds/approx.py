"""Truncated approximation: an FE function on the computational domain glued
to the harmonic tail zeta / r outside the sphere, and the alternating energy
minimisation that fixes the interior field and the tail amplitude.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .fem import (
    ConstraintSet,
    FeSpace,
    apply_constraints,
    assemble_stiffness,
    gradients_at,
    interpolate,
    load_from_values,
    solve_cg,
)
from .mesh import BoundaryTag
from .problem import OCTANT_FACTOR, ProblemSpec


def tail_energy(zeta: float, R: float) -> float:
    """Dirichlet energy of zeta / r on |x| > R (whole exterior, not an octant)."""
    if not R > 0:
        raise ParameterError(f"R must be positive, got {R}")
    return 4.0 * math.pi * zeta**2 / R


def surface_gauge(points: np.ndarray, geometry: str) -> np.ndarray:
    """1 on the inner obstacle's surface, growing linearly along rays."""
    if geometry == "ball":
        return np.linalg.norm(points, axis=-1)
    return np.abs(points).max(axis=-1)


def radial_blend(points: np.ndarray, R: float, geometry: str) -> np.ndarray:
    """0 on the obstacle, 1 on |x| = R, linear in the ray parameter between."""
    m = surface_gauge(points, geometry)
    r = np.linalg.norm(points, axis=-1)
    return (m - 1.0) / (R * m / r - 1.0)


@dataclass
class EnergyBreakdown:
    interior: float
    tail: float
    load: float = 0.0

    @property
    def total(self) -> float:
        return self.interior + self.load + self.tail


@dataclass
class IterationRecord:
    k: int
    zeta: float
    energy: float          # after the interior solve with zeta_k
    energy_after_zeta: float
    residual: float
    cg_iterations: int


@dataclass
class TruncatedApproximation:
    space: FeSpace
    coeffs: np.ndarray
    zeta: float
    R: float
    u_r1: np.ndarray
    u_r2: np.ndarray
    interior: np.ndarray
    converged: bool = True
    trace: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def gradient_at(self, rule=None) -> np.ndarray:
        return gradients_at(self.space, self.coeffs, rule)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# alternating-minimisation trace; energies full-domain (octant x8) incl. tail 4*pi*zeta^2/R\n")
            w = csv.writer(fh)
            w.writerow(["k", "zeta", "energy", "energy_after_zeta", "residual", "cg_iterations"])
            for r in self.trace:
                w.writerow([r.k, "%.6e" % r.zeta, "%.6e" % r.energy, "%.6e" % r.energy_after_zeta,
                            "%.6e" % r.residual, r.cg_iterations])


def _dirichlet_dofs(space: FeSpace):
    gamma = space.scalar_dofs_on(BoundaryTag.GAMMA)
    sphere = space.scalar_dofs_on(BoundaryTag.SPHERE)
    return gamma, sphere


def seed_auxiliary_functions(space: FeSpace, problem: ProblemSpec, K=None, rel_tol: float = 1e-10):
    """Boundary-carrying functions for the alternating minimisation.

    The first is the discrete harmonic lift of (u0 on Gamma, 0 on the sphere);
    the second is the radial blend (0 on Gamma, 1 on the sphere), which is not
    discretely harmonic, so the interior solve depends on zeta.
    """
    if K is None:
        K = assemble_stiffness(space, problem.A)
    gamma, sphere = _dirichlet_dofs(space)
    cs = ConstraintSet.build(np.concatenate([gamma, sphere]),
                             np.concatenate([np.full(len(gamma), problem.u0), np.zeros(len(sphere))]))
    red = apply_constraints(K, np.zeros(space.ndofs), cs)
    x, _ = solve_cg(red.matrix, red.rhs, rel_tol)
    u1 = red.reconstruct(x)

    R = problem.R
    u2 = interpolate(space, lambda p: radial_blend(p, R, problem.geometry))
    u2[gamma] = 0.0
    u2[sphere] = 1.0
    return u1, u2


class Algorithm1:
    """State of the alternating (interior field, tail amplitude) minimisation."""

    def __init__(self, space: FeSpace, problem: ProblemSpec, u_r1=None, u_r2=None,
                 cg_rel_tol: float = 1e-10, cg_max_iter: int | None = None):
        self.space = space
        self.problem = problem
        self.R = problem.R
        self.cg_rel_tol = cg_rel_tol
        self.cg_max_iter = cg_max_iter
        self.K = assemble_stiffness(space, problem.A)
        self.F = load_from_values(space, problem.source_at(space)) if problem.has_source else np.zeros(space.ndofs)
        if u_r1 is None or u_r2 is None:
            s1, s2 = seed_auxiliary_functions(space, problem, self.K, cg_rel_tol)
            u_r1 = s1 if u_r1 is None else u_r1
            u_r2 = s2 if u_r2 is None else u_r2
        self.u_r1 = np.asarray(u_r1, float)
        self.u_r2 = np.asarray(u_r2, float)
        gamma, sphere = _dirichlet_dofs(space)
        self.zero_bc = ConstraintSet.build(np.concatenate([gamma, sphere]), 0.0)
        self.K_u2 = self.K @ self.u_r2
        self.u2_norm_sq = OCTANT_FACTOR * float(self.u_r2 @ self.K_u2)

    def combined(self, interior, zeta) -> np.ndarray:
        return interior + self.u_r1 + (zeta / self.R) * self.u_r2

    def energy(self, interior, zeta) -> EnergyBreakdown:
        u = self.combined(interior, zeta)
        return EnergyBreakdown(
            interior=OCTANT_FACTOR * float(u @ (self.K @ u)),
            tail=tail_energy(zeta, self.R),
            load=-2.0 * OCTANT_FACTOR * float(self.F @ u),
        )

    def step1(self, zeta: float, x0=None):
        """Interior field minimising the energy for fixed zeta (zero on Gamma and sphere)."""
        rhs = self.F - self.K @ (self.u_r1 + (zeta / self.R) * self.u_r2)
        red = apply_constraints(self.K, rhs, self.zero_bc)
        x, stats = solve_cg(red.matrix, red.rhs, self.cg_rel_tol, self.cg_max_iter,
                            x0=None if x0 is None else red.restrict(x0))
        return red.reconstruct(x), stats

    def step2(self, interior) -> float:
        """Vertex of the parabola zeta -> energy, full-domain normalisation."""
        a = interior + self.u_r1
        cross = OCTANT_FACTOR * (float(a @ self.K_u2) - float(self.F @ self.u_r2))
        return -self.R * cross / (4.0 * math.pi * self.R + self.u2_norm_sq)

    def run(self, stop_rel: float = 1e-8, max_iter: int = 50, zeta0: float = 1.0) -> TruncatedApproximation:
        zeta = zeta0
        interior = np.zeros(self.space.ndofs)
        trace = []
        converged = False
        for k in range(1, max_iter + 1):
            interior, stats = self.step1(zeta, x0=interior)
            e1 = self.energy(interior, zeta).total
            zeta_new = self.step2(interior)
            e2 = self.energy(interior, zeta_new).total
            trace.append(IterationRecord(k, zeta, e1, e2, stats.residual, stats.iterations))
            change = abs(zeta_new - zeta) / abs(zeta_new) if zeta_new != 0 else abs(zeta_new - zeta)
            zeta = zeta_new
            if change < stop_rel or math.isinf(stop_rel):
                converged = True
                break
        return TruncatedApproximation(
            space=self.space,
            coeffs=self.combined(interior, zeta),
            zeta=zeta,
            R=self.R,
            u_r1=self.u_r1,
            u_r2=self.u_r2,
            interior=interior,
            converged=converged,
            trace=trace,
        )


def alg1_run(space: FeSpace, problem: ProblemSpec, stop_rel: float = 1e-8, max_iter: int = 50,
             cg_rel_tol: float = 1e-10) -> TruncatedApproximation:
    return Algorithm1(space, problem, cg_rel_tol=cg_rel_tol).run(stop_rel, max_iter)


def energy(approx: TruncatedApproximation, problem: ProblemSpec | None = None) -> EnergyBreakdown:
    """Full-domain energy of the glued approximation."""
    A = None if problem is None else problem.A
    K = assemble_stiffness(approx.space, A)
    u = approx.coeffs
    load = 0.0
    if problem is not None and problem.has_source:
        F = load_from_values(approx.space, problem.source_at(approx.space))
        load = -2.0 * OCTANT_FACTOR * float(F @ u)
    return EnergyBreakdown(OCTANT_FACTOR * float(u @ (K @ u)), tail_energy(approx.zeta, approx.R), load)


def from_function(space: FeSpace, func, zeta: float, R: float) -> TruncatedApproximation:
    """Wrap a nodal interpolant as an approximation (e.g. of the exact solution)."""
    c = interpolate(space, func)
    z = np.zeros_like(c)
    return TruncatedApproximation(space, c, float(zeta), float(R), z, z, c)
