"""Command-line drivers: mesh generation, truncated solves, conforming and
non-conforming bound reports over a mesh ladder.

    exterior-bounds meshgen|solve|bounds|nonconforming --config run.json [--out DIR] [--sequential]

Exit codes: 0 success, 2 configuration error, 3 non-convergence, 4 bound violation.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BoundsError, BoundViolation, ConfigError, ConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_VIOLATION = 0, 2, 3, 4


@dataclass
class RunConfig:
    geometry: str = "ball"
    R: float = 5.0
    ladder: list = field(default_factory=lambda: [[6, 4], [7, 5], [8, 6]])
    u0: float = 1.0
    N: int = 3
    coefficient: Optional[object] = None
    stop_rel: float = 1e-8
    max_iter: int = 50
    cg_rel_tol: float = 1e-10
    flux_degree: int = 2
    beta0: float = 1.0
    beta_tol: float = 1e-6
    beta_max_iter: int = 20
    thetas: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    deltas: list = field(default_factory=lambda: [0.0, 0.01, 0.1])
    seed: int = 0
    rtol: float = 1e-8
    out: str = "out"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.geometry not in ("ball", "cube"):
            raise ConfigError(f"geometry must be 'ball' or 'cube', got {self.geometry!r}")
        if not _is_number(self.R):
            raise ConfigError("R must be a number")
        r_min = 1.0 if self.geometry == "ball" else math.sqrt(3.0)
        if not self.R > r_min:
            raise ConfigError(f"R must exceed {r_min:.6g} for geometry {self.geometry!r}, got {self.R}")
        if not isinstance(self.ladder, list) or not self.ladder:
            raise ConfigError("ladder must be a non-empty list of [n_radial, n_angular] pairs")
        for entry in self.ladder:
            if (not isinstance(entry, (list, tuple)) or len(entry) != 2
                    or not all(isinstance(k, int) and not isinstance(k, bool) and k >= 1 for k in entry)):
                raise ConfigError(f"bad ladder entry {entry!r}")
        for name in ("stop_rel", "cg_rel_tol", "beta0", "beta_tol", "rtol"):
            v = getattr(self, name)
            if not _is_number(v) or not v > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("max_iter", "beta_max_iter", "N"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.N < 3:
            raise ConfigError("N must be at least 3")
        if self.flux_degree not in (1, 2):
            raise ConfigError("flux_degree must be 1 or 2")
        if not isinstance(self.thetas, list) or not all(_is_number(t) and t > 0 for t in self.thetas):
            raise ConfigError("thetas must be a list of positive numbers")
        if not isinstance(self.deltas, list) or not all(_is_number(d) and d >= 0 for d in self.deltas):
            raise ConfigError("deltas must be a list of non-negative numbers")
        if not _is_number(self.u0):
            raise ConfigError("u0 must be a number")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not isinstance(self.out, str) or not self.out:
            raise ConfigError("out must be a non-empty path string")
        if self.coefficient is not None:
            try:
                A = np.asarray(self.coefficient, dtype=float)
            except (TypeError, ValueError) as exc:
                raise ConfigError("coefficient must be a number or a 3x3 matrix") from exc
            if A.shape not in ((), (3, 3)):
                raise ConfigError("coefficient must be a number or a 3x3 matrix")
            from .fem import check_spd

            try:
                check_spd(A * np.eye(3) if A.ndim == 0 else A)
            except BoundsError as exc:
                raise ConfigError(str(exc)) from exc

    def coefficient_matrix(self):
        return None if self.coefficient is None else np.asarray(self.coefficient, dtype=float)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


# ------------------------------------------------------------ per-entry work


def _tag(cfg: RunConfig, entry) -> str:
    return f"{cfg.geometry}_R{cfg.R:g}_{entry[0]}x{entry[1]}"


def _mesh(cfg: RunConfig, entry, out: Path | None = None):
    from .mesh import generate, read_mesh

    if out is not None:
        path = out / f"mesh_{_tag(cfg, entry)}.tetmesh"
        if path.exists():
            return read_mesh(path)
    return generate(cfg.geometry, cfg.R, entry[0], entry[1])


def _problem(cfg: RunConfig, mesh):
    from .problem import ProblemSpec

    return ProblemSpec(mesh, A=cfg.coefficient_matrix(), u0=float(cfg.u0), N=cfg.N, geometry=cfg.geometry)


def _solve(cfg: RunConfig, problem, degree: int = 1):
    from .approx import Algorithm1
    from .fem import FeSpace

    alg = Algorithm1(FeSpace(problem.mesh, degree, 1), problem, cg_rel_tol=cfg.cg_rel_tol)
    return alg.run(cfg.stop_rel, cfg.max_iter)


def _majorant_config(cfg: RunConfig):
    from .conforming import MajorantConfig

    return MajorantConfig(flux_degree=cfg.flux_degree, beta0=cfg.beta0, beta_tol=cfg.beta_tol,
                          beta_max_iter=cfg.beta_max_iter, cg_rel_tol=cfg.cg_rel_tol)


def _run_meshgen(cfg: RunConfig, entry, out: Path):
    from .mesh import generate, write_mesh

    mesh = generate(cfg.geometry, cfg.R, entry[0], entry[1])
    path = out / f"mesh_{_tag(cfg, entry)}.tetmesh"
    write_mesh(mesh, path)
    return {"entry": entry, "path": path.name, "n_tets": mesh.n_tets, "n_vertices": mesh.n_vertices}


def _run_solve(cfg: RunConfig, entry, out: Path):
    from .approx import energy

    problem = _problem(cfg, _mesh(cfg, entry, out))
    approx = _solve(cfg, problem)
    approx.write_trace(out / f"trace_{_tag(cfg, entry)}.csv")
    e = energy(approx, problem)
    return {"entry": entry, "n_tets": problem.mesh.n_tets, "zeta": approx.zeta, "interior": e.interior,
            "tail": e.tail, "total": e.total, "iterations": approx.iterations, "converged": approx.converged}


def _run_bounds(cfg: RunConfig, entry, out: Path):
    from .conforming import compute_bounds
    from .reports import write_vtk

    problem = _problem(cfg, _mesh(cfg, entry, out))
    approx = _solve(cfg, problem)
    with_oracle = cfg.geometry == "ball" and cfg.coefficient is None
    report, maj, _ = compute_bounds(approx, problem, _majorant_config(cfg), with_oracle=with_oracle)
    cells = {"indicator": report.indicator}
    if report.oracle_per_tet is not None:
        cells["oracle_error"] = report.oracle_per_tet
    write_vtk(out / f"indicator_{_tag(cfg, entry)}.vtk", problem.mesh, cells, title=f"octant per-tet values {_tag(cfg, entry)}")
    return {"entry": entry, "converged": approx.converged, "report": report,
            "ok": report.bracketing_holds(cfg.rtol)}


def _run_nonconforming(cfg: RunConfig, entry, out: Path):
    from .nonconforming import fabricate_flux, nc_bounds

    problem = _problem(cfg, _mesh(cfg, entry, out))
    approx = _solve(cfg, problem)
    reference = None
    converged = approx.converged
    if cfg.geometry != "ball" or cfg.coefficient is not None:
        # no exact solution: a degree-2 solve on the same mesh stands in for it
        reference = _solve(cfg, problem, degree=2)
        converged = converged and reference.converged
    rows = []
    for delta in cfg.deltas:
        vflux = fabricate_flux(approx, problem, float(delta), seed=cfg.seed)
        rep = nc_bounds(vflux, problem, _majorant_config(cfg), cfg.thetas, reference=reference,
                        with_oracle=reference is None, delta=float(delta))
        rows.append(rep)
    return {"entry": entry, "n_tets": problem.mesh.n_tets, "converged": converged, "reports": rows,
            "ok": all(r.chain_holds(cfg.rtol) for r in rows)}


_WORKERS = {
    "meshgen": _run_meshgen,
    "solve": _run_solve,
    "bounds": _run_bounds,
    "nonconforming": _run_nonconforming,
}


def _map(cfg: RunConfig, command: str, out: Path, sequential: bool):
    fn = _WORKERS[command]
    if sequential or len(cfg.ladder) == 1:
        return [fn(cfg, e, out) for e in cfg.ladder]
    with ProcessPoolExecutor(max_workers=min(len(cfg.ladder), 4)) as pool:
        futures = [pool.submit(fn, cfg, e, out) for e in cfg.ladder]
        return [f.result() for f in futures]


# ------------------------------------------------------------ aggregation


NORMALISATION = "energies and bounds are full-domain values (octant integrals x8, plus the tail outside R)"


def _write_solve(cfg, out: Path, results) -> None:
    from .reports import fmt, write_csv

    rows = [[cfg.geometry, fmt(cfg.R), r["entry"][0], r["entry"][1], r["n_tets"], fmt(r["zeta"]),
             fmt(r["interior"]), fmt(r["tail"]), fmt(r["total"]), r["iterations"], int(r["converged"])]
            for r in results]
    write_csv(out / "solve.csv", NORMALISATION,
              ["geometry", "R", "n_radial", "n_angular", "n_tets", "zeta", "energy_interior", "energy_tail",
               "energy_total", "iterations", "converged"], rows)


def _write_bounds(cfg, out: Path, results) -> None:
    from .reports import fmt, pct, write_csv

    rows = []
    for r in results:
        b = r["report"]
        e = b.energy_sq
        oracle = b.oracle_error_sq
        rows.append([cfg.geometry, fmt(cfg.R), r["entry"][0], r["entry"][1], b.n_tets, fmt(b.zeta), fmt(e),
                     fmt(b.minorant), fmt(oracle), fmt(b.majorant_sq),
                     pct(b.minorant / e), pct(None if oracle is None else oracle / e), pct(b.majorant_sq / e),
                     fmt(b.efficiency), fmt(b.beta), fmt(b.div_term), fmt(b.flux_term)])
    write_csv(out / "bounds.csv", NORMALISATION + "; *_pct columns are percent of ||grad u||^2",
              ["geometry", "R", "n_radial", "n_angular", "n_tets", "zeta", "energy", "minorant", "oracle_error_sq",
               "majorant_sq", "minorant_pct", "oracle_pct", "majorant_pct", "efficiency", "beta", "div_term",
               "flux_term"], rows)


def _write_nonconforming(cfg, out: Path, results) -> None:
    from .reports import fmt, write_csv

    thetas = [float(t) for t in cfg.thetas]
    rows = []
    for r in results:
        for rep in r["reports"]:
            rows.append([cfg.geometry, fmt(cfg.R), r["entry"][0], r["entry"][1], r["n_tets"], fmt(rep.delta),
                         fmt(rep.lower), fmt(rep.sup_minorant), fmt(rep.sup_divfree), fmt(rep.oracle_error_sq),
                         fmt(rep.upper), fmt(rep.inf_majorant), fmt(rep.inf_fit)]
                        + [fmt(rep.appendix[t]) for t in thetas] + [int(rep.surrogate)])
    note = NORMALISATION
    if any(r["reports"] and r["reports"][0].surrogate for r in results):
        note += "; divergence-free candidate built from a same-mesh degree-2 surrogate solution"
    write_csv(out / "nonconforming.csv", note,
              ["geometry", "R", "n_radial", "n_angular", "n_tets", "delta", "lower", "sup_minorant", "sup_divfree",
               "oracle_error_sq", "upper", "inf_majorant", "inf_fit"]
              + [f"appendix_theta_{t:g}" for t in thetas] + ["surrogate"], rows)


def run(command: str, cfg: RunConfig, out: Path, sequential: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    results = _map(cfg, command, out, sequential)
    if command == "meshgen":
        for r in results:
            print(f"{r['path']}: {r['n_tets']} tets, {r['n_vertices']} vertices")
        return EXIT_OK
    if command == "solve":
        _write_solve(cfg, out, results)
        for r in results:
            print(f"{r['entry']}: zeta={r['zeta']:.6f} energy={r['total']:.6e} iterations={r['iterations']}")
        return EXIT_OK if all(r["converged"] for r in results) else EXIT_CONVERGENCE
    bad = [r["entry"] for r in results if not r["ok"]]
    if bad:
        raise BoundViolation(f"bound ordering violated on ladder entries {bad}")
    if command == "bounds":
        _write_bounds(cfg, out, results)
    else:
        _write_nonconforming(cfg, out, results)
    print(f"wrote {command} report for {len(results)} ladder entries to {out}")
    return EXIT_OK if all(r["converged"] for r in results) else EXIT_CONVERGENCE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="exterior-bounds", description="Two-sided error bounds on exterior domains.")
    p.add_argument("command", choices=sorted(_WORKERS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides the config's 'out')")
    p.add_argument("--sequential", action="store_true", help="run ladder entries one after another")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        out = Path(args.out if args.out is not None else cfg.out)
        return run(args.command, cfg, out, args.sequential)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except BoundViolation as exc:
        print(f"bound violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
