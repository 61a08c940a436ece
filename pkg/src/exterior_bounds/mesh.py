"""Tetrahedral meshes of one octant of the truncated exterior domain.

Two generators are provided: the spherical shell ``1 < |x| < R`` (exterior of
the unit ball) and the region between the cube ``[0, 1]^3`` and the sphere of
radius ``R`` (exterior of the cube ``[-1, 1]^3``). Both extrude a triangulated
inner surface radially in prism layers and split every prism into three
tetrahedra with an index-ordered template, so neighbouring prisms always agree
on the diagonals of shared quadrilateral faces.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MeshParseError, ParameterError


class BoundaryTag(enum.IntEnum):
    GAMMA = 0
    SPHERE = 1
    SYMX = 2
    SYMY = 3
    SYMZ = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "BoundaryTag":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown boundary tag {label!r}") from None


SYMMETRY_TAGS = (BoundaryTag.SYMX, BoundaryTag.SYMY, BoundaryTag.SYMZ)

# local vertex triples of the four faces of a tet
TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray
    bfaces: np.ndarray
    btags: np.ndarray
    regions: np.ndarray = field(default=None)

    def __post_init__(self):
        nt = len(np.asarray(self.tets))
        regions = np.zeros(nt, dtype=np.int64) if self.regions is None else self.regions
        object.__setattr__(self, "vertices", _frozen(np.reshape(self.vertices, (-1, 3)), float))
        object.__setattr__(self, "tets", _frozen(np.reshape(self.tets, (-1, 4)), np.int64))
        object.__setattr__(self, "bfaces", _frozen(np.reshape(self.bfaces, (-1, 3)), np.int64))
        object.__setattr__(self, "btags", _frozen(self.btags, np.int64))
        object.__setattr__(self, "regions", _frozen(regions, np.int64))

    def __eq__(self, other):
        if not isinstance(other, TetMesh):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("vertices", "tets", "bfaces", "btags", "regions")
        )

    __hash__ = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def signed_volumes(self) -> np.ndarray:
        p = self.vertices[self.tets]
        d = p[:, 1:] - p[:, :1]
        return np.linalg.det(d) / 6.0

    def volume(self) -> float:
        return float(self.signed_volumes().sum())

    def faces_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return self.bfaces[self.btags == int(tag)]

    def vertices_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return np.unique(self.faces_with_tag(tag))

    def outer_radius(self) -> float:
        idx = self.vertices_with_tag(BoundaryTag.SPHERE)
        if len(idx) == 0:
            raise ParameterError("mesh has no sphere-tagged faces")
        return float(np.linalg.norm(self.vertices[idx], axis=1).mean())

    def tag_counts(self) -> dict[str, int]:
        return {t.label: int((self.btags == int(t)).sum()) for t in BoundaryTag}


# ---------------------------------------------------------------- generators


def _grading(n_radial: int, first_layer: float) -> np.ndarray:
    """Layer parameters 0 = t_0 < ... < t_n = 1 in geometric progression.

    The ratio q >= 1 is chosen so the first layer has parametric thickness
    ``first_layer``; if uniform layers are already thinner, they are used.
    """
    n = n_radial
    if n * first_layer >= 1.0 or n == 1:
        return np.linspace(0.0, 1.0, n + 1)

    def total(q):
        return first_layer * (q**n - 1.0) / (q - 1.0)

    lo, hi = 1.0 + 1e-12, 2.0
    while total(hi) < 1.0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    q = 0.5 * (lo + hi)
    steps = first_layer * q ** np.arange(n)
    t = np.concatenate([[0.0], np.cumsum(steps)])
    t /= t[-1]
    t[-1] = 1.0
    return t


def _octant_sphere_surface(m: int):
    """Equiangular cube-sphere octant: the three squares of ``_cube_octant_surface``
    with tangent-warped coordinates, projected onto the unit sphere."""
    pts, tris, regions = _cube_octant_surface(m)
    pts = np.tan(0.25 * np.pi * pts)
    return pts / np.linalg.norm(pts, axis=1)[:, None], tris, regions


def _cube_octant_surface(m: int):
    """The three unit squares {x_a = 1} of the cube [0,1]^3, gridded m x m."""
    index = {}
    pts = []

    def vid(key):
        if key not in index:
            index[key] = len(pts)
            pts.append(np.array(key, dtype=float) / m)
        return index[key]

    tris = []
    regions = []
    for a in range(3):
        b, c = [d for d in range(3) if d != a]
        for i in range(m):
            for j in range(m):
                corners = []
                for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    key = [0, 0, 0]
                    key[a], key[b], key[c] = m, i + di, j + dj
                    corners.append(vid(tuple(key)))
                q0, q1, q2, q3 = corners
                tris += [(q0, q1, q2), (q0, q2, q3)]
                regions += [a, a]
    return np.array(pts), np.array(tris, dtype=np.int64), np.array(regions)


def _extrude(surface_pts, tris, R, n_radial, first_layer, surface_regions=None):
    ns = len(surface_pts)
    outer = R * surface_pts / np.linalg.norm(surface_pts, axis=1)[:, None]
    t = _grading(n_radial, first_layer)
    layers = [surface_pts + tk * (outer - surface_pts) for tk in t[1:-1]]
    verts = np.vstack([surface_pts, *layers, outer]) if n_radial > 1 else np.vstack([surface_pts, outer])

    tris_sorted = np.sort(tris, axis=1)
    tets = []
    for k in range(n_radial):
        lo, hi = k * ns, (k + 1) * ns
        a, b, c = tris_sorted.T
        A, B, C = a + lo, b + lo, c + lo
        A1, B1, C1 = a + hi, b + hi, c + hi
        tets.append(np.stack([np.stack(v, axis=1) for v in (
            (A, B, C, A1), (B, C, A1, B1), (C, A1, B1, C1))], axis=1).reshape(-1, 4))
    tets = np.vstack(tets)

    p = verts[tets]
    vol = np.linalg.det(p[:, 1:] - p[:, :1])
    neg = vol < 0
    tets[neg, 0], tets[neg, 1] = tets[neg, 1].copy(), tets[neg, 0].copy()

    if surface_regions is None:
        regions = np.zeros(len(tets), dtype=np.int64)
    else:
        regions = np.tile(np.repeat(surface_regions, 3), n_radial)

    faces, tags = [tris_sorted, tris_sorted + n_radial * ns], [
        np.full(len(tris), int(BoundaryTag.GAMMA)),
        np.full(len(tris), int(BoundaryTag.SPHERE)),
    ]
    # edges of the surface triangulation used by exactly one triangle
    edges = np.sort(np.vstack([tris_sorted[:, [0, 1]], tris_sorted[:, [0, 2]], tris_sorted[:, [1, 2]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    rim = uniq[counts == 1]
    for a, b in rim:
        zero = np.flatnonzero((surface_pts[a] == 0.0) & (surface_pts[b] == 0.0))
        if len(zero) != 1:
            raise AssertionError("rim edge not on a single symmetry plane")
        tag = SYMMETRY_TAGS[zero[0]]
        for k in range(n_radial):
            lo, hi = k * ns, (k + 1) * ns
            faces.append(np.array([[a + lo, b + lo, a + hi], [b + lo, a + hi, b + hi]]))
            tags.append(np.full(2, int(tag)))
    return TetMesh(verts, tets, np.vstack(faces), np.concatenate(tags), regions)


def _check_counts(n_radial, n_angular):
    for name, val in (("n_radial", n_radial), ("n_angular", n_angular)):
        if int(val) != val or val < 1:
            raise ParameterError(f"{name} must be a positive integer, got {val!r}")


def generate_ball_octant_shell(R: float, n_radial: int, n_angular: int) -> TetMesh:
    """Mesh of {1 < |x| < R, x_i > 0} with 6 * n_radial * n_angular**2 tets.

    ``n_angular`` subdivides each of the three quarter-arcs bounding a
    cube-sphere patch; region tag = patch axis.
    """
    if not R > 1.0:
        raise ParameterError(f"ball shell needs R > 1, got {R}")
    _check_counts(n_radial, n_angular)
    pts, tris, regs = _octant_sphere_surface(n_angular)
    facet = 0.25 * np.pi / n_angular
    return _extrude(pts, tris, float(R), n_radial, facet / (R - 1.0), regs)


def generate_cube_complement_octant(R: float, n_radial: int, n_angular: int) -> TetMesh:
    """Mesh of {x in first octant, x not in [0,1]^3, |x| < R}.

    The cube's three visible unit squares are projected radially onto the
    sphere; 6 * n_radial * n_angular**2 tets. Region tag = axis of the square.
    """
    if not R > np.sqrt(3.0):
        raise ParameterError(f"cube complement needs R > sqrt(3), got {R}")
    _check_counts(n_radial, n_angular)
    pts, tris, regs = _cube_octant_surface(n_angular)
    return _extrude(pts, tris, float(R), n_radial, (1.0 / n_angular) / (R - 1.0), regs)


def generate(geometry: str, R: float, n_radial: int, n_angular: int) -> TetMesh:
    if geometry == "ball":
        return generate_ball_octant_shell(R, n_radial, n_angular)
    if geometry == "cube":
        return generate_cube_complement_octant(R, n_radial, n_angular)
    raise ParameterError(f"unknown geometry {geometry!r}")


# ---------------------------------------------------------------- validation


def all_faces(tets: np.ndarray) -> np.ndarray:
    """Sorted vertex triples of every tet face, shape (4 * nt, 3), tet-major."""
    return np.sort(tets[:, TET_FACES].reshape(-1, 3), axis=1)


def validate(mesh: TetMesh, radius_rtol: float = 1e-12) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    defects = []
    nv = mesh.n_vertices
    if len(mesh.tets) and (mesh.tets.min() < 0 or mesh.tets.max() >= nv):
        defects.append("tet references a missing vertex")
        return defects
    for k in np.flatnonzero(mesh.signed_volumes() <= 0.0):
        defects.append(f"negative volume, tet {k}")

    faces = all_faces(mesh.tets)
    uniq, inv, counts = np.unique(faces, axis=0, return_inverse=True, return_counts=True)
    for f in np.flatnonzero(counts > 2):
        defects.append(f"face shared by more than two tets, face {tuple(uniq[f])}")
    boundary = {tuple(f) for f in uniq[counts == 1]}

    tagged = {}
    for i, (face, tag) in enumerate(zip(np.sort(mesh.bfaces, axis=1), mesh.btags)):
        key = tuple(face)
        if tag not in [int(t) for t in BoundaryTag]:
            defects.append(f"invalid tag {tag}, boundary face {i}")
        if key in tagged:
            defects.append(f"boundary face carries more than one tag, boundary face {i}")
        tagged[key] = tag
        if key not in boundary:
            defects.append(f"tagged face is not on the boundary, boundary face {i}")
    for key in sorted(boundary - tagged.keys()):
        defects.append(f"uncovered boundary face {key}")

    sph = mesh.vertices_with_tag(BoundaryTag.SPHERE)
    if len(sph):
        r = np.linalg.norm(mesh.vertices[sph], axis=1)
        ref = r.max()
        for v in sph[np.abs(r - ref) > radius_rtol * ref]:
            defects.append(f"sphere vertex off radius, vertex {v}")
    return defects


# ---------------------------------------------------------------- TETMESH v1 I/O


def write_mesh(mesh: TetMesh, path) -> None:
    lines = ["TETMESH v1", f"vertices {mesh.n_vertices}"]
    lines += ["%.17g %.17g %.17g" % tuple(v) for v in mesh.vertices]
    lines.append(f"tets {mesh.n_tets}")
    lines += ["%d %d %d %d %d" % (*t, r) for t, r in zip(mesh.tets, mesh.regions)]
    lines.append(f"bfaces {len(mesh.bfaces)}")
    lines += ["%d %d %d %s" % (*f, BoundaryTag(t).label) for f, t in zip(mesh.bfaces, mesh.btags)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TetMesh:
    """Parse a TETMESH v1 file. Index range is checked, geometry is not."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise MeshParseError("unexpected end of file", pos + 1)
        pos += 1
        return pos, lines[pos - 1].split()

    def header(word):
        lineno, tok = next_line()
        if len(tok) != 2 or tok[0] != word:
            raise MeshParseError(f"expected '{word} <count>'", lineno)
        try:
            n = int(tok[1])
        except ValueError:
            raise MeshParseError(f"bad count {tok[1]!r}", lineno) from None
        if n < 0:
            raise MeshParseError("negative count", lineno)
        return n

    lineno, tok = next_line()
    if tok != ["TETMESH", "v1"]:
        raise MeshParseError("missing 'TETMESH v1' header", lineno)

    nv = header("vertices")
    verts = np.empty((nv, 3))
    for i in range(nv):
        lineno, tok = next_line()
        try:
            if len(tok) != 3:
                raise ValueError
            verts[i] = [float(t) for t in tok]
        except ValueError:
            raise MeshParseError("expected three coordinates", lineno) from None

    def index_row(count, tag_parser):
        lineno, tok = next_line()
        if len(tok) != count + 1:
            raise MeshParseError(f"expected {count} indices and a tag", lineno)
        try:
            idx = [int(t) for t in tok[:count]]
        except ValueError:
            raise MeshParseError("non-integer index", lineno) from None
        for i in idx:
            if not 0 <= i < nv:
                raise MeshParseError(f"index {i} references a missing vertex", lineno)
        try:
            tag = tag_parser(tok[count])
        except ValueError as exc:
            raise MeshParseError(str(exc), lineno) from None
        return idx, tag

    nt = header("tets")
    tets = np.empty((nt, 4), dtype=np.int64)
    regions = np.empty(nt, dtype=np.int64)
    for i in range(nt):
        tets[i], regions[i] = index_row(4, int)

    nf = header("bfaces")
    faces = np.empty((nf, 3), dtype=np.int64)
    tags = np.empty(nf, dtype=np.int64)
    for i in range(nf):
        faces[i], tag = index_row(3, BoundaryTag.from_label)
        tags[i] = int(tag)

    while pos < len(lines):
        if lines[pos].strip():
            raise MeshParseError("trailing content", pos + 1)
        pos += 1
    return TetMesh(verts, tets, faces, tags, regions)
