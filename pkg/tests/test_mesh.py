import math

import numpy as np
import pytest

from exterior_bounds.errors import MeshParseError, ParameterError
from exterior_bounds.mesh import (
    BoundaryTag,
    TetMesh,
    generate,
    generate_ball_octant_shell,
    generate_cube_complement_octant,
    read_mesh,
    validate,
    write_mesh,
)

# frozen from enumeration of the generator's cells
def tet_count(nr, na):
    return 18 * nr * na * na


def vertex_count(nr, na):
    return (3 * na * na + 3 * na + 1) * (nr + 1)


BALL_DEFICIT_6x8 = 0.003946444690608535
CUBE_DEFICIT_8x8 = 0.004510292113215709


@pytest.mark.parametrize("geometry,R", [("ball", 5.0), ("cube", 3.0)])
def test_minimal_mesh_is_valid(geometry, R):
    m = generate(geometry, R, 1, 1)
    assert validate(m) == []
    assert m.n_tets == 18


@pytest.mark.parametrize("nr,na", [(1, 1), (2, 3), (3, 2), (4, 5)])
@pytest.mark.parametrize("geometry,R", [("ball", 10.0), ("cube", 10.0)])
def test_counts_match_closed_form(geometry, R, nr, na):
    m = generate(geometry, R, nr, na)
    assert m.n_tets == tet_count(nr, na)
    assert m.n_vertices == vertex_count(nr, na)
    assert validate(m) == []


def test_ball_volume_deficit_frozen():
    m = generate_ball_octant_shell(5.0, 6, 8)
    exact = (4 * math.pi / 3) * (125 - 1) / 8
    deficit = (exact - m.volume()) / exact
    assert 0 < deficit <= 0.02
    assert deficit == pytest.approx(BALL_DEFICIT_6x8, rel=1e-9)


def test_cube_volume_deficit_frozen():
    m = generate_cube_complement_octant(10.0, 8, 8)
    exact = (4 * math.pi / 3) * 1000 / 8 - 1
    deficit = (exact - m.volume()) / exact
    assert 0 < deficit <= 0.02
    assert deficit == pytest.approx(CUBE_DEFICIT_8x8, rel=1e-9)


def test_sphere_and_gamma_radii():
    m = generate_ball_octant_shell(5.0, 3, 4)
    r_s = np.linalg.norm(m.vertices[m.vertices_with_tag(BoundaryTag.SPHERE)], axis=1)
    r_g = np.linalg.norm(m.vertices[m.vertices_with_tag(BoundaryTag.GAMMA)], axis=1)
    assert np.abs(r_s - 5.0).max() <= 1e-12 * 5.0
    assert np.abs(r_g - 1.0).max() <= 1e-12


def test_cube_gamma_on_cube_surface():
    m = generate_cube_complement_octant(10.0, 3, 4)
    g = m.vertices[m.vertices_with_tag(BoundaryTag.GAMMA)]
    assert np.abs(g.max(axis=1) - 1.0).max() <= 1e-12
    assert g.min() >= -1e-15
    r_s = np.linalg.norm(m.vertices[m.vertices_with_tag(BoundaryTag.SPHERE)], axis=1)
    assert np.abs(r_s - 10.0).max() <= 1e-12 * 10


def test_symmetry_faces_lie_on_planes():
    m = generate_ball_octant_shell(5.0, 2, 3)
    for axis, tag in enumerate((BoundaryTag.SYMX, BoundaryTag.SYMY, BoundaryTag.SYMZ)):
        pts = m.vertices[m.faces_with_tag(tag)]
        assert np.all(pts[..., axis] == 0.0)


def test_face_tag_partition():
    m = generate_ball_octant_shell(5.0, 3, 3)
    from exterior_bounds.mesh import all_faces

    faces = all_faces(m.tets)
    _, counts = np.unique(faces, axis=0, return_counts=True)
    assert sum(m.tag_counts().values()) == np.count_nonzero(counts == 1) == len(m.bfaces)


def _components(faces):
    parent = {}

    def find(a):
        while parent.setdefault(a, a) != a:
            a = parent[a]
        return a

    for f in faces:
        for v in f[1:]:
            parent[find(v)] = find(f[0])
    return len({find(v) for v in np.unique(faces)})


@pytest.mark.parametrize("geometry", ["ball", "cube"])
def test_refinement_quadruples_and_keeps_tags_connected(geometry):
    a = generate(geometry, 5.0, 2, 2)
    b = generate(geometry, 5.0, 4, 4)
    assert b.n_tets >= 4 * a.n_tets
    for m in (a, b):
        for tag in BoundaryTag:
            assert _components(m.faces_with_tag(tag)) == 1


@pytest.mark.parametrize("args", [(1.0, 2, 2), (0.5, 2, 2), (5.0, 0, 2), (5.0, 2, 0)])
def test_ball_parameter_errors(args):
    with pytest.raises(ParameterError):
        generate_ball_octant_shell(*args)


def test_cube_parameter_errors():
    with pytest.raises(ParameterError):
        generate_cube_complement_octant(math.sqrt(3.0), 2, 2)
    with pytest.raises(ParameterError):
        generate("torus", 5.0, 1, 1)


def test_mesh_is_immutable():
    m = generate_ball_octant_shell(5.0, 1, 1)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 3.0


def test_generator_deterministic():
    assert generate_ball_octant_shell(5.0, 3, 3) == generate_ball_octant_shell(5.0, 3, 3)


# ------------------------------------------------------------- validator


def _replace(m, **kw):
    d = dict(vertices=m.vertices, tets=m.tets, bfaces=m.bfaces, btags=m.btags, regions=m.regions)
    d.update(kw)
    return TetMesh(**d)


def test_validate_catches_inverted_tet():
    m = generate_ball_octant_shell(5.0, 1, 1)
    tets = m.tets.copy()
    tets[3, [0, 1]] = tets[3, [1, 0]]
    defects = validate(_replace(m, tets=tets))
    assert "negative volume, tet 3" in defects


def test_validate_catches_untagged_face():
    m = generate_ball_octant_shell(5.0, 1, 1)
    defects = validate(_replace(m, bfaces=m.bfaces[1:], btags=m.btags[1:]))
    assert any(d.startswith("uncovered boundary face") for d in defects)


def test_validate_catches_double_tag():
    m = generate_ball_octant_shell(5.0, 1, 1)
    bf = np.vstack([m.bfaces, m.bfaces[:1]])
    bt = np.append(m.btags, int(BoundaryTag.SYMX))
    assert any("more than one tag" in d for d in validate(_replace(m, bfaces=bf, btags=bt)))


def test_validate_catches_interior_face_tagged():
    m = generate_ball_octant_shell(5.0, 2, 1)
    from exterior_bounds.mesh import all_faces

    faces = all_faces(m.tets)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    interior = uniq[counts == 2][0]
    bf = np.vstack([m.bfaces, interior])
    bt = np.append(m.btags, int(BoundaryTag.GAMMA))
    assert any("not on the boundary" in d for d in validate(_replace(m, bfaces=bf, btags=bt)))


def test_validate_catches_missing_vertex():
    m = generate_ball_octant_shell(5.0, 1, 1)
    tets = m.tets.copy()
    tets[0, 0] = m.n_vertices + 5
    assert validate(_replace(m, tets=tets)) == ["tet references a missing vertex"]


def test_validate_catches_off_radius_sphere_vertex():
    m = generate_ball_octant_shell(5.0, 1, 2)
    v = m.vertices.copy()
    k = m.vertices_with_tag(BoundaryTag.SPHERE)[0]
    v[k] *= 0.99
    assert f"sphere vertex off radius, vertex {k}" in validate(_replace(m, vertices=v))


def test_validate_catches_overshared_face():
    m = generate_ball_octant_shell(5.0, 1, 1)
    tets = np.vstack([m.tets, m.tets[:1]])
    assert any("more than two tets" in d for d in validate(_replace(m, tets=tets, regions=np.zeros(len(tets)))))


# ------------------------------------------------------------------ I/O


@pytest.mark.parametrize("geometry,R", [("ball", 5.0), ("cube", 10.0)])
def test_round_trip(tmp_path, geometry, R):
    m = generate(geometry, R, 2, 3)
    write_mesh(m, tmp_path / "m.tetmesh")
    m2 = read_mesh(tmp_path / "m.tetmesh")
    assert m2 == m
    write_mesh(m2, tmp_path / "m2.tetmesh")
    assert (tmp_path / "m.tetmesh").read_bytes() == (tmp_path / "m2.tetmesh").read_bytes()


def test_format_header(tmp_path):
    m = generate_ball_octant_shell(5.0, 1, 1)
    write_mesh(m, tmp_path / "m.tetmesh")
    lines = (tmp_path / "m.tetmesh").read_text().splitlines()
    assert lines[0] == "TETMESH v1"
    assert lines[1] == "vertices 14"
    assert lines[16] == "tets 18"
    assert lines[16 + 19] == "bfaces 24"
    assert lines[-1].split()[-1] in {"gamma", "sphere", "symx", "symy", "symz"}


def _write(tmp_path, text):
    p = tmp_path / "bad.tetmesh"
    p.write_text(text)
    return p


GOOD = """TETMESH v1
vertices 4
0 0 0
1 0 0
0 1 0
0 0 1
tets 1
0 1 2 3 0
bfaces 1
1 2 3 sphere
"""


def test_reader_accepts_minimal(tmp_path):
    m = read_mesh(_write(tmp_path, GOOD))
    assert m.n_tets == 1 and m.btags[0] == BoundaryTag.SPHERE


@pytest.mark.parametrize("text,line", [
    (GOOD.replace("TETMESH v1", "TETMESH v2"), 1),
    (GOOD.replace("vertices 4", "vertices four"), 2),
    (GOOD.replace("0 1 2 3 0", "0 1 2 9 0"), 8),
    (GOOD.replace("1 0 0\n", "1 0\n"), 4),
    (GOOD.replace("sphere", "outer"), 10),
    (GOOD.replace("tets 1", "tetz 1"), 7),
    (GOOD + "extra\n", 11),
    (GOOD.replace("bfaces 1\n1 2 3 sphere\n", "bfaces 2\n1 2 3 sphere\n"), None),
])
def test_reader_errors_carry_line_numbers(tmp_path, text, line):
    with pytest.raises(MeshParseError) as exc:
        read_mesh(_write(tmp_path, text))
    if line is not None:
        assert exc.value.lineno == line
        assert str(exc.value).startswith(f"line {line}:")


def test_reader_accepts_negative_volume_validator_rejects(tmp_path):
    m = read_mesh(_write(tmp_path, GOOD.replace("0 1 2 3 0", "1 0 2 3 0")))
    assert any(d.startswith("negative volume") for d in validate(m))
