import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbblocks.mesh import (WALL, BlockKind, FacetKind, FacetTag, SimplicialMesh, bifurcation_area,
                           generate_reference_block, inlet, outlet)

KINDS = ["T1", "T2", "T3", "B"]


def test_t1_unit_square_ports():
    m = generate_reference_block("T1", 1)
    assert np.allclose(m.vertices.min(0), [0, -0.5]) and np.allclose(m.vertices.max(0), [1, 0.5])
    assert np.all(m.cell_volumes() > 0)
    ports = [t for t in m.tags() if t.kind is not FacetKind.WALL]
    assert ports == [inlet(0), outlet(0)]
    for f in m.boundary_facets(inlet(0)):
        assert np.allclose(m.vertices[list(f), 0], 0)
    for f in m.boundary_facets(outlet(0)):
        assert np.allclose(m.vertices[list(f), 0], 1)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_t3_aspect_ratio(r):
    m = generate_reference_block("T3", r)
    assert np.allclose(m.vertices.min(0), [0, -0.5]) and np.allclose(m.vertices.max(0), [3, 0.5])


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("r", [1, 2])
def test_euler_characteristic(kind, r):
    m = generate_reference_block(kind, r)
    assert m.n_vertices - len(m.edges()) + m.n_cells == 1


@pytest.mark.parametrize("kind,area", [("T1", 1.0), ("T2", 2.0), ("T3", 3.0), ("B", bifurcation_area())])
def test_area(kind, area):
    for r in (1, 2, 3):
        assert abs(generate_reference_block(kind, r).cell_volumes().sum() - area) < 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_refinement_quadruples_cells(kind):
    c1 = generate_reference_block(kind, 1).n_cells
    c2 = generate_reference_block(kind, 2).n_cells
    c4 = generate_reference_block(kind, 4).n_cells
    assert abs(c2 / c1 - 4) <= 0.4 and abs(c4 / c2 - 4) <= 0.4


@pytest.mark.parametrize("kind", KINDS)
def test_tags_partition_boundary(kind):
    m = generate_reference_block(kind, 2)
    union = set()
    for t in m.tags():
        fs = set(m.boundary_facets(t))
        assert not fs & union
        union |= fs
    assert union == m.topological_boundary()


def test_wall_facets_on_tube_sides():
    m = generate_reference_block("T1", 2)
    for f in m.boundary_facets(WALL):
        assert np.allclose(np.abs(m.vertices[list(f), 1]), 0.5)


def test_inlet_length():
    m = generate_reference_block("T1", 3)
    assert abs(m.facet_measure(m.boundary_facets(inlet(0))) - 1.0) < 1e-12


def test_bifurcation_outlets_disjoint():
    m = generate_reference_block("B", 1)
    o0, o1 = set(m.boundary_facets(outlet(0))), set(m.boundary_facets(outlet(1)))
    assert o1 and not o0 & o1
    assert abs(m.facet_measure(o0) - 0.7) < 1e-12 and abs(m.facet_measure(o1) - 0.7) < 1e-12


def test_bifurcation_mirror_symmetric():
    v = generate_reference_block("B", 2).vertices
    mirrored = {tuple(np.round(p * [1, -1], 9)) for p in v}
    assert mirrored == {tuple(np.round(p, 9)) for p in v}


def test_unknown_tag_raises():
    m = generate_reference_block("T1", 1)
    with pytest.raises(KeyError):
        m.boundary_facets(outlet(3))


def test_bad_inputs():
    with pytest.raises(ValueError):
        generate_reference_block("T4", 1)
    with pytest.raises(ValueError):
        generate_reference_block("T1", 0)
    with pytest.raises(ValueError):
        FacetTag(FacetKind.INLET, -1)


def test_orientation_repaired():
    m = generate_reference_block("T1", 1)
    cells = m.cells.copy()
    cells[:, [0, 1]] = cells[:, [1, 0]]
    m2 = SimplicialMesh(m.vertices, cells, m.facet_tags)
    assert np.all(m2.cell_volumes() > 0)


def test_untagged_boundary_rejected():
    m = generate_reference_block("T1", 1)
    tags = dict(m.facet_tags)
    tags.pop(next(iter(tags)))
    with pytest.raises(ValueError):
        SimplicialMesh(m.vertices, m.cells, tags)


def test_text_roundtrip():
    m = generate_reference_block("B", 1)
    m2 = SimplicialMesh.from_text(m.to_text())
    assert np.array_equal(m.vertices, m2.vertices) and np.array_equal(m.cells, m2.cells)
    assert m.facet_tags == m2.facet_tags


def test_hand_built_tetrahedron():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    faces = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
    tags = {faces[0]: inlet(0), faces[1]: WALL, faces[2]: WALL, faces[3]: outlet(0)}
    m = SimplicialMesh(v, np.array([[0, 1, 2, 3]]), tags)
    assert m.dim == 3 and abs(m.cell_volumes()[0] - 1 / 6) < 1e-15
    assert abs(m.facet_measure([faces[3]]) - np.sqrt(3) / 2) < 1e-14


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(KINDS), st.integers(1, 3))
def test_mesh_is_conforming(kind, r):
    m = generate_reference_block(kind, r)
    # every interior facet is shared by exactly two cells
    from itertools import combinations

    count = {}
    for c in m.cells.tolist():
        for f in combinations(sorted(c), 2):
            count[f] = count.get(f, 0) + 1
    assert set(count.values()) <= {1, 2}
    assert {f for f, c in count.items() if c == 1} == set(m.facet_tags)
