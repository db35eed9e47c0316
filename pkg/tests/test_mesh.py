import numpy as np
import pytest

from mesh import (EdgeKind, MeshError, Rectangle, build_initial_mesh, element_geometry, is_conforming,
                  mesh_stats, read_mesh_dump, refine_nvb, refine_uniform, write_mesh_dump)


@pytest.mark.parametrize("n,n_vertices,n_triangles", [(1, 4, 2), (4, 25, 32), (16, 289, 512)])
def test_initial_mesh_counts(n, n_vertices, n_triangles):
    mesh = build_initial_mesh(n)
    assert mesh.n_vertices == n_vertices
    assert mesh.n_elements == n_triangles
    assert is_conforming(mesh)


@pytest.mark.parametrize("n", [0, -3, 2.5])
def test_initial_mesh_rejects_bad_n(n):
    with pytest.raises(MeshError):
        build_initial_mesh(n)


def test_refinement_edge_is_hypotenuse(mesh4):
    geo = element_geometry(mesh4)
    ref_len = geo.edge_lengths[np.arange(mesh4.n_elements), mesh4.refine_edge]
    assert ref_len == pytest.approx(geo.h)
    assert np.all(geo.area > 0)


def test_boundary_defaults_to_dirichlet(mesh4):
    topo = mesh4.topology
    boundary = topo.elements[:, 1] < 0
    assert topo.n_edges == 56
    assert boundary.sum() == 16
    assert np.all(topo.kind[boundary] == EdgeKind.DIRICHLET)
    assert np.all(topo.kind[~boundary] == EdgeKind.INTERIOR)


def test_neumann_sides_marked():
    mesh = build_initial_mesh(4, neumann_sides=('left',))
    topo = mesh.topology
    neumann = topo.kind == EdgeKind.NEUMANN
    assert neumann.sum() == 4
    assert np.allclose(mesh.vertices[topo.edges[neumann]][..., 0], -1.0)
    with pytest.raises(MeshError):
        build_initial_mesh(2, neumann_sides=('north',))


def test_edge_normal_points_out_of_first_element(mesh4):
    topo = mesh4.topology
    verts = mesh4.vertices
    mid = 0.5 * (verts[topo.edges[:, 0]] + verts[topo.edges[:, 1]])
    centroid = mesh4.element_coords(topo.elements[:, 0]).mean(axis=1)
    assert np.all(np.einsum('ed,ed->e', topo.normals(verts), mid - centroid) > 0)


def test_tri_edges_are_opposite_vertices(mesh4):
    topo = mesh4.topology
    for t in range(mesh4.n_elements):
        for k in range(3):
            edge = set(topo.edges[topo.tri_edges[t, k]].tolist())
            assert mesh4.triangles[t, k] not in edge
            assert edge <= set(mesh4.triangles[t].tolist())


def test_refine_nothing_returns_input(mesh4):
    assert refine_nvb(mesh4, []) is mesh4


def test_refine_unit_square_both_marked(unit_square_mesh):
    refined = refine_nvb(unit_square_mesh, [0, 1])
    assert refined.n_elements == 4
    assert refined.n_vertices == 5
    assert np.allclose(refined.vertices[4], [0.5, 0.5])
    assert is_conforming(refined)


def test_refine_rejects_bad_ids(mesh4):
    with pytest.raises(MeshError):
        refine_nvb(mesh4, [mesh4.n_elements])
    with pytest.raises(MeshError):
        refine_nvb(mesh4, [-1])


def test_single_interior_triangle_closure(mesh4):
    # element 10 sits in cell (1, 1); its hypotenuse is shared with element 11
    refined = refine_nvb(mesh4, [10])
    assert is_conforming(refined)
    assert refined.n_elements == 34
    assert refined.n_vertices == 26
    assert np.array_equal(refined.vertices[:mesh4.n_vertices], mesh4.vertices)


def test_repeated_refinement_keeps_conformity_and_angles(mesh4, rng):
    mesh = mesh4
    for _ in range(10):
        marked = rng.choice(mesh.n_elements, size=max(1, mesh.n_elements // 5), replace=False)
        refined = refine_nvb(mesh, marked)
        assert refined.n_elements > mesh.n_elements
        assert np.array_equal(refined.vertices[:mesh.n_vertices], mesh.vertices)
        assert is_conforming(refined)
        mesh = refined
    stats = mesh_stats(mesh)
    assert stats.min_angle_deg >= 0.99 * 45.0


def test_refine_uniform_quadruples(mesh4):
    fine = refine_uniform(mesh4)
    assert fine.n_elements == 4 * mesh4.n_elements
    assert mesh_stats(fine).max_h == pytest.approx(0.5 * mesh_stats(mesh4).max_h)


def test_mesh_stats():
    assert mesh_stats(build_initial_mesh(1)).min_angle_deg == pytest.approx(45.0)
    stats = mesh_stats(build_initial_mesh(4))
    assert stats.max_h == pytest.approx(np.sqrt(2) * 0.5)
    assert stats.min_h == pytest.approx(np.sqrt(2) * 0.5)
    assert stats.to_dict()['n_boundary_edges'] == 16


def test_mesh_dump(tmp_path, mesh4):
    from interface_geometry import circle_level_set, classify_with_repair

    mesh, cls = classify_with_repair(refine_nvb(mesh4, [3, 17]), circle_level_set(0.1, 0.05, 0.6))
    path = tmp_path / "mesh.txt"
    write_mesh_dump(mesh, path, cls.cuts)
    assert path.read_text().splitlines()[0] == f"vertices {mesh.n_vertices} triangles {mesh.n_elements}"

    back, cuts = read_mesh_dump(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.refine_edge, mesh.refine_edge)
    assert sorted(cuts) == sorted(cls.cuts)
    for k, (D, E) in cuts.items():
        assert np.array_equal(D, cls.cuts[k].D)
        assert np.array_equal(E, cls.cuts[k].E)


def test_rectangle_validation():
    with pytest.raises(MeshError):
        Rectangle(1.0, 0.0, 0.0, 1.0)
