"""
Triangular Meshes
Conforming meshes of a rectangle with newest vertex bisection and edge topology
"""

import logging
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

SIDES = ('left', 'right', 'bottom', 'top')


class MeshError(ValueError):
    """Invalid mesh input or a mesh that fails the conformity audit."""


class EdgeKind(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned domain [x0, x1] x [y0, y1]"""
    x0: float = -1.0
    x1: float = 1.0
    y0: float = -1.0
    y1: float = 1.0

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise MeshError(f"Degenerate rectangle {self}")

    def on_side(self, points: np.ndarray, side: str, tol: float = 1e-12) -> np.ndarray:
        scale = tol * max(self.x1 - self.x0, self.y1 - self.y0)
        coord = {'left': (0, self.x0), 'right': (0, self.x1),
                 'bottom': (1, self.y0), 'top': (1, self.y1)}[side]
        return np.abs(points[..., coord[0]] - coord[1]) <= scale

    def on_boundary(self, points: np.ndarray) -> np.ndarray:
        return np.any([self.on_side(points, s) for s in SIDES], axis=0)


@dataclass(frozen=True)
class EdgeTopology:
    """
    Edge table of a mesh.

    edges[f] = (v0, v1) ordered counterclockwise in K_{F,1} = elements[f, 0],
    so (dy, -dx) / h_F is the outward normal of K_{F,1}. elements[f, 1] is
    K_{F,2} or -1 on the boundary. tri_edges[t, k] is the edge opposite local
    vertex k.
    """
    edges: np.ndarray
    elements: np.ndarray
    kind: np.ndarray
    tri_edges: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def lengths(self, vertices: np.ndarray) -> np.ndarray:
        d = vertices[self.edges[:, 1]] - vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def normals(self, vertices: np.ndarray) -> np.ndarray:
        d = vertices[self.edges[:, 1]] - vertices[self.edges[:, 0]]
        h = np.hypot(d[:, 0], d[:, 1])
        return np.stack([d[:, 1], -d[:, 0]], axis=1) / h[:, None]

    def tangents(self, vertices: np.ndarray) -> np.ndarray:
        d = vertices[self.edges[:, 1]] - vertices[self.edges[:, 0]]
        return d / np.hypot(d[:, 0], d[:, 1])[:, None]


@dataclass(frozen=True)
class Mesh:
    """
    Conforming triangulation.

    triangles are counterclockwise; refine_edge[t] = k names the local edge
    opposite vertex k, so triangles[t, k] is the newest vertex.
    """
    vertices: np.ndarray
    triangles: np.ndarray
    refine_edge: np.ndarray
    domain: Rectangle = field(default_factory=Rectangle)
    neumann_sides: Tuple[str, ...] = ()
    generation: int = 0

    def __post_init__(self):
        for side in self.neumann_sides:
            if side not in SIDES:
                raise MeshError(f"Unknown boundary side '{side}'")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    def element_coords(self, elements: Optional[np.ndarray] = None) -> np.ndarray:
        tris = self.triangles if elements is None else self.triangles[elements]
        return self.vertices[tris]

    @cached_property
    def topology(self) -> EdgeTopology:
        return _build_topology(self)


@dataclass(frozen=True)
class ElementGeometry:
    """Per-element geometry: h_K (longest edge), area, min angle in degrees, edge lengths"""
    h: np.ndarray
    area: np.ndarray
    min_angle: np.ndarray
    edge_lengths: np.ndarray


@dataclass(frozen=True)
class MeshStats:
    n_vertices: int
    n_elements: int
    n_edges: int
    n_boundary_edges: int
    min_angle_deg: float
    max_h: float
    min_h: float

    def to_dict(self):
        return dict(self.__dict__)


def _build_topology(mesh: Mesh) -> EdgeTopology:
    tris = mesh.triangles
    m = len(tris)
    # flat index t*3 + k so the first occurrence of an edge belongs to the lowest element id
    flat_tri = np.repeat(np.arange(m), 3)
    flat_loc = np.tile(np.arange(3), m)
    directed = np.stack([tris[flat_tri, (flat_loc + 1) % 3],
                         tris[flat_tri, (flat_loc + 2) % 3]], axis=1)
    keys = np.sort(directed, axis=1)
    _, first, inverse, counts = np.unique(keys, axis=0, return_index=True,
                                          return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        bad = np.flatnonzero(counts > 2)
        raise MeshError(f"Nonconforming mesh: edges {bad[:5].tolist()} shared by more than two triangles")

    edges = directed[first]
    elements = np.full((len(first), 2), -1, dtype=np.int64)
    elements[:, 0] = flat_tri[first]
    second = np.ones(len(keys), dtype=bool)
    second[first] = False
    elements[inverse[second], 1] = flat_tri[second]

    kind = np.full(len(first), EdgeKind.INTERIOR, dtype=np.int8)
    boundary = elements[:, 1] < 0
    kind[boundary] = EdgeKind.DIRICHLET
    for side in mesh.neumann_sides:
        ends = mesh.vertices[edges[boundary]]
        on = mesh.domain.on_side(ends[:, 0], side) & mesh.domain.on_side(ends[:, 1], side)
        kind[np.flatnonzero(boundary)[on]] = EdgeKind.NEUMANN

    return EdgeTopology(edges=edges, elements=elements, kind=kind,
                        tri_edges=inverse.reshape(m, 3))


def build_initial_mesh(n: int, domain: Rectangle = Rectangle(),
                       neumann_sides: Iterable[str] = ()) -> Mesh:
    """
    n x n congruent rectangles, each cut along its positive-slope diagonal.
    Every triangle is stored with its right-angle vertex first so the
    refinement edge (index 0) is the hypotenuse.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise MeshError(f"Grid resolution must be a positive integer, got {n!r}")

    xs = np.linspace(domain.x0, domain.x1, n + 1)
    ys = np.linspace(domain.y0, domain.y1, n + 1)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.stack([gx.ravel(), gy.ravel()], axis=1)

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    p00 = j * (n + 1) + i
    p10 = p00 + 1
    p01 = p00 + n + 1
    p11 = p01 + 1
    lower = np.stack([p10, p11, p00], axis=1)
    upper = np.stack([p01, p00, p11], axis=1)
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    return Mesh(vertices=vertices, triangles=triangles,
                refine_edge=np.zeros(len(triangles), dtype=np.int64),
                domain=domain, neumann_sides=tuple(neumann_sides))


def _bisect(tri: tuple, r: int, midpoints: dict, out: list):
    a, b, c = tri[r], tri[(r + 1) % 3], tri[(r + 2) % 3]
    m = midpoints.get((b, c) if b < c else (c, b))
    if m is None:
        out.append((tri, r))
        return
    _bisect((m, a, b), 0, midpoints, out)
    _bisect((m, c, a), 0, midpoints, out)


def refine_nvb(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """
    Newest vertex bisection of the marked triangles with conforming closure.

    Refinement edges of marked triangles are flagged, then the flag is pushed
    onto the refinement edge of every triangle owning a flagged edge until no
    triangle has a flagged edge without a flagged refinement edge. Each flagged
    edge receives one midpoint; affected triangles are bisected recursively.
    """
    marked = np.unique(np.fromiter((int(t) for t in marked), dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked[0] < 0 or marked[-1] >= mesh.n_elements:
        raise MeshError(f"Marked ids out of range [0, {mesh.n_elements})")

    topo = mesh.topology
    ref_edge_id = topo.tri_edges[np.arange(mesh.n_elements), mesh.refine_edge]
    flagged = np.zeros(topo.n_edges, dtype=bool)
    flagged[ref_edge_id[marked]] = True
    while True:
        need = flagged[topo.tri_edges].any(axis=1) & ~flagged[ref_edge_id]
        if not need.any():
            break
        flagged[ref_edge_id[need]] = True

    cut = np.flatnonzero(flagged)
    ends = topo.edges[cut]
    new_ids = mesh.n_vertices + np.arange(len(cut))
    vertices = np.vstack([mesh.vertices,
                          0.5 * (mesh.vertices[ends[:, 0]] + mesh.vertices[ends[:, 1]])])
    midpoints = {(min(a, b), max(a, b)): int(m) for (a, b), m in zip(ends.tolist(), new_ids)}

    affected = flagged[topo.tri_edges].any(axis=1)
    children = []
    for t in np.flatnonzero(affected):
        _bisect(tuple(int(v) for v in mesh.triangles[t]), int(mesh.refine_edge[t]), midpoints, children)

    new_tris = np.array([c[0] for c in children], dtype=np.int64).reshape(-1, 3)
    new_ref = np.array([c[1] for c in children], dtype=np.int64)
    triangles = np.vstack([mesh.triangles[~affected], new_tris])
    refine_edge = np.concatenate([mesh.refine_edge[~affected], new_ref])

    logger.debug("NVB: %d marked, %d edges bisected, %d -> %d elements",
                 marked.size, len(cut), mesh.n_elements, len(triangles))
    return replace(mesh, vertices=vertices, triangles=triangles,
                   refine_edge=refine_edge, generation=mesh.generation + 1)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Two full bisection rounds: every triangle becomes four, h halves."""
    for _ in range(2):
        mesh = refine_nvb(mesh, range(mesh.n_elements))
    return mesh


def element_geometry(mesh: Mesh) -> ElementGeometry:
    p = mesh.element_coords()
    # edge k is opposite vertex k
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    lengths = np.linalg.norm(e, axis=2)
    area = 0.5 * (e[:, 2, 0] * (-e[:, 1, 1]) - e[:, 2, 1] * (-e[:, 1, 0]))
    # angle at vertex k between the two edges meeting there
    angles = []
    for k in range(3):
        u = -e[:, (k + 2) % 3]
        v = e[:, (k + 1) % 3]
        cos = np.einsum('ij,ij->i', u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    return ElementGeometry(h=lengths.max(axis=1), area=area,
                           min_angle=np.min(angles, axis=0), edge_lengths=lengths)


def mesh_stats(mesh: Mesh) -> MeshStats:
    geo = element_geometry(mesh)
    topo = mesh.topology
    return MeshStats(
        n_vertices=mesh.n_vertices,
        n_elements=mesh.n_elements,
        n_edges=topo.n_edges,
        n_boundary_edges=int(np.sum(topo.elements[:, 1] < 0)),
        min_angle_deg=float(geo.min_angle.min()),
        max_h=float(geo.h.max()),
        min_h=float(geo.h.min()),
    )


def is_conforming(mesh: Mesh) -> bool:
    """Edge-incidence audit: no edge with >2 owners, every 1-owner edge on the boundary, positive areas."""
    try:
        topo = mesh.topology
    except MeshError:
        return False
    if np.any(element_geometry(mesh).area <= 0):
        return False
    if np.any(mesh.refine_edge < 0) or np.any(mesh.refine_edge > 2):
        return False
    lonely = topo.edges[topo.elements[:, 1] < 0]
    pts = mesh.vertices[lonely]
    on_same_side = np.zeros(len(lonely), dtype=bool)
    for side in SIDES:
        on_same_side |= mesh.domain.on_side(pts[:, 0], side) & mesh.domain.on_side(pts[:, 1], side)
    return bool(on_same_side.all())


def write_mesh_dump(mesh: Mesh, path, cuts: Optional[dict] = None):
    """
    Plain-text dump: `vertices N triangles M`, N lines `x y`, M lines
    `v0 v1 v2 refedge`, then optionally `cuts K` and K lines `elem Dx Dy Ex Ey`.
    """
    lines = [f"vertices {mesh.n_vertices} triangles {mesh.n_elements}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c} {r}" for (a, b, c), r in zip(mesh.triangles.tolist(), mesh.refine_edge.tolist())]
    if cuts:
        lines.append(f"cuts {len(cuts)}")
        for elem in sorted(cuts):
            cut = cuts[elem]
            lines.append(f"{elem} {cut.D[0]:.17g} {cut.D[1]:.17g} {cut.E[0]:.17g} {cut.E[1]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding='utf-8')


def read_mesh_dump(path, domain: Rectangle = Rectangle()) -> Tuple[Mesh, dict]:
    """Inverse of write_mesh_dump. Cut records come back as {elem: (D, E)}."""
    rows = Path(path).read_text(encoding='utf-8').split("\n")
    head = rows[0].split()
    if len(head) != 4 or head[0] != 'vertices' or head[2] != 'triangles':
        raise MeshError(f"{path}: bad header '{rows[0]}'")
    n, m = int(head[1]), int(head[3])
    vertices = np.array([[float(v) for v in r.split()] for r in rows[1:1 + n]]).reshape(n, 2)
    tri_rows = np.array([[int(v) for v in r.split()] for r in rows[1 + n:1 + n + m]], dtype=np.int64).reshape(m, 4)
    cuts = {}
    rest = [r for r in rows[1 + n + m:] if r.strip()]
    if rest and rest[0].startswith('cuts'):
        for r in rest[1:]:
            vals = r.split()
            cuts[int(vals[0])] = (np.array([float(vals[1]), float(vals[2])]),
                                  np.array([float(vals[3]), float(vals[4])]))
    mesh = Mesh(vertices=vertices, triangles=tri_rows[:, :3], refine_edge=tri_rows[:, 3], domain=domain)
    return mesh, cuts


if __name__ == "__main__":
    m = build_initial_mesh(4)
    for level in range(4):
        stats = mesh_stats(m)
        print(f"[level {level}] {stats.n_elements} elements, min angle {stats.min_angle_deg:.1f} deg, "
              f"conforming={is_conforming(m)}")
        m = refine_nvb(m, [0, m.n_elements // 2])
