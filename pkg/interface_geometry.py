"""
Interface Geometry
Level-set interfaces on unfitted meshes: element classification, cut geometry,
edge splits, mismatch regions between the curve and its chord, and the
integration cells shared by load assembly and the energy norm.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from mesh import EdgeKind, Mesh, refine_nvb
from quadrature import subdivide, triangle_areas

logger = logging.getLogger(__name__)

SNAP_TOL = 1e-10
MISMATCH_PANELS = 32
_BISECTION_STEPS = 60
_SEARCH_POINTS = 32


class InterfaceAssumptionError(ValueError):
    """The interface violates the mesh assumptions on some elements."""

    def __init__(self, elements, reason: str):
        self.elements = np.unique(np.asarray(elements, dtype=np.int64))
        self.reason = reason
        shown = self.elements[:8].tolist()
        more = "" if self.elements.size <= 8 else f" (+{self.elements.size - 8} more)"
        super().__init__(f"Interface assumption violated ({reason}) on elements {shown}{more}")

    @property
    def repairable(self) -> bool:
        return self.reason == 'double-crossing'


class CutError(RuntimeError):
    """Degenerate sub-element produced by a cut."""


@dataclass(frozen=True)
class LevelSet:
    """
    phi(x, y) and its analytic gradient grad(x, y) -> (gx, gy), both vectorized.
    Omega^- = {phi < 0}; points with phi >= 0 belong to Omega^+.
    """
    phi: Callable
    grad: Callable
    name: str = "level-set"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.asarray(self.phi(points[..., 0], points[..., 1]), dtype=float)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        gx, gy = self.grad(points[..., 0], points[..., 1])
        return np.stack(np.broadcast_arrays(gx, gy), axis=-1).astype(float)

    def side(self, points: np.ndarray) -> np.ndarray:
        return sign_of(self(points))


def sign_of(values: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(values) >= 0.0, 1, -1).astype(np.int8)


def linear_level_set(a: float, b: float, c: float) -> LevelSet:
    """phi = a x + b y + c"""
    return LevelSet(phi=lambda x, y: a * x + b * y + c,
                    grad=lambda x, y: (np.full_like(np.asarray(x, dtype=float), a),
                                       np.full_like(np.asarray(y, dtype=float), b)),
                    name=f"line({a:g},{b:g},{c:g})")


def circle_level_set(cx: float, cy: float, r: float) -> LevelSet:
    """phi = (x - cx)^2 + (y - cy)^2 - r^2"""
    return LevelSet(phi=lambda x, y: (x - cx) ** 2 + (y - cy) ** 2 - r ** 2,
                    grad=lambda x, y: (2 * (x - cx), 2 * (y - cy)),
                    name=f"circle({cx:g},{cy:g},{r:g})")


@dataclass(frozen=True)
class InterfaceCut:
    """
    Cut of one interface element.

    lone is the local index of the vertex alone on its side; with
    a, b, c = K[lone], K[lone+1], K[lone+2], D lies on edge ab at t_D (from a)
    and E on edge ac at t_E. normal is the unit chord normal pointing from
    K~- into K~+.
    """
    element: int
    lone: int
    lone_side: int
    D: np.ndarray
    E: np.ndarray
    edge_D: int
    edge_E: int
    t_D: float
    t_E: float
    normal: np.ndarray
    vertex_sides: np.ndarray
    plus_triangles: np.ndarray = field(repr=False)
    minus_triangles: np.ndarray = field(repr=False)

    @property
    def chord_length(self) -> float:
        return float(np.linalg.norm(self.E - self.D))

    def side_of(self, points: np.ndarray) -> np.ndarray:
        """+1 on the K~+ side of the chord (inclusive), -1 otherwise."""
        return sign_of((np.asarray(points) - self.D) @ self.normal)


@dataclass(frozen=True)
class EdgeSplit:
    """Intersection of the interface with an interior edge."""
    edge: int
    t: float
    point: np.ndarray
    h_plus: float
    h_minus: float
    side_v0: int

    @property
    def h(self) -> float:
        return self.h_plus + self.h_minus


@dataclass(frozen=True)
class MismatchRegion:
    """
    Regions between the interface arc and the chord in one element.

    minus_region_area approximates K^- minus K~^- (lies in K~+, alpha~ = alpha+,
    u_T is the plus piece there); plus_region_area approximates K^+ minus K~^+
    (alpha~ = alpha-, minus piece).
    """
    element: int
    minus_region_area: float
    plus_region_area: float
    polyline: np.ndarray = field(repr=False)

    @property
    def total_area(self) -> float:
        return self.minus_region_area + self.plus_region_area

    def energy(self, alpha_minus: float, alpha_plus: float,
               grad_minus: np.ndarray, grad_plus: np.ndarray) -> float:
        """||alpha~^1/2 grad u_T||^2 over both regions."""
        return float(alpha_plus * self.minus_region_area * np.dot(grad_plus, grad_plus)
                     + alpha_minus * self.plus_region_area * np.dot(grad_minus, grad_minus))


@dataclass(frozen=True)
class InterfaceClassification:
    """
    tags[t] is +1 / -1 for non-interface elements and 0 for interface elements.
    """
    tags: np.ndarray
    vertex_sides: np.ndarray
    cuts: Dict[int, InterfaceCut]
    splits: Dict[int, EdgeSplit]
    level_set: LevelSet = field(repr=False)
    n_snapped: int = 0

    @property
    def interface_elements(self) -> np.ndarray:
        return np.flatnonzero(self.tags == 0)

    @property
    def n_interface(self) -> int:
        return int(np.sum(self.tags == 0))


@dataclass(frozen=True)
class IntegrationCells:
    """Triangles covering the mesh piecewise: each cell lies in one element and one piece."""
    cells: np.ndarray
    element: np.ndarray
    side: np.ndarray
    area: np.ndarray


def edge_intersection(p0, p1, ls: LevelSet) -> Optional[float]:
    """Parameter t of the interface crossing on p0 -> p1, or None if the endpoint signs agree.

    An endpoint exactly on the interface is a vertex crossing, not an edge cut: raises CutError.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    f0 = float(ls(p0))
    f1 = float(ls(p1))
    if sign_of(f0) == sign_of(f1):
        return None
    if f0 == 0.0 or f1 == 0.0:
        raise CutError(f"Edge endpoint lies on the interface (phi = {f0:g}, {f1:g})")
    return brentq(lambda t: float(ls((1.0 - t) * p0 + t * p1)), 0.0, 1.0,
                  xtol=1e-15, rtol=4.0 * np.finfo(float).eps, maxiter=200)


def _bisect_along(ls: LevelSet, origin: np.ndarray, direction: np.ndarray,
                  lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Vectorized bisection for origin + s * direction with a sign change on [lo, hi]."""
    s_lo = sign_of(ls(origin + lo[:, None] * direction))
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        same = sign_of(ls(origin + mid[:, None] * direction)) == s_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def _make_split_pieces(tri: np.ndarray, lone: int, D: np.ndarray, E: np.ndarray):
    """(vertex-side triangles, quadrangle-side triangles) for a cut with D on ab and E on ac."""
    a, b, c = tri[lone], tri[(lone + 1) % 3], tri[(lone + 2) % 3]
    vertex_side = np.array([[a, D, E]])
    if np.linalg.norm(D - c) <= np.linalg.norm(b - E):
        quad_side = np.array([[D, b, c], [D, c, E]])
    else:
        quad_side = np.array([[D, b, E], [b, c, E]])
    return vertex_side, quad_side


def cut_from_points(tri: np.ndarray, lone: int, D, E, lone_side: int = -1, element: int = 0,
                    edge_D: int = -1, edge_E: int = -1) -> InterfaceCut:
    """
    Build the cut of triangle `tri` (3, 2) whose vertex `lone` is alone on side
    `lone_side`, with D on the edge towards the next vertex and E on the edge
    towards the previous one.
    """
    tri = np.asarray(tri, dtype=float)
    D = np.asarray(D, dtype=float)
    E = np.asarray(E, dtype=float)
    a, b, c = tri[lone], tri[(lone + 1) % 3], tri[(lone + 2) % 3]
    t_D = float(np.linalg.norm(D - a) / np.linalg.norm(b - a))
    t_E = float(np.linalg.norm(E - a) / np.linalg.norm(c - a))

    chord = E - D
    length = np.linalg.norm(chord)
    if length == 0.0:
        raise CutError(f"Element {element}: D and E coincide")
    normal = np.array([chord[1], -chord[0]]) / length
    # flip so the normal points into K~+
    if (np.dot(normal, a - D) > 0) != (lone_side > 0):
        normal = -normal

    vertex_side, quad_side = _make_split_pieces(tri, lone, D, E)
    sides = np.full(3, -lone_side, dtype=np.int8)
    sides[lone] = lone_side
    plus, minus = (vertex_side, quad_side) if lone_side > 0 else (quad_side, vertex_side)
    cut = InterfaceCut(element=element, lone=lone, lone_side=int(lone_side), D=D, E=E,
                       edge_D=edge_D, edge_E=edge_E, t_D=t_D, t_E=t_E, normal=normal,
                       vertex_sides=sides, plus_triangles=plus, minus_triangles=minus)
    areas = triangle_areas(np.concatenate([plus, minus]))
    if not np.all(areas > 0):
        raise CutError(f"Element {element}: degenerate sub-triangle (areas {areas.tolist()})")
    return cut


def subelement_split(tri: np.ndarray, cut: InterfaceCut) -> Tuple[np.ndarray, np.ndarray]:
    """Sub-triangles (k, 3, 2) of K~+ and K~-: the vertex side is one triangle, the quadrangle two."""
    vertex_side, quad_side = _make_split_pieces(np.asarray(tri, dtype=float), cut.lone, cut.D, cut.E)
    if cut.lone_side > 0:
        return vertex_side, quad_side
    return quad_side, vertex_side


def classify_elements(mesh: Mesh, ls: LevelSet, snap_tol: float = SNAP_TOL,
                      allow_boundary: bool = False) -> InterfaceClassification:
    """
    Tag elements plus / minus / interface and cut the interface elements.
    With allow_boundary the interface may cross outer edges; those edges get no EdgeSplit.
    """
    topo = mesh.topology
    verts = mesh.vertices
    vsides = ls.side(verts)
    v0, v1 = topo.edges[:, 0], topo.edges[:, 1]
    p0, p1 = verts[v0], verts[v1]
    h_edge = topo.lengths(verts)

    mid = 0.5 * (p0 + p1)
    phi_mid = ls(mid)
    mid_sides = sign_of(phi_mid)
    mixed = vsides[v0] != vsides[v1]

    scale = 1e-12 * np.linalg.norm(ls.gradient(mid), axis=1) * h_edge
    on_curve = (np.abs(ls(p0)) <= scale) & (np.abs(ls(p1)) <= scale) & (np.abs(phi_mid) <= scale)
    if on_curve.any():
        owners = topo.elements[on_curve].ravel()
        raise InterfaceAssumptionError(owners[owners >= 0], 'edge-on-interface')

    double = ~mixed & (mid_sides != vsides[v0])
    bary_sides = ls.side(verts[mesh.triangles].mean(axis=1))
    tri_sides = vsides[mesh.triangles]
    uniform = (tri_sides == tri_sides[:, :1]).all(axis=1)
    bad_bary = uniform & (bary_sides != tri_sides[:, 0])
    if double.any() or bad_bary.any():
        owners = topo.elements[double].ravel()
        bad = np.concatenate([owners[owners >= 0], np.flatnonzero(bad_bary)])
        raise InterfaceAssumptionError(bad, 'double-crossing')

    t = np.full(topo.n_edges, np.nan)
    idx = np.flatnonzero(mixed)
    if idx.size:
        t[idx] = _bisect_along(ls, p0[idx], p1[idx] - p0[idx], np.zeros(idx.size), np.ones(idx.size))
    snapped = mixed & ((t < snap_tol) | (t > 1.0 - snap_tol))
    cut_edge = mixed & ~snapped

    crossing_boundary = cut_edge & (topo.kind != EdgeKind.INTERIOR)
    if crossing_boundary.any() and not allow_boundary:
        raise InterfaceAssumptionError(topo.elements[crossing_boundary, 0], 'boundary')

    n_cut = cut_edge[topo.tri_edges].sum(axis=1)
    majority = sign_of(tri_sides.sum(axis=1))
    tags = np.where(n_cut == 2, 0, majority).astype(np.int8)

    splits = {}
    for f in np.flatnonzero(cut_edge & ~crossing_boundary):
        point = p0[f] + t[f] * (p1[f] - p0[f])
        near, far = t[f] * h_edge[f], (1.0 - t[f]) * h_edge[f]
        s0 = int(vsides[v0[f]])
        splits[int(f)] = EdgeSplit(edge=int(f), t=float(t[f]), point=point,
                                   h_plus=float(near if s0 > 0 else far),
                                   h_minus=float(far if s0 > 0 else near), side_v0=s0)

    cuts = {}
    for k in np.flatnonzero(tags == 0):
        tri_ids = mesh.triangles[k]
        s = tri_sides[k]
        # the lone vertex differs from both others
        lone = next(i for i in range(3) if s[i] != s[(i + 1) % 3] and s[i] != s[(i + 2) % 3])
        edge_D = int(topo.tri_edges[k, (lone + 2) % 3])
        edge_E = int(topo.tri_edges[k, (lone + 1) % 3])
        D = p0[edge_D] + t[edge_D] * (p1[edge_D] - p0[edge_D])
        E = p0[edge_E] + t[edge_E] * (p1[edge_E] - p0[edge_E])
        cuts[int(k)] = cut_from_points(verts[tri_ids], lone, D, E, lone_side=int(s[lone]),
                                       element=int(k), edge_D=edge_D, edge_E=edge_E)

    n_snapped = int(snapped.sum())
    if n_snapped:
        logger.warning("Snapped %d near-vertex interface crossings", n_snapped)
    logger.debug("Classified %d elements: %d interface, %d interface edges",
                 mesh.n_elements, len(cuts), len(splits))
    return InterfaceClassification(tags=tags, vertex_sides=vsides, cuts=cuts, splits=splits,
                                   level_set=ls, n_snapped=n_snapped)


def classify_with_repair(mesh: Mesh, ls: LevelSet, max_rounds: int = 8, snap_tol: float = SNAP_TOL,
                         allow_boundary: bool = False) -> Tuple[Mesh, InterfaceClassification]:
    """Classify, bisecting elements that violate the interface assumptions until they hold."""
    for round_no in range(max_rounds + 1):
        try:
            return mesh, classify_elements(mesh, ls, snap_tol, allow_boundary)
        except InterfaceAssumptionError as exc:
            if not exc.repairable or round_no == max_rounds:
                raise
            logger.warning("Repair round %d: bisecting %d elements (%s)",
                           round_no + 1, exc.elements.size, exc.reason)
            mesh = refine_nvb(mesh, exc.elements)
    raise AssertionError("unreachable")


def chord_mismatch(D: np.ndarray, E: np.ndarray, normal: np.ndarray, ls: LevelSet,
                   reach: np.ndarray, panels: int = MISMATCH_PANELS):
    """
    Offsets of the interface from chords D -> E measured along `normal`.

    Inputs are batched: D, E, normal (C, 2), reach (C,) bounds the perpendicular
    search. Returns (positive_area, negative_area, offsets (C, panels + 1)).
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    E = np.atleast_2d(np.asarray(E, dtype=float))
    normal = np.atleast_2d(np.asarray(normal, dtype=float))
    reach = np.atleast_1d(np.asarray(reach, dtype=float))
    n_chords = len(D)

    frac = np.arange(panels + 1) / panels
    samples = D[:, None, :] + frac[None, :, None] * (E - D)[:, None, :]
    offsets = np.zeros((n_chords, panels + 1))

    inner = samples[:, 1:-1].reshape(-1, 2)
    nrm = np.repeat(normal, panels - 1, axis=0)
    rch = np.repeat(reach, panels - 1)
    s = _perpendicular_roots(ls, inner, nrm, rch, _SEARCH_POINTS)

    failed = np.isnan(s)
    if failed.any():
        s[failed] = _perpendicular_roots(ls, inner[failed], nrm[failed], 2.0 * rch[failed],
                                         4 * _SEARCH_POINTS)
        still = np.isnan(s)
        if still.any():
            logger.warning("Interface not found along %d chord perpendiculars; using zero offset",
                           int(still.sum()))
            s[still] = 0.0
    offsets[:, 1:-1] = s.reshape(n_chords, panels - 1)

    lengths = np.linalg.norm(E - D, axis=1)
    arc = frac[None, :] * lengths[:, None]
    positive = simpson(np.maximum(offsets, 0.0), x=arc, axis=1)
    negative = simpson(np.maximum(-offsets, 0.0), x=arc, axis=1)
    return positive, negative, offsets


def _perpendicular_roots(ls: LevelSet, points: np.ndarray, normal: np.ndarray,
                         reach: np.ndarray, half: int) -> np.ndarray:
    """Root of phi(p + s n) nearest to s = 0 within [-reach, reach]; NaN where none is bracketed."""
    out = np.full(len(points), np.nan)
    if len(points) == 0:
        return out
    phi0 = ls(points)
    grad_scale = np.linalg.norm(ls.gradient(points), axis=1)
    exact = np.abs(phi0) <= 1e-12 * grad_scale * reach
    out[exact] = 0.0

    todo = np.flatnonzero(~exact)
    if todo.size == 0:
        return out
    grid = np.linspace(-1.0, 1.0, 2 * half + 1)
    s_grid = grid[None, :] * reach[todo, None]
    pts = points[todo, None, :] + s_grid[..., None] * normal[todo, None, :]
    signs = sign_of(ls(pts))
    change = signs[:, 1:] != signs[:, :-1]
    centre = 0.5 * (s_grid[:, 1:] + s_grid[:, :-1])
    distance = np.where(change, np.abs(centre), np.inf)
    best = np.argmin(distance, axis=1)
    found = np.isfinite(distance[np.arange(todo.size), best])

    rows = todo[found]
    lo = s_grid[found, best[found]]
    hi = s_grid[found, best[found] + 1]
    out[rows] = _bisect_along(ls, points[rows], normal[rows], lo, hi)
    return out


def mismatch_regions(tri: np.ndarray, cut: InterfaceCut, ls: LevelSet,
                     panels: int = MISMATCH_PANELS) -> MismatchRegion:
    tri = np.asarray(tri, dtype=float)
    h = np.max(np.linalg.norm(tri - np.roll(tri, 1, axis=0), axis=1))
    pos, neg, offsets = chord_mismatch(cut.D, cut.E, cut.normal, ls, np.array([h]), panels)
    return _region(cut, pos[0], neg[0], offsets[0], panels)


def all_mismatch_regions(mesh: Mesh, classification: InterfaceClassification,
                         panels: int = MISMATCH_PANELS) -> Dict[int, MismatchRegion]:
    """Mismatch regions of every interface element, computed in one batch."""
    elems = sorted(classification.cuts)
    if not elems:
        return {}
    cuts = [classification.cuts[k] for k in elems]
    tris = mesh.element_coords(np.array(elems))
    h = np.max(np.linalg.norm(tris - np.roll(tris, 1, axis=1), axis=2), axis=1)
    pos, neg, offsets = chord_mismatch(np.array([c.D for c in cuts]), np.array([c.E for c in cuts]),
                                       np.array([c.normal for c in cuts]), classification.level_set,
                                       h, panels)
    return {k: _region(c, pos[i], neg[i], offsets[i], panels) for i, (k, c) in enumerate(zip(elems, cuts))}


def _region(cut: InterfaceCut, pos: float, neg: float, offsets: np.ndarray, panels: int) -> MismatchRegion:
    frac = np.arange(panels + 1) / panels
    chord_pts = cut.D[None, :] + frac[:, None] * (cut.E - cut.D)[None, :]
    polyline = chord_pts + offsets[:, None] * cut.normal[None, :]
    return MismatchRegion(element=cut.element, minus_region_area=float(pos),
                          plus_region_area=float(neg), polyline=polyline)


def integration_cells(mesh: Mesh, classification: InterfaceClassification, depth: int = 0) -> IntegrationCells:
    """
    Non-interface elements contribute themselves; interface elements contribute
    their K~+ / K~- sub-triangles, each uniformly refined `depth` times.
    """
    plain = np.flatnonzero(classification.tags != 0)
    cells = [mesh.element_coords(plain)]
    elements = [plain]
    sides = [classification.tags[plain].astype(np.int8)]

    for k in sorted(classification.cuts):
        cut = classification.cuts[k]
        for side, pieces in ((1, cut.plus_triangles), (-1, cut.minus_triangles)):
            sub, _ = subdivide(pieces, depth)
            cells.append(sub)
            elements.append(np.full(len(sub), k, dtype=np.int64))
            sides.append(np.full(len(sub), side, dtype=np.int8))

    cells = np.concatenate(cells)
    return IntegrationCells(cells=cells, element=np.concatenate(elements),
                            side=np.concatenate(sides), area=triangle_areas(cells))


def mismatch_band_cells(classification: InterfaceClassification,
                        regions: Dict[int, MismatchRegion]) -> IntegrationCells:
    """
    Triangles filling the regions between each chord and its interface polyline.

    side is the chord side a cell lies on (the piece u_T uses there); the true
    side of the cell is the opposite one. Panels whose offset changes sign are
    split at the crossing.
    """
    cells, elements, sides = [np.zeros((0, 3, 2))], [np.zeros(0, dtype=np.int64)], [np.zeros(0, dtype=np.int8)]
    for k in sorted(regions):
        cut = classification.cuts[k]
        poly = regions[k].polyline
        frac = np.arange(len(poly)) / (len(poly) - 1)
        chord = cut.D[None, :] + frac[:, None] * (cut.E - cut.D)[None, :]
        off = (poly - chord) @ cut.normal
        c0, c1, p0, p1 = chord[:-1], chord[1:], poly[:-1], poly[1:]
        o0, o1 = off[:-1], off[1:]

        same = (o0 * o1 >= 0.0) & ((o0 != 0.0) | (o1 != 0.0))
        s = sign_of(o0 + o1)[same]
        tris = [np.stack([c0[same], c1[same], p1[same]], axis=1),
                np.stack([c0[same], p1[same], p0[same]], axis=1)]
        tri_sides = [s, s]

        cross = o0 * o1 < 0.0
        w = (o0[cross] / (o0[cross] - o1[cross]))[:, None]
        z = c0[cross] + w * (c1[cross] - c0[cross])
        tris += [np.stack([c0[cross], z, p0[cross]], axis=1), np.stack([z, c1[cross], p1[cross]], axis=1)]
        tri_sides += [sign_of(o0[cross]), sign_of(o1[cross])]

        block = np.concatenate(tris)
        cells.append(block)
        elements.append(np.full(len(block), k, dtype=np.int64))
        sides.append(np.concatenate(tri_sides).astype(np.int8))

    cells = np.concatenate(cells)
    return IntegrationCells(cells=cells, element=np.concatenate(elements),
                            side=np.concatenate(sides), area=np.abs(triangle_areas(cells)))


if __name__ == "__main__":
    from mesh import build_initial_mesh

    m = build_initial_mesh(8)
    ls = circle_level_set(0.0, 0.0, 0.55)
    cls = classify_elements(m, ls)
    regions = all_mismatch_regions(m, cls)
    print(f"{cls.n_interface} interface elements, {len(cls.splits)} interface edges")
    print(f"total mismatch area: {sum(r.total_area for r in regions.values()):.3e}")
