"""
IFE Space
Immersed finite element nodal basis on interface elements, P1 elsewhere, and the DOF map
"""

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from interface_geometry import InterfaceClassification, InterfaceCut
from mesh import EdgeKind, Mesh

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
METHODS = ('ife', 'fem')


class IFEBasisError(RuntimeError):
    """Local IFE system too ill-conditioned to solve."""


@dataclass(frozen=True)
class IFELocalBasis:
    """
    Nodal functions of one interface element. Row z of plus_coeffs / minus_coeffs
    holds (c0, c1, c2) of the z-th function on K~+ / K~-: value = c0 + c1 x + c2 y.
    """
    element: int
    plus_coeffs: np.ndarray
    minus_coeffs: np.ndarray
    normal: np.ndarray
    D: np.ndarray
    E: np.ndarray
    vertex_sides: np.ndarray

    def piece(self, point) -> np.ndarray:
        side = 1 if np.dot(np.asarray(point, dtype=float) - self.D, self.normal) >= 0 else -1
        return self.plus_coeffs if side > 0 else self.minus_coeffs


@dataclass(frozen=True)
class DofMap:
    """vertex_to_dof[v] is the free DOF index of v, or -1 for Dirichlet vertices."""
    vertex_to_dof: np.ndarray
    free: np.ndarray
    dirichlet: np.ndarray

    @property
    def n_free(self) -> int:
        return len(self.free)


@dataclass(frozen=True)
class IFESpace:
    """
    Coefficient tables for every element and both pieces, shape (M, 3, 3).
    Non-interface elements carry their P1 functions in both tables and the
    element coefficient in both alphas; area_plus / area_minus are piece areas.
    """
    method: str
    coeff_plus: np.ndarray
    coeff_minus: np.ndarray
    alpha_plus: np.ndarray
    alpha_minus: np.ndarray
    area_plus: np.ndarray
    area_minus: np.ndarray
    bases: Dict[int, IFELocalBasis] = field(repr=False)

    def coeffs(self, side: np.ndarray) -> np.ndarray:
        """Per-element table selected by piece side (M,) of +1 / -1."""
        return np.where(np.asarray(side)[:, None, None] > 0, self.coeff_plus, self.coeff_minus)

    def piece_gradients(self, mesh: Mesh, values: np.ndarray):
        """Constant gradients (M, 2) of the expansion sum_z values[z] lambda_z on each piece."""
        local = values[mesh.triangles]
        return (np.einsum('mz,mzd->md', local, self.coeff_plus[:, :, 1:]),
                np.einsum('mz,mzd->md', local, self.coeff_minus[:, :, 1:]))


def p1_coefficients(tris: np.ndarray) -> np.ndarray:
    """Barycentric coordinate coefficients for triangles (M, 3, 2) -> (M, 3, 3)."""
    vand = np.concatenate([np.ones(tris.shape[:2] + (1,)), tris], axis=2)
    return np.linalg.inv(vand).transpose(0, 2, 1)


def build_local_basis(tri: np.ndarray, cut: InterfaceCut, alpha_minus: float, alpha_plus: float) -> IFELocalBasis:
    """
    Solve the 6x6 system per nodal function: 3 nodal values (each vertex on its
    own piece), continuity at D and E, and flux continuity across the chord.
    Unknowns are (plus c0 c1 c2, minus c0 c1 c2) in coordinates scaled by h_K.
    """
    tri = np.asarray(tri, dtype=float)
    centre = tri.mean(axis=0)
    h = np.max(np.linalg.norm(tri - np.roll(tri, 1, axis=0), axis=1))

    def row(point):
        xi = (np.asarray(point) - centre) / h
        return np.array([1.0, xi[0], xi[1]])

    system = np.zeros((6, 6))
    for j in range(3):
        cols = slice(0, 3) if cut.vertex_sides[j] > 0 else slice(3, 6)
        system[j, cols] = row(tri[j])
    for r, point in ((3, cut.D), (4, cut.E)):
        system[r, :3] = row(point)
        system[r, 3:] = -row(point)
    scale = max(alpha_minus, alpha_plus)
    n = cut.normal
    system[5] = np.array([0.0, alpha_plus * n[0], alpha_plus * n[1],
                          0.0, -alpha_minus * n[0], -alpha_minus * n[1]]) / scale

    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IFEBasisError(f"Element {cut.element}: local system condition {cond:.3e}")

    rhs = np.zeros((6, 3))
    rhs[:3] = np.eye(3)
    sol = np.linalg.solve(system, rhs)

    def to_global(block):
        c1 = block[1] / h
        c2 = block[2] / h
        c0 = block[0] - c1 * centre[0] - c2 * centre[1]
        return np.stack([c0, c1, c2], axis=1)

    return IFELocalBasis(element=cut.element, plus_coeffs=to_global(sol[:3]),
                         minus_coeffs=to_global(sol[3:]), normal=cut.normal,
                         D=cut.D, E=cut.E, vertex_sides=cut.vertex_sides)


def eval_basis(basis: IFELocalBasis, z: int, point) -> float:
    c = basis.piece(point)[z]
    return float(c[0] + c[1] * point[0] + c[2] * point[1])


def grad_basis(basis: IFELocalBasis, z: int, point) -> np.ndarray:
    return basis.piece(point)[z, 1:].copy()


def basis_sup_norm(basis: IFELocalBasis, cut: InterfaceCut) -> float:
    """max |lambda_z| over the element; pieces are linear so their vertices suffice."""
    best = 0.0
    for coeffs, pieces in ((basis.plus_coeffs, cut.plus_triangles), (basis.minus_coeffs, cut.minus_triangles)):
        pts = pieces.reshape(-1, 2)
        vals = coeffs[:, :1] + coeffs[:, 1:2] * pts[:, 0] + coeffs[:, 2:3] * pts[:, 1]
        best = max(best, float(np.abs(vals).max()))
    return best


def build_dof_map(mesh: Mesh) -> DofMap:
    topo = mesh.topology
    dirichlet = np.unique(topo.edges[topo.kind == EdgeKind.DIRICHLET].ravel())
    constrained = np.zeros(mesh.n_vertices, dtype=bool)
    constrained[dirichlet] = True
    free = np.flatnonzero(~constrained)
    vertex_to_dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
    vertex_to_dof[free] = np.arange(len(free))
    return DofMap(vertex_to_dof=vertex_to_dof, free=free, dirichlet=dirichlet)


def build_space(mesh: Mesh, classification: InterfaceClassification,
                alpha_minus: float, alpha_plus: float, method: str = 'ife') -> IFESpace:
    if method not in METHODS:
        raise ValueError(f"Unknown method '{method}', expected one of {METHODS}")

    tris = mesh.element_coords()
    p1 = p1_coefficients(tris)
    coeff_plus = p1.copy()
    coeff_minus = p1.copy()

    tags = classification.tags
    alpha_el = np.where(tags > 0, alpha_plus, alpha_minus)
    a_plus = np.where(tags == 0, alpha_plus, alpha_el).astype(float)
    a_minus = np.where(tags == 0, alpha_minus, alpha_el).astype(float)

    d1 = tris[:, 1] - tris[:, 0]
    d2 = tris[:, 2] - tris[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    area_plus = np.where(tags > 0, area, 0.0)
    area_minus = np.where(tags < 0, area, 0.0)

    bases = {}
    for k, cut in classification.cuts.items():
        for pieces, target in ((cut.plus_triangles, area_plus), (cut.minus_triangles, area_minus)):
            e1 = pieces[:, 1] - pieces[:, 0]
            e2 = pieces[:, 2] - pieces[:, 0]
            target[k] = np.sum(0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]))
        if method == 'ife':
            basis = build_local_basis(tris[k], cut, alpha_minus, alpha_plus)
            bases[k] = basis
            coeff_plus[k] = basis.plus_coeffs
            coeff_minus[k] = basis.minus_coeffs

    logger.debug("Built %s space: %d elements, %d IFE bases", method, mesh.n_elements, len(bases))
    return IFESpace(method=method, coeff_plus=coeff_plus, coeff_minus=coeff_minus,
                    alpha_plus=a_plus, alpha_minus=a_minus, area_plus=area_plus,
                    area_minus=area_minus, bases=bases)
