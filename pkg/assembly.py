"""
Assembly
Partially penalized IFEM linear system: volume, interface-edge, load and
boundary terms, and the sparse solve.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, bicgstab, splu

from ife_space import DofMap, IFESpace
from interface_geometry import InterfaceClassification, integration_cells
from mesh import EdgeKind, Mesh
from quadrature import SEGMENT_POINTS, SEGMENT_WEIGHTS, TRIANGLE_WEIGHTS, segment_points, triangle_points

logger = logging.getLogger(__name__)


class AssemblyError(ValueError):
    """Inputs to assembly are inconsistent (unclassified mesh, missing basis)."""


class SolverError(RuntimeError):
    """Linear solve did not reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass
class SolverConfig:
    """
    epsilon: symmetrization weight in {-1, 0, 1}
    gamma: penalty weight, > 0
    tol: relative residual tolerance of the linear solve
    """
    epsilon: int = 1
    gamma: float = 10.0
    tol: float = 1e-10
    maxiter: int = 5000

    def __post_init__(self):
        if self.epsilon not in (-1, 0, 1):
            raise ValueError(f"epsilon must be -1, 0 or 1, got {self.epsilon}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.tol < 1:
            raise ValueError(f"tol must be in (0, 1), got {self.tol}")
        if self.maxiter < 1:
            raise ValueError(f"maxiter must be positive, got {self.maxiter}")

    def to_dict(self):
        return asdict(self)


@dataclass
class SparseSystem:
    """
    matrix / rhs act on free DOFs; lifting holds the Dirichlet values on all
    vertices (zero at free ones). full_matrix and load are the all-vertex
    operator and load before boundary reduction; penalty is the gamma block
    restricted to free DOFs.
    """
    matrix: sp.csr_matrix
    rhs: np.ndarray
    lifting: np.ndarray
    free: np.ndarray
    dirichlet: np.ndarray
    penalty: sp.csr_matrix
    full_matrix: sp.csr_matrix = field(repr=False)
    load: np.ndarray = field(repr=False)
    mesh: Mesh = field(repr=False)
    space: IFESpace = field(repr=False)

    @property
    def n_free(self) -> int:
        return len(self.free)


@dataclass
class DiscreteSolution:
    """Vertex coefficients (free and Dirichlet) and per-element piece gradients (M, 2)."""
    values: np.ndarray
    grad_plus: np.ndarray
    grad_minus: np.ndarray
    residual: float = 0.0


def _volume_terms(mesh: Mesh, space: IFESpace):
    g_plus = space.coeff_plus[:, :, 1:]
    g_minus = space.coeff_minus[:, :, 1:]
    local = (np.einsum('m,mid,mjd->mij', space.alpha_plus * space.area_plus, g_plus, g_plus)
             + np.einsum('m,mid,mjd->mij', space.alpha_minus * space.area_minus, g_minus, g_minus))
    rows = np.repeat(mesh.triangles, 3, axis=1)
    cols = np.tile(mesh.triangles, (1, 3))
    return rows.ravel(), cols.ravel(), local.ravel()


def _load_vector(mesh: Mesh, classification: InterfaceClassification, space: IFESpace, problem) -> np.ndarray:
    cells = integration_cells(mesh, classification, depth=0)
    pts = triangle_points(cells.cells)
    coeffs = np.where(cells.side[:, None, None] > 0,
                      space.coeff_plus[cells.element], space.coeff_minus[cells.element])
    # basis values (C, 6, 3)
    vals = coeffs[:, None, :, 0] + np.einsum('cqd,czd->cqz', pts, coeffs[:, :, 1:])
    fw = problem.f(pts) * TRIANGLE_WEIGHTS[None, :]
    local = cells.area[:, None] * np.einsum('cq,cqz->cz', fw, vals)
    idx = mesh.triangles[cells.element]
    return np.bincount(idx.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)


def _neumann_load(mesh: Mesh, classification: InterfaceClassification, space: IFESpace, problem) -> np.ndarray:
    topo = mesh.topology
    edges = np.flatnonzero(topo.kind == EdgeKind.NEUMANN)
    out = np.zeros(mesh.n_vertices)
    if edges.size == 0:
        return out
    v = topo.edges[edges]
    p, q = mesh.vertices[v[:, 0]], mesh.vertices[v[:, 1]]
    pts = segment_points(p, q)
    normals = topo.normals(mesh.vertices)[edges]
    g = problem.neumann_data(pts, normals[:, None, :])
    elem = topo.elements[edges, 0]
    side = classification.vertex_sides[v[:, 0]]
    coeffs = np.where(side[:, None, None] > 0, space.coeff_plus[elem], space.coeff_minus[elem])
    vals = coeffs[:, None, :, 0] + np.einsum('sqd,szd->sqz', pts, coeffs[:, :, 1:])
    length = np.linalg.norm(q - p, axis=1)
    local = length[:, None] * np.einsum('q,sq,sqz->sz', SEGMENT_WEIGHTS, g, vals)
    np.add.at(out, mesh.triangles[elem], -local)
    return out


@dataclass(frozen=True)
class InterfaceEdgeSegments:
    """
    The sub-segments F+ and F- of every interface edge with the traces of the
    adjacent elements. jump[s, i, q] is [lambda_i] at Gauss point q (first three
    DOFs from K_{F,1}, last three from K_{F,2} with a minus sign) and flux[s, i]
    is {alpha~ grad lambda_i . n_F}.
    """
    edge: np.ndarray
    side: np.ndarray
    length: np.ndarray
    h: np.ndarray
    alpha: np.ndarray
    dofs: np.ndarray
    jump: np.ndarray
    flux: np.ndarray


def interface_edge_segments(mesh: Mesh, classification: InterfaceClassification,
                            space: IFESpace) -> InterfaceEdgeSegments:
    topo = mesh.topology
    edges = np.array(sorted(classification.splits), dtype=np.int64)
    if edges.size == 0:
        empty = np.zeros(0)
        return InterfaceEdgeSegments(edge=edges, side=np.zeros(0, dtype=np.int8), length=empty, h=empty,
                                     alpha=empty, dofs=np.zeros((0, 6), dtype=np.int64),
                                     jump=np.zeros((0, 6, len(SEGMENT_POINTS))), flux=np.zeros((0, 6)))
    splits = [classification.splits[f] for f in edges]
    v = topo.edges[edges]
    p0, p1 = mesh.vertices[v[:, 0]], mesh.vertices[v[:, 1]]
    point = np.array([s.point for s in splits])
    side_v0 = np.array([s.side_v0 for s in splits], dtype=np.int8)

    # segment 0 = [v0, point], segment 1 = [point, v1]
    start = np.concatenate([p0, point])
    end = np.concatenate([point, p1])
    seg_edge = np.concatenate([edges, edges])
    seg_side = np.concatenate([side_v0, -side_v0])
    length = np.linalg.norm(end - start, axis=1)
    h = topo.lengths(mesh.vertices)[seg_edge]
    normal = topo.normals(mesh.vertices)[seg_edge]

    k1 = topo.elements[seg_edge, 0]
    k2 = topo.elements[seg_edge, 1]
    pick = seg_side[:, None, None] > 0
    c1 = np.where(pick, space.coeff_plus[k1], space.coeff_minus[k1])
    c2 = np.where(pick, space.coeff_plus[k2], space.coeff_minus[k2])
    a1 = np.where(seg_side > 0, space.alpha_plus[k1], space.alpha_minus[k1])
    a2 = np.where(seg_side > 0, space.alpha_plus[k2], space.alpha_minus[k2])

    pts = segment_points(start, end)
    v1 = c1[:, None, :, 0] + np.einsum('sqd,szd->sqz', pts, c1[:, :, 1:])
    v2 = c2[:, None, :, 0] + np.einsum('sqd,szd->sqz', pts, c2[:, :, 1:])
    jump = np.concatenate([v1, -v2], axis=2).transpose(0, 2, 1)
    flux = 0.5 * np.concatenate([a1[:, None] * np.einsum('szd,sd->sz', c1[:, :, 1:], normal),
                                 a2[:, None] * np.einsum('szd,sd->sz', c2[:, :, 1:], normal)], axis=1)
    dofs = np.concatenate([mesh.triangles[k1], mesh.triangles[k2]], axis=1)
    return InterfaceEdgeSegments(edge=seg_edge, side=seg_side, length=length, h=h,
                                 alpha=np.maximum(a1, a2), dofs=dofs, jump=jump, flux=flux)


def _interface_terms(segments: InterfaceEdgeSegments, epsilon: int, gamma: float):
    """Local 6x6 matrices of the consistency + symmetrization and of the penalty terms."""
    wl = segments.length[:, None] * SEGMENT_WEIGHTS[None, :]
    jint = np.einsum('siq,sq->si', segments.jump, wl)
    consistency = (-np.einsum('si,sj->sij', jint, segments.flux)
                   + epsilon * np.einsum('si,sj->sij', segments.flux, jint))
    penalty = (gamma * segments.alpha / segments.h)[:, None, None] * np.einsum(
        'siq,sjq,sq->sij', segments.jump, segments.jump, wl)
    rows = np.repeat(segments.dofs, 6, axis=1).ravel()
    cols = np.tile(segments.dofs, (1, 6)).ravel()
    return rows, cols, consistency.ravel(), penalty.ravel()


def assemble(mesh: Mesh, classification: InterfaceClassification, space: IFESpace,
             dofmap: DofMap, problem, config: SolverConfig) -> SparseSystem:
    """
    Volume term per piece, interface-edge consistency / symmetrization /
    penalty with 2-point Gauss per sub-segment, degree-4 load per
    (sub-)triangle, Neumann load, and Dirichlet lifting by nodal interpolation.
    """
    if classification is None or len(classification.tags) != mesh.n_elements:
        raise AssemblyError("Mesh is not classified against the interface")
    if space is None or space.coeff_plus.shape[0] != mesh.n_elements:
        raise AssemblyError("Space tables do not match the mesh")
    if space.method == 'ife':
        missing = set(classification.cuts) - set(space.bases)
        if missing:
            raise AssemblyError(f"Missing IFE basis on elements {sorted(missing)[:8]}")

    n = mesh.n_vertices
    r_v, c_v, d_v = _volume_terms(mesh, space)
    segments = interface_edge_segments(mesh, classification, space)
    r_i, c_i, d_c, d_p = _interface_terms(segments, config.epsilon, config.gamma)

    full = sp.coo_matrix((np.concatenate([d_v, d_c, d_p]),
                          (np.concatenate([r_v, r_i, r_i]), np.concatenate([c_v, c_i, c_i]))),
                         shape=(n, n)).tocsr()
    penalty_full = sp.coo_matrix((d_p, (r_i, c_i)), shape=(n, n)).tocsr()

    load = _load_vector(mesh, classification, space, problem) + _neumann_load(mesh, classification, space, problem)

    free, dirichlet = dofmap.free, dofmap.dirichlet
    lifting = np.zeros(n)
    lifting[dirichlet] = problem.u(mesh.vertices[dirichlet])

    matrix = full[free][:, free].tocsr()
    rhs = load[free] - full[free][:, dirichlet] @ lifting[dirichlet]

    logger.debug("Assembled %d free DOFs, %d nonzeros, %d interface edge segments",
                 len(free), matrix.nnz, len(segments.edge))
    return SparseSystem(matrix=matrix, rhs=rhs, lifting=lifting, free=free, dirichlet=dirichlet,
                        penalty=penalty_full[free][:, free].tocsr(), full_matrix=full,
                        load=load, mesh=mesh, space=space)


def _relative_residual(matrix, x, b) -> float:
    r = np.linalg.norm(matrix @ x - b)
    nb = np.linalg.norm(b)
    return float(r / nb) if nb > 0 else float(r)


def _direct(matrix, b) -> np.ndarray:
    lu = splu(matrix.tocsc())
    x = lu.solve(b)
    # one step of iterative refinement
    return x + lu.solve(b - matrix @ x)


def solve(system: SparseSystem, config: SolverConfig) -> DiscreteSolution:
    """Sparse LU for epsilon = -1, Jacobi-preconditioned BiCGStab otherwise (LU fallback)."""
    A, b = system.matrix, system.rhs
    if system.n_free == 0:
        x = np.zeros(0)
        residual = 0.0
    elif config.epsilon == -1:
        x = _direct(A, b)
        residual = _relative_residual(A, x, b)
    else:
        diag = A.diagonal()
        inv = np.where(diag != 0, 1.0 / np.where(diag != 0, diag, 1.0), 1.0)
        jacobi = LinearOperator(A.shape, matvec=lambda r: inv * r, dtype=float)
        x, info = bicgstab(A, b, rtol=config.tol, atol=0.0, maxiter=config.maxiter, M=jacobi)
        residual = _relative_residual(A, x, b)
        if info != 0 or residual > config.tol:
            logger.warning("BiCGStab stopped at residual %.3e (info=%d); falling back to sparse LU",
                           residual, info)
            x = _direct(A, b)
            residual = _relative_residual(A, x, b)

    if residual > config.tol:
        raise SolverError(f"Linear solve on {system.n_free} DOFs did not converge", residual)

    values = system.lifting.copy()
    values[system.free] = x
    grad_plus, grad_minus = system.space.piece_gradients(system.mesh, values)
    return DiscreteSolution(values=values, grad_plus=grad_plus, grad_minus=grad_minus, residual=residual)
