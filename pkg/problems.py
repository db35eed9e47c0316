"""
Benchmark Problems
Interface problems with exact solutions: ellipse family, petal, straight line.
Also the energy norm of the discretization error.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from interface_geometry import (InterfaceClassification, LevelSet, MismatchRegion, all_mismatch_regions,
                                integration_cells, mismatch_band_cells, sign_of)
from mesh import Mesh, Rectangle
from quadrature import TRIANGLE_WEIGHTS, triangle_points

logger = logging.getLogger(__name__)

ENERGY_DEPTH = 2


@dataclass(frozen=True)
class BenchmarkProblem:
    """
    -div(alpha grad u) = f with alpha = beta_minus on {phi < 0}, beta_plus elsewhere.
    Side-wise exact solutions and gradients are vectorized callables of (x, y).
    """
    name: str
    level_set: LevelSet = field(repr=False)
    beta_minus: float
    beta_plus: float
    u_minus: Callable = field(repr=False)
    u_plus: Callable = field(repr=False)
    grad_minus: Callable = field(repr=False)
    grad_plus: Callable = field(repr=False)
    source: Callable = field(repr=False)
    domain: Rectangle = field(default_factory=Rectangle)
    p: Optional[float] = None
    touches_boundary: bool = False

    @property
    def rho(self) -> float:
        return self.beta_plus / self.beta_minus

    def alpha(self, side) -> np.ndarray:
        return np.where(np.asarray(side) > 0, self.beta_plus, self.beta_minus)

    def side(self, points: np.ndarray) -> np.ndarray:
        return self.level_set.side(points)

    def u(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        x, y = points[..., 0], points[..., 1]
        return np.where(self.side(points) > 0, self.u_plus(x, y), self.u_minus(x, y))

    def grad_u(self, points: np.ndarray, side: Optional[np.ndarray] = None) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        x, y = points[..., 0], points[..., 1]
        if side is None:
            side = self.side(points)
        plus = np.stack(np.broadcast_arrays(*self.grad_plus(x, y)), axis=-1)
        minus = np.stack(np.broadcast_arrays(*self.grad_minus(x, y)), axis=-1)
        return np.where(np.asarray(side)[..., None] > 0, plus, minus)

    def f(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.broadcast_to(self.source(points[..., 0], points[..., 1]), points.shape[:-1]).astype(float)

    def neumann_data(self, points: np.ndarray, normals: np.ndarray) -> np.ndarray:
        """g_N = -alpha grad u . n, so the exact solution has zero Neumann residual."""
        side = self.side(points)
        flux = self.alpha(side)[..., None] * self.grad_u(points, side)
        return -np.sum(flux * normals, axis=-1)


def ellipse_problem(rho: float, p: float, beta_minus: float = 1.0,
                    domain: Rectangle = Rectangle()) -> BenchmarkProblem:
    """
    Ellipse with semi-axes a = pi / 6.28 and b = 1.5 a; r = sqrt(x^2/a^2 + y^2/b^2).
    u = r^p / beta- inside, r^p / beta+ + 1/beta- - 1/beta+ outside.
    """
    if rho <= 0 or p <= 0 or beta_minus <= 0:
        raise ValueError(f"ellipse_problem needs rho, p, beta_minus > 0 (got {rho}, {p}, {beta_minus})")
    a = np.pi / 6.28
    b = 1.5 * a
    beta_plus = rho * beta_minus

    def r(x, y):
        return np.sqrt(x ** 2 / a ** 2 + y ** 2 / b ** 2)

    def phi_grad(x, y):
        rr = r(x, y)
        with np.errstate(divide='ignore', invalid='ignore'):
            gx = np.where(rr > 0, x / (a ** 2 * rr), 0.0)
            gy = np.where(rr > 0, y / (b ** 2 * rr), 0.0)
        return gx, gy

    def flux(x, y):
        # grad(r^p) = p r^(p-2) (x / a^2, y / b^2)
        rr = r(x, y)
        with np.errstate(divide='ignore', invalid='ignore'):
            coef = np.where(rr > 0, p * rr ** (p - 2.0), 0.0)
        return coef * x / a ** 2, coef * y / b ** 2

    def source(x, y):
        rr = r(x, y)
        with np.errstate(divide='ignore', invalid='ignore'):
            lap = (p * rr ** (p - 2.0) * (1.0 / a ** 2 + 1.0 / b ** 2)
                   + p * (p - 2.0) * rr ** (p - 4.0) * (x ** 2 / a ** 4 + y ** 2 / b ** 4))
            return np.where(rr > 0, -lap, 0.0)

    level_set = LevelSet(phi=lambda x, y: r(x, y) - 1.0, grad=phi_grad, name="ellipse")
    return BenchmarkProblem(
        name="ellipse",
        level_set=level_set,
        beta_minus=beta_minus,
        beta_plus=beta_plus,
        u_minus=lambda x, y: r(x, y) ** p / beta_minus,
        u_plus=lambda x, y: r(x, y) ** p / beta_plus + 1.0 / beta_minus - 1.0 / beta_plus,
        grad_minus=lambda x, y: tuple(g / beta_minus for g in flux(x, y)),
        grad_plus=lambda x, y: tuple(g / beta_plus for g in flux(x, y)),
        source=source,
        domain=domain,
        p=p,
    )


def _petal_phi(x, y):
    R = x ** 2 + y ** 2
    theta = np.arctan2(y, x)
    return R ** 2 * (1.0 + 0.5 * np.sin(12.0 * theta)) - 0.3


def _petal_grad(x, y):
    # 4R g (x, y) + 6R cos(12 theta) (-y, x); vanishes at the origin
    R = x ** 2 + y ** 2
    theta = np.arctan2(y, x)
    g = 1.0 + 0.5 * np.sin(12.0 * theta)
    c = 6.0 * R * np.cos(12.0 * theta)
    return 4.0 * R * g * x - c * y, 4.0 * R * g * y + c * x


def petal_problem(rho: float, beta_minus: float = 1.0,
                  domain: Rectangle = Rectangle()) -> BenchmarkProblem:
    """phi = (x^2 + y^2)^2 (1 + 0.5 sin(12 atan2(y, x))) - 0.3 and u = phi / beta(+-)."""
    if rho <= 0 or beta_minus <= 0:
        raise ValueError(f"petal_problem needs rho, beta_minus > 0 (got {rho}, {beta_minus})")
    beta_plus = rho * beta_minus

    def source(x, y):
        R = x ** 2 + y ** 2
        return -16.0 * R + 64.0 * R * np.sin(12.0 * np.arctan2(y, x))

    return BenchmarkProblem(
        name="petal",
        level_set=LevelSet(phi=_petal_phi, grad=_petal_grad, name="petal"),
        beta_minus=beta_minus,
        beta_plus=beta_plus,
        u_minus=lambda x, y: _petal_phi(x, y) / beta_minus,
        u_plus=lambda x, y: _petal_phi(x, y) / beta_plus,
        grad_minus=lambda x, y: tuple(g / beta_minus for g in _petal_grad(x, y)),
        grad_plus=lambda x, y: tuple(g / beta_plus for g in _petal_grad(x, y)),
        source=source,
        domain=domain,
    )


def line_problem(c: float = 0.3, rho: float = 10.0, beta_minus: float = 1.0,
                 domain: Rectangle = Rectangle()) -> BenchmarkProblem:
    """Vertical interface x = c with the piecewise-linear solution u = (x - c) / beta(+-) and f = 0."""
    if rho <= 0 or beta_minus <= 0:
        raise ValueError(f"line_problem needs rho, beta_minus > 0 (got {rho}, {beta_minus})")
    if not domain.x0 < c < domain.x1:
        raise ValueError(f"Interface x = {c} is outside the domain")
    beta_plus = rho * beta_minus

    def const(value):
        return lambda x, y: (np.full_like(np.asarray(x, dtype=float), value),
                             np.zeros_like(np.asarray(y, dtype=float)))

    return BenchmarkProblem(
        name="line",
        level_set=LevelSet(phi=lambda x, y: x - c, grad=const(1.0), name="line"),
        beta_minus=beta_minus,
        beta_plus=beta_plus,
        u_minus=lambda x, y: (x - c) / beta_minus,
        u_plus=lambda x, y: (x - c) / beta_plus,
        grad_minus=const(1.0 / beta_minus),
        grad_plus=const(1.0 / beta_plus),
        source=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
        domain=domain,
        touches_boundary=True,
    )


PROBLEMS = ('ellipse', 'petal', 'line')


def get_problem(name: str, rho: float, p: float = 5.0) -> BenchmarkProblem:
    if name == 'ellipse':
        return ellipse_problem(rho, p)
    if name == 'petal':
        return petal_problem(rho)
    if name == 'line':
        return line_problem(rho=rho)
    raise ValueError(f"Unknown problem '{name}', expected one of {PROBLEMS}")


def element_energy_errors(mesh: Mesh, classification: InterfaceClassification, solution,
                          problem: BenchmarkProblem, depth: int = ENERGY_DEPTH,
                          mismatch: Optional[Dict[int, MismatchRegion]] = None) -> np.ndarray:
    """
    Per-element ||alpha^1/2 (grad u - grad_h u_T)||^2_{0,K}.

    On non-interface elements alpha and the exact gradient follow the sign of phi
    at each quadrature point. Interface pieces K~+/- are sub-refined `depth` times
    and integrated with the piece's own side; the bands between chord and
    interface are then moved to their true side cell by cell.
    """
    cells = integration_cells(mesh, classification, depth)
    pts = triangle_points(cells.cells)
    piece = np.broadcast_to(cells.side[:, None], pts.shape[:-1])
    side = np.where(classification.tags[cells.element][:, None] == 0, piece, problem.side(pts))
    per_cell = cells.area * (_energy_density(problem, pts, side, solution, cells) @ TRIANGLE_WEIGHTS)
    errors = np.bincount(cells.element, weights=per_cell, minlength=mesh.n_elements)

    if classification.cuts:
        if mismatch is None:
            mismatch = all_mismatch_regions(mesh, classification)
        bands = mismatch_band_cells(classification, mismatch)
        if len(bands.cells):
            pts = triangle_points(bands.cells)
            piece = np.broadcast_to(bands.side[:, None], pts.shape[:-1])
            moved = (_energy_density(problem, pts, -piece, solution, bands)
                     - _energy_density(problem, pts, piece, solution, bands))
            errors += np.bincount(bands.element, weights=bands.area * (moved @ TRIANGLE_WEIGHTS),
                                  minlength=mesh.n_elements)
    return np.maximum(errors, 0.0)


def _energy_density(problem: BenchmarkProblem, pts: np.ndarray, side: np.ndarray, solution,
                    cells) -> np.ndarray:
    """alpha |grad u - grad_h u_T|^2 at the points; u_T uses the piece of each cell."""
    discrete = np.where(cells.side[:, None] > 0,
                        solution.grad_plus[cells.element],
                        solution.grad_minus[cells.element])
    diff = problem.grad_u(pts, side) - discrete[:, None, :]
    return problem.alpha(side) * np.sum(diff ** 2, axis=-1)


def energy_error(mesh: Mesh, classification: InterfaceClassification, solution,
                 problem: BenchmarkProblem, depth: int = ENERGY_DEPTH,
                 mismatch: Optional[Dict[int, MismatchRegion]] = None) -> float:
    return float(np.sqrt(np.sum(element_energy_errors(mesh, classification, solution, problem, depth,
                                                      mismatch))))


def interface_samples(problem: BenchmarkProblem, n: int, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    n points on an interface star-shaped about the origin, found by bisection
    along random rays. Returns (points, unit normals grad phi / |grad phi|).
    """
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2.0 * np.pi, n)
    direction = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    reach = 0.5 * min(problem.domain.x1 - problem.domain.x0, problem.domain.y1 - problem.domain.y0)
    lo = np.zeros(n)
    hi = np.full(n, reach)
    inside = sign_of(problem.level_set(np.zeros((n, 2))))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        same = problem.level_set.side(mid[:, None] * direction) == inside
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    points = 0.5 * (lo + hi)[:, None] * direction
    grad = problem.level_set.gradient(points)
    return points, grad / np.linalg.norm(grad, axis=1)[:, None]
