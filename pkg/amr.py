"""
Adaptive Refinement
Dörfler marking and the Solve -> Estimate -> Mark -> Refine driver, plus the
uniform-refinement driver used for comparisons
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from assembly import AssemblyError, DiscreteSolution, SolverConfig, SolverError, SparseSystem, assemble, solve
from estimator import (EstimatorError, Indicators, edge_jumps, efficiency_index, eta_indicators,
                       true_error_indicators, xi_indicators)
from ife_space import DofMap, IFEBasisError, IFESpace, build_dof_map, build_space
from interface_geometry import (CutError, InterfaceAssumptionError, InterfaceClassification, MismatchRegion,
                                all_mismatch_regions, classify_with_repair)
from mesh import Mesh, MeshError, build_initial_mesh, mesh_stats, refine_nvb, refine_uniform

logger = logging.getLogger(__name__)

ESTIMATORS = ('eta', 'xi', 'true_error')
CSV_FIELDS = ('level', 'n_dof', 'n_elements', 'n_interface_elements', 'energy_error',
              'estimator', 'eff_index', 'min_angle_deg', 'wall_ms')
_LEVEL_ERRORS = (MeshError, InterfaceAssumptionError, CutError, IFEBasisError,
                 AssemblyError, SolverError, EstimatorError)


class LevelError(RuntimeError):
    """A stage of one refinement level failed."""

    def __init__(self, level: int, cause: Exception):
        super().__init__(f"Level {level}: {type(cause).__name__}: {cause}")
        self.level = level
        self.cause = cause


@dataclass
class AmrConfig:
    theta: float = 0.5
    max_dof: int = 50000
    max_levels: int = 60
    estimator: str = 'eta'
    min_fraction: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        if not 0.0 <= self.min_fraction < 1.0:
            raise ValueError(f"min_fraction must be in [0, 1), got {self.min_fraction}")
        if self.max_dof < 1 or self.max_levels < 1:
            raise ValueError(f"Budgets must be positive (max_dof={self.max_dof}, max_levels={self.max_levels})")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"Unknown estimator '{self.estimator}', expected one of {ESTIMATORS}")

    def to_dict(self):
        return asdict(self)


@dataclass
class LevelState:
    """Everything computed on one mesh."""
    mesh: Mesh
    classification: InterfaceClassification
    space: IFESpace
    dofmap: DofMap
    system: SparseSystem
    solution: DiscreteSolution
    mismatch: Dict[int, MismatchRegion]
    eta: Indicators
    xi: Indicators
    true: Indicators

    @property
    def energy_error(self) -> float:
        return self.true.total

    def indicators(self, estimator: str) -> Indicators:
        return {'eta': self.eta, 'xi': self.xi, 'true_error': self.true}[estimator]


@dataclass
class LevelRecord:
    level: int
    n_dof: int
    n_elements: int
    n_interface_elements: int
    energy_error: float
    estimator: float
    eff_index: float
    min_angle_deg: float
    wall_ms: float
    eta: float
    xi: float

    def csv_row(self) -> list:
        return [getattr(self, name) for name in CSV_FIELDS]

    def to_dict(self):
        return asdict(self)


@dataclass
class ConvergenceHistory:
    label: str = ""
    estimator: str = 'eta'
    records: List[LevelRecord] = field(default_factory=list)
    first_state: Optional[LevelState] = field(default=None, repr=False)
    last_state: Optional[LevelState] = field(default=None, repr=False)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_dict(self):
        return {'label': self.label, 'estimator': self.estimator,
                'records': [r.to_dict() for r in self.records]}


def mark(indicators, theta: float, min_fraction: float = 0.0) -> np.ndarray:
    """
    Minimal Dörfler set: elements by descending eta_K (ties by ascending id),
    shortest prefix with sum eta_K^2 >= theta^2 eta^2. Returns sorted ids.
    With min_fraction > 0 the prefix holds at least ceil(min_fraction * n) elements.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must be in [0, 1], got {theta}")
    eta = np.asarray(indicators.local if isinstance(indicators, Indicators) else indicators, dtype=float)
    if theta == 0.0 or eta.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(eta.size), -eta))
    cumulative = np.cumsum(eta[order] ** 2)
    target = theta ** 2 * cumulative[-1]
    if target <= 0.0:
        return np.zeros(0, dtype=np.int64)
    count = int(np.searchsorted(cumulative, target, side='left')) + 1
    count = min(eta.size, max(count, int(np.ceil(min_fraction * eta.size))))
    return np.sort(order[:count])


def solve_level(mesh: Mesh, problem, solver_config: SolverConfig, method: str = 'ife') -> LevelState:
    """Classify, build the space, assemble, solve and estimate on one mesh."""
    mesh, classification = classify_with_repair(mesh, problem.level_set, allow_boundary=problem.touches_boundary)
    space = build_space(mesh, classification, problem.beta_minus, problem.beta_plus, method)
    dofmap = build_dof_map(mesh)
    system = assemble(mesh, classification, space, dofmap, problem, solver_config)
    solution = solve(system, solver_config)
    jumps = edge_jumps(mesh, classification, solution, problem)
    mismatch = all_mismatch_regions(mesh, classification)
    return LevelState(
        mesh=mesh,
        classification=classification,
        space=space,
        dofmap=dofmap,
        system=system,
        solution=solution,
        mismatch=mismatch,
        eta=eta_indicators(mesh, classification, jumps, mismatch, solution),
        xi=xi_indicators(mesh, classification, jumps, mismatch, solution),
        true=true_error_indicators(mesh, classification, solution, problem, mismatch),
    )


def _record(level: int, state: LevelState, estimator: str, wall_ms: float) -> LevelRecord:
    value = state.indicators(estimator).total
    error = state.energy_error
    return LevelRecord(
        level=level,
        n_dof=state.dofmap.n_free,
        n_elements=state.mesh.n_elements,
        n_interface_elements=state.classification.n_interface,
        energy_error=error,
        estimator=value,
        eff_index=efficiency_index(value, error),
        min_angle_deg=mesh_stats(state.mesh).min_angle_deg,
        wall_ms=wall_ms,
        eta=state.eta.total,
        xi=state.xi.total,
    )


def _grow(mesh: Mesh, refined: Mesh, retries: int = 3) -> Mesh:
    """Bisect around new vertices until the refined mesh has more free DOFs than `mesh`."""
    before = build_dof_map(mesh).n_free
    for _ in range(retries):
        if build_dof_map(refined).n_free > before:
            break
        fresh = refined.triangles >= mesh.n_vertices
        around = np.flatnonzero(fresh.any(axis=1))
        if around.size == 0:
            around = np.arange(refined.n_elements)
        logger.info("Refinement added no free DOF; bisecting %d elements again", around.size)
        refined = refine_nvb(refined, around)
    return refined


def _initial(problem, initial_n: int, neumann_sides=()) -> Mesh:
    return build_initial_mesh(initial_n, problem.domain, neumann_sides)


def adaptive_loop(problem, solver_config: SolverConfig, amr_config: AmrConfig,
                  initial_n: int = 4, method: str = 'ife', neumann_sides=(),
                  on_level: Optional[Callable] = None, label: str = "") -> ConvergenceHistory:
    history = ConvergenceHistory(label=label or f"{problem.name}-adaptive-{amr_config.estimator}",
                                 estimator=amr_config.estimator)
    mesh = _initial(problem, initial_n, neumann_sides)
    for level in range(amr_config.max_levels):
        start = time.perf_counter()
        try:
            state = solve_level(mesh, problem, solver_config, method)
        except _LEVEL_ERRORS as exc:
            raise LevelError(level, exc) from exc
        record = _record(level, state, amr_config.estimator, 1000.0 * (time.perf_counter() - start))
        _keep(history, record, state, on_level)

        if record.n_dof >= amr_config.max_dof or level == amr_config.max_levels - 1:
            break
        marked = mark(state.indicators(amr_config.estimator), amr_config.theta, amr_config.min_fraction)
        if marked.size == 0:
            marked = np.arange(state.mesh.n_elements)
        try:
            mesh = _grow(state.mesh, refine_nvb(state.mesh, marked))
        except MeshError as exc:
            raise LevelError(level, exc) from exc
    return history


def uniform_loop(problem, solver_config: SolverConfig, levels: int, initial_n: int = 4,
                 method: str = 'ife', estimator: str = 'eta', max_dof: Optional[int] = None,
                 neumann_sides=(), on_level: Optional[Callable] = None, label: str = "") -> ConvergenceHistory:
    if levels < 1:
        raise ValueError(f"levels must be positive, got {levels}")
    history = ConvergenceHistory(label=label or f"{problem.name}-uniform", estimator=estimator)
    mesh = _initial(problem, initial_n, neumann_sides)
    for level in range(levels):
        start = time.perf_counter()
        try:
            state = solve_level(mesh, problem, solver_config, method)
        except _LEVEL_ERRORS as exc:
            raise LevelError(level, exc) from exc
        record = _record(level, state, estimator, 1000.0 * (time.perf_counter() - start))
        _keep(history, record, state, on_level)
        if max_dof is not None and record.n_dof >= max_dof:
            break
        if level < levels - 1:
            mesh = refine_uniform(state.mesh)
    return history


def _keep(history: ConvergenceHistory, record: LevelRecord, state: LevelState, on_level):
    history.records.append(record)
    if history.first_state is None:
        history.first_state = state
    history.last_state = state
    logger.info("[%s] level %d: %d DOF, %d elements, error %.4e, %s %.4e, eff %.3f",
                history.label, record.level, record.n_dof, record.n_elements,
                record.energy_error, history.estimator, record.estimator, record.eff_index)
    if on_level is not None:
        on_level(record, state)
