"""
Experiment Runner for Adaptive IFEM
Runs interface benchmarks, writes convergence histories, meshes and charts
"""

import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import psutil
from slugify import slugify

from amr import ESTIMATORS, AmrConfig, ConvergenceHistory, LevelError, adaptive_loop, uniform_loop
from assembly import SolverConfig, SolverError
from ife_space import METHODS
from interface_geometry import CutError, InterfaceAssumptionError, classify_with_repair
from mesh import SIDES, build_initial_mesh, refine_uniform, write_mesh_dump
from plotting import (ResultsWriter, export_convergence_svg, export_mesh_svg, mesh_image, read_results_csv,
                      side_by_side, write_solution_csv, write_summary_json)
from problems import PROBLEMS, get_problem

logger = logging.getLogger(__name__)

MODES = ('uniform', 'adaptive')
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


class ConfigError(ValueError):
    """Invalid run configuration; names the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    problem: str = 'ellipse'
    rho: float = 100.0
    p: float = 5.0
    mode: str = 'adaptive'
    theta: float = 0.5
    min_fraction: float = 0.05
    epsilon: int = 1
    gamma: float = 10.0
    estimator: str = 'eta'
    initial_n: Optional[int] = None
    max_dof: int = 50000
    max_levels: int = 60
    solver_tol: float = 1e-10
    out: str = './results'
    method: str = 'ife'
    plot_mesh: bool = True
    plot_convergence: bool = True
    dump_meshes: bool = False
    neumann_sides: Tuple[str, ...] = ()
    label: str = ''

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError('problem', f"expected one of {PROBLEMS}, got '{self.problem}'")
        if self.mode not in MODES:
            raise ConfigError('mode', f"expected one of {MODES}, got '{self.mode}'")
        if self.method not in METHODS:
            raise ConfigError('method', f"expected one of {METHODS}, got '{self.method}'")
        if self.estimator not in ESTIMATORS:
            raise ConfigError('estimator', f"expected one of {ESTIMATORS}, got '{self.estimator}'")
        if self.initial_n is None:
            self.initial_n = 16 if self.problem == 'petal' else 4
        if self.initial_n < 1:
            raise ConfigError('initial_n', f"must be >= 1, got {self.initial_n}")
        if not self.rho > 0:
            raise ConfigError('rho', f"must be positive, got {self.rho}")
        if not self.p > 0:
            raise ConfigError('p', f"must be positive, got {self.p}")
        self.neumann_sides = tuple(self.neumann_sides)
        for side in self.neumann_sides:
            if side not in SIDES:
                raise ConfigError('neumann_sides', f"unknown side '{side}', expected {SIDES}")
        # owning modules validate the rest
        for name, build in (('solver', self.solver_config), ('amr', self.amr_config)):
            try:
                build()
            except ValueError as exc:
                raise ConfigError(name, str(exc)) from exc
        if not self.label:
            self.label = f"{self.problem}-{self.mode}-{self.estimator}-{self.method}"

    def solver_config(self) -> SolverConfig:
        return SolverConfig(epsilon=self.epsilon, gamma=self.gamma, tol=self.solver_tol)

    def amr_config(self) -> AmrConfig:
        return AmrConfig(theta=self.theta, max_dof=self.max_dof, max_levels=self.max_levels,
                         estimator=self.estimator, min_fraction=self.min_fraction)

    def to_dict(self):
        return asdict(self)


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: '{text}'")


def _parse_optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ('', 'none', 'auto') else int(text)


def _parse_sides(text: str) -> Tuple[str, ...]:
    return tuple(s.strip() for s in text.split(',') if s.strip())


FIELD_PARSERS = {
    'problem': str, 'rho': float, 'p': float, 'mode': str, 'theta': float,
    'min_fraction': float,
    'epsilon': int, 'gamma': float, 'estimator': str, 'initial_n': _parse_optional_int,
    'max_dof': int, 'max_levels': int, 'solver_tol': float, 'out': str, 'method': str,
    'plot_mesh': _parse_bool, 'plot_convergence': _parse_bool, 'dump_meshes': _parse_bool,
    'neumann_sides': _parse_sides, 'label': str,
}

PRESETS: Dict[str, dict] = {
    'ex61': {
        'description': "Ellipse, moderate jump (rho=100, p=5): adaptive vs uniform IFEM and adaptive FEM",
        'base': {'problem': 'ellipse', 'rho': 100.0, 'p': 5.0},
        'runs': [{'mode': 'adaptive', 'label': 'adaptive-ifem'},
                 {'mode': 'uniform', 'label': 'uniform-ifem'},
                 {'mode': 'adaptive', 'method': 'fem', 'label': 'adaptive-fem'}],
    },
    'ex62': {
        'description': "Ellipse, large jump (rho=1e6, p=5): adaptive vs uniform IFEM",
        'base': {'problem': 'ellipse', 'rho': 1e6, 'p': 5.0},
        'runs': [{'mode': 'adaptive', 'label': 'adaptive-ifem'},
                 {'mode': 'uniform', 'label': 'uniform-ifem'}],
    },
    'ex63': {
        'description': "Ellipse, singular solution (rho=1e6, p=0.5): adaptive vs uniform IFEM",
        'base': {'problem': 'ellipse', 'rho': 1e6, 'p': 0.5},
        'runs': [{'mode': 'adaptive', 'label': 'adaptive-ifem'},
                 {'mode': 'uniform', 'label': 'uniform-ifem'}],
    },
    'ex64': {
        'description': "Petal interface (rho=10) from a 16x16 mesh: adaptive vs uniform IFEM",
        'base': {'problem': 'petal', 'rho': 10.0, 'initial_n': 16},
        'runs': [{'mode': 'adaptive', 'label': 'adaptive-ifem'},
                 {'mode': 'uniform', 'label': 'uniform-ifem'}],
    },
    'ex65': {
        'description': "Estimators eta vs xi (no mismatch term) on the ellipse and the petal",
        'base': {'max_dof': 20000},
        # relative gap (eta - xi) / eta: below 'similar' on the ellipse past level 2,
        # above 'coarse_petal' on the first three petal levels
        'gap_thresholds': {'similar': 0.02, 'coarse_petal': 5e-4},
        'runs': [{'problem': 'ellipse', 'rho': 100.0, 'p': 5.0, 'estimator': 'eta', 'label': 'ellipse-eta'},
                 {'problem': 'ellipse', 'rho': 100.0, 'p': 5.0, 'estimator': 'xi', 'label': 'ellipse-xi'},
                 {'problem': 'petal', 'rho': 10.0, 'estimator': 'eta', 'label': 'petal-eta'},
                 {'problem': 'petal', 'rho': 10.0, 'estimator': 'xi', 'label': 'petal-xi'}],
    },
    'ex66': {
        'description': "Large jump (rho=1e6, p=5) guided by eta vs by the true error",
        'base': {'problem': 'ellipse', 'rho': 1e6, 'p': 5.0},
        'runs': [{'estimator': 'eta', 'label': 'guided-by-eta'},
                 {'estimator': 'true_error', 'label': 'guided-by-true-error'}],
    },
    'line': {
        'description': "Straight interface x=0.3 with a piecewise-linear solution (reproduced exactly)",
        'base': {'problem': 'line', 'rho': 10.0, 'max_levels': 3},
        'runs': [{'mode': 'uniform', 'label': 'line-uniform'}],
    },
}


def load_config_file(path) -> dict:
    """Flat `key = value` lines; `#` starts a comment."""
    if not Path(path).is_file():
        raise ConfigError('config', f"{path}: no such file")
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding='utf-8').splitlines(), 1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError('config', f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split('=', 1))
        key = key.replace('-', '_')
        if key not in FIELD_PARSERS:
            raise ConfigError(key, f"{path}:{lineno}: unknown key")
        try:
            values[key] = FIELD_PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(key, f"{path}:{lineno}: {exc}") from exc
    return values


def build_run_configs(preset: Optional[str] = None, file_values: Optional[dict] = None,
                      overrides: Optional[dict] = None) -> List[RunConfig]:
    """defaults < config file < preset base < preset run < command-line overrides"""
    file_values = file_values or {}
    overrides = overrides or {}
    if preset is None:
        return [RunConfig(**{**file_values, **overrides})]
    if preset not in PRESETS:
        raise ConfigError('preset', f"unknown preset '{preset}', expected one of {sorted(PRESETS)}")
    entry = PRESETS[preset]
    return [RunConfig(**{**file_values, **entry['base'], **run, **overrides}) for run in entry['runs']]


def convergence_rate(history: ConvergenceHistory, field_name: str = 'energy_error', last_k: int = 6) -> float:
    """Least-squares slope of log(field) against log(DOF) over the last `last_k` levels."""
    if last_k < 2 or len(history) < last_k:
        raise ValueError(f"need 2 <= last_k <= {len(history)} levels, got last_k={last_k}")
    dof = history.column('n_dof')[-last_k:]
    values = history.column(field_name)[-last_k:]
    if np.any(~np.isfinite(values)) or np.any(values <= 0) or np.any(dof <= 0):
        raise ValueError(f"'{field_name}' must be positive on the fitted levels")
    slope, _ = np.polyfit(np.log(dof), np.log(values), 1)
    return float(slope)


def summarize(history: ConvergenceHistory, last_k: int = 6) -> dict:
    k = min(last_k, len(history))
    slopes = {}
    for name in ('energy_error', 'estimator'):
        try:
            slopes[name] = convergence_rate(history, name, k)
        except ValueError:
            slopes[name] = float('nan')
    eff = history.column('eff_index')
    dof = history.column('n_dof')
    asymptotic = eff[(dof > 1000) & np.isfinite(eff)]
    if asymptotic.size == 0:
        asymptotic = eff[np.isfinite(eff)]
    return {
        'label': history.label,
        'estimator': history.estimator,
        'levels': len(history),
        'final_dof': int(dof[-1]) if len(history) else 0,
        'final_energy_error': float(history.column('energy_error')[-1]) if len(history) else float('nan'),
        'slope_energy_error': slopes['energy_error'],
        'slope_estimator': slopes['estimator'],
        'mean_eff_index': float(asymptotic.mean()) if asymptotic.size else float('nan'),
    }


class ExperimentRunner:
    """Runs one or more configurations and writes their artifacts."""

    def __init__(self, configs: List[RunConfig], out: Optional[str] = None):
        self.configs = configs
        self.results_dir = Path(out or configs[0].out)
        self.results_dir.mkdir(parents=True, exist_ok=True)

    def run_single(self, config: RunConfig) -> ConvergenceHistory:
        run_dir = self.results_dir / slugify(config.label)
        run_dir.mkdir(parents=True, exist_ok=True)
        problem = get_problem(config.problem, config.rho, config.p)
        writer = ResultsWriter(run_dir / "results.csv")

        def on_level(record, state):
            print(f"[level {record.level}] {record.n_dof} DOF, {record.n_elements} elements, "
                  f"error {record.energy_error:.4e}, {config.estimator} {record.estimator:.4e}, "
                  f"eff {record.eff_index:.3f} ({record.wall_ms:.0f} ms)")
            writer(record)
            if config.dump_meshes:
                write_mesh_dump(state.mesh, run_dir / f"mesh_level{record.level}.txt", state.classification.cuts)

        if config.mode == 'adaptive':
            history = adaptive_loop(problem, config.solver_config(), config.amr_config(),
                                    initial_n=config.initial_n, method=config.method,
                                    neumann_sides=config.neumann_sides, on_level=on_level, label=config.label)
        else:
            history = uniform_loop(problem, config.solver_config(), levels=config.max_levels,
                                   initial_n=config.initial_n, method=config.method,
                                   estimator=config.estimator, max_dof=config.max_dof,
                                   neumann_sides=config.neumann_sides, on_level=on_level, label=config.label)

        first, last = history.first_state, history.last_state
        if config.plot_mesh:
            export_mesh_svg(first.mesh, first.classification, run_dir / "mesh_level0.svg",
                            first.mismatch, title=f"{config.label} level 0")
            export_mesh_svg(last.mesh, last.classification, run_dir / "mesh_final.svg",
                            last.mismatch, title=f"{config.label} level {len(history) - 1}")
        if config.plot_convergence:
            export_convergence_svg([history], run_dir / "convergence.svg", title=config.label)
        write_solution_csv(last, problem, run_dir / "solution.csv")

        summary = summarize(history)
        summary['config'] = config.to_dict()
        summary['records'] = [r.to_dict() for r in history]
        summary['peak_rss_mb'] = psutil.Process().memory_info().rss / 1024 / 1024
        write_summary_json(summary, run_dir / "summary.json")
        return history

    def run(self) -> List[ConvergenceHistory]:
        print("=" * 70)
        print("ADAPTIVE IFEM EXPERIMENTS")
        print("=" * 70)
        histories = []
        for i, config in enumerate(self.configs, 1):
            print("\n" + "=" * 70)
            print(f"RUN {i}/{len(self.configs)}: {config.label}")
            print("=" * 70)
            started = time.perf_counter()
            histories.append(self.run_single(config))
            print(f"Finished in {time.perf_counter() - started:.1f} s")

        if len(histories) > 1:
            if any(c.plot_convergence for c in self.configs):
                export_convergence_svg(histories, self.results_dir / "convergence.svg", title="comparison")
            self._compare_meshes(histories)
            write_summary_json({'runs': [summarize(h) for h in histories]}, self.results_dir / "summary.json")

        print("\n" + "=" * 70)
        print("SUMMARY")
        print("=" * 70)
        print(f"\n{'Run':<34} {'DOF':>8} {'error slope':>12} {'est. slope':>11} {'eff':>7}")
        print("-" * 76)
        for history in histories:
            s = summarize(history)
            print(f"{s['label']:<34} {s['final_dof']:>8} {s['slope_energy_error']:>12.3f} "
                  f"{s['slope_estimator']:>11.3f} {s['mean_eff_index']:>7.3f}")
        print(f"\nResults saved to: {self.results_dir}")
        return histories

    def _compare_meshes(self, histories: List[ConvergenceHistory]):
        """meshes.png with the final meshes of all runs side by side."""
        if not any(c.plot_mesh for c in self.configs):
            return
        images = [mesh_image(h.last_state.mesh, h.last_state.classification) for h in histories]
        labels = [f"{h.label} ({h.records[-1].n_dof} DOF)" for h in histories]
        side_by_side(images, labels, self.results_dir / "meshes.png", title="final meshes")


def convergence_command(inputs: List[str], out: str, last_k: int) -> List[dict]:
    """Slopes and a combined chart from previously written results.csv files."""
    histories = [read_results_csv(path) for path in inputs]
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_convergence_svg(histories, out_dir / "convergence.svg", title="convergence")
    rows = [summarize(h, last_k) for h in histories]
    for row in rows:
        print(f"{row['label']:<34} error slope {row['slope_energy_error']:.3f}  "
              f"estimator slope {row['slope_estimator']:.3f}  eff {row['mean_eff_index']:.3f}")
    return rows


def export_mesh_command(config: RunConfig, levels: int) -> Path:
    """Initial mesh refined uniformly `levels` times, classified, dumped with its cut records."""
    problem = get_problem(config.problem, config.rho, config.p)
    mesh = build_initial_mesh(config.initial_n, problem.domain, config.neumann_sides)
    for _ in range(levels):
        mesh = refine_uniform(mesh)
    mesh, classification = classify_with_repair(mesh, problem.level_set, allow_boundary=problem.touches_boundary)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump = out_dir / f"{slugify(config.problem)}_mesh.txt"
    write_mesh_dump(mesh, dump, classification.cuts)
    export_mesh_svg(mesh, classification, out_dir / f"{slugify(config.problem)}_mesh.svg", title=config.problem)
    print(f"Wrote {dump} ({mesh.n_elements} elements, {classification.n_interface} interface elements)")
    return dump


def create_sample_config(path: str = 'ifem.conf'):
    """Write a commented sample configuration file."""
    lines = ["# adaptive IFEM run configuration: key = value", ""]
    for f in fields(RunConfig):
        default = f.default if f.default is not None else 'auto'
        if isinstance(default, tuple):
            default = ",".join(default)
        lines.append(f"{f.name} = {default}")
    Path(path).write_text("\n".join(lines) + "\n", encoding='utf-8')
    print(f"Created {path} - edit this file to customize settings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Adaptive partially penalized IFEM experiments')
    parser.add_argument('command', choices=['run', 'convergence', 'export-mesh', 'init', 'presets'],
                        help='Command to run')
    parser.add_argument('--preset', help='Named experiment preset (see the presets command)')
    parser.add_argument('--config', '-c', help='Configuration file (key = value lines)')
    parser.add_argument('--problem', choices=PROBLEMS)
    parser.add_argument('--rho', type=float)
    parser.add_argument('--p', type=float)
    parser.add_argument('--mode', choices=MODES)
    parser.add_argument('--theta', type=float)
    parser.add_argument('--min-fraction', type=float, help='Smallest share of elements marked per level')
    parser.add_argument('--epsilon', type=int)
    parser.add_argument('--gamma', type=float)
    parser.add_argument('--estimator')
    parser.add_argument('--method', choices=METHODS)
    parser.add_argument('--initial-n', type=int)
    parser.add_argument('--max-dof', type=int)
    parser.add_argument('--max-levels', type=int)
    parser.add_argument('--solver-tol', type=float)
    parser.add_argument('--neumann', dest='neumann_sides', type=_parse_sides,
                        help='Comma-separated Neumann sides (left,right,bottom,top)')
    parser.add_argument('--label')
    parser.add_argument('--out', '-o')
    parser.add_argument('--dump-meshes', action='store_true', default=None)
    parser.add_argument('--no-plots', action='store_true', help='Skip mesh and convergence plots')
    parser.add_argument('--input', '-i', action='append', default=[],
                        help='results.csv to analyse (convergence command, repeatable)')
    parser.add_argument('--last-k', type=int, default=6, help='Levels used for slope fits')
    parser.add_argument('--levels', type=int, default=0, help='Uniform refinements before export-mesh')
    parser.add_argument('--verbose', '-v', action='store_true')
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    values = {name: getattr(args, name) for name in FIELD_PARSERS
              if getattr(args, name, None) is not None}
    if args.no_plots:
        values['plot_mesh'] = False
        values['plot_convergence'] = False
    return values


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(asctime)s %(name)s %(levelname)s: %(message)s')

    if args.command == 'init':
        create_sample_config(args.config or 'ifem.conf')
        return EXIT_OK
    if args.command == 'presets':
        for name, entry in PRESETS.items():
            print(f"{name:<6} {entry['description']}")
        return EXIT_OK

    try:
        file_values = load_config_file(args.config) if args.config else {}
        if args.command == 'convergence':
            if not args.input:
                raise ConfigError('input', "at least one --input results.csv is required")
            convergence_command(args.input, args.out or file_values.get('out', './results'), args.last_k)
            return EXIT_OK
        configs = build_run_configs(args.preset, file_values, _overrides(args))
        if args.command == 'export-mesh':
            export_mesh_command(configs[0], args.levels)
            return EXIT_OK
        ExperimentRunner(configs, out=configs[0].out).run()
    except ConfigError as exc:
        print(f"Error: invalid configuration ({exc})", file=sys.stderr)
        return EXIT_CONFIG
    except (LevelError, SolverError, InterfaceAssumptionError, CutError) as exc:
        print(f"Error: solver failure ({exc})", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
