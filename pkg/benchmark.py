"""
Benchmark script to measure time and memory usage of the level pipeline
"""

import sys
import time
from typing import Dict, List

import psutil

from amr import solve_level
from assembly import SolverConfig
from mesh import build_initial_mesh, refine_uniform
from problems import get_problem


def get_memory_usage():
    """Get current memory usage in MB"""
    process = psutil.Process()
    return process.memory_info().rss / 1024 / 1024


def benchmark_levels(problem_name: str = 'ellipse', rho: float = 100.0, p: float = 5.0,
                     initial_n: int = 4, levels: int = 4) -> List[Dict]:
    """Time one full solve level (classify .. estimate) on uniformly refined meshes"""

    print("=" * 70)
    print(f"BENCHMARK: level pipeline on '{problem_name}' (rho={rho:g})")
    print("=" * 70)
    print(f"\nMemory at start: {get_memory_usage():.1f} MB")

    problem = get_problem(problem_name, rho, p)
    config = SolverConfig()
    mesh = build_initial_mesh(initial_n, problem.domain)
    rows = []

    for level in range(levels):
        start_mem = get_memory_usage()
        start_time = time.perf_counter()

        state = solve_level(mesh, problem, config)

        elapsed = time.perf_counter() - start_time
        rows.append({
            'level': level,
            'n_dof': state.dofmap.n_free,
            'n_elements': state.mesh.n_elements,
            'n_interface': state.classification.n_interface,
            'seconds': elapsed,
            'memory_mb': get_memory_usage() - start_mem,
        })
        print(f"[level {level}] {state.dofmap.n_free:>7} DOF  {elapsed:7.2f} s  "
              f"{rows[-1]['memory_mb']:+7.1f} MB")
        mesh = refine_uniform(state.mesh)

    print("\n" + "=" * 70)
    print("SUMMARY")
    print("=" * 70)
    print(f"\n{'DOF':>10} {'elements':>10} {'interface':>10} {'time (s)':>10} {'us / DOF':>10}")
    print("-" * 55)
    for r in rows:
        per_dof = 1e6 * r['seconds'] / max(r['n_dof'], 1)
        print(f"{r['n_dof']:>10} {r['n_elements']:>10} {r['n_interface']:>10} {r['seconds']:>10.2f} {per_dof:>10.1f}")
    return rows


def estimate_full_run(rows: List[Dict], max_dof: int = 50000, theta: float = 0.5):
    """Extrapolate an adaptive run to max_dof from the measured cost per DOF"""
    print("\n" + "=" * 70)
    print(f"ESTIMATE FOR AN ADAPTIVE RUN TO {max_dof} DOF")
    print("=" * 70)

    largest = rows[-1]
    per_dof = largest['seconds'] / max(largest['n_dof'], 1)
    # Dörfler refinement grows DOF by roughly 1 + theta per level
    growth = 1.0 + theta
    dof = rows[0]['n_dof']
    total = 0.0
    levels = 0
    while dof < max_dof:
        total += per_dof * dof
        dof *= growth
        levels += 1
    print(f"\n   Levels: ~{levels}")
    print(f"   Time: ~{total / 60:.1f} minutes")
    print(f"   Memory: ~{largest['memory_mb'] * max_dof / max(largest['n_dof'], 1):.0f} MB peak")


if __name__ == "__main__":
    name = sys.argv[1] if len(sys.argv) > 1 else 'ellipse'
    measured = benchmark_levels(name, initial_n=16 if name == 'petal' else 4)
    estimate_full_run(measured)
