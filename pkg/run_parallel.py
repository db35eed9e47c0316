"""
Parallel Preset Runner
Runs every run of one or more presets in worker processes and merges the summaries
"""

import json
import logging
import time
from multiprocessing import Pool, cpu_count
from pathlib import Path
from typing import List, Optional

from slugify import slugify

from main import ConfigError, ExperimentRunner, PRESETS, RunConfig, build_run_configs, summarize

logger = logging.getLogger(__name__)


def process_run(job):
    """Run a single configuration inside a worker"""
    job_id, config_dict, out = job
    config = RunConfig(**config_dict)
    print(f"[Job {job_id}] Starting {config.label}...")
    try:
        history = ExperimentRunner([config], out=out).run_single(config)
        print(f"[Job {job_id}] Complete! {history.records[-1].n_dof} DOF")
        return job_id, summarize(history)
    except Exception as e:
        print(f"[Job {job_id}] Error: {e}")
        return job_id, {'label': config.label, 'error': str(e)}


def run_parallel(presets: List[str], out: str = './results', num_workers: Optional[int] = None,
                 overrides: Optional[dict] = None) -> List[dict]:
    """Run all runs of the given presets in parallel; returns one summary per run"""
    jobs = []
    for name in presets:
        preset_out = str(Path(out) / slugify(name))
        for config in build_run_configs(name, overrides=overrides):
            jobs.append((len(jobs), config.to_dict(), preset_out))

    if num_workers is None:
        num_workers = min(cpu_count(), len(jobs), 8)
    num_workers = max(1, num_workers)

    print(f"Presets: {', '.join(presets)}")
    print(f"Total runs: {len(jobs)}")
    print(f"Parallel workers: {num_workers}\n")

    start_time = time.time()
    with Pool(num_workers) as pool:
        results = pool.map(process_run, jobs)
    elapsed = time.time() - start_time

    summaries = [summary for _, summary in sorted(results, key=lambda r: r[0])]
    Path(out).mkdir(parents=True, exist_ok=True)
    merged = Path(out) / "parallel_summary.json"
    with open(merged, 'w', encoding='utf-8') as f:
        json.dump({'presets': presets, 'elapsed_s': elapsed, 'runs': summaries}, f, indent=2)

    failed = [s['label'] for s in summaries if 'error' in s]
    print(f"\n{'=' * 60}")
    print("Complete!")
    print(f"Time: {elapsed / 60:.1f} minutes")
    print(f"Runs finished: {len(summaries) - len(failed)}/{len(summaries)}")
    if failed:
        print(f"Failed: {', '.join(failed)}")
    print(f"Summaries saved to: {merged}")
    print(f"{'=' * 60}")
    return summaries


if __name__ == "__main__":
    import sys

    names = sys.argv[1:] or [name for name in PRESETS if name != 'line']
    try:
        run_parallel(names)
    except ConfigError as exc:
        print(f"Error: {exc}")
        sys.exit(2)
