import json

import numpy as np
import pytest

import main
from amr import CSV_FIELDS, ConvergenceHistory, LevelRecord
from main import (EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, PRESETS, ConfigError, RunConfig, build_run_configs,
                  convergence_rate, load_config_file, summarize)
from mesh import read_mesh_dump
from plotting import read_results_csv
from problems import line_problem


def _history(errors, dofs=None):
    history = ConvergenceHistory(label="synthetic")
    dofs = dofs if dofs is not None else [10 * 4 ** k for k in range(len(errors))]
    for level, (dof, error) in enumerate(zip(dofs, errors)):
        history.records.append(LevelRecord(level=level, n_dof=dof, n_elements=2 * dof, n_interface_elements=4,
                                           energy_error=error, estimator=2.0 * error, eff_index=2.0,
                                           min_angle_deg=45.0, wall_ms=1.0, eta=2.0 * error, xi=2.0 * error))
    return history


def test_convergence_rate():
    dofs = [10 * 4 ** k for k in range(6)]
    history = _history([3.0 * d ** -0.5 for d in dofs])
    assert convergence_rate(history) == pytest.approx(-0.5)
    assert convergence_rate(history, 'estimator', last_k=3) == pytest.approx(-0.5)
    assert convergence_rate(_history([0.25] * 4), last_k=4) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("errors,last_k", [([1.0, 0.5, 0.25], 1), ([1.0, 0.5], 3), ([1.0, 0.0, 0.25], 3)])
def test_convergence_rate_rejects(errors, last_k):
    with pytest.raises(ValueError):
        convergence_rate(_history(errors), last_k=last_k)


def test_summarize():
    dofs = [100, 400, 1600, 6400]
    summary = summarize(_history([d ** -0.5 for d in dofs], dofs), last_k=3)
    assert summary['levels'] == 4
    assert summary['final_dof'] == 6400
    assert summary['slope_energy_error'] == pytest.approx(-0.5)
    assert summary['mean_eff_index'] == pytest.approx(2.0)
    assert np.isnan(summarize(_history([1.0]))['slope_energy_error'])


def test_run_config_defaults():
    config = RunConfig()
    assert config.initial_n == 4
    assert config.label == 'ellipse-adaptive-eta-ife'
    assert RunConfig(problem='petal').initial_n == 16
    assert config.solver_config().epsilon == 1
    assert config.amr_config().max_dof == 50000


@pytest.mark.parametrize("kwargs,field", [
    ({'problem': 'circle'}, 'problem'),
    ({'mode': 'random'}, 'mode'),
    ({'rho': -1.0}, 'rho'),
    ({'initial_n': 0}, 'initial_n'),
    ({'theta': 2.0}, 'amr'),
    ({'estimator': 'residual'}, 'estimator'),
    ({'epsilon': 3}, 'solver'),
    ({'neumann_sides': ('north',)}, 'neumann_sides'),
])
def test_run_config_errors_name_the_field(kwargs, field):
    with pytest.raises(ConfigError) as info:
        RunConfig(**kwargs)
    assert info.value.field == field


def test_config_file(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# comment\nproblem = petal\nrho = 10  # inline\nneumann-sides = left, top\n"
                    "plot_mesh = no\ninitial_n = auto\n")
    values = load_config_file(path)
    assert values == {'problem': 'petal', 'rho': 10.0, 'neumann_sides': ('left', 'top'),
                      'plot_mesh': False, 'initial_n': None}
    config = build_run_configs(file_values=values)[0]
    assert config.initial_n == 16
    assert config.neumann_sides == ('left', 'top')


@pytest.mark.parametrize("text,field", [("colour = red\n", 'colour'), ("rho = heavy\n", 'rho'),
                                        ("just words\n", 'config')])
def test_config_file_errors(tmp_path, text, field):
    path = tmp_path / "bad.conf"
    path.write_text(text)
    with pytest.raises(ConfigError) as info:
        load_config_file(path)
    assert info.value.field == field


def test_sample_config_round_trip(tmp_path):
    path = tmp_path / "ifem.conf"
    assert main.main(['init', '--config', str(path)]) == EXIT_OK
    config = build_run_configs(file_values=load_config_file(path))[0]
    assert config == RunConfig()


def test_presets_parse():
    for name, entry in PRESETS.items():
        configs = build_run_configs(name)
        assert len(configs) == len(entry['runs'])
        assert len({c.label for c in configs}) == len(configs)
    assert build_run_configs('ex64')[0].initial_n == 16
    assert all(c.max_dof == 20000 for c in build_run_configs('ex65'))
    assert [c.method for c in build_run_configs('ex61')] == ['ife', 'ife', 'fem']
    with pytest.raises(ConfigError):
        build_run_configs('ex99')


def test_precedence():
    configs = build_run_configs('ex61', {'theta': 0.3, 'rho': 5.0}, {'gamma': 20.0})
    assert all(c.rho == 100.0 and c.theta == 0.3 and c.gamma == 20.0 for c in configs)


def test_line_preset_run(tmp_path):
    assert main.main(['run', '--preset', 'line', '--out', str(tmp_path)]) == EXIT_OK
    run_dir = tmp_path / 'line-uniform'
    lines = (run_dir / 'results.csv').read_text().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert len(lines) == 4
    for name in ('mesh_level0.svg', 'mesh_final.svg', 'convergence.svg', 'solution.csv', 'summary.json'):
        assert (run_dir / name).exists()
    summary = json.loads((run_dir / 'summary.json').read_text())
    assert summary['levels'] == 3
    assert summary['final_dof'] == 225
    assert summary['config']['problem'] == 'line'

    out = tmp_path / 'analysis'
    assert main.main(['convergence', '-i', str(run_dir / 'results.csv'), '--out', str(out),
                      '--last-k', '3']) == EXIT_OK
    assert (out / 'convergence.svg').exists()


def test_export_mesh(tmp_path):
    assert main.main(['export-mesh', '--problem', 'ellipse', '--levels', '1', '--out', str(tmp_path)]) == EXIT_OK
    mesh, cuts = read_mesh_dump(tmp_path / 'ellipse_mesh.txt')
    assert mesh.n_elements >= 128
    assert len(cuts) > 0
    assert (tmp_path / 'ellipse_mesh.svg').exists()


@pytest.mark.parametrize("argv", [
    ['run', '--rho', '-1'],
    ['run', '--preset', 'nope'],
    ['run', '--config', 'missing.conf'],
    ['convergence'],
])
def test_configuration_errors_exit_2(tmp_path, argv, capsys):
    assert main.main(argv + ['--out', str(tmp_path)]) == EXIT_CONFIG
    assert 'invalid configuration' in capsys.readouterr().err


def test_solver_failures_exit_3(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(main, 'get_problem', lambda name, rho, p=5.0: line_problem(c=0.5, rho=rho))
    argv = ['run', '--problem', 'line', '--mode', 'uniform', '--max-levels', '1', '--out', str(tmp_path)]
    assert main.main(argv) == EXIT_SOLVER
    assert 'solver failure' in capsys.readouterr().err


def test_presets_command(capsys):
    assert main.main(['presets']) == EXIT_OK
    listed = capsys.readouterr().out
    assert all(name in listed for name in PRESETS)


def _csv_without_wall_time(path):
    rows = [line.split(',') for line in path.read_text().splitlines()]
    keep = [i for i, name in enumerate(rows[0]) if name != 'wall_ms']
    return [[row[i] for i in keep] for row in rows]


def test_identical_runs_write_identical_csv(tmp_path):
    config = RunConfig(problem='ellipse', rho=100.0, max_levels=4, plot_mesh=False, plot_convergence=False,
                       label='repeat')
    for name in ('first', 'second'):
        main.ExperimentRunner([config], out=str(tmp_path / name)).run_single(config)
    first = _csv_without_wall_time(tmp_path / 'first' / 'repeat' / 'results.csv')
    second = _csv_without_wall_time(tmp_path / 'second' / 'repeat' / 'results.csv')
    assert len(first) == 5
    assert first == second


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_every_preset_runs_one_level(tmp_path, preset):
    overrides = {'max_levels': 1, 'plot_mesh': False, 'plot_convergence': False}
    configs = build_run_configs(preset, overrides=overrides)
    runner = main.ExperimentRunner(configs, out=str(tmp_path))
    for config in configs:
        history = runner.run_single(config)
        assert len(history) == 1
        path = tmp_path / config.label / 'results.csv'
        assert path.read_text().splitlines()[0] == ",".join(CSV_FIELDS)
        (record,) = read_results_csv(path).records
        assert record.level == 0
        assert record.n_dof == history.records[0].n_dof
        assert np.isfinite(record.energy_error) and record.energy_error >= 0.0
        assert np.isfinite(record.estimator) and record.estimator >= 0.0
