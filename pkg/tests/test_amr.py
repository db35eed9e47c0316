import numpy as np
import pytest

from amr import (CSV_FIELDS, AmrConfig, LevelError, adaptive_loop, mark, solve_level, uniform_loop)
from assembly import SolverConfig
from estimator import Indicators
from interface_geometry import InterfaceAssumptionError
from mesh import build_initial_mesh, is_conforming
from problems import ellipse_problem, line_problem


def _brute_force_mark(eta, theta):
    order = sorted(range(len(eta)), key=lambda k: (-eta[k], k))
    target = theta ** 2 * np.cumsum(eta[order] ** 2)[-1]
    if target <= 0:
        return []
    total = 0.0
    for count, k in enumerate(order, start=1):
        total += eta[k] ** 2
        if total >= target:
            return sorted(order[:count])
    return sorted(order)


def test_mark_edge_cases():
    eta = np.array([0.3, 0.0, 1.2, 0.5])
    assert mark(eta, 0.0).size == 0
    assert mark(eta, 1.0).tolist() == [0, 2, 3]
    assert mark(np.zeros(5), 0.5).size == 0
    assert mark(np.array([]), 0.5).size == 0
    with pytest.raises(ValueError):
        mark(eta, 1.5)


def test_mark_ties_by_element_id():
    assert mark(np.ones(4), 0.5).tolist() == [0]
    assert mark(np.ones(4), 0.75).tolist() == [0, 1, 2]


def test_mark_min_fraction():
    eta = np.array([10.0] + [1.0] * 9)
    assert mark(eta, 0.5).tolist() == [0]
    assert mark(eta, 0.5, min_fraction=0.3).tolist() == [0, 1, 2]
    assert mark(eta, 0.5, min_fraction=0.01).tolist() == [0]
    assert mark(np.zeros(10), 0.5, min_fraction=0.3).size == 0


def test_mark_accepts_indicators():
    indicators = Indicators(kind='eta', addends={'a': np.array([0.0, 4.0, 1.0]), 'b': np.array([1.0, 0.0, 0.0])})
    assert mark(indicators, 0.9).tolist() == [0, 1]


def test_mark_matches_brute_force(rng):
    for _ in range(1000):
        eta = rng.exponential(size=rng.integers(1, 30))
        eta[rng.random(eta.size) < 0.2] = 0.0
        theta = rng.uniform(0.05, 1.0)
        marked = mark(eta, theta)
        assert marked.tolist() == _brute_force_mark(eta, theta)
        if eta.sum() > 0:
            assert np.sum(eta[marked] ** 2) >= theta ** 2 * np.sum(eta ** 2) * (1 - 1e-12)
            assert marked.size >= mark(eta, 0.5 * theta).size


@pytest.mark.parametrize("kwargs", [{'theta': -0.1}, {'theta': 1.1}, {'max_dof': 0},
                                    {'max_levels': 0}, {'estimator': 'zeta'},
                                    {'min_fraction': 1.0}, {'min_fraction': -0.1}])
def test_amr_config_validation(kwargs):
    with pytest.raises(ValueError):
        AmrConfig(**kwargs)


def test_solve_level_state(ellipse, direct):
    state = solve_level(build_initial_mesh(8), ellipse, direct)
    assert state.dofmap.n_free >= 49
    assert state.energy_error > 0
    assert sorted(state.mismatch) == sorted(state.classification.cuts)
    assert state.indicators('xi') is state.xi
    assert state.indicators('true_error') is state.true


def test_tiny_budget_stops_after_one_level(ellipse, direct):
    history = adaptive_loop(ellipse, direct, AmrConfig(max_dof=1))
    assert len(history) == 1
    assert history.records[0].level == 0
    assert history.first_state is history.last_state


def test_uniform_loop_quadruples(line, direct):
    levels = []
    history = uniform_loop(line, direct, levels=3, on_level=lambda record, state: levels.append(record.level))
    assert levels == [0, 1, 2]
    assert history.column('n_elements').tolist() == [32, 128, 512]
    assert history.column('n_dof').tolist() == [9, 49, 225]
    assert np.all(history.column('energy_error') <= 1e-8)
    assert history.label == 'line-uniform'
    assert len(uniform_loop(line, direct, levels=1)) == 1
    with pytest.raises(ValueError):
        uniform_loop(line, direct, levels=0)


def test_uniform_loop_respects_dof_cap(line, direct):
    history = uniform_loop(line, direct, levels=5, max_dof=40)
    assert history.column('n_dof').tolist() == [9, 49]


def test_adaptive_loop_grows_dofs(ellipse, direct):
    history = adaptive_loop(ellipse, direct, AmrConfig(theta=0.5, max_levels=4), initial_n=4)
    dofs = history.column('n_dof')
    assert len(history) == 4
    assert np.all(np.diff(dofs) > 0)
    assert is_conforming(history.last_state.mesh)
    assert history.column('min_angle_deg').min() >= 0.99 * 45.0
    assert np.all(history.column('energy_error') > 0)
    assert history.column('eff_index') == pytest.approx(history.column('eta') / history.column('energy_error'))
    assert history.label == 'ellipse-adaptive-eta'


def test_every_level_refines_a_minimum_share(direct):
    config = AmrConfig(theta=0.5, max_levels=6, min_fraction=0.1)
    history = adaptive_loop(ellipse_problem(1e6, 5.0), direct, config, initial_n=4)
    elements = history.column('n_elements').astype(int)
    assert len(history) == 6
    assert np.all(elements[1:] >= elements[:-1] + np.ceil(0.1 * elements[:-1]))


def test_adaptive_error_decreases(ellipse):
    config = SolverConfig(epsilon=-1, tol=1e-12)
    history = adaptive_loop(ellipse, config, AmrConfig(theta=0.5, max_levels=8), initial_n=4)
    errors = history.column('energy_error')
    assert errors[-1] < errors[0]


def test_record_rows(ellipse, direct):
    history = adaptive_loop(ellipse, direct, AmrConfig(max_levels=2, estimator='xi'))
    record = history.records[-1]
    assert len(record.csv_row()) == len(CSV_FIELDS)
    assert record.estimator == record.xi
    assert record.to_dict()['level'] == 1
    assert history.to_dict()['estimator'] == 'xi'


def test_failures_name_the_level(direct):
    problem = line_problem(c=0.5)
    with pytest.raises(LevelError) as info:
        adaptive_loop(problem, direct, AmrConfig(max_levels=2))
    assert info.value.level == 0
    assert isinstance(info.value.cause, InterfaceAssumptionError)
    assert info.value.cause.reason == 'edge-on-interface'
