import csv

import numpy as np
import pytest

from amr import solve_level
from assembly import DiscreteSolution
from estimator import (ADDENDS, EdgeJumps, _edge_addends, edge_jumps, efficiency_index, eta_indicators,
                       write_indicator_csv, xi_indicators)
from ife_space import build_space
from interface_geometry import all_mismatch_regions
from mesh import EdgeKind, build_initial_mesh
from problems import petal_problem


def _jumps_on_unit_square(mesh, interface, jn, jt, seg_len, alpha):
    topo = mesh.topology
    n = topo.n_edges
    inner = int(np.flatnonzero(topo.elements[:, 1] >= 0)[0])
    full = {'jn': np.zeros((n, 2)), 'jt': np.zeros((n, 2)), 'seg_len': np.zeros((n, 2)), 'alpha': np.ones((n, 2))}
    full['seg_len'][:, 0] = topo.lengths(mesh.vertices)
    for name, value in (('jn', jn), ('jt', jt), ('seg_len', seg_len), ('alpha', alpha)):
        full[name][inner] = value
    flags = np.zeros(n, dtype=bool)
    flags[inner] = interface
    return EdgeJumps(h=topo.lengths(mesh.vertices), kind=topo.kind, interface=flags,
                     elements=topo.elements, **full)


def test_regular_edge_addend(unit_square_mesh):
    h = np.sqrt(2.0)
    jumps = _jumps_on_unit_square(unit_square_mesh, False, jn=(0.5, 0.0), jt=(3.0, 0.0),
                                  seg_len=(h, 0.0), alpha=(2.0, 2.0))
    addends = _edge_addends(unit_square_mesh, jumps)
    # (h / 2) |F| jn^2 / alpha, shared by both elements
    assert addends['regular'] == pytest.approx([0.125, 0.125])
    assert addends['interface_normal'] == pytest.approx([0.0, 0.0])
    assert addends['interface_tangential'] == pytest.approx([0.0, 0.0])


def test_interface_edge_addends(unit_square_mesh):
    h = np.sqrt(2.0)
    jumps = _jumps_on_unit_square(unit_square_mesh, True, jn=(1.0, 2.0), jt=(0.5, 0.0),
                                  seg_len=(1.0, h - 1.0), alpha=(2.0, 1.0))
    addends = _edge_addends(unit_square_mesh, jumps)
    normal = 0.5 * h * (1.0 * 1.0 / 2.0 + (h - 1.0) * 4.0 / 1.0)
    tangential = 0.5 * h * (1.0 * 2.0 * 0.25)
    assert addends['interface_normal'] == pytest.approx([normal, normal])
    assert addends['interface_tangential'] == pytest.approx([tangential, tangential])
    assert addends['regular'] == pytest.approx([0.0, 0.0])


def test_straight_interface_has_vanishing_estimators(line, direct):
    state = solve_level(build_initial_mesh(8), line, direct)
    assert state.eta.total <= 1e-8
    assert state.xi.total == pytest.approx(state.eta.total, abs=1e-14)
    assert np.all(state.eta.addends['mismatch'] == 0.0)


@pytest.fixture
def ellipse_state(ellipse, direct):
    return solve_level(build_initial_mesh(8), ellipse, direct)


def test_eta_dominates_xi(ellipse_state):
    eta, xi = ellipse_state.eta, ellipse_state.xi
    assert list(eta.addends) == list(ADDENDS)
    assert np.all(xi.local <= eta.local + 1e-15)
    assert xi.total <= eta.total
    assert np.all(xi.addends['mismatch'] == 0.0)
    assert eta.addends['mismatch'].sum() > 0


def test_aggregation(ellipse_state):
    for indicators in (ellipse_state.eta, ellipse_state.xi, ellipse_state.true):
        assert indicators.total ** 2 == pytest.approx(np.sum(indicators.local ** 2), rel=1e-12)
        assert np.all(indicators.local >= 0)
    assert ellipse_state.energy_error == pytest.approx(ellipse_state.true.total)
    interior = ellipse_state.classification.tags != 0
    assert np.all(ellipse_state.eta.addends['mismatch'][interior] == 0.0)


@pytest.mark.parametrize("s", [0.5, 3.0])
def test_indicators_scale_linearly(ellipse_level, ellipse, rng, s):
    mesh, cls = ellipse_level
    space = build_space(mesh, cls, ellipse.beta_minus, ellipse.beta_plus)
    mismatch = all_mismatch_regions(mesh, cls)

    def indicators(values):
        grad_plus, grad_minus = space.piece_gradients(mesh, values)
        solution = DiscreteSolution(values=values, grad_plus=grad_plus, grad_minus=grad_minus)
        jumps = edge_jumps(mesh, cls, solution, ellipse)
        return (eta_indicators(mesh, cls, jumps, mismatch, solution),
                xi_indicators(mesh, cls, jumps, mismatch, solution))

    values = rng.standard_normal(mesh.n_vertices)
    eta, xi = indicators(values)
    eta_s, xi_s = indicators(s * values)
    assert eta_s.local == pytest.approx(s * eta.local, rel=1e-10)
    assert xi_s.total == pytest.approx(s * xi.total, rel=1e-10)


def test_dirichlet_edges_carry_no_jump(ellipse_state, ellipse):
    jumps = edge_jumps(ellipse_state.mesh, ellipse_state.classification, ellipse_state.solution, ellipse)
    dirichlet = jumps.kind == EdgeKind.DIRICHLET
    assert np.all(jumps.jn[dirichlet] == 0.0)
    assert np.all(jumps.jt[dirichlet] == 0.0)
    assert np.count_nonzero(jumps.interface) == len(ellipse_state.classification.splits)


def test_neumann_residual_of_exact_linear_field(line, direct):
    mesh = build_initial_mesh(4, neumann_sides=('top',))
    state = solve_level(mesh, line, direct)
    neumann = state.mesh.topology.kind == EdgeKind.NEUMANN
    jumps = edge_jumps(state.mesh, state.classification, state.solution, line)
    assert np.abs(jumps.jn[neumann]).max() <= 1e-8


def test_efficiency_index():
    assert efficiency_index(3.0, 1.0) == pytest.approx(3.0)
    assert np.isnan(efficiency_index(1.0, 0.0))
    assert np.isnan(efficiency_index(1.0, float('nan')))


def test_indicator_csv(tmp_path, ellipse_state):
    path = tmp_path / "eta.csv"
    write_indicator_csv(ellipse_state.eta, path)
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['element', 'eta_K'] + list(ADDENDS)
    assert len(rows) == ellipse_state.mesh.n_elements + 1
    eta_k = np.array([float(r[1]) for r in rows[1:]])
    assert eta_k == pytest.approx(ellipse_state.eta.local)


def test_mismatch_term_separates_eta_from_xi_on_petal(direct):
    state = solve_level(build_initial_mesh(16), petal_problem(10.0), direct)
    mismatch = state.eta.addends['mismatch']
    curved = np.flatnonzero(mismatch > 0)
    assert curved.size > 0.5 * state.classification.n_interface
    assert np.all(state.eta.local[curved] > state.xi.local[curved])
