"""
Error Estimator
Edge jumps, the residual indicator eta_K with its mismatch term, the variant
xi_K, the true-error indicator and the efficiency index
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from interface_geometry import InterfaceClassification, MismatchRegion
from mesh import EdgeKind, Mesh
from problems import element_energy_errors

logger = logging.getLogger(__name__)

ADDENDS = ('interface_normal', 'interface_tangential', 'mismatch', 'regular')


class EstimatorError(ValueError):
    """Inputs needed by an indicator are missing."""


@dataclass(frozen=True)
class EdgeJumps:
    """
    Piecewise-constant jumps per edge, two segment columns each.

    On interface edges column 0 is F+ and column 1 is F-; other edges use
    column 0 for the whole edge and carry zero length in column 1.
    alpha is alpha~_F per segment (max of the two traces).
    """
    jn: np.ndarray
    jt: np.ndarray
    seg_len: np.ndarray
    alpha: np.ndarray
    h: np.ndarray
    kind: np.ndarray
    interface: np.ndarray
    elements: np.ndarray = field(repr=False)
    beta_minus: float = 1.0
    beta_plus: float = 1.0


@dataclass(frozen=True)
class Indicators:
    """Squared per-element contributions by addend; local = sqrt of their sum."""
    kind: str
    addends: Dict[str, np.ndarray]

    @property
    def local_squared(self) -> np.ndarray:
        return np.sum(list(self.addends.values()), axis=0)

    @property
    def local(self) -> np.ndarray:
        return np.sqrt(self.local_squared)

    @property
    def total(self) -> float:
        return float(np.sqrt(np.sum(self.local_squared)))


def _piece_alpha(tags: np.ndarray, k: np.ndarray, side: np.ndarray, beta_minus: float, beta_plus: float):
    own = np.where(tags[k] > 0, beta_plus, beta_minus)
    piece = np.where(side > 0, beta_plus, beta_minus)
    return np.where(tags[k] == 0, piece, own)


def _piece_grad(solution, k: np.ndarray, side: np.ndarray) -> np.ndarray:
    return np.where(side[:, None] > 0, solution.grad_plus[k], solution.grad_minus[k])


def edge_jumps(mesh: Mesh, classification: InterfaceClassification, solution, problem) -> EdgeJumps:
    topo = mesh.topology
    verts = mesh.vertices
    n_edges = topo.n_edges
    h = topo.lengths(verts)
    normal = topo.normals(verts)
    tangent = topo.tangents(verts)
    tags = classification.tags
    bm, bp = problem.beta_minus, problem.beta_plus

    interface = np.zeros(n_edges, dtype=bool)
    seg_len = np.zeros((n_edges, 2))
    seg_len[:, 0] = h
    sides = np.repeat(classification.vertex_sides[topo.edges[:, 0]][:, None], 2, axis=1).astype(np.int8)
    for f, split in classification.splits.items():
        interface[f] = True
        seg_len[f] = (split.h_plus, split.h_minus)
        sides[f] = (1, -1)

    k1 = topo.elements[:, 0]
    k2 = topo.elements[:, 1]
    inner = k2 >= 0
    k2c = np.where(inner, k2, 0)
    neumann = topo.kind == EdgeKind.NEUMANN

    jn = np.zeros((n_edges, 2))
    jt = np.zeros((n_edges, 2))
    alpha = np.zeros((n_edges, 2))
    mid = 0.5 * (verts[topo.edges[:, 0]] + verts[topo.edges[:, 1]])
    g_n = problem.neumann_data(mid[neumann], normal[neumann]) if neumann.any() else np.zeros(0)

    for col in range(2):
        s = sides[:, col]
        a1 = _piece_alpha(tags, k1, s, bm, bp)
        a2 = _piece_alpha(tags, k2c, s, bm, bp)
        g1 = _piece_grad(solution, k1, s)
        g2 = _piece_grad(solution, k2c, s)
        flux1 = np.einsum('ed,ed->e', a1[:, None] * g1, normal)
        flux2 = np.einsum('ed,ed->e', a2[:, None] * g2, normal)
        jn[inner, col] = (flux1 - flux2)[inner]
        jt[inner, col] = np.einsum('ed,ed->e', g1 - g2, tangent)[inner]
        jn[neumann, col] = flux1[neumann] + g_n
        alpha[:, col] = np.where(inner, np.maximum(a1, a2), a1)

    # Dirichlet edges carry exact zeros
    dirichlet = topo.kind == EdgeKind.DIRICHLET
    jn[dirichlet] = 0.0
    jt[dirichlet] = 0.0
    return EdgeJumps(jn=jn, jt=jt, seg_len=seg_len, alpha=alpha, h=h, kind=topo.kind,
                     interface=interface, elements=topo.elements, beta_minus=bm, beta_plus=bp)


def _edge_addends(mesh: Mesh, jumps: EdgeJumps) -> Dict[str, np.ndarray]:
    m = mesh.n_elements
    normal_sq = np.sum(jumps.seg_len * jumps.jn ** 2 / jumps.alpha, axis=1)
    tangential_sq = np.sum(jumps.seg_len * jumps.alpha * jumps.jt ** 2, axis=1)
    k1, k2 = jumps.elements[:, 0], jumps.elements[:, 1]
    inner = k2 >= 0
    half_h = 0.5 * jumps.h

    def scatter(values, mask, both=True):
        out = np.bincount(k1[mask], weights=values[mask], minlength=m)
        if both:
            out += np.bincount(k2[mask], weights=values[mask], minlength=m)
        return out

    iface = jumps.interface & inner
    regular = inner & ~jumps.interface
    neumann = jumps.kind == EdgeKind.NEUMANN
    return {
        'interface_normal': scatter(half_h * normal_sq, iface),
        'interface_tangential': scatter(half_h * tangential_sq, iface),
        'regular': scatter(half_h * normal_sq, regular) + scatter(jumps.h * normal_sq, neumann, both=False),
    }


def _mismatch_addend(mesh: Mesh, classification: InterfaceClassification,
                     mismatch: Dict[int, MismatchRegion], solution, jumps: EdgeJumps) -> np.ndarray:
    out = np.zeros(mesh.n_elements)
    missing = [k for k in classification.cuts if k not in mismatch]
    if missing:
        raise EstimatorError(f"Missing mismatch regions for interface elements {sorted(missing)[:8]}")
    for k in classification.cuts:
        out[k] = mismatch[k].energy(jumps.beta_minus, jumps.beta_plus,
                                    solution.grad_minus[k], solution.grad_plus[k])
    return out


def eta_indicators(mesh: Mesh, classification: InterfaceClassification, jumps: EdgeJumps,
                   mismatch: Dict[int, MismatchRegion], solution) -> Indicators:
    """
    eta_K^2: weighted normal and tangential jumps on interface edges, the
    mismatch term ||alpha~^1/2 grad u_T||^2 over S_K, normal jumps on the other
    interior edges and the Neumann residual. The element residual is omitted.
    """
    addends = _edge_addends(mesh, jumps)
    addends['mismatch'] = _mismatch_addend(mesh, classification, mismatch, solution, jumps)
    return Indicators(kind='eta', addends={name: addends[name] for name in ADDENDS})


def xi_indicators(mesh: Mesh, classification: InterfaceClassification, jumps: EdgeJumps,
                  mismatch: Dict[int, MismatchRegion], solution) -> Indicators:
    """eta without the mismatch term."""
    addends = _edge_addends(mesh, jumps)
    addends['mismatch'] = np.zeros(mesh.n_elements)
    return Indicators(kind='xi', addends={name: addends[name] for name in ADDENDS})


def true_error_indicators(mesh: Mesh, classification: InterfaceClassification, solution, problem,
                          mismatch: Optional[Dict[int, MismatchRegion]] = None) -> Indicators:
    errors = element_energy_errors(mesh, classification, solution, problem, mismatch=mismatch)
    return Indicators(kind='true_error', addends={'energy': errors})


def efficiency_index(eta: float, energy_error: float) -> float:
    if not np.isfinite(energy_error) or energy_error <= 0:
        logger.warning("Efficiency index undefined for energy error %r", energy_error)
        return float('nan')
    return float(eta / energy_error)


def write_indicator_csv(indicators: Indicators, path):
    """One row per element: element, eta_K and the squared addends."""
    names = list(indicators.addends)
    local = indicators.local
    with open(Path(path), 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['element', 'eta_K'] + names)
        for k in range(len(local)):
            writer.writerow([k, repr(float(local[k]))] + [repr(float(indicators.addends[n][k])) for n in names])
