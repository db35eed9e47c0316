"""
Quadrature Rules
Triangle and segment rules shared by load assembly, edge terms and the energy norm
"""

import numpy as np

# Dunavant degree-4 rule: (barycentric coordinates, weight) normalized to unit area
_A = 0.445948490915965
_B = 0.091576213509771
_WA = 0.223381589678011
_WB = 0.109951743655322

TRIANGLE_BARY = np.array([
    [_A, _A, 1 - 2 * _A],
    [_A, 1 - 2 * _A, _A],
    [1 - 2 * _A, _A, _A],
    [_B, _B, 1 - 2 * _B],
    [_B, 1 - 2 * _B, _B],
    [1 - 2 * _B, _B, _B],
])
TRIANGLE_WEIGHTS = np.array([_WA, _WA, _WA, _WB, _WB, _WB])

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(2)
# 2-point Gauss on [0, 1]
SEGMENT_POINTS = 0.5 * (_GAUSS_X + 1.0)
SEGMENT_WEIGHTS = 0.5 * _GAUSS_W


def triangle_points(tris: np.ndarray) -> np.ndarray:
    """Map the triangle rule onto triangles of shape (C, 3, 2) -> (C, 6, 2)."""
    return np.einsum('qk,ckd->cqd', TRIANGLE_BARY, tris)


def triangle_areas(tris: np.ndarray) -> np.ndarray:
    """Signed areas of triangles of shape (C, 3, 2)."""
    d1 = tris[:, 1] - tris[:, 0]
    d2 = tris[:, 2] - tris[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def segment_points(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Gauss points on segments p->q of shape (S, 2) -> (S, 2, 2)."""
    return p[:, None, :] + SEGMENT_POINTS[None, :, None] * (q - p)[:, None, :]


def subdivide(tris: np.ndarray, depth: int) -> tuple:
    """
    Uniformly refine triangles `depth` times (each pass splits into 4 by edge
    midpoints). Returns (children, parent) where parent[i] indexes `tris`.
    """
    parent = np.arange(len(tris))
    for _ in range(depth):
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        tris = np.concatenate([
            np.stack([a, ab, ca], axis=1),
            np.stack([ab, b, bc], axis=1),
            np.stack([ca, bc, c], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ])
        parent = np.tile(parent, 4)
    return tris, parent
