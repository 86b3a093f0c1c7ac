"""Triangle quadrature rules in barycentric form, plus local subdivision helpers.

Weights are normalized to sum to one, so integrals are weight-dot-values times
the physical triangle area. Corner-ward subdivision concentrates points near a
chosen vertex for integrands with radial blow-up there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_S15 = np.sqrt(15.0)

# degree -> (barycentric points, weights); smallest stocked rule per degree
_CENTROID = (np.array([[1.0, 1.0, 1.0]]) / 3.0, np.array([1.0]))
_MIDPOINTS = (
    np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
    np.array([1.0, 1.0, 1.0]) / 3.0,
)
_A7 = (6.0 + _S15) / 21.0
_B7 = (6.0 - _S15) / 21.0
_SEVEN_POINT = (
    np.array(
        [
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [1.0 - 2.0 * _A7, _A7, _A7],
            [_A7, 1.0 - 2.0 * _A7, _A7],
            [_A7, _A7, 1.0 - 2.0 * _A7],
            [1.0 - 2.0 * _B7, _B7, _B7],
            [_B7, 1.0 - 2.0 * _B7, _B7],
            [_B7, _B7, 1.0 - 2.0 * _B7],
        ]
    ),
    np.array(
        [
            9.0 / 40.0,
            (155.0 + _S15) / 1200.0,
            (155.0 + _S15) / 1200.0,
            (155.0 + _S15) / 1200.0,
            (155.0 - _S15) / 1200.0,
            (155.0 - _S15) / 1200.0,
            (155.0 - _S15) / 1200.0,
        ]
    ),
)

_STOCK = {1: _CENTROID, 2: _MIDPOINTS, 5: _SEVEN_POINT}


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates, weights summing to one."""

    degree: int
    points: np.ndarray
    weights: np.ndarray


def rule(degree: int = 5) -> QuadratureRule:
    """Smallest stocked rule exact for polynomials of the given total degree."""
    for d in sorted(_STOCK):
        if d >= degree:
            pts, wts = _STOCK[d]
            return QuadratureRule(d, pts.copy(), wts.copy())
    raise ValueError(f"no stocked rule of degree >= {degree}")


def triangle_areas(coords: np.ndarray) -> np.ndarray:
    """Signed areas of triangles given as (..., 3, 2) vertex coordinates."""
    e1 = coords[..., 1, :] - coords[..., 0, :]
    e2 = coords[..., 2, :] - coords[..., 0, :]
    return 0.5 * (e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])


def physical_points(coords: np.ndarray, qr: QuadratureRule) -> np.ndarray:
    """Map barycentric rule points onto triangles; (m, 3, 2) -> (m, k, 2)."""
    return np.einsum("qj,mjd->mqd", qr.points, coords)


def barycentric_coordinates(tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of physical points (n, 2) w.r.t. one triangle."""
    d = pts - tri[0]
    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    det = e1[0] * e2[1] - e1[1] * e2[0]
    if det == 0.0:
        raise ValueError("degenerate triangle")
    l1 = (d[:, 0] * e2[1] - d[:, 1] * e2[0]) / det
    l2 = (e1[0] * d[:, 1] - e1[1] * d[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def split_toward_vertex(tri: np.ndarray, local_vertex: int, levels: int) -> np.ndarray:
    """Graded 4-split chain toward one vertex; returns (3*levels + 1, 3, 2).

    Each level splits the current corner triangle at edge midpoints, emits the
    three children away from the vertex, and recurses on the corner child.
    """
    c, p, q = np.roll(np.asarray(tri, dtype=float), -local_vertex, axis=0)
    out = []
    for _ in range(levels):
        a = 0.5 * (c + p)
        b = 0.5 * (c + q)
        m = 0.5 * (p + q)
        out.append([a, p, m])
        out.append([b, m, q])
        out.append([a, m, b])
        p, q = a, b
    out.append([c, p, q])
    return np.asarray(out)


def split_uniform(tri: np.ndarray, levels: int) -> np.ndarray:
    """Uniform 4-split applied `levels` times; returns (4**levels, 3, 2)."""
    tris = np.asarray(tri, dtype=float)[None, :, :]
    for _ in range(levels):
        v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]
        m01 = 0.5 * (v0 + v1)
        m12 = 0.5 * (v1 + v2)
        m20 = 0.5 * (v2 + v0)
        tris = np.concatenate(
            [
                np.stack([v0, m01, m20], axis=1),
                np.stack([v1, m12, m01], axis=1),
                np.stack([v2, m20, m12], axis=1),
                np.stack([m01, m12, m20], axis=1),
            ]
        )
    return tris
