"""P1 Lagrange assembly, Dirichlet elimination, quadrature, and error norms.

All matrices are scipy CSR; vectors are dense nodal arrays over every mesh
vertex (free and constrained alike). Integrals near re-entrant corners use a
graded local subdivision of the corner-touching elements, since the fields of
interest behave like fractional powers of the corner distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .mesh import TriMesh
from .quadrature import (QuadratureRule, barycentric_coordinates,
                         physical_points, rule, split_toward_vertex,
                         split_uniform, triangle_areas)

_MASS_LOCAL = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def _element_geometry(mesh: TriMesh):
    """Coordinates (m,3,2), areas (m,), P1 basis gradients (m,3,2)."""
    coords = mesh.vertices[mesh.triangles]
    areas = triangle_areas(coords)
    if np.any(areas <= 0.0):
        raise ValueError("degenerate or inverted triangle")
    x = coords[..., 0]
    y = coords[..., 1]
    grads = np.empty_like(coords)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = y[:, j] - y[:, k]
        grads[:, i, 1] = x[:, k] - x[:, j]
    grads /= (2.0 * areas)[:, None, None]
    return coords, areas, grads


def _scatter(mesh: TriMesh, local: np.ndarray) -> sparse.csr_matrix:
    """Scatter per-element 3x3 blocks into a CSR matrix."""
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    A = sparse.coo_matrix((local.ravel(), (rows, cols)),
                          shape=(mesh.n_vertices, mesh.n_vertices))
    return A.tocsr()


def assemble_stiffness(mesh: TriMesh) -> sparse.csr_matrix:
    """Galerkin matrix of the Dirichlet form; exact for P1."""
    _, areas, grads = _element_geometry(mesh)
    local = np.einsum("mid,mjd->mij", grads, grads) * areas[:, None, None]
    return _scatter(mesh, local)


def assemble_mass(mesh: TriMesh) -> sparse.csr_matrix:
    _, areas, _ = _element_geometry(mesh)
    local = _MASS_LOCAL[None, :, :] * areas[:, None, None]
    return _scatter(mesh, local)


def assemble_advection(mesh: TriMesh, b) -> sparse.csr_matrix:
    """Matrix of (b . grad u, v) for a constant velocity b; exact for P1."""
    b = np.asarray(b, dtype=float)
    _, areas, grads = _element_geometry(mesh)
    bg = grads @ b                       # (m, 3): b . grad(phi_j)
    local = np.repeat(bg[:, None, :], 3, axis=1) * (areas / 3.0)[:, None, None]
    return _scatter(mesh, local)


def lump_mass(M) -> np.ndarray:
    """Row-sum lumping; equals vertex-quadrature mass for P1."""
    diag = np.asarray(M.sum(axis=1)).ravel()
    if np.any(diag <= 0.0):
        raise ValueError("lumped mass has a non-positive entry")
    return diag


def interpolate(mesh: TriMesh, func) -> np.ndarray:
    return np.asarray(func(mesh.vertices), dtype=float)


# -- quadrature layouts ------------------------------------------------------


@dataclass(frozen=True)
class QuadLayout:
    """Flattened quadrature data: physical points, absolute weights, owning
    element ids, and barycentric coordinates w.r.t. the owning element."""

    points: np.ndarray
    weights: np.ndarray
    element: np.ndarray
    bary: np.ndarray


def _corner_elements(mesh: TriMesh) -> dict:
    """element index -> local index of the corner vertex it touches."""
    out = {}
    for c in mesh.corners:
        hits = np.nonzero(mesh.triangles == c.vertex)
        for e, loc in zip(*hits):
            out[int(e)] = int(loc)
    return out


def quad_layout(mesh: TriMesh, quad: QuadratureRule = None,
                corner_levels: int = 3, refine_mask=None,
                refine_levels: int = 2) -> QuadLayout:
    """Quadrature points over all elements.

    Elements touching a re-entrant corner are subdivided corner_levels times
    toward the corner before the rule is applied. Elements selected by
    refine_mask get refine_levels uniform 4-splits (for integrands with
    interior kinks, e.g. cutoff annuli).
    """
    qr = rule(5) if quad is None else quad
    coords = mesh.vertices[mesh.triangles]
    areas = triangle_areas(coords)
    special = _corner_elements(mesh) if corner_levels > 0 else {}
    is_special = np.zeros(mesh.n_triangles, dtype=bool)
    if special:
        is_special[list(special)] = True
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    if refine_mask is not None:
        mask = np.asarray(refine_mask, dtype=bool) & ~is_special

    plain = np.flatnonzero(~mask & ~is_special)

    chunks = []
    pts = physical_points(coords[plain], qr)
    wts = np.abs(areas[plain])[:, None] * qr.weights[None, :]
    elem = np.repeat(plain, len(qr.weights))
    bary = np.tile(qr.points, (len(plain), 1))
    chunks.append((pts.reshape(-1, 2), wts.ravel(), elem, bary))

    def _sub_chunk(e, subtris):
        sub_pts = physical_points(subtris, qr).reshape(-1, 2)
        sub_areas = np.abs(triangle_areas(subtris))
        sub_wts = (sub_areas[:, None] * qr.weights[None, :]).ravel()
        sub_bary = barycentric_coordinates(coords[e], sub_pts)
        sub_elem = np.full(len(sub_pts), e, dtype=np.int64)
        return sub_pts, sub_wts, sub_elem, sub_bary

    for e, loc in special.items():
        chunks.append(_sub_chunk(e, split_toward_vertex(coords[e], loc,
                                                        corner_levels)))
    for e in np.flatnonzero(mask):
        chunks.append(_sub_chunk(int(e), split_uniform(coords[e], refine_levels)))

    return QuadLayout(
        points=np.concatenate([c[0] for c in chunks]),
        weights=np.concatenate([c[1] for c in chunks]),
        element=np.concatenate([c[2] for c in chunks]),
        bary=np.concatenate([c[3] for c in chunks]),
    )


def _eval_field(f, t, pts):
    vals = f(pts) if t is None else f(t, pts)
    vals = np.asarray(vals, dtype=float)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        where = pts[np.argmax(bad)]
        raise ValueError(f"field is not finite at quadrature point "
                         f"({where[0]:.6g}, {where[1]:.6g})")
    return vals


def assemble_load(mesh: TriMesh, f, t=None, quad: QuadratureRule = None,
                  corner_levels: int = 3, layout: QuadLayout = None) -> np.ndarray:
    """Nodal load vector F_i = integral of f * phi_i by composite quadrature.

    f is called as f(points) or, when t is given, f(t, points).
    """
    lay = layout if layout is not None else quad_layout(mesh, quad, corner_levels)
    fv = _eval_field(f, t, lay.points)
    contrib = lay.weights * fv
    F = np.zeros(mesh.n_vertices)
    tri = mesh.triangles
    for i in range(3):
        np.add.at(F, tri[lay.element, i], contrib * lay.bary[:, i])
    return F


def assemble_gradient_load(mesh: TriMesh, q, t=None, quad: QuadratureRule = None,
                           corner_levels: int = 3,
                           layout: QuadLayout = None) -> np.ndarray:
    """Nodal vector r_i = integral of q . grad(phi_i) for a vector field q.

    q returns (m, 2) values; the basis gradients are constant per element, so
    only q is sampled at the quadrature points.
    """
    lay = layout if layout is not None else quad_layout(mesh, quad, corner_levels)
    qv = np.asarray(q(lay.points) if t is None else q(t, lay.points), dtype=float)
    if qv.shape != (len(lay.points), 2):
        raise ValueError(f"gradient field returned shape {qv.shape}")
    if not np.all(np.isfinite(qv)):
        raise ValueError("gradient field is not finite at a quadrature point")
    _, _, grads = _element_geometry(mesh)
    dots = np.einsum("pjd,pd->pj", grads[lay.element], qv)
    F = np.zeros(mesh.n_vertices)
    np.add.at(F, mesh.triangles[lay.element], lay.weights[:, None] * dots)
    return F


def integrate(mesh: TriMesh, func, t=None, quad: QuadratureRule = None,
              corner_levels: int = 3, refine_mask=None,
              refine_levels: int = 2, layout: QuadLayout = None) -> float:
    """Integral of a scalar field over the mesh."""
    lay = layout if layout is not None else quad_layout(
        mesh, quad, corner_levels, refine_mask, refine_levels)
    return float(lay.weights @ _eval_field(func, t, lay.points))


def integrate_against_p1(mesh: TriMesh, func, u: np.ndarray, t=None,
                         quad: QuadratureRule = None, corner_levels: int = 3,
                         refine_mask=None, refine_levels: int = 2,
                         layout: QuadLayout = None) -> float:
    """Integral of func * u_h for a nodal P1 field u."""
    lay = layout if layout is not None else quad_layout(
        mesh, quad, corner_levels, refine_mask, refine_levels)
    fv = _eval_field(func, t, lay.points)
    uh = np.einsum("pj,pj->p", np.asarray(u)[mesh.triangles[lay.element]],
                   lay.bary)
    return float(lay.weights @ (fv * uh))


# -- boundary conditions ------------------------------------------------------


def boundary_values(mesh: TriMesh, g, t=None) -> np.ndarray:
    """Full nodal vector holding g on boundary vertices, zero elsewhere."""
    out = np.zeros(mesh.n_vertices)
    fixed = np.flatnonzero(mesh.boundary_vertex)
    if g is None:
        return out
    if np.isscalar(g):
        out[fixed] = float(g)
    elif callable(g):
        pts = mesh.vertices[fixed]
        out[fixed] = np.asarray(g(pts) if t is None else g(t, pts), dtype=float)
    else:
        g = np.asarray(g, dtype=float)
        out[fixed] = g[fixed] if g.shape == (mesh.n_vertices,) else g
    return out


@dataclass
class DirichletSystem:
    """Reduced SPD system after eliminating constrained vertices."""

    matrix: sparse.csr_matrix
    rhs: np.ndarray
    lift: np.ndarray
    free: np.ndarray
    fixed: np.ndarray

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        full = self.lift.copy()
        full[self.free] = x_free
        return full


def apply_dirichlet(A, rhs, mesh: TriMesh, g=None, t=None) -> DirichletSystem:
    """Eliminate boundary vertices: returns the free block of A, the lifted
    right-hand side, and the boundary lift vector."""
    fixed = np.flatnonzero(mesh.boundary_vertex)
    free = np.flatnonzero(~mesh.boundary_vertex)
    lift = boundary_values(mesh, g, t)
    rhs = np.zeros(mesh.n_vertices) if rhs is None else np.asarray(rhs, dtype=float)
    reduced_rhs = (rhs - A @ lift)[free]
    A_ff = A[free][:, free].tocsr()
    return DirichletSystem(A_ff, reduced_rhs, lift, free, fixed)


# -- error norms --------------------------------------------------------------


def error_norm(mesh: TriMesh, v_h: np.ndarray, u_exact=None, kind: str = "l2",
               alpha: float = None, corner: int = 0, u_grad=None,
               quad: QuadratureRule = None, corner_levels: int = 3,
               region=None) -> float:
    """Norm of u_exact - v_h.

    kind: "l2", "weighted_l2" (weight r^(2*alpha) about the given corner),
    "h1_semi" (needs u_grad), or "linf_nodal" (vertex maximum).
    region: optional predicate on points; keeps elements whose centroid
    satisfies it, so the reported norm is over a union of elements.
    """
    v_h = np.asarray(v_h, dtype=float)
    if kind == "linf_nodal":
        diff = v_h if u_exact is None else u_exact(mesh.vertices) - v_h
        return float(np.max(np.abs(diff)))

    lay = quad_layout(mesh, quad, corner_levels)
    keep = np.ones(len(lay.weights), dtype=bool)
    if region is not None:
        coords = mesh.vertices[mesh.triangles]
        centroids = coords.mean(axis=1)
        keep = np.asarray(region(centroids), dtype=bool)[lay.element]

    if kind == "h1_semi":
        if u_grad is None:
            raise ValueError("h1_semi needs the exact gradient")
        _, _, grads = _element_geometry(mesh)
        gh = np.einsum("pjd,pj->pd", grads[lay.element],
                       v_h[mesh.triangles[lay.element]])
        diff = np.asarray(u_grad(lay.points), dtype=float) - gh
        val = lay.weights[keep] @ (diff[keep] ** 2).sum(axis=1)
        return float(np.sqrt(val))

    uh = np.einsum("pj,pj->p", v_h[mesh.triangles[lay.element]], lay.bary)
    diff = uh if u_exact is None else _eval_field(u_exact, None, lay.points) - uh
    w = lay.weights.copy()
    if kind == "weighted_l2":
        if alpha is None or not 0.0 <= alpha < 1.0:
            raise ValueError("weighted_l2 needs 0 <= alpha < 1")
        center = mesh.corner_position(corner)
        r = np.linalg.norm(lay.points - center, axis=1)
        w *= r ** (2.0 * alpha)
    elif kind != "l2":
        raise ValueError(f"unknown norm kind {kind!r}")
    return float(np.sqrt(w[keep] @ diff[keep] ** 2))


# -- misc ---------------------------------------------------------------------


@dataclass(frozen=True)
class TimeSeparableField:
    """Sum of products coefficient(t) * profile(points).

    The separable structure lets time steppers assemble each spatial load once
    and rescale it per step.
    """

    terms: tuple

    def __call__(self, t, pts):
        out = np.zeros(len(pts))
        for coef, profile in self.terms:
            out += coef(t) * np.asarray(profile(pts), dtype=float)
        return out


def export_coo(A, path) -> None:
    """ASCII (row, col, value) triples for debugging."""
    coo = sparse.coo_matrix(A)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(v)!r}\n")
