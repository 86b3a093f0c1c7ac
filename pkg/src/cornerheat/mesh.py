"""Conforming P1 triangulations of polygons with re-entrant corners.

Meshes are immutable flat arrays. Vertices are ordered lexicographically by
(y, x) at construction; uniform refinement keeps parent vertex indices and
appends edge midpoints in the same (y, x) order, so corner metadata survives
refinement unchanged. Around every re-entrant corner the one-element patch is
mirror-symmetric about the corner bisector, which the correction form relies
on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import triangle_areas

_ON_SEGMENT_TOL = 1e-10

KIND_INTERIOR = 0
KIND_DIRICHLET = 1
KIND_NEUMANN = 2

_KIND_CODES = {KIND_DIRICHLET: "d", KIND_NEUMANN: "n"}
_KIND_FROM_CODE = {"d": KIND_DIRICHLET, "n": KIND_NEUMANN}


class MeshError(Exception):
    """A mesh failed a structural invariant."""


@dataclass(frozen=True)
class ReentrantCorner:
    """Boundary vertex with interior angle above pi.

    vertex: index into the mesh vertex array.
    theta: interior opening angle, pi < theta < 2*pi.
    bisector_angle: global direction of the wedge bisector.
    edge_angle: global direction of the boundary edge where the local polar
        angle starts; the domain wedge spans [0, theta] counter-clockwise.
    """

    vertex: int
    theta: float
    bisector_angle: float
    edge_angle: float

    def __post_init__(self):
        if not np.pi < self.theta < 2.0 * np.pi:
            raise MeshError(f"corner angle {self.theta} outside (pi, 2*pi)")


@dataclass(frozen=True)
class CornerLayers:
    """Disjoint element rings around a corner; layer 1 touches the vertex."""

    corner_index: int
    layers: tuple


class TriMesh:
    """Triangulation with boundary tags and re-entrant corner metadata.

    vertices: (nv, 2) float, read-only.
    triangles: (nt, 3) int, counter-clockwise, read-only.
    boundary_kind: (nv,) uint8, 0 interior / 1 dirichlet / 2 neumann.
    boundary_segment: (nv,) int, polygon segment id, -1 in the interior.
    boundary_vertex: (nv,) bool mask.
    corners: tuple of ReentrantCorner.
    level: 1 on a coarse mesh, +1 per uniform refinement.
    h, h_min: max / min element diameter (longest edge).
    """

    def __init__(self, vertices, triangles, segments, corners=(), level=1,
                 neumann_segments=(), boundary_tags=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must be (nt, 3)")
        if triangles.min(initial=0) < 0 or triangles.max(initial=-1) >= len(vertices):
            raise MeshError("triangle vertex index out of range")
        coords = vertices[triangles]
        areas = triangle_areas(coords)
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise MeshError(f"triangle {bad} has signed area {areas[bad]:.3e}")

        self.vertices = vertices
        self.triangles = triangles
        self.corners = tuple(corners)
        self.level = int(level)
        self._segments = tuple((tuple(map(float, a)), tuple(map(float, b)))
                               for a, b in segments)
        self._neumann_segments = frozenset(int(s) for s in neumann_segments)

        edge_lengths = np.concatenate([
            np.linalg.norm(coords[:, 1] - coords[:, 0], axis=1),
            np.linalg.norm(coords[:, 2] - coords[:, 1], axis=1),
            np.linalg.norm(coords[:, 0] - coords[:, 2], axis=1),
        ])
        diam = edge_lengths.reshape(3, -1).max(axis=0)
        self.h = float(diam.max())
        self.h_min = float(diam.min())

        if boundary_tags is None:
            self._tag_boundary()
        else:
            kind, segment = boundary_tags
            self.boundary_kind = np.ascontiguousarray(kind, dtype=np.uint8)
            self.boundary_segment = np.ascontiguousarray(segment, dtype=np.int64)
            self.boundary_vertex = self.boundary_kind != KIND_INTERIOR

        for c in self.corners:
            if not self.boundary_vertex[c.vertex]:
                raise MeshError(f"corner vertex {c.vertex} is not on the boundary")
        for arr in (self.vertices, self.triangles, self.boundary_kind,
                    self.boundary_segment, self.boundary_vertex):
            arr.setflags(write=False)

    # -- derived structure ------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edges(self):
        """Unique undirected edges (ne, 2) and per-edge incidence counts."""
        t = self.triangles
        raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        raw.sort(axis=1)
        uniq, counts = np.unique(raw, axis=0, return_counts=True)
        return uniq, counts

    def boundary_edges(self):
        uniq, counts = self.edges()
        return uniq[counts == 1]

    def corner_position(self, corner: int = 0) -> np.ndarray:
        return self.vertices[self.corners[corner].vertex]

    def _tag_boundary(self):
        nv = self.n_vertices
        kind = np.zeros(nv, dtype=np.uint8)
        segment = np.full(nv, -1, dtype=np.int64)
        uniq, counts = self.edges()
        if counts.max(initial=1) > 2:
            raise MeshError("an edge is shared by more than two triangles")
        on_boundary = np.unique(uniq[counts == 1])
        for v in on_boundary:
            seg = self._classify_segment(self.vertices[v])
            if seg < 0:
                raise MeshError(f"boundary vertex {v} at {self.vertices[v]} "
                                "lies on no polygon segment")
            segment[v] = seg
            kind[v] = (KIND_NEUMANN if seg in self._neumann_segments
                       else KIND_DIRICHLET)
        self.boundary_kind = kind
        self.boundary_segment = segment
        self.boundary_vertex = kind != KIND_INTERIOR

    def _classify_segment(self, p) -> int:
        for sid, (a, b) in enumerate(self._segments):
            ax, ay = a
            bx, by = b
            dx, dy = bx - ax, by - ay
            length = np.hypot(dx, dy)
            cross = (p[0] - ax) * dy - (p[1] - ay) * dx
            if abs(cross) > _ON_SEGMENT_TOL * length:
                continue
            dot = (p[0] - ax) * dx + (p[1] - ay) * dy
            if -_ON_SEGMENT_TOL * length <= dot <= length * (length + _ON_SEGMENT_TOL):
                return sid
        return -1


# -- construction helpers ---------------------------------------------------


def _point_index():
    """Duplicate-merging point registry; returns (list, index function)."""
    seen = {}
    out = []

    def index(p):
        k = (round(p[0], 12), round(p[1], 12))
        if k not in seen:
            seen[k] = len(out)
            out.append((float(p[0]), float(p[1])))
        return seen[k]

    return out, index


def _sorted_mesh(tris, segments, corner_specs, level=1):
    """Register coordinate triangles, sort vertices by (y, x), build the mesh."""
    points, index = _point_index()
    triangles = [[index(p) for p in t] for t in tris]
    vertices = np.asarray(points, dtype=float)
    order = np.lexsort((vertices[:, 0], vertices[:, 1]))
    remap = np.empty(len(vertices), dtype=np.int64)
    remap[order] = np.arange(len(vertices))
    vertices = vertices[order]
    triangles = remap[np.asarray(triangles, dtype=np.int64)]
    corners = []
    for pos, theta, bisector, edge in corner_specs:
        dist = np.linalg.norm(vertices - np.asarray(pos, dtype=float), axis=1)
        idx = int(np.argmin(dist))
        if dist[idx] > 1e-12:
            raise MeshError(f"corner position {pos} is not a mesh vertex")
        corners.append(ReentrantCorner(idx, theta, bisector, edge))
    return TriMesh(vertices, triangles, segments, corners, level)


def _square_halves(x0, y0, s, diagonal):
    """Two CCW triangles tiling [x0, x0+s] x [y0, y0+s].

    diagonal "main" runs lower-left to upper-right; "anti" the other way.
    """
    p00 = (x0, y0)
    p10 = (x0 + s, y0)
    p11 = (x0 + s, y0 + s)
    p01 = (x0, y0 + s)
    if diagonal == "main":
        return [(p00, p10, p11), (p00, p11, p01)]
    return [(p00, p10, p01), (p10, p11, p01)]


def build_l_shape() -> TriMesh:
    """Coarse mesh of (-1, 1)^2 minus the closed quadrant [0, 1] x [-1, 0].

    Three unit squares, each cut into 2x2 squares of side 1/2, each square
    split by the diagonal pointing at the origin. The re-entrant corner at the
    origin opens 3*pi/2 counter-clockwise from the +x edge with bisector at
    3*pi/4; its patch is 6 congruent right isosceles triangles symmetric about
    the bisector.
    """
    s = 0.5
    tris = []
    for x0 in (0.0, 0.5):           # upper right quadrant: main diagonals
        for y0 in (0.0, 0.5):
            tris += _square_halves(x0, y0, s, "main")
    for x0 in (-1.0, -0.5):         # upper left: anti diagonals
        for y0 in (0.0, 0.5):
            tris += _square_halves(x0, y0, s, "anti")
    for x0 in (-1.0, -0.5):         # lower left: main diagonals
        for y0 in (-1.0, -0.5):
            tris += _square_halves(x0, y0, s, "main")

    segments = [((0, 0), (1, 0)), ((1, 0), (1, 1)), ((1, 1), (-1, 1)),
                ((-1, 1), (-1, -1)), ((-1, -1), (0, -1)), ((0, -1), (0, 0))]
    corner = ((0.0, 0.0), 1.5 * np.pi, 0.75 * np.pi, 0.0)
    return _sorted_mesh(tris, segments, [corner])


def build_square(n: int = 2, size: float = 1.0) -> TriMesh:
    """Structured n x n mesh of (0, size)^2, main diagonals, no corners."""
    s = size / n
    tris = []
    for i in range(n):
        for j in range(n):
            tris += _square_halves(i * s, j * s, s, "main")
    segments = [((0, 0), (size, 0)), ((size, 0), (size, size)),
                ((size, size), (0, size)), ((0, size), (0, 0))]
    return _sorted_mesh(tris, segments, [])


def build_fan_sector(theta: float) -> TriMesh:
    """Sector polygon of opening theta at the origin, fanned into pi/4 slices
    of unit radius.

    The corner layer reproduces the slice pattern used at the shipped
    re-entrant corners; that pattern and the opening are all the correction
    weight depends on (the Dirichlet form is scale-invariant in 2D and the
    weight limit is local), so this small domain serves as the weight-search
    stand-in for corners whose host domain leaves the corner wedge.
    """
    step = np.pi / 4.0
    slices = int(round(theta / step))
    if abs(slices * step - theta) > 1e-12:
        raise MeshError(f"sector opening {theta} is not a multiple of pi/4")
    if not np.pi < theta < 2.0 * np.pi:
        raise MeshError(f"sector opening {theta} is not re-entrant")
    origin = (0.0, 0.0)
    ring = [(float(np.cos(k * step)), float(np.sin(k * step)))
            for k in range(slices + 1)]
    tris = [(origin, ring[k], ring[k + 1]) for k in range(slices)]
    segments = [(origin, ring[0])]
    segments += [(ring[k], ring[k + 1]) for k in range(slices)]
    segments += [(ring[-1], origin)]
    return _sorted_mesh(tris, segments, [(origin, theta, 0.5 * theta, 0.0)])


def _fan_block(apex, ring_start_angle, outer, pattern):
    """Seven-slice fan tiling a unit-square block minus a pi/4 notch.

    apex: the 7*pi/4 corner at the block center. Ring vertices sit at radius
    1/2 every pi/4 starting from ring_start_angle (the corner's local phi = 0
    edge). outer: the four block corner points in the ring's angular order.
    pattern: (ring index k, outer index) pairs for the seven transition
    triangles (ring[k], outer, ring[k+1]); the missing eighth ring sector is
    the notch. Returns 14 CCW triangles.
    """
    ax, ay = apex
    ring = [(ax + 0.5 * np.cos(ring_start_angle + k * np.pi / 4.0),
             ay + 0.5 * np.sin(ring_start_angle + k * np.pi / 4.0))
            for k in range(8)]
    tris = [(apex, ring[k], ring[k + 1]) for k in range(7)]
    tris += [(ring[k], outer[oc], ring[k + 1]) for k, oc in pattern]
    return tris


def build_notched_rectangle() -> TriMesh:
    """Mesh of (0, 4) x (0, 3) minus a right isosceles triangular hole.

    The hole has its right-angle apex at (2, 1) and hypotenuse from (1, 2) to
    (3, 2), so the domain keeps three re-entrant corners: 3*pi/2 at the apex
    and 7*pi/4 at both hypotenuse ends. Each corner patch is a fan of
    congruent isosceles triangles symmetric about its bisector, and the whole
    hole stays strictly inside the rectangle.
    """
    s = 0.5
    tris = []

    # grid squares indexed by (i, j) covering [i/2, (i+1)/2] x [j/2, (j+1)/2]
    hole_squares = {(3, 3), (4, 3)}
    fan_b = {(1, 3), (2, 3), (1, 4), (2, 4)}
    fan_c = {(5, 3), (6, 3), (5, 4), (6, 4)}
    apex_squares = {(3, 1), (4, 1), (3, 2), (4, 2)}
    special = hole_squares | fan_b | fan_c | apex_squares
    for i in range(8):
        for j in range(6):
            if (i, j) in special:
                continue
            diag = "main" if (i + j) % 2 == 0 else "anti"
            tris += _square_halves(i * s, j * s, s, diag)

    # apex corner (2, 1): six right isosceles half-squares spanning 3*pi/2,
    # spokes every pi/4 from the leg direction 3*pi/4, bisector pointing down
    a = (2.0, 1.0)
    spokes = [(1.5, 1.5), (1.5, 1.0), (1.5, 0.5), (2.0, 0.5),
              (2.5, 0.5), (2.5, 1.0), (2.5, 1.5)]
    tris += [(a, spokes[k], spokes[k + 1]) for k in range(6)]

    # hypotenuse corners: seven-slice fans with quadrant transition triangles
    b = (1.0, 2.0)
    tris += _fan_block(
        b, 0.0,
        [(1.5, 2.5), (0.5, 2.5), (0.5, 1.5), (1.5, 1.5)],
        [(0, 0), (1, 0), (2, 1), (3, 1), (4, 2), (5, 2), (6, 3)])
    c = (3.0, 2.0)
    tris += _fan_block(
        c, 1.25 * np.pi,
        [(2.5, 1.5), (3.5, 1.5), (3.5, 2.5), (2.5, 2.5)],
        [(0, 0), (1, 1), (2, 1), (3, 2), (4, 2), (5, 3), (6, 3)])

    segments = [((0, 0), (4, 0)), ((4, 0), (4, 3)), ((4, 3), (0, 3)),
                ((0, 3), (0, 0)),
                ((3, 2), (1, 2)),    # hole hypotenuse
                ((1, 2), (2, 1)),    # hole leg into the apex
                ((2, 1), (3, 2))]    # hole leg out of the apex
    corners = [
        ((2.0, 1.0), 1.5 * np.pi, 1.5 * np.pi, 0.75 * np.pi),
        ((1.0, 2.0), 1.75 * np.pi, 0.875 * np.pi, 0.0),
        ((3.0, 2.0), 1.75 * np.pi, 0.125 * np.pi, 1.25 * np.pi),
    ]
    return _sorted_mesh(tris, segments, corners)


# -- refinement -------------------------------------------------------------


def uniform_refine(mesh: TriMesh) -> TriMesh:
    """Split each triangle into 4 congruent children at edge midpoints."""
    t = mesh.triangles
    raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    raw_sorted = np.sort(raw, axis=1)
    uniq, inverse = np.unique(raw_sorted, axis=0, return_inverse=True)
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])

    # append midpoints in (y, x) order after the parent vertex block
    order = np.lexsort((mids[:, 0], mids[:, 1]))
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[order] = np.arange(len(uniq))
    mid_index = mesh.n_vertices + rank[inverse.reshape(3, -1)]

    nt = mesh.n_triangles
    m01, m12, m20 = mid_index[0], mid_index[1], mid_index[2]
    v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
    children = np.empty((4 * nt, 3), dtype=np.int64)
    children[0::4] = np.column_stack([v0, m01, m20])
    children[1::4] = np.column_stack([v1, m12, m01])
    children[2::4] = np.column_stack([v2, m20, m12])
    children[3::4] = np.column_stack([m01, m12, m20])

    vertices = np.vstack([mesh.vertices, mids[order]])
    return TriMesh(vertices, children, mesh._segments, mesh.corners,
                   mesh.level + 1, mesh._neumann_segments)


def graded_refine(mesh: TriMesh, corner: int = 0, mu: float = 1.0,
                  radius: float = 0.5) -> TriMesh:
    """Uniform 4-split, then pull vertices within `radius` toward the corner.

    The radial map r -> radius * (r/radius)**(1/mu) makes element size at
    distance r scale like h * (r/radius)**(1-mu), hence h_min = O(h**(1/mu)).
    mu = 1 is exactly uniform_refine.
    """
    if not 0.0 < mu <= 1.0:
        raise MeshError(f"grading exponent {mu} outside (0, 1]")
    refined = uniform_refine(mesh)
    if mu == 1.0:
        return refined
    center = refined.vertices[refined.corners[corner].vertex]
    d = refined.vertices - center
    r = np.linalg.norm(d, axis=1)
    move = (r > 0.0) & (r < radius)
    scale = np.ones_like(r)
    scale[move] = (r[move] / radius) ** (1.0 / mu - 1.0)
    vertices = center + d * scale[:, None]
    try:
        return TriMesh(vertices, refined.triangles, refined._segments,
                       refined.corners, refined.level, refined._neumann_segments)
    except MeshError as exc:
        raise MeshError(f"grading mu={mu} inverted an element: {exc}") from exc


def corner_layers(mesh: TriMesh, corner: int = 0, depth: int = 1) -> CornerLayers:
    """Element rings around a corner; layer 1 holds the triangles at the
    vertex, each following layer the untaken triangles sharing a vertex with
    the previous one."""
    if depth < 1:
        raise MeshError("layer depth must be >= 1")
    taken = np.zeros(mesh.n_triangles, dtype=bool)
    front = np.array([mesh.corners[corner].vertex], dtype=np.int64)
    layers = []
    for k in range(depth):
        touch = np.isin(mesh.triangles, front).any(axis=1)
        layer = np.flatnonzero(touch & ~taken)
        if len(layer) == 0:
            raise MeshError(f"corner layer {k + 1} is empty; mesh supports "
                            f"fewer than {depth} layers")
        layers.append(layer)
        taken[layer] = True
        front = np.unique(np.concatenate([front, mesh.triangles[layer].ravel()]))
    return CornerLayers(corner, tuple(layers))


def audit(mesh: TriMesh) -> dict:
    """Conformity and orientation audit; raises MeshError on violation."""
    areas = triangle_areas(mesh.vertices[mesh.triangles])
    if np.any(areas <= 0.0):
        raise MeshError("non-positive triangle area")
    uniq, counts = mesh.edges()
    if counts.max(initial=1) > 2:
        raise MeshError("edge shared by more than two triangles")
    boundary_edges = uniq[counts == 1]
    if not np.all(mesh.boundary_vertex[boundary_edges.ravel()]):
        raise MeshError("boundary edge endpoint not tagged as boundary")
    # every boundary vertex sits on exactly two boundary edges (closed loops)
    deg = np.bincount(boundary_edges.ravel(), minlength=mesh.n_vertices)
    tagged = np.flatnonzero(mesh.boundary_vertex)
    if not np.all(deg[tagged] == 2):
        raise MeshError("boundary is not a union of closed loops")
    if len(np.unique(np.round(mesh.vertices, 12), axis=0)) != mesh.n_vertices:
        raise MeshError("duplicate vertices")
    return {
        "n_vertices": mesh.n_vertices,
        "n_triangles": mesh.n_triangles,
        "n_edges": len(uniq),
        "n_boundary_edges": len(boundary_edges),
        "area": float(areas.sum()),
    }


# -- serialization ----------------------------------------------------------


def dump_mesh(mesh: TriMesh, path) -> None:
    """ASCII dump: header `tmesh v1 nv nt nc`, nv vertex lines `x y tag`,
    nt triangle lines `i j k`, nc corner lines
    `vertex theta bisector_angle edge_angle`."""
    lines = [f"tmesh v1 {mesh.n_vertices} {mesh.n_triangles} {len(mesh.corners)}"]
    for i in range(mesh.n_vertices):
        x, y = (float(v) for v in mesh.vertices[i])
        kind = int(mesh.boundary_kind[i])
        tag = "i" if kind == KIND_INTERIOR else \
            f"{_KIND_CODES[kind]}{int(mesh.boundary_segment[i])}"
        lines.append(f"{x!r} {y!r} {tag}")
    for tri in mesh.triangles:
        lines.append(f"{tri[0]} {tri[1]} {tri[2]}")
    for c in mesh.corners:
        lines.append(f"{c.vertex} {c.theta!r} {c.bisector_angle!r} {c.edge_angle!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path) -> TriMesh:
    """Inverse of dump_mesh.

    The loaded mesh carries the stored boundary tags but no polygon segment
    geometry, so it supports assembly and solves; re-refining requires a mesh
    built by a constructor.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    head = lines[0].split()
    if head[:2] != ["tmesh", "v1"]:
        raise MeshError(f"unrecognized mesh header: {lines[0]!r}")
    nv, nt, nc = (int(x) for x in head[2:5])
    vertices = np.empty((nv, 2))
    kind = np.zeros(nv, dtype=np.uint8)
    segment = np.full(nv, -1, dtype=np.int64)
    neumann = set()
    for i in range(nv):
        x, y, tag = lines[1 + i].split()
        vertices[i] = (float(x), float(y))
        if tag != "i":
            kind[i] = _KIND_FROM_CODE[tag[0]]
            segment[i] = int(tag[1:])
            if kind[i] == KIND_NEUMANN:
                neumann.add(int(tag[1:]))
    triangles = np.array([lines[1 + nv + i].split() for i in range(nt)],
                         dtype=np.int64).reshape(nt, 3)
    corners = []
    for i in range(nc):
        vi, theta, bis, edge = lines[1 + nv + nt + i].split()
        corners.append(ReentrantCorner(int(vi), float(theta), float(bis),
                                       float(edge)))
    return TriMesh(vertices, triangles, (), corners, level=1,
                   neumann_segments=neumann, boundary_tags=(kind, segment))
