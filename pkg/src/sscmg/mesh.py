"""Hierarchical triangular meshes of the unit square.

Meshes are built from a structured coarse triangulation and refined by
midpoint (red) refinement, either everywhere or on a set of elements.
Local refinement leaves hanging nodes in place; they are detected
geometrically and resolved later by the finite element space.

Vertex indices are stable under refinement: a refined mesh keeps every
vertex of its parent at the same index and appends new midpoints.
"""

from dataclasses import dataclass, field
from functools import cached_property
from graphlib import CycleError, TopologicalSorter

import numpy as np

from .exceptions import ConstraintCycleError, MeshError

__all__ = [
    "Mesh",
    "HangingRecord",
    "SubdomainCover",
    "unit_square_coarse",
    "refine_uniform",
    "refine_local",
    "detect_hanging_nodes",
    "order_hanging",
    "elements_in_box",
    "partition_nonoverlapping",
    "grow_overlap",
    "adjacency_g0",
    "write_mesh",
    "read_mesh",
]

# Coordinates are dyadic fractions of 1/n; keys snap them to a fine lattice
# so that the same point reached along different paths gets one index.
_KEY_SCALE = float(2**40)


def _key(x, y):
    return (int(round(x * _KEY_SCALE)), int(round(y * _KEY_SCALE)))


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HangingRecord:
    """A vertex sitting at the midpoint of ``edge`` without being its node.

    Either endpoint of ``edge`` may itself be hanging.
    """

    hanging_vertex: int
    edge: tuple


@dataclass(frozen=True, eq=False)
class Mesh:
    """Leaf triangulation at one refinement level.

    ``parent[t]`` indexes the previous level's triangle list (``-1`` on the
    coarse mesh); unrefined elements point at themselves one level down.
    ``depth[t]`` counts how many times the coarse ancestor of ``t`` was split.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    level: int
    parent: np.ndarray
    boundary_vertex: np.ndarray
    h0: float
    depth: np.ndarray = None
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "vertices", _frozen(self.vertices, float).reshape(-1, 2))
        set_(self, "triangles", _frozen(self.triangles, np.int64).reshape(-1, 3))
        set_(self, "parent", _frozen(self.parent, np.int64))
        set_(self, "boundary_vertex", _frozen(self.boundary_vertex, bool))
        if self.depth is None:
            set_(self, "depth", _frozen(np.zeros(len(self.triangles)), np.int64))
        else:
            set_(self, "depth", _frozen(self.depth, np.int64))
        if self._lookup is None:
            set_(self, "_lookup", {_key(x, y): i for i, (x, y) in enumerate(self.vertices)})
        if len(self.parent) != len(self.triangles) or len(self.depth) != len(self.triangles):
            raise MeshError("parent/depth arrays must have one entry per triangle")
        if len(self.boundary_vertex) != len(self.vertices):
            raise MeshError("boundary_vertex must have one entry per vertex")
        if np.any(self.signed_areas() <= 0.0):
            raise MeshError("triangles must be counterclockwise with positive area")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def areas(self):
        return np.abs(self.signed_areas())

    def barycenters(self):
        return self.vertices[self.triangles].mean(axis=1)

    def find_vertex(self, x, y):
        """Index of the vertex at ``(x, y)``, or ``None``."""
        return self._lookup.get(_key(x, y))

    @cached_property
    def hanging(self):
        return detect_hanging_nodes(self)

    @cached_property
    def vertex_triangles(self):
        """CSR-like incidence: triangles touching each vertex as a corner."""
        from scipy import sparse

        nt = self.n_triangles
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(nt), 3)
        return sparse.csr_matrix(
            (np.ones(3 * nt), (rows, cols)), shape=(self.n_vertices, nt)
        )

    def edge_counts(self):
        """Map sorted vertex pair -> number of triangles using that edge."""
        counts = {}
        for a, b, c in self.triangles:
            for e in ((a, b), (b, c), (c, a)):
                e = (min(e), max(e))
                counts[e] = counts.get(e, 0) + 1
        return counts

    def boundary_edges(self):
        """Edges on the domain boundary.

        An edge is on the boundary when one triangle uses it, both ends are
        boundary vertices, and it is not split by a hanging midpoint. This is
        exact for convex domains.
        """
        out = set()
        bv = self.boundary_vertex
        for (a, b), cnt in self.edge_counts().items():
            if cnt != 1 or not (bv[a] and bv[b]):
                continue
            m = 0.5 * (self.vertices[a] + self.vertices[b])
            if self.find_vertex(*m) is None:
                out.add((a, b))
        return out


def unit_square_coarse(n):
    """Structured coarse mesh of the unit square with ``2 n**2`` triangles.

    Every cell is split along its lower-left to upper-right diagonal.
    """
    if int(n) != n or n < 1:
        raise MeshError(f"need n >= 1 subdivisions per side, got {n!r}")
    n = int(n)
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)  # vertex (i, j) -> index j*(n+1) + i
    verts = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10 = v00 + 1
            v01 = v00 + n + 1
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    ij = np.arange(n + 1)
    on_side = (ij == 0) | (ij == n)
    boundary = (on_side[None, :] | on_side[:, None]).ravel()
    return Mesh(
        vertices=verts,
        triangles=tris,
        level=0,
        parent=np.full(len(tris), -1),
        boundary_vertex=boundary,
        h0=1.0 / n,
    )


def _refine(mesh, mask):
    verts = [tuple(v) for v in mesh.vertices]
    lookup = dict(mesh._lookup)
    boundary = list(mesh.boundary_vertex)
    bedges = mesh.boundary_edges()

    def midpoint(a, b):
        x = 0.5 * (verts[a][0] + verts[b][0])
        y = 0.5 * (verts[a][1] + verts[b][1])
        key = _key(x, y)
        idx = lookup.get(key)
        if idx is None:
            idx = len(verts)
            verts.append((x, y))
            lookup[key] = idx
            boundary.append((min(a, b), max(a, b)) in bedges)
        return idx

    tris, parent, depth = [], [], []
    for t, (a, b, c) in enumerate(mesh.triangles):
        if not mask[t]:
            tris.append((a, b, c))
            parent.append(t)
            depth.append(mesh.depth[t])
            continue
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        tris.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
        parent.extend([t] * 4)
        depth.extend([mesh.depth[t] + 1] * 4)
    return Mesh(
        vertices=np.array(verts),
        triangles=tris,
        level=mesh.level + 1,
        parent=parent,
        boundary_vertex=boundary,
        h0=mesh.h0,
        depth=depth,
        _lookup=lookup,
    )


def refine_uniform(mesh):
    """Split every triangle into four through its edge midpoints."""
    return _refine(mesh, np.ones(mesh.n_triangles, dtype=bool))


def refine_local(mesh, region):
    """Midpoint-refine only the elements listed in ``region``.

    Midpoints landing on edges of unrefined neighbours become hanging
    vertices. An edge may collect any number of them over several levels.
    """
    region = np.unique(np.asarray(region, dtype=np.int64).ravel())
    if region.size == 0:
        raise MeshError("refinement region is empty")
    if region[0] < 0 or region[-1] >= mesh.n_triangles:
        raise MeshError("refinement region references nonexistent elements")
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[region] = True
    return _refine(mesh, mask)


def order_hanging(records):
    """Sort records so each one depends only on earlier or regular vertices.

    Raises :class:`ConstraintCycleError` when the dependency graph
    hanging -> endpoints has a cycle.
    """
    by_vertex = {}
    for r in records:
        if r.hanging_vertex in by_vertex and by_vertex[r.hanging_vertex].edge != r.edge:
            raise MeshError(f"vertex {r.hanging_vertex} constrained twice")
        by_vertex[r.hanging_vertex] = r
    graph = {
        v: [e for e in r.edge if e in by_vertex] for v, r in by_vertex.items()
    }
    try:
        order = list(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        raise ConstraintCycleError(f"cyclic hanging-node constraints: {exc.args[1]}") from exc
    return [by_vertex[v] for v in order]


def detect_hanging_nodes(mesh):
    """Return one :class:`HangingRecord` per hanging vertex, dependency ordered.

    Every triangle edge whose midpoint exists as a vertex is split
    recursively; each midpoint found is hanging with respect to the
    sub-edge it bisects.
    """
    verts = mesh.vertices
    found = {}

    def visit(a, b):
        m = mesh.find_vertex(*(0.5 * (verts[a] + verts[b])))
        if m is None:
            return
        if m not in found:
            found[m] = HangingRecord(int(m), (int(min(a, b)), int(max(a, b))))
        visit(a, m)
        visit(m, b)

    for a, b, c in mesh.triangles:
        visit(a, b)
        visit(b, c)
        visit(c, a)
    return order_hanging(found.values())


def elements_in_box(mesh, box):
    """Indices of triangles lying inside the closed box ``(x0, y0, x1, y1)``."""
    x0, y0, x1, y1 = box
    p = mesh.vertices[mesh.triangles]
    tol = 1e-12
    inside = (
        (p[..., 0] >= x0 - tol)
        & (p[..., 0] <= x1 + tol)
        & (p[..., 1] >= y0 - tol)
        & (p[..., 1] <= y1 + tol)
    )
    return np.flatnonzero(inside.all(axis=1))


@dataclass(frozen=True, eq=False)
class SubdomainCover:
    """Non-overlapping box partition of a level and its overlapping growth."""

    level: int
    nonoverlapping: list
    boxes: list
    overlapping: list = None

    @property
    def p(self):
        return len(self.nonoverlapping)


def partition_nonoverlapping(mesh, grid):
    """Assign each element to the grid box containing its barycenter.

    Box boundaries must follow coarse cell lines, i.e. ``rows`` and ``cols``
    must divide the number of coarse cells per side.
    """
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise MeshError(f"subdomain grid must be at least 1x1, got {rows}x{cols}")
    ncoarse = int(round(1.0 / mesh.h0))
    if ncoarse % rows or ncoarse % cols:
        raise MeshError(
            f"subdomain grid {rows}x{cols} must divide the {ncoarse}x{ncoarse} "
            "coarse cells so box boundaries align with coarse elements"
        )
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    bc = (mesh.barycenters() - lo) / (hi - lo)
    col = np.minimum((bc[:, 0] * cols).astype(int), cols - 1)
    row = np.minimum((bc[:, 1] * rows).astype(int), rows - 1)
    owner = row * cols + col
    sets, boxes = [], []
    w = (hi - lo) / (cols, rows)
    for r in range(rows):
        for c in range(cols):
            sets.append(np.flatnonzero(owner == r * cols + c))
            boxes.append((lo[0] + c * w[0], lo[1] + r * w[1],
                          lo[0] + (c + 1) * w[0], lo[1] + (r + 1) * w[1]))
    return SubdomainCover(level=mesh.level, nonoverlapping=sets, boxes=boxes)


def grow_overlap(mesh, cover, radius=None):
    """Fill ``cover.overlapping`` with the elements inside each h0-neighbourhood.

    An element joins subdomain i when it lies entirely within Euclidean
    distance ``radius`` (default ``mesh.h0``) of box i. The neighbourhood of a
    box is convex, so testing the three corners is enough.
    """
    radius = mesh.h0 if radius is None else float(radius)
    p = mesh.vertices[mesh.triangles]  # (T, 3, 2)
    tol = 1e-12 * max(1.0, radius)
    grown = []
    for seed, (x0, y0, x1, y1) in zip(cover.nonoverlapping, cover.boxes):
        dx = np.maximum(np.maximum(x0 - p[..., 0], p[..., 0] - x1), 0.0)
        dy = np.maximum(np.maximum(y0 - p[..., 1], p[..., 1] - y1), 0.0)
        far = np.hypot(dx, dy).max(axis=1)
        members = np.union1d(np.flatnonzero(far <= radius + tol), seed)
        grown.append(members)
    return SubdomainCover(
        level=cover.level,
        nonoverlapping=cover.nonoverlapping,
        boxes=cover.boxes,
        overlapping=grown,
    )


def adjacency_g0(cover):
    """Largest number of overlapping subdomains meeting one subdomain, itself included.

    Two subdomains meet when they share at least one element.
    """
    if cover.overlapping is None:
        raise MeshError("cover has no overlapping part; call grow_overlap first")
    p = cover.p
    nt = max(int(s.max()) for s in cover.overlapping if len(s)) + 1
    member = np.zeros((p, nt), dtype=bool)
    for i, s in enumerate(cover.overlapping):
        member[i, s] = True
    meets = (member.astype(np.int64) @ member.T.astype(np.int64)) > 0
    return int(meets.sum(axis=1).max())


def write_mesh(mesh, fh):
    """Write ``mesh`` in the ASCII ``MESH2D`` format to a path or text stream."""
    if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
        with open(fh, "w") as f:
            return write_mesh(mesh, f)
    g = lambda x: format(float(x), ".17g")  # noqa: E731
    fh.write(f"MESH2D {mesh.n_vertices} {mesh.n_triangles} {mesh.level} {g(mesh.h0)}\n")
    for (x, y), b in zip(mesh.vertices, mesh.boundary_vertex):
        fh.write(f"v {g(x)} {g(y)} {int(b)}\n")
    for (i, j, k), par in zip(mesh.triangles, mesh.parent):
        fh.write(f"t {i} {j} {k} {par}\n")
    for r in mesh.hanging:
        fh.write(f"h {r.hanging_vertex} {r.edge[0]} {r.edge[1]}\n")


def read_mesh(fh):
    """Read a mesh written by :func:`write_mesh`.

    Refinement depth is not stored; it is recovered from element areas
    relative to the coarse element area ``h0**2 / 2``. Hanging lines are
    checked against the geometry.
    """
    if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
        with open(fh) as f:
            return read_mesh(f)
    header = fh.readline().split()
    if len(header) != 5 or header[0] != "MESH2D":
        raise MeshError("not a MESH2D file")
    nv, nt, level, h0 = int(header[1]), int(header[2]), int(header[3]), float(header[4])
    verts, bflags, tris, parents, hang = [], [], [], [], []
    for line in fh:
        parts = line.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            verts.append((float(parts[1]), float(parts[2])))
            bflags.append(bool(int(parts[3])))
        elif tag == "t":
            tris.append(tuple(int(s) for s in parts[1:4]))
            parents.append(int(parts[4]))
        elif tag == "h":
            a, b = int(parts[2]), int(parts[3])
            hang.append(HangingRecord(int(parts[1]), (min(a, b), max(a, b))))
        else:
            raise MeshError(f"unknown record {tag!r}")
    if len(verts) != nv or len(tris) != nt:
        raise MeshError("vertex/triangle counts disagree with header")
    probe = Mesh(verts, tris, level, parents, bflags, h0)
    ratio = (0.5 * h0 * h0) / probe.areas()
    depth = np.rint(np.log(ratio) / np.log(4.0)).astype(np.int64)
    mesh = Mesh(verts, tris, level, parents, bflags, h0, depth=depth)
    ordered = order_hanging(hang)
    if {(r.hanging_vertex, r.edge) for r in ordered} != {
        (r.hanging_vertex, r.edge) for r in mesh.hanging
    }:
        raise MeshError("hanging records do not match mesh geometry")
    return mesh
