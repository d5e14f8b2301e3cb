"""Constrained P1 finite element spaces with homogeneous Dirichlet data.

A space keeps one degree of freedom per vertex that is neither on the
boundary nor hanging. The expansion matrix ``C`` maps free coefficients to
values at every mesh vertex, so any operator assembled over all vertices
restricts to the constrained space as ``C.T @ op @ C``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.io import mmwrite
from scipy.sparse.linalg import splu

from .exceptions import NotSPDError
from .mesh import order_hanging

__all__ = [
    "FeSpace",
    "CoefficientField",
    "build_space",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_load",
    "assemble_full_stiffness",
    "assemble_full_mass",
    "evaluate",
    "evaluate_points",
    "interpolate",
    "nodal_values",
    "h1_seminorm_sq",
    "spd_factor",
    "export_matrix_market",
]


@dataclass(frozen=True)
class CoefficientField:
    """Constant symmetric positive definite diffusion tensor."""

    theta: tuple = ((1.0, 0.0), (0.0, 1.0))

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=float)
        if t.shape != (2, 2) or not np.allclose(t, t.T, rtol=0, atol=1e-14):
            raise ValueError("theta must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(t).min() <= 0:
            raise ValueError("theta must be positive definite")
        object.__setattr__(self, "theta", tuple(map(tuple, t.tolist())))

    @property
    def matrix(self):
        return np.array(self.theta)

    def eig_bounds(self):
        w = np.linalg.eigvalsh(self.matrix)
        return float(w[0]), float(w[-1])

    def scaled(self, alpha):
        return CoefficientField(tuple(map(tuple, (alpha * self.matrix).tolist())))


@dataclass(frozen=True, eq=False)
class FeSpace:
    mesh: object
    free_dofs: np.ndarray
    vertex_to_dof: np.ndarray
    expansion: sparse.csr_matrix
    hanging: list = field(repr=False, default=())

    @property
    def dim(self):
        return len(self.free_dofs)

    def dof_coordinates(self):
        return self.mesh.vertices[self.free_dofs]

    def support_counts(self, element_mask):
        """Number of support elements of each basis function outside the mask.

        Supports account for the constraint expansion, so a free DoF that
        feeds a hanging vertex also owns the elements around that vertex.
        """
        inc = self.mesh.vertex_triangles.T  # (T, N)
        touch = abs(inc) @ abs(self.expansion)  # (T, n)
        outside = sparse.diags((~np.asarray(element_mask)).astype(float))
        return np.asarray((outside @ touch != 0).sum(axis=0)).ravel()

    def dofs_supported_in(self, elements):
        mask = np.zeros(self.mesh.n_triangles, dtype=bool)
        mask[np.asarray(elements, dtype=np.int64)] = True
        return np.flatnonzero(self.support_counts(mask) == 0)


def build_space(mesh):
    """Constrained P1 space on ``mesh``.

    A hanging vertex takes the average of its edge endpoints; substitution
    runs in dependency order so every row ends up referencing free
    vertices only.
    """
    records = order_hanging(mesh.hanging)
    is_hanging = np.zeros(mesh.n_vertices, dtype=bool)
    for r in records:
        is_hanging[r.hanging_vertex] = True
    free = np.flatnonzero(~mesh.boundary_vertex & ~is_hanging)
    v2d = np.full(mesh.n_vertices, -1, dtype=np.int64)
    v2d[free] = np.arange(len(free))

    rows = [dict() for _ in range(mesh.n_vertices)]
    for v in free:
        rows[v] = {int(v2d[v]): 1.0}
    for r in records:
        acc = {}
        for e in r.edge:
            for d, w in rows[e].items():
                acc[d] = acc.get(d, 0.0) + 0.5 * w
        rows[r.hanging_vertex] = acc
    ii, jj, ww = [], [], []
    for v, row in enumerate(rows):
        for d, w in row.items():
            ii.append(v)
            jj.append(d)
            ww.append(w)
    C = sparse.csr_matrix((ww, (ii, jj)), shape=(mesh.n_vertices, len(free)))
    v2d.setflags(write=False)
    return FeSpace(mesh=mesh, free_dofs=free, vertex_to_dof=v2d, expansion=C,
                   hanging=records)


def _gradients(mesh):
    """Barycentric gradients per element, shape (T, 3, 2), and areas."""
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    g = np.stack([-(g1 + g2), g1, g2], axis=1)
    return g, 0.5 * det


def _scatter(mesh, local):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _constrain(space, full):
    C = space.expansion
    A = (C.T @ full @ C).tocsr()
    A = (0.5 * (A + A.T)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def spd_factor(A, what="operator"):
    """Sparse LU with symmetric pivoting; every pivot must be positive."""
    if A.shape[0] == 0:
        return None
    lu = splu(
        sparse.csc_matrix(A),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )
    piv = lu.U.diagonal()
    if not np.all(piv > 0):
        raise NotSPDError(f"{what} is not positive definite (min pivot {piv.min():.3e})")
    return lu


def assemble_full_stiffness(mesh, theta=None):
    theta = CoefficientField() if theta is None else theta
    g, area = _gradients(mesh)
    K = np.einsum("tia,ab,tjb->tij", g, theta.matrix, g) * area[:, None, None]
    return _scatter(mesh, K)


def assemble_full_mass(mesh):
    area = mesh.areas()
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh, area[:, None, None] * ref[None])


def assemble_stiffness(space, theta=None, check=True):
    """Stiffness matrix ``C.T Ahat C`` on the free DoFs.

    ``Ahat`` integrates ``(Theta grad phi_i) . grad phi_j`` exactly over
    each element (constant gradients, constant ``Theta``).
    """
    A = _constrain(space, assemble_full_stiffness(space.mesh, theta))
    if check:
        spd_factor(A, "stiffness matrix")
    return A


def assemble_mass(space, check=True):
    """Consistent P1 mass matrix on the free DoFs."""
    M = _constrain(space, assemble_full_mass(space.mesh))
    if check:
        spd_factor(M, "mass matrix")
    return M


def assemble_load(space, f):
    """Load vector ``int f phi_i`` with the edge-midpoint rule.

    ``f`` is called with coordinate arrays ``(x, y)`` and must broadcast.
    The rule is exact for quadratic integrands.
    """
    mesh = space.mesh
    p = mesh.vertices[mesh.triangles]
    area = mesh.areas()
    # midpoints opposite vertex 2, 0, 1 respectively
    mids = [0.5 * (p[:, 0] + p[:, 1]), 0.5 * (p[:, 1] + p[:, 2]), 0.5 * (p[:, 2] + p[:, 0])]
    fm = [np.broadcast_to(np.asarray(f(m[:, 0], m[:, 1]), dtype=float), area.shape) for m in mids]
    # phi_0 is 1/2 on edges 01 and 20, etc.
    local = np.column_stack([fm[0] + fm[2], fm[0] + fm[1], fm[1] + fm[2]]) * 0.5
    local *= (area / 3.0)[:, None]
    bhat = np.bincount(mesh.triangles.ravel(), weights=local.ravel(),
                       minlength=mesh.n_vertices)
    return space.expansion.T @ bhat


def nodal_values(space, coeffs):
    """Values at every mesh vertex (boundary zeros, hanging averages)."""
    return space.expansion @ np.asarray(coeffs, dtype=float)


def interpolate(space, g):
    """Free-DoF coefficients of the nodal interpolant of ``g(x, y)``."""
    xy = space.dof_coordinates()
    return np.asarray(g(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(space.dim)


def _locate(mesh, pts, tol=1e-12):
    """Containing triangle and barycentric coordinates for each point.

    Among several containing triangles the deepest one wins.
    """
    p = mesh.vertices[mesh.triangles]
    a = p[:, 0]
    d1 = p[:, 1] - a
    d2 = p[:, 2] - a
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    tri = np.empty(len(pts), dtype=np.int64)
    lam = np.empty((len(pts), 3))
    for s in range(0, len(pts), 256):
        q = pts[s:s + 256, None, :] - a[None]
        l1 = (q[..., 0] * d2[:, 1] - q[..., 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * q[..., 1] - d1[:, 1] * q[..., 0]) / det
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol)
        if not inside.any(axis=1).all():
            bad = pts[s + np.flatnonzero(~inside.any(axis=1))[0]]
            raise ValueError(f"point {tuple(bad)} lies outside the mesh")
        score = np.where(inside, mesh.depth[None, :], -1)
        t = score.argmax(axis=1)
        r = np.arange(len(t))
        tri[s:s + 256] = t
        lam[s:s + 256] = np.column_stack([l0[r, t], l1[r, t], l2[r, t]])
    return tri, lam


def evaluate_points(space, coeffs, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    vals = nodal_values(space, coeffs)
    tri, lam = _locate(space.mesh, pts)
    return (vals[space.mesh.triangles[tri]] * lam).sum(axis=1)


def evaluate(space, coeffs, point):
    """Value of the finite element function at a single ``(x, y)``."""
    return float(evaluate_points(space, coeffs, [point])[0])


def h1_seminorm_sq(space, coeffs):
    """``|v|_{H^1}^2`` summed element by element."""
    g, area = _gradients(space.mesh)
    vals = nodal_values(space, coeffs)[space.mesh.triangles]  # (T, 3)
    grad = np.einsum("ti,tia->ta", vals, g)
    return float((area * (grad**2).sum(axis=1)).sum())


def export_matrix_market(op, path, comment=""):
    """Write a sparse operator as a MatrixMarket coordinate file."""
    mmwrite(str(path), sparse.coo_matrix(op), comment=comment,
            symmetry="general")
