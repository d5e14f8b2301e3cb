"""Prolongation between nested constrained P1 spaces.

Residual restriction is ``P.T`` acting on algebraic residual vectors, which
are already functionals tested against the fine nodal basis.
"""

import numpy as np
from scipy import sparse

from .exceptions import TransferError

__all__ = ["build_prolongation", "galerkin_defect", "compose_prolongations"]


def _vertex_weights(coarse_mesh, fine_mesh):
    """Sparse (N_fine x N_coarse) map from coarse vertex values to fine vertex values.

    Fine vertices shared with the coarse mesh copy their value. New vertices
    are midpoints of an edge of the parent element and take the average of
    its endpoints.
    """
    if fine_mesh.parent.size and fine_mesh.parent.max() >= coarse_mesh.n_triangles:
        raise TransferError("fine mesh parents do not index the coarse mesh")
    nc = coarse_mesh.n_vertices
    if fine_mesh.n_vertices < nc or not np.array_equal(
        fine_mesh.vertices[:nc], coarse_mesh.vertices
    ):
        raise TransferError("fine mesh does not extend the coarse vertex set")
    owner = np.full(fine_mesh.n_vertices, -1, dtype=np.int64)
    flat = fine_mesh.triangles.ravel()
    owner[flat[::-1]] = np.repeat(np.arange(fine_mesh.n_triangles), 3)[::-1]

    rows, cols, vals = list(range(nc)), list(range(nc)), [1.0] * nc
    for v in range(nc, fine_mesh.n_vertices):
        par = fine_mesh.parent[owner[v]]
        if par < 0:
            raise TransferError(f"fine vertex {v} has no parent element")
        a, b, c = coarse_mesh.triangles[par]
        x = fine_mesh.vertices[v]
        for e0, e1 in ((a, b), (b, c), (c, a)):
            mid = 0.5 * (coarse_mesh.vertices[e0] + coarse_mesh.vertices[e1])
            if np.allclose(mid, x, rtol=0.0, atol=1e-13):
                rows += [v, v]
                cols += [e0, e1]
                vals += [0.5, 0.5]
                break
        else:
            raise TransferError(f"fine vertex {v} is not an edge midpoint of its parent")
    return sparse.csr_matrix((vals, (rows, cols)), shape=(fine_mesh.n_vertices, nc))


def build_prolongation(coarse, fine, check=True, atol=1e-12):
    """Matrix whose column i holds the fine coefficients of coarse basis function i.

    With ``check`` the result is validated against the fine constraint
    structure: expanding ``P`` to every fine vertex, hanging ones included,
    must reproduce the coarse functions. A mismatch means the spaces are not
    nested.
    """
    W = _vertex_weights(coarse.mesh, fine.mesh)
    full = (W @ coarse.expansion).tocsr()  # coarse basis at every fine vertex
    P = full[fine.free_dofs].tocsr()
    P.eliminate_zeros()
    if check:
        defect = abs(fine.expansion @ P - full)
        if defect.nnz and defect.max() > atol:
            raise TransferError(
                f"coarse space is not contained in the fine space (defect {defect.max():.3e})"
            )
    return P


def compose_prolongations(Ps):
    """Product ``P_k ... P_{i+1}`` given ``[P_{i+1}, ..., P_k]``."""
    out = None
    for P in Ps:
        out = P if out is None else (P @ out).tocsr()
    return out


def galerkin_defect(A_coarse, P, A_fine):
    """``max|A_coarse - P.T A_fine P| / max|A_coarse|``."""
    G = (P.T @ A_fine @ P) - A_coarse
    scale = abs(A_coarse).max()
    if scale == 0:
        return float(abs(G).max()) if G.nnz else 0.0
    return float(abs(G).max() / scale) if G.nnz else 0.0
