"""Subspace decompositions and successive subspace correction sweeps.

A level space ``V_k`` is written as a sum of subspaces, each given by a
sparse embedding matrix ``E`` whose columns are basis functions of the
subspace expressed in level-k coefficients. Subspace 0 is always the
coarse space ``V_0``. The local problem matrix is ``E.T A_k E`` and the
residual seen by a subspace is ``E.T r``.

All sweep routines accept a single vector or a block of column vectors.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import eigh

from .exceptions import DecompositionError
from .space import spd_factor

__all__ = [
    "ExactSolver",
    "ScaledRichardson",
    "Subspace",
    "Decomposition",
    "largest_eigenvalue",
    "coordinate_subspaces",
    "decomposition_uniform",
    "decomposition_nested_local",
    "decomposition_nonnested_local",
    "ssc_sweep",
    "ssc_sweep_symmetric",
]


class ExactSolver:
    """Exact local solve with a cached sparse factorization of ``A^i``."""

    kind = "exact"

    def __init__(self, local_matrix):
        self.local_matrix = sparse.csr_matrix(local_matrix)
        self._lu = spd_factor(self.local_matrix, "local subspace matrix")

    @property
    def rho(self):
        return 1.0

    def apply(self, r):
        return self._lu.solve(np.asarray(r, dtype=float))

    def inverse_form(self, c):
        """``((R^i)^{-1} c, c)``, columnwise for blocks."""
        return np.einsum("i...,i...->...", c, self.local_matrix @ c)


class ScaledRichardson:
    """``R^i = I / (lambda_i * k)`` with ``lambda_i`` the spectral radius of ``A^i``."""

    kind = "richardson"

    def __init__(self, local_matrix, k, lambda_i=None, factor=1.0):
        if k < 1:
            raise ValueError("Richardson scaling needs level k >= 1")
        self.local_matrix = sparse.csr_matrix(local_matrix)
        self.k = int(k)
        self.lambda_i = largest_eigenvalue(self.local_matrix) if lambda_i is None else float(lambda_i)
        # factor exists only to rig deliberately illegal smoothers in tests
        self.scale = factor / (self.lambda_i * self.k)
        diag_max = self.local_matrix.diagonal().max()
        if self.lambda_i < diag_max * (1 - 1e-12):
            raise ValueError("lambda_i below the largest diagonal entry: estimate is wrong")

    @property
    def rho(self):
        return self.scale * self.lambda_i

    def apply(self, r):
        return self.scale * np.asarray(r, dtype=float)

    def inverse_form(self, c):
        return np.einsum("i...,i...->...", c, c) / self.scale


def largest_eigenvalue(A):
    """Largest eigenvalue of a symmetric matrix (dense LAPACK below 1500 rows)."""
    n = A.shape[0]
    if n <= 1500:
        return float(eigh(A.toarray(), eigvals_only=True, subset_by_index=[n - 1, n - 1])[0])
    from scipy.sparse.linalg import eigsh

    return float(eigsh(A, k=1, which="LA", tol=1e-12, return_eigenvectors=False)[0])


@dataclass(eq=False)
class Subspace:
    """One subspace ``V_k^i`` with its subsolver.

    ``dofs`` index the free DoFs of ``source_level`` that span the subspace
    (``None`` for the whole coarse space).
    """

    embed: sparse.csr_matrix
    subsolver: object
    source_level: int
    dofs: np.ndarray = None
    label: str = ""

    @property
    def dim(self):
        return self.embed.shape[1]

    @property
    def local_matrix(self):
        return self.subsolver.local_matrix

    def correct(self, A, z, f):
        r = f - A @ z
        return z + self.embed @ self.subsolver.apply(self.embed.T @ r)

    def T(self, A, v):
        """``T^i v = E R^i E^T A v``."""
        return self.embed @ self.subsolver.apply(self.embed.T @ (A @ v))


@dataclass(eq=False)
class Decomposition:
    """Ordered subspaces ``V_k^0, ..., V_k^p`` of one level."""

    level: int
    A: sparse.csr_matrix
    subspaces: list = field(default_factory=list)

    @property
    def p(self):
        return len(self.subspaces) - 1

    @property
    def w1(self):
        return max(s.subsolver.rho for s in self.subspaces)

    def spans(self, cap=2500):
        """Rank test that the subspaces sum to the whole level space."""
        n = self.A.shape[0]
        if n > cap:
            raise ValueError(f"span check capped at {cap} DoFs, level has {n}")
        E = sparse.hstack([s.embed for s in self.subspaces]).toarray()
        return np.linalg.matrix_rank(E) == n


def _selection(n, dofs):
    dofs = np.asarray(dofs, dtype=np.int64)
    return sparse.csr_matrix(
        (np.ones(len(dofs)), (dofs, np.arange(len(dofs)))), shape=(n, len(dofs))
    )


def _coarse_subspace(level_A, coarse_embed):
    E = sparse.csr_matrix(coarse_embed)
    A0 = (E.T @ level_A @ E).tocsr()
    return Subspace(embed=E, subsolver=ExactSolver(A0), source_level=0, label="coarse")


def coordinate_subspaces(space, A, cover, k):
    """Exact-solver subspaces spanned by the DoFs supported in each overlap set."""
    subs, covered = [], np.zeros(space.dim, dtype=bool)
    for i, elems in enumerate(cover.overlapping, start=1):
        dofs = space.dofs_supported_in(elems)
        if dofs.size == 0:
            continue
        covered[dofs] = True
        E = _selection(space.dim, dofs)
        subs.append(Subspace(embed=E, subsolver=ExactSolver(A[dofs][:, dofs]),
                             source_level=k, dofs=dofs, label=f"overlap {i}"))
    if not covered.all():
        lost = np.flatnonzero(~covered)
        raise DecompositionError(
            f"level {k}: {lost.size} free DoFs lie in no overlapping subdomain "
            f"(first at {tuple(space.dof_coordinates()[lost[0]])}); enlarge the overlap"
        )
    return subs


def decomposition_uniform(space, A, coarse_embed, cover, k):
    """Coarse space plus one exact local solve per overlapping subdomain."""
    subs = [_coarse_subspace(A, coarse_embed)]
    subs += coordinate_subspaces(space, A, cover, k)
    return Decomposition(level=k, A=A, subspaces=subs)


def decomposition_nonnested_local(space, A, coarse_embed, cover, k):
    """Same construction as the uniform case on an irregular level mesh.

    Supports are taken after constraint expansion, so a DoF whose basis
    function reaches outside the subdomain through a hanging vertex is
    excluded.
    """
    return decomposition_uniform(space, A, coarse_embed, cover, k)


def decomposition_nested_local(levels, k, embeds, richardson_factor=1.0):
    """Coarse space plus, for each i = 1..k, level-i functions supported in Omega_i.

    ``levels[i]`` must provide ``space``, ``A`` and ``region_elements`` (the
    level-i triangles inside Omega_i); ``embeds[i]`` is ``P_k ... P_{i+1}``
    (identity for i = k). The local subsolver is scaled Richardson with
    factor ``1 / (lambda^i k)``.
    """
    if k < 1:
        raise ValueError("nested local decomposition needs k >= 1")
    A = levels[k].A
    subs = [_coarse_subspace(A, embeds[0])]
    for i in range(1, k + 1):
        lv = levels[i]
        dofs = lv.space.dofs_supported_in(lv.region_elements)
        if dofs.size == 0:
            continue
        E = (embeds[i] @ _selection(lv.space.dim, dofs)).tocsr()
        local = (E.T @ A @ E).tocsr()
        local = (0.5 * (local + local.T)).tocsr()
        solver = ScaledRichardson(local, k, factor=richardson_factor)
        subs.append(Subspace(embed=E, subsolver=solver, source_level=i, dofs=dofs,
                             label=f"omega {i}"))
    return Decomposition(level=k, A=A, subspaces=subs)


def ssc_sweep(z, f, d, order="forward"):
    """One successive subspace correction pass.

    ``forward`` visits subspaces p, ..., 0 so that the error operator is
    ``(I - T^0)(I - T^1) ... (I - T^p)``; ``backward`` visits 0, ..., p.
    """
    if order == "forward":
        seq = reversed(d.subspaces)
    elif order == "backward":
        seq = iter(d.subspaces)
    else:
        raise ValueError(f"order must be 'forward' or 'backward', got {order!r}")
    z = np.array(z, dtype=float, copy=True)
    f = np.asarray(f, dtype=float)
    for s in seq:
        z = s.correct(d.A, z, f)
    return z


def ssc_sweep_symmetric(z, f, d):
    """Symmetric pass: p, ..., 0 then 0, ..., p.

    The error operator is ``E_p^* E_p``; this is one smoothing step of the
    V-cycle.
    """
    return ssc_sweep(ssc_sweep(z, f, d, "forward"), f, d, "backward")
