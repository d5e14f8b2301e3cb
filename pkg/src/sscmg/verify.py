"""Dense spectral oracles and checks of the convergence assumptions.

Every operator is densified column by column (in one block) and studied as
a generalized symmetric eigenproblem with the SPD stiffness matrix ``A`` as
metric. Dense work is capped at ``DENSE_CAP`` unknowns per level.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh

from . import mesh as meshmod
from .exceptions import DecompositionError, DenseCapError, NotSPDError
from .multigrid import vcycle
from .smoother import ssc_sweep, ssc_sweep_symmetric
from .space import _locate, assemble_mass, build_space, spd_factor
from .transfer import build_prolongation, compose_prolongations

__all__ = [
    "DENSE_CAP",
    "densify",
    "a_symmetry_residual",
    "smoother_error_matrix",
    "sweep_error_matrix",
    "t_matrix",
    "estimate_delta",
    "theoretical_delta",
    "gamma",
    "k1_closed_form",
    "power_iteration",
    "subsolver_radii",
    "estimate_w1",
    "interpolation_matrix",
    "hierarchical_decomposition",
    "greedy_decomposition",
    "estimate_K0",
    "a_projection",
    "check_lemma_chain",
    "mg_error_matrix",
    "recursion_defect",
    "contraction",
    "check_psi",
    "LevelReport",
    "AssumptionReport",
    "run_verification",
]

DENSE_CAP = 2500


def _dense(A):
    return A.toarray() if sparse.issparse(A) else np.asarray(A, dtype=float)


def densify(op, dim, cap=DENSE_CAP):
    """Matrix whose columns are ``op`` applied to the unit vectors.

    ``op`` is first tried on the whole identity block; maps that only take
    single vectors are applied column by column.
    """
    if dim > cap:
        raise DenseCapError(
            f"dense oracle needs {dim} unknowns, cap is {cap}; reduce J or n, or raise --dense-cap"
        )
    I = np.eye(dim)
    try:
        D = np.asarray(op(I), dtype=float)
        if D.shape != (dim, dim):
            raise ValueError
    except (ValueError, TypeError):
        D = np.column_stack([np.asarray(op(I[:, j]), dtype=float).ravel() for j in range(dim)])
    if not np.all(np.isfinite(D)):
        raise ValueError("densified operator has non-finite entries")
    return D


def a_symmetry_residual(X, A):
    """``max|A X - X.T A| / (max|A| max(1, max|X|))``.

    Error operators have energy norm at most one, so entries are measured
    against unit scale rather than against their own size.
    """
    A = _dense(A)
    AX = A @ X
    scale = np.abs(A).max() * max(1.0, np.abs(X).max(initial=0.0))
    return float(np.abs(AX - AX.T).max(initial=0.0) / scale)


def smoother_error_matrix(h, k, cap=DENSE_CAP):
    """Dense ``S_k``: the error map of one symmetric SSC sweep with ``f = 0``."""
    if k == 0:
        raise ValueError("S_0 is undefined: level 0 is solved exactly")
    if not 1 <= k <= h.J:
        raise ValueError(f"level {k} outside 1..{h.J}")
    d = h.levels[k].decomposition
    return densify(lambda V: ssc_sweep_symmetric(V, np.zeros_like(V), d), h.levels[k].dim, cap)


def sweep_error_matrix(d, order="forward", cap=DENSE_CAP):
    """Dense error map of a single SSC pass in the given order."""
    n = d.A.shape[0]
    return densify(lambda V: ssc_sweep(V, np.zeros_like(V), d, order), n, cap)


def t_matrix(d, i, cap=DENSE_CAP):
    """Dense ``T^i = E R^i E.T A`` for subspace ``i``."""
    s = d.subspaces[i]
    return densify(lambda V: s.T(d.A, V), d.A.shape[0], cap)


def _pencil(X, A):
    """Eigenvalues of ``(sym(A X), A)`` in ascending order."""
    A = _dense(A)
    AX = A @ X
    try:
        return eigh(0.5 * (AX + AX.T), A, eigvals_only=True)
    except LinAlgError as exc:
        raise NotSPDError("metric matrix A is not positive definite") from exc


def estimate_delta(S, A, sym_tol=1e-8):
    """``(delta, min_eig)``: extreme eigenvalues of ``a(S v, v) / a(v, v)``."""
    res = a_symmetry_residual(S, A)
    if res > sym_tol:
        raise ValueError(f"S is not a-symmetric (residual {res:.3e} > {sym_tol:g})")
    w = _pencil(S, A)
    return float(w[-1]), float(w[0])


def theoretical_delta(w1, K0, K1):
    """``1 - (2 - w1) / (K0 (1 + K1)^2)``."""
    if not K0 > 0:
        raise ValueError("K0 must be positive")
    if not w1 < 2:
        raise ValueError("w1 must be below 2")
    if K1 < 0:
        raise ValueError("K1 must be non-negative")
    return 1.0 - (2.0 - w1) / (K0 * (1.0 + K1) ** 2)


def gamma(m, delta):
    """Per-level contraction bound ``1 / (1 + 2 m (1 - delta))``."""
    return 1.0 / (1.0 + 2.0 * m * (1.0 - delta))


def k1_closed_form(application, g0=None):
    """``K1 = 2`` for nested local refinement, ``2 (1 + g0)`` otherwise."""
    if application == "local_nested":
        return 2.0
    if g0 is None:
        raise ValueError(f"{application} needs g0 for K1")
    return 2.0 * (1.0 + g0)


def power_iteration(apply, n, tol=1e-12, maxit=20000, seed=0):
    """Dominant eigenvalue of a symmetric positive semidefinite map.

    Returns ``(eigenvalue, iterations)``; stops when the Rayleigh quotient
    changes by less than ``tol`` relatively.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for it in range(1, maxit + 1):
        y = apply(x)
        new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0, it
        x = y / ny
        if abs(new - lam) <= tol * abs(new):
            return new, it
        lam = new
    return lam, maxit


def subsolver_radii(d, tol=1e-12, maxit=20000, seed=0):
    """``rho(R^i A^i)`` per subspace.

    Exact solvers give 1 by construction; Richardson radii are measured by
    power iteration on ``R^i A^i``.
    """
    out = []
    for s in d.subspaces:
        sv = s.subsolver
        if sv.kind == "exact":
            out.append(1.0)
        else:
            L = sv.local_matrix
            out.append(power_iteration(lambda x: sv.apply(L @ x), s.dim, tol, maxit, seed)[0])
    return out


def estimate_w1(d, **kw):
    return max(subsolver_radii(d, **kw))


# ---------------------------------------------------------------- K0


def interpolation_matrix(space, pts):
    """Sparse map from free coefficients of ``space`` to values at ``pts``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    tri, lam = _locate(space.mesh, pts)
    rows = np.repeat(np.arange(len(pts)), 3)
    cols = space.mesh.triangles[tri].ravel()
    B = sparse.csr_matrix((lam.ravel(), (rows, cols)), shape=(len(pts), space.mesh.n_vertices))
    out = (B @ space.expansion).tocsr()
    out.eliminate_zeros()
    return out


@dataclass(eq=False)
class _Aux:
    """Uniform auxiliary hierarchy matched to one local_nested level ``k``."""

    spaces: list
    mass_lu: list
    to_top: list
    top_mass: sparse.csr_matrix
    embed: sparse.csr_matrix  # local level k -> uniform level k
    nodes: list  # per level i: uniform level-i row of each local level-i free node


def _aux(h, k, cap):
    key = ("aux", k, cap)
    if key in h._cache:
        return h._cache[key]
    meshes = [h.levels[0].mesh]
    for _ in range(k):
        meshes.append(meshmod.refine_uniform(meshes[-1]))
    spaces = [build_space(m) for m in meshes]
    if spaces[-1].dim > cap:
        raise DenseCapError(f"auxiliary uniform level {k} has {spaces[-1].dim} DoFs, cap is {cap}")
    Ps = [build_prolongation(spaces[i - 1], spaces[i]) for i in range(1, k + 1)]
    to_top = [compose_prolongations(Ps[i:]) for i in range(k)]
    to_top.append(sparse.identity(spaces[k].dim, format="csr"))
    masses = [assemble_mass(sp) for sp in spaces]
    nodes = []
    for i in range(k + 1):
        sp = spaces[i]
        pos = np.full(sp.mesh.n_vertices, -1, dtype=np.int64)
        pos[sp.free_dofs] = np.arange(sp.dim)
        xy = h.levels[i].space.dof_coordinates()
        ids = [sp.mesh.find_vertex(x, y) for x, y in xy]
        ids = np.array([-1 if v is None else v for v in ids], dtype=np.int64)
        if np.any(ids < 0) or np.any(pos[ids] < 0):
            raise DecompositionError(f"level {i} node missing from the uniform level-{i} mesh")
        nodes.append(pos[ids])
    aux = _Aux(
        spaces=spaces,
        mass_lu=[spd_factor(M, "auxiliary mass matrix") for M in masses],
        to_top=to_top,
        top_mass=masses[k],
        embed=interpolation_matrix(h.levels[k].space, spaces[k].dof_coordinates()),
        nodes=nodes,
    )
    h._cache[key] = aux
    return aux


def _interior_vertices(mesh, region_elements):
    """Vertices whose incident triangles all belong to ``region_elements``."""
    inc = mesh.vertex_triangles.tocsr()
    mask = np.zeros(mesh.n_triangles, dtype=float)
    mask[np.asarray(region_elements, dtype=np.int64)] = 1.0
    total = np.asarray(inc.sum(axis=1)).ravel()
    return (total > 0) & (inc @ mask == total)


def hierarchical_decomposition(v, h, k, cap=DENSE_CAP):
    """Components ``v_0 .. v_k`` (level-i coefficient vectors) of ``v`` in ``V_k``.

    ``Qhat_i v`` takes the value of the L2 projection onto the uniform
    level-i space at level-i nodes inside ``Omega_{i+1}`` and the value of
    ``v`` at every other level-i node; ``v_i = Qhat_i v - P_i Qhat_{i-1} v``.
    Blocks of column vectors are accepted.
    """
    if h.config.application != "local_nested":
        raise ValueError("hierarchical decomposition needs a local_nested hierarchy")
    if not 0 <= k <= h.J:
        raise ValueError(f"level {k} outside 0..{h.J}")
    v = np.asarray(v, dtype=float)
    if k == 0:
        return [v.copy()]
    aux = _aux(h, k, cap)
    nodal = h.levels[k].space.expansion @ v  # vertex ids are stable across levels
    rhs = aux.top_mass @ (aux.embed @ v)
    qhat = []
    for i in range(k):
        lv = h.levels[i]
        qbar = aux.mass_lu[i].solve(np.asarray(aux.to_top[i].T @ rhs))
        inside = _interior_vertices(lv.mesh, h.levels[i + 1].refined)[lv.space.free_dofs]
        inside = inside.reshape((-1,) + (1,) * (v.ndim - 1))
        qhat.append(np.where(inside, qbar[aux.nodes[i]], nodal[lv.space.free_dofs]))
    qhat.append(v.copy())
    comps = [qhat[0]]
    for i in range(1, k + 1):
        comps.append(qhat[i] - h.levels[i].P @ qhat[i - 1])
    return comps


def greedy_decomposition(v, d):
    """Coordinate split: each DoF goes to the first local subspace holding it."""
    v = np.asarray(v, dtype=float)
    n = d.A.shape[0]
    owner = np.full(n, -1, dtype=np.int64)
    for j, s in enumerate(d.subspaces):
        if s.dofs is None or s.source_level != d.level:
            continue
        fresh = s.dofs[owner[s.dofs] < 0]
        owner[fresh] = j
    if np.any(owner < 0):
        raise DecompositionError("some DoFs belong to no local subspace")
    comps = []
    for j, s in enumerate(d.subspaces):
        if s.dofs is None:
            comps.append(np.zeros((s.dim,) + v.shape[1:]))
        else:
            c = v[s.dofs].copy()
            c[owner[s.dofs] != j] = 0.0
            comps.append(c)
    return comps
def _components(h, k, d, V):
    if h.config.application == "local_nested":
        comps = hierarchical_decomposition(V, h, k)
        out = []
        for s in d.subspaces:
            c = comps[s.source_level]
            if s.dofs is None:
                out.append(c)
                continue
            keep = np.zeros(c.shape[0], dtype=bool)
            keep[s.dofs] = True
            leak = np.abs(c[~keep]).max(initial=0.0)
            if leak > 1e-9 * max(1.0, np.abs(c).max(initial=0.0)):
                raise DecompositionError(
                    f"level {k}: component {s.source_level} leaks outside its subspace ({leak:.3e})"
                )
            out.append(c[s.dofs])
        used = {s.source_level for s in d.subspaces}
        for i, c in enumerate(comps):
            if i not in used and np.abs(c).max(initial=0.0) > 1e-9:
                raise DecompositionError(f"level {k}: component {i} has no subspace")
        return out
    return greedy_decomposition(V, d)


def estimate_K0(h, k, probes=200, seed=0):
    """Measured K0: max over random unit-energy ``v`` of ``sum ((R^i)^{-1} v_i, v_i)``.

    The components come from the hierarchical decomposition for
    ``local_nested`` and from the greedy coordinate split otherwise, so the
    value is a lower estimate of the true constant.
    """
    if not 1 <= k <= h.J:
        raise ValueError(f"level {k} outside 1..{h.J}")
    lv = h.levels[k]
    d = lv.decomposition
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((lv.dim, probes))
    V /= np.sqrt(np.einsum("ij,ij->j", V, lv.A @ V))
    comps = _components(h, k, d, V)
    num = sum(s.subsolver.inverse_form(c) for s, c in zip(d.subspaces, comps))
    return float(np.max(num))


def a_projection(h, k):
    """Dense a-orthogonal projection of ``V_k`` onto ``V_{k-1}``, ``P (P.T A P)^{-1} P.T A``."""
    if not 1 <= k <= h.J:
        raise ValueError(f"level {k} outside 1..{h.J}")
    A = _dense(h.levels[k].A)
    P = _dense(h.levels[k].P)
    return P @ _coarse_projector(P, A)


def _coarse_projector(P, A):
    """``(P.T A P)^{-1} P.T A``, mapping level-k coefficients to level k-1."""
    AP = A @ P
    return cho_solve(cho_factor(P.T @ AP), AP.T)


def check_lemma_chain(S, A, m, projection, delta=None, probes=100, seed=0):
    """Largest relative violation of the four lemma inequalities.

    * monotonicity: ``a(S^b v, v) <= a(S^a v, v)``,
    * monotonicity: ``a((I - S) S^b v, v) <= a((I - S) S^a v, v)``,
    * smoothing: ``a((I - S) S^{2m} v, v) <= a((I - S^{2m}) v, v) / (2m)``,
    * approximation: ``a((I - P) w, w) <= a((I - S) w, w) / (1 - delta)``,

    for ``0 <= a < b <= 2m`` on unit-energy random probes. Violations are
    measured relative to ``a(v, v) = 1``.
    """
    A = _dense(A)
    n = A.shape[0]
    if m < 1:
        raise ValueError("m must be >= 1")
    if delta is None:
        delta = estimate_delta(S, A)[0]
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n, probes))
    V /= np.sqrt(np.einsum("ij,ij->j", V, A @ V))
    AV = A @ V
    powers = [V]
    for _ in range(2 * m + 1):
        powers.append(S @ powers[-1])
    f = np.array([np.einsum("ij,ij->j", X, AV) for X in powers])  # a(S^j v, v)
    g = f[:-1] - f[1:]  # a((I - S) S^j v, v)
    worst = {"monotonicity_1": 0.0, "monotonicity_2": 0.0, "smoothing": 0.0,
             "approximation": 0.0}
    for b in range(1, 2 * m + 1):
        worst["monotonicity_1"] = max(worst["monotonicity_1"], float((f[b] - f[:b]).max()))
    for b in range(1, 2 * m + 1):
        worst["monotonicity_2"] = max(worst["monotonicity_2"], float((g[b] - g[:b]).max()))
    lhs = g[2 * m]
    rhs = (f[0] - f[2 * m]) / (2 * m)
    worst["smoothing"] = float((lhs - rhs).max())
    if delta < 1:
        il = np.einsum("ij,ij->j", V - projection @ V, AV)
        ir = np.einsum("ij,ij->j", V - S @ V, AV) / (1.0 - delta)
        worst["approximation"] = float((il - ir).max())
    else:
        worst["approximation"] = float("inf")
    return {key: max(val, 0.0) for key, val in worst.items()}


def mg_error_matrix(h, k, cap=DENSE_CAP):
    """Dense ``E_k``: the V-cycle error map ``z0 -> MG_k(z0, 0)``."""
    if not 0 <= k <= h.J:
        raise ValueError(f"level {k} outside 0..{h.J}")
    n = h.levels[k].dim
    if k == 0:
        return np.zeros((n, n))
    return densify(lambda V: vcycle(h, k, V, np.zeros_like(V)), n, cap)


def recursion_defect(h, k, E_k=None, E_prev=None, S=None, cap=DENSE_CAP):
    """``max|E_k - S^m [I - P (I - E_{k-1}) Pc] S^m|`` with the dense a-projection."""
    if not 1 <= k <= h.J:
        raise ValueError(f"level {k} outside 1..{h.J}")
    lv = h.levels[k]
    E_k = mg_error_matrix(h, k, cap) if E_k is None else E_k
    E_prev = mg_error_matrix(h, k - 1, cap) if E_prev is None else E_prev
    S = smoother_error_matrix(h, k, cap) if S is None else S
    A = _dense(lv.A)
    P = _dense(lv.P)
    Pc = _coarse_projector(P, A)
    Sm = np.linalg.matrix_power(S, lv.m)
    inner = np.eye(lv.dim) - P @ ((np.eye(E_prev.shape[0]) - E_prev) @ Pc)
    return float(np.abs(E_k - Sm @ inner @ Sm).max())


def contraction(E, A):
    """``(rho_E, min_eig)``: extreme eigenvalues of ``a(E v, v) / a(v, v)``."""
    if E.size == 0 or not np.abs(E).max() > 0:
        return 0.0, 0.0
    w = _pencil(E, A)
    return float(w[-1]), float(w[0])


def check_psi(m, delta, tol=1e-9):
    """``psi_k = m_k (1 - delta_k)`` and whether it is non-increasing."""
    m = np.asarray(m, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if m.shape != delta.shape:
        raise ValueError("schedule and delta sequence lengths differ")
    psi = m * (1.0 - delta)
    ok = bool(np.all(np.diff(psi) <= tol * np.maximum(1.0, np.abs(psi[:-1])))) if psi.size else True
    return ok, psi.tolist()


# ---------------------------------------------------------------- reports


@dataclass
class LevelReport:
    k: int
    dim: int
    m: int
    p: int
    delta: float
    delta_envelope: float
    min_eig_S: float
    sym_residual: float
    w1: float
    psi: float
    gamma: float
    rho_E: float
    min_eig_E: float
    recursion_defect: float
    K0: float
    K1: float
    g0: int
    delta_theory: float
    lemma_violation: float


@dataclass
class AssumptionReport:
    application: str
    J: int
    schedule: list
    seed: int
    levels: list = field(default_factory=list)
    assumption1: bool = False
    assumption2: bool = False
    assumption3: bool = False
    gamma_bound: bool = False
    lemma_chain: bool = False

    @property
    def passed(self):
        return all((self.assumption1, self.assumption2, self.assumption3,
                    self.gamma_bound, self.lemma_chain))

    def to_dict(self):
        out = asdict(self)
        out["schema"] = 1
        out["passed"] = self.passed
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        names = [f.name for f in LevelReport.__dataclass_fields__.values()]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for lv in self.levels:
            row = asdict(lv) if not isinstance(lv, dict) else lv
            w.writerow([_fmt(row[n]) for n in names])
        return buf.getvalue()


def _fmt(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


def run_verification(h, cap=DENSE_CAP, seed=0, probes=100, k0_probes=200):
    """Measure every reported quantity level by level and evaluate the assumptions."""
    cfg = h.config
    rep = AssumptionReport(application=cfg.application, J=h.J, schedule=h.schedule, seed=seed)
    E_prev = np.zeros((h.levels[0].dim,) * 2)
    env = 0.0
    for k in range(1, h.J + 1):
        lv = h.levels[k]
        A = _dense(lv.A)
        S = smoother_error_matrix(h, k, cap)
        sym = a_symmetry_residual(S, A)
        w = _pencil(S, A)
        delta, mins = float(w[-1]), float(w[0])
        env = max(env, delta)
        E = mg_error_matrix(h, k, cap)
        rho, mine = contraction(E, A)
        defect = recursion_defect(h, k, E, E_prev, S, cap)
        E_prev = E
        w1 = estimate_w1(lv.decomposition, seed=seed)
        g0 = int(meshmod.adjacency_g0(lv.cover)) if lv.cover is not None else 0
        K1 = k1_closed_form(cfg.application, g0 if lv.cover is not None else None)
        K0 = estimate_K0(h, k, probes=k0_probes, seed=seed + k)
        lemma = check_lemma_chain(S, A, lv.m, a_projection(h, k), delta=delta,
                                  probes=probes, seed=seed + k)
        rep.levels.append(LevelReport(
            k=k, dim=lv.dim, m=lv.m, p=lv.decomposition.p, delta=delta, delta_envelope=env,
            min_eig_S=mins,
            sym_residual=sym, w1=w1, psi=lv.m * (1 - delta), gamma=gamma(lv.m, delta),
            rho_E=rho, min_eig_E=mine, recursion_defect=defect, K0=K0, K1=K1, g0=g0,
            delta_theory=theoretical_delta(w1, K0, K1) if w1 < 2 else float("nan"),
            lemma_violation=max(lemma.values()),
        ))
    L = rep.levels
    rep.assumption1 = all(x.sym_residual <= 1e-8 and x.min_eig_S >= -1e-9 for x in L)
    rep.assumption2 = all(x.delta < 1 for x in L)
    # any upper bound is an admissible delta_k; the running maximum removes
    # round-off level fluctuations of a flat sequence
    rep.assumption3 = check_psi([x.m for x in L], [x.delta_envelope for x in L])[0]
    rep.gamma_bound = all(x.rho_E <= x.gamma + 1e-6 for x in L)
    rep.lemma_chain = all(x.lemma_violation <= 1e-9 for x in L)
    return rep
