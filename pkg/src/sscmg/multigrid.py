"""Hierarchies, the symmetric V-cycle and the outer solver loop.

Three applications are supported:

``uniform``
    uniform midpoint refinement; smoother subspaces are the coarse space
    and the functions supported in h0-overlapping boxes, solved exactly.
``local_nested``
    midpoint refinement restricted to nested regions Omega_1 ... Omega_J;
    subspace i holds level-i functions supported in Omega_i, smoothed by
    scaled Richardson ``I / (lambda^i k)``.
``local_nonnested``
    the same irregular meshes with the overlapping-box subspaces of the
    uniform case, solved exactly on the constrained space.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import mesh as meshmod
from .exceptions import MeshError, NonConvergence
from .smoother import (
    decomposition_nested_local,
    decomposition_nonnested_local,
    decomposition_uniform,
    ssc_sweep_symmetric,
)
from .space import (
    CoefficientField,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    build_space,
    spd_factor,
)
from .transfer import build_prolongation, compose_prolongations, galerkin_defect

__all__ = [
    "APPLICATIONS",
    "ScheduleSpec",
    "HierarchyConfig",
    "Level",
    "Hierarchy",
    "CycleReport",
    "make_schedule",
    "default_regions",
    "manufactured_problem",
    "build_hierarchy",
    "vcycle",
    "solve",
]

APPLICATIONS = ("uniform", "local_nested", "local_nonnested")
SCHEDULES = ("constant", "decreasing", "increasing", "optimal_quadratic")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "constant"
    m: int = 1
    q: int = 1

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.kind!r}; choose from {SCHEDULES}")


def make_schedule(spec, J):
    """Smoothing counts ``[m_1, ..., m_J]``."""
    if J < 1:
        raise ValueError("a schedule needs J >= 1")
    ks = np.arange(1, J + 1)
    if spec.kind == "constant":
        if spec.m < 1:
            raise ValueError("constant schedule needs m >= 1")
        out = np.full(J, spec.m)
    elif spec.kind == "decreasing":
        out = J + 1 - ks
    elif spec.kind == "increasing":
        out = 1 + ks
    else:
        if spec.q < 1:
            raise ValueError("optimal_quadratic schedule needs q >= 1")
        out = spec.q * (1 + ks**2)
    return [int(m) for m in out]


def default_regions(J):
    """Corner boxes ``[0, s_k]^2`` with s = 1/2, 1/2, 1/4, 1/4, 1/8, ...

    Each box is used twice before halving, so some coarse edges collect
    two hanging nodes.
    """
    return [(0.0, 0.0, s, s) for s in (0.5 ** (1 + (k - 1) // 2) for k in range(1, J + 1))]


def manufactured_problem(theta=None):
    """``u = sin(pi x) sin(pi y)`` and the matching right-hand side."""
    t = (CoefficientField() if theta is None else theta).matrix
    pi2 = np.pi**2

    def u(x, y):
        return np.sin(np.pi * x) * np.sin(np.pi * y)

    def f(x, y):
        ss = np.sin(np.pi * x) * np.sin(np.pi * y)
        cc = np.cos(np.pi * x) * np.cos(np.pi * y)
        return pi2 * ((t[0, 0] + t[1, 1]) * ss - 2.0 * t[0, 1] * cc)

    return u, f


@dataclass(frozen=True)
class HierarchyConfig:
    application: str = "uniform"
    n: int = 2
    J: int = 2
    grid: tuple = (2, 2)
    regions: tuple = None
    schedule: ScheduleSpec = ScheduleSpec()
    theta: CoefficientField = CoefficientField()
    overlap: float = None
    rhs: object = "manufactured"

    def __post_init__(self):
        if self.application not in APPLICATIONS:
            raise ValueError(f"unknown application {self.application!r}; choose from {APPLICATIONS}")
        if self.J < 0:
            raise ValueError("J must be >= 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass(eq=False)
class Level:
    k: int
    mesh: object
    space: object
    A: sparse.csr_matrix
    M: sparse.csr_matrix
    P: sparse.csr_matrix = None
    decomposition: object = None
    m: int = 0
    cover: object = None
    region_elements: np.ndarray = None
    refined: np.ndarray = None

    @property
    def dim(self):
        return self.space.dim


@dataclass(eq=False)
class Hierarchy:
    config: HierarchyConfig
    levels: list
    load: np.ndarray = None
    _coarse_lu: object = None
    _embeds: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict)

    @property
    def J(self):
        return len(self.levels) - 1

    @property
    def schedule(self):
        return [lv.m for lv in self.levels[1:]]

    def embed(self, i, k):
        """``P_k ... P_{i+1}``: level-i coefficients to level-k coefficients."""
        if (i, k) not in self._embeds:
            if i == k:
                E = sparse.identity(self.levels[k].dim, format="csr")
            else:
                E = compose_prolongations([self.levels[j].P for j in range(i + 1, k + 1)])
            self._embeds[(i, k)] = E
        return self._embeds[(i, k)]

    def coarse_solve(self, f0):
        if self.levels[0].dim == 0:
            return np.zeros_like(np.asarray(f0, dtype=float))
        return self._coarse_lu.solve(np.asarray(f0, dtype=float))


def _build_meshes(cfg):
    meshes = [meshmod.unit_square_coarse(cfg.n)]
    refined = [None]
    if cfg.application == "uniform":
        for _ in range(cfg.J):
            refined.append(np.arange(meshes[-1].n_triangles))
            meshes.append(meshmod.refine_uniform(meshes[-1]))
        return meshes, refined
    regions = default_regions(cfg.J) if cfg.regions is None else list(cfg.regions)
    if len(regions) != cfg.J:
        raise MeshError(f"need one refinement region per level 1..{cfg.J}, got {len(regions)}")
    for k, box in enumerate(regions, start=1):
        prev = meshes[-1]
        elems = meshmod.elements_in_box(prev, box)
        if elems.size == 0:
            raise MeshError(f"level {k}: region {box} contains no level-{k - 1} element")
        if np.any(prev.depth[elems] != k - 1):
            raise MeshError(
                f"level {k}: region {box} leaves Omega_{k - 1}; regions must be nested"
            )
        inner = np.flatnonzero(prev.depth == k - 1)
        bc = prev.barycenters()[inner]
        x0, y0, x1, y1 = box
        cut = (bc[:, 0] > x0) & (bc[:, 0] < x1) & (bc[:, 1] > y0) & (bc[:, 1] < y1)
        if cut.sum() != elems.size:
            raise MeshError(f"level {k}: region {box} does not align with level-{k - 1} elements")
        refined.append(elems)
        meshes.append(meshmod.refine_local(prev, elems))
    return meshes, refined


def build_hierarchy(config):
    """Construct and validate every level of the requested application.

    Nestedness, Galerkin consistency and decomposition spanning are
    checked eagerly; failures name the offending level.
    """
    cfg = config
    meshes, refined = _build_meshes(cfg)
    ms = make_schedule(cfg.schedule, cfg.J) if cfg.J >= 1 else []
    levels = []
    for k, mesh in enumerate(meshes):
        space = build_space(mesh)
        try:
            A = assemble_stiffness(space, cfg.theta)
            M = assemble_mass(space)
        except ValueError as exc:
            raise type(exc)(f"level {k}: {exc}") from exc
        lv = Level(k=k, mesh=mesh, space=space, A=A, M=M, refined=refined[k],
                   m=ms[k - 1] if k else 0)
        if k:
            prev = levels[-1]
            lv.P = build_prolongation(prev.space, space)
            for name, coarse, fine in (("stiffness", prev.A, A), ("mass", prev.M, M)):
                d = galerkin_defect(coarse, lv.P, fine)
                if d > 1e-12:
                    raise ValueError(f"level {k}: {name} Galerkin defect {d:.3e}")
            lv.region_elements = np.flatnonzero(mesh.depth == k)
        levels.append(lv)

    h = Hierarchy(config=cfg, levels=levels)
    h._coarse_lu = spd_factor(levels[0].A, "coarse stiffness matrix")
    for k in range(1, cfg.J + 1):
        lv = levels[k]
        if cfg.application == "local_nested":
            embeds = {i: h.embed(i, k) for i in range(k + 1)}
            lv.decomposition = decomposition_nested_local(levels, k, embeds)
        else:
            cover = meshmod.partition_nonoverlapping(lv.mesh, cfg.grid)
            lv.cover = meshmod.grow_overlap(lv.mesh, cover, cfg.overlap)
            build = decomposition_uniform if cfg.application == "uniform" else decomposition_nonnested_local
            lv.decomposition = build(lv.space, lv.A, h.embed(0, k), lv.cover, k)
        if lv.dim <= 2500 and not lv.decomposition.spans():
            raise ValueError(f"level {k}: subspaces do not span V_{k}")
    h.load = _top_load(h)
    return h


def _top_load(h):
    top = h.levels[-1]
    rhs = h.config.rhs
    if isinstance(rhs, str):
        if rhs == "manufactured":
            return assemble_load(top.space, manufactured_problem(h.config.theta)[1])
        if rhs == "constant":
            return assemble_load(top.space, lambda x, y: np.ones_like(x))
        raise ValueError(f"unknown rhs selector {rhs!r}")
    b = np.asarray(rhs, dtype=float).ravel()
    if b.shape != (top.dim,):
        raise ValueError(f"rhs vector has {b.size} entries, finest level has {top.dim} DoFs")
    return b


def vcycle(h, k, z0, fk):
    """One pass of the symmetric V-cycle on level ``k``.

    ``m_k`` symmetric SSC sweeps, correction from a zero-start cycle on
    level ``k - 1`` driven by ``P.T`` of the residual, then ``m_k`` sweeps
    again. Level 0 is solved exactly. Blocks of column vectors are allowed.
    """
    fk = np.asarray(fk, dtype=float)
    if k == 0:
        return h.coarse_solve(fk)
    lv = h.levels[k]
    z = np.array(z0, dtype=float, copy=True)
    if z.shape != fk.shape or z.shape[0] != lv.dim:
        raise ValueError(f"level {k}: expected {lv.dim} rows, got z0 {z.shape}, f {fk.shape}")
    d = lv.decomposition
    for _ in range(lv.m):
        z = ssc_sweep_symmetric(z, fk, d)
    fbar = lv.P.T @ (fk - lv.A @ z)
    q = vcycle(h, k - 1, np.zeros_like(fbar), fbar)
    z = z + lv.P @ q
    for _ in range(lv.m):
        z = ssc_sweep_symmetric(z, fk, d)
    return z


@dataclass
class CycleReport:
    residuals: list = field(default_factory=list)
    energy_errors: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    converged: bool = False

    @property
    def cycles(self):
        return len(self.residuals)

    def rows(self):
        for i, r in enumerate(self.residuals):
            e = self.energy_errors[i] if self.energy_errors else None
            yield i + 1, r, e, self.ratios[i]


def solve(h, f=None, rel_tol=1e-8, max_cycles=100, reference=None, z0=None):
    """Repeat V-cycles from ``z0`` (default zero) until ``|r|_2 / |f|_2 < rel_tol``.

    With ``reference`` (a discrete solution, or ``True`` to compute one by
    a direct sparse solve) relative energy errors are tracked and the
    reported ratios are energy-norm contraction factors; otherwise they are
    residual ratios.
    """
    if not 0 < rel_tol <= 1:
        raise ValueError("rel_tol must lie in (0, 1]")
    if max_cycles < 1:
        raise ValueError("max_cycles must be >= 1")
    top = h.levels[-1]
    A = top.A
    f = h.load if f is None else np.asarray(f, dtype=float)
    report = CycleReport()
    norm_f = np.linalg.norm(f)
    z = np.zeros(top.dim) if z0 is None else np.array(z0, dtype=float)
    if norm_f == 0 and z0 is None:
        report.converged = True
        return z, report
    if reference is True:
        reference = spd_factor(A).solve(f)

    def energy(e):
        return float(np.sqrt(max(e @ (A @ e), 0.0)))

    if reference is not None:
        ref_energy = energy(reference) or 1.0
        prev = energy(reference - z)
    else:
        prev = np.linalg.norm(f - A @ z)
    scale = norm_f if norm_f > 0 else 1.0
    for _ in range(max_cycles):
        t0 = time.perf_counter()
        z = vcycle(h, h.J, z, f)
        report.seconds.append(time.perf_counter() - t0)
        res = np.linalg.norm(f - A @ z)
        report.residuals.append(res / scale)
        if reference is not None:
            err = energy(reference - z)
            report.energy_errors.append(err / ref_energy)
            report.ratios.append(err / prev if prev > 0 else 0.0)
            prev = err
        else:
            report.ratios.append(res / prev if prev > 0 else 0.0)
            prev = res
        if res / scale < rel_tol:
            report.converged = True
            return z, report
    raise NonConvergence(
        f"no convergence to rel_tol={rel_tol:g} in {max_cycles} cycles "
        f"(last relative residual {report.residuals[-1]:.3e})",
        report,
    )
