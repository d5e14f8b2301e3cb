"""Acceptance criteria 1-10.

Each test records ``RESULTS[n] = (passed, detail)`` before asserting, and the
terminal summary (see ``conftest.py``) prints one PASS/FAIL line per
criterion. Dense oracles stay below 2500 unknowns.
"""

import time

import numpy as np
import pytest

from conftest import cached_hierarchy
from sscmg.space import nodal_values, spd_factor
from sscmg.verify import (
    a_projection,
    a_symmetry_residual,
    check_lemma_chain,
    contraction,
    estimate_K0,
    estimate_delta,
    gamma,
    mg_error_matrix,
    recursion_defect,
    smoother_error_matrix,
    subsolver_radii,
    sweep_error_matrix,
    t_matrix,
)
from sscmg.multigrid import solve

RESULTS = {}
APPS = ("uniform", "local_nested", "local_nonnested")


def _record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_01_smoother_legality():
    t0 = time.perf_counter()
    worst_sym, worst_min, worst_delta = 0.0, np.inf, 0.0
    configs = [(app, 2, (2, 2)) for app in APPS]
    configs += [("uniform", 4, (4, 4)), ("local_nonnested", 4, (4, 4))]
    for app, n, grid in configs:
        for J in (1, 2, 3):
            h = cached_hierarchy(app, J=J, n=n, grid=grid)
            for k in range(1, J + 1):
                S = smoother_error_matrix(h, k)
                worst_sym = max(worst_sym, a_symmetry_residual(S, h.levels[k].A))
                d, lo = estimate_delta(S, h.levels[k].A)
                worst_min, worst_delta = min(worst_min, lo), max(worst_delta, d)
    secs = time.perf_counter() - t0
    ok = worst_sym <= 1e-8 and worst_min >= -1e-9 and worst_delta < 1 and secs <= 60
    _record(1, ok, f"sym residual {worst_sym:.1e}, min eig {worst_min:.1e}, "
                   f"max delta {worst_delta:.4f}, {secs:.1f}s")


def test_criterion_02_error_recursion():
    t0 = time.perf_counter()
    worst_def, worst_sym, worst_min = 0.0, 0.0, np.inf
    for app, n, grid in [(a, 2, (2, 2)) for a in APPS] + [("local_nonnested", 4, (4, 4))]:
        h = cached_hierarchy(app, J=3, n=n, grid=grid)
        E_prev = mg_error_matrix(h, 0)
        for k in (1, 2, 3):
            E = mg_error_matrix(h, k)
            worst_def = max(worst_def, recursion_defect(h, k, E, E_prev))
            A = h.levels[k].A
            worst_sym = max(worst_sym, a_symmetry_residual(E, A))
            worst_min = min(worst_min, contraction(E, A)[1])
            E_prev = E
    secs = time.perf_counter() - t0
    ok = worst_def <= 1e-9 and worst_sym <= 1e-8 and worst_min >= -1e-9 and secs <= 60
    _record(2, ok, f"recursion defect {worst_def:.1e}, sym {worst_sym:.1e}, "
                   f"min eig {worst_min:.1e}, {secs:.1f}s")


BOUND_CONFIGS = [
    ("uniform", 4, (2, 2), "constant", 1, 1),
    ("uniform", 4, (4, 4), "decreasing", 1, 1),
    ("local_nonnested", 4, (4, 4), "constant", 2, 1),
    ("local_nonnested", 2, (2, 2), "increasing", 1, 1),
    ("local_nested", 2, (2, 2), "constant", 1, 1),
    ("local_nested", 2, (2, 2), "decreasing", 1, 1),
    ("local_nested", 2, (2, 2), "increasing", 1, 1),
    ("local_nested", 2, (2, 2), "optimal_quadratic", 1, 1),
]


def test_criterion_03_main_bound():
    t0 = time.perf_counter()
    margins = []
    for app, n, grid, kind, m, q in BOUND_CONFIGS:
        h = cached_hierarchy(app, J=3, n=n, grid=grid, kind=kind, m=m, q=q)
        top = h.levels[-1]
        rho = contraction(mg_error_matrix(h, 3), top.A.toarray())[0]
        delta = estimate_delta(smoother_error_matrix(h, 3), top.A)[0]
        margins.append(gamma(top.m, delta) + 1e-6 - rho)
    secs = time.perf_counter() - t0
    ok = min(margins) >= 0 and len(margins) >= 6 and secs <= 300
    _record(3, ok, f"{len(margins)} configurations, smallest margin gamma_J - rho_E "
                   f"{min(margins):.4f}, {secs:.1f}s")


def test_criterion_04_lemma_chain():
    worst, levels = 0.0, 0
    for app, n, grid, m in [("uniform", 4, (4, 4), 1), ("local_nonnested", 2, (2, 2), 2),
                            ("local_nested", 2, (2, 2), 1), ("local_nested", 2, (2, 2), 3)]:
        h = cached_hierarchy(app, J=3, n=n, grid=grid, m=m)
        for k in (1, 2, 3):
            S = smoother_error_matrix(h, k)
            v = check_lemma_chain(S, h.levels[k].A, h.levels[k].m, a_projection(h, k),
                                  probes=100, seed=k)
            worst = max(worst, max(v.values()))
            levels += 1
    _record(4, worst <= 1e-9, f"{levels} levels x 100 probes, worst relative violation {worst:.1e}")


def test_criterion_05_ssc_identities():
    worst_prod, worst_star, worst_energy = 0.0, 0.0, 0.0
    for app, n, grid in [(a, 2, (2, 2)) for a in APPS] + [("uniform", 4, (4, 4))]:
        h = cached_hierarchy(app, J=2, n=n, grid=grid)
        lv = h.levels[2]
        d = lv.decomposition
        A = lv.A.toarray()
        I = np.eye(lv.dim)
        prod = I.copy()
        for i in range(d.p + 1):
            prod = prod @ (I - t_matrix(d, i))
        Ef = sweep_error_matrix(d, "forward")
        Es = smoother_error_matrix(h, 2)
        star = np.linalg.solve(A, Ef.T @ A)
        worst_prod = max(worst_prod, np.abs(Ef - prod).max())
        worst_star = max(worst_star, np.abs(Es - star @ Ef).max())
        V = np.random.default_rng(0).standard_normal((lv.dim, 50))
        V /= np.sqrt(np.einsum("ij,ij->j", V, A @ V))
        lhs = np.einsum("ij,ij->j", Es @ V, A @ V)
        EV = Ef @ V
        rhs = np.einsum("ij,ij->j", EV, A @ EV)
        worst_energy = max(worst_energy, np.abs(lhs - rhs).max())
    ok = max(worst_prod, worst_star, worst_energy) <= 1e-10
    _record(5, ok, f"product {worst_prod:.1e}, adjoint {worst_star:.1e}, energy {worst_energy:.1e}")


def test_criterion_06_w1():
    exact = [r for app in ("uniform", "local_nonnested")
             for k in (1, 2, 3)
             for r in subsolver_radii(cached_hierarchy(app, J=3).levels[k].decomposition)]
    h = cached_hierarchy("local_nested", J=4)
    rel = 0.0
    for k in range(1, 5):
        radii = subsolver_radii(h.levels[k].decomposition)
        rel = max(rel, max(abs(r * k - 1.0) for r in radii[1:]))
    ok = all(r == 1.0 for r in exact) and rel <= 1e-5
    _record(6, ok, f"exact subsolvers all 1.0: {all(r == 1.0 for r in exact)}, "
                   f"nested-local max |k rho - 1| {rel:.1e}")


def _rho_top(h):
    return contraction(mg_error_matrix(h, h.J), h.levels[-1].A.toarray())[0]


def test_criterion_07_level_trends():
    t0 = time.perf_counter()
    uni = [_rho_top(cached_hierarchy("uniform", J=J)) for J in (1, 2, 3, 4)]
    uni4 = [_rho_top(cached_hierarchy("uniform", J=J, n=4, grid=(4, 4))) for J in (1, 2, 3)]
    nest = [_rho_top(cached_hierarchy("local_nested", J=J)) for J in (1, 2, 3, 4)]
    quad = [_rho_top(cached_hierarchy("local_nested", J=J, kind="optimal_quadratic"))
            for J in (1, 2, 3, 4)]
    secs = time.perf_counter() - t0
    ok_u = np.ptp(uni) <= 0.05 and np.ptp(uni4) <= 0.05
    ok_n = bool(np.all(np.diff(nest) >= -1e-12))
    ok_q = np.ptp(quad) <= 0.1
    ok = ok_u and ok_n and ok_q and secs <= 600
    _record(7, ok, f"uniform spread {np.ptp(uni):.1e} (n=4: {np.ptp(uni4):.1e}); "
                   f"nested m=1 {[round(x, 3) for x in nest]}; "
                   f"nested 1+k^2 spread {np.ptp(quad):.4f}; {secs:.1f}s")


def test_criterion_08_k0_growth():
    h = cached_hierarchy("local_nested", J=4)
    ks = np.arange(1, 5)
    nested = np.array([estimate_K0(h, k, probes=200, seed=k) for k in ks])
    alpha = np.polyfit(np.log(ks), np.log(nested), 1)[0]
    hu = cached_hierarchy("uniform", J=4, n=4, grid=(2, 2))
    uni = np.array([estimate_K0(hu, k, probes=200, seed=k) for k in ks])
    spread = (uni.max() - uni.min()) / uni.min()
    ok = alpha <= 2.3 and spread <= 0.25
    _record(8, ok, f"nested K0 {np.round(nested, 3).tolist()} alpha {alpha:.3f}; "
                   f"uniform K0 {np.round(uni, 3).tolist()} spread {100 * spread:.1f}%")


def test_criterion_09_end_to_end():
    worst_err, worst_margin = 0.0, np.inf
    for app, n, grid in [(a, 2, (2, 2)) for a in APPS] + [("uniform", 4, (4, 4))]:
        h = cached_hierarchy(app, J=3, n=n, grid=grid)
        top = h.levels[-1]
        ref = spd_factor(top.A).solve(h.load)
        z, rep = solve(h, rel_tol=1e-10, max_cycles=200, reference=ref)
        e = ref - z
        worst_err = max(worst_err, float(np.sqrt(e @ (top.A @ e) / (ref @ (top.A @ ref)))))
        delta = estimate_delta(smoother_error_matrix(h, 3), top.A)[0]
        bound = gamma(top.m, delta) + 0.05
        # ratios are compared while the error is above round-off
        errs = [1.0] + rep.energy_errors
        for q, before in zip(rep.ratios, errs[:-1]):
            if before > 1e-12:
                worst_margin = min(worst_margin, bound - q)
    ok = worst_err <= 1e-8 and worst_margin >= 0
    _record(9, ok, f"worst relative energy error {worst_err:.1e}, "
                   f"smallest margin gamma_J + 0.05 - ratio {worst_margin:.4f}")


def _max_hanging_per_edge(mesh):
    xy = mesh.vertices
    hang = [r.hanging_vertex for r in mesh.hanging]
    best = 0
    for t in mesh.triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            d = xy[b] - xy[a]
            w = xy[hang] - xy[a]
            cross = np.abs(d[0] * w[:, 1] - d[1] * w[:, 0])
            s = (w @ d) / (d @ d)
            best = max(best, int(np.sum((cross < 1e-12) & (s > 1e-12) & (s < 1 - 1e-12))))
    return best


def _continuity_defect(mesh, nodal):
    """Largest disagreement among all triangles touching sample points on constrained edges."""
    xy = mesh.vertices
    tri = mesh.triangles
    worst, samples = 0.0, 0
    for rec in mesh.hanging:
        a, b = rec.edge
        for s in np.linspace(0, 1, 7)[1:-1]:
            p = (1 - s) * xy[a] + s * xy[b]
            v0, v1, v2 = xy[tri[:, 0]], xy[tri[:, 1]], xy[tri[:, 2]]
            det = (v1[:, 0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (v2[:, 0] - v0[:, 0]) * (v1[:, 1] - v0[:, 1])
            l1 = ((p[0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (v2[:, 0] - v0[:, 0]) * (p[1] - v0[:, 1])) / det
            l2 = ((v1[:, 0] - v0[:, 0]) * (p[1] - v0[:, 1]) - (p[0] - v0[:, 0]) * (v1[:, 1] - v0[:, 1])) / det
            lam = np.column_stack([1 - l1 - l2, l1, l2])
            hit = np.flatnonzero(lam.min(axis=1) >= -1e-12)
            vals = np.einsum("ij,ij->i", lam[hit], nodal[tri[hit]])
            if hit.size < 2:
                raise AssertionError(f"sample on edge {rec.edge} touches {hit.size} triangle")
            worst = max(worst, float(np.ptp(vals)))
            samples += 1
    return worst, samples


def test_criterion_10_hanging_continuity():
    worst, samples, multi = 0.0, 0, 0
    rng = np.random.default_rng(0)
    for J in (2, 3, 4):
        for app in ("local_nested", "local_nonnested"):
            lv = cached_hierarchy(app, J=J).levels[-1]
            multi = max(multi, _max_hanging_per_edge(lv.mesh))
            for _ in range(3):
                nodal = nodal_values(lv.space, rng.standard_normal(lv.dim))
                w, s = _continuity_defect(lv.mesh, nodal)
                worst, samples = max(worst, w), samples + s
    ok = worst <= 1e-10 and multi >= 2
    _record(10, ok, f"{samples} edge samples, worst jump {worst:.1e}, "
                    f"max hanging nodes on one edge {multi}")
