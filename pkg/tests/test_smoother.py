import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from conftest import cached_hierarchy
from sscmg.exceptions import DecompositionError
from sscmg.mesh import grow_overlap, partition_nonoverlapping
from sscmg.smoother import (
    ExactSolver,
    ScaledRichardson,
    Subspace,
    Decomposition,
    coordinate_subspaces,
    decomposition_uniform,
    ssc_sweep,
    ssc_sweep_symmetric,
)
from sscmg.space import evaluate_points
from sscmg.verify import sweep_error_matrix, t_matrix

APPS = ["uniform", "local_nested", "local_nonnested"]


def _energy(A, v):
    return float(v @ (A @ v))


def test_exact_solver_inverts():
    h = cached_hierarchy("uniform", J=1, n=4)
    for s in h.levels[1].decomposition.subspaces:
        r = np.random.default_rng(0).standard_normal(s.dim)
        np.testing.assert_allclose(s.local_matrix @ s.subsolver.apply(r), r, rtol=1e-10, atol=1e-12)
        if s.dofs is not None:
            assert np.all(np.diff(s.dofs) > 0) and s.dofs.size > 0


def test_richardson_invariants():
    h = cached_hierarchy("local_nested", J=3)
    for k in (1, 2, 3):
        for s in h.levels[k].decomposition.subspaces[1:]:
            sv = s.subsolver
            assert isinstance(sv, ScaledRichardson)
            assert sv.lambda_i >= s.local_matrix.diagonal().max()
            assert sv.scale == pytest.approx(1.0 / (sv.lambda_i * k))


def test_nested_local_structure():
    h = cached_hierarchy("local_nested", J=3)
    d1 = h.levels[1].decomposition
    assert d1.p == 1 and [s.source_level for s in d1.subspaces] == [0, 1]
    d3 = h.levels[3].decomposition
    assert [s.source_level for s in d3.subspaces] == [0, 1, 2, 3]
    # subspace DoF sets do not depend on the level they are used on
    for i in (1, 2):
        np.testing.assert_array_equal(h.levels[i].decomposition.subspaces[i].dofs,
                                      d3.subspaces[i].dofs)


def test_nested_embedding_evaluates_identically():
    h = cached_hierarchy("local_nested", J=3)
    d = h.levels[3].decomposition
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 1, (100, 2))
    for s in d.subspaces[1:]:
        c = rng.standard_normal(s.dim)
        coarse = np.zeros(h.levels[s.source_level].dim)
        coarse[s.dofs] = c
        np.testing.assert_allclose(evaluate_points(h.levels[3].space, s.embed @ c, pts),
                                   evaluate_points(h.levels[s.source_level].space, coarse, pts),
                                   atol=1e-12)


def test_uniform_cover_counts_on_n4():
    h = cached_hierarchy("uniform", J=1, n=4)
    d = h.levels[1].decomposition
    counts = np.zeros(h.levels[1].dim, dtype=int)
    for s in d.subspaces[1:]:
        counts[s.dofs] += 1
    assert counts.min() >= 1
    assert [s.dim for s in d.subspaces[1:]] == [s.dofs.size for s in d.subspaces[1:]]
    assert counts.max() >= 2


def test_zero_overlap_leaves_dofs_uncovered():
    h = cached_hierarchy("uniform", J=1, n=4)
    lv = h.levels[1]
    cov = grow_overlap(lv.mesh, partition_nonoverlapping(lv.mesh, (2, 2)), radius=0.0)
    with pytest.raises(DecompositionError):
        coordinate_subspaces(lv.space, lv.A, cov, 1)


def test_whole_domain_cover_gives_zero_smoother():
    h = cached_hierarchy("local_nonnested", J=2)
    lv = h.levels[2]
    cov = grow_overlap(lv.mesh, partition_nonoverlapping(lv.mesh, (1, 1)))
    d = decomposition_uniform(lv.space, lv.A, h.embed(0, 2), cov, 2)
    assert d.p == 1
    v = np.random.default_rng(0).standard_normal(lv.dim)
    e = ssc_sweep_symmetric(v, np.zeros_like(v), d)
    assert _energy(lv.A, e) <= 1e-20 * _energy(lv.A, v)


def test_nonnested_interfaces_shared_and_hanging_supports_respected():
    h = cached_hierarchy("local_nonnested", J=2, n=4)
    lv = h.levels[2]
    d = lv.decomposition
    counts = np.zeros(lv.dim, dtype=int)
    for s in d.subspaces[1:]:
        counts[s.dofs] += 1
    assert counts.max() >= 2
    inc = lv.mesh.vertex_triangles.T
    touch = (abs(inc) @ abs(lv.space.expansion)).tocsc()
    for s, elems in zip(d.subspaces[1:], lv.cover.overlapping):
        allowed = set(elems.tolist())
        for dof in s.dofs:
            support = touch[:, dof].nonzero()[0]
            assert set(support.tolist()) <= allowed


@pytest.mark.parametrize("app", APPS)
def test_sweep_fixed_point_and_products(app):
    h = cached_hierarchy(app, J=2, n=4 if app != "local_nested" else 2)
    lv = h.levels[2]
    d = lv.decomposition
    A = lv.A.toarray()
    n = lv.dim
    rng = np.random.default_rng(3)
    u = rng.standard_normal(n)
    f = A @ u
    np.testing.assert_allclose(ssc_sweep(u, f, d), u, atol=1e-12)
    np.testing.assert_allclose(ssc_sweep_symmetric(u, f, d), u, atol=1e-12)
    I = np.eye(n)
    prod = I.copy()
    for i in range(d.p + 1):
        prod = prod @ (I - t_matrix(d, i))
    Ef = sweep_error_matrix(d, "forward")
    assert np.abs(Ef - prod).max() <= 1e-10
    Es = sweep_error_matrix(d, "backward") @ Ef
    star = np.linalg.solve(A, Ef.T @ A)
    assert np.abs(Es - star @ Ef).max() <= 1e-10


@pytest.mark.parametrize("app", APPS)
def test_t_operators_symmetric_semidefinite(app):
    h = cached_hierarchy(app, J=2)
    lv = h.levels[2]
    A = lv.A.toarray()
    for i in range(lv.decomposition.p + 1):
        T = t_matrix(lv.decomposition, i)
        AT = A @ T
        assert np.abs(AT - AT.T).max() <= 1e-10 * max(1, np.abs(A).max())
        assert np.linalg.eigvalsh(0.5 * (AT + AT.T)).min() >= -1e-10 * np.abs(A).max()


@settings(max_examples=15, deadline=None)
@given(app=st.sampled_from(APPS), seed=st.integers(0, 10_000))
def test_sweep_linearity_and_energy_monotonicity(app, seed):
    h = cached_hierarchy(app, J=2)
    lv = h.levels[2]
    d = lv.decomposition
    rng = np.random.default_rng(seed)
    z, f, u = rng.standard_normal((3, lv.dim))
    zero = np.zeros(lv.dim)
    lhs = ssc_sweep_symmetric(z, f, d)
    rhs = ssc_sweep_symmetric(z, zero, d) + ssc_sweep_symmetric(zero, f, d) - ssc_sweep_symmetric(zero, zero, d)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * max(1, np.abs(lhs).max()))
    b = lv.A @ u
    assert _energy(lv.A, u - ssc_sweep_symmetric(z, b, d)) <= _energy(lv.A, u - z) * (1 + 1e-12)


@settings(max_examples=10, deadline=None)
@given(app=st.sampled_from(APPS), seed=st.integers(0, 10_000))
def test_energy_identity_of_symmetric_sweep(app, seed):
    h = cached_hierarchy(app, J=2)
    lv = h.levels[2]
    d = lv.decomposition
    v = np.random.default_rng(seed).standard_normal(lv.dim)
    zero = np.zeros_like(v)
    es = ssc_sweep_symmetric(v, zero, d)
    e = ssc_sweep(v, zero, d, "forward")
    assert abs(es @ (lv.A @ v) - _energy(lv.A, e)) <= 1e-10 * _energy(lv.A, v)


def test_single_full_subspace_solves_in_one_sweep():
    h = cached_hierarchy("uniform", J=1, n=4)
    lv = h.levels[1]
    sel = sparse.identity(lv.dim, format="csr")
    d = Decomposition(level=1, A=lv.A, subspaces=[Subspace(sel, ExactSolver(lv.A), 1,
                                                           np.arange(lv.dim))])
    u = np.random.default_rng(0).standard_normal(lv.dim)
    np.testing.assert_allclose(ssc_sweep(np.zeros(lv.dim), lv.A @ u, d), u, atol=1e-12)


def test_bad_order_rejected():
    h = cached_hierarchy("uniform", J=1)
    with pytest.raises(ValueError):
        ssc_sweep(np.zeros(9), np.zeros(9), h.levels[1].decomposition, "sideways")
