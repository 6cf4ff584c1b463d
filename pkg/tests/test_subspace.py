import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import unit_rows
from kscl.errors import AllZeroSpectrum, DimensionMismatch, EmptyKeys, InvalidConfig, KExceedsDim, NonUnitKey
from kscl.subspace import (
    InstanceSubspace,
    TruncationPolicy,
    build_subspace,
    build_subspaces,
    project,
    projection_distance,
    projection_length,
    select_rank,
    stack_bases,
)

FULL = TruncationPolicy(rho=1.0)


def gram_schmidt(keys):
    basis = []
    for v in keys:
        w = v - sum((b @ v) * b for b in basis)
        n = np.linalg.norm(w)
        if n > 1e-9:
            basis.append(w / n)
    return np.array(basis).T


def direct_eig_basis(keys, policy):
    """Eigenvectors of the D x D matrix V V^T, truncated by the same rule."""
    v = keys.T
    lam, w = np.linalg.eigh(v @ v.T)
    lam, w = lam[::-1], w[:, ::-1]
    kept = lam > policy.rank_epsilon
    cum = np.cumsum(lam[kept])
    rank = int(np.searchsorted(cum, policy.rho * cum[-1] * (1 - 1e-12))) + 1
    return w[:, :rank]


def make(basis):
    basis = np.asarray(basis, dtype=float)
    return InstanceSubspace(basis, np.ones(basis.shape[1]), float(basis.shape[1]))


@pytest.mark.parametrize(
    "lam, rho, expected",
    [((0.6, 0.3, 0.1), 0.40, 1), ((0.6, 0.3, 0.1), 0.90, 2), ((0.5, 0.5, 0.0), 1.0, 2), ((1.0,), 0.5, 1)],
)
def test_select_rank_examples(lam, rho, expected):
    assert select_rank(lam, TruncationPolicy(rho)) == expected


def test_select_rank_all_zero():
    with pytest.raises(AllZeroSpectrum):
        select_rank([0.0, 1e-12, -1e-11], FULL)


@pytest.mark.parametrize("rho", [0.0, -0.1, 1.5])
def test_policy_validation(rho):
    with pytest.raises(InvalidConfig):
        TruncationPolicy(rho)
    with pytest.raises(InvalidConfig):
        TruncationPolicy(0.5, rank_epsilon=0.0)


def test_single_key(rng):
    u = unit_rows(rng, 1, 6)
    s = build_subspace(u, TruncationPolicy(0.3), tag=7)
    assert s.rank == 1 and s.tag == 7
    np.testing.assert_allclose(s.basis[:, 0], u[0], atol=1e-15)
    np.testing.assert_allclose(s.retained_eigenvalues, [1.0], atol=1e-15)


def test_duplicate_keys_rank_one(rng):
    u = unit_rows(rng, 1, 5)
    s = build_subspace(np.vstack([u, u]), FULL)
    assert s.rank == 1
    np.testing.assert_allclose(s.basis[:, 0], u[0] * np.sign(s.basis[:, 0] @ u[0]), atol=1e-14)
    np.testing.assert_allclose(s.total_eigenmass, 2.0, atol=1e-14)


def test_full_rho_reproduces_keys_and_matches_gram_schmidt(rng):
    keys = unit_rows(rng, 3, 8)
    s = build_subspace(keys, FULL)
    assert s.rank == 3
    for k in keys:
        np.testing.assert_allclose(project(s, k), k, atol=1e-8)
    q = gram_schmidt(keys)
    np.testing.assert_allclose(s.basis @ s.basis.T, q @ q.T, atol=1e-10)


def test_build_errors(rng):
    with pytest.raises(EmptyKeys):
        build_subspace(np.zeros((0, 4)), FULL)
    with pytest.raises(KExceedsDim):
        build_subspace(unit_rows(rng, 5, 4), FULL)
    with pytest.raises(NonUnitKey):
        build_subspace(2 * unit_rows(rng, 2, 4), FULL)
    with pytest.raises(DimensionMismatch):
        build_subspace(np.ones(4), FULL)


def test_basis_is_immutable(rng):
    s = build_subspace(unit_rows(rng, 2, 4), FULL)
    with pytest.raises(ValueError):
        s.basis[0, 0] = 1.0


def test_projection_examples():
    s = make(np.eye(3)[:, :2])
    v = np.ones(3) / np.sqrt(3)
    assert projection_length(s, np.eye(3)[0]) == pytest.approx(1.0)
    assert projection_length(s, np.eye(3)[2]) == 0.0
    assert projection_length(s, v) == pytest.approx(np.sqrt(2 / 3), abs=1e-12)
    assert projection_length(s, v) == pytest.approx(0.816497, abs=1e-6)
    assert projection_distance(s, np.eye(3)[1]) == 0.0
    assert projection_distance(s, np.eye(3)[2]) == pytest.approx(1.0)
    assert projection_distance(s, v) == pytest.approx(0.577350, abs=1e-6)
    np.testing.assert_allclose(project(s, np.eye(3)[0]), np.eye(3)[0])
    np.testing.assert_array_equal(project(s, np.eye(3)[2]), np.zeros(3))
    with pytest.raises(DimensionMismatch):
        projection_length(s, np.ones(4))


def normal_equations_projection(keys, v):
    a = keys.T
    c = np.linalg.solve(a.T @ a, a.T @ v)
    return a @ c


def test_project_matches_least_squares(rng):
    for _ in range(20):
        keys = unit_rows(rng, 3, 6)
        v = unit_rows(rng, 1, 6)[0]
        s = build_subspace(keys, FULL)
        np.testing.assert_allclose(project(s, v), normal_equations_projection(keys, v), atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(k=st.integers(1, 6), extra=st.integers(0, 6), rho=st.floats(0.05, 1.0), seed=st.integers(0, 2**32 - 1))
def test_geometry_properties(k, extra, rho, seed):
    rng = np.random.default_rng(seed)
    d = k + extra
    s = build_subspace(unit_rows(rng, k, d), TruncationPolicy(rho))
    assert 1 <= s.rank <= k
    np.testing.assert_allclose(s.basis.T @ s.basis, np.eye(s.rank), atol=1e-8)
    assert np.all(s.retained_eigenvalues > 1e-10)
    assert s.retained_eigenvalues.sum() >= rho * s.total_eigenmass * (1 - 1e-10)
    v = unit_rows(rng, 1, d)[0]
    p = project(s, v)
    np.testing.assert_allclose(project(s, p), p, atol=1e-8)
    np.testing.assert_allclose(s.basis.T @ (v - p), 0.0, atol=1e-10)
    length, dist = projection_length(s, v), projection_distance(s, v)
    assert 0 <= length <= 1 + 1e-8
    assert length**2 + dist**2 == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(k=st.integers(2, 6), seed=st.integers(0, 2**32 - 1))
def test_monotone_in_rho(k, seed):
    rng = np.random.default_rng(seed)
    # correlated keys so the spectrum is spread and the rank actually varies
    base = rng.normal(size=8)
    keys = base + 0.7 * rng.normal(size=(k, 8))
    keys /= np.linalg.norm(keys, axis=1, keepdims=True)
    v = unit_rows(rng, 1, 8)[0]
    prev_rank, prev_len = 0, -1.0
    for rho in np.linspace(0.1, 1.0, 10):
        s = build_subspace(keys, TruncationPolicy(rho))
        assert s.rank >= prev_rank
        length = projection_length(s, v)
        if s.rank > prev_rank:
            assert length >= prev_len - 1e-12
        prev_rank, prev_len = s.rank, length


@settings(max_examples=60, deadline=None)
@given(k=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_full_rank_residual_vanishes(k, seed):
    keys = unit_rows(np.random.default_rng(seed), k, 9)
    s = build_subspace(keys, FULL)
    residual = sum(np.sum((x - project(s, x)) ** 2) for x in keys)
    assert residual <= 1e-10 * k


def test_one_shot_reduces_to_absolute_cosine(rng):
    for _ in range(200):
        u, v = unit_rows(rng, 2, 7)
        s = build_subspace(u[None], TruncationPolicy(0.4))
        assert abs(projection_length(s, v) - abs(u @ v)) <= 1e-10


@pytest.mark.parametrize("rho", [0.3, 0.7, 1.0])
def test_dual_form_matches_direct_decomposition(rng, rho):
    for _ in range(20):
        d = int(rng.integers(3, 11))
        k = int(rng.integers(1, d + 1))
        keys = unit_rows(rng, k, d)
        policy = TruncationPolicy(rho)
        s = build_subspace(keys, policy)
        w = direct_eig_basis(keys, policy)
        assert s.rank == w.shape[1]
        for v in unit_rows(rng, 5, d):
            assert projection_length(s, v) == pytest.approx(np.linalg.norm(w.T @ v), abs=1e-8)


def test_batch_equals_single(rng):
    keys = np.stack([unit_rows(rng, 4, 10) for _ in range(6)])
    batch = build_subspaces(keys, TruncationPolicy(0.7), tags=list(range(6)))
    for i, s in enumerate(batch):
        single = build_subspace(keys[i], TruncationPolicy(0.7), tag=i)
        np.testing.assert_array_equal(s.basis, single.basis)
        assert s.tag == i


def test_stack_bases_pads_with_zeros(rng):
    a = build_subspace(unit_rows(rng, 1, 4), FULL)
    b = build_subspace(unit_rows(rng, 3, 4), FULL)
    st_ = stack_bases([a, b])
    assert st_.shape == (2, 4, 3)
    np.testing.assert_array_equal(st_[0, :, 1:], 0.0)
    v = unit_rows(rng, 1, 4)[0]
    assert np.linalg.norm(st_[0].T @ v) == pytest.approx(projection_length(a, v))
