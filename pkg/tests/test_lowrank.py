import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridres import lowrank
from gridres.lowrank import (
    ConvergenceFailure,
    InvalidSpec,
    RegularizerSpec,
    is_degenerate,
    reg_grad,
    reg_value,
    svd,
)

SPECS = [
    RegularizerSpec(),
    RegularizerSpec(kind="log_nuclear"),
    RegularizerSpec(kind="elastic_net", gamma_en=0.3),
    RegularizerSpec(kind="schatten_p", p=1.5),
    RegularizerSpec(kind="schatten_p", p=0.5),
    RegularizerSpec(kind="truncated_nuclear", r=2),
    RegularizerSpec(kind="partial_sum_nuclear", r=1),
    RegularizerSpec(kind="weighted_nuclear", weights=[0.5, 1.0, 2.0, 0.1, 3.0]),
    RegularizerSpec(kind="weighted_nuclear", weights=[0.5, 1.0, 2.0, 0.1, 3.0], r=2, weighted_from_r=True),
]


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def separated_matrix(rng, m=8, n=5, s=(5.0, 4.0, 3.0, 2.0, 1.0)):
    U = random_orthogonal(rng, m)[:, :n]
    V = random_orthogonal(rng, n)
    return (U * np.asarray(s)) @ V.T


def check_decomposition(A, res, recon_tol=1e-6, ortho_tol=1e-10):
    k = min(A.shape)
    assert res.U.shape == (A.shape[0], k) and res.V.shape == (A.shape[1], k) and res.s.shape == (k,)
    assert np.all(res.s >= 0) and np.all(np.diff(res.s) <= 0)
    assert np.linalg.norm(res.reconstruct() - A) <= recon_tol * max(np.linalg.norm(A), 1e-300)
    assert np.max(np.abs(res.U.T @ res.U - np.eye(k))) <= ortho_tol
    assert np.max(np.abs(res.V.T @ res.V - np.eye(k))) <= ortho_tol


# --------------------------------------------------------------------------
# svd


def test_identity():
    res = svd(np.eye(2))
    np.testing.assert_allclose(res.s, [1.0, 1.0], atol=1e-15)
    check_decomposition(np.eye(2), res)


def test_rank_one_fixture():
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    res = svd(A)
    assert np.max(np.abs(res.s - [5.0, 0.0])) <= 1e-10
    check_decomposition(A, res)
    # a dense eigen-solve of the Gram matrix agrees
    eig = np.sqrt(np.clip(np.linalg.eigvalsh(A.T @ A)[::-1], 0, None))
    np.testing.assert_allclose(res.s, eig, atol=1e-7)


@pytest.mark.parametrize("shape", [(64, 16), (32, 17), (17, 32), (1, 5), (5, 1), (32, 1)])
def test_random_matrices_against_numpy(shape):
    rng = np.random.default_rng(sum(shape))
    A = rng.normal(size=shape)
    res = svd(A)
    check_decomposition(A, res)
    np.testing.assert_allclose(res.s, np.linalg.svd(A, compute_uv=False), rtol=1e-10, atol=1e-12)


def test_rank_deficient_completes_basis():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(10, 2)) @ rng.normal(size=(2, 6))
    res = svd(A)
    check_decomposition(A, res)
    assert np.all(res.s[2:] < 1e-12)


def test_zero_matrix():
    res = svd(np.zeros((4, 3)))
    assert np.all(res.s == 0.0)
    check_decomposition(np.zeros((4, 3)), res)


def test_deterministic_and_sign_convention():
    A = np.random.default_rng(0).normal(size=(32, 17))
    a, b = svd(A), svd(A.copy())
    assert np.array_equal(a.U, b.U) and np.array_equal(a.s, b.s) and np.array_equal(a.V, b.V)
    idx = np.argmax(np.abs(a.U), axis=0)
    assert np.all(a.U[idx, np.arange(a.U.shape[1])] >= 0)


def test_bad_input():
    with pytest.raises(ValueError):
        svd(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValueError):
        svd(np.zeros(3))


def test_sweep_budget_exhaustion():
    A = np.random.default_rng(0).normal(size=(32, 17))
    with pytest.raises(ConvergenceFailure):
        svd(A, max_sweeps=1)


@pytest.mark.skipif(lowrank.numba is None, reason="numba not installed")
def test_numpy_and_fused_sweeps_agree():
    A = np.random.default_rng(5).normal(size=(32, 18))
    pairs = np.array(
        [(i, j) for I, J in lowrank._round_robin(18) for i, j in zip(I, J)], dtype=np.int64
    )
    W1, V1 = A.copy(), np.eye(18)
    W2, V2 = A.copy(), np.eye(18)
    s1 = lowrank._jacobi_numpy(W1, V1, pairs, 32 * np.finfo(float).eps, 60)
    s2 = lowrank._jacobi_fused(W2, V2, pairs, 32 * np.finfo(float).eps, 60)
    assert s1 == s2 > 0
    np.testing.assert_allclose(W1, W2, atol=1e-12)
    np.testing.assert_allclose(V1, V2, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 12), n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_svd_property(m, n, seed):
    A = np.random.default_rng(seed).normal(size=(m, n))
    res = svd(A)
    check_decomposition(A, res)
    np.testing.assert_allclose(res.s, np.linalg.svd(A, compute_uv=False), rtol=1e-9, atol=1e-12)


# --------------------------------------------------------------------------
# regularizer values


def test_reference_values():
    assert reg_value(RegularizerSpec(), svd(np.array([[1.0, 2.0], [2.0, 4.0]]))) == pytest.approx(5.0, abs=1e-10)
    assert reg_value(RegularizerSpec(kind="log_nuclear"), svd(np.eye(2))) == pytest.approx(2 * np.log(2), abs=1e-14)
    s = np.diag([3.0, 2.0, 1.0])
    assert reg_value(RegularizerSpec(kind="truncated_nuclear", r=1), svd(s)) == pytest.approx(3.0, abs=1e-14)
    assert reg_value(RegularizerSpec(kind="partial_sum_nuclear", r=1), svd(s)) == pytest.approx(3.0, abs=1e-14)
    assert reg_value(RegularizerSpec(kind="elastic_net", gamma_en=0.5), svd(s)) == pytest.approx(6 + 7.0, abs=1e-13)
    assert reg_value(RegularizerSpec(kind="schatten_p", p=2), svd(s)) == pytest.approx(14.0, abs=1e-13)
    w = RegularizerSpec(kind="weighted_nuclear", weights=[1.0, 10.0, 100.0])
    assert reg_value(w, svd(s)) == pytest.approx(123.0, abs=1e-12)
    w_r = RegularizerSpec(kind="weighted_nuclear", weights=[1.0, 10.0, 100.0], r=1, weighted_from_r=True)
    assert reg_value(w_r, svd(s)) == pytest.approx(120.0, abs=1e-12)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "frobenius"},
        {"kind": "schatten_p", "p": 0.0},
        {"r": -1},
        {"kind": "weighted_nuclear", "weights": [1.0, -1.0]},
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(InvalidSpec):
        RegularizerSpec(**kwargs)


def test_spec_mismatched_to_matrix():
    s = svd(np.diag([3.0, 2.0, 1.0]))
    with pytest.raises(InvalidSpec):
        reg_value(RegularizerSpec(kind="truncated_nuclear", r=3), s)
    with pytest.raises(InvalidSpec):
        reg_value(RegularizerSpec(kind="weighted_nuclear", weights=[1.0]), s)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_values_non_negative_and_zero_at_zero(spec):
    rng = np.random.default_rng(0)
    assert reg_value(spec, svd(rng.normal(size=(8, 5)))) >= 0
    assert reg_value(spec, svd(np.zeros((8, 5)))) == 0.0


@pytest.mark.parametrize("kind", ["truncated_nuclear", "partial_sum_nuclear"])
def test_truncated_vanishes_at_rank_r(kind):
    rng = np.random.default_rng(1)
    A = rng.normal(size=(8, 2)) @ rng.normal(size=(2, 5))
    assert reg_value(RegularizerSpec(kind=kind, r=2), svd(A)) < 1e-12
    assert reg_value(RegularizerSpec(kind=kind, r=1), svd(A)) > 0.1


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_unitary_invariance(spec):
    rng = np.random.default_rng(2)
    A = rng.normal(size=(8, 5))
    B = random_orthogonal(rng, 8) @ A @ random_orthogonal(rng, 5)
    assert abs(reg_value(spec, svd(A)) - reg_value(spec, svd(B))) <= 1e-8


@settings(max_examples=50, deadline=None)
@given(m=st.integers(1, 10), n=st.integers(1, 10), seed=st.integers(0, 2**32 - 1))
def test_nuclear_frobenius_bounds(m, n, seed):
    A = np.random.default_rng(seed).normal(size=(m, n))
    nuc = reg_value(RegularizerSpec(), svd(A))
    fro = np.linalg.norm(A)
    assert fro - 1e-10 <= nuc <= np.sqrt(min(m, n)) * fro + 1e-10


# --------------------------------------------------------------------------
# gradients


def test_diagonal_nuclear_gradient_is_identity():
    grad, degenerate = reg_grad(RegularizerSpec(), np.diag([3.0, 2.0, 1.0]))
    np.testing.assert_allclose(grad, np.eye(3), atol=1e-14)
    assert not degenerate


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_gradient_matches_finite_differences(spec):
    rng = np.random.default_rng(4)
    A = separated_matrix(rng)
    grad, degenerate = reg_grad(spec, A)
    assert not degenerate
    h = 1e-6
    fd = np.zeros_like(A)
    for idx in np.ndindex(A.shape):
        E = np.zeros_like(A)
        E[idx] = h
        fd[idx] = (reg_value(spec, svd(A + E)) - reg_value(spec, svd(A - E))) / (2 * h)
    err = np.max(np.abs(grad - fd)) / np.max(np.abs(fd))
    assert err <= 1e-4


def test_gradient_is_descent_direction():
    rng = np.random.default_rng(6)
    A = rng.normal(size=(16, 6))
    spec = RegularizerSpec()
    grad, _ = reg_grad(spec, A)
    before = reg_value(spec, svd(A))
    assert reg_value(spec, svd(A - 1e-3 * grad)) < before


def test_degeneracy_flag():
    assert is_degenerate(svd(np.eye(3)).s)
    assert is_degenerate(svd(np.array([[1.0, 2.0], [2.0, 4.0]])).s)
    assert not is_degenerate(svd(np.diag([3.0, 2.0, 1.0])).s)
    grad, degenerate = reg_grad(RegularizerSpec(), np.eye(3))
    assert degenerate and np.all(np.isfinite(grad))
    grad, degenerate = reg_grad(RegularizerSpec(kind="schatten_p", p=0.5), np.zeros((3, 2)))
    assert degenerate and np.all(grad == 0.0)
