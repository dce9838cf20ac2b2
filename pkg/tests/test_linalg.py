import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from fmca.exceptions import NotPositiveDefinite
from fmca.linalg import cholesky_logdet, inv_sqrt, svd, sym_eig


def random_spd(rng, n, cond_floor=0.1):
    a = rng.standard_normal((n, n))
    return a @ a.T + cond_floor * np.eye(n)


def lu_logdet(a):
    # independent route: LU with partial pivoting
    lu, _ = scipy.linalg.lu_factor(a)
    return float(np.sum(np.log(np.abs(np.diag(lu)))))


class TestCholeskyLogdet:
    def test_identity(self):
        assert cholesky_logdet(np.eye(3)) == 0.0

    def test_diag(self):
        assert cholesky_logdet(np.diag([2.0, 2.0])) == pytest.approx(2 * np.log(2), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_lu(self, seed):
        a = random_spd(np.random.default_rng(seed), 5)
        assert abs(cholesky_logdet(a) - lu_logdet(a)) < 1e-9

    def test_singular_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_logdet(np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_tiny_pivot_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_logdet(np.diag([1.0, 1e-13]))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky_logdet(np.array([[1.0, 0.5], [0.0, 1.0]]))

    @pytest.mark.parametrize("seed", range(5))
    def test_equals_sum_log_eigs(self, seed):
        a = random_spd(np.random.default_rng(100 + seed), 6)
        assert abs(cholesky_logdet(a) - np.sum(np.log(sym_eig(a).values))) < 1e-9


class TestInvSqrt:
    def test_identity(self):
        np.testing.assert_allclose(inv_sqrt(np.eye(4)), np.eye(4), atol=1e-15)

    def test_diag(self):
        np.testing.assert_allclose(inv_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]), atol=1e-15)

    @given(st.integers(0, 10_000), st.integers(1, 9))
    @settings(max_examples=40, deadline=None)
    def test_whitens(self, seed, n):
        a = random_spd(np.random.default_rng(seed), n)
        s = inv_sqrt(a)
        np.testing.assert_allclose(s @ a @ s, np.eye(n), atol=1e-8)
        np.testing.assert_array_equal(s, s.T)
        assert np.all(np.linalg.eigvalsh(s) > 0)

    def test_negative_raises(self):
        with pytest.raises(NotPositiveDefinite):
            inv_sqrt(np.diag([1.0, -0.5]))

    def test_clamps_near_zero(self):
        s = inv_sqrt(np.diag([1.0, 0.0]))
        assert np.isfinite(s).all()
        assert s[1, 1] == pytest.approx(1e6)


class TestSvd:
    def test_diag(self):
        d = svd(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(d.values, [3, 1])
        np.testing.assert_allclose(np.abs(d.left), np.eye(2), atol=1e-15)
        np.testing.assert_allclose(np.abs(d.right), np.eye(2), atol=1e-15)

    def test_zero(self):
        np.testing.assert_array_equal(svd(np.zeros((2, 3))).values, [0, 0])

    @pytest.mark.parametrize("seed", range(5))
    def test_random_reconstruction_and_oracle(self, seed):
        m = np.random.default_rng(seed).standard_normal((8, 8))
        d = svd(m)
        recon = d.left @ np.diag(d.values) @ d.right.T
        assert np.linalg.norm(recon - m) / np.linalg.norm(m) < 1e-9
        oracle = np.sqrt(np.clip(np.sort(np.linalg.eigvalsh(m.T @ m))[::-1], 0, None))
        np.testing.assert_allclose(d.values, oracle, atol=1e-8)
        np.testing.assert_allclose(d.left.T @ d.left, np.eye(8), atol=1e-10)
        np.testing.assert_allclose(d.right.T @ d.right, np.eye(8), atol=1e-10)
        assert np.all(np.diff(d.values) <= 0)

    def test_transpose_same_values(self):
        m = np.random.default_rng(3).standard_normal((4, 6))
        np.testing.assert_allclose(svd(m).values, svd(m.T).values, atol=1e-12)

    def test_pure(self):
        m = np.random.default_rng(4).standard_normal((5, 5))
        a, b = svd(m), svd(m.copy())
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.left, b.left)


class TestSymEig:
    def test_diag(self):
        d = sym_eig(np.diag([5.0, 2.0, 1.0]))
        np.testing.assert_array_equal(d.values, [5, 2, 1])
        np.testing.assert_allclose(np.abs(d.left), np.eye(3))

    def test_swap(self):
        np.testing.assert_allclose(sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]])).values, [1, -1])

    @pytest.mark.parametrize("seed", range(5))
    def test_trace_and_reconstruction(self, seed):
        a = np.random.default_rng(seed).standard_normal((7, 7))
        a = a + a.T
        d = sym_eig(a)
        assert abs(np.trace(a) - d.values.sum()) < 1e-10
        np.testing.assert_allclose(d.left @ np.diag(d.values) @ d.left.T, a, atol=1e-9)
        np.testing.assert_allclose(d.left.T @ d.left, np.eye(7), atol=1e-10)
