import numpy as np
import pytest

from speclip import linalg
from speclip.errors import ZeroMatrixError


def top_sigma(w):
    return linalg.svd_oracle(w)[1][0]


class TestPowerIterate:
    def test_diagonal(self):
        t = linalg.power_iterate(np.diag([3.0, 1.0]), 100, 1e-10, seed=0)
        assert t.sigma == pytest.approx(3.0, rel=1e-9)
        assert abs(t.u[0]) == pytest.approx(1.0, abs=1e-6)
        assert abs(t.v[0]) == pytest.approx(1.0, abs=1e-6)

    def test_identity(self):
        t = linalg.power_iterate(np.eye(4), 100, 1e-10, seed=0)
        assert t.sigma == pytest.approx(1.0, rel=1e-12)

    def test_matches_oracle_on_random(self):
        w = np.random.default_rng(0).standard_normal((16, 16))
        t = linalg.power_iterate(w, 100, 1e-10, seed=0)
        assert t.sigma == pytest.approx(top_sigma(w), rel=1e-6)

    def test_zero_matrix_flagged(self):
        t = linalg.power_iterate(np.zeros((3, 5)))
        assert t.is_zero and t.sigma == 0.0
        assert np.linalg.norm(t.u) == pytest.approx(1.0)
        assert np.linalg.norm(t.v) == pytest.approx(1.0)

    def test_deterministic_given_seed(self):
        w = np.random.default_rng(1).standard_normal((8, 5))
        a = linalg.power_iterate(w, 50, 1e-10, seed=7)
        b = linalg.power_iterate(w, 50, 1e-10, seed=7)
        assert a.sigma == b.sigma
        assert np.array_equal(a.v, b.v)

    @pytest.mark.parametrize("seed", range(10))
    def test_never_overshoots_oracle(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((rng.integers(2, 20), rng.integers(2, 20)))
        t = linalg.power_iterate(w, 100, 1e-10, seed=seed)
        assert t.sigma <= top_sigma(w) * (1 + 1e-6)

    def test_unit_triple(self):
        w = np.random.default_rng(3).standard_normal((6, 9))
        t = linalg.power_iterate(w)
        assert np.linalg.norm(t.u) == pytest.approx(1.0, abs=1e-6)
        assert np.linalg.norm(t.v) == pytest.approx(1.0, abs=1e-6)


class TestMatrixNorm:
    def test_identity_rms_is_one(self):
        assert linalg.matrix_norm(np.eye(5), linalg.RMS_TO_RMS) == pytest.approx(1.0)

    def test_diagonal_spectral(self):
        assert linalg.matrix_norm(np.diag([2.0, 0.0]), linalg.SPECTRAL) == pytest.approx(2.0)

    def test_rms_scaling_wide_matrix(self):
        w = np.zeros((4, 16))
        w[0, 0] = 1.0
        # rank one with sigma 1, rescaled by sqrt(16/4)
        assert linalg.matrix_norm(w, linalg.RMS_TO_RMS) == pytest.approx(2.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_norm_kind_consistency(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((rng.integers(2, 12), rng.integers(2, 12)))
        spectral = linalg.matrix_norm(w, linalg.SPECTRAL)
        rms = linalg.matrix_norm(w, linalg.RMS_TO_RMS)
        rows, cols = w.shape
        assert rms * np.sqrt(rows / cols) == pytest.approx(spectral, rel=1e-9)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            linalg.matrix_norm(np.eye(2), "frobenius")


class TestMsign:
    def test_positive_diagonal_gives_identity(self):
        out = linalg.msign(np.diag([2.0, 3.0]))
        assert np.abs(out - np.eye(2)).max() < 5e-2

    def test_sign_structure(self):
        out = linalg.msign(np.diag([2.0, -3.0]))
        assert np.abs(out - np.diag([1.0, -1.0])).max() < 5e-2

    def test_output_singular_values_in_band(self):
        w = np.random.default_rng(1).standard_normal((8, 8))
        s = linalg.svd_oracle(linalg.msign(w))[1]
        assert s.min() >= 0.95
        assert s.max() <= linalg.MSIGN_MAX_INFLATION

    @pytest.mark.parametrize("seed", range(100))
    def test_inflation_bound(self, seed):
        rng = np.random.default_rng(seed)
        shape = (int(rng.integers(1, 24)), int(rng.integers(1, 24)))
        w = rng.standard_normal(shape) * rng.uniform(0.1, 10)
        top = top_sigma(linalg.msign(w))
        assert top <= linalg.MSIGN_MAX_INFLATION * 1.001

    def test_vector_is_l2_normalized(self):
        v = np.array([[3.0, 4.0]])
        out = linalg.msign(v)
        assert np.allclose(out, v / 5.0)
        out_col = linalg.msign(v.T)
        assert np.allclose(out_col, v.T / 5.0)

    def test_zero_matrix_raises(self):
        with pytest.raises(ZeroMatrixError):
            linalg.msign(np.zeros((3, 3)))

    def test_reconstructs_polar_factor(self):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((7, 4))
        u, _, vt = linalg.svd_oracle(w)
        assert np.abs(linalg.msign(w) - u @ vt).max() < 5e-2


class TestOddPolyApply:
    def test_identity_polynomial(self):
        w = np.random.default_rng(0).standard_normal((5, 3))
        assert np.allclose(linalg.odd_poly_apply(w, [1.0]), w)

    def test_cubic_shrink_on_diagonal(self):
        out = linalg.odd_poly_apply(np.diag([1.0, 0.5]), [1.0, -0.2])
        assert np.allclose(np.diag(out), [0.8, 0.475])

    def test_matches_scalar_map_via_oracle(self):
        w = np.random.default_rng(2).standard_normal((6, 4))
        out = linalg.odd_poly_apply(w, [1.0, 0.1])
        s_in = np.sort(linalg.svd_oracle(w)[1])
        s_out = np.sort(linalg.svd_oracle(out)[1])
        expected = np.sort(s_in + 0.1 * s_in**3)
        assert np.abs(s_out - expected).max() < 1e-6 * max(1.0, expected.max())

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("shape", [(4, 4), (8, 3), (3, 8)])
    def test_acts_elementwise_on_singular_values(self, seed, shape):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal(shape)
        coeffs = [1.0, float(rng.uniform(-0.2, 0.2)), float(rng.uniform(-0.05, 0.05))]
        s_in = linalg.svd_oracle(w)[1]
        mapped = np.sort(np.abs(coeffs[0] * s_in + coeffs[1] * s_in**3
                                + coeffs[2] * s_in**5))
        s_out = np.sort(linalg.svd_oracle(linalg.odd_poly_apply(w, coeffs))[1])
        assert np.abs(s_out - mapped).max() <= 1e-6 * max(1.0, mapped.max())

    def test_needs_coefficients(self):
        with pytest.raises(ValueError):
            linalg.odd_poly_apply(np.eye(2), [])


class TestSvdOracle:
    def test_diagonal(self):
        _, s, _ = linalg.svd_oracle(np.diag([3.0, 1.0]))
        assert np.allclose(s, [3.0, 1.0])

    def test_zero_matrix(self):
        _, s, _ = linalg.svd_oracle(np.zeros((4, 2)))
        assert np.allclose(s, 0.0)

    def test_reconstruction_and_orthonormality(self):
        w = np.random.default_rng(4).standard_normal((12, 7))
        u, s, vt = linalg.svd_oracle(w)
        assert np.abs(u @ np.diag(s) @ vt - w).max() < 1e-8 * np.abs(w).max()
        assert np.abs(u.T @ u - np.eye(7)).max() < 1e-8
        assert np.abs(vt @ vt.T - np.eye(7)).max() < 1e-8
        assert np.all(np.diff(s) <= 0) and np.all(s >= 0)

    def test_scale_guard(self):
        with pytest.raises(ValueError):
            linalg.svd_oracle(np.zeros((300, 300)))


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(ValueError):
        linalg.as_matrix(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        linalg.as_matrix(np.ones(3))


@pytest.mark.parametrize("ratio", [0.5, 0.8, 0.9])
def test_power_iterate_accuracy_with_spectral_gap(ratio):
    # with a relative gap of at least 0.1 the estimate converges far past
    # the documented max(10 * tol, gap-dependent) accuracy
    rng = np.random.default_rng(42)
    u = linalg.svd_oracle(rng.standard_normal((12, 12)))[0]
    v = linalg.svd_oracle(rng.standard_normal((12, 12)))[0]
    sigmas = np.array([1.0] + [ratio * (0.9 ** i) for i in range(11)])
    w = u @ np.diag(sigmas) @ v.T
    t = linalg.power_iterate(w, 100, 1e-10, seed=1)
    assert abs(t.sigma - 1.0) <= 1e-8
