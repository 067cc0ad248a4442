import numpy as np
import pytest

from lhr.admm import SolverConfig
from lhr.matcore import MatrixError, svd_full
from lhr.weights import (
    WeightSet,
    error_weights,
    initial_weights,
    spectral_weights,
    weight_delta,
    weights_from_iterate,
)


def cfg(d1=1.0, d2=1.0):
    return SolverConfig(delta1=d1, delta2=d2)


class TestErrorWeights:
    def test_zero(self):
        np.testing.assert_allclose(error_weights(np.zeros((2, 3)), 0.1), 10.0)

    def test_single_entry(self):
        assert error_weights([[0.9]], 0.1)[0, 0] == pytest.approx(1.0)

    def test_scalar_loop(self):
        rng = np.random.default_rng(0)
        e = rng.standard_normal((4, 5))
        loop = np.array([[1.0 / (abs(e[i, j]) + 0.3) for j in range(5)] for i in range(4)])
        np.testing.assert_array_equal(error_weights(e, 0.3), loop)

    def test_antitone(self):
        w = error_weights([[0.0, 0.5, -1.0, 2.0]], 0.2)[0]
        assert np.all(np.diff(w) < 0)

    def test_rejects_bad_delta(self):
        with pytest.raises(ValueError):
            error_weights(np.zeros((1, 1)), 0.0)


class TestSpectralWeights:
    def test_zero_matrix(self):
        wy, wz = spectral_weights(np.zeros((2, 2)), 4.0)
        np.testing.assert_allclose(wy, 0.5 * np.eye(2), atol=1e-15)
        np.testing.assert_allclose(wz, 0.5 * np.eye(2), atol=1e-15)

    def test_diag(self):
        wy, _ = spectral_weights(np.diag([3.0, 0.0]), 1.0)
        np.testing.assert_allclose(wy, np.diag([0.5, 1.0]), atol=1e-15)

    def test_inverse_square_root(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((5, 4))
        f = svd_full(a)
        wy, wz = spectral_weights(a, 0.7)
        s_m = np.zeros(5)
        s_m[:4] = f.values
        y = f.left @ np.diag(s_m) @ f.left.T + 0.7 * np.eye(5)
        z = f.right @ np.diag(f.values) @ f.right.T + 0.7 * np.eye(4)
        np.testing.assert_allclose(wy @ wy @ y, np.eye(5), atol=1e-8)
        np.testing.assert_allclose(wz @ wz @ z, np.eye(4), atol=1e-8)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((6, 3))
        w = weights_from_iterate(a, rng.standard_normal((6, 3)), 0.2, 0.5)
        w.check(sigma_max=svd_full(a).values[0])

    def test_weighted_singular_values(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((5, 4))
        d2 = 0.4
        wy, wz = spectral_weights(a, d2)
        s = svd_full(a).values
        got = np.linalg.svd(wy @ a @ wz, compute_uv=False)
        np.testing.assert_allclose(np.sort(got), np.sort(s / (s + d2)), atol=1e-8)


class TestInitialWeights:
    def test_square(self):
        w = initial_weights(2, 2, cfg(1.0, 1.0))
        np.testing.assert_array_equal(w.wE, 0.5)
        np.testing.assert_array_equal(w.wY, np.eye(2))
        np.testing.assert_array_equal(w.wZ, np.eye(2))

    def test_shapes(self):
        w = initial_weights(3, 5, cfg())
        assert w.wY.shape == (3, 3) and w.wZ.shape == (5, 5) and w.wE.shape == (3, 5)

    def test_invariants(self):
        initial_weights(4, 6, cfg(0.3, 0.2)).check()

    def test_lrr_shape(self):
        w = initial_weights(4, 6, cfg(), spectral_shape=(6, 6))
        assert w.wY.shape == (6, 6) and w.wE.shape == (4, 6)

    def test_error_part_matches_reweighting_of_ones(self):
        w0 = initial_weights(3, 4, cfg(0.3, 0.2))
        w1 = weights_from_iterate(np.zeros((3, 4)), np.ones((3, 4)), 0.3, 0.2)
        np.testing.assert_array_equal(w0.wE, w1.wE)

    def test_unresolved_deltas(self):
        with pytest.raises(ValueError):
            initial_weights(2, 2, SolverConfig())


class TestWeightDelta:
    def _random(self, rng):
        return weights_from_iterate(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)), 0.1, 0.1)

    def test_identical(self):
        w = self._random(np.random.default_rng(4))
        assert weight_delta(w, w) == 0.0

    def test_doubling(self):
        w = self._random(np.random.default_rng(5))
        w2 = WeightSet(2 * w.wY, 2 * w.wZ, 2 * w.wE, w.delta1, w.delta2)
        assert weight_delta(w, w2) == pytest.approx(1.0)

    def test_concatenation_oracle(self):
        rng = np.random.default_rng(6)
        a, b = self._random(rng), self._random(rng)
        va = np.concatenate([a.wY.ravel(), a.wZ.ravel(), a.wE.ravel()])
        vb = np.concatenate([b.wY.ravel(), b.wZ.ravel(), b.wE.ravel()])
        assert weight_delta(a, b) == pytest.approx(np.linalg.norm(vb - va) / np.linalg.norm(va), rel=1e-14)

    def test_error_scope(self):
        rng = np.random.default_rng(7)
        a, b = self._random(rng), self._random(rng)
        expected = np.linalg.norm(b.wE - a.wE) / np.linalg.norm(a.wE)
        assert weight_delta(a, b, scope="error") == pytest.approx(expected, rel=1e-14)

    def test_shape_mismatch(self):
        a = initial_weights(2, 2, cfg())
        b = initial_weights(2, 3, cfg())
        with pytest.raises(MatrixError):
            weight_delta(a, b)
