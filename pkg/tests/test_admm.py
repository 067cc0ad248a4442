import numpy as np
import pytest

from lhr.admm import (
    DivergenceError,
    SolverConfig,
    _ExactAStep,
    lrr_inner_solve,
    rpca_inner_solve,
    step_size,
)
from lhr.matcore import MatrixError
from lhr.mm import surrogate_value
from lhr.synth import make_instance, relative_error
from lhr.weights import WeightSet, initial_weights, weights_from_iterate


def identity_weights(a_shape, e_shape, we=1.0):
    return WeightSet(np.eye(a_shape[0]), np.eye(a_shape[1]), np.full(e_shape, we), 1.0, 1.0)


def planted(m, n, rank, rate, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))
    e = np.zeros(m * n)
    idx = rng.choice(m * n, int(rate * m * n), replace=False)
    e[idx] = rng.uniform(-100, 100, len(idx))
    return a, e.reshape(m, n)


class TestSolverConfig:
    def test_defaults_valid(self):
        SolverConfig()

    @pytest.mark.parametrize(
        "kw",
        [
            {"rho": 1.0},
            {"lam": -1.0},
            {"delta1": 0.0},
            {"inner_max_iters": 0},
            {"gamma": "fast"},
            {"a_step": "newton"},
            {"stop_scope": "spectral"},
            {"scale": -2.0},
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)

    def test_dict_round_trip(self):
        c = SolverConfig(lam=0.2, rho=1.3, gamma=0.1)
        assert SolverConfig.from_dict(c.to_dict()) == c


class TestStepSize:
    def test_identity(self):
        w = identity_weights((3, 3), (3, 3))
        assert step_size(w) == 1.0 / (4.0 + 1e-12)

    def test_half_identity(self):
        w = WeightSet(0.5 * np.eye(3), 0.5 * np.eye(3), np.ones((3, 3)), 1.0, 1.0)
        assert step_size(w) == pytest.approx(1.0 / (2.125 + 1e-12), rel=1e-15)

    def test_lrr_bound(self):
        w = identity_weights((3, 3), (2, 3))
        assert step_size(w, operator_norm_p=2.0) == pytest.approx(1.0 / (2 * (4 + 1) + 1e-12))

    def test_fixed(self):
        assert step_size(identity_weights((2, 2), (2, 2)), 0.05) == 0.05

    def test_descent_property(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a_it = rng.standard_normal((4, 3))
            w = weights_from_iterate(a_it, rng.standard_normal((4, 3)), 0.3, rng.uniform(0.05, 2))
            gamma = step_size(w)
            x1, x2, a = (rng.standard_normal((4, 3)) for _ in range(3))

            def obj(a):
                return np.linalg.norm(x1 - a) ** 2 + np.linalg.norm(x2 - w.wY @ a @ w.wZ) ** 2

            step = a + gamma * ((x1 - a) + w.wY @ (x2 - w.wY @ a @ w.wZ) @ w.wZ)
            assert obj(step) <= obj(a) + 1e-12


class TestExactAStep:
    def test_rpca_normal_equations(self):
        rng = np.random.default_rng(1)
        w = weights_from_iterate(rng.standard_normal((5, 4)), rng.standard_normal((5, 4)), 0.2, 0.3)
        r = rng.standard_normal((5, 4))
        a = _ExactAStep(w, None)(r)
        np.testing.assert_allclose(a + w.wY @ w.wY @ a @ w.wZ @ w.wZ, r, atol=1e-10)

    def test_lrr_normal_equations(self):
        rng = np.random.default_rng(2)
        p = rng.standard_normal((3, 6))
        w = weights_from_iterate(rng.standard_normal((6, 6)), rng.standard_normal((3, 6)), 0.2, 0.3)
        r = rng.standard_normal((6, 6))
        a = _ExactAStep(w, p.T @ p)(r)
        np.testing.assert_allclose(p.T @ p @ a + w.wY @ w.wY @ a @ w.wZ @ w.wZ, r, atol=1e-9)


class TestRpcaInner:
    def test_zero_input(self):
        w = identity_weights((4, 4), (4, 4))
        res = rpca_inner_solve(np.zeros((4, 4)), w, SolverConfig(lam=0.5))
        assert res.iterations == 1
        assert not np.any(res.a) and not np.any(res.e)

    def test_pcp_regime_recovery(self):
        a_star, e_star = planted(200, 200, 5, 0.05, seed=3)
        w = identity_weights((200, 200), (200, 200))
        res = rpca_inner_solve(a_star + e_star, w, SolverConfig(lam=1 / np.sqrt(200)))
        assert res.converged
        assert relative_error(res.a, a_star) <= 1e-3

    def test_feasibility_and_splitting(self):
        a_star, e_star = planted(30, 25, 3, 0.1, seed=4)
        p = a_star + e_star
        w = weights_from_iterate(a_star, e_star, 0.5, 0.5)
        cfg = SolverConfig(lam=0.2)
        res = rpca_inner_solve(p, w, cfg)
        assert res.converged
        assert np.linalg.norm(p - res.a - res.e) / np.linalg.norm(p) <= cfg.inner_tol
        j = res.state.j
        split = np.linalg.norm(j - w.wY @ res.a @ w.wZ) / max(1.0, np.linalg.norm(j))
        assert split <= cfg.inner_tol * np.linalg.norm(p) / max(1.0, np.linalg.norm(j)) + 1e-12

    def test_matches_long_horizon_run(self):
        a_star, e_star = planted(20, 20, 2, 0.1, seed=5)
        p = a_star + e_star
        w = weights_from_iterate(a_star + 0.1, e_star, 1.0, 1.0)
        cfg = SolverConfig(lam=0.25)
        short = rpca_inner_solve(p, w, cfg)
        long = rpca_inner_solve(p, w, cfg.replace(rho=1.01, inner_max_iters=5000, inner_tol=1e-12))
        f_short = surrogate_value(short.a, short.e, w, 0.25)
        f_long = surrogate_value(long.a, long.e, w, 0.25)
        assert abs(f_short - f_long) <= 1e-3 * abs(f_long)

    def test_constant_error_weight_absorbs_into_lambda(self):
        a_star, e_star = planted(25, 20, 3, 0.1, seed=6)
        p = a_star + e_star
        c = 1.0 / 1.3
        lam = 0.2
        r1 = rpca_inner_solve(p, identity_weights((25, 20), (25, 20), we=c), SolverConfig(lam=lam))
        r2 = rpca_inner_solve(p, identity_weights((25, 20), (25, 20)), SolverConfig(lam=lam * c))
        np.testing.assert_array_equal(r1.a, r2.a)
        np.testing.assert_array_equal(r1.e, r2.e)
        assert r1.residuals == r2.residuals

    def test_against_convex_solver(self):
        cp = pytest.importorskip("cvxpy")
        a_star, e_star = planted(12, 10, 2, 0.1, seed=7)
        p = a_star + e_star
        lam = 1 / np.sqrt(12)
        a = cp.Variable(p.shape)
        prob = cp.Problem(cp.Minimize(cp.normNuc(a) + lam * cp.sum(cp.abs(p - a))))
        prob.solve(solver=cp.CLARABEL)
        w = identity_weights(p.shape, p.shape)

        def objective(x):
            return np.linalg.svd(x, compute_uv=False).sum() + lam * np.abs(p - x).sum()

        # default schedule: optimal value to 1e-3
        res = rpca_inner_solve(p, w, SolverConfig(lam=lam))
        assert objective(res.a) == pytest.approx(prob.value, rel=1e-3)
        # slow penalty growth removes the inexact-ALM stall: same minimiser
        slow = rpca_inner_solve(p, w, SolverConfig(lam=lam, rho=1.01, inner_tol=1e-10, inner_max_iters=20000))
        assert np.linalg.norm(slow.a - a.value) <= 1e-3 * np.linalg.norm(a.value)

    def test_deterministic(self):
        a_star, e_star = planted(15, 15, 2, 0.1, seed=8)
        w = weights_from_iterate(a_star, e_star, 0.3, 0.3)
        r1 = rpca_inner_solve(a_star + e_star, w, SolverConfig(lam=0.3))
        r2 = rpca_inner_solve(a_star + e_star, w, SolverConfig(lam=0.3))
        assert r1.residuals == r2.residuals
        np.testing.assert_array_equal(r1.a, r2.a)

    def test_gradient_step_mode(self):
        a_star, e_star = planted(30, 30, 2, 0.05, seed=9)
        w = identity_weights((30, 30), (30, 30))
        res = rpca_inner_solve(a_star + e_star, w, SolverConfig(lam=1 / np.sqrt(30), a_step="gradient"))
        assert res.residuals[-1] < res.residuals[0]

    def test_divergence_reported(self, monkeypatch):
        import lhr.admm

        real_svt = lhr.admm._svt
        calls = {"n": 0}

        def exploding_svt(m, alpha):
            calls["n"] += 1
            out, r = real_svt(m, alpha)
            return out * 10.0 ** calls["n"], r

        monkeypatch.setattr(lhr.admm, "_svt", exploding_svt)
        a_star, e_star = planted(10, 10, 2, 0.1, seed=10)
        w = identity_weights((10, 10), (10, 10))
        with pytest.raises(DivergenceError) as info:
            rpca_inner_solve(a_star + e_star, w, SolverConfig(lam=0.3))
        assert len(info.value.residuals) > 1
        assert info.value.residuals[-1] > 1e3 * min(info.value.residuals)

    def test_iteration_cap_returns_best(self):
        a_star, e_star = planted(20, 20, 2, 0.1, seed=11)
        w = identity_weights((20, 20), (20, 20))
        res = rpca_inner_solve(a_star + e_star, w, SolverConfig(lam=0.2, inner_max_iters=5))
        assert not res.converged and res.iterations == 5
        assert len(res.residuals) == 5

    def test_warm_start_shape_checked(self):
        w = identity_weights((4, 4), (4, 4))
        res = rpca_inner_solve(np.ones((4, 4)), w, SolverConfig(lam=0.5))
        w3 = identity_weights((3, 3), (3, 3))
        with pytest.raises(MatrixError):
            rpca_inner_solve(np.ones((3, 3)), w3, SolverConfig(lam=0.5), warm_start=res.state)

    def test_weight_shape_checked(self):
        with pytest.raises(MatrixError):
            rpca_inner_solve(np.ones((4, 3)), identity_weights((4, 4), (4, 4)), SolverConfig(lam=0.5))


class TestLrrInner:
    def test_block_diagonal_on_disjoint_subspaces(self):
        rng = np.random.default_rng(12)
        q, _ = np.linalg.qr(rng.standard_normal((20, 6)))
        blocks = [q[:, 0:3] @ rng.standard_normal((3, 8)), q[:, 3:6] @ rng.standard_normal((3, 8))]
        p = np.hstack(blocks)
        w = initial_weights(20, 16, SolverConfig(delta1=1.0, delta2=1.0), spectral_shape=(16, 16))
        w = WeightSet(w.wY, w.wZ, np.ones_like(w.wE), 1.0, 1.0, w.factors)
        res = lrr_inner_solve(p, w, SolverConfig(lam=10.0))
        absa = np.abs(res.a)
        off = absa[:8, 8:].sum() + absa[8:, :8].sum()
        assert off <= 1e-3 * absa.sum()

    def test_repeated_column(self):
        col = np.random.default_rng(13).standard_normal((6, 1))
        p = np.repeat(col, 5, axis=1)
        w = identity_weights((5, 5), (6, 5))
        res = lrr_inner_solve(p, w, SolverConfig(lam=1.0))
        assert np.abs(res.e).max() <= 1e-6
        np.testing.assert_allclose(p @ res.a, p, atol=1e-6)

    def test_feasibility(self):
        rng = np.random.default_rng(14)
        p = rng.standard_normal((15, 4)) @ rng.standard_normal((4, 30))
        p[rng.random(p.shape) < 0.05] += 5.0
        w = identity_weights((30, 30), (15, 30))
        cfg = SolverConfig(lam=0.1)
        res = lrr_inner_solve(p, w, cfg)
        assert res.converged
        assert np.linalg.norm(p - p @ res.a - res.e) / np.linalg.norm(p) <= cfg.inner_tol

    def test_reweighted_feasibility(self):
        rng = np.random.default_rng(15)
        p = rng.standard_normal((15, 3)) @ rng.standard_normal((3, 30))
        w = weights_from_iterate(rng.standard_normal((30, 30)) * 0.1, np.zeros((15, 30)), 1.0, 1.0)
        cfg = SolverConfig(lam=0.1)
        res = lrr_inner_solve(p, w, cfg)
        assert res.converged
        assert np.linalg.norm(p - p @ res.a - res.e) / np.linalg.norm(p) <= cfg.inner_tol


def test_planted_helper_matches_generator_counts():
    inst = make_instance(20, 20, 0.1, 0.1, seed=0)
    assert np.count_nonzero(inst.e_star) == 40
