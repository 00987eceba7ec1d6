import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from uavmec.neural import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    Adam,
    MlpSpec,
    ParamSet,
    adam_step,
    backward,
    finite_difference_grads,
    forward,
    init_params,
    load_checkpoint,
    policy_sample,
    save_checkpoint,
    soft_update,
    squashed_grads,
)
from uavmec.physics import DomainError


def reference_forward(weights, biases, x):
    """Plain per-member loop, independent of the batched implementation."""
    outs = []
    for e in range(weights[0].shape[0]):
        h = x if x.ndim == 2 else x[e]
        for i, (w, b) in enumerate(zip(weights, biases)):
            h = h.dot(w[e]) + b[e][0]
            if i < len(weights) - 1:
                h = np.where(h > 0, h, 0.0)
        outs.append(h)
    return np.stack(outs)


class _FixedNoise:
    def __init__(self, z):
        self.z = np.asarray(z, dtype=float)

    def standard_normal(self, shape):
        return np.broadcast_to(self.z, shape).copy()


class TestForward:
    def test_zero_params(self):
        p = init_params(MlpSpec(3, (4,), 2), np.random.default_rng(0))
        p.flat[:] = 0.0
        out, _ = forward(p, np.ones((5, 3)))
        assert np.all(out == 0.0)

    def test_identity_linear(self):
        p = ParamSet([np.eye(3)[None]], [np.zeros((1, 1, 3))])
        x = np.random.default_rng(1).normal(size=(4, 3))
        assert np.array_equal(forward(p, x)[0][0], x)

    @pytest.mark.parametrize("shared", [True, False])
    def test_against_reference(self, shared):
        rng = np.random.default_rng(2)
        p = init_params(MlpSpec(5, (7, 6), 3), rng, members=4)
        x = rng.normal(size=(9, 5)) if shared else rng.normal(size=(4, 9, 5))
        got, _ = forward(p, x)
        want = reference_forward(p.weights, p.biases, x)
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_shape_errors(self):
        p = init_params(MlpSpec(5, (4,), 1), np.random.default_rng(0), members=2)
        with pytest.raises(DomainError):
            forward(p, np.zeros((3, 4)))
        with pytest.raises(DomainError):
            forward(p, np.zeros((3, 3, 5)))


class TestBackward:
    def test_linear_weight_grad_is_input(self):
        p = ParamSet([np.array([[[2.0], [3.0]]])], [np.zeros((1, 1, 1))])
        x = np.array([[0.7, -1.3]])
        _, cache = forward(p, x)
        grads, g_in = backward(p, cache, np.ones((1, 1, 1)))
        assert np.allclose(grads[0][0, :, 0], x[0])
        assert np.allclose(g_in[0, 0], [2.0, 3.0])

    def test_dead_unit_blocks_gradient(self):
        w1 = np.array([[[1.0, -1.0]]])  # input 1 -> hidden (1, -1)
        w2 = np.array([[[1.0], [1.0]]])
        p = ParamSet([w1, w2], [np.zeros((1, 1, 2)), np.zeros((1, 1, 1))])
        _, cache = forward(p, np.array([[1.0]]))
        grads, _ = backward(p, cache, np.ones((1, 1, 1)))
        assert grads[0][0, 0, 1] == 0.0  # second hidden unit is dead
        assert grads[2][0, 1, 0] == 0.0

    def test_stale_cache(self):
        p = init_params(MlpSpec(2, (3,), 1), np.random.default_rng(0))
        _, cache = forward(p, np.ones((1, 2)))
        p.touch()
        with pytest.raises(DomainError):
            backward(p, cache, np.ones((1, 1, 1)))

    @pytest.mark.parametrize("shared", [True, False])
    def test_finite_differences_two_by_sixteen(self, shared):
        rng = np.random.default_rng(3)
        p = init_params(MlpSpec(4, (16, 16), 3), rng, members=2)
        x = rng.normal(size=(6, 4)) if shared else rng.normal(size=(2, 6, 4))
        c = rng.normal(size=(2, 6, 3))

        def loss():
            return float(np.sum(c * forward(p, x)[0] ** 2))

        out, cache = forward(p, x)
        grads, _ = backward(p, cache, 2 * c * out)
        numeric = finite_difference_grads(loss, p.arrays(), 1e-5)
        for g, n in zip(grads, numeric):
            err = np.abs(g - n) / np.maximum(np.maximum(np.abs(g), np.abs(n)), 1e-6)
            assert err.max() < 1e-4

    def test_input_gradient(self):
        rng = np.random.default_rng(4)
        p = init_params(MlpSpec(3, (16, 16), 1), rng, members=2)
        x = rng.normal(size=(2, 5, 3))
        _, cache = forward(p, x)
        _, g_in = backward(p, cache, np.ones((2, 5, 1)), param_grads=False)
        numeric = finite_difference_grads(lambda: float(forward(p, x)[0].sum()), [x], 1e-5)[0]
        assert np.allclose(g_in, numeric, rtol=1e-6, atol=1e-8)


class TestPolicySample:
    def test_zero_std_is_tanh_mean(self):
        mean = np.array([[0.3, -1.2]])
        s = policy_sample(mean, np.full((1, 2), LOG_STD_MIN), np.random.default_rng(0))
        assert np.allclose(s.action, np.tanh(mean), atol=1e-8)
        d = policy_sample(mean, np.zeros((1, 2)), deterministic=True)
        assert np.array_equal(d.action, np.tanh(mean))

    def test_actions_strictly_inside(self):
        rng = np.random.default_rng(1)
        s = policy_sample(rng.normal(scale=30, size=(1000, 4)), np.full((1000, 4), LOG_STD_MAX), rng)
        assert np.all(np.abs(s.action) < 1.0)
        assert np.all(np.isfinite(s.log_prob))

    def test_log_prob_matches_squashed_density(self):
        """1-D: exp(log_prob) vs the derivative of the exact squashed CDF, and unit total mass."""
        mu, log_std = 0.3, -0.4
        sigma = math.exp(log_std)

        def density(a):
            z = (math.atanh(a) - mu) / sigma
            s = policy_sample(np.array([[mu]]), np.array([[log_std]]), _FixedNoise([z]))
            return math.exp(float(s.log_prob[0]))

        def cdf(a):
            return norm.cdf((math.atanh(a) - mu) / sigma)

        for a in (-0.6, 0.0, 0.25, 0.7, 0.95):
            h = 1e-5
            numeric = (cdf(a + h) - cdf(a - h)) / (2 * h)
            assert abs(density(a) - numeric) <= 1e-3 * max(1.0, numeric)
        mass, _ = integrate.quad(density, -1 + 1e-12, 1 - 1e-12, limit=200)
        assert mass == pytest.approx(1.0, abs=1e-3)

    def test_needs_rng(self):
        with pytest.raises(DomainError):
            policy_sample(np.zeros((1, 1)), np.zeros((1, 1)))

    @given(st.floats(-50, 50), st.floats(-30, 10))
    @settings(max_examples=100, deadline=None)
    def test_log_prob_finite_for_clamped_log_std(self, mu, log_std):
        s = policy_sample(np.array([[mu]]), np.array([[log_std]]), np.random.default_rng(0))
        assert np.isfinite(s.log_prob).all()

    def test_squashed_grads_finite_difference(self):
        rng = np.random.default_rng(5)
        mean, log_std = rng.normal(size=(4, 3)), rng.normal(scale=0.3, size=(4, 3))
        z = rng.normal(size=(4, 3))
        wa, wl = rng.normal(size=(4, 3)), rng.normal(size=4)

        def loss():
            s = policy_sample(mean, log_std, _FixedNoise(z))
            return float(np.sum(wa * s.action) + np.sum(wl * s.log_prob))

        s = policy_sample(mean, log_std, _FixedNoise(z))
        gm, gs = squashed_grads(s, wa, wl)
        nm, ns = finite_difference_grads(loss, [mean, log_std], 1e-6)
        assert np.allclose(gm, nm, rtol=1e-5, atol=1e-7)
        assert np.allclose(gs, ns, rtol=1e-5, atol=1e-7)


class TestAdam:
    def test_zero_gradient(self):
        a = np.array([1.0, -2.0])
        opt = Adam([a], 0.1)
        opt.step([a], [np.zeros(2)])
        assert np.array_equal(a, [1.0, -2.0])
        assert opt.t == 1

    def test_scalar_hand_trace(self):
        a = np.array([1.0])
        opt = Adam([a], 0.1)
        opt.step([a], [np.array([0.5])])
        # m_hat = 0.5, v_hat = 0.25 after bias correction
        assert a[0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), rel=1e-15)
        opt.step([a], [np.array([-0.25])])
        m = 0.9 * 0.05 + 0.1 * -0.25
        v = 0.999 * 0.00025 + 0.001 * 0.0625
        m_hat, v_hat = m / (1 - 0.9**2), v / (1 - 0.999**2)
        want = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert a[0] == pytest.approx(want, rel=1e-13)

    def test_nonfinite_gradient_skipped(self):
        a = np.array([1.0])
        opt = Adam([a], 0.1)
        assert not opt.step([a], [np.array([np.nan])])
        assert a[0] == 1.0 and opt.skipped == 1 and opt.t == 0

    def test_deterministic(self):
        def run():
            p = init_params(MlpSpec(2, (4,), 1), np.random.default_rng(0))
            opt = Adam([p.flat], 1e-2)
            for i in range(5):
                _, cache = forward(p, np.ones((3, 2)) * i)
                grads, _ = backward(p, cache, np.ones((1, 3, 1)))
                adam_step(opt, p, grads)
            return p.flat.copy()

        assert np.array_equal(run(), run())

    def test_moments_never_subnormal(self):
        a = np.ones(3, dtype=np.float32)
        opt = Adam([a], 1e-3)
        opt.step([a], [np.full(3, 1e-3, dtype=np.float32)])
        for _ in range(2000):
            opt.step([a], [np.zeros(3, dtype=np.float32)])
            for x in (opt.m[0], opt.v[0]):
                assert np.all((x == 0) | (np.abs(x) >= np.finfo(np.float32).tiny))
        assert np.all(opt.m[0] == 0)

    def test_shape_mismatch(self):
        a = np.zeros(2)
        with pytest.raises(DomainError):
            Adam([a], 0.1).step([a], [np.zeros(3)])


class TestSoftUpdate:
    def _pair(self, t, o):
        mk = lambda v: ParamSet([np.full((1, 1, 1), v)], [np.full((1, 1, 1), v)])  # noqa: E731
        return mk(t), mk(o)

    def test_endpoints(self):
        t, o = self._pair(1.0, 0.0)
        soft_update(t, o, 1.0)
        assert t.weights[0].item() == 1.0
        soft_update(t, o, 0.0)
        assert t.weights[0].item() == 0.0

    def test_printed_convention(self):
        t, o = self._pair(1.0, 0.0)
        soft_update(t, o, 0.995)
        assert t.weights[0].item() == pytest.approx(0.995, rel=1e-15)

    @given(st.floats(0.0, 0.999))
    def test_contraction(self, tau):
        rng = np.random.default_rng(0)
        t = init_params(MlpSpec(2, (3,), 1), rng)
        o = init_params(MlpSpec(2, (3,), 1), rng)
        before = np.abs(t.flat - o.flat)
        soft_update(t, o, tau)
        assert np.allclose(np.abs(t.flat - o.flat), tau * before, rtol=1e-12, atol=1e-15)

    def test_errors(self):
        t, o = self._pair(1.0, 0.0)
        with pytest.raises(DomainError):
            soft_update(t, o, 1.5)
        other = init_params(MlpSpec(2, (3,), 1), np.random.default_rng(0))
        with pytest.raises(DomainError):
            soft_update(t, other, 0.5)


class TestParamSet:
    def test_views_share_flat_buffer(self):
        p = init_params(MlpSpec(2, (3,), 1), np.random.default_rng(0), members=2)
        p.flat[:] = 7.0
        assert all(np.all(a == 7.0) for a in p.arrays())

    def test_copy_is_independent(self):
        p = init_params(MlpSpec(2, (3,), 1), np.random.default_rng(0))
        q = p.copy()
        q.flat[:] = 0.0
        assert not np.all(p.flat == 0.0)

    def test_checkpoint_round_trip(self, tmp_path):
        p = init_params(MlpSpec(2, (3,), 1), np.random.default_rng(0), members=3)
        save_checkpoint(tmp_path / "c.npz", {"net": p}, {"note": "x"})
        nets, meta = load_checkpoint(tmp_path / "c.npz")
        assert meta == {"note": "x"}
        assert np.array_equal(nets["net"].flat, p.flat)

    def test_checkpoint_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "other.npz"
        np.savez(path, header=np.array('{"format": "something-else"}'))
        with pytest.raises(DomainError):
            load_checkpoint(path)
