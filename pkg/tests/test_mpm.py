import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpmfuse.errors import DataError, NumericalError
from mpmfuse.geometry import FrameSize, NormalizedExtent, NormalizedPoint
from mpmfuse.mpm import (
    KinematicState,
    MotionPredictor,
    MpmConfig,
    Velocity,
    adapt_step,
    blend_logits,
    gaussian_prior,
    init_state,
    make_mpm_optimizer,
    mpm_loss_and_grad,
    observe,
)
from mpmfuse.optim import AdamW, check_gradient


def state(x, y, w=0.2, h=0.2, vx=0.0, vy=0.0, size=FrameSize(10, 10), fso=0):
    return KinematicState(NormalizedPoint(x, y), NormalizedExtent(w, h), Velocity(vx, vy), size, fso)


def gaussian_oracle(x, y, sig_x, sig_y, width, height):
    """Per-pixel scalar loop, independent of the vectorized path."""
    out = np.empty((height, width))
    for j in range(height):
        for i in range(width):
            u = (i + 0.5) / width
            v = (j + 0.5) / height
            out[j, i] = math.exp(-((u - x) ** 2) / (2 * sig_x**2) - ((v - y) ** 2) / (2 * sig_y**2))
    return out


def random_instance(seed, h=8, w=8, n=2):
    rng = np.random.default_rng(seed)
    size = FrameSize(w, h)
    raw = rng.normal(0, 2, (n + 1, h, w))
    labels = rng.integers(0, n + 1, (h, w))
    states = [
        state(*rng.uniform(0.1, 0.9, 2), *rng.uniform(0.1, 0.6, 2), size=size) for _ in range(n)
    ]
    beta = rng.uniform(0.1, 2.0)
    scale = tuple(rng.uniform(0.3, 1.5, 2))
    return raw, states, labels, beta, scale


class TestInitState:
    def test_full_mask(self):
        s = init_state(np.ones((4, 4), bool))
        assert (s.position, s.extent, s.velocity, s.frames_since_observation) == ((0.5, 0.5), (1, 1), (0, 0), 0)

    def test_single_pixel(self):
        m = np.zeros((4, 4), bool)
        m[0, 0] = True
        s = init_state(m, FrameSize(4, 4))
        assert s.position == (0.125, 0.125) and s.extent == (0.25, 0.25)

    def test_block(self):
        m = np.zeros((8, 8), bool)
        m[1:4, 2:5] = True
        s = init_state(m)
        assert s.position == pytest.approx((0.4375, 0.3125), abs=1e-15)
        assert s.extent == (0.375, 0.375)

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            init_state(np.zeros((4, 4), bool))


class TestObserve:
    cfg = MpmConfig(alpha=0.9)

    def test_ema_and_velocity(self):
        m = np.zeros((10, 10), bool)
        m[5:7, 5:7] = True  # centroid (0.6, 0.6), extent (0.2, 0.2)
        s = observe(state(0.4, 0.4), m, self.cfg)
        assert s.position == pytest.approx((0.42, 0.42), abs=1e-15)
        assert s.velocity == pytest.approx((0.02, 0.02), abs=1e-15)
        assert s.extent == pytest.approx((0.2, 0.2), abs=1e-15)
        assert s.frames_since_observation == 0

    def test_absent_extrapolates(self):
        s = observe(state(0.5, 0.5, vx=0.1, fso=2), None, self.cfg)
        assert s.position == pytest.approx((0.6, 0.5))
        assert s.extent == (0.2, 0.2) and s.velocity == (0.1, 0.0)
        assert s.frames_since_observation == 3

    def test_clamps_at_border_keeps_velocity(self):
        s = observe(state(0.95, 0.5, vx=0.1), None, self.cfg)
        assert s.position == (1.0, 0.5)
        assert s.velocity == (0.1, 0.0)

    def test_small_mask_counts_as_absent(self):
        m = np.zeros((10, 10), bool)
        m[0, 0] = True
        s = observe(state(0.5, 0.5, vx=0.05), m, replace(self.cfg, min_valid_area=2))
        assert s.position == pytest.approx((0.55, 0.5))
        assert s.frames_since_observation == 1

    def test_size_mismatch(self):
        with pytest.raises(DataError):
            observe(state(0.5, 0.5), np.ones((5, 5), bool), self.cfg)

    @given(st.floats(0.01, 0.99), st.tuples(st.integers(0, 9), st.integers(0, 9)),
           st.tuples(st.floats(0, 1), st.floats(0, 1)))
    def test_contraction(self, alpha, pix, prev):
        m = np.zeros((10, 10), bool)
        m[pix[1], pix[0]] = True
        obs = np.array([(pix[0] + 0.5) / 10, (pix[1] + 0.5) / 10])
        s = observe(state(*prev), m, MpmConfig(alpha=alpha))
        new = np.array(s.position)
        assert np.linalg.norm(new - obs) == pytest.approx(alpha * np.linalg.norm(np.array(prev) - obs), abs=1e-12)
        np.testing.assert_allclose(s.velocity, new - np.array(prev), atol=1e-15)

    def test_geometric_convergence(self):
        m = np.zeros((10, 10), bool)
        m[7, 2] = True
        obs = np.array([0.25, 0.75])
        s = state(0.9, 0.1)
        d0 = np.linalg.norm(np.array(s.position) - obs)
        for k in range(1, 30):
            s = observe(s, m, self.cfg)
            assert np.linalg.norm(np.array(s.position) - obs) == pytest.approx(0.9**k * d0, rel=1e-9)

    @given(st.integers(1, 20), st.floats(-0.02, 0.02), st.floats(-0.02, 0.02))
    def test_extrapolation_linear(self, k, vx, vy):
        s0 = state(0.5, 0.5, vx=vx, vy=vy)
        s = s0
        for _ in range(k):
            s = observe(s, None, self.cfg)
        assert s.position.x == pytest.approx(0.5 + k * vx, abs=1e-9)
        assert s.position.y == pytest.approx(0.5 + k * vy, abs=1e-9)
        assert s.frames_since_observation == k


class TestGaussianPrior:
    def test_unit_at_center_pixel(self):
        size = FrameSize(8, 8)
        g = gaussian_prior(state(2.5 / 8, 4.5 / 8, size=size), size, MpmConfig())
        assert g[4, 2] == 1.0
        assert g.max() == 1.0 and np.argmax(g) == 4 * 8 + 2

    def test_one_sigma(self):
        size = FrameSize(8, 8)
        cfg = MpmConfig(sigma_scale=(1.0, 1.0))
        g = gaussian_prior(state(2.5 / 8, 4.5 / 8, w=0.25, h=0.25, size=size), size, cfg)
        assert g[4, 4] == pytest.approx(math.exp(-0.5), abs=1e-15)
        assert g[4, 4] == pytest.approx(0.60653, abs=1e-5)

    def test_matches_scalar_oracle(self):
        size = FrameSize(8, 8)
        cfg = MpmConfig(sigma_scale=(1.0, 1.0))
        g = gaussian_prior(state(0.5, 0.5, w=0.5, h=0.5, size=size), size, cfg)
        np.testing.assert_allclose(g, gaussian_oracle(0.5, 0.5, 0.5, 0.5, 8, 8), rtol=0, atol=1e-15)

    def test_sigma_floor(self):
        size = FrameSize(16, 16)
        cfg = MpmConfig(sigma_scale=(1e-6, 1e-6))
        g = gaussian_prior(state(0.5, 0.5, w=1 / 16, h=1 / 16, size=size), size, cfg)
        np.testing.assert_allclose(g, gaussian_oracle(0.5, 0.5, 1e-3, 1e-3, 16, 16), atol=0)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0.05, 1), st.floats(0.05, 1))
    def test_separable(self, x, y, w, h):
        size = FrameSize(12, 9)
        g = gaussian_prior(state(x, y, w, h, size=size), size, MpmConfig())
        gx = g[np.argmax(g.max(axis=1))] / g.max()
        gy = g[:, np.argmax(g.max(axis=0))]
        np.testing.assert_allclose(g, np.outer(gy, gx), rtol=1e-12, atol=1e-300)
        assert np.all(g <= 1.0)


class TestBlend:
    def test_beta_zero_identity(self):
        raw = np.random.default_rng(0).normal(size=(3, 5, 6))
        priors = [np.full((5, 6), 0.3), np.full((5, 6), 0.9)]
        out = blend_logits(raw, priors, MpmConfig(beta=0.0))
        assert out.tobytes() == raw.tobytes()

    def test_center_shift(self):
        raw = np.zeros((2, 1, 1))
        out = blend_logits(raw, [np.ones((1, 1))], MpmConfig(beta=1.0, epsilon=1e-6))
        assert out[1, 0, 0] == pytest.approx(9.999995000003333e-07, abs=1e-15)
        assert out[0, 0, 0] == 0.0

    def test_one_sigma_shift(self):
        raw = np.zeros((2, 1, 1))
        out = blend_logits(raw, [np.full((1, 1), math.exp(-0.5))], MpmConfig(beta=2.0, epsilon=1e-6))
        # 2 * log(exp(-0.5) + 1e-6), evaluated with mpmath
        assert out[1, 0, 0] == pytest.approx(-0.999996702560176878, abs=1e-14)

    def test_errors(self):
        with pytest.raises(DataError):
            blend_logits(np.zeros((3, 2, 2)), [np.ones((2, 2))], MpmConfig())
        with pytest.raises(DataError):
            blend_logits(np.zeros((2, 2, 2)), [np.ones((3, 2))], MpmConfig())

    @settings(max_examples=30)
    @given(st.floats(0, 2), st.floats(0, 2), st.integers(0, 1000))
    def test_decision_monotone_in_beta(self, b1, b2, seed):
        b1, b2 = min(b1, b2), max(b1, b2)
        size = FrameSize(10, 10)
        rng = np.random.default_rng(seed)
        raw = rng.normal(0, 2, (2, 10, 10))
        g = gaussian_prior(state(*rng.uniform(0.2, 0.8, 2), size=size), size, MpmConfig())
        field = np.log(g + 1e-6)
        lab1 = np.argmax(blend_logits(raw, [g], MpmConfig(beta=b1)), axis=0) == 1
        lab2 = np.argmax(blend_logits(raw, [g], MpmConfig(beta=b2)), axis=0) == 1
        # raising beta only moves pixels toward the object where the field is positive
        assert not np.any(lab2 & ~lab1 & (field < 0))
        assert not np.any(lab1 & ~lab2 & (field > 0))
        assert np.unravel_index(np.argmax(field), field.shape) == np.unravel_index(np.argmax(g), g.shape)


class TestAdapt:
    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_matches_finite_differences(self, seed):
        raw, states, labels, beta, scale = random_instance(seed)
        _, grad = mpm_loss_and_grad(raw, states, labels, beta, scale)

        def f(theta):
            return mpm_loss_and_grad(raw, states, labels, theta[0], theta[1:])[0]

        assert check_gradient(f, [beta, *scale], grad) < 1e-4

    def test_saturated_moves_only_by_decay(self):
        labels = np.zeros((6, 6), int)
        labels[2:4, 2:4] = 1
        raw = np.where(np.arange(2)[:, None, None] == labels[None], 60.0, -60.0)
        st0 = init_state(labels == 1)
        cfg = MpmConfig(beta=0.5, sigma_scale=(0.5, 0.7))
        opt = make_mpm_optimizer()
        new, loss = adapt_step(cfg, raw, [st0], labels, opt)
        assert loss < 1e-40
        decay = 1 - 1e-4 * 1e-6
        assert new.beta == pytest.approx(0.5 * decay, rel=1e-12)
        assert new.sigma_scale == pytest.approx((0.5 * decay, 0.7 * decay), rel=1e-12)

    def test_five_steps_decrease_loss(self):
        size = FrameSize(16, 16)
        labels = np.zeros((16, 16), int)
        labels[6:10, 6:10] = 1
        st0 = init_state(labels == 1, size)
        raw = np.zeros((2, 16, 16))
        cfg = MpmConfig(beta=0.5)
        opt = make_mpm_optimizer()
        losses = []
        for _ in range(5):
            cfg, loss = adapt_step(cfg, raw, [st0], labels, opt)
            losses.append(loss)
        losses.append(mpm_loss_and_grad(raw, [st0], labels, cfg.beta, cfg.sigma_scale)[0])
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_nonfinite_aborts(self):
        raw, states, labels, beta, scale = random_instance(0)
        raw[1, 0, 0] = np.inf
        cfg = MpmConfig(beta=beta, sigma_scale=scale)
        with pytest.raises((NumericalError, DataError)):
            adapt_step(cfg, raw, states, labels, AdamW(lr=1e-4))


class TestMotionPredictor:
    def test_tracks_and_extrapolates(self):
        labels = np.zeros((20, 20), np.uint8)
        labels[4:7, 4:7] = 1
        p = MotionPredictor(MpmConfig(), 1)
        p.start(labels)
        moved = np.roll(labels, 1, axis=1)
        p.update(moved)
        assert p.states[0].velocity.vx > 0
        p.update(np.zeros_like(labels))
        assert p.states[0].frames_since_observation == 1

    def test_late_object_is_picked_up(self):
        labels = np.zeros((10, 10), np.uint8)
        p = MotionPredictor(MpmConfig(), 1)
        p.start(labels)
        assert p.states == [None] and p.priors() == [None]
        labels[2, 2] = 1
        p.update(labels)
        assert p.states[0].position == (0.25, 0.25)
