"""Schedule arithmetic, forward/reverse kernels, masked editing, replay."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rolledit.sde import (
    DEFAULT_SCHEDULE,
    BetaSchedule,
    OutOfRange,
    ScheduleInvalid,
    ShapeMismatch,
    alpha_bar,
    alpha_bar_path,
    beta_at,
    binarize,
    masked_edit,
    perturb,
    replay_draws,
    reverse_step,
    sample,
    signed_from_roll,
)
from rolledit.signals import null_signals

from conftest import AnalyticGaussianScore

NULL = null_signals()


class ZeroScore:
    def evaluate(self, x, t, cond):
        return np.zeros_like(x)


class PullScore:
    """Score of a unit Gaussian centred at the origin: s(x) = -x."""

    def evaluate(self, x, t, cond):
        return -x


class SpyScore:
    """Wraps another score function and records every call."""

    def __init__(self, inner):
        self.inner = inner
        self.calls: list[tuple[float, object]] = []

    def evaluate(self, x, t, cond):
        self.calls.append((t, cond))
        return self.inner.evaluate(x, t, cond)


class TestBetaSchedule:
    def test_defaults(self):
        assert DEFAULT_SCHEDULE.beta_start == 0.1
        assert DEFAULT_SCHEDULE.beta_end == 20.0
        assert DEFAULT_SCHEDULE.num_steps == 100

    def test_nonpositive_start_rejected(self):
        with pytest.raises(ScheduleInvalid):
            BetaSchedule(beta_start=0.0)
        with pytest.raises(ScheduleInvalid):
            BetaSchedule(beta_start=-0.1)

    def test_end_must_exceed_start(self):
        with pytest.raises(ScheduleInvalid):
            BetaSchedule(beta_start=1.0, beta_end=1.0)
        with pytest.raises(ScheduleInvalid):
            BetaSchedule(beta_start=1.0, beta_end=0.5)

    def test_step_count_positive(self):
        with pytest.raises(ScheduleInvalid):
            BetaSchedule(num_steps=0)


class TestBetaAt:
    def test_left_endpoint_limit(self):
        assert beta_at(DEFAULT_SCHEDULE, 1e-12) == pytest.approx(0.1, abs=1e-9)

    def test_right_endpoint(self):
        assert beta_at(DEFAULT_SCHEDULE, 1.0) == pytest.approx(20.0, rel=1e-12)

    def test_midpoint(self):
        assert beta_at(DEFAULT_SCHEDULE, 0.5) == pytest.approx(10.05, rel=1e-12)

    @pytest.mark.parametrize("t", [0.0, -0.25, 1.0001, 2.0])
    def test_domain(self, t):
        with pytest.raises(OutOfRange):
            beta_at(DEFAULT_SCHEDULE, t)


# Frozen from an exact rational-arithmetic product over the default schedule
# (fractions.Fraction, no floating point until the final conversion).
ALPHA_BAR_GOLDEN = {
    (100, 1.0): 1.8321711813665522e-05,
    (50, 1.0): 0.0685947693534254,
    (100, 0.4): 0.18899853913613615,
    (40, 0.4): 0.757049879373113,
}


class TestAlphaBar:
    def test_empty_product(self):
        assert alpha_bar(DEFAULT_SCHEDULE, 0, 1.0) == 1.0
        assert alpha_bar(DEFAULT_SCHEDULE, 0, 0.4) == 1.0

    @pytest.mark.parametrize("key", sorted(ALPHA_BAR_GOLDEN))
    def test_golden_values(self, key):
        n_step, t0 = key
        got = alpha_bar(DEFAULT_SCHEDULE, n_step, t0)
        assert got == pytest.approx(ALPHA_BAR_GOLDEN[key], rel=1e-12)

    @pytest.mark.parametrize("t0", [1.0, 0.4, 0.05])
    def test_strictly_decreasing(self, t0):
        path = alpha_bar_path(DEFAULT_SCHEDULE, t0)
        assert path.shape == (DEFAULT_SCHEDULE.num_steps + 1,)
        assert path[0] == 1.0
        assert (np.diff(path) < 0).all()
        assert path[-1] > 0

    @given(t0=st.floats(min_value=0.01, max_value=1.0))
    @settings(max_examples=50, deadline=None)
    def test_path_bounds(self, t0):
        path = alpha_bar_path(DEFAULT_SCHEDULE, t0)
        assert (path > 0).all() and (path <= 1).all()
        assert (np.diff(path) < 0).all()

    def test_step_domain(self):
        with pytest.raises(OutOfRange):
            alpha_bar(DEFAULT_SCHEDULE, -1, 1.0)
        with pytest.raises(OutOfRange):
            alpha_bar(DEFAULT_SCHEDULE, 101, 1.0)

    @pytest.mark.parametrize("t0", [0.0, -0.5, 1.5])
    def test_horizon_domain(self, t0):
        with pytest.raises(OutOfRange):
            alpha_bar_path(DEFAULT_SCHEDULE, t0)

    def test_coarse_grid_rejected(self):
        # dt = 0.1 puts beta * dt past 1 near t = 1
        with pytest.raises(ScheduleInvalid):
            alpha_bar_path(BetaSchedule(num_steps=10), 1.0)
        # the same grid is fine on a short horizon
        path = alpha_bar_path(BetaSchedule(num_steps=10), 0.1)
        assert (path > 0).all()


class TestPerturb:
    def test_zero_steps_is_identity(self, np_rng):
        x0 = np_rng.standard_normal((4, 6))
        z = np_rng.standard_normal((4, 6))
        out = perturb(x0, 0, 1.0, z)
        assert np.array_equal(out, x0)

    def test_zero_input_is_scaled_noise(self, np_rng):
        z = np_rng.standard_normal((3, 5))
        out = perturb(np.zeros((3, 5)), 100, 1.0, z)
        ab = ALPHA_BAR_GOLDEN[(100, 1.0)]
        assert out == pytest.approx(math.sqrt(1.0 - ab) * z, rel=1e-12)

    def test_moment_check(self):
        # 1e5 scalar draws of x0 = 1: the sample mean must land within
        # 3 sigma of sqrt(alpha_bar) under the Monte-Carlo standard error.
        rng = np.random.default_rng(2024)
        x0 = np.ones((200, 500))
        z = rng.standard_normal((200, 500))
        out = perturb(x0, 50, 1.0, z)
        ab = alpha_bar(DEFAULT_SCHEDULE, 50, 1.0)
        se = math.sqrt(1.0 - ab) / math.sqrt(x0.size)
        assert abs(out.mean() - math.sqrt(ab)) < 3 * se
        assert out.var() == pytest.approx(1.0 - ab, rel=0.05)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            perturb(np.zeros((2, 2)), 1, 1.0, np.zeros((2, 3)))
        with pytest.raises(ShapeMismatch):
            perturb(np.zeros(4), 1, 1.0, np.zeros(4))


class TestReverseStep:
    def test_zero_score_zero_noise_is_pure_rescale(self):
        x = np.full((2, 3), 2.0)
        z = np.zeros((2, 3))
        out = reverse_step(x, 50, 1.0, ZeroScore(), NULL, z)
        # t = 0.5, beta = 10.05, dt = 0.01
        assert out == pytest.approx(x / math.sqrt(1.0 - 0.1005), rel=1e-12)

    def test_single_step_hand_value(self):
        # One-step schedule small enough to keep 1 - beta dt positive:
        # beta(1) = 0.5, dt = 1, so x' = (1 + 0.5 * (-1)) / sqrt(0.5).
        sched = BetaSchedule(beta_start=0.1, beta_end=0.5, num_steps=1)

        class MinusOne:
            def evaluate(self, x, t, cond):
                return np.full_like(x, -1.0)

        out = reverse_step(np.ones((1, 1)), 1, 1.0, MinusOne(), NULL,
                           np.zeros((1, 1)), sched)
        assert out[0, 0] == pytest.approx(0.5 / math.sqrt(0.5), rel=1e-12)

    def test_noise_is_added_after_rescale(self):
        # x = 0 and score = 0 isolate the noise term: sqrt(beta dt) * z,
        # not scaled by 1/sqrt(1 - beta dt).
        z = np.ones((1, 1))
        out = reverse_step(np.zeros((1, 1)), 50, 1.0, ZeroScore(), NULL, z)
        assert out[0, 0] == pytest.approx(math.sqrt(0.1005), rel=1e-12)

    def test_step_domain(self):
        x = np.zeros((1, 1))
        with pytest.raises(OutOfRange):
            reverse_step(x, 0, 1.0, ZeroScore(), NULL, x)
        with pytest.raises(OutOfRange):
            reverse_step(x, 101, 1.0, ZeroScore(), NULL, x)

    def test_degenerate_schedule_rejected(self):
        sched = BetaSchedule(num_steps=1)
        x = np.zeros((1, 1))
        with pytest.raises(ScheduleInvalid):
            reverse_step(x, 1, 1.0, ZeroScore(), NULL, x, sched)

    def test_score_shape_checked(self):
        class WrongShape:
            def evaluate(self, x, t, cond):
                return np.zeros((1, 1))

        x = np.zeros((2, 2))
        with pytest.raises(ShapeMismatch):
            reverse_step(x, 1, 1.0, WrongShape(), NULL, x)


class TestSample:
    def test_determinism(self):
        a = sample(PullScore(), NULL, (4, 6), seed=123)
        b = sample(PullScore(), NULL, (4, 6), seed=123)
        assert np.array_equal(a, b)
        c = sample(PullScore(), NULL, (4, 6), seed=124)
        assert not np.array_equal(a, c)

    def test_cond_passed_through_every_call(self):
        spy = SpyScore(PullScore())
        sample(spy, NULL, (2, 2), seed=0)
        assert len(spy.calls) == DEFAULT_SCHEDULE.num_steps
        assert all(cond is NULL for _, cond in spy.calls)
        ts = [t for t, _ in spy.calls]
        assert ts[0] == pytest.approx(1.0)
        assert ts[-1] == pytest.approx(0.01)
        assert all(a > b for a, b in zip(ts, ts[1:]))

    def test_analytic_score_recovers_moments(self):
        # Rows are iid 1-D Gaussians, so one run gives 4000 draws.
        oracle = AnalyticGaussianScore(mu=[0.3], sigma=[[1.0]])
        out = sample(oracle, NULL, (4000, 1), seed=7)
        assert abs(out.mean() - 0.3) < 0.05
        assert out.var() == pytest.approx(1.0, rel=0.10)


class TestMaskedEdit:
    def test_all_zero_mask_is_forward_replay(self, np_rng):
        x0 = np_rng.standard_normal((5, 7))
        mask = np.zeros((5, 7), dtype=np.uint8)
        n = DEFAULT_SCHEDULE.num_steps
        for k, t0 in ((1, 1.0), (1, 0.4), (3, 0.4)):
            out = masked_edit(x0, mask, t0, k, PullScore(), NULL, seed=99)
            z_last = replay_draws(x0.shape, 99, k * (n + 1))[-1]
            ab = alpha_bar(DEFAULT_SCHEDULE, 1, t0)
            want = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * z_last
            assert np.array_equal(out, want)

    def test_all_one_mask_matches_sample(self):
        mask = np.ones((3, 4), dtype=np.uint8)
        edited = masked_edit(np.zeros((3, 4)), mask, 1.0, 1, PullScore(),
                             NULL, seed=42)
        sampled = sample(PullScore(), NULL, (3, 4), seed=42)
        assert np.array_equal(edited, sampled)

    def test_preserved_cells_ignore_score(self, np_rng):
        # Whatever the model says, mask = 0 cells depend only on (x, seed).
        class Loud:
            def evaluate(self, x, t, cond):
                return np.full_like(x, 1e6)

        x0 = np_rng.standard_normal((4, 8))
        mask = np.zeros((4, 8), dtype=np.uint8)
        mask[1:3, 2:5] = 1
        a = masked_edit(x0, mask, 0.4, 2, PullScore(), NULL, seed=5)
        b = masked_edit(x0, mask, 0.4, 2, Loud(), NULL, seed=5)
        keep = mask == 0
        assert np.array_equal(a[keep], b[keep])
        assert not np.array_equal(a[~keep], b[~keep])

    def test_edited_region_actually_changes(self, np_rng):
        x0 = signed_from_roll((np_rng.random((6, 6)) > 0.5).astype(np.uint8))
        mask = np.ones((6, 6), dtype=np.uint8)
        mask[:, :3] = 0
        out = masked_edit(x0, mask, 0.4, 2, PullScore(), NULL, seed=11)
        assert not np.array_equal(out[:, 3:], x0[:, 3:])

    @given(seed=st.integers(0, 2**32 - 1),
           t0=st.sampled_from([0.25, 0.4, 1.0]),
           k=st.integers(1, 2))
    @settings(max_examples=20, deadline=None)
    def test_replay_bit_exact(self, seed, t0, k):
        x0 = np.linspace(-1, 1, 12).reshape(3, 4)
        mask = np.zeros((3, 4), dtype=np.uint8)
        mask[:, 2:] = 1
        a = masked_edit(x0, mask, t0, k, PullScore(), NULL, seed=seed)
        b = masked_edit(x0, mask, t0, k, PullScore(), NULL, seed=seed)
        assert np.array_equal(a, b)

    def test_validation(self):
        x = np.zeros((2, 2))
        ones = np.ones((2, 2), dtype=np.uint8)
        with pytest.raises(ShapeMismatch):
            masked_edit(x, np.ones((2, 3)), 1.0, 1, PullScore(), NULL, 0)
        with pytest.raises(ShapeMismatch):
            masked_edit(x, 2 * ones, 1.0, 1, PullScore(), NULL, 0)
        with pytest.raises(OutOfRange):
            masked_edit(x, ones, 0.0, 1, PullScore(), NULL, 0)
        with pytest.raises(OutOfRange):
            masked_edit(x, ones, 1.5, 1, PullScore(), NULL, 0)
        with pytest.raises(OutOfRange):
            masked_edit(x, ones, 1.0, 0, PullScore(), NULL, 0)


class TestBinarize:
    def test_all_negative(self):
        assert np.array_equal(binarize(np.full((2, 2), -1.0)),
                              np.zeros((2, 2), dtype=np.uint8))

    def test_all_positive(self):
        assert np.array_equal(binarize(np.full((2, 2), 1.0)),
                              np.ones((2, 2), dtype=np.uint8))

    def test_mixed(self):
        out = binarize(np.array([[-0.9, 0.4]]))
        assert out.dtype == np.uint8
        assert out.tolist() == [[0, 1]]

    def test_threshold_boundary_is_inclusive(self):
        assert binarize(np.array([[0.0]]))[0, 0] == 1
        assert binarize(np.array([[0.25]]), threshold=0.25)[0, 0] == 1

    def test_signed_round_trip(self, np_rng):
        roll = (np_rng.random((8, 16)) > 0.6).astype(np.uint8)
        assert np.array_equal(binarize(signed_from_roll(roll)), roll)

    def test_signed_rejects_non_binary(self):
        with pytest.raises(ShapeMismatch):
            signed_from_roll(np.array([[0, 2]]))


class TestForwardKernel:
    def test_euler_maruyama_matches_closed_form(self):
        # Simulate dx = -1/2 beta x dt + sqrt(beta) dw on a fine 1000-step
        # grid, 1e4 paths per cell, and compare against the closed-form
        # marginal on the same grid. Mean and variance within 2% per cell.
        micro = 1000
        t0 = 0.4
        sched = BetaSchedule(num_steps=micro)
        x0 = signed_from_roll(np.array([[1, 0]], dtype=np.uint8))
        paths = 10_000
        rng = np.random.default_rng(9)
        x = np.broadcast_to(x0, (paths,) + x0.shape).copy()
        dt = t0 / micro
        for i in range(1, micro + 1):
            beta = beta_at(sched, i * dt)
            x = x * (1.0 - 0.5 * beta * dt) + math.sqrt(beta * dt) * \
                rng.standard_normal(x.shape)
        ab = alpha_bar(sched, micro, t0)
        mean_err = np.abs(x.mean(axis=0) - math.sqrt(ab) * x0)
        var_err = np.abs(x.var(axis=0) - (1.0 - ab)) / (1.0 - ab)
        assert mean_err.max() < 0.02 * max(1.0, np.abs(x0).max())
        assert var_err.max() < 0.02
