"""Objective: case decomposition, schedules, weighted combination."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revisible.errors import ConfigError, ShapeError
from revisible.losses import (
    LossConfig,
    casewise_expansion,
    lambda_at,
    loss_case_a,
    loss_case_b,
    revisible_loss,
    weighted_combination,
)
from revisible.tensor import Tensor, backward


def t(arr, requires_grad=False):
    return Tensor(np.asarray(arr, np.float32), requires_grad=requires_grad)


def rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


class TestLambdaSchedule:
    def test_endpoints_match_defaults(self):
        cfg = LossConfig(total_epochs=100)
        assert lambda_at(cfg, 0) == 2.0
        assert lambda_at(cfg, 99) == 20.0

    def test_midpoint_strictly_between(self):
        cfg = LossConfig(total_epochs=100)
        for epoch in (49, 50):
            value = lambda_at(cfg, epoch)
            assert 2.0 < value < 20.0

    def test_monotone(self):
        cfg = LossConfig(total_epochs=37)
        values = [lambda_at(cfg, e) for e in range(37)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_out_of_range(self):
        cfg = LossConfig(total_epochs=10)
        with pytest.raises(ConfigError):
            lambda_at(cfg, 10)
        with pytest.raises(ConfigError):
            lambda_at(cfg, -1)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            LossConfig(lambda_s=0.0)
        with pytest.raises(ConfigError):
            LossConfig(lambda_s=5.0, lambda_f=2.0)
        with pytest.raises(ConfigError):
            LossConfig(eta=-0.1)


class TestRevisibleLoss:
    def test_visible_equals_target_collapses(self):
        blind = t(rand((1, 1, 4, 4), 0), requires_grad=True)
        target = t(rand((1, 1, 4, 4), 1))
        visible = t(target.data.copy())
        eta = 1.0
        bd = revisible_loss(blind, visible, target, lam=2.0, eta=eta)
        direct = float(np.mean((blind.data - target.data) ** 2))
        assert bd.total_value == pytest.approx((1 + eta) * direct, rel=1e-5)

    def test_exact_fit_is_zero(self):
        x = t(rand((1, 1, 4, 4), 2))
        bd = revisible_loss(t(x.data, requires_grad=True), t(x.data), t(x.data), 2.0, 1.0)
        assert bd.total_value == pytest.approx(0.0, abs=1e-10)

    def test_against_elementwise_reference(self):
        lam, eta = 2.0, 1.0
        b, v, y = rand((1, 1, 4, 4), 3), rand((1, 1, 4, 4), 4), rand((1, 1, 4, 4), 5)
        bd = revisible_loss(t(b, requires_grad=True), t(v), t(y), lam, eta)
        rev_ref = reg_ref = 0.0
        count = b.size
        for value_b, value_v, value_y in zip(b.reshape(-1), v.reshape(-1), y.reshape(-1)):
            rev_ref += (value_b + lam * value_v - (lam + 1) * value_y) ** 2
            reg_ref += (value_b - value_y) ** 2
        assert bd.rev_value == pytest.approx(rev_ref / count, rel=1e-5)
        assert bd.reg_value == pytest.approx(reg_ref / count, rel=1e-5)
        assert bd.total_value == pytest.approx((rev_ref + eta * reg_ref) / count, rel=1e-5)

    def test_breakdown_consistency(self):
        bd = revisible_loss(
            t(rand((2, 1, 4, 4), 6), requires_grad=True),
            t(rand((2, 1, 4, 4), 7)),
            t(rand((2, 1, 4, 4), 8)),
            lam=5.0,
            eta=0.7,
        )
        assert bd.total_value == pytest.approx(bd.rev_value + 0.7 * bd.reg_value, abs=1e-6)

    def test_rejects_live_visible(self):
        blind = t(rand((1, 1, 2, 2), 9), requires_grad=True)
        live = t(rand((1, 1, 2, 2), 10), requires_grad=True)
        with pytest.raises(ShapeError, match="live gradient"):
            revisible_loss(blind, live, t(rand((1, 1, 2, 2), 11)), 2.0, 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError, match="shapes differ"):
            revisible_loss(t(rand((1, 1, 2, 2), 0)), t(rand((1, 1, 2, 3), 0)),
                           t(rand((1, 1, 2, 2), 0)), 2.0, 1.0)

    def test_gradients_flow_only_through_blind(self):
        blind = t(rand((1, 1, 4, 4), 12), requires_grad=True)
        visible_data = rand((1, 1, 4, 4), 13)
        target = t(rand((1, 1, 4, 4), 14))
        lam, eta = 3.0, 1.0
        bd = revisible_loss(blind, t(visible_data), target, lam, eta)
        grads = backward(bd.total, {"blind": blind})
        count = blind.data.size
        expected = (
            2.0 * (blind.data + lam * visible_data - (lam + 1) * target.data) / count
            + eta * 2.0 * (blind.data - target.data) / count
        )
        np.testing.assert_allclose(grads["blind"], expected, rtol=1e-4, atol=1e-6)


class TestCaseDecomposition:
    def test_zero_when_all_equal(self):
        x = t(rand((1, 1, 3, 3), 15))
        assert loss_case_a(x, x, x, 2.0).item() == pytest.approx(0.0, abs=1e-10)
        assert loss_case_b(x, x, x, 2.0).item() == pytest.approx(0.0, abs=1e-10)

    def test_same_sign_pixel(self):
        blind, visible, target = t([[[[1.0]]]]), t([[[[1.0]]]]), t([[[[0.0]]]])
        lam = 2.0
        assert casewise_expansion(blind, visible, target, lam) == pytest.approx(9.0)
        assert loss_case_a(blind, visible, target, lam).item() == pytest.approx(9.0)

    def test_opposite_sign_pixel(self):
        blind, visible, target = t([[[[1.0]]]]), t([[[[-1.0]]]]), t([[[[0.0]]]])
        lam = 2.0
        assert casewise_expansion(blind, visible, target, lam) == pytest.approx(9.0)
        assert loss_case_b(blind, visible, target, lam).item() == pytest.approx(9.0)

    def test_case_a_matches_when_signs_agree(self):
        y = rand((1, 1, 4, 4), 16)
        d = np.abs(rand((1, 1, 4, 4), 17))
        e = np.abs(rand((1, 1, 4, 4), 18))
        blind, visible, target = t(y + d), t(y + e), t(y)
        lam = 2.0
        assert casewise_expansion(blind, visible, target, lam) == pytest.approx(
            loss_case_a(blind, visible, target, lam).item(), rel=1e-5
        )

    def test_case_b_matches_when_signs_oppose(self):
        y = rand((1, 1, 4, 4), 19)
        d = np.abs(rand((1, 1, 4, 4), 20)) + 0.01
        e = np.abs(rand((1, 1, 4, 4), 21)) + 0.01
        blind, visible, target = t(y + d), t(y - e), t(y)
        lam = 2.0
        assert casewise_expansion(blind, visible, target, lam) == pytest.approx(
            loss_case_b(blind, visible, target, lam).item(), rel=1e-5
        )

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000),
           lam=st.sampled_from([1.0, 2.0, 20.0]))
    def test_sign_dispatch_identity(self, seed, lam):
        rng = np.random.default_rng(seed)
        b = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        v = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        y = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        d1, d2 = b - y, v - y
        case_a = (b + lam * v - (lam + 1) * y) ** 2
        case_b = (v - b + (lam - 1) * (v - y)) ** 2
        mixed = float(np.mean(np.where(d1 * d2 >= 0, case_a, case_b)))
        value = casewise_expansion(t(b), t(v), t(y), lam)
        assert value == pytest.approx(mixed, rel=1e-5)


class TestWeightedCombination:
    def test_large_lambda_limit(self):
        blind, visible = t(rand((1, 1, 4, 4), 22)), t(rand((1, 1, 4, 4), 23))
        out = weighted_combination(blind, visible, 1e6)
        np.testing.assert_allclose(out.data, visible.data, atol=1e-4)

    def test_unit_lambda_is_midpoint(self):
        blind, visible = t(rand((1, 1, 4, 4), 24)), t(rand((1, 1, 4, 4), 25))
        out = weighted_combination(blind, visible, 1.0)
        np.testing.assert_allclose(out.data, (blind.data + visible.data) / 2, atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000),
           lam=st.floats(min_value=0.01, max_value=1e5))
    def test_pixelwise_between_inputs(self, seed, lam):
        rng = np.random.default_rng(seed)
        b = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
        v = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
        out = weighted_combination(t(b), t(v), lam).data
        lo = np.minimum(b, v) - 1e-6
        hi = np.maximum(b, v) + 1e-6
        assert (out >= lo).all() and (out <= hi).all()

    def test_nonpositive_lambda_rejected(self):
        x = t(rand((1, 1, 2, 2), 26))
        with pytest.raises(ConfigError):
            weighted_combination(x, x, 0.0)
