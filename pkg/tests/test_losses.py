import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cossqformer import numkit as nk
from cossqformer.losses import LossConfig, hybrid_loss, mse, soft_dtw
from cossqformer.numkit import ComputationTape, ShapeError, Tensor, backward, gradcheck

from oracles import hard_dtw, mse_loop, soft_dtw_loop


def _grad(fn, y, yh):
    ty, tyh = Tensor(y, requires_grad=True), Tensor(yh, requires_grad=True)
    with ComputationTape() as tape:
        out = fn(ty, tyh)
    backward(out, tape)
    return out.item(), ty.grad, tyh.grad


class TestMSE:
    def test_identical(self):
        assert mse(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() == 0.0

    def test_ones(self):
        assert mse(Tensor([0.0, 0.0]), Tensor([1.0, 1.0])).item() == 1.0

    def test_scalar_loop(self):
        rng = np.random.default_rng(0)
        y, yh = rng.normal(size=8), rng.normal(size=8)
        assert abs(mse(Tensor(y), Tensor(yh)).item() - mse_loop(y.tolist(), yh.tolist())) < 1e-14

    def test_gradient_formula(self):
        rng = np.random.default_rng(1)
        y, yh = rng.normal(size=5), rng.normal(size=5)
        _, _, g = _grad(mse, y, yh)
        np.testing.assert_allclose(g, 2 * (yh - y) / 5, rtol=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            mse(Tensor([1.0]), Tensor([1.0, 2.0]))


class TestSoftDTW:
    def test_single_cell(self):
        assert soft_dtw(Tensor([2.0]), Tensor([5.0]), 0.7).item() == 9.0

    def test_matches_scalar_dp(self):
        rng = np.random.default_rng(2)
        for gamma in (0.01, 0.1, 1.0, 3.0):
            y, yh = rng.normal(size=6), rng.normal(size=4)
            ref = soft_dtw_loop(y.tolist(), yh.tolist(), gamma)
            assert abs(soft_dtw(Tensor(y), Tensor(yh), gamma).item() - ref) < 1e-12 * max(1.0, abs(ref))

    def test_hard_limit(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            y, yh = rng.normal(size=5), rng.normal(size=5)
            assert abs(soft_dtw(Tensor(y), Tensor(yh), 1e-3).item() - hard_dtw(y.tolist(), yh.tolist())) < 1e-2

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            y, yh = rng.normal(size=6), rng.normal(size=6)
            errs = gradcheck(lambda a, b: soft_dtw(a, b, 1.0), [Tensor(y), Tensor(yh)])
            assert max(errs) < 1e-4, errs

    def test_unequal_lengths_gradient(self):
        rng = np.random.default_rng(5)
        errs = gradcheck(lambda a, b: soft_dtw(a, b, 0.5), [Tensor(rng.normal(size=7)), Tensor(rng.normal(size=3))])
        assert max(errs) < 1e-4

    def test_order_sensitive(self):
        rng = np.random.default_rng(6)
        y, yh = rng.normal(size=6), rng.normal(size=6)
        assert abs(soft_dtw(Tensor(y), Tensor(yh)).item() - soft_dtw(Tensor(y), Tensor(yh[::-1].copy())).item()) > 1e-6

    def test_can_be_negative(self):
        assert soft_dtw(Tensor([0.0, 0.0]), Tensor([0.0, 0.0]), 1.0).item() < 0.0

    def test_bad_gamma(self):
        for g in (0.0, -1.0):
            with pytest.raises(ValueError):
                soft_dtw(Tensor([1.0]), Tensor([1.0]), g)

    def test_empty(self):
        with pytest.raises(ShapeError):
            soft_dtw(Tensor(np.zeros(0)), Tensor([1.0]))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=1, max_size=6),
    st.lists(st.floats(-10, 10), min_size=1, max_size=6),
)
def test_soft_dtw_monotone_in_gamma_and_below_hard(y, yh):
    hard = hard_dtw(y, yh)
    vals = [soft_dtw(Tensor(y), Tensor(yh), g).item() for g in (0.01, 0.1, 1.0)]
    tol = 1e-9 * max(1.0, hard)
    assert vals[0] >= vals[1] - tol >= vals[2] - 2 * tol
    assert all(v <= hard + tol for v in vals)


class TestHybrid:
    def test_lambda_zero_is_mse(self):
        rng = np.random.default_rng(7)
        y, yh = Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6))
        assert hybrid_loss(y, yh, LossConfig(lam=0.0)).item() == mse(y, yh).item()

    def test_single_equal_point(self):
        assert hybrid_loss(Tensor([3.0]), Tensor([3.0]), LossConfig(0.5)).item() == 0.0

    def test_component_recomputation(self):
        rng = np.random.default_rng(8)
        y, yh = rng.normal(size=6), rng.normal(size=6)
        ref = mse_loop(y.tolist(), yh.tolist()) + 0.5 * soft_dtw_loop(y.tolist(), yh.tolist(), 1.0)
        assert abs(hybrid_loss(Tensor(y), Tensor(yh)).item() - ref) < 1e-12

    def test_gradient_is_sum_of_components(self):
        rng = np.random.default_rng(9)
        y, yh = rng.normal(size=6), rng.normal(size=6)
        _, gy_h, gyh_h = _grad(lambda a, b: hybrid_loss(a, b, LossConfig(0.5, 1.0)), y, yh)
        _, gy_m, gyh_m = _grad(mse, y, yh)
        _, gy_s, gyh_s = _grad(lambda a, b: soft_dtw(a, b, 1.0), y, yh)
        np.testing.assert_allclose(gy_h, gy_m + 0.5 * gy_s, atol=1e-12, rtol=0)
        np.testing.assert_allclose(gyh_h, gyh_m + 0.5 * gyh_s, atol=1e-12, rtol=0)

    def test_gradcheck(self):
        rng = np.random.default_rng(10)
        errs = gradcheck(lambda a, b: hybrid_loss(a, b), [Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6))])
        assert max(errs) < 1e-4

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(lam=-0.1)
        with pytest.raises(ValueError):
            LossConfig(gamma=0.0)

    def test_column_input_accepted(self):
        y = nk.reshape(Tensor([1.0, 2.0]), (2, 1))
        assert hybrid_loss(y, Tensor([1.0, 2.0])).item() == pytest.approx(0.5 * soft_dtw(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item())
