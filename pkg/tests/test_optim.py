import numpy as np
import pytest

from pivotgen.model import Parameters
from pivotgen.optim import AdamW, GradientError
from pivotgen.tensor import mul, sum_


def single_param(values) -> Parameters:
    p = Parameters()
    p.add("w", np.asarray(values, dtype=np.float32))
    return p


def test_zero_gradients_without_decay_leave_parameters_unchanged():
    p = single_param([0.5, -0.25, 1.0])
    p["w"].grad = np.zeros(3, dtype=np.float32)
    before = p["w"].data.copy()
    AdamW(p, weight_decay=0.0).step()
    np.testing.assert_array_equal(p["w"].data, before)


def test_missing_gradient_skips_update():
    p = single_param([1.0])
    before = p["w"].data.copy()
    AdamW(p).step()
    np.testing.assert_array_equal(p["w"].data, before)


def test_warmup_schedule_shape():
    p = single_param([1.0])
    opt = AdamW(p, lr=3e-4, warmup_steps=100)
    assert opt.lr_at(1) == pytest.approx(3e-4 / 100)
    assert opt.lr_at(50) == pytest.approx(3e-4 / 2)
    assert opt.lr_at(100) == pytest.approx(3e-4)
    assert opt.lr_at(5000) == pytest.approx(3e-4)  # constant after warmup


def test_quadratic_bowl_converges_within_500_steps():
    p = single_param([0.05, -0.05, 0.05, -0.05])
    opt = AdamW(p)  # default lr 3e-4, warmup 100
    for _ in range(500):
        loss = sum_(mul(p["w"], p["w"]))
        p.zero_grad()
        loss.backward()
        opt.step()
    assert np.linalg.norm(p["w"].data) <= 1e-2


def test_nan_gradient_aborts_step_before_mutation():
    p = single_param([1.0, 2.0])
    p.add("v", np.array([3.0], dtype=np.float32))
    p["w"].grad = np.array([0.1, np.nan], dtype=np.float32)
    p["v"].grad = np.array([0.1], dtype=np.float32)
    before_w = p["w"].data.copy()
    before_v = p["v"].data.copy()
    opt = AdamW(p)
    with pytest.raises(GradientError, match="w"):
        opt.step()
    np.testing.assert_array_equal(p["w"].data, before_w)
    np.testing.assert_array_equal(p["v"].data, before_v)
    assert opt.step_count == 0


def test_frozen_parameters_never_move():
    p = single_param([1.0, -1.0])
    p.add("frozen.w", np.array([2.0], dtype=np.float32))
    p.freeze("frozen.")
    frozen_before = p["frozen.w"].data.copy()
    opt = AdamW(p)
    for _ in range(10):
        loss = sum_(mul(p["w"], p["w"]))
        p.zero_grad()
        loss.backward()
        opt.step()
    np.testing.assert_array_equal(p["frozen.w"].data, frozen_before)
    assert not np.array_equal(p["w"].data, np.array([1.0, -1.0], dtype=np.float32))


def test_weight_decay_is_decoupled():
    """With zero gradient, decay shrinks weights multiplicatively by
    lr * wd each step, independent of the moment estimates."""
    p = single_param([1.0])
    p["w"].grad = np.zeros(1, dtype=np.float32)
    opt = AdamW(p, lr=0.1, warmup_steps=0, weight_decay=0.5)
    opt.step()
    np.testing.assert_allclose(p["w"].data, [1.0 - 0.1 * 0.5], atol=1e-6)


def test_bad_hyperparameters_rejected():
    with pytest.raises(ValueError):
        AdamW(single_param([1.0]), lr=0.0)
