"""Loss identities, oracles, and metric behavior."""

import numpy as np
import pytest

from actionflow.errors import ShapeError
from actionflow.gradcheck import grad_check, max_error
from actionflow.losses import (
    FlowField,
    LossWeights,
    accuracy,
    cross_entropy,
    epe,
    multiframe_epe,
    multiscale_epe,
    multitask_loss,
    per_class_accuracy,
    resample_flow,
    softmax,
)
from actionflow.tensor import Parameter, Tensor, backward


def scalar_loop_epe(pred, gt):
    total = 0.0
    for i in range(pred.shape[1]):
        for j in range(pred.shape[2]):
            du = pred[0, i, j] - gt[0, i, j]
            dv = pred[1, i, j] - gt[1, i, j]
            total += np.sqrt(du * du + dv * dv)
    return total


def test_epe_identical_fields_zero():
    f = np.random.default_rng(0).standard_normal((2, 4, 4))
    assert epe(f, f.copy()).item() == 0.0


def test_epe_three_four_five():
    gt = np.array([[[3.0]], [[4.0]]])
    pred = np.zeros((2, 1, 1))
    assert epe(pred, gt).item() == pytest.approx(5.0)


def test_epe_matches_scalar_loop_oracle():
    rng = np.random.default_rng(1)
    pred = rng.standard_normal((2, 5, 5))
    gt = rng.standard_normal((2, 5, 5))
    assert epe(pred, gt).item() == pytest.approx(scalar_loop_epe(pred, gt), abs=1e-6)
    assert epe(pred, gt, "mean").item() == pytest.approx(scalar_loop_epe(pred, gt) / 25.0, abs=1e-8)


def test_epe_shape_mismatch():
    with pytest.raises(ShapeError):
        epe(np.zeros((2, 3, 3)), np.zeros((2, 4, 4)))


def test_epe_symmetry_and_nonnegativity():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a = rng.standard_normal((2, 6, 6))
        b = rng.standard_normal((2, 6, 6))
        ab = epe(a, b).item()
        assert ab >= 0
        assert ab == pytest.approx(epe(b, a).item(), rel=1e-12)
    # identity of indiscernibles
    assert epe(a, a.copy()).item() == 0.0
    assert epe(a, a + 1e-3).item() > 0


def test_multiframe_epe_additivity():
    gt = [np.zeros((2, 1, 1)), np.zeros((2, 1, 1))]
    preds = [np.array([[[3.0]], [[4.0]]]), np.array([[[0.0]], [[7.0]]])]
    assert multiframe_epe(preds, gt, "sum").item() == pytest.approx(12.0)
    assert multiframe_epe([g.copy() for g in gt], gt, "sum").item() == 0.0


def test_multiframe_epe_equals_sum_of_epe():
    rng = np.random.default_rng(3)
    preds = [rng.standard_normal((2, 4, 4)) for _ in range(3)]
    gts = [rng.standard_normal((2, 4, 4)) for _ in range(3)]
    total = sum(epe(p, g).item() for p, g in zip(preds, gts))
    assert multiframe_epe(preds, gts, "sum").item() == pytest.approx(total, rel=1e-6)


def test_multiframe_epe_length_mismatch():
    with pytest.raises(ShapeError):
        multiframe_epe([np.zeros((2, 2, 2))], [np.zeros((2, 2, 2))] * 2)


def test_multiscale_alpha_masks_to_finest():
    rng = np.random.default_rng(4)
    gt = rng.standard_normal((1, 2, 16, 16)).astype(np.float32)
    preds = [Tensor(rng.standard_normal((1, 2, 16 // d, 16 // d)).astype(np.float32)) for d in (4, 8, 16, 16)]
    masked = multiscale_epe(preds, gt, alpha=(1, 0, 0, 0)).item()
    finest = epe(preds[0], resample_flow(gt, out_hw=(4, 4)), "mean").item()
    assert masked == pytest.approx(finest, rel=1e-6)


def test_multiscale_exact_predictions_zero():
    gt = np.random.default_rng(5).standard_normal((1, 2, 8, 8)).astype(np.float32)
    preds = [Tensor(resample_flow(gt, out_hw=(8 // d, 8 // d))) for d in (1, 2, 4, 8)]
    assert multiscale_epe(preds, gt).item() == pytest.approx(0.0, abs=1e-7)


def test_multiscale_matches_per_scale_loop():
    rng = np.random.default_rng(6)
    gt = rng.standard_normal((1, 2, 16, 16)).astype(np.float32)
    preds = [Tensor(rng.standard_normal((1, 2, 16 // d, 16 // d)).astype(np.float32)) for d in (4, 8, 16, 16)]
    alpha = (0.5, 1.0, 2.0, 0.25)
    total = 0.0
    for p, a in zip(preds, alpha):
        gtr = resample_flow(gt, out_hw=p.shape[-2:])
        total += a * epe(p, gtr, "mean").item()
    assert multiscale_epe(preds, gt, alpha).item() == pytest.approx(total, rel=1e-5)


def test_resample_constant_flow():
    flow = np.zeros((2, 8, 8), dtype=np.float32)
    flow[0] = 4.0
    out = resample_flow(flow, scale=0.25)
    assert out.shape == (2, 2, 2)
    assert np.allclose(out[0], 1.0) and np.allclose(out[1], 0.0)


def test_resample_scale_one_identity():
    flow = np.random.default_rng(7).standard_normal((2, 6, 6))
    assert np.allclose(resample_flow(flow, scale=1.0), flow)


def test_resample_linear_ramp_analytic():
    h = w = 16
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    flow = np.stack([0.5 * xs + 0.1 * ys, -0.2 * xs + 0.3 * ys])
    s = 0.5
    out = resample_flow(flow, scale=s)
    oh, ow = out.shape[-2:]
    oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    src_y = (oy + 0.5) / s - 0.5
    src_x = (ox + 0.5) / s - 0.5
    expect_u = (0.5 * src_x + 0.1 * src_y) * s
    expect_v = (-0.2 * src_x + 0.3 * src_y) * s
    assert np.abs(out[0] - expect_u).max() < 1e-5
    assert np.abs(out[1] - expect_v).max() < 1e-5


def test_resample_halving_twice_close_to_quarter():
    rng = np.random.default_rng(8)
    base = rng.standard_normal((2, 4, 4))
    smooth = resample_flow(base, out_hw=(32, 32))  # upsample -> smooth field
    twice = resample_flow(resample_flow(smooth, scale=0.5), scale=0.5)
    once = resample_flow(smooth, scale=0.25)
    assert np.abs(twice - once).max() < 1e-4 * max(1.0, np.abs(once).max())


def test_resample_degenerate_target_rejected():
    with pytest.raises(ShapeError):
        resample_flow(np.zeros((2, 4, 4)), scale=0.01)


def test_cross_entropy_uniform_logits():
    k = 7
    loss = cross_entropy(Tensor(np.zeros(k)), 3)
    assert loss.item() == pytest.approx(np.log(k))


def test_cross_entropy_monotone_in_margin():
    losses = []
    for margin in (0.0, 1.0, 5.0, 20.0):
        logits = np.zeros(4)
        logits[1] = margin
        losses.append(cross_entropy(Tensor(logits), 1).item())
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-6


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(9)
    logits = Parameter(rng.standard_normal(5), "logits")
    backward(cross_entropy(logits, 2))
    expect = softmax(logits.data)
    expect[2] -= 1.0
    assert np.allclose(logits.grad, expect, atol=1e-12)
    # and FD agrees
    assert max_error(grad_check(lambda: cross_entropy(logits, 2), [logits])) < 1e-6


def test_cross_entropy_out_of_range_label():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros(3)), 5)


def test_multitask_lambda_zero_is_exactly_cross_entropy():
    ce = cross_entropy(Tensor(np.array([0.2, -0.1, 0.5])), 0)
    assert multitask_loss(ce, None, 0.0) is ce
    flow = Tensor(np.array(3.0))
    assert multitask_loss(ce, flow, 0.0) is ce


def test_multitask_arithmetic():
    assert multitask_loss(Tensor(np.array(2.0)), Tensor(np.array(3.0)), 1.0).item() == pytest.approx(5.0)


def test_multitask_monotone_in_lambda():
    ce = Tensor(np.array(1.0))
    flow = Tensor(np.array(2.5))
    vals = [multitask_loss(ce, flow, lam).item() for lam in (0.0, 0.5, 1.0, 2.0)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_multitask_gradient_scales_linearly_with_lambda():
    rng = np.random.default_rng(10)
    norms = {}
    for lam in (1.0, 2.0):
        w = Parameter(rng.standard_normal((2, 3, 3)).copy() if lam == 1.0 else norms["w0"].copy(), "w")
        if lam == 1.0:
            norms["w0"] = w.data.copy()
        gt = Tensor(np.zeros((2, 3, 3)))
        flow_term = epe(w, gt, "mean")
        ce = cross_entropy(Tensor(np.array([0.1, 0.2])), 0)
        backward(multitask_loss(ce, flow_term, lam))
        norms[lam] = np.abs(w.grad).sum()
    assert norms[2.0] == pytest.approx(2.0 * norms[1.0], rel=1e-6)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lam=-1.0)
    lw = LossWeights()
    assert lw.alpha == (1.0, 1.0, 1.0, 1.0)


def test_flow_field_type():
    arr = np.random.default_rng(11).standard_normal((2, 4, 5)).astype(np.float32)
    f = FlowField.from_array(arr)
    assert f.shape == (4, 5)
    assert np.array_equal(f.to_array(), arr)
    with pytest.raises(ValueError):
        FlowField(np.array([[np.inf]]), np.array([[0.0]]))


def test_accuracy_all_correct_and_empty():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    with pytest.raises(ValueError):
        accuracy([], [])


def test_per_class_accuracy_partition_identity():
    rng = np.random.default_rng(12)
    labels = rng.integers(0, 4, 200)
    preds = rng.integers(0, 4, 200)
    per = per_class_accuracy(preds, labels, 4)
    counts = np.bincount(labels, minlength=4)
    weighted = np.nansum(per * counts) / counts.sum()
    assert weighted == pytest.approx(accuracy(preds, labels))


def test_random_predictions_hit_chance_rate():
    rng = np.random.default_rng(13)
    k, n = 8, 20000
    preds = rng.integers(0, k, n)
    labels = rng.integers(0, k, n)
    acc = accuracy(preds, labels)
    p = 1.0 / k
    sigma = np.sqrt(p * (1 - p) / n)
    assert abs(acc - p) < 3 * sigma


def test_epe_gradient_check():
    rng = np.random.default_rng(14)
    pred = Parameter(rng.standard_normal((2, 4, 4)), "pred")
    gt = Tensor(rng.standard_normal((2, 4, 4)))
    assert max_error(grad_check(lambda: epe(pred, gt, "mean"), [pred])) < 1e-6
