"""Acceptance criteria, one test per criterion.

Heavy experiments (real desk-scale training) cache their artifacts under
.afn_cache/ via the ``acache`` fixture; delete that directory to retrain
from scratch. Each test records a PASS/FAIL line that pytest prints in
the terminal summary.

Desk-scale profile used throughout: 64x64 frames, width multiplier 1/4,
T=8 for multi-frame clips, 8 motion-defined classes, batch 16, lr 1e-4.
"""

import time

import numpy as np
import pytest

from actionflow import rng as rngmod
from actionflow.checkpoint import load_model, save_checkpoint, load_checkpoint
from actionflow.errors import FormatError, ShapeError
from actionflow.evaluation import EvalProtocol, evaluate, future_prediction_eval, occlusion_map
from actionflow.gradcheck import grad_check, max_error
from actionflow.layers import (
    BasicBlock2d,
    BasicBlock3d,
    batchnorm,
    conv2d,
    conv3d,
    deconv2d,
    deconv3d,
    dropout,
    global_avg_pool,
    linear,
    maxpool2d,
)
from actionflow.losses import cross_entropy, epe, multiframe_epe, multiscale_epe, multitask_loss, resample_flow
from actionflow.models import Model, ModelSpec, build, build_stacked, strip_decoder, trace_shapes
from actionflow.synthdata import (
    AugmentPolicy,
    MOTION_CLASSES,
    displacement_profile,
    generate_dataset,
    object_mask,
    render_frame,
    valid_warp_mask,
)
from actionflow.imageops import warp_backward
from actionflow.tensor import Parameter, Tensor, no_grad, reduce_sum
from actionflow.trainer import TrainConfig, clip_pair_input, eval_flow, init_from_flow_state, train

from conftest import record_acceptance

RES = 64
T_FRAMES = 8
WIDTH = 0.25
CLASSES = 8
SEEDS = (0, 1, 2)

FLOW_ITERS = 2000  # pinned by the flow-learnability criterion
CLS_ITERS = 1500
FT_ITERS = 800
STACKED_ITERS = 1000
BATCH = 16
LR = 1e-4

PROTOCOL = EvalProtocol(segments=25, crops=10, crop_scale=0.875, seed=0)


# ---------------------------------------------------------------------------
# shared datasets and trained models


@pytest.fixture(scope="session")
def action_ds(acache):
    dist = displacement_profile("small", height=RES, width=RES, frames=T_FRAMES)
    return acache.dataset("action_small", lambda: generate_dataset(500, dist, (800, 160, 160)))


@pytest.fixture(scope="session")
def matched_ds(acache):
    dist = displacement_profile("matched", height=RES, width=RES, frames=2)
    return acache.dataset("flow_matched", lambda: generate_dataset(600, dist, (800, 160, 160)))


@pytest.fixture(scope="session")
def large_ds(acache):
    dist = displacement_profile("large", height=RES, width=RES, frames=2)
    return acache.dataset("flow_large", lambda: generate_dataset(700, dist, (800, 160, 160)))


def _flow_cfg(seed, iters=FLOW_ITERS):
    return TrainConfig(
        regime="flow-only", iterations=iters, batch_size=BATCH, lr=LR,
        eval_interval=500, eval_clips=64, augment_policy=AugmentPolicy(hflip=True), seed=seed,
    )


def _flow_spec():
    return ModelSpec("flownet2f", (6, RES, RES), WIDTH, CLASSES)


def _train_flow(ds, seed):
    model = build(_flow_spec(), seed=seed)
    train(model, ds, _flow_cfg(seed))
    return model


@pytest.fixture(scope="session")
def matched_flow_states(acache, matched_ds):
    out = {}
    for seed in SEEDS:
        spec_json, state = acache.model_state(
            f"flow2f_matched_s{seed}", _flow_spec().to_json(), lambda s=seed: _train_flow(matched_ds, s)
        )
        out[seed] = state
    return out


@pytest.fixture(scope="session")
def large_flow_states(acache, large_ds):
    out = {}
    for seed in SEEDS:
        spec_json, state = acache.model_state(
            f"flow2f_large_s{seed}", _flow_spec().to_json(), lambda s=seed: _train_flow(large_ds, s)
        )
        out[seed] = state
    return out


def _cls_cfg(seed, lam, iters=CLS_ITERS, regime="multitask"):
    return TrainConfig(
        regime=regime, iterations=iters, batch_size=BATCH, lr=LR, lam=lam,
        eval_interval=500, eval_clips=64, augment_policy=AugmentPolicy(hflip=True), seed=seed,
    )


@pytest.fixture(scope="session")
def multitask_states(acache, action_ds):
    spec = ModelSpec("actionflownet2f", (6, RES, RES), WIDTH, CLASSES)

    def builder(seed):
        model = build(spec, seed=seed)
        train(model, action_ds, _cls_cfg(seed, lam=1.0))
        return model

    return {
        seed: acache.model_state(f"afn2f_s{seed}", spec.to_json(), lambda s=seed: builder(s))[1]
        for seed in SEEDS
    }


@pytest.fixture(scope="session")
def scratch_states(acache, action_ds):
    spec = ModelSpec("scratch2f", (6, RES, RES), WIDTH, CLASSES)

    def builder(seed):
        model = build(spec, seed=seed)
        train(model, action_ds, _cls_cfg(seed, lam=0.0))
        return model

    return {
        seed: acache.model_state(f"scratch2f_s{seed}", spec.to_json(), lambda s=seed: builder(s))[1]
        for seed in SEEDS
    }


def _restore(spec: ModelSpec, state, seed=0) -> Model:
    model = build(spec, seed=seed)
    model.load_state_dict(state, strict=False)
    return model


def _protocol_accuracy(acache, tag, model, clips):
    return acache.result(tag, lambda: evaluate(model, clips, PROTOCOL).accuracy)


# ---------------------------------------------------------------------------
# C1: gradient correctness for every layer and every composite loss


def test_c01_gradient_correctness():
    t0 = time.time()
    worst = {}
    rng = np.random.default_rng(0)

    def check(name, build_loss, params, max_entries=None):
        rep = grad_check(build_loss, params, step=1e-4, max_entries=max_entries, rng=np.random.default_rng(1))
        worst[name] = max_error(rep)

    # individual layers
    x2 = Tensor(rng.standard_normal((2, 2, 6, 6)))
    w = Parameter(rng.standard_normal((3, 2, 3, 3)) * 0.5, "w")
    b = Parameter(rng.standard_normal(3) * 0.1, "b")
    check("conv2d", lambda: reduce_sum(conv2d(x2, w, b, (2, 2), (1, 1)) * 0.3), [w, b])

    x3 = Tensor(rng.standard_normal((1, 2, 4, 4, 4)))
    w3 = Parameter(rng.standard_normal((2, 2, 3, 3, 3)) * 0.5, "w3")
    check("conv3d", lambda: reduce_sum(conv3d(x3, w3, None, (2, 2, 2), (1, 1, 1)) * 0.3), [w3])

    wd = Parameter(rng.standard_normal((2, 3, 4, 4)) * 0.5, "wd")
    xd = Tensor(rng.standard_normal((1, 2, 4, 4)))
    check("deconv2d", lambda: reduce_sum(deconv2d(xd, wd, (2, 2), (1, 1)) * 0.3), [wd])

    wd3 = Parameter(rng.standard_normal((2, 2, 4, 4, 4)) * 0.3, "wd3")
    xd3 = Tensor(rng.standard_normal((1, 2, 3, 3, 3)))
    check("deconv3d", lambda: reduce_sum(deconv3d(xd3, wd3, (2, 2, 2), (1, 1, 1)) * 0.3), [wd3])

    xb = Parameter(rng.standard_normal((4, 3, 4, 4)), "xb")
    gb = Parameter(rng.standard_normal(3) + 1.5, "gb")
    bb = Parameter(rng.standard_normal(3), "bb")
    readout = Tensor(rng.standard_normal((4, 3, 4, 4)))
    rm, rv = np.zeros(3), np.ones(3)
    check("batchnorm", lambda: reduce_sum(batchnorm(xb, gb, bb, rm, rv, "train") * readout), [xb, gb, bb])

    xp = Parameter(rng.standard_normal((1, 2, 6, 6)), "xp")
    check("maxpool", lambda: reduce_sum(maxpool2d(xp, 3, 2, 1) * 0.5), [xp])

    wl = Parameter(rng.standard_normal((4, 3)) * 0.5, "wl")
    bl = Parameter(rng.standard_normal(4) * 0.1, "bl")
    xl = Tensor(rng.standard_normal((5, 3)))
    check("linear", lambda: reduce_sum(linear(xl, wl, bl) * 0.3), [wl, bl])

    xg = Parameter(rng.standard_normal((2, 3, 4, 4)), "xg")
    check("global_avg_pool", lambda: reduce_sum(global_avg_pool(xg) * 2.0), [xg])

    xdr = Parameter(rng.standard_normal((4, 4)), "xdr")
    check(
        "dropout",
        lambda: reduce_sum(dropout(xdr, 0.4, "train", np.random.default_rng(7)) * 0.5),
        [xdr],
    )

    blk = BasicBlock2d("blk2", 2, 4, 2, use_bn=True, rng=np.random.default_rng(2), dtype=np.float64)
    xr = Tensor(rng.standard_normal((2, 2, 6, 6)))
    ro = Tensor(rng.standard_normal((2, 4, 3, 3)))
    check("residual2d", lambda: reduce_sum(blk(xr, "train") * ro), blk.params())

    blk3 = BasicBlock3d("blk3", 2, 3, (2, 2, 2), use_bn=True, rng=np.random.default_rng(3), dtype=np.float64)
    xr3 = Tensor(rng.standard_normal((1, 2, 4, 4, 4)))
    ro3 = Tensor(rng.standard_normal((1, 3, 2, 2, 2)))
    check("residual3d", lambda: reduce_sum(blk3(xr3, "train") * ro3), blk3.params())

    # composite losses through tiny double-precision models (width 1/16,
    # 32x32 inputs: the smallest size the stride-32 encoder accepts; batch
    # 2 so batch norm over the 1x1 group-4 map is not degenerate). A relu
    # kink landing within the FD step of a sampled entry corrupts that
    # estimate without any backward bug, so a failed check redraws the
    # random input: real gradient bugs are systematic across draws.
    def check_with_redraw(name, make_loss, params, max_entries, draws=3):
        for draw in range(draws):
            rep = grad_check(
                make_loss(draw), params, step=1e-4, max_entries=max_entries,
                rng=np.random.default_rng(100 + draw),
            )
            worst[name] = max_error(rep)
            if worst[name] < 1e-5:
                return
    tiny2f = ModelSpec("actionflownet2f", (6, 32, 32), 1 / 16, 4)
    m2f = build(tiny2f, seed=5, dtype=np.float64)
    params_2f = list(m2f.named_params().values())

    def make_2f_flow(draw):
        r = np.random.default_rng(200 + draw)
        x_in = r.standard_normal((2, 6, 32, 32))
        gt_flow = r.standard_normal((2, 2, 32, 32))

        def loss():
            flows = m2f.forward_flow(x_in, mode="train")
            return multiscale_epe(flows, gt_flow, (1.0, 0.8, 0.6, 0.4), "mean")

        return loss

    def make_2f_multitask(draw):
        r = np.random.default_rng(300 + draw)
        x_in = r.standard_normal((2, 6, 32, 32))
        gt_flow = r.standard_normal((2, 2, 32, 32))
        labels = np.array([1, 3])

        def loss():
            logits, flows = m2f.forward(x_in, mode="train", rng=np.random.default_rng(11))
            return multitask_loss(
                cross_entropy(logits, labels), multiscale_epe(flows, gt_flow, mode="mean"), 0.7
            )

        return loss

    check_with_redraw("loss_multiscale_2f", make_2f_flow, params_2f, max_entries=4)
    check_with_redraw("loss_multitask_2f", make_2f_multitask, params_2f, max_entries=4)

    tiny3d = ModelSpec("actionflownet3d", (3, 8, 32, 32), 1 / 16, 4)
    m3d = build(tiny3d, seed=6, dtype=np.float64)
    params_3d = list(m3d.named_params().values())

    def make_3d_flow(draw):
        r = np.random.default_rng(400 + draw)
        x3_in = r.standard_normal((2, 3, 8, 32, 32))
        gt3 = r.standard_normal((2, 2, 8, 8, 8))

        def loss():
            flow = m3d.forward_flow(x3_in, mode="train")
            return epe(flow, Tensor(gt3), "mean")

        return loss

    def make_3d_multitask(draw):
        r = np.random.default_rng(500 + draw)
        x3_in = r.standard_normal((2, 3, 8, 32, 32))
        gt3 = r.standard_normal((2, 2, 8, 8, 8))
        lab3 = np.array([2, 0])

        def loss():
            logits, flow = m3d.forward(x3_in, mode="train", rng=np.random.default_rng(12))
            return multitask_loss(cross_entropy(logits, lab3), epe(flow, Tensor(gt3), "mean"), 0.7)

        return loss

    check_with_redraw("loss_multiframe_3d", make_3d_flow, params_3d, max_entries=2)
    check_with_redraw("loss_multitask_3d", make_3d_multitask, params_3d, max_entries=2)

    elapsed = time.time() - t0
    bad = {k: v for k, v in worst.items() if v >= 1e-5}
    ok = not bad and elapsed < 300
    record_acceptance(1, "gradient correctness", ok,
                      f"max rel err {max(worst.values()):.2e} over {len(worst)} checks, {elapsed:.0f}s")
    assert not bad, f"gradient checks failed: {bad}"
    assert elapsed < 300


# ---------------------------------------------------------------------------
# C2: convolution oracle equivalence on >= 50 random specs


def test_c02_conv_oracles():
    from test_layers import naive_conv2d, naive_conv3d, naive_deconv2d

    t0 = time.time()
    rng = np.random.default_rng(42)
    worst = 0.0
    trials = 0

    for _ in range(25):  # conv2d
        k = int(rng.integers(1, 5)); s = int(rng.integers(1, 3)); p = int(rng.integers(0, k))
        ci, co, n = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        h = int(rng.integers(k, 9))
        if h + 2 * p < k:
            continue
        x = rng.standard_normal((n, ci, h, h)); w = rng.standard_normal((co, ci, k, k)); b = rng.standard_normal(co)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), (s, s), (p, p)).data
        worst = max(worst, float(np.abs(out - naive_conv2d(x, w, b, (s, s), (p, p))).max()))
        trials += 1

    for _ in range(15):  # conv3d
        k = int(rng.integers(1, 4)); s = int(rng.integers(1, 3)); p = int(rng.integers(0, k))
        ci, co = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        t = h = int(rng.integers(k, 6))
        x = rng.standard_normal((1, ci, t, h, h)); w = rng.standard_normal((co, ci, k, k, k)); b = rng.standard_normal(co)
        out = conv3d(Tensor(x), Tensor(w), Tensor(b), (s,) * 3, (p,) * 3).data
        worst = max(worst, float(np.abs(out - naive_conv3d(x, w, b, (s,) * 3, (p,) * 3)).max()))
        trials += 1

    for _ in range(10):  # deconv2d vs direct scatter
        k = int(rng.integers(2, 5)); s = int(rng.integers(1, 3)); p = int(rng.integers(0, k - 1))
        ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        h = int(rng.integers(2, 6))
        oh = (h - 1) * s - 2 * p + k
        if oh < 1:
            continue
        x = rng.standard_normal((1, ci, h, h)); w = rng.standard_normal((ci, co, k, k))
        out = deconv2d(Tensor(x), Tensor(w), (s, s), (p, p)).data
        worst = max(worst, float(np.abs(out - naive_deconv2d(x, w, (s, s), (p, p), (oh, oh))).max()))
        trials += 1

    for _ in range(5):  # deconv3d via the conv3d adjoint identity
        k, s, p = 3, 2, 1
        ci, co = 2, 2
        t = h = 5
        x = rng.standard_normal((1, ci, t, h, h)); w = rng.standard_normal((co, ci, k, k, k))
        to = (t + 2 * p - k) // s + 1
        y = rng.standard_normal((1, co, to, to, to))
        lhs = float((conv3d(Tensor(x), Tensor(w), None, (s,) * 3, (p,) * 3).data * y).sum())
        rhs = float((deconv3d(Tensor(y), Tensor(w), (s,) * 3, (p,) * 3, out_thw=(t, h, h)).data * x).sum())
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
        trials += 1

    elapsed = time.time() - t0
    ok = worst < 1e-5 and trials >= 50 and elapsed < 120
    record_acceptance(2, "conv oracle equivalence", ok, f"{trials} specs, worst {worst:.2e}, {elapsed:.0f}s")
    assert trials >= 50
    assert worst < 1e-5
    assert elapsed < 120


# ---------------------------------------------------------------------------
# C3: shape contract


def test_c03_shape_contract():
    full = trace_shapes(ModelSpec("actionflownet3d", (3, 16, 224, 224), 1.0, 101))
    ok = full["encoder_out"] == (512, 2, 7, 7)

    full_2f = trace_shapes(ModelSpec("flownet2f", (6, 224, 224), 1.0, 101))
    ok &= full_2f["encoder_out"] == (512, 7, 7)

    desk = ModelSpec("actionflownet2f", (6, RES, RES), WIDTH, CLASSES)
    traced = trace_shapes(desk)
    model = build(desk, seed=0)
    x = np.random.default_rng(0).standard_normal((1, 6, RES, RES)).astype(np.float32)
    with no_grad():
        logits, flows = model.forward(x)
    ok &= tuple(f.shape[1:] for f in flows) == traced["flow_scales"]
    ok &= logits.shape == (1, CLASSES)

    try:
        build(ModelSpec("flownet2f", (6, 60, 60), WIDTH, CLASSES))
        ok = False
    except ShapeError:
        pass

    record_acceptance(3, "shape contract", ok, f"full-scale encoder {full['encoder_out']}")
    assert ok


# ---------------------------------------------------------------------------
# C4: loss identities


def test_c04_loss_identities():
    rng = np.random.default_rng(0)
    ce = cross_entropy(Tensor(rng.standard_normal(8)), 2)
    ok = multitask_loss(ce, None, 0.0) is ce

    gt = rng.standard_normal((1, 2, 16, 16)).astype(np.float32)
    preds = [Tensor(rng.standard_normal((1, 2, 16 // d, 16 // d)).astype(np.float32)) for d in (4, 8, 16, 16)]
    masked = multiscale_epe(preds, gt, (1, 0, 0, 0)).item()
    finest = epe(preds[0], resample_flow(gt, out_hw=(4, 4)), "mean").item()
    ok &= abs(masked - finest) < 1e-6 * max(1.0, abs(finest))

    pixel = epe(np.zeros((2, 1, 1)), np.array([[[3.0]], [[4.0]]])).item()
    ok &= abs(pixel - 5.0) < 1e-12

    record_acceptance(4, "loss identities", ok, f"epe((3,4),0)={pixel}")
    assert ok


# ---------------------------------------------------------------------------
# C5: synthetic-data warp consistency


def test_c05_warp_consistency(action_ds):
    t0 = time.time()
    clips = action_ds.train[:100]
    errs = []
    for clip in clips:
        frames = clip.frames_float()
        for t in range(clip.spec.frames - 1):
            valid = valid_warp_mask(clip.spec, t)
            if not valid.any():
                continue
            recon = warp_backward(frames[t + 1], clip.flows[t])
            errs.append(float(np.abs(recon - frames[t])[:, valid].mean()))
    mean_err = float(np.mean(errs))
    elapsed = time.time() - t0
    ok = mean_err < 0.02 and elapsed < 120
    record_acceptance(5, "warp consistency", ok, f"mean photometric error {mean_err:.4f} over {len(clips)} clips")
    assert mean_err < 0.02
    assert elapsed < 120


# ---------------------------------------------------------------------------
# C6: flow learnability


def test_c06_flow_learnability(acache, matched_ds, matched_flow_states):
    def ratios():
        out = {}
        mags = []
        for c in matched_ds.test:
            gt = resample_flow(c.flows[0], out_hw=(RES // 4, RES // 4))
            mags.append(float(np.hypot(gt[0], gt[1]).mean()))
        mean_mag = float(np.mean(mags))
        for seed, state in matched_flow_states.items():
            model = _restore(_flow_spec(), state)
            out[str(seed)] = eval_flow(model, matched_ds.test) / mean_mag
        out["mean_mag"] = mean_mag
        return out

    res = acache.result("c06_ratios", ratios)
    seed_ratios = {s: res[str(s)] for s in SEEDS}
    passing = sum(r < 0.25 for r in seed_ratios.values())
    ok = passing >= 2
    record_acceptance(6, "flow learnability", ok,
                      "EPE/|gt| per seed: " + ", ".join(f"{s}:{r:.3f}" for s, r in seed_ratios.items()))
    assert ok, f"ratios {seed_ratios} (need >=2 of 3 below 0.25)"


# ---------------------------------------------------------------------------
# C7: motion supervision helps recognition


def test_c07_motion_supervision_gap(acache, action_ds, multitask_states, scratch_states):
    mt_spec = ModelSpec("actionflownet2f", (6, RES, RES), WIDTH, CLASSES)
    sc_spec = ModelSpec("scratch2f", (6, RES, RES), WIDTH, CLASSES)
    mt_accs, sc_accs = [], []
    for seed in SEEDS:
        mt = _restore(mt_spec, multitask_states[seed])
        sc = _restore(sc_spec, scratch_states[seed])
        mt_accs.append(_protocol_accuracy(acache, f"c07_mt_acc_s{seed}", mt, action_ds.test))
        sc_accs.append(_protocol_accuracy(acache, f"c07_sc_acc_s{seed}", sc, action_ds.test))
    gap = float(np.mean(mt_accs) - np.mean(sc_accs))
    ok = gap >= 0.10
    record_acceptance(
        7, "motion supervision helps recognition", ok,
        f"multitask {np.mean(mt_accs):.3f} vs scratch {np.mean(sc_accs):.3f}, gap {gap * 100:+.1f}pp",
    )
    assert ok, f"multitask {mt_accs} scratch {sc_accs}"


# ---------------------------------------------------------------------------
# C8: forgetting ordering


def test_c08_forgetting_ordering(acache, action_ds, matched_ds, matched_flow_states):
    spec = ModelSpec("actionflownet2f", (6, RES, RES), WIDTH, CLASSES)

    def run(seed, regime, lam):
        src = matched_flow_states[seed]
        model = build(spec, seed=seed + 50)
        init_from_flow_state(model, src)
        epe0 = eval_flow(model, matched_ds.test)
        cfg = _cls_cfg(seed, lam=lam, iters=FT_ITERS, regime=regime)
        train(model, action_ds, cfg, source_state=src if regime == "finetune" else None)
        return epe0, eval_flow(model, matched_ds.test)

    def measure():
        rows = {}
        for seed in SEEDS:
            ft0, ft1 = run(seed, "finetune", 0.0)
            mt0, mt1 = run(seed, "multitask", 1.0)
            rows[str(seed)] = {"ft0": ft0, "ft1": ft1, "mt0": mt0, "mt1": mt1}
        return rows

    rows = acache.result("c08_forgetting", measure)
    ft_deg = [rows[str(s)]["ft1"] - rows[str(s)]["ft0"] for s in SEEDS]
    mt_deg = [rows[str(s)]["mt1"] - rows[str(s)]["mt0"] for s in SEEDS]
    ok = float(np.mean(ft_deg)) >= float(np.mean(mt_deg))
    record_acceptance(
        8, "forgetting ordering", ok,
        f"finetune degradation {np.mean(ft_deg):+.3f} vs multitask {np.mean(mt_deg):+.3f} (EPE)",
    )
    assert ok, rows


# ---------------------------------------------------------------------------
# C9: decoder-strip equivalence


def test_c09_strip_equivalence(multitask_states):
    spec = ModelSpec("actionflownet2f", (6, RES, RES), WIDTH, CLASSES)
    trained = _restore(spec, multitask_states[SEEDS[0]])
    fresh = build(spec, seed=123)
    rng = np.random.default_rng(9)
    ok = True
    for model in (trained, fresh):
        stripped = strip_decoder(model)
        x = rng.standard_normal((50, 6, RES, RES)).astype(np.float32)
        with no_grad():
            a = model.forward_action(x, mode="eval").data
            b = stripped.forward_action(x, mode="eval").data
        ok &= np.array_equal(a, b)
    record_acceptance(9, "decoder-strip equivalence", ok, "logits bit-identical on 100 inputs")
    assert ok


# ---------------------------------------------------------------------------
# C10: flow-quality inversion


def test_c10_flow_quality_inversion(acache, action_ds, large_ds, matched_flow_states, large_flow_states):
    def stacked_acc(tag, flow_state, seed):
        def builder():
            flow_model = _restore(_flow_spec(), flow_state)
            stacked = build_stacked(flow_model, CLASSES, seed=seed)
            cfg = TrainConfig(
                regime="stacked-classifier", iterations=STACKED_ITERS, batch_size=BATCH, lr=LR,
                eval_interval=500, eval_clips=64, augment_policy=AugmentPolicy(hflip=True), seed=seed,
            )
            train(stacked, action_ds, cfg)
            return stacked

        spec_json, state = acache.model_state(tag, "", builder)
        stacked = load_model_from_state(spec_json, state)
        return _protocol_accuracy(acache, f"{tag}_acc", stacked, action_ds.test)

    def load_model_from_state(spec_json, state):
        from actionflow.models import StackedModel

        spec = ModelSpec.from_json(spec_json)
        inner = build(ModelSpec("flownet2f", spec.input_size, spec.width_mult, spec.num_classes))
        stacked = StackedModel(inner, spec.num_classes)
        stacked.load_state_dict(state, strict=False)
        return stacked

    matched_accs, large_accs = [], []
    bench = {}
    for seed in SEEDS:
        matched_accs.append(stacked_acc(f"stacked_matched_s{seed}", matched_flow_states[seed], seed))
        large_accs.append(stacked_acc(f"stacked_large_s{seed}", large_flow_states[seed], seed))
    bench = acache.result(
        "c10_bench_epe",
        lambda: {
            "matched": float(np.mean([eval_flow(_restore(_flow_spec(), matched_flow_states[s]), large_ds.test) for s in SEEDS])),
            "large": float(np.mean([eval_flow(_restore(_flow_spec(), large_flow_states[s]), large_ds.test) for s in SEEDS])),
        },
    )
    ok = float(np.mean(matched_accs)) > float(np.mean(large_accs))
    record_acceptance(
        10, "flow-quality inversion", ok,
        f"matched acc {np.mean(matched_accs):.3f} vs large acc {np.mean(large_accs):.3f}; "
        f"large-benchmark EPE matched {bench['matched']:.3f} vs large {bench['large']:.3f}",
    )
    assert ok, f"matched {matched_accs} large {large_accs}"


# ---------------------------------------------------------------------------
# C11: future-flow extrapolation


def test_c11_future_flow(acache, action_ds):
    spec3d = ModelSpec("flownet3d", (3, T_FRAMES, RES, RES), WIDTH, CLASSES)

    def builder():
        model = build(spec3d, seed=0)
        cfg = TrainConfig(
            regime="flow-only", iterations=600, batch_size=8, lr=LR,
            eval_interval=300, eval_clips=32, augment_policy=AugmentPolicy(hflip=True), seed=0,
        )
        train(model, action_ds, cfg)
        return model

    spec_json, state = acache.model_state("flow3d_action", spec3d.to_json(), builder)
    model = _restore(spec3d, state)
    translation = [c for c in action_ds.test if MOTION_CLASSES[c.label].startswith("translate")]

    def measure():
        rows = future_prediction_eval(model, translation[:40])
        return {"rows": rows}

    rows = acache.result("c11_future", measure)["rows"]
    observed = [r["epe"] for r in rows if r["kind"] == "observed"]
    future = [r["epe"] for r in rows if r["kind"] == "future"][0]
    ratio = future / float(np.mean(observed))
    ok = ratio <= 2.0
    record_acceptance(
        11, "future-flow extrapolation", ok,
        f"future EPE {future:.3f} vs observed mean {np.mean(observed):.3f} (ratio {ratio:.2f})",
    )
    assert ok, rows


# ---------------------------------------------------------------------------
# C12: occlusion saliency localizes motion


def test_c12_occlusion_saliency(acache, action_ds, multitask_states):
    spec = ModelSpec("actionflownet2f", (6, RES, RES), WIDTH, CLASSES)
    model = _restore(spec, multitask_states[SEEDS[0]])

    def measure():
        wins = 0
        total = 0
        for clip in action_ds.test[:50]:
            smap = occlusion_map(model, clip, square=RES // 4, stride=RES // 8)
            t = (clip.spec.frames - 2) // 2
            mask = object_mask(clip.spec, t) | object_mask(clip.spec, t + 1)
            obj, bg = [], []
            for (y, x), drop in zip(smap.positions, smap.drops.reshape(-1)):
                if mask[y : y + smap.square, x : x + smap.square].any():
                    obj.append(drop)
                else:
                    bg.append(drop)
            if obj and bg:
                total += 1
                wins += float(np.mean(obj)) > float(np.mean(bg))
        return {"wins": wins, "total": total}

    res = acache.result("c12_saliency", measure)
    frac = res["wins"] / max(1, res["total"])
    ok = frac >= 0.8
    record_acceptance(
        12, "occlusion saliency", ok, f"object > background on {res['wins']}/{res['total']} clips ({frac:.0%})"
    )
    assert ok, res


# ---------------------------------------------------------------------------
# C13: formats and reproducibility


def test_c13_formats(tmp_path):
    from actionflow.flowio import read_flo, write_flo

    rng = np.random.default_rng(0)
    # .flo round trip
    flow = rng.standard_normal((2, 6, 9)).astype(np.float32)
    write_flo(tmp_path / "a.flo", flow)
    ok = np.array_equal(read_flo(tmp_path / "a.flo"), flow)

    # checkpoint round trip + CRC corruption detection
    tensors = {"w": rng.standard_normal((4, 4)).astype(np.float32)}
    save_checkpoint(tmp_path / "m.afnc", "{}", tensors)
    _, back = load_checkpoint(tmp_path / "m.afnc")
    ok &= np.array_equal(back["w"], tensors["w"])
    blob = bytearray((tmp_path / "m.afnc").read_bytes())
    caught = 0
    for _ in range(30):
        c = bytearray(blob)
        c[int(rng.integers(0, len(c)))] ^= 1 << int(rng.integers(0, 8))
        (tmp_path / "c.afnc").write_bytes(bytes(c))
        try:
            load_checkpoint(tmp_path / "c.afnc")
        except FormatError:
            caught += 1
    ok &= caught == 30

    # fixed seed reproduces metric CSVs byte-identically
    dist = displacement_profile("small", height=32, width=32, frames=4)
    ds = generate_dataset(9, dist, (24, 8, 8))
    csvs = []
    for _ in range(2):
        model = build(ModelSpec("scratch2f", (6, 32, 32), WIDTH, CLASSES), seed=4)
        cfg = TrainConfig(
            regime="multitask", lam=0.0, iterations=60, batch_size=4, lr=1e-3,
            eval_interval=20, eval_clips=8, augment_policy=AugmentPolicy(hflip=True), seed=4,
        )
        res = train(model, ds, cfg)
        csvs.append(res.log.to_csv())
    ok &= csvs[0] == csvs[1]

    record_acceptance(13, "formats and reproducibility", ok,
                      f"flo+checkpoint round trips exact, {caught}/30 corruptions caught, CSVs identical")
    assert ok
