"""Evaluation protocol and the analysis procedures: occlusion saliency,
flow color-wheel rendering, future-flow scoring, and the flow-quality vs
recognition study.

Classification evaluation samples N random segments per clip, runs each
through 10 crops (4 corners + center, plus their horizontal mirrors), and
averages the softmax scores. The degenerate protocol (1 segment, 1 crop)
is exactly a plain center forward pass.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng as rngmod
from .errors import ShapeError
from .imageops import resize_bilinear
from .losses import accuracy, per_class_accuracy, resample_flow, softmax
from .models import Model, ModelSpec, StackedModel, build, build_stacked
from .synthdata import Clip, ClipDataset, MOTION_CLASSES
from .tensor import no_grad
from .trainer import TrainConfig, clip_pair_input, clip_volume_input, eval_flow, train

__all__ = [
    "EvalProtocol",
    "EvalResult",
    "evaluate",
    "SaliencyMap",
    "occlusion_map",
    "flow_to_rgb",
    "future_prediction_eval",
    "StudyRow",
    "flow_quality_study",
    "format_study_report",
]


@dataclass
class EvalProtocol:
    segments: int = 25
    crops: int = 10  # 10 = 4 corners + center with mirrors; 1 = center only
    crop_scale: float = 0.875
    seed: int = 0

    def forwards_per_video(self) -> int:
        return self.segments * self.crops


@dataclass
class EvalResult:
    accuracy: float
    per_class: np.ndarray
    preds: np.ndarray
    labels: np.ndarray

    def to_csv(self) -> str:
        lines = ["metric,class,value", f"accuracy,,{self.accuracy:.6f}"]
        for c, v in enumerate(self.per_class):
            name = MOTION_CLASSES[c] if c < len(MOTION_CLASSES) else str(c)
            lines.append(f"class_accuracy,{name},{v:.6f}")
        return "\n".join(lines) + "\n"


def _crop_boxes(h, w, scale, crops):
    ch, cw = int(round(h * scale)), int(round(w * scale))
    if crops == 1:
        return [(0, 0, h, w)], False  # full frame, no mirrors
    boxes = [
        (0, 0, ch, cw),
        (0, w - cw, ch, cw),
        (h - ch, 0, ch, cw),
        (h - ch, w - cw, ch, cw),
        ((h - ch) // 2, (w - cw) // 2, ch, cw),
    ]
    return boxes, True


def _crop_views(x: np.ndarray, boxes, mirrored, out_hw):
    views = []
    for top, left, ch, cw in boxes:
        v = x[..., top : top + ch, left : left + cw]
        if (ch, cw) != tuple(out_hw):
            v = resize_bilinear(v.astype(np.float32), out_hw)
        views.append(v)
        if mirrored:
            views.append(v[..., ::-1].copy())
    return views


def _segment_inputs(model, clip: Clip, protocol: EvalProtocol) -> np.ndarray:
    """All (segment x crop) inputs for one clip, stacked on axis 0."""
    T = clip.spec.frames
    srng = rngmod.stream(protocol.seed, "segments", clip.uid)
    is_3d = model.spec.is_3d
    if is_3d:
        t_model = model.spec.input_size[1]
        if T < t_model:
            raise ShapeError(f"clip has {T} frames, model needs {t_model}")
        starts = (
            [(T - t_model) // 2]
            if protocol.segments == 1
            else list(srng.integers(0, T - t_model + 1, protocol.segments))
        )
        vols = clip.frames_float().transpose(1, 0, 2, 3)
        bases = [vols[:, s : s + t_model] for s in starts]
    else:
        if T < 2:
            raise ShapeError("two-frame model needs clips of at least 2 frames")
        f = clip.frames_float()
        starts = (
            [max(0, (T - 2) // 2)]
            if protocol.segments == 1
            else list(srng.integers(0, T - 1, protocol.segments))
        )
        bases = [np.concatenate([f[t], f[t + 1]], axis=0) for t in starts]
    h, w = bases[0].shape[-2:]
    boxes, mirrored = _crop_boxes(h, w, protocol.crop_scale, protocol.crops)
    out = []
    for base in bases:
        out.extend(_crop_views(base, boxes, mirrored, (h, w)))
    return np.stack(out)


def evaluate(model, clips: Sequence[Clip], protocol: Optional[EvalProtocol] = None) -> EvalResult:
    """Protocol accuracy: mean softmax over segments x crops, then argmax.
    Deterministic given the protocol seed, and invariant to clip order
    (segment sampling is keyed by clip identity)."""
    protocol = protocol or EvalProtocol()
    preds = np.empty(len(clips), dtype=np.intp)
    labels = np.array([c.label for c in clips])
    num_classes = model.spec.num_classes
    for i, clip in enumerate(clips):
        inputs = _segment_inputs(model, clip, protocol)
        scores = np.zeros(num_classes)
        with no_grad():
            for j in range(0, len(inputs), 64):
                logits = model.forward_action(inputs[j : j + 64], mode="eval").data
                scores += softmax(logits, axis=1).sum(axis=0)
        preds[i] = scores.argmax()
    return EvalResult(
        accuracy=accuracy(preds, labels),
        per_class=per_class_accuracy(preds, labels, num_classes),
        preds=preds,
        labels=labels,
    )


@dataclass
class SaliencyMap:
    """Relative confidence drop per occluder position."""

    drops: np.ndarray  # (gy, gx)
    square: int
    stride: int
    base_confidence: float
    positions: List[Tuple[int, int]] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["gy,gx,y,x,drop"]
        gy, gx = self.drops.shape
        for i in range(gy):
            for j in range(gx):
                y, x = self.positions[i * gx + j]
                lines.append(f"{i},{j},{y},{x},{self.drops[i, j]:.6f}")
        return "\n".join(lines) + "\n"


def occlusion_map(model, clip: Clip, square: Optional[int] = None, stride: Optional[int] = None,
                  label: Optional[int] = None, t: Optional[int] = None) -> SaliencyMap:
    """Slide a black square over every input frame and record the relative
    drop in the true-class softmax confidence."""
    h, w = clip.frames.shape[-2:]
    square = square or max(2, w // 4)
    stride = stride or max(1, w // 8)
    if square < 1 or square > min(h, w):
        raise ShapeError(f"occluder size {square} invalid for {h}x{w} frames")
    label = clip.label if label is None else label
    if model.spec.is_3d:
        base = clip_volume_input(clip)[0]
    else:
        tt = max(0, (clip.spec.frames - 2) // 2) if t is None else t
        base = clip_pair_input(clip, tt)[0]
    ys = list(range(0, h - square + 1, stride))
    xs = list(range(0, w - square + 1, stride))
    positions = [(y, x) for y in ys for x in xs]
    batch = np.repeat(base[None], len(positions) + 1, axis=0)
    for k, (y, x) in enumerate(positions):
        batch[k + 1, ..., y : y + square, x : x + square] = 0.0
    confs = np.empty(len(positions) + 1)
    with no_grad():
        for j in range(0, len(batch), 64):
            logits = model.forward_action(batch[j : j + 64], mode="eval").data
            confs[j : j + 64] = softmax(logits, axis=1)[:, label]
    base_conf = float(confs[0])
    denom = base_conf if base_conf > 1e-12 else 1.0
    drops = (base_conf - confs[1:]) / denom
    return SaliencyMap(
        drops=drops.reshape(len(ys), len(xs)).astype(np.float64),
        square=square,
        stride=stride,
        base_confidence=base_conf,
        positions=positions,
    )


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    out = np.zeros(h.shape + (3,))
    for idx, (r, g, b) in enumerate([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]):
        m = i == idx
        out[m, 0] = r[m] if isinstance(r, np.ndarray) else r
        out[m, 1] = g[m] if isinstance(g, np.ndarray) else g
        out[m, 2] = b[m] if isinstance(b, np.ndarray) else b
    return out


def flow_to_rgb(flow: np.ndarray, max_mag: Optional[float] = None) -> np.ndarray:
    """Color-wheel rendering: hue = direction, saturation = magnitude
    (normalized per image unless ``max_mag`` pins the scale), value = 1.
    Zero flow renders white. Returns (H,W,3) uint8."""
    u, v = np.asarray(flow[0], dtype=np.float64), np.asarray(flow[1], dtype=np.float64)
    mag = np.hypot(u, v)
    scale = max_mag if max_mag is not None else max(float(mag.max()), 1e-9)
    sat = np.clip(mag / scale, 0.0, 1.0)
    hue = (np.arctan2(v, u) / (2.0 * np.pi)) % 1.0
    rgb = _hsv_to_rgb(hue, sat, np.ones_like(sat))
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def future_prediction_eval(model: Model, clips: Sequence[Clip]) -> List[Dict]:
    """Per-frame-index EPE table for a multi-frame flow model; the last row
    is the extrapolated future frame."""
    if not model.spec.is_3d:
        raise ShapeError("future prediction eval needs a multi-frame model")
    T = model.spec.input_size[1]
    totals = np.zeros(T)
    counts = np.zeros(T)
    with no_grad():
        for i in range(0, len(clips), 8):
            chunk = clips[i : i + 8]
            xs = np.stack([clip_volume_input(c)[0] for c in chunk])
            gts = np.stack([c.flows for c in chunk])
            pred = model.forward_flow(xs, mode="eval").data  # (N,2,T,h,w)
            h, w = pred.shape[-2:]
            gt = resample_flow(gts, out_hw=(h, w))  # (N,T,2,h,w)
            d = pred.transpose(0, 2, 1, 3, 4) - gt
            e = np.sqrt((d * d).sum(axis=2))  # (N,T,h,w)
            totals += e.sum(axis=(0, 2, 3))
            counts += e.shape[0] * h * w
    rows = []
    for t in range(T):
        rows.append(
            {
                "frame": t,
                "kind": "future" if t == T - 1 else "observed",
                "epe": float(totals[t] / counts[t]),
            }
        )
    return rows


@dataclass
class StudyRow:
    profile: str
    seed: int
    bench_epe: float
    own_epe: float
    accuracy: float


def flow_quality_study(
    flow_datasets: Dict[str, ClipDataset],
    action_dataset: ClipDataset,
    bench_clips: Sequence[Clip],
    flow_cfg: TrainConfig,
    stacked_cfg: TrainConfig,
    model_spec: ModelSpec,
    seeds: Sequence[int] = (0,),
    protocol: Optional[EvalProtocol] = None,
) -> List[StudyRow]:
    """Train one flow estimator per displacement profile, freeze it, train a
    stacked classifier on the action set, and report (EPE, accuracy) pairs.

    ``bench_clips`` is the shared flow benchmark every estimator is scored
    on; ``own_epe`` is the EPE on the estimator's own test split.
    """
    rows = []
    protocol = protocol or EvalProtocol()
    for profile, fds in flow_datasets.items():
        for seed in seeds:
            fspec = ModelSpec(
                "flownet2f", model_spec.input_size, model_spec.width_mult,
                model_spec.num_classes, model_spec.use_batchnorm, model_spec.dropout,
            )
            flow_model = build(fspec, seed=seed)
            res = train(flow_model, fds, dataclasses.replace(flow_cfg, regime="flow-only", seed=seed))
            bench = eval_flow(res.model, list(bench_clips))
            own = eval_flow(res.model, fds.test)
            stacked = build_stacked(res.model, model_spec.num_classes, seed=seed)
            train(stacked, action_dataset, dataclasses.replace(stacked_cfg, regime="stacked-classifier", seed=seed))
            acc = evaluate(stacked, action_dataset.test, protocol).accuracy
            rows.append(StudyRow(profile=profile, seed=seed, bench_epe=bench, own_epe=own, accuracy=acc))
    return rows


def format_study_report(rows: Sequence[StudyRow]) -> str:
    lines = [
        f"{'profile':<10} {'seed':>4} {'bench EPE':>10} {'own EPE':>9} {'accuracy':>9}",
        "-" * 46,
    ]
    for r in rows:
        lines.append(f"{r.profile:<10} {r.seed:>4} {r.bench_epe:>10.4f} {r.own_epe:>9.4f} {r.accuracy:>9.4f}")
    return "\n".join(lines) + "\n"


def study_rows_csv(rows: Sequence[StudyRow]) -> str:
    lines = ["profile,seed,bench_epe,own_epe,accuracy"]
    for r in rows:
        lines.append(f"{r.profile},{r.seed},{r.bench_epe:.6f},{r.own_epe:.6f},{r.accuracy:.6f}")
    return "\n".join(lines) + "\n"
