"""Optimization loop: Adam, the training regimes, and the forgetting probe.

Regimes:
    flow-only           minimize the flow loss (multi-scale EPE for the
                        two-frame decoder, finest-scale multi-frame EPE
                        for the 3D decoder)
    finetune            start from a flow-trained checkpoint, minimize
                        classification loss only (the decoder, if kept,
                        receives no gradient and drifts only through the
                        shared encoder - the forgetting mechanism)
    multitask           classification + lambda * flow, sharing one
                        encoder pass; lambda = 0 reproduces a from-scratch
                        classification run exactly
    stacked-classifier  classification loss through a frozen flow model

Determinism: batch order, augmentation, and dropout each draw from their
own stream derived from the config seed, so equal seeds give bit-identical
metric logs on one machine.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, ShapeError
from .losses import cross_entropy, epe, multiscale_epe, multitask_loss, resample_flow, softmax
from .models import Model, StackedModel
from .synthdata import AugmentPolicy, Clip, ClipDataset, augment
from .tensor import Tensor, backward, no_grad

__all__ = [
    "Adam",
    "MetricLog",
    "TrainConfig",
    "TrainResult",
    "train",
    "forgetting_probe",
    "eval_classifier",
    "eval_flow",
    "init_from_flow_state",
    "clip_pair_input",
    "clip_volume_input",
]

REGIMES = ("flow-only", "finetune", "multitask", "stacked-classifier")


class Adam:
    """Adam with bias correction; per-parameter moments keyed by name."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.rejected = 0

    def step(self, params) -> bool:
        """Apply one update. Rejects the whole step (no state change) if any
        gradient is non-finite; returns False in that case."""
        grads = []
        for p in params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                self.rejected += 1
                return False
            grads.append(g)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g in zip(params, grads):
            m = self.m.get(p.name)
            if m is None:
                m = self.m[p.name] = np.zeros_like(p.data)
            v = self.v.get(p.name)
            if v is None:
                v = self.v[p.name] = np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


class MetricLog:
    """Rows (step, split, metric, value); serialized as CSV."""

    def __init__(self):
        self.rows: List[Tuple[int, str, str, float]] = []

    def add(self, step: int, split: str, metric: str, value: float):
        self.rows.append((int(step), split, metric, float(value)))

    def values(self, split: str, metric: str) -> List[Tuple[int, float]]:
        return [(s, v) for s, sp, m, v in self.rows if sp == split and m == metric]

    def to_csv(self) -> str:
        lines = ["step,split,metric,value"]
        for step, split, metric, value in self.rows:
            lines.append(f"{step},{split},{metric},{value:.9g}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_csv())


@dataclass
class TrainConfig:
    regime: str = "multitask"
    iterations: int = 2000
    batch_size: int = 16
    lr: float = 1e-4
    lam: float = 1.0
    alpha: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    flow_mode: str = "mean"
    seed: int = 0
    eval_interval: int = 200
    eval_clips: int = 64
    augment_policy: AugmentPolicy = field(default_factory=lambda: AugmentPolicy(hflip=True))
    grad_clip: Optional[float] = None
    snapshot_interval: Optional[int] = None
    source_checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")


@dataclass
class TrainResult:
    model: object
    log: MetricLog
    best_state: Dict[str, np.ndarray]
    best_step: int
    best_metric: float
    snapshots: List[Tuple[int, Dict[str, np.ndarray]]]
    nonfinite_steps: int


def _copy_state(model) -> Dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.state_dict().items()}


def clip_pair_input(clip: Clip, t: int) -> Tuple[np.ndarray, np.ndarray]:
    """Two consecutive frames stacked to 6 channels, plus the flow target."""
    f = clip.frames_float()
    x = np.concatenate([f[t], f[t + 1]], axis=0)
    return x, clip.flows[t]


def clip_volume_input(clip: Clip) -> Tuple[np.ndarray, np.ndarray]:
    """(3,T,H,W) frame volume plus all T flow targets as (T,2,H,W)."""
    return clip.frames_float().transpose(1, 0, 2, 3), clip.flows


def _middle_pair(clip: Clip) -> int:
    return max(0, (clip.spec.frames - 2) // 2)


def _flow_targets_3d(flows: np.ndarray, out_hw) -> np.ndarray:
    """(N,T,2,H,W) ground truth -> (N,2,T,h,w) at the decoder scale."""
    scaled = resample_flow(flows, out_hw=out_hw)
    return np.ascontiguousarray(scaled.transpose(0, 2, 1, 3, 4))


def _forward_chunks(fn, inputs: np.ndarray, chunk: int = 64) -> np.ndarray:
    outs = []
    for i in range(0, len(inputs), chunk):
        outs.append(fn(inputs[i : i + chunk]))
    return np.concatenate(outs, axis=0)


def eval_classifier(model, clips: Sequence[Clip], max_clips: Optional[int] = None) -> Tuple[float, float]:
    """Plain center evaluation (one deterministic forward per clip).
    Returns (accuracy, mean cross-entropy)."""
    clips = clips[:max_clips] if max_clips else clips
    is_3d = getattr(model.spec, "is_3d", False)
    if is_3d:
        xs = np.stack([clip_volume_input(c)[0] for c in clips])
    else:
        xs = np.stack([clip_pair_input(c, _middle_pair(c))[0] for c in clips])
    labels = np.array([c.label for c in clips])
    with no_grad():
        logits = _forward_chunks(lambda b: model.forward_action(b, mode="eval").data, xs, chunk=32)
    preds = logits.argmax(axis=1)
    probs = softmax(logits, axis=1)
    ce = float(-np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-12)).mean())
    return float((preds == labels).mean()), ce


def eval_flow(model: Model, clips: Sequence[Clip], max_clips: Optional[int] = None) -> float:
    """Mean per-pixel EPE at the finest decoder scale on deterministic
    inputs (middle pair for two-frame models, whole clip for 3D)."""
    clips = clips[:max_clips] if max_clips else clips
    if model.decoder is None:
        raise ShapeError("flow evaluation needs a decoder")
    total = 0.0
    count = 0
    if model.spec.is_3d:
        xs = np.stack([clip_volume_input(c)[0] for c in clips])
        gts = np.stack([c.flows for c in clips])
        with no_grad():
            for i in range(0, len(xs), 8):
                pred = model.forward_flow(xs[i : i + 8], mode="eval").data
                gt = _flow_targets_3d(gts[i : i + 8], pred.shape[-2:])
                d = pred - gt
                total += float(np.sqrt((d * d).sum(axis=1)).sum())
                count += d.shape[0] * d.shape[2] * d.shape[3] * d.shape[4]
    else:
        pairs = [clip_pair_input(c, _middle_pair(c)) for c in clips]
        xs = np.stack([p[0] for p in pairs])
        gts = np.stack([p[1] for p in pairs])
        with no_grad():
            for i in range(0, len(xs), 32):
                pred = model.forward_flow(xs[i : i + 32], mode="eval")[0].data
                gt = resample_flow(gts[i : i + 32], out_hw=pred.shape[-2:])
                d = pred - gt
                total += float(np.sqrt((d * d).sum(axis=1)).sum())
                count += d.shape[0] * d.shape[2] * d.shape[3]
    return total / count


def init_from_flow_state(model: Model, state: Dict[str, np.ndarray]) -> Model:
    """Load every tensor the model shares by name with a flow checkpoint
    (encoder and, when present, decoder); the classifier keeps its fresh
    initialization."""
    own = model.state_dict()
    copied = 0
    for name, arr in own.items():
        if name in state:
            if tuple(state[name].shape) != tuple(arr.shape):
                raise ShapeError(f"source tensor {name} has shape {state[name].shape}, expected {arr.shape}")
            arr[...] = state[name]
            copied += 1
    if copied == 0:
        raise ShapeError("source checkpoint shares no tensors with the model")
    return model


def _needs_classifier(regime: str) -> bool:
    return regime in ("finetune", "multitask", "stacked-classifier")


def _batch_2f(clips, idx, ts, cfg, aug_rng):
    xs = np.empty((len(idx), 6) + clips[0].frames.shape[-2:], dtype=np.float32)
    gts = np.empty((len(idx), 2) + clips[0].frames.shape[-2:], dtype=np.float32)
    labels = np.empty(len(idx), dtype=np.intp)
    for k, (i, t) in enumerate(zip(idx, ts)):
        clip = clips[i]
        frames = clip.frames_float()[t : t + 2]  # (2,3,H,W)
        flow = clip.flows[t][None]  # (1,2,H,W)
        frames, flow = augment(frames, flow, cfg.augment_policy, aug_rng)
        xs[k] = frames.reshape(6, *frames.shape[-2:])
        gts[k] = flow[0]
        labels[k] = clip.label
    return xs, gts, labels


def _batch_3d(clips, idx, cfg, aug_rng):
    shape = clips[0].frames.shape  # (T,3,H,W)
    xs = np.empty((len(idx), 3, shape[0]) + shape[-2:], dtype=np.float32)
    gts = np.empty((len(idx), shape[0], 2) + shape[-2:], dtype=np.float32)
    labels = np.empty(len(idx), dtype=np.intp)
    for k, i in enumerate(idx):
        clip = clips[i]
        frames, flows = augment(clip.frames_float(), clip.flows, cfg.augment_policy, aug_rng)
        xs[k] = frames.transpose(1, 0, 2, 3)
        gts[k] = flows
        labels[k] = clip.label
    return xs, gts, labels


def train(model, dataset: ClipDataset, cfg: TrainConfig, source_state: Optional[Dict[str, np.ndarray]] = None,
          out_dir=None) -> TrainResult:
    regime = cfg.regime
    is_stacked = isinstance(model, StackedModel)
    if regime == "stacked-classifier" and not is_stacked:
        raise ConfigError("stacked-classifier regime expects a StackedModel")
    if regime == "flow-only" and (is_stacked or model.decoder is None):
        raise ConfigError("flow-only regime requires a model with a decoder")
    if regime == "finetune":
        if source_state is None:
            raise ConfigError("finetune regime requires a source checkpoint")
        init_from_flow_state(model, source_state)
    if _needs_classifier(regime) and not (is_stacked or model.classifier is not None):
        raise ConfigError(f"regime {regime} needs a classifier head")

    clips = dataset.train
    if not clips:
        raise ConfigError("empty training split")
    shape = clips[0].frames.shape
    in_size = model.spec.input_size
    if shape[-2:] != tuple(in_size[-2:]):
        raise ShapeError(f"dataset resolution {shape[-2:]} does not match model input {in_size[-2:]}")
    if model.spec.is_3d and shape[0] != in_size[1]:
        raise ShapeError(f"dataset clips have {shape[0]} frames, model expects {in_size[1]}")

    use_flow = regime == "flow-only" or (regime == "multitask" and cfg.lam > 0.0)
    use_cls = _needs_classifier(regime)
    if use_flow and not is_stacked and model.decoder is None:
        raise ConfigError("flow loss requested but the model has no decoder")

    batch_rng = rngmod.stream(cfg.seed, "batches")
    aug_rng = rngmod.stream(cfg.seed, "augment")
    drop_rng = rngmod.stream(cfg.seed, "dropout")
    adam = Adam(lr=cfg.lr)
    params = model.trainable_params()
    log = MetricLog()
    snapshots: List[Tuple[int, Dict[str, np.ndarray]]] = []
    val_clips = dataset.val[: cfg.eval_clips] if dataset.val else []

    maximize = use_cls  # classifiers track val accuracy, flow runs track val EPE
    best_metric = -np.inf if maximize else np.inf
    best_state = _copy_state(model)
    best_step = 0

    def evaluate_point(step: int, running_loss: float):
        nonlocal best_metric, best_state, best_step
        log.add(step, "train", "loss", running_loss)
        if not val_clips:
            return
        metric = None
        if use_cls:
            acc, ce = eval_classifier(model, val_clips)
            log.add(step, "val", "accuracy", acc)
            log.add(step, "val", "cross_entropy", ce)
            metric = acc
        if use_flow and not is_stacked:
            epe_val = eval_flow(model, val_clips)
            log.add(step, "val", "epe", epe_val)
            if metric is None:
                metric = epe_val
        if metric is None:
            return
        better = metric > best_metric if maximize else metric < best_metric
        if better:
            best_metric = metric
            best_state = _copy_state(model)
            best_step = step

    if cfg.snapshot_interval is not None:
        snapshots.append((0, _copy_state(model)))

    n = len(clips)
    t_max = shape[0] - 1  # observed pairs per clip
    is_3d = (not is_stacked) and model.spec.is_3d
    loss_sum, loss_n = 0.0, 0
    for step in range(1, cfg.iterations + 1):
        idx = batch_rng.integers(0, n, cfg.batch_size)
        if is_3d:
            xs, gts, labels = _batch_3d(clips, idx, cfg, aug_rng)
        else:
            ts = batch_rng.integers(0, t_max, cfg.batch_size)
            xs, gts, labels = _batch_2f(clips, idx, ts, cfg, aug_rng)

        if is_stacked:
            logits = model.forward_action(xs, mode="train", rng=drop_rng)
            loss = cross_entropy(logits, labels)
        else:
            logits, flows = model.forward(
                xs, mode="train", rng=drop_rng, need_flow=use_flow, need_logits=use_cls
            )
            flow_term = None
            if use_flow:
                if is_3d:
                    gt5 = _flow_targets_3d(gts, flows.data.shape[-2:])
                    flow_term = epe(flows, Tensor(gt5), cfg.flow_mode)
                else:
                    flow_term = multiscale_epe(flows, gts, cfg.alpha, cfg.flow_mode)
            if use_cls:
                class_term = cross_entropy(logits, labels)
                loss = multitask_loss(class_term, flow_term, cfg.lam if use_flow else 0.0)
            else:
                loss = flow_term

        backward(loss)
        if cfg.grad_clip is not None:
            for p in params:
                if p.grad is not None:
                    np.clip(p.grad, -cfg.grad_clip, cfg.grad_clip, out=p.grad)
        adam.step(params)
        loss_sum += float(loss.data)
        loss_n += 1

        if step % cfg.eval_interval == 0 or step == cfg.iterations:
            evaluate_point(step, loss_sum / max(1, loss_n))
            loss_sum, loss_n = 0.0, 0
        if cfg.snapshot_interval is not None and step % cfg.snapshot_interval == 0:
            snapshots.append((step, _copy_state(model)))

    if cfg.snapshot_interval is not None and snapshots[-1][0] != cfg.iterations:
        snapshots.append((cfg.iterations, _copy_state(model)))

    if out_dir is not None:
        from .checkpoint import save_model

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_model(out_dir / "model.afnc", model)
        log.save(out_dir / "metrics.csv")

    return TrainResult(
        model=model,
        log=log,
        best_state=best_state,
        best_step=best_step,
        best_metric=best_metric,
        snapshots=snapshots,
        nonfinite_steps=adam.rejected,
    )


def forgetting_probe(snapshots: Sequence[Tuple[int, Dict[str, np.ndarray]]], template: Model,
                     flow_clips: Sequence[Clip]) -> List[Tuple[int, float]]:
    """Flow EPE of each checkpoint on held-out clips, via a scratch copy of
    the template model (which must retain its decoder)."""
    if template.decoder is None:
        raise ShapeError("forgetting probe needs a model with a decoder")
    probe = copy.deepcopy(template)
    curve = []
    for step, state in snapshots:
        probe.load_state_dict(state, strict=False)
        curve.append((step, eval_flow(probe, flow_clips)))
    return curve
