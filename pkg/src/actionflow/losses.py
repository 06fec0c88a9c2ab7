"""Training losses and evaluation metrics.

Flow regression uses end-point error: the L2 distance between predicted
and true displacement at each pixel, summed (or averaged) over pixels, and
for multi-frame models additionally over frames including the extrapolated
future frame. Two-frame models supervise four decoder resolutions with a
weighted multi-scale variant. Classification uses softmax cross-entropy,
and the joint objective is ``classification + lambda * flow``.

The "mean" mode divides the EPE by the pixel (and frame) count so losses
at different scales are commensurate; the raw sum is what "sum" mode
returns. Training defaults to mean, reports can use either.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError
from .imageops import resize_bilinear
from .tensor import Tensor, make_op, vector_norm

__all__ = [
    "FlowField",
    "LossWeights",
    "epe",
    "multiframe_epe",
    "multiscale_epe",
    "resample_flow",
    "cross_entropy",
    "multitask_loss",
    "softmax",
    "accuracy",
    "per_class_accuracy",
]


@dataclass
class FlowField:
    """Per-pixel displacement in pixels: u rightward, v downward."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ShapeError(f"flow components must be matching 2-d maps, got {self.u.shape} / {self.v.shape}")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("flow field contains non-finite values")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "FlowField":
        if arr.ndim != 3 or arr.shape[0] != 2:
            raise ShapeError(f"expected (2,H,W) flow array, got {arr.shape}")
        return cls(arr[0], arr[1])

    def to_array(self) -> np.ndarray:
        return np.stack([self.u, self.v])

    @property
    def shape(self):
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass
class LossWeights:
    """lambda balances classification vs flow; alpha weights the 4 scales."""

    lam: float = 1.0
    alpha: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.lam < 0 or any(a < 0 for a in self.alpha):
            raise ValueError("loss weights must be nonnegative")


def _as_flow_tensor(x) -> Tensor:
    if isinstance(x, FlowField):
        return Tensor(x.to_array())
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _channel_axis(t: Tensor) -> int:
    # (2,H,W) -> 0, (N,2,H,W) and (N,2,T,H,W) -> 1
    if t.ndim == 3 and t.shape[0] == 2:
        return 0
    if t.ndim in (4, 5) and t.shape[1] == 2:
        return 1
    raise ShapeError(f"not a flow-shaped tensor: {t.shape}")


def epe(pred, gt, mode: str = "sum") -> Tensor:
    """End-point error between two flow fields of identical shape.

    mode "sum" returns the total over all pixels (and frames/batch);
    "mean" divides by the number of flow vectors.
    """
    p = _as_flow_tensor(pred)
    g = _as_flow_tensor(gt)
    if p.shape != g.shape:
        raise ShapeError(f"epe shapes differ: {p.shape} vs {g.shape}")
    norms = vector_norm(p - g, axis=_channel_axis(p))
    if mode == "sum":
        return norms.sum()
    if mode == "mean":
        return norms.mean()
    raise ValueError(f"unknown epe mode {mode!r}")


def multiframe_epe(preds: Sequence, gts: Sequence, mode: str = "mean") -> Tensor:
    """Sum of per-frame EPE over T frames, the last being the future frame.

    For mode "mean" the per-frame means are averaged, so the value stays a
    per-pixel quantity.
    """
    if len(preds) != len(gts):
        raise ShapeError(f"frame count mismatch: {len(preds)} vs {len(gts)}")
    if len(preds) == 0:
        raise ValueError("no frames")
    terms = [epe(p, g, mode) for p, g in zip(preds, gts)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    if mode == "mean":
        total = total * (1.0 / len(terms))
    return total


def resample_flow(flow: np.ndarray, scale: Optional[float] = None, out_hw: Optional[tuple] = None) -> np.ndarray:
    """Bilinearly resample a flow field's spatial grid; displacement values
    are rescaled so they stay in output-pixel units.

    ``flow`` is (2,H,W) or batched (...,2,H,W); give either a scale factor
    or an explicit output size.
    """
    h, w = flow.shape[-2:]
    if out_hw is None:
        if scale is None:
            raise ValueError("need scale or out_hw")
        out_hw = (int(round(h * scale)), int(round(w * scale)))
    ho, wo = out_hw
    if ho < 1 or wo < 1:
        raise ShapeError(f"degenerate resample target {out_hw}")
    out = resize_bilinear(flow, (ho, wo))
    ax = flow.ndim - 3
    sl_u = (slice(None),) * ax + (0,)
    sl_v = (slice(None),) * ax + (1,)
    out[sl_u] *= wo / w
    out[sl_v] *= ho / h
    return out


def multiscale_epe(preds: Sequence[Tensor], gt: np.ndarray, alpha=(1.0, 1.0, 1.0, 1.0), mode: str = "mean") -> Tensor:
    """Weighted sum of EPE over decoder scales, finest first.

    ``gt`` is the full-resolution target, (N,2,H,W) or (2,H,W); it is
    resampled to each prediction's grid.
    """
    if len(preds) != len(alpha):
        raise ShapeError(f"{len(preds)} predictions but {len(alpha)} weights")
    total = None
    for pred, a in zip(preds, alpha):
        ph, pw = pred.shape[-2:]
        gt_r = resample_flow(gt, out_hw=(ph, pw))
        term = epe(pred, gt_r, mode) * float(a)
        total = term if total is None else total + term
    return total


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """-log softmax(logits)[label]; batched input averages over the batch.

    ``logits`` is (K,) with an int label or (N,K) with an int array.
    """
    if not isinstance(logits, Tensor):
        logits = Tensor(np.asarray(logits))
    single = logits.ndim == 1
    z = logits.data[None, :] if single else logits.data
    n, k = z.shape
    lab = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if lab.shape != (n,):
        raise ShapeError(f"labels shape {lab.shape} does not match batch {n}")
    if lab.min() < 0 or lab.max() >= k:
        raise ValueError(f"label out of range for {k} classes")
    zmax = z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
    losses = logsumexp - z[np.arange(n), lab]
    out = np.asarray(losses.mean(), dtype=logits.dtype)

    def bwd(g):
        probs = softmax(z, axis=1)
        probs[np.arange(n), lab] -= 1.0
        grad = probs * (float(g) / n)
        return (grad[0] if single else grad,)

    return make_op(out, (logits,), bwd)


def multitask_loss(class_term: Tensor, flow_term: Optional[Tensor], lam: float) -> Tensor:
    """class_term + lam * flow_term. lam == 0 is exactly the classification
    loss (the flow term may then be omitted entirely)."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0.0 or flow_term is None:
        if lam > 0.0:
            raise ValueError("lambda > 0 requires a flow term")
        return class_term
    return class_term + flow_term * lam


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ShapeError(f"preds {preds.shape} vs labels {labels.shape}")
    if preds.size == 0:
        raise ValueError("empty input")
    return float((preds == labels).mean())


def per_class_accuracy(preds, labels, num_classes: int) -> np.ndarray:
    """Fraction correct per class; classes absent from labels get nan."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise ValueError("empty input")
    out = np.full(num_classes, np.nan)
    for c in range(num_classes):
        mask = labels == c
        if mask.any():
            out[c] = float((preds[mask] == c).mean())
    return out
