"""Model builders for the network variants and their weight-transfer paths.

All variants share an 18-layer residual encoder: conv1 (7x7, stride 2),
one max pool (stride 2, spatial only), then four groups of two basic
blocks with the spatial resolution halved in groups 2-4. The 3D variants
replace kxk kernels with kxkx3, use no temporal pooling, and halve the
temporal extent alongside the spatial one in groups 2-4 (16 -> 8 -> 4 -> 2).

Flow decoders mirror the encoder with transposed convolutions and
encoder-to-decoder skip connections, fused by concatenation plus a 1x1
convolution. The two-frame decoder predicts flow at four scales (1/4 down
to 1/32 of the input), feeding each coarser prediction into the next finer
stage; the multi-frame decoder upsamples back to the full temporal extent
and predicts all T flow frames (the T-th being the extrapolated future
flow) at 1/4 spatial resolution, where its single-scale loss is applied.

Classification heads global-average-pool the final encoder map, apply
dropout, and end in a linear layer.

Variants:
    scratch2f        encoder + classifier (two-frame input, no decoder)
    flownet2f        encoder + 4-scale flow decoder (no classifier)
    actionflownet2f  encoder + decoder + classifier (joint training)
    flownet3d        3D encoder + 3D flow decoder
    actionflownet3d  3D encoder + decoder + classifier
    stacked2f        frozen flownet2f + fresh classifier on its finest flow
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng as rngmod
from .errors import ShapeError
from .layers import (
    BasicBlock2d,
    BasicBlock3d,
    Conv2d,
    Conv3d,
    Deconv2d,
    Deconv3d,
    BatchNorm,
    Dropout,
    Linear,
    MaxPool2d,
    conv_out_extent,
    global_avg_pool,
)
from .tensor import Parameter, Tensor, concat, no_grad, relu, reshape, transpose

__all__ = [
    "VARIANTS",
    "ModelSpec",
    "Model",
    "StackedModel",
    "build",
    "build_stacked",
    "strip_decoder",
    "transfer_encoder",
    "trace_shapes",
]

VARIANTS = ("scratch2f", "flownet2f", "stacked2f", "actionflownet2f", "flownet3d", "actionflownet3d")

_HAS_DECODER = {"flownet2f", "actionflownet2f", "flownet3d", "actionflownet3d"}
_HAS_CLASSIFIER = {"scratch2f", "stacked2f", "actionflownet2f", "actionflownet3d"}
_IS_3D = {"flownet3d", "actionflownet3d"}


@dataclass
class ModelSpec:
    """Declarative description of one network variant.

    ``input_size`` is (C,H,W) for two-frame variants (C=6, the two frames
    already concatenated) and (C,T,H,W) for multi-frame variants.
    """

    variant: str
    input_size: Tuple[int, ...]
    width_mult: float = 0.25
    num_classes: int = 8
    use_batchnorm: bool = True
    dropout: float = 0.5

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.input_size = tuple(int(v) for v in self.input_size)
        want = 4 if self.is_3d else 3
        if len(self.input_size) != want:
            raise ShapeError(f"{self.variant} expects a {want}-d input size, got {self.input_size}")

    @property
    def is_3d(self) -> bool:
        return self.variant in _IS_3D

    @property
    def has_decoder(self) -> bool:
        return self.variant in _HAS_DECODER

    @property
    def has_classifier(self) -> bool:
        return self.variant in _HAS_CLASSIFIER

    @property
    def base_width(self) -> int:
        w = int(round(64 * self.width_mult))
        if w < 4:
            raise ValueError(f"width multiplier {self.width_mult} gives degenerate width {w}")
        return w

    def to_json(self) -> str:
        return json.dumps(
            {
                "variant": self.variant,
                "input_size": list(self.input_size),
                "width_mult": self.width_mult,
                "num_classes": self.num_classes,
                "use_batchnorm": self.use_batchnorm,
                "dropout": self.dropout,
            }
        )

    @classmethod
    def from_json(cls, blob: str) -> "ModelSpec":
        d = json.loads(blob)
        return cls(
            variant=d["variant"],
            input_size=tuple(d["input_size"]),
            width_mult=d["width_mult"],
            num_classes=d["num_classes"],
            use_batchnorm=d.get("use_batchnorm", True),
            dropout=d.get("dropout", 0.5),
        )


def _validate_input_size(spec: ModelSpec):
    if spec.is_3d:
        c, t, h, w = spec.input_size
        if t % 8 != 0:
            raise ShapeError(f"temporal extent {t} not divisible by total temporal stride 8")
    else:
        c, h, w = spec.input_size
    if h % 32 != 0 or w % 32 != 0:
        raise ShapeError(f"spatial size {h}x{w} not divisible by total stride 32")


def trace_shapes(spec: ModelSpec) -> Dict[str, tuple]:
    """Closed-form shape propagation (no tensor allocation).

    Returns per-stage feature shapes, channel-first without the batch axis,
    plus the decoder output scales where applicable.
    """
    _validate_input_size(spec)
    w = spec.base_width
    out: Dict[str, tuple] = {}
    if spec.is_3d:
        c, t, h, w_in = spec.input_size
        t1 = conv_out_extent(t, 3, 1, 1)
        h1 = conv_out_extent(h, 7, 2, 3)
        w1 = conv_out_extent(w_in, 7, 2, 3)
        out["conv1"] = (w, t1, h1, w1)
        hp = conv_out_extent(h1, 3, 2, 1)
        wp = conv_out_extent(w1, 3, 2, 1)
        out["pool"] = (w, t1, hp, wp)
        shapes = [(w, t1, hp, wp)]
        chans = [w, 2 * w, 4 * w, 8 * w]
        cur = (t1, hp, wp)
        for gi, ch in enumerate(chans, start=1):
            if gi > 1:
                cur = tuple(conv_out_extent(n, 3, 2, 1) for n in cur)
            out[f"group{gi}"] = (ch,) + cur
            shapes.append((ch,) + cur)
        out["encoder_out"] = out["group4"]
        out["flow_out"] = (2, t, h // 4, w_in // 4)
    else:
        c, h, w_in = spec.input_size
        h1 = conv_out_extent(h, 7, 2, 3)
        w1 = conv_out_extent(w_in, 7, 2, 3)
        out["conv1"] = (w, h1, w1)
        hp = conv_out_extent(h1, 3, 2, 1)
        wp = conv_out_extent(w1, 3, 2, 1)
        out["pool"] = (w, hp, wp)
        chans = [w, 2 * w, 4 * w, 8 * w]
        cur = (hp, wp)
        for gi, ch in enumerate(chans, start=1):
            if gi > 1:
                cur = tuple(conv_out_extent(n, 3, 2, 1) for n in cur)
            out[f"group{gi}"] = (ch,) + cur
        out["encoder_out"] = out["group4"]
        out["flow_scales"] = tuple((2, h // d, w_in // d) for d in (4, 8, 16, 32))
    return out


def _layer_rng(seed: int, name: str):
    return rngmod.stream(seed, "init", name)


class _Encoder2d:
    def __init__(self, spec: ModelSpec, seed: int, dtype):
        w = spec.base_width
        bn = spec.use_batchnorm
        in_ch = spec.input_size[0]
        mk = lambda name: _layer_rng(seed, name)
        self.conv1 = Conv2d("encoder.conv1", in_ch, w, 7, 2, 3, bias=not bn, rng=mk("encoder.conv1"), dtype=dtype)
        self.bn1 = BatchNorm("encoder.bn1", w, dtype=dtype) if bn else None
        self.pool = MaxPool2d(3, 2, 1)
        self.groups: List[List[BasicBlock2d]] = []
        ch_in = w
        for gi, ch in enumerate([w, 2 * w, 4 * w, 8 * w], start=1):
            stride = 1 if gi == 1 else 2
            blocks = [
                BasicBlock2d(f"encoder.group{gi}.block1", ch_in, ch, stride, bn, _layer_rng(seed, f"encoder.group{gi}.block1"), dtype),
                BasicBlock2d(f"encoder.group{gi}.block2", ch, ch, 1, bn, _layer_rng(seed, f"encoder.group{gi}.block2"), dtype),
            ]
            self.groups.append(blocks)
            ch_in = ch

    def __call__(self, x: Tensor, mode: str):
        h = self.conv1(x)
        if self.bn1 is not None:
            h = self.bn1(h, mode)
        h = relu(h)
        h = self.pool(h)
        skips = []
        for blocks in self.groups:
            for b in blocks:
                h = b(h, mode)
            skips.append(h)
        # skips[0..2] feed the decoder at 1/4, 1/8, 1/16; skips[3] is the output
        return h, skips[:3]

    def params(self):
        out = self.conv1.params() + ([] if self.bn1 is None else self.bn1.params())
        for blocks in self.groups:
            for b in blocks:
                out += b.params()
        return out

    def buffers(self):
        out = {} if self.bn1 is None else dict(self.bn1.buffers())
        for blocks in self.groups:
            for b in blocks:
                out.update(b.buffers())
        return out


def _spatial_pool3d(pool: MaxPool2d, x: Tensor) -> Tensor:
    n, c, t, h, w = x.shape
    flat = reshape(transpose(x, (0, 2, 1, 3, 4)), (n * t, c, h, w))
    pooled = pool(flat)
    hp, wp = pooled.shape[-2:]
    return transpose(reshape(pooled, (n, t, c, hp, wp)), (0, 2, 1, 3, 4))


class _Encoder3d:
    def __init__(self, spec: ModelSpec, seed: int, dtype):
        w = spec.base_width
        bn = spec.use_batchnorm
        in_ch = spec.input_size[0]
        self.conv1 = Conv3d(
            "encoder.conv1", in_ch, w, (3, 7, 7), (1, 2, 2), (1, 3, 3), bias=not bn,
            rng=_layer_rng(seed, "encoder.conv1"), dtype=dtype,
        )
        self.bn1 = BatchNorm("encoder.bn1", w, dtype=dtype) if bn else None
        self.pool = MaxPool2d(3, 2, 1)
        self.groups: List[List[BasicBlock3d]] = []
        ch_in = w
        for gi, ch in enumerate([w, 2 * w, 4 * w, 8 * w], start=1):
            stride = (1, 1, 1) if gi == 1 else (2, 2, 2)
            blocks = [
                BasicBlock3d(f"encoder.group{gi}.block1", ch_in, ch, stride, bn, _layer_rng(seed, f"encoder.group{gi}.block1"), dtype),
                BasicBlock3d(f"encoder.group{gi}.block2", ch, ch, (1, 1, 1), bn, _layer_rng(seed, f"encoder.group{gi}.block2"), dtype),
            ]
            self.groups.append(blocks)
            ch_in = ch

    def __call__(self, x: Tensor, mode: str):
        h = self.conv1(x)
        if self.bn1 is not None:
            h = self.bn1(h, mode)
        h = relu(h)
        h = _spatial_pool3d(self.pool, h)
        skips = []
        for blocks in self.groups:
            for b in blocks:
                h = b(h, mode)
            skips.append(h)
        return h, skips[:3]

    params = _Encoder2d.params
    buffers = _Encoder2d.buffers


class _Decoder2d:
    """Four-scale flow decoder with skip fusion and coarse-to-fine flow feedback."""

    def __init__(self, spec: ModelSpec, seed: int, dtype):
        w = spec.base_width
        mk = lambda name, *a, **kw: Conv2d(name, *a, rng=_layer_rng(seed, name), dtype=dtype, **kw)
        mkd = lambda name, *a, **kw: Deconv2d(name, *a, rng=_layer_rng(seed, name), dtype=dtype, **kw)
        self.pred32 = mk("decoder.pred32", 8 * w, 2, 3, 1, 1)
        self.stages = []
        for scale, cin, cskip, cout in ((16, 8 * w, 4 * w, 4 * w), (8, 4 * w, 2 * w, 2 * w), (4, 2 * w, w, w)):
            stage = {
                "scale": scale,
                "deconv": mkd(f"decoder.deconv{scale}", cin, cout, 4, 2, 1),
                "upflow": mkd(f"decoder.upflow{scale}", 2, 2, 4, 2, 1),
                "fuse": mk(f"decoder.fuse{scale}", cout + cskip + 2, cout, 1, 1, 0),
                "pred": mk(f"decoder.pred{scale}", cout, 2, 3, 1, 1),
            }
            self.stages.append(stage)

    def __call__(self, feat: Tensor, skips: Sequence[Tensor], ablate_skips=()) -> List[Tensor]:
        flows = []
        flow = self.pred32(feat)
        flows.append(flow)
        h = feat
        for stage, skip in zip(self.stages, reversed(skips)):
            out_hw = skip.shape[-2:]
            d = relu(stage["deconv"](h, out_hw=out_hw))
            fup = stage["upflow"](flow, out_hw=out_hw)
            if stage["scale"] in ablate_skips:
                skip = skip * 0.0
            h = relu(stage["fuse"](concat([d, skip, fup], axis=1)))
            flow = stage["pred"](h)
            flows.append(flow)
        return flows[::-1]  # finest (1/4) first

    def params(self):
        out = self.pred32.params()
        for s in self.stages:
            for key in ("deconv", "upflow", "fuse", "pred"):
                out += s[key].params()
        return out

    def buffers(self):
        return {}


class _Decoder3d:
    """Mirrors the 3D encoder back to (T, H/4, W/4); single finest-scale output."""

    def __init__(self, spec: ModelSpec, seed: int, dtype):
        w = spec.base_width
        mk3 = lambda name, *a, **kw: Conv3d(name, *a, rng=_layer_rng(seed, name), dtype=dtype, **kw)
        mkd3 = lambda name, *a, **kw: Deconv3d(name, *a, rng=_layer_rng(seed, name), dtype=dtype, **kw)
        self.stages = []
        for scale, cin, cskip, cout in ((16, 8 * w, 4 * w, 4 * w), (8, 4 * w, 2 * w, 2 * w), (4, 2 * w, w, w)):
            self.stages.append(
                {
                    "scale": scale,
                    "deconv": mkd3(f"decoder.deconv{scale}", cin, cout, 4, 2, 1),
                    "fuse": mk3(f"decoder.fuse{scale}", cout + cskip, cout, 1, 1, 0),
                }
            )
        self.pred = mk3("decoder.pred4", w, 2, 3, 1, 1)

    def __call__(self, feat: Tensor, skips: Sequence[Tensor], ablate_skips=()) -> Tensor:
        h = feat
        for stage, skip in zip(self.stages, reversed(skips)):
            out_thw = skip.shape[-3:]
            d = relu(stage["deconv"](h, out_thw=out_thw))
            if stage["scale"] in ablate_skips:
                skip = skip * 0.0
            h = relu(stage["fuse"](concat([d, skip], axis=1)))
        return self.pred(h)

    def params(self):
        out = []
        for s in self.stages:
            out += s["deconv"].params() + s["fuse"].params()
        return out + self.pred.params()

    def buffers(self):
        return {}


class _Classifier:
    def __init__(self, spec: ModelSpec, seed: int, dtype, in_features: int):
        self.dropout = Dropout(spec.dropout)
        self.fc = Linear("classifier.fc", in_features, spec.num_classes, rng=_layer_rng(seed, "classifier.fc"), dtype=dtype)

    def __call__(self, feat: Tensor, mode: str, rng=None) -> Tensor:
        pooled = global_avg_pool(feat)
        return self.fc(self.dropout(pooled, mode, rng))

    def params(self):
        return self.fc.params()

    def buffers(self):
        return {}


class Model:
    """A built network: encoder, optional flow decoder, optional classifier."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        if spec.variant == "stacked2f":
            raise ValueError("stacked2f is assembled from a trained flow model; use build_stacked")
        _validate_input_size(spec)
        self.spec = spec
        self.seed = seed
        enc_cls = _Encoder3d if spec.is_3d else _Encoder2d
        self.encoder = enc_cls(spec, seed, dtype)
        self.decoder = None
        if spec.has_decoder:
            dec_cls = _Decoder3d if spec.is_3d else _Decoder2d
            self.decoder = dec_cls(spec, seed, dtype)
        self.classifier = None
        if spec.has_classifier:
            self.classifier = _Classifier(spec, seed, dtype, in_features=8 * spec.base_width)

    # -- forward passes -----------------------------------------------------

    def forward(self, x, mode: str = "eval", rng=None, need_flow: Optional[bool] = None,
                need_logits: Optional[bool] = None, ablate_skips=()):
        """Shared-encoder forward. Returns (logits or None, flows or None)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.ascontiguousarray(x))
        expect = self.spec.input_size
        if tuple(x.shape[1:]) != expect:
            raise ShapeError(f"input shaped {tuple(x.shape[1:])} but model expects {expect}")
        if need_flow is None:
            need_flow = self.decoder is not None
        if need_logits is None:
            need_logits = self.classifier is not None
        if need_flow and self.decoder is None:
            raise ShapeError(f"variant {self.spec.variant} has no decoder (or it was stripped)")
        if need_logits and self.classifier is None:
            raise ShapeError(f"variant {self.spec.variant} has no classifier")
        feat, skips = self.encoder(x, mode)
        logits = self.classifier(feat, mode, rng) if need_logits else None
        flows = self.decoder(feat, skips, ablate_skips) if need_flow else None
        return logits, flows

    def forward_flow(self, x, mode: str = "eval", ablate_skips=()):
        """Two-frame: list of 4 flow tensors, finest (1/4) first.
        Multi-frame: one (N,2,T,H/4,W/4) tensor covering all T frames."""
        _, flows = self.forward(x, mode, need_flow=True, need_logits=False, ablate_skips=ablate_skips)
        return flows

    def forward_action(self, x, mode: str = "eval", rng=None):
        logits, _ = self.forward(x, mode, rng=rng, need_flow=False, need_logits=True)
        return logits

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> List[Parameter]:
        out = self.encoder.params()
        if self.decoder is not None:
            out += self.decoder.params()
        if self.classifier is not None:
            out += self.classifier.params()
        return out

    def trainable_params(self) -> List[Parameter]:
        return [p for p in self.params() if p.requires_grad]

    def named_params(self) -> Dict[str, Parameter]:
        out = {}
        for p in self.params():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def buffers(self) -> Dict[str, np.ndarray]:
        out = dict(self.encoder.buffers())
        if self.decoder is not None:
            out.update(self.decoder.buffers())
        if self.classifier is not None:
            out.update(self.classifier.buffers())
        return out

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_params().items()}
        out.update(self.buffers())
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True):
        own = self.state_dict()
        problems = []
        for name, arr in own.items():
            if name not in state:
                if strict:
                    problems.append(f"missing {name}")
                continue
            src = state[name]
            if tuple(src.shape) != tuple(arr.shape):
                problems.append(f"shape mismatch {name}: {src.shape} vs {arr.shape}")
                continue
            arr[...] = src
        if strict:
            extra = set(state) - set(own)
            problems += [f"unexpected {n}" for n in sorted(extra)]
        if problems:
            raise ShapeError("state dict mismatch: " + "; ".join(problems))

    def freeze(self):
        for p in self.params():
            p.requires_grad = False
        return self

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params()))


class StackedModel:
    """Classifier stacked on a frozen flow estimator's finest output.

    The classifier reuses the residual trunk minus conv1/pool (the flow is
    already at 1/4 resolution) with 2 input channels.
    """

    def __init__(self, flow_model: Model, num_classes: int = 8, seed: int = 0, dtype=np.float32):
        if flow_model.decoder is None:
            raise ShapeError("stacked model needs a flow-capable base model")
        if flow_model.spec.is_3d:
            raise ShapeError("stacked model is defined for the two-frame estimator")
        flow_model.freeze()
        self.flow_model = flow_model
        w = flow_model.spec.base_width
        bn = flow_model.spec.use_batchnorm
        self.spec = ModelSpec(
            "stacked2f",
            flow_model.spec.input_size,
            flow_model.spec.width_mult,
            num_classes,
            bn,
            flow_model.spec.dropout,
        )
        self.seed = seed
        self.groups: List[List[BasicBlock2d]] = []
        ch_in = 2
        for gi, ch in enumerate([w, 2 * w, 4 * w, 8 * w], start=1):
            stride = 1 if gi == 1 else 2
            blocks = [
                BasicBlock2d(f"cls.group{gi}.block1", ch_in, ch, stride, bn, _layer_rng(seed, f"cls.group{gi}.block1"), dtype),
                BasicBlock2d(f"cls.group{gi}.block2", ch, ch, 1, bn, _layer_rng(seed, f"cls.group{gi}.block2"), dtype),
            ]
            self.groups.append(blocks)
            ch_in = ch
        self.dropout = Dropout(flow_model.spec.dropout)
        self.fc = Linear("cls.fc", 8 * w, num_classes, rng=_layer_rng(seed, "cls.fc"), dtype=dtype)

    def predict_flow(self, x) -> np.ndarray:
        with no_grad():
            flows = self.flow_model.forward_flow(x, mode="eval")
        return flows[0].data

    def forward_action(self, x, mode: str = "eval", rng=None) -> Tensor:
        h = Tensor(self.predict_flow(x))
        for blocks in self.groups:
            for b in blocks:
                h = b(h, mode)
        pooled = global_avg_pool(h)
        return self.fc(self.dropout(pooled, mode, rng))

    def params(self) -> List[Parameter]:
        out = list(self.flow_model.params())
        for blocks in self.groups:
            for b in blocks:
                out += b.params()
        return out + self.fc.params()

    def trainable_params(self) -> List[Parameter]:
        return [p for p in self.params() if p.requires_grad]

    def buffers(self) -> Dict[str, np.ndarray]:
        out = dict(self.flow_model.buffers())
        for blocks in self.groups:
            for b in blocks:
                out.update(b.buffers())
        return out

    def named_params(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.params()}

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {p.name: p.data for p in self.params()}
        out.update(self.buffers())
        return out

    load_state_dict = Model.load_state_dict

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params()))


def build(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    return Model(spec, seed, dtype)


def build_stacked(flow_model: Model, num_classes: int = 8, seed: int = 0, dtype=np.float32) -> StackedModel:
    return StackedModel(flow_model, num_classes, seed, dtype)


def strip_decoder(model: Model) -> Model:
    """Inference-time copy without the flow decoder.

    Shares the encoder/classifier parameter objects, so classification
    outputs are bit-identical to the full model; forward_flow is refused.
    """
    if model.decoder is None:
        raise ShapeError("model has no decoder to strip")
    stripped = copy.copy(model)
    stripped.decoder = None
    return stripped


def transfer_encoder(src: Model, dst: Model) -> Model:
    """Copy encoder weights (and batch-norm buffers) from src into dst by
    name. The destination classifier/decoder keep their fresh init."""
    src_state = src.state_dict()
    problems = []
    copied = 0
    for name, arr in dst.state_dict().items():
        if not name.startswith("encoder."):
            continue
        if name not in src_state:
            problems.append(f"missing {name}")
            continue
        if tuple(src_state[name].shape) != tuple(arr.shape):
            problems.append(f"shape mismatch {name}: {src_state[name].shape} vs {arr.shape}")
            continue
        arr[...] = src_state[name]
        copied += 1
    if problems:
        raise ShapeError("encoder transfer failed: " + "; ".join(problems))
    if copied == 0:
        raise ShapeError("encoder transfer copied nothing")
    return dst
