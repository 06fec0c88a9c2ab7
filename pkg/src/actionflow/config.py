"""Run configuration: a JSON document with data / model / train / eval / io
sections. Unknown keys are rejected; all paths resolve relative to the
config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

from .errors import ConfigError
from .evaluation import EvalProtocol
from .models import VARIANTS, ModelSpec
from .synthdata import AugmentPolicy, SpecDistribution, displacement_profile
from .trainer import REGIMES, TrainConfig

_SECTION_KEYS = {
    "data": {"profile", "counts", "resolution", "frames", "seed", "dir"},
    "model": {"variant", "width", "classes"},
    "train": {
        "regime",
        "iterations",
        "batch",
        "lr",
        "lambda",
        "alpha",
        "seed",
        "eval_interval",
        "source_checkpoint",
        "hflip",
        "crop_scales",
        "color_jitter",
        "snapshot_interval",
    },
    "eval": {"segments", "crops", "crop_scale", "seed"},
    "io": {"out", "checkpoint", "dataset", "clip"},
}


@dataclass
class RunConfig:
    base_dir: Path
    data_profile: str = "small"
    data_counts: Tuple[int, int, int] = (800, 160, 160)
    data_resolution: int = 64
    data_frames: int = 8
    data_seed: int = 0
    data_dir: Optional[Path] = None
    model_variant: str = "actionflownet2f"
    model_width: float = 0.25
    model_classes: int = 8
    train: TrainConfig = field(default_factory=TrainConfig)
    protocol: EvalProtocol = field(default_factory=EvalProtocol)
    out_dir: Optional[Path] = None
    checkpoint: Optional[Path] = None
    dataset_dir: Optional[Path] = None
    clip_dir: Optional[Path] = None

    def distribution(self) -> SpecDistribution:
        return displacement_profile(
            self.data_profile,
            height=self.data_resolution,
            width=self.data_resolution,
            frames=self.data_frames,
        )

    def model_spec(self) -> ModelSpec:
        variant = self.model_variant.lower()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {variant!r}; expected one of {VARIANTS}")
        r = self.data_resolution
        if variant in ("flownet3d", "actionflownet3d"):
            input_size = (3, self.data_frames, r, r)
        else:
            input_size = (6, r, r)
        return ModelSpec(variant, input_size, self.model_width, self.model_classes)


def _check_keys(section: str, d: dict):
    allowed = _SECTION_KEYS[section]
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _resolve(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p).resolve()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - set(_SECTION_KEYS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    base = path.parent
    cfg = RunConfig(base_dir=base)

    data = doc.get("data", {})
    _check_keys("data", data)
    cfg.data_profile = data.get("profile", cfg.data_profile)
    if "counts" in data:
        counts = data["counts"]
        if not (isinstance(counts, list) and len(counts) == 3):
            raise ConfigError("data.counts must be [train, val, test]")
        cfg.data_counts = tuple(int(c) for c in counts)
    cfg.data_resolution = int(data.get("resolution", cfg.data_resolution))
    cfg.data_frames = int(data.get("frames", cfg.data_frames))
    cfg.data_seed = int(data.get("seed", cfg.data_seed))
    if "dir" in data:
        cfg.data_dir = _resolve(base, data["dir"])

    model = doc.get("model", {})
    _check_keys("model", model)
    cfg.model_variant = model.get("variant", cfg.model_variant)
    cfg.model_width = float(model.get("width", cfg.model_width))
    cfg.model_classes = int(model.get("classes", cfg.model_classes))

    tr = doc.get("train", {})
    _check_keys("train", tr)
    regime = tr.get("regime", "multitask")
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    policy = AugmentPolicy(
        hflip=bool(tr.get("hflip", True)),
        crop_scales=tuple(tr.get("crop_scales", [1.0])),
        color_jitter=bool(tr.get("color_jitter", False)),
    )
    cfg.train = TrainConfig(
        regime=regime,
        iterations=int(tr.get("iterations", 2000)),
        batch_size=int(tr.get("batch", 16)),
        lr=float(tr.get("lr", 1e-4)),
        lam=float(tr.get("lambda", 1.0)),
        alpha=tuple(float(a) for a in tr.get("alpha", [1.0, 1.0, 1.0, 1.0])),
        seed=int(tr.get("seed", cfg.data_seed)),
        eval_interval=int(tr.get("eval_interval", 200)),
        augment_policy=policy,
        snapshot_interval=tr.get("snapshot_interval"),
        source_checkpoint=tr.get("source_checkpoint"),
    )
    if cfg.train.source_checkpoint is not None:
        cfg.train.source_checkpoint = str(_resolve(base, cfg.train.source_checkpoint))

    ev = doc.get("eval", {})
    _check_keys("eval", ev)
    cfg.protocol = EvalProtocol(
        segments=int(ev.get("segments", 25)),
        crops=int(ev.get("crops", 10)),
        crop_scale=float(ev.get("crop_scale", 0.875)),
        seed=int(ev.get("seed", 0)),
    )

    io = doc.get("io", {})
    _check_keys("io", io)
    if "out" in io:
        cfg.out_dir = _resolve(base, io["out"])
    if "checkpoint" in io:
        cfg.checkpoint = _resolve(base, io["checkpoint"])
    if "dataset" in io:
        cfg.dataset_dir = _resolve(base, io["dataset"])
    if "clip" in io:
        cfg.clip_dir = _resolve(base, io["clip"])
    return cfg
