"""Command-line entry point.

Subcommands: datagen, train, eval, flow, occlude, study. Every subcommand
takes --config PATH (JSON, see config module), with --seed and --out
overriding the config's seed and output directory. Diagnostics go to
stderr with a CONFIG: / IO: / SHAPE: prefix and a nonzero exit code.

The AFN_THREADS environment variable caps worker threads (BLAS pools
included when threadpoolctl is available).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError


def _apply_thread_cap():
    cap = os.environ.get("AFN_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        raise ConfigError(f"AFN_THREADS must be an integer, got {cap!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


def _require(value, name):
    if value is None:
        raise ConfigError(f"this subcommand needs io.{name} in the config")
    return value


def _load_cfg(args):
    from .config import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.data_seed = args.seed
        cfg.train.seed = args.seed
    if args.out is not None:
        cfg.out_dir = Path(args.out).resolve()
    return cfg


def _get_dataset(cfg):
    from . import synthdata

    if cfg.data_dir is not None:
        return synthdata.load_dataset(cfg.data_dir)
    return synthdata.generate_dataset(cfg.data_seed, cfg.distribution(), cfg.data_counts)


def cmd_datagen(args) -> int:
    from . import synthdata

    cfg = _load_cfg(args)
    out = _require(cfg.out_dir, "out")
    ds = synthdata.generate_dataset(cfg.data_seed, cfg.distribution(), cfg.data_counts)
    synthdata.save_dataset(out, ds)
    total = len(ds.train) + len(ds.val) + len(ds.test)
    print(f"wrote {total} clips to {out}")
    return 0


def cmd_train(args) -> int:
    from . import checkpoint, models, trainer

    cfg = _load_cfg(args)
    out = _require(cfg.out_dir, "out")
    ds = _get_dataset(cfg)
    spec = cfg.model_spec()
    source_state = None
    if cfg.train.source_checkpoint:
        _, source_state = checkpoint.load_checkpoint(cfg.train.source_checkpoint)
    if spec.variant == "stacked2f":
        if source_state is None:
            raise ConfigError("stacked2f training needs train.source_checkpoint (a flow model)")
        flow_model = checkpoint.load_model(cfg.train.source_checkpoint)
        model = models.build_stacked(flow_model, spec.num_classes, seed=cfg.train.seed)
        cfg.train.regime = "stacked-classifier"
        source_state = None
    else:
        model = models.build(spec, seed=cfg.train.seed)
    result = trainer.train(model, ds, cfg.train, source_state=source_state, out_dir=out)
    best = result.log.values("val", "accuracy") or result.log.values("val", "epe")
    tail = f", final val {best[-1][1]:.4f}" if best else ""
    print(f"trained {spec.variant} for {cfg.train.iterations} iterations{tail}; artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    from . import checkpoint, evaluation, synthdata

    cfg = _load_cfg(args)
    out = _require(cfg.out_dir, "out")
    model = checkpoint.load_model(_require(cfg.checkpoint, "checkpoint"))
    ds = synthdata.load_dataset(_require(cfg.dataset_dir, "dataset"))
    clips = ds.test or ds.val or ds.train
    result = evaluation.evaluate(model, clips, cfg.protocol)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(result.to_csv())
    print(f"accuracy {result.accuracy:.4f} over {len(clips)} clips; report in {out}")
    return 0


def cmd_flow(args) -> int:
    from . import checkpoint, evaluation, flowio, synthdata, trainer
    from .tensor import no_grad

    cfg = _load_cfg(args)
    out = Path(_require(cfg.out_dir, "out"))
    model = checkpoint.load_model(_require(cfg.checkpoint, "checkpoint"))
    clip = synthdata.load_clip(_require(cfg.clip_dir, "clip"))
    out.mkdir(parents=True, exist_ok=True)
    with no_grad():
        if model.spec.is_3d:
            vol = trainer.clip_volume_input(clip)[0][None]
            pred = model.forward_flow(vol, mode="eval").data[0]  # (2,T,h,w)
            flows = [pred[:, t] for t in range(pred.shape[1])]
        else:
            flows = []
            for t in range(clip.spec.frames - 1):
                x = trainer.clip_pair_input(clip, t)[0][None]
                flows.append(model.forward_flow(x, mode="eval")[0].data[0])
    for t, f in enumerate(flows):
        flowio.write_flo(out / f"flow_{t:03d}.flo", f)
        flowio.write_png(out / f"flow_{t:03d}.png", evaluation.flow_to_rgb(f))
    print(f"wrote {len(flows)} flow fields to {out}")
    return 0


def cmd_occlude(args) -> int:
    from . import checkpoint, evaluation, flowio, synthdata

    cfg = _load_cfg(args)
    out = Path(_require(cfg.out_dir, "out"))
    model = checkpoint.load_model(_require(cfg.checkpoint, "checkpoint"))
    clip = synthdata.load_clip(_require(cfg.clip_dir, "clip"))
    smap = evaluation.occlusion_map(model, clip)
    out.mkdir(parents=True, exist_ok=True)
    (out / "saliency.csv").write_text(smap.to_csv())
    drops = smap.drops
    rng = drops.max() - drops.min()
    norm = (drops - drops.min()) / (rng if rng > 1e-12 else 1.0)
    flowio.write_png(out / "saliency.png", np.repeat(norm[None], 3, axis=0))
    print(f"saliency grid {drops.shape} (base confidence {smap.base_confidence:.4f}) in {out}")
    return 0


def cmd_study(args) -> int:
    from . import evaluation, synthdata
    from .trainer import TrainConfig

    cfg = _load_cfg(args)
    out = Path(_require(cfg.out_dir, "out"))
    res = cfg.data_resolution
    flow_datasets = {}
    for profile in ("small", "large", "matched"):
        dist = synthdata.displacement_profile(profile, height=res, width=res, frames=2)
        flow_datasets[profile] = synthdata.generate_dataset(cfg.data_seed, dist, cfg.data_counts)
    action_dist = synthdata.displacement_profile("small", height=res, width=res, frames=cfg.data_frames)
    action_ds = synthdata.generate_dataset(cfg.data_seed + 1, action_dist, cfg.data_counts)
    bench = flow_datasets["large"].test
    spec = cfg.model_spec()
    flow_cfg = TrainConfig(
        regime="flow-only", iterations=cfg.train.iterations, batch_size=cfg.train.batch_size,
        lr=cfg.train.lr, alpha=cfg.train.alpha, eval_interval=cfg.train.eval_interval,
        augment_policy=cfg.train.augment_policy,
    )
    stacked_cfg = TrainConfig(
        regime="stacked-classifier", iterations=cfg.train.iterations, batch_size=cfg.train.batch_size,
        lr=cfg.train.lr, eval_interval=cfg.train.eval_interval, augment_policy=cfg.train.augment_policy,
    )
    rows = evaluation.flow_quality_study(
        flow_datasets, action_ds, bench, flow_cfg, stacked_cfg, spec,
        seeds=(cfg.train.seed,), protocol=cfg.protocol,
    )
    out.mkdir(parents=True, exist_ok=True)
    (out / "study.csv").write_text(evaluation.study_rows_csv(rows))
    table = evaluation.format_study_report(rows)
    (out / "study.txt").write_text(table)
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actionflow",
        description="Joint optical-flow estimation and action recognition on synthetic video.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in (
        ("datagen", cmd_datagen, "generate a synthetic clip dataset"),
        ("train", cmd_train, "train a model per the config"),
        ("eval", cmd_eval, "protocol evaluation of a checkpoint"),
        ("flow", cmd_flow, "predict flow for one clip, write .flo + PNG"),
        ("occlude", cmd_occlude, "occlusion saliency for one clip"),
        ("study", cmd_study, "flow quality vs recognition study"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        return args.fn(args)
    except ConfigError as exc:
        print(f"CONFIG: {exc}", file=sys.stderr)
        return 2
    except ShapeError as exc:
        print(f"SHAPE: {exc}", file=sys.stderr)
        return 3
    except (FormatError, OSError) as exc:
        print(f"IO: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
