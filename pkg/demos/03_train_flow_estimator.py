"""Train a small two-frame flow estimator and render its predictions.

A shortened version of the full desk-scale run (a few hundred steps on a
reduced dataset) that still learns visible structure. Writes predicted vs
true flow images to demos/output/flow/.

Run:  python3 demos/03_train_flow_estimator.py     (about 2 minutes)
"""

import time
from pathlib import Path

import numpy as np

from actionflow import ModelSpec, build, displacement_profile, generate_dataset
from actionflow.evaluation import flow_to_rgb
from actionflow.flowio import write_png
from actionflow.losses import resample_flow
from actionflow.synthdata import AugmentPolicy
from actionflow.tensor import no_grad
from actionflow.trainer import TrainConfig, clip_pair_input, eval_flow, train

out = Path(__file__).parent / "output" / "flow"
out.mkdir(parents=True, exist_ok=True)

dist = displacement_profile("matched", height=64, width=64, frames=2)
ds = generate_dataset(3, dist, counts=(200, 32, 32))
print("dataset ready")

model = build(ModelSpec("flownet2f", (6, 64, 64), width_mult=0.25), seed=0)
cfg = TrainConfig(
    regime="flow-only",
    iterations=400,
    batch_size=16,
    lr=1e-4,
    eval_interval=100,
    augment_policy=AugmentPolicy(hflip=True),
    seed=0,
)
t0 = time.time()
result = train(model, ds, cfg)
print(f"trained {cfg.iterations} steps in {time.time() - t0:.0f}s")
for step, v in result.log.values("val", "epe"):
    print(f"  step {step:4d}  val per-pixel EPE {v:.3f}")
print(f"held-out EPE: {eval_flow(model, ds.test):.3f}")

# side-by-side renderings for a few test clips
for i, clip in enumerate(ds.test[:4]):
    x, gt = clip_pair_input(clip, 0)
    with no_grad():
        pred = model.forward_flow(x[None])[0].data[0]
    gt_small = resample_flow(gt, out_hw=pred.shape[-2:])
    scale = max(np.hypot(*gt_small).max(), 1e-3)
    write_png(out / f"clip{i}_pred.png", flow_to_rgb(pred, max_mag=scale))
    write_png(out / f"clip{i}_true.png", flow_to_rgb(gt_small, max_mag=scale))
print(f"renderings in {out}")
