"""Procedural video corpus with analytic ground-truth optical flow.

Each clip shows one textured rigid object (ellipse or regular polygon)
moving over a static textured background under a similarity motion:
translation, rotation about its center, or uniform growth/shrink. The
eight action classes are defined purely by the motion, never by texture,
so appearance carries no class signal by design.

Because the motion is known in closed form, the per-frame flow is exact:
a pixel belonging to the object at time t is displaced by the object's
t -> t+1 similarity transform; background pixels have zero flow. The clip
stores T flow fields: T-1 between observed frames plus one future field
(frame T-1 to the hidden frame T, which only exists during generation).

Rendering supersamples 4x per axis and box-averages, so sub-pixel motion
shows up as smooth intensity change instead of collapsing to static
frames. Textures are bilinear surfaces over coarse random grids, which
keeps backward-warp reconstruction accurate away from occlusions.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from . import rng as rngmod
from .errors import ConfigError, FormatError
from .imageops import box_downsample, resize_bilinear, sample_bilinear, warp_backward

__all__ = [
    "MOTION_CLASSES",
    "SceneSpec",
    "Clip",
    "ClipDataset",
    "SpecDistribution",
    "displacement_profile",
    "sample_scene",
    "render_frame",
    "analytic_flow",
    "object_mask",
    "valid_warp_mask",
    "make_clip",
    "generate",
    "generate_dataset",
    "AugmentPolicy",
    "augment",
    "hflip_arrays",
    "save_dataset",
    "load_dataset",
    "save_clip",
    "load_clip",
]

MOTION_CLASSES = (
    "translate_n",
    "translate_e",
    "translate_s",
    "translate_w",
    "rotate_cw",
    "rotate_ccw",
    "expand",
    "contract",
)


@dataclass
class SceneSpec:
    """Full recipe for one clip; everything downstream is a pure function of it."""

    label: int
    shape_kind: str  # "ellipse" | "polygon"
    n_sides: int
    radius: float  # circumradius / semi-major axis at t=0, px
    aspect: float  # ellipse minor/major ratio (1.0 for circles); unused for polygons
    center: Tuple[float, float]  # (x, y) at t=0
    angle: float  # initial orientation, rad
    velocity: Tuple[float, float]  # px/frame
    omega: float  # rad/frame, positive = clockwise in image coords
    radius_rate: float  # px/frame added to the radius (expand > 0 > contract)
    obj_seed: int
    bg_seed: int
    frames: int  # T
    height: int
    width: int
    supersample: int = 4
    uid: int = 0

    def scale_at(self, t: float) -> float:
        return (self.radius + self.radius_rate * t) / self.radius

    def center_at(self, t: float) -> Tuple[float, float]:
        return (self.center[0] + self.velocity[0] * t, self.center[1] + self.velocity[1] * t)

    def angle_at(self, t: float) -> float:
        return self.angle + self.omega * t

    def outer_radius_at(self, t: float) -> float:
        return self.radius + self.radius_rate * t

    def max_displacement_at(self, t: int) -> float:
        """Exact bound on object-pixel displacement between frames t and t+1."""
        rho = self.scale_at(t + 1) / self.scale_at(t)
        stretch = math.sqrt(rho * rho - 2.0 * rho * math.cos(self.omega) + 1.0)
        v = math.hypot(*self.velocity)
        return v + stretch * self.outer_radius_at(t)

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["center"] = tuple(d["center"])
        d["velocity"] = tuple(d["velocity"])
        return cls(**d)


@dataclass
class Clip:
    """T frames (uint8 RGB), T flow fields (float32, last one the future flow),
    and the motion-defined class label."""

    frames: np.ndarray  # (T, 3, H, W) uint8
    flows: np.ndarray  # (T, 2, H, W) float32
    label: int
    spec: SceneSpec

    @property
    def uid(self) -> int:
        return self.spec.uid

    def frames_float(self) -> np.ndarray:
        return self.frames.astype(np.float32) / 255.0


@dataclass
class ClipDataset:
    train: List[Clip]
    val: List[Clip]
    test: List[Clip]
    profile: str = ""
    seed: int = 0

    def split(self, name: str) -> List[Clip]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


@dataclass
class SpecDistribution:
    """Sampling ranges for scene generation. ``bands`` lists the admissible
    per-frame peak-displacement intervals; a clip draws one band uniformly.
    The object radius scales with the frame (14-22% of the short side)
    unless overridden."""

    bands: Tuple[Tuple[float, float], ...]
    height: int = 64
    width: int = 64
    frames: int = 8
    radius_range: Optional[Tuple[float, float]] = None
    aspect_range: Tuple[float, float] = (0.65, 1.0)
    sides_range: Tuple[int, int] = (3, 6)
    margin: float = 1.5
    supersample: int = 4
    name: str = ""

    def __post_init__(self):
        if self.radius_range is None:
            side = min(self.height, self.width)
            self.radius_range = (0.14 * side, 0.22 * side)


def displacement_profile(name: str, **overrides) -> SpecDistribution:
    """small / large / matched per-frame displacement regimes."""
    if name == "small":
        bands = ((0.25, 1.5),)
    elif name == "large":
        bands = ((4.0, 10.0),)
    elif name == "matched":
        bands = ((0.25, 1.5), (4.0, 10.0))
    else:
        raise ConfigError(f"unknown displacement profile {name!r}")
    return SpecDistribution(bands=bands, name=name, **overrides)


def _rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _motion_for_class(label: int, disp: float, radius: float, frames: int, rng) -> Optional[dict]:
    """Velocity / omega / radius_rate realizing peak displacement ``disp``.

    Returns None when the draw cannot satisfy the displacement band over
    the whole clip (caller resamples).
    """
    name = MOTION_CLASSES[label]
    out = {"velocity": (0.0, 0.0), "omega": 0.0, "radius_rate": 0.0}
    if name.startswith("translate"):
        base = {"translate_n": -math.pi / 2, "translate_e": 0.0, "translate_s": math.pi / 2, "translate_w": math.pi}[name]
        ang = base + rng.uniform(-0.35, 0.35)
        out["velocity"] = (disp * math.cos(ang), disp * math.sin(ang))
        return out
    if name.startswith("rotate"):
        ratio = disp / (2.0 * radius)
        if ratio >= 0.95:
            return None
        omega = 2.0 * math.asin(ratio)
        out["omega"] = omega if name == "rotate_cw" else -omega
        return out
    rate = disp if name == "expand" else -disp
    if radius + rate * frames < 2.5:
        return None
    out["radius_rate"] = rate
    return out


def sample_scene(rng: np.random.Generator, dist: SpecDistribution, label: int, uid: int = 0) -> SceneSpec:
    """Rejection-sample a feasible scene: object inside the frame for all
    T+1 states and per-frame peak displacement inside the chosen band."""
    T = dist.frames
    for _ in range(300):
        lo, hi = dist.bands[rng.integers(0, len(dist.bands))]
        disp = float(rng.uniform(lo, hi))
        if MOTION_CLASSES[label] == "contract":
            # a shrinking object must start large enough to survive T frames
            r_min = max(dist.radius_range[0], disp * T + 3.0)
            r_max = max(0.45 * min(dist.height, dist.width) - dist.margin, dist.radius_range[1])
            if r_min >= r_max:
                continue
            radius = float(rng.uniform(r_min, r_max))
        else:
            radius = float(rng.uniform(*dist.radius_range))
        kind = "ellipse" if rng.random() < 0.5 else "polygon"
        n_sides = int(rng.integers(dist.sides_range[0], dist.sides_range[1] + 1))
        aspect = float(rng.uniform(*dist.aspect_range)) if kind == "ellipse" else 1.0
        motion = _motion_for_class(label, disp, radius, T, rng)
        if motion is None:
            continue
        spec = SceneSpec(
            label=label,
            shape_kind=kind,
            n_sides=n_sides,
            radius=radius,
            aspect=aspect,
            center=(0.0, 0.0),
            angle=float(rng.uniform(0, 2 * math.pi)),
            obj_seed=int(rng.integers(0, 2**31 - 1)),
            bg_seed=int(rng.integers(0, 2**31 - 1)),
            frames=T,
            height=dist.height,
            width=dist.width,
            supersample=dist.supersample,
            uid=uid,
            **motion,
        )
        # displacement band must hold for every transition, future included
        disps = [spec.max_displacement_at(t) for t in range(T)]
        if min(disps) < lo - 1e-9 or max(disps) > hi * 1.35:
            continue
        # feasible start centers: object fully inside for t = 0 .. T
        m = dist.margin
        xlo = xhi = ylo = yhi = None
        ok = True
        for t in range(T + 1):
            r = spec.outer_radius_at(t) + m
            cx_lo, cx_hi = r - spec.velocity[0] * t, dist.width - 1 - r - spec.velocity[0] * t
            cy_lo, cy_hi = r - spec.velocity[1] * t, dist.height - 1 - r - spec.velocity[1] * t
            xlo = cx_lo if xlo is None else max(xlo, cx_lo)
            xhi = cx_hi if xhi is None else min(xhi, cx_hi)
            ylo = cy_lo if ylo is None else max(ylo, cy_lo)
            yhi = cy_hi if yhi is None else min(yhi, cy_hi)
            if xlo > xhi or ylo > yhi:
                ok = False
                break
        if not ok:
            continue
        spec.center = (float(rng.uniform(xlo, xhi)), float(rng.uniform(ylo, yhi)))
        return spec
    raise ConfigError(
        f"infeasible bounds: no {MOTION_CLASSES[label]} scene fits a "
        f"{dist.height}x{dist.width} frame over {T + 1} states"
    )


# ---------------------------------------------------------------------------
# rendering


def _texture_grid(seed: int, cells: int) -> np.ndarray:
    g = rngmod.stream(seed, "texture")
    return g.uniform(0.06, 0.94, size=(3, cells, cells))


def _object_coords(spec: SceneSpec, t: float, xs: np.ndarray, ys: np.ndarray):
    """World points -> unit object frame (shape has circumradius 1)."""
    cx, cy = spec.center_at(t)
    s = spec.outer_radius_at(t)
    rot = _rotation(-spec.angle_at(t))
    dx = (xs - cx) / s
    dy = (ys - cy) / s
    ux = rot[0, 0] * dx + rot[0, 1] * dy
    uy = rot[1, 0] * dx + rot[1, 1] * dy
    return ux, uy


def _inside_unit_shape(spec: SceneSpec, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
    if spec.shape_kind == "ellipse":
        return (ux * ux) + (uy / spec.aspect) ** 2 <= 1.0
    n = spec.n_sides
    apothem = math.cos(math.pi / n)
    inside = np.ones(ux.shape, dtype=bool)
    for k in range(n):
        phi = 2.0 * math.pi * k / n + math.pi / n
        inside &= (ux * math.cos(phi) + uy * math.sin(phi)) <= apothem
    return inside


def _inside_at(spec: SceneSpec, t: float, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Inside test at world coords; circles skip the rotation so their mask
    is numerically identical across frames of a pure rotation."""
    cx, cy = spec.center_at(t)
    s = spec.outer_radius_at(t)
    dx = (xs - cx) / s
    dy = (ys - cy) / s
    if spec.shape_kind == "ellipse" and spec.aspect == 1.0:
        return dx * dx + dy * dy <= 1.0
    rot = _rotation(-spec.angle_at(t))
    return _inside_unit_shape(spec, rot[0, 0] * dx + rot[0, 1] * dy, rot[1, 0] * dx + rot[1, 1] * dy)


_OBJ_CELLS = 7
_BG_CELLS = 9


def _sample_texture(grid: np.ndarray, u: np.ndarray, v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Evaluate a coarse texture grid at coords in [lo, hi]^2."""
    cells = grid.shape[-1]
    gu = (u - lo) / (hi - lo) * (cells - 1)
    gv = (v - lo) / (hi - lo) * (cells - 1)
    return sample_bilinear(grid, gv, gu)


def _background(spec: SceneSpec) -> np.ndarray:
    ss = spec.supersample
    grid = _texture_grid(spec.bg_seed, _BG_CELLS)
    xs = (np.arange(spec.width * ss) + 0.5) / ss - 0.5
    ys = (np.arange(spec.height * ss) + 0.5) / ss - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    u = xx / (spec.width - 1)
    v = yy / (spec.height - 1)
    return _sample_texture(grid, u, v, 0.0, 1.0)


def render_frame(spec: SceneSpec, t: float, bg_ss: Optional[np.ndarray] = None) -> np.ndarray:
    """Render frame t (float (3,H,W) in [0,1]); t may exceed T-1 to produce
    the hidden frame behind the future flow."""
    ss = spec.supersample
    canvas = (bg_ss if bg_ss is not None else _background(spec)).copy()
    # supersampled coords covering the object's bounding box only
    cx, cy = spec.center_at(t)
    r = spec.outer_radius_at(t) * 1.05 + 1.0
    j0 = max(0, int((cx - r + 0.5) * ss))
    j1 = min(spec.width * ss, int((cx + r + 0.5) * ss) + 1)
    i0 = max(0, int((cy - r + 0.5) * ss))
    i1 = min(spec.height * ss, int((cy + r + 0.5) * ss) + 1)
    if j1 > j0 and i1 > i0:
        xs = (np.arange(j0, j1) + 0.5) / ss - 0.5
        ys = (np.arange(i0, i1) + 0.5) / ss - 0.5
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        inside = _inside_at(spec, t, xx, yy)
        if inside.any():
            ux, uy = _object_coords(spec, t, xx, yy)
            tex = _sample_texture(_texture_grid(spec.obj_seed, _OBJ_CELLS), ux, uy, -1.15, 1.15)
            region = canvas[:, i0:i1, j0:j1]
            canvas[:, i0:i1, j0:j1] = np.where(inside[None], tex, region)
    return box_downsample(canvas, ss).astype(np.float32)


def object_mask(spec: SceneSpec, t: float) -> np.ndarray:
    """Boolean (H,W) mask: pixel centers inside the object at time t."""
    xs = np.arange(spec.width, dtype=np.float64)
    ys = np.arange(spec.height, dtype=np.float64)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _inside_at(spec, t, xx, yy)


def analytic_flow(spec: SceneSpec, t: int) -> np.ndarray:
    """Exact flow (2,H,W): similarity displacement on object pixels, zero
    elsewhere. t = T-1 gives the future flow."""
    xs = np.arange(spec.width, dtype=np.float64)
    ys = np.arange(spec.height, dtype=np.float64)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    inside = _inside_at(spec, t, xx, yy)
    cx0, cy0 = spec.center_at(t)
    cx1, cy1 = spec.center_at(t + 1)
    rho = spec.scale_at(t + 1) / spec.scale_at(t)
    rot = _rotation(spec.omega) * rho
    dx = xx - cx0
    dy = yy - cy0
    fx = cx1 + rot[0, 0] * dx + rot[0, 1] * dy - xx
    fy = cy1 + rot[1, 0] * dx + rot[1, 1] * dy - yy
    flow = np.zeros((2, spec.height, spec.width), dtype=np.float32)
    flow[0][inside] = fx[inside]
    flow[1][inside] = fy[inside]
    return flow


def valid_warp_mask(spec: SceneSpec, t: int) -> np.ndarray:
    """Pixels safe for warp-consistency checks: away from the object
    boundary in frames t and t+1 and with in-bounds warp targets."""
    band = int(math.ceil(spec.max_displacement_at(t))) + 2
    valid = np.ones((spec.height, spec.width), dtype=bool)
    for tt in (t, t + 1):
        m = object_mask(spec, tt)
        edge = ndimage.binary_dilation(m, iterations=band) & ~ndimage.binary_erosion(m, iterations=band)
        valid &= ~edge
    flow = analytic_flow(spec, t)
    ys, xs = np.meshgrid(np.arange(spec.height), np.arange(spec.width), indexing="ij")
    tx = xs + flow[0]
    ty = ys + flow[1]
    valid &= (tx >= 0) & (tx <= spec.width - 1) & (ty >= 0) & (ty <= spec.height - 1)
    return valid


def make_clip(spec: SceneSpec) -> Clip:
    bg = _background(spec)
    frames = np.stack([render_frame(spec, t, bg) for t in range(spec.frames)])
    frames_u8 = np.clip(np.rint(frames * 255.0), 0, 255).astype(np.uint8)
    flows = np.stack([analytic_flow(spec, t) for t in range(spec.frames)])
    return Clip(frames=frames_u8, flows=flows, label=spec.label, spec=spec)


def generate(seed: int, dist: SpecDistribution, count: int, split: str = "train") -> List[Clip]:
    """Class-balanced deterministic clip list; distinct splits draw from
    disjoint seed streams."""
    clips = []
    for i in range(count):
        label = i % len(MOTION_CLASSES)
        clip_rng = rngmod.stream(seed, "clip", split, i)
        uid = int(rngmod.stream(seed, "uid", split, i).integers(0, 2**31 - 1))
        spec = sample_scene(clip_rng, dist, label, uid=uid)
        clips.append(make_clip(spec))
    return clips


def generate_dataset(seed: int, dist: SpecDistribution, counts=(800, 160, 160)) -> ClipDataset:
    train, val, test = (generate(seed, dist, c, split=s) for c, s in zip(counts, ("train", "val", "test")))
    return ClipDataset(train=train, val=val, test=test, profile=dist.name, seed=seed)


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmentPolicy:
    hflip: bool = True
    crop_scales: Tuple[float, ...] = (1.0,)
    color_jitter: bool = False


def hflip_arrays(frames: np.ndarray, flows: Optional[np.ndarray]):
    """Mirror frames and flows about the vertical axis; u flips sign."""
    frames = frames[..., ::-1].copy()
    if flows is None:
        return frames, None
    flows = flows[..., ::-1].copy()
    flows[..., 0, :, :] *= -1.0
    return frames, flows


def _crop_resize(frames, flows, top, left, ch, cw, out_hw):
    oh, ow = out_hw
    f = frames[..., top : top + ch, left : left + cw]
    frames_out = resize_bilinear(f.astype(np.float32), out_hw)
    flows_out = None
    if flows is not None:
        fl = flows[..., top : top + ch, left : left + cw]
        flows_out = resize_bilinear(fl, out_hw).astype(np.float32)
        flows_out[..., 0, :, :] *= ow / cw
        flows_out[..., 1, :, :] *= oh / ch
    return frames_out, flows_out


def augment(frames: np.ndarray, flows: Optional[np.ndarray], policy: AugmentPolicy, rng: np.random.Generator):
    """Consistent frame/flow augmentation.

    frames: (..., H, W) float in [0,1]; flows: (..., 2, H, W) or None.
    Horizontal flips mirror both and negate u; scale-s crops are resized
    back to the input size with displacements scaled by 1/s. Color jitter
    touches frames only (classification-only training).
    """
    h, w = frames.shape[-2:]
    out = frames.astype(np.float32)
    if len(policy.crop_scales) > 1 or policy.crop_scales[0] != 1.0:
        s = policy.crop_scales[rng.integers(0, len(policy.crop_scales))]
        ch, cw = max(8, int(round(h * s))), max(8, int(round(w * s)))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        out, flows = _crop_resize(out, flows, top, left, ch, cw, (h, w))
    if policy.hflip and rng.random() < 0.5:
        out, flows = hflip_arrays(out, flows)
    if policy.color_jitter:
        b = rng.uniform(-0.12, 0.12)
        c = rng.uniform(0.85, 1.15)
        gain = rng.uniform(0.92, 1.08, size=3)
        # per-channel gain; channel axis is -3 in both (3,H,W) and (T,3,H,W)
        shaped = gain.reshape((3, 1, 1) if out.ndim == 3 else (1, 3, 1, 1))
        out = np.clip(((out - 0.5) * c + 0.5 + b) * shaped, 0.0, 1.0).astype(np.float32)
    return out, flows


# ---------------------------------------------------------------------------
# disk layout: one directory per clip


def save_clip(path: Path, clip: Clip):
    from . import flowio

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for t in range(clip.frames.shape[0]):
        flowio.write_png(path / f"frame_{t:03d}.png", clip.frames[t])
        flowio.write_flo(path / f"flow_{t:03d}.flo", clip.flows[t])
    sidecar = {
        "label": clip.label,
        "label_name": MOTION_CLASSES[clip.label],
        "seed": clip.spec.uid,
        "resolution": [clip.spec.height, clip.spec.width],
        "T": clip.spec.frames,
        "motion": clip.spec.to_json_dict(),
    }
    (path / "clip.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))


def load_clip(path: Path) -> Clip:
    from . import flowio

    path = Path(path)
    meta_file = path / "clip.json"
    if not meta_file.exists():
        raise FormatError(f"not a clip directory (no clip.json): {path}")
    meta = json.loads(meta_file.read_text())
    spec = SceneSpec.from_json_dict(meta["motion"])
    T = int(meta["T"])
    frames = np.stack([flowio.read_png(path / f"frame_{t:03d}.png") for t in range(T)])
    flows = np.stack([flowio.read_flo(path / f"flow_{t:03d}.flo") for t in range(T)])
    return Clip(frames=frames, flows=flows, label=int(meta["label"]), spec=spec)


def save_dataset(root: Path, ds: ClipDataset):
    root = Path(root)
    for split in ("train", "val", "test"):
        for i, clip in enumerate(ds.split(split)):
            save_clip(root / split / f"clip_{i:05d}", clip)
    (root / "dataset.json").write_text(
        json.dumps(
            {
                "classes": list(MOTION_CLASSES),
                "profile": ds.profile,
                "seed": ds.seed,
                "counts": [len(ds.train), len(ds.val), len(ds.test)],
            },
            indent=1,
            sort_keys=True,
        )
    )


def load_dataset(root: Path) -> ClipDataset:
    root = Path(root)
    meta_file = root / "dataset.json"
    if not meta_file.exists():
        raise FormatError(f"not a dataset directory (no dataset.json): {root}")
    meta = json.loads(meta_file.read_text())
    splits = {}
    for split in ("train", "val", "test"):
        d = root / split
        clips = []
        if d.exists():
            for sub in sorted(d.iterdir()):
                if sub.is_dir():
                    clips.append(load_clip(sub))
        splits[split] = clips
    return ClipDataset(profile=meta.get("profile", ""), seed=meta.get("seed", 0), **splits)
