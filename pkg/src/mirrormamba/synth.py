"""Procedural mirror scenes exposing three detection cues independently.

A scene is a textured background (multi-octave value noise plus scattered
geometric primitives) with one axis-aligned rectangular mirror. Each cue
can be active or neutralized per scene:

    depth           active: mirror interior depth sits at the far plane
                    (1.0), a step discontinuity against the wall.
                    inactive: interior depth is simply the wall, fully
                    continuous.
    correspondence  active: the interior shows the background patch
                    adjacent to the mirror's leading edge, flipped across
                    that edge (the in-image reflection of a planar
                    mirror). inactive: the interior is filled with a crop
                    from an independently rendered background, so its
                    texture statistics match the wall but carry no
                    geometry.
    flow            active: apparent motion inside the mirror is twice
                    the exterior's (reflected content recedes at double
                    rate under camera translation). inactive: interior
                    flow equals the exterior field.

Every scene also receives a few decoy patches: independent-background
crops pasted at non-mirror locations. Without them, the faint paste seam
of an inactive-correspondence interior would itself mark the mirror in
RGB; with decoys in every scene, rectangular seams appear everywhere and
carry no label information, which is what keeps the single-cue ablations
honest. Decoys never change depth or flow, so the active cues stay fully
predictive.

Everything is a pure function of (spec, seed): regenerating a dataset
from its manifest reproduces the files byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fileio

CUES = ("depth", "correspondence", "flow")
FLIP_AXES = ("horizontal", "vertical")

# Pixel displacement that maps to the edge of the normalized flow range.
# Velocities are capped at 3 px/frame and mirrors double them, so 8 px
# leaves headroom for noise.
FLOW_SCALE = 8.0
FAR_PLANE = 1.0

# Octave stacks end at small cells on purpose: the fine octaves decorrelate
# nearby pixels, which keeps pooled interior-vs-exterior marginals matched
# even though any one mirror rect covers few coarse cells.
_NOISE_OCTAVES = ((24, 1.0), (12, 0.55), (6, 0.3), (3, 0.15))
_DEPTH_OCTAVES = ((24, 1.0), (12, 0.5), (6, 0.3), (3, 0.2))


@dataclass
class SceneSpec:
    height: int = 96
    width: int = 96
    rect: tuple = (32, 32, 24, 24)  # (top, left, rect_h, rect_w)
    flip_axis: str = "horizontal"
    cues: tuple = ("depth", "correspondence", "flow")
    texture_seed: int = 0
    velocity: tuple = (0, 1)  # camera translation (dy, dx) px/frame, integer
    sigma: float = 0.0

    def __post_init__(self):
        self.rect = tuple(int(v) for v in self.rect)
        self.cues = tuple(c for c in CUES if c in self.cues)
        self.velocity = (int(self.velocity[0]), int(self.velocity[1]))
        if not self.cues:
            raise ValueError("cue set must be non-empty")
        if self.flip_axis not in FLIP_AXES:
            raise ValueError(f"flip_axis must be one of {FLIP_AXES}")
        if self.height % 32 or self.width % 32 or self.height <= 0 or self.width <= 0:
            raise ValueError("canvas dims must be positive multiples of 32")
        top, left, rh, rw = self.rect
        if rh < 2 or rw < 2:
            raise ValueError("mirror rect must be at least 2x2")
        if top < 1 or left < 1 or top + rh > self.height - 1 or left + rw > self.width - 1:
            raise ValueError(f"mirror rect {self.rect} not strictly inside "
                             f"{self.height}x{self.width} canvas")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["rect"] = list(self.rect)
        d["cues"] = list(self.cues)
        d["velocity"] = list(self.velocity)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("rect", "cues", "velocity"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class Sample:
    rgb: np.ndarray      # [3,H,W] float32 in [0,1]
    depth: np.ndarray    # [3,H,W] float32, replicated relative depth
    flow: np.ndarray     # [3,H,W] float32, (u, v, magnitude) normalized
    mask: np.ndarray     # [H,W] float32, exactly the mirror rect
    spec: SceneSpec
    frame: int = 0


def correspondence_source_rect(spec):
    """The background rect whose flip fills the mirror when the cue is on.

    Horizontal scenes reflect across the mirror's left edge when there is
    room, otherwise the right edge; vertical scenes prefer the top edge.
    Returns (top, left) of the source rect, same size as the mirror.
    """
    top, left, rh, rw = spec.rect
    if spec.flip_axis == "horizontal":
        if left - rw >= 0:
            return top, left - rw
        if left + 2 * rw <= spec.width:
            return top, left + rw
        raise ValueError("no room beside the mirror for a reflection source")
    if top - rh >= 0:
        return top - rh, left
    if top + 2 * rh <= spec.height:
        return top + rh, left
    raise ValueError("no room above or below the mirror for a reflection source")


# -- rendering ----------------------------------------------------------------


def _value_noise(rng, h, w, octaves):
    """Stationary multi-octave value noise in [0,1]."""
    out = np.zeros((h, w), dtype=np.float64)
    total = 0.0
    ys = np.arange(h)
    xs = np.arange(w)
    for cell, amp in octaves:
        gh = h // cell + 2
        gw = w // cell + 2
        grid = rng.random((gh, gw))
        fy = ys / cell
        fx = xs / cell
        y0 = fy.astype(np.int64)
        x0 = fx.astype(np.int64)
        wy = (fy - y0)[:, None]
        wx = (fx - x0)[None, :]
        g00 = grid[y0][:, x0]
        g01 = grid[y0][:, x0 + 1]
        g10 = grid[y0 + 1][:, x0]
        g11 = grid[y0 + 1][:, x0 + 1]
        layer = (g00 * (1 - wy) * (1 - wx) + g01 * (1 - wy) * wx
                 + g10 * wy * (1 - wx) + g11 * wy * wx)
        out += amp * layer
        total += amp
    return (out / total).astype(np.float32)


def _render_background(rng, h, w):
    """One wall texture: rgb [3,h,w] and wall depth [h,w], both stationary."""
    lum = _value_noise(rng, h, w, _NOISE_OCTAVES)
    rgb = np.empty((3, h, w), dtype=np.float32)
    for c in range(3):
        tint = _value_noise(rng, h, w, _NOISE_OCTAVES[:2])
        rgb[c] = np.clip(0.2 + 0.45 * lum + 0.3 * tint, 0.0, 1.0)
    depth = (0.25 + 0.4 * _value_noise(rng, h, w, _DEPTH_OCTAVES)).astype(np.float32)

    # Scattered primitives, nearer objects on the wall. Centers are drawn
    # over a padded region so border pixels see the same coverage as the
    # interior; otherwise interior-vs-exterior marginals drift apart.
    pad = 8
    count = int(round((h + 2 * pad) * (w + 2 * pad) / 700))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(count):
        cy = rng.uniform(-pad, h + pad)
        cx = rng.uniform(-pad, w + pad)
        size = rng.uniform(2.0, 6.0)
        color = rng.random(3).astype(np.float32)
        z = rng.uniform(0.08, 0.6)
        if rng.random() < 0.5:
            inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= size ** 2
        else:
            inside = (np.abs(yy - cy) <= size) & (np.abs(xx - cx) <= size * rng.uniform(0.5, 1.5))
        rgb[:, inside] = color[:, None]
        depth[inside] = z
    return rgb, depth


def _normalize_flow(u, v):
    flow = np.empty((3,) + u.shape, dtype=np.float32)
    flow[0] = 0.5 + u / (2.0 * FLOW_SCALE)
    flow[1] = 0.5 + v / (2.0 * FLOW_SCALE)
    flow[2] = np.hypot(u, v) / (FLOW_SCALE * np.sqrt(2.0))
    return np.clip(flow, 0.0, 1.0)


def _generate(spec, seed, frames):
    vy, vx = spec.velocity
    drift_y = (frames - 1) * abs(vy)
    drift_x = (frames - 1) * abs(vx)
    world_h = spec.height + drift_y
    world_w = spec.width + drift_x
    oy0 = drift_y if vy < 0 else 0
    ox0 = drift_x if vx < 0 else 0

    top, left, rh, rw = spec.rect
    for t in (0, frames - 1):
        ty, tx = top - t * vy, left - t * vx
        if ty < 1 or tx < 1 or ty + rh > spec.height - 1 or tx + rw > spec.width - 1:
            raise ValueError(f"mirror drifts out of view by frame {t} "
                             f"(rect {spec.rect}, velocity {spec.velocity})")

    ss = np.random.SeedSequence([int(seed), int(spec.texture_seed)])
    rng_bg, rng_fill, rng_decoy, rng_noise = [np.random.default_rng(c) for c in ss.spawn(4)]

    rgb_w, depth_w = _render_background(rng_bg, world_h, world_w)
    filler, _ = _render_background(rng_fill, world_h, world_w)

    wtop, wleft = top + oy0, left + ox0  # mirror rect in world coords
    mask_w = np.zeros((world_h, world_w), dtype=np.float32)
    mask_w[wtop:wtop + rh, wleft:wleft + rw] = 1.0

    # Decoy patches: independent-texture crops pasted away from the mirror.
    for _ in range(int(rng_decoy.integers(2, 4))):
        dh = int(rng_decoy.integers(max(4, spec.height // 8), spec.height // 3 + 1))
        dw = int(rng_decoy.integers(max(4, spec.width // 8), spec.width // 3 + 1))
        for _try in range(40):
            dy = int(rng_decoy.integers(0, world_h - dh + 1))
            dx = int(rng_decoy.integers(0, world_w - dw + 1))
            if dy + dh <= wtop or dy >= wtop + rh or dx + dw <= wleft or dx >= wleft + rw:
                rgb_w[:, dy:dy + dh, dx:dx + dw] = filler[:, dy:dy + dh, dx:dx + dw]
                break

    # Mirror interior, read after decoys so reflections include them.
    if "correspondence" in spec.cues:
        stop, sleft = correspondence_source_rect(spec)
        stop, sleft = stop + oy0, sleft + ox0
        src = rgb_w[:, stop:stop + rh, sleft:sleft + rw]
        axis = 2 if spec.flip_axis == "horizontal" else 1
        rgb_w[:, wtop:wtop + rh, wleft:wleft + rw] = np.flip(src, axis=axis)
    else:
        rgb_w[:, wtop:wtop + rh, wleft:wleft + rw] = \
            filler[:, wtop:wtop + rh, wleft:wleft + rw]

    if "depth" in spec.cues:
        depth_w[wtop:wtop + rh, wleft:wleft + rw] = FAR_PLANE

    flow_gain = 2.0 if "flow" in spec.cues else 1.0
    samples = []
    last_uv = None
    for t in range(frames):
        oy, ox = oy0 + t * vy, ox0 + t * vx
        view = np.s_[oy:oy + spec.height, ox:ox + spec.width]
        rgb = rgb_w[(slice(None),) + view].copy()
        depth = depth_w[view].copy()
        mask = mask_w[view].copy()

        if t < frames - 1 or frames == 1:
            u = np.full(mask.shape, -float(vx), dtype=np.float64)
            v = np.full(mask.shape, -float(vy), dtype=np.float64)
            u[mask > 0] *= flow_gain
            v[mask > 0] *= flow_gain
            last_uv = (u, v)
        else:
            u, v = last_uv  # final frame has no successor; reuse t-1 field

        if spec.sigma > 0:
            rgb = np.clip(rgb + rng_noise.normal(0, spec.sigma, rgb.shape), 0, 1)
            depth = np.clip(depth + rng_noise.normal(0, spec.sigma, depth.shape), 0, 1)
            u = u + rng_noise.normal(0, spec.sigma, u.shape)
            v = v + rng_noise.normal(0, spec.sigma, v.shape)

        samples.append(Sample(
            rgb=rgb.astype(np.float32),
            depth=np.repeat(depth[None].astype(np.float32), 3, axis=0),
            flow=_normalize_flow(u, v),
            mask=mask,
            spec=spec,
            frame=t,
        ))
    return samples


def generate_scene(spec, seed):
    """One Sample, deterministic in (spec, seed)."""
    return _generate(spec, seed, frames=1)[0]


def generate_sequence(spec, seed, frames):
    """A camera-translation sequence of Samples sharing one scene."""
    if frames < 2:
        raise ValueError("a sequence needs at least 2 frames")
    return _generate(spec, seed, frames)


# -- two-sample KS statistic ----------------------------------------------------


def ks_statistic(a, b):
    """Max CDF gap between two one-dimensional samples."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_statistic needs non-empty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.abs(fa - fb).max())


# -- dataset construction --------------------------------------------------------


def _cue_set(name):
    if name == "all":
        return CUES
    cues = tuple(c for c in name.split("+") if c)
    bad = [c for c in cues if c not in CUES]
    if bad or not cues:
        raise ValueError(f"unknown cue name {name!r} (use {CUES} joined by '+', or 'all')")
    return cues


def _allocate(n, cue_mix):
    """Largest-remainder allocation of n samples across cue-mix keys."""
    keys = sorted(cue_mix)
    weights = np.array([cue_mix[k] for k in keys], dtype=np.float64)
    if (weights < 0).any() or weights.sum() <= 0:
        raise ValueError("cue_mix weights must be non-negative and sum > 0")
    quotas = weights / weights.sum() * n
    counts = np.floor(quotas).astype(int)
    for i in np.argsort(-(quotas - counts))[: n - counts.sum()]:
        counts[i] += 1
    out = []
    for k, c in zip(keys, counts):
        out.extend([k] * c)
    return out


def _draw_spec(rng, height, width, cues, sigma, frames):
    rh = int(rng.integers(height // 6, height // 3 + 1))
    rw = int(rng.integers(width // 6, width // 3 + 1))
    flip_axis = "horizontal" if rng.random() < 0.5 else "vertical"
    while True:
        vy = int(rng.integers(-3, 4))
        vx = int(rng.integers(-3, 4))
        if (vy, vx) != (0, 0):
            break
    # Keep room for the reflection source on the preferred side, and for
    # the drift across a sequence.
    dy, dx = (frames - 1) * abs(vy), (frames - 1) * abs(vx)
    top_lo = 1 + dy + (rh if flip_axis == "vertical" else 0)
    left_lo = 1 + dx + (rw if flip_axis == "horizontal" else 0)
    top = int(rng.integers(top_lo, height - rh - dy))
    left = int(rng.integers(left_lo, width - rw - dx))
    return SceneSpec(height=height, width=width, rect=(top, left, rh, rw),
                     flip_axis=flip_axis, cues=_cue_set(cues),
                     texture_seed=int(rng.integers(0, 2 ** 31)),
                     velocity=(vy, vx), sigma=sigma)


def plan_dataset(n_train, n_test, cue_mix, seed, height=96, width=96,
                 sigma=0.0, frames=1):
    """Deterministic build plan: (id, split, seed, frames, SceneSpec) rows."""
    if n_train < 1 or n_test < 1:
        raise ValueError("need at least one sample per split")
    if frames < 1:
        raise ValueError("frames must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 915]))
    rows = []
    for split, n in (("train", n_train), ("test", n_test)):
        cue_names = _allocate(n, cue_mix)
        rng.shuffle(cue_names)
        for i, name in enumerate(cue_names):
            spec = _draw_spec(rng, height, width, name, sigma, frames)
            rows.append({
                "id": f"{split}_{i:05d}",
                "split": split,
                "seed": int(rng.integers(0, 2 ** 31)),
                "frames": frames,
                "spec": spec,
            })
    return rows


def write_sample(out_dir, sample_id, sample):
    files = {
        "rgb": f"{sample_id}_rgb.mmtf",
        "depth": f"{sample_id}_depth.mmtf",
        "flow": f"{sample_id}_flow.mmtf",
        "mask": f"{sample_id}_mask.pgm",
    }
    fileio.write_tensor(os.path.join(out_dir, files["rgb"]), sample.rgb)
    fileio.write_tensor(os.path.join(out_dir, files["depth"]), sample.depth)
    fileio.write_tensor(os.path.join(out_dir, files["flow"]), sample.flow)
    fileio.write_pgm(os.path.join(out_dir, files["mask"]), sample.mask)
    return files


def make_dataset(n_train, n_test, cue_mix, seed, out_dir, height=96, width=96,
                 sigma=0.0, frames=1, workers=None):
    """Generate and write a dataset; returns the manifest dict.

    ``cue_mix`` maps cue-set names ('all', 'depth', 'correspondence',
    'flow', or '+'-joined combinations) to relative weights. Regenerating
    with identical arguments rewrites identical bytes.
    """
    rows = plan_dataset(n_train, n_test, cue_mix, seed, height, width, sigma, frames)
    os.makedirs(out_dir, exist_ok=True)

    def build(row):
        if row["frames"] == 1:
            return [generate_scene(row["spec"], row["seed"])]
        return generate_sequence(row["spec"], row["seed"], row["frames"])

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            built = list(pool.map(build, rows))
    else:
        built = [build(row) for row in rows]

    entries = []
    for row, samples in zip(rows, built):
        for sample in samples:
            sid = row["id"] if len(samples) == 1 else f"{row['id']}_f{sample.frame}"
            files = write_sample(out_dir, sid, sample)
            entries.append({
                "id": sid, "scene": row["id"], "split": row["split"],
                "frame": sample.frame, "seed": row["seed"],
                "spec": row["spec"].to_dict(), "files": files,
            })
    manifest = {
        "version": 1,
        "seed": int(seed),
        "canvas": [height, width],
        "sigma": sigma,
        "frames": frames,
        "cue_mix": {k: cue_mix[k] for k in sorted(cue_mix)},
        "counts": {"train": n_train, "test": n_test},
        "samples": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return manifest


def read_manifest(data_dir):
    with open(os.path.join(data_dir, "manifest.json"), encoding="utf-8") as f:
        return json.load(f)


def load_sample_arrays(data_dir, entry):
    """Load one manifest entry's arrays: dict with rgb/depth/flow/mask."""
    files = entry["files"]
    return {
        "rgb": fileio.read_tensor(os.path.join(data_dir, files["rgb"])),
        "depth": fileio.read_tensor(os.path.join(data_dir, files["depth"])),
        "flow": fileio.read_tensor(os.path.join(data_dir, files["flow"])),
        "mask": fileio.read_pgm(os.path.join(data_dir, files["mask"])),
    }


def load_split(data_dir, split, manifest=None):
    manifest = manifest or read_manifest(data_dir)
    entries = [e for e in manifest["samples"] if e["split"] == split]
    return [dict(e, arrays=load_sample_arrays(data_dir, e)) for e in entries]
