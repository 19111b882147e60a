"""Synthetic crack scenes with exact ground truth and controllable label noise.

Cracks are random-walk polylines rasterized onto a procedural pavement-like
background. Label noise mimics what human annotators get wrong on real
imagery: whole thin segments go missing, spurious blobs appear, and crack
outlines are drawn slightly off.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

STEP_LEN = 2.0          # walk advance per step, pixels
MAX_BRANCH_DEPTH = 3
BLOB_RADIUS_RANGE = (1.0, 2.5)
BLOB_PLACEMENT_TRIES = 16


@dataclass(frozen=True)
class CrackSpec:
    """Geometry knobs for one scene's cracks."""

    n_cracks: int = 2
    walk_steps: int = 60
    step_sigma: float = 0.8               # lateral spread per step, pixels
    width_range: tuple[float, float] = (1.0, 3.0)
    depth_range: tuple[float, float] = (0.25, 0.5)
    branch_prob: float = 0.04

    def validate(self) -> None:
        if self.n_cracks < 0:
            raise ValueError(f"n_cracks must be >= 0, got {self.n_cracks}")
        if self.walk_steps < 1:
            raise ValueError(f"walk_steps must be >= 1, got {self.walk_steps}")
        if self.step_sigma < 0:
            raise ValueError(f"step_sigma must be >= 0, got {self.step_sigma}")
        wlo, whi = self.width_range
        if wlo < 1 or whi < wlo:
            raise ValueError(f"width_range must satisfy 1 <= min <= max, got {self.width_range}")
        dlo, dhi = self.depth_range
        if not (0 < dlo <= dhi <= 1):
            raise ValueError(f"depth_range must lie in (0, 1] with min <= max, got {self.depth_range}")
        if not 0 <= self.branch_prob <= 1:
            raise ValueError(f"branch_prob must be in [0, 1], got {self.branch_prob}")


@dataclass(frozen=True)
class SceneSpec:
    """Background field: base level + multi-octave value noise + speckle."""

    height: int = 64
    width: int = 64
    texture_octaves: int = 3
    texture_amplitude: float = 0.12
    speckle_sigma: float = 0.02
    base_intensity: float = 0.6

    def validate(self) -> None:
        if self.height < 32 or self.width < 32:
            raise ValueError(f"height and width must be >= 32, got {self.height}x{self.width}")
        if self.texture_octaves < 0:
            raise ValueError(f"texture_octaves must be >= 0, got {self.texture_octaves}")
        if self.texture_amplitude < 0:
            raise ValueError(f"texture_amplitude must be >= 0, got {self.texture_amplitude}")
        if self.speckle_sigma < 0:
            raise ValueError(f"speckle_sigma must be >= 0, got {self.speckle_sigma}")
        if not 0 <= self.base_intensity <= 1:
            raise ValueError(f"base_intensity must be in [0, 1], got {self.base_intensity}")


@dataclass(frozen=True)
class NoiseSpec:
    """Annotation-error model applied to clean labels."""

    under_rate: float = 0.0     # P(drop) per thin segment
    thin_width_max: float = 2.0  # segments at or below this width are drop-eligible
    over_rate: float = 0.0      # expected spurious blobs per image
    jitter_px: float = 0.0      # max per-crack outline shift

    def validate(self) -> None:
        if not 0 <= self.under_rate <= 1:
            raise ValueError(f"under_rate must be in [0, 1], got {self.under_rate}")
        if self.thin_width_max < 0:
            raise ValueError(f"thin_width_max must be >= 0, got {self.thin_width_max}")
        if self.over_rate < 0:
            raise ValueError(f"over_rate must be >= 0, got {self.over_rate}")
        if self.jitter_px < 0:
            raise ValueError(f"jitter_px must be >= 0, got {self.jitter_px}")


@dataclass(frozen=True)
class Segment:
    """One polyline edge: endpoints in (y, x) float pixel coordinates."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    width: float
    depth: float
    crack: int  # index of the top-level crack this segment belongs to


@dataclass
class Sample:
    image: np.ndarray       # (H, W) float in [0, 1]
    clean_mask: np.ndarray  # (H, W) bool
    noisy_mask: np.ndarray  # (H, W) bool
    id: str = ""


def _walk(segments, pos, heading, steps, width_range, depth, step_sigma,
          branch_prob, crack_idx, bounds, rng, branch_depth):
    """Grow one polyline; branches recurse with half the remaining steps."""
    h, w = bounds
    y, x = pos
    for step in range(steps):
        heading += rng.normal(0.0, step_sigma) / STEP_LEN
        ny = y + STEP_LEN * math.sin(heading)
        nx = x + STEP_LEN * math.cos(heading)
        if ny < 0 or ny > h - 1:
            heading = -heading
            ny = min(max(ny, 0.0), h - 1.0)
        if nx < 0 or nx > w - 1:
            heading = math.pi - heading
            nx = min(max(nx, 0.0), w - 1.0)
        width = rng.uniform(*width_range)
        segments.append(Segment((y, x), (ny, nx), width, depth, crack_idx))
        y, x = ny, nx
        remaining = steps - step - 1
        if (branch_depth < MAX_BRANCH_DEPTH and remaining >= 2
                and rng.random() < branch_prob):
            side = 1.0 if rng.random() < 0.5 else -1.0
            fork = heading + side * rng.uniform(math.pi / 6, math.pi / 3)
            _walk(segments, (y, x), fork, remaining // 2, width_range, depth,
                  step_sigma, branch_prob, crack_idx, bounds, rng,
                  branch_depth + 1)


def generate_geometry(crack: CrackSpec, scene: SceneSpec, rng: np.random.Generator) -> list[Segment]:
    """Random-walk crack polylines for one scene. Depth is sampled per crack."""
    segments: list[Segment] = []
    h, w = scene.height, scene.width
    for c in range(crack.n_cracks):
        y0 = rng.uniform(2.0, h - 3.0)
        x0 = rng.uniform(2.0, w - 3.0)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        depth = rng.uniform(*crack.depth_range)
        _walk(segments, (y0, x0), heading, crack.walk_steps, crack.width_range,
              depth, crack.step_sigma, crack.branch_prob, c, (h, w), rng, 0)
    return segments


def _stamp_segment(target: np.ndarray, seg: Segment, value=True) -> None:
    """Mark pixels whose centers lie within width/2 of the segment."""
    h, w = target.shape
    r = seg.width / 2.0
    (y0, x0), (y1, x1) = seg.p0, seg.p1
    lo_y = max(0, math.floor(min(y0, y1) - r))
    hi_y = min(h - 1, math.ceil(max(y0, y1) + r))
    lo_x = max(0, math.floor(min(x0, x1) - r))
    hi_x = min(w - 1, math.ceil(max(x0, x1) + r))
    if lo_y > hi_y or lo_x > hi_x:
        return
    ys, xs = np.mgrid[lo_y:hi_y + 1, lo_x:hi_x + 1]
    vy, vx = y1 - y0, x1 - x0
    l2 = vy * vy + vx * vx
    if l2 > 0:
        t = np.clip(((ys - y0) * vy + (xs - x0) * vx) / l2, 0.0, 1.0)
    else:
        t = 0.0
    dy = ys - (y0 + t * vy)
    dx = xs - (x0 + t * vx)
    inside = dy * dy + dx * dx <= r * r
    region = target[lo_y:hi_y + 1, lo_x:hi_x + 1]
    if target.dtype == bool:
        region |= inside
    else:
        np.maximum(region, np.where(inside, value, 0.0), out=region)


def rasterize(segments: list[Segment], height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for seg in segments:
        _stamp_segment(mask, seg)
    return mask


def _depth_map(segments: list[Segment], height: int, width: int) -> np.ndarray:
    depth = np.zeros((height, width))
    for seg in segments:
        _stamp_segment(depth, seg, value=seg.depth)
    return depth


def _bilinear_upsample(lattice: np.ndarray, height: int, width: int) -> np.ndarray:
    gh, gw = lattice.shape
    y = np.linspace(0.0, gh - 1.0, height)
    x = np.linspace(0.0, gw - 1.0, width)
    yi = np.minimum(y.astype(int), gh - 2)
    xi = np.minimum(x.astype(int), gw - 2)
    fy = (y - yi)[:, None]
    fx = (x - xi)[None, :]
    a = lattice[yi][:, xi]
    b = lattice[yi][:, xi + 1]
    c = lattice[yi + 1][:, xi]
    d = lattice[yi + 1][:, xi + 1]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def _value_noise(height: int, width: int, octaves: int, rng: np.random.Generator) -> np.ndarray:
    """Summed bilinear lattice noise, normalized to [0, 1]."""
    out = np.zeros((height, width))
    amp, norm = 1.0, 0.0
    for o in range(octaves):
        nodes = 4 * 2**o + 1
        out += amp * _bilinear_upsample(rng.random((nodes, nodes)), height, width)
        norm += amp
        amp *= 0.5
    return out / norm


def render_background(scene: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    field = np.full((scene.height, scene.width), scene.base_intensity)
    if scene.texture_octaves > 0 and scene.texture_amplitude > 0:
        tex = _value_noise(scene.height, scene.width, scene.texture_octaves, rng)
        field = field + scene.texture_amplitude * (2.0 * tex - 1.0)
    if scene.speckle_sigma > 0:
        field = field + rng.normal(0.0, scene.speckle_sigma, field.shape)
    return np.clip(field, 0.0, 1.0)


def generate_sample(crack: CrackSpec, scene: SceneSpec, seed: int,
                    sample_id: str = "") -> tuple[Sample, list[Segment]]:
    """Render one clean scene; returns the sample and its crack geometry.

    The returned sample's noisy_mask starts out equal to clean_mask; feed the
    geometry to corrupt_labels to inject annotation errors. Crack pixels sit
    below the local background by each crack's sampled depth (truncated at
    black where the background itself is darker than the depth).
    """
    crack.validate()
    scene.validate()
    rng = np.random.default_rng(seed)
    segments = generate_geometry(crack, scene, rng)
    background = render_background(scene, rng)
    clean = rasterize(segments, scene.height, scene.width)
    image = np.clip(background - _depth_map(segments, scene.height, scene.width), 0.0, 1.0)
    return Sample(image, clean, clean.copy(), sample_id), segments


def corrupt_labels(clean: np.ndarray, segments: list[Segment],
                   noise: NoiseSpec, seed: int) -> np.ndarray:
    """Apply annotation errors to a clean label.

    Draw order is fixed so the stream can be replayed externally: first one
    uniform per segment (drop decisions), then one (dy, dx) pair per crack id
    in ascending order when jitter_px > 0, then the Poisson blob count and
    per-blob placement draws.
    """
    noise.validate()
    h, w = clean.shape
    rng = np.random.default_rng(seed)

    drops = rng.random(len(segments))
    kept = [seg for seg, u in zip(segments, drops)
            if not (seg.width <= noise.thin_width_max and u < noise.under_rate)]

    if noise.jitter_px > 0:
        offsets = {c: rng.uniform(-noise.jitter_px, noise.jitter_px, size=2)
                   for c in sorted({seg.crack for seg in segments})}
        kept = [replace(seg,
                        p0=(seg.p0[0] + offsets[seg.crack][0], seg.p0[1] + offsets[seg.crack][1]),
                        p1=(seg.p1[0] + offsets[seg.crack][0], seg.p1[1] + offsets[seg.crack][1]))
                for seg in kept]

    noisy = rasterize(kept, h, w)

    n_blobs = rng.poisson(noise.over_rate) if noise.over_rate > 0 else 0
    for _ in range(n_blobs):
        cy = cx = 0.0
        for _try in range(BLOB_PLACEMENT_TRIES):
            cy = rng.uniform(0.0, h - 1.0)
            cx = rng.uniform(0.0, w - 1.0)
            if not clean[int(round(cy)), int(round(cx))]:
                break
        r = rng.uniform(*BLOB_RADIUS_RANGE)
        blob = Segment((cy, cx), (cy, cx), 2.0 * r, 0.0, -1)
        _stamp_segment(noisy, blob)
    return noisy


def derive_sample_seeds(master_seed: int, index: int) -> tuple[int, int]:
    """Per-sample (scene, noise) seeds; reproducible without the full dataset."""
    state = np.random.SeedSequence([master_seed, index]).generate_state(2)
    return int(state[0]), int(state[1])


def make_dataset(n: int, crack: CrackSpec, scene: SceneSpec,
                 noise: NoiseSpec, seed: int) -> list[Sample]:
    """n samples with ids "0000"..; each owns a derived independent stream."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    samples = []
    for i in range(n):
        scene_seed, noise_seed = derive_sample_seeds(seed, i)
        sample, segments = generate_sample(crack, scene, scene_seed, sample_id=f"{i:04d}")
        sample.noisy_mask = corrupt_labels(sample.clean_mask, segments, noise, noise_seed)
        samples.append(sample)
    return samples


# ---------------------------------------------------------------------------
# On-disk format: 8-bit grayscale PNGs plus a JSONL manifest.

def save_image_png(path, image: np.ndarray) -> None:
    Image.fromarray(np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8), "L").save(path)


def save_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L").save(path)


def load_image_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0


def load_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 127


def write_split(samples: list[Sample], out_dir, split: str, label_noise: bool) -> list[dict]:
    """Write one split's PNGs; returns its manifest records (paths relative to out_dir)."""
    out_dir = Path(out_dir)
    (out_dir / split).mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        rel = {
            "image": f"{split}/{s.id}_image.png",
            "clean_mask": f"{split}/{s.id}_clean.png",
            "noisy_mask": f"{split}/{s.id}_noisy.png",
        }
        save_image_png(out_dir / rel["image"], s.image)
        save_mask_png(out_dir / rel["clean_mask"], s.clean_mask)
        save_mask_png(out_dir / rel["noisy_mask"], s.noisy_mask)
        records.append({"id": s.id, "split": split, "label_noise": label_noise, **rel})
    return records


def write_manifest(records: list[dict], out_dir) -> Path:
    path = Path(out_dir) / "manifest.jsonl"
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def load_split(out_dir, split: str) -> list[Sample]:
    """Load one split back from its manifest records."""
    out_dir = Path(out_dir)
    manifest = out_dir / "manifest.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest at {manifest}")
    samples = []
    with open(manifest) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["split"] != split:
                continue
            samples.append(Sample(
                image=load_image_png(out_dir / rec["image"]),
                clean_mask=load_mask_png(out_dir / rec["clean_mask"]),
                noisy_mask=load_mask_png(out_dir / rec["noisy_mask"]),
                id=rec["id"],
            ))
    return samples
