"""Offline data augmentation: eight transform families and corpus expansion.

Transform magnitudes are fixed fractions of the image size: shifts up to 30%
of width/height, shear up to 15%, zoom within 5%, brightness factor within
80% of unity, per-channel color offsets up to 0.05. Flips and quarter-turn
rotations are exact permutations. Geometric resampling is bilinear with
nearest-edge replication for uncovered regions; all outputs stay in [0,1]
and keep the input dimensions.

Expansion draws one transform per augmented copy, uniformly over the eight
families (the flip family then picks horizontal or vertical). Copies keep
the source captions verbatim and record their transform chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .corpus import Sample, quantize_pixels

__all__ = [
    "Image",
    "AugmentSpec",
    "AUGMENT_KINDS",
    "apply_augmentation",
    "sample_params",
    "expand_dataset",
]

AUGMENT_KINDS = (
    "rotate90", "width_shift", "height_shift", "shear", "zoom",
    "color_jitter", "hflip", "vflip", "brightness",
)

# Sampling groups follow the corpus-construction recipe: one bullet covers
# both flips, so a drawn "flip" resolves to hflip or vflip with equal odds.
_SAMPLING_GROUPS = (
    ("rotate90",), ("width_shift",), ("height_shift",), ("shear",),
    ("zoom",), ("color_jitter",), ("hflip", "vflip"), ("brightness",),
)


@dataclass
class Image:
    """RGB raster with float pixels in [0,1], row-major (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class AugmentSpec:
    kind: str
    seed: int = 0
    shift_fraction: float = 0.30
    shear_fraction: float = 0.15
    zoom_fraction: float = 0.05
    brightness_range: float = 0.80
    color_offset: float = 0.05

    def __post_init__(self):
        if self.kind not in AUGMENT_KINDS:
            raise ValueError(f"unknown augmentation kind '{self.kind}'")


def sample_params(spec: AugmentSpec, width: int, height: int) -> dict:
    """Draw the transform's free parameters deterministically from the seed."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "rotate90":
        return {"quarter_turns": int(rng.integers(1, 4))}
    if spec.kind == "width_shift":
        return {"dx": int(np.rint(rng.uniform(-spec.shift_fraction, spec.shift_fraction) * width))}
    if spec.kind == "height_shift":
        return {"dy": int(np.rint(rng.uniform(-spec.shift_fraction, spec.shift_fraction) * height))}
    if spec.kind == "shear":
        return {"shear": float(rng.uniform(-spec.shear_fraction, spec.shear_fraction))}
    if spec.kind == "zoom":
        return {"factor": float(rng.uniform(1.0 - spec.zoom_fraction, 1.0 + spec.zoom_fraction))}
    if spec.kind == "color_jitter":
        return {"offsets": rng.uniform(-spec.color_offset, spec.color_offset, size=3)}
    if spec.kind == "brightness":
        return {"factor": float(rng.uniform(1.0 - spec.brightness_range, 1.0 + spec.brightness_range))}
    return {}


def _bilinear_resample(px: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample px at float source coordinates with edge replication."""
    h, w = px.shape[:2]
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    top = px[y0, x0] * (1.0 - fx) + px[y0, x1] * fx
    bot = px[y1, x0] * (1.0 - fx) + px[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def _grid(width: int, height: int):
    yy, xx = np.mgrid[0:height, 0:width]
    return xx.astype(np.float64), yy.astype(np.float64)


def apply_augmentation(img: Image, spec: AugmentSpec) -> Image:
    """Apply one transform; deterministic in (img, spec), dimensions preserved."""
    px = img.pixels
    h, w = px.shape[:2]
    p = sample_params(spec, w, h)

    if spec.kind == "rotate90":
        k = p["quarter_turns"]
        if h != w and k % 2 == 1:
            k = 2  # quarter turns of non-square rasters would change shape
        return Image(np.rot90(px, k, axes=(0, 1)).copy())
    if spec.kind == "hflip":
        return Image(px[:, ::-1].copy())
    if spec.kind == "vflip":
        return Image(px[::-1].copy())
    if spec.kind == "brightness":
        return Image(np.clip(px * p["factor"], 0.0, 1.0))
    if spec.kind == "color_jitter":
        return Image(np.clip(px + p["offsets"][None, None, :], 0.0, 1.0))

    xx, yy = _grid(w, h)
    if spec.kind == "width_shift":
        sx, sy = xx - p["dx"], yy
    elif spec.kind == "height_shift":
        sx, sy = xx, yy - p["dy"]
    elif spec.kind == "shear":
        sx, sy = xx + p["shear"] * (yy - (h - 1) / 2.0), yy
    else:  # zoom
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        sx = cx + (xx - cx) / p["factor"]
        sy = cy + (yy - cy) / p["factor"]
    return Image(np.clip(_bilinear_resample(px, sx, sy), 0.0, 1.0))


def _copy_seed(seed: int, sample_index: int, copy_index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(sample_index, copy_index))
    state = ss.generate_state(2, dtype=np.uint64)
    return int(state[0] ^ (state[1] >> 1))


def expand_dataset(samples: List[Sample], multiplier: int, seed: int) -> List[Sample]:
    """Originals plus (multiplier - 1) augmented copies per sample.

    Copies inherit split and captions from their source and record the
    transform chain in provenance. Deterministic in (samples, seed).
    """
    if not samples:
        raise ValueError("expand_dataset: empty sample list")
    if multiplier < 1:
        raise ValueError("multiplier must be >= 1")

    out: List[Sample] = []
    for i, base in enumerate(samples):
        out.append(base)
        for c in range(1, multiplier):
            copy_seed = _copy_seed(seed, i, c)
            rng = np.random.default_rng(copy_seed)
            group = _SAMPLING_GROUPS[int(rng.integers(0, len(_SAMPLING_GROUPS)))]
            kind = group[int(rng.integers(0, len(group)))] if len(group) > 1 else group[0]
            spec = AugmentSpec(kind=kind, seed=copy_seed)
            transformed = apply_augmentation(Image(base.pixels()), spec)
            out.append(Sample(
                id=f"{base.id}-a{c}",
                image=quantize_pixels(transformed.pixels),
                spec=base.spec,
                captions=dict(base.captions),
                split=base.split,
                provenance={
                    "kind": "augmented",
                    "source_id": base.id,
                    "chain": [{"kind": kind, "seed": copy_seed}],
                },
            ))
    return out


def replay_chain(base: Sample, chain: list[dict]) -> np.ndarray:
    """Re-apply a recorded transform chain to a source sample's pixels."""
    img = Image(base.pixels())
    for link in chain:
        img = apply_augmentation(img, AugmentSpec(kind=link["kind"], seed=link["seed"]))
    return quantize_pixels(img.pixels)


def _unused_dataclasses_guard():  # pragma: no cover
    return dataclasses
