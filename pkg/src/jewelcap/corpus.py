"""Corpus records and on-disk layout.

A corpus directory holds one PNG per sample (``<id>.png``), a ``samples.jsonl``
with one record per line ({id, spec, captions, split, provenance}) and a
``manifest.json``. Pixel data is stored as 8-bit RGB; in-memory samples keep
the same quantized values so disk and memory pipelines agree exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from PIL import Image as PILImage

FORMAT_VERSION = 1

ACCESSORY_TYPES = ("necklace", "ring", "earring", "bracelet")
MATERIALS = ("yellow gold", "white gold", "silver", "rose gold")
STONES = ("diamond", "emerald", "ruby", "sapphire", "oval stones")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class JewelSpec:
    """Symbolic description of one accessory; images and captions derive from it."""

    accessory_type: str
    model_name: str
    material: Optional[str] = None
    stone: Optional[str] = None
    jitter_seed: int = 0

    def __post_init__(self):
        if self.accessory_type not in ACCESSORY_TYPES:
            raise ValueError(f"unknown accessory type '{self.accessory_type}'")
        if self.material is not None and self.material not in MATERIALS:
            raise ValueError(f"unknown material '{self.material}'")
        if self.stone is not None and self.stone not in STONES:
            raise ValueError(f"unknown stone '{self.stone}'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "JewelSpec":
        return cls(**d)


@dataclass
class Sample:
    id: str
    image: np.ndarray  # (H, W, 3) uint8
    spec: JewelSpec
    captions: Dict[str, str]
    split: str = "train"
    provenance: dict = field(default_factory=lambda: {"kind": "original"})

    def pixels(self) -> np.ndarray:
        """Image as float64 in [0,1]."""
        return self.image.astype(np.float64) / 255.0

    def base_id(self) -> str:
        return self.provenance.get("source_id", self.id)


def quantize_pixels(pixels: np.ndarray) -> np.ndarray:
    """[0,1] float image to the stored uint8 form."""
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)


@dataclass
class CorpusManifest:
    seed: int
    n_base: int
    multiplier: int
    image_size: int
    counts: Dict[str, int]
    class_histogram: Dict[str, int]
    vocab_hash: str
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        return cls(**d)


def caption_token_hash(captions_per_sample) -> str:
    """Stable hash over the sorted set of caption tokens (all levels)."""
    tokens = set()
    for caps in captions_per_sample:
        for text in caps.values():
            tokens.update(text.split())
    payload = json.dumps(sorted(tokens), separators=(",", ":")).encode()
    return "sha256:" + hashlib.sha256(payload).hexdigest()


@dataclass
class Corpus:
    samples: List[Sample]
    manifest: CorpusManifest

    def split(self, tag: str) -> List[Sample]:
        if tag not in SPLITS:
            raise ValueError(f"unknown split '{tag}'")
        return [s for s in self.samples if s.split == tag]

    def save(self, directory) -> None:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        with open(root / "samples.jsonl", "w") as fh:
            for s in self.samples:
                row = {
                    "id": s.id,
                    "spec": s.spec.to_dict(),
                    "captions": s.captions,
                    "split": s.split,
                    "provenance": s.provenance,
                }
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
                PILImage.fromarray(s.image, mode="RGB").save(root / f"{s.id}.png")
        with open(root / "manifest.json", "w") as fh:
            json.dump(self.manifest.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "Corpus":
        root = Path(directory)
        with open(root / "manifest.json") as fh:
            manifest = CorpusManifest.from_dict(json.load(fh))
        if manifest.format_version != FORMAT_VERSION:
            raise ValueError(f"unsupported corpus format version {manifest.format_version}")
        samples = []
        with open(root / "samples.jsonl") as fh:
            for line in fh:
                row = json.loads(line)
                with PILImage.open(root / f"{row['id']}.png") as im:
                    image = np.asarray(im.convert("RGB"), dtype=np.uint8)
                samples.append(Sample(
                    id=row["id"],
                    image=image,
                    spec=JewelSpec.from_dict(row["spec"]),
                    captions=row["captions"],
                    split=row["split"],
                    provenance=row["provenance"],
                ))
        return cls(samples, manifest)
