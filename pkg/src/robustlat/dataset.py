"""Deterministic procedural image corpus and PNG round-trip I/O.

Each class is one shape family rendered with per-image seeded variation in
position, scale, hue and background noise. Pixels are float64 in [0, 1];
PNG export quantizes to 8 bits, and a JSON manifest fixes the evaluation
order independently of directory listing order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import rng

MANIFEST_NAME = "manifest.json"

FAMILY_NAMES = (
    "circle",
    "rectangle",
    "hstripes",
    "gradient",
    "checker",
    "cross",
    "ring",
    "vstripes",
)


@dataclass(frozen=True)
class SyntheticSpec:
    side: int = 32
    channels: int = 3
    num_classes: int = 6
    per_class: int = 16
    seed: int = 0
    noise: float = 0.04
    min_scale: float = 0.25
    max_scale: float = 0.45

    def __post_init__(self):
        if self.side < 4:
            raise ValueError(f"side must be >= 4, got {self.side}")
        if self.channels != 3:
            raise ValueError("only 3-channel RGB images are supported")
        if not 2 <= self.num_classes <= len(FAMILY_NAMES):
            raise ValueError(
                f"num_classes must be in [2, {len(FAMILY_NAMES)}], got {self.num_classes}"
            )
        if self.per_class < 1:
            raise ValueError(f"per_class must be >= 1, got {self.per_class}")
        if not 0.0 <= self.noise <= 0.5:
            raise ValueError(f"noise must be in [0, 0.5], got {self.noise}")
        if not 0.0 < self.min_scale <= self.max_scale <= 1.0:
            raise ValueError("need 0 < min_scale <= max_scale <= 1")

    def to_json(self) -> dict:
        return {
            "side": self.side,
            "channels": self.channels,
            "num_classes": self.num_classes,
            "per_class": self.per_class,
            "seed": self.seed,
            "noise": self.noise,
            "min_scale": self.min_scale,
            "max_scale": self.max_scale,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        return cls(
            side=int(obj["side"]),
            channels=int(obj["channels"]),
            num_classes=int(obj["num_classes"]),
            per_class=int(obj["per_class"]),
            seed=int(obj["seed"]),
            noise=float(obj["noise"]),
            min_scale=float(obj["min_scale"]),
            max_scale=float(obj["max_scale"]),
        )


@dataclass
class Corpus:
    images: np.ndarray  # (n, side, side, 3) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    spec: dict | None = field(default=None)

    def __len__(self) -> int:
        return len(self.images)


def _coords(side: int):
    ax = (np.arange(side) + 0.5) / side
    return np.meshgrid(ax, ax, indexing="ij")  # y, x in (0, 1)


def _render(family: str, side: int, gen: np.random.Generator, lo: float, hi: float) -> np.ndarray:
    """Foreground mask in [0, 1] for one shape family."""
    yy, xx = _coords(side)
    cy, cx = gen.uniform(0.3, 0.7, size=2)
    scale = gen.uniform(lo, hi)
    if family == "circle":
        return ((yy - cy) ** 2 + (xx - cx) ** 2 <= scale**2).astype(np.float64)
    if family == "rectangle":
        hh, ww = scale, gen.uniform(lo, hi)
        return ((np.abs(yy - cy) <= hh / 1.6) & (np.abs(xx - cx) <= ww / 1.1)).astype(np.float64)
    if family == "hstripes":
        period = gen.uniform(0.15, 0.35)
        phase = gen.uniform(0.0, 1.0)
        return (np.sin(2 * np.pi * (yy / period + phase)) > 0).astype(np.float64)
    if family == "vstripes":
        period = gen.uniform(0.15, 0.35)
        phase = gen.uniform(0.0, 1.0)
        return (np.sin(2 * np.pi * (xx / period + phase)) > 0).astype(np.float64)
    if family == "gradient":
        angle = gen.uniform(0.0, 2 * np.pi)
        ramp = np.cos(angle) * xx + np.sin(angle) * yy
        ramp -= ramp.min()
        return ramp / max(ramp.max(), 1e-9)
    if family == "checker":
        cells = gen.integers(3, 7)
        return (((yy * cells).astype(int) + (xx * cells).astype(int)) % 2).astype(np.float64)
    if family == "cross":
        width = scale / 2.5
        return ((np.abs(yy - cy) <= width) | (np.abs(xx - cx) <= width)).astype(np.float64)
    if family == "ring":
        r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        return ((r <= scale) & (r >= scale * 0.55)).astype(np.float64)
    raise ValueError(f"unknown shape family {family!r}")


def _render_image(spec: SyntheticSpec, class_id: int, index: int) -> np.ndarray:
    gen = rng.stream(spec.seed, "image", class_id, index)
    family = FAMILY_NAMES[class_id]
    mask = _render(family, spec.side, gen, spec.min_scale, spec.max_scale)
    fg = gen.uniform(0.55, 1.0, size=3)
    bg = gen.uniform(0.0, 0.35, size=3)
    img = bg[None, None, :] + mask[:, :, None] * (fg - bg)[None, None, :]
    if spec.noise > 0:
        img = img + gen.normal(0.0, spec.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate(spec: SyntheticSpec) -> Corpus:
    """Render the full corpus; bit-identical for identical specs."""
    images = np.empty(
        (spec.num_classes * spec.per_class, spec.side, spec.side, spec.channels),
        dtype=np.float64,
    )
    labels = np.empty(len(images), dtype=np.int64)
    pos = 0
    for c in range(spec.num_classes):
        for i in range(spec.per_class):
            images[pos] = _render_image(spec, c, i)
            labels[pos] = c
            pos += 1
    return Corpus(images=images, labels=labels, spec=spec.to_json())


def quantize8(images: np.ndarray) -> np.ndarray:
    """8-bit quantization applied on PNG export: round(px * 255) / 255."""
    return np.round(np.clip(images, 0.0, 1.0) * 255.0) / 255.0


def save_images(corpus: Corpus, path) -> None:
    """Write one PNG per image plus the JSON manifest fixing the order."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    per_class_counter: dict[int, int] = {}
    for img, label in zip(corpus.images, corpus.labels):
        c = int(label)
        i = per_class_counter.get(c, 0)
        per_class_counter[c] = i + 1
        name = f"class_{c}_idx_{i}.png"
        data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(data, mode="RGB").save(out / name)
        entries.append({"file": name, "label": c})
    manifest = {"version": 1, "spec": corpus.spec, "images": entries}
    with open(out / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_images(path) -> Corpus:
    """Load a corpus in manifest order (directory listing order is ignored)."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing corpus manifest: {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("version") != 1:
        raise ValueError(f"unsupported corpus manifest version in {manifest_path}")
    entries = manifest["images"]
    images = []
    labels = []
    for entry in entries:
        img_path = root / entry["file"]
        if not img_path.exists():
            raise FileNotFoundError(
                f"manifest {manifest_path} lists missing image {entry['file']}"
            )
        with Image.open(img_path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        images.append(arr)
        labels.append(int(entry["label"]))
    if not images:
        return Corpus(
            images=np.zeros((0, 0, 0, 3)), labels=np.zeros(0, dtype=np.int64),
            spec=manifest.get("spec"),
        )
    return Corpus(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.int64),
        spec=manifest.get("spec"),
    )
