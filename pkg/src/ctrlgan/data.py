"""Dataset model: paired samples, manifest ingestion, and the synthetic shape dataset.

Layout on disk is ``root/{train,test}/pairs.csv`` plus the 8-bit PNG rasters the
manifest references. Images and structure maps are normalized identically to
``[-1, 1]`` float tensors shaped ``batch x channels x height x width``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .errors import DatasetError, ValidationError

MANIFEST_COLUMNS = ["image_a", "struct_a", "image_b", "struct_b", "identity"]
MANIFEST_NAME = "pairs.csv"


def tensor_of(obj) -> torch.Tensor:
    """Unwrap an ImageTensor/StructureMap to its tensor; tensors pass through."""
    return obj if torch.is_tensor(obj) else obj.values


def normalize(pixels: np.ndarray) -> torch.Tensor:
    """Map 8-bit ``H x W x C`` pixels onto a ``1 x C x H x W`` tensor in [-1, 1]."""
    arr = np.asarray(pixels, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def denormalize(values: torch.Tensor) -> np.ndarray:
    """Invert :func:`normalize` back to 8-bit ``H x W x C`` pixels."""
    arr = (values.detach().squeeze(0).permute(1, 2, 0).numpy() + 1.0) * 127.5
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def _check_spatial(values: torch.Tensor, what: str) -> None:
    if values.ndim != 4:
        raise ValidationError(f"{what}: expected 4-d tensor, got shape {tuple(values.shape)}")
    h, w = values.shape[2], values.shape[3]
    if h % 4 != 0 or w % 4 != 0:
        raise ValidationError(f"{what}: height and width must be multiples of 4, got {h}x{w}")
    if not torch.isfinite(values).all():
        raise ValidationError(f"{what}: contains non-finite values")
    if values.min() < -1.0 or values.max() > 1.0:
        raise ValidationError(f"{what}: values outside [-1, 1]")


@dataclass
class ImageTensor:
    """Batched 3-channel raster, values in [-1, 1], spatial dims multiples of 4."""

    values: torch.Tensor

    def __post_init__(self):
        _check_spatial(self.values, "image")
        if self.values.shape[1] != 3:
            raise ValidationError(f"image: expected 3 channels, got {self.values.shape[1]}")

    @property
    def shape(self):
        return tuple(self.values.shape)


class StructureKind(str, Enum):
    KEYPOINT = "keypoint"
    SKELETON = "skeleton"
    SEMANTIC_MAP = "semantic_map"
    CLASS_LABEL_BROADCAST = "class_label_broadcast"


@dataclass
class StructureMap:
    """Raster encoding of the controllable structure guiding generation."""

    values: torch.Tensor
    kind: StructureKind = StructureKind.SKELETON

    def __post_init__(self):
        _check_spatial(self.values, "structure")
        if self.kind == StructureKind.CLASS_LABEL_BROADCAST:
            flat = self.values.flatten(2)
            if not torch.all(flat == flat[:, :, :1]):
                raise ValidationError("class_label_broadcast structure must be spatially constant")

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class PairedSample:
    """Two views of one identity plus the structure map of each view."""

    x: ImageTensor
    c_x: StructureMap
    y: ImageTensor
    c_y: StructureMap
    identity_tag: str = ""

    def __post_init__(self):
        for img, struct, name in ((self.x, self.c_x, "a"), (self.y, self.c_y, "b")):
            if img.values.shape[2:] != struct.values.shape[2:]:
                raise ValidationError(
                    f"sample side {name}: structure dims {tuple(struct.values.shape[2:])} "
                    f"do not match image dims {tuple(img.values.shape[2:])}"
                )


def split_channels(img: torch.Tensor | ImageTensor):
    """Split a 3-channel image into its (r, g, b) single-channel tensors."""
    values = img.values if isinstance(img, ImageTensor) else img
    if values.ndim != 4 or values.shape[1] != 3:
        raise ValidationError(f"split_channels: expected Bx3xHxW, got {tuple(values.shape)}")
    return values[:, 0:1], values[:, 1:2], values[:, 2:3]


def _load_raster(path: Path, row_num: int) -> torch.Tensor:
    if not path.exists():
        raise DatasetError(f"row {row_num}: missing file {path}")
    with Image.open(path) as im:
        return normalize(np.asarray(im.convert("RGB")))


def load_paired_dataset(root: str | Path, split: str) -> list[PairedSample]:
    """Load all samples of one split, in manifest order.

    Raises :class:`DatasetError` naming the manifest row on a missing file, and
    :class:`ValidationError` when an image and its structure map disagree on size.
    """
    if split not in ("train", "test"):
        raise ValidationError(f"unknown split {split!r}, expected 'train' or 'test'")
    root = Path(root)
    manifest = root / split / MANIFEST_NAME
    if not manifest.exists():
        raise DatasetError(f"manifest not found: {manifest}")

    samples = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_COLUMNS:
            raise DatasetError(
                f"{manifest}: expected columns {MANIFEST_COLUMNS}, got {reader.fieldnames}"
            )
        for row_num, row in enumerate(reader, start=1):
            base = manifest.parent
            x = ImageTensor(_load_raster(base / row["image_a"], row_num))
            c_x = StructureMap(_load_raster(base / row["struct_a"], row_num))
            y = ImageTensor(_load_raster(base / row["image_b"], row_num))
            c_y = StructureMap(_load_raster(base / row["struct_b"], row_num))
            try:
                samples.append(PairedSample(x, c_x, y, c_y, identity_tag=row["identity"]))
            except ValidationError as exc:
                raise ValidationError(f"row {row_num}: {exc}") from exc
    return samples


# ---------------------------------------------------------------------------
# Synthetic shape dataset
# ---------------------------------------------------------------------------

DEFAULT_PALETTE = [
    ("circle", (230, 60, 60)),
    ("square", (60, 200, 80)),
    ("triangle", (70, 110, 235)),
    ("circle", (235, 210, 70)),
    ("square", (215, 80, 215)),
    ("triangle", (70, 210, 210)),
]

MARKER_LINE_WIDTH = 4  # stroke width of the rendered pose marker


@dataclass
class ToyDatasetSpec:
    """Recipe for the deterministic synthetic dataset.

    ``num_pairs`` counts the train split; the test split gets one quarter of
    that (at least two pairs) drawn from the same palette and generator.
    """

    num_pairs: int = 16
    image_size: int = 64
    shape_palette: list = field(default_factory=lambda: list(DEFAULT_PALETTE))
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_pairs < 1:
            raise ValidationError("num_pairs must be >= 1")
        if self.image_size % 4 != 0:
            raise ValidationError(f"image_size must be a multiple of 4, got {self.image_size}")

    @property
    def num_test_pairs(self) -> int:
        return max(2, self.num_pairs // 4)


def _draw_shape(draw: ImageDraw.ImageDraw, shape: str, cx: float, cy: float, r: float, color):
    if shape == "circle":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=color)
    elif shape == "square":
        draw.rectangle([cx - r, cy - r, cx + r, cy + r], fill=color)
    elif shape == "triangle":
        pts = [(cx, cy - r), (cx - r, cy + r), (cx + r, cy + r)]
        draw.polygon(pts, fill=color)
    else:
        raise ValidationError(f"unknown shape {shape!r}")


def raster_centroid(pixels: np.ndarray, threshold: int = 32) -> tuple[float, float]:
    """Intensity-weighted centroid (x, y) of the above-threshold pixels.

    Operates directly on an ``H x W x C`` 8-bit raster; used both by the toy
    renderer and by verification scripts that re-measure rendered output.
    """
    lum = np.asarray(pixels, dtype=np.float64).max(axis=2)
    mask = lum > threshold
    if not mask.any():
        return (math.nan, math.nan)
    ys, xs = np.nonzero(mask)
    w = lum[ys, xs]
    return (float((xs * w).sum() / w.sum()), float((ys * w).sum() / w.sum()))


def _render_marker(size: int, mx: float, my: float, arm: int) -> Image.Image:
    """White cross of 4-px-wide strokes, rasterized symmetrically around the
    integer-grid point closest to (mx, my) so its centroid lands within half a
    pixel of the target."""
    w = MARKER_LINE_WIDTH
    c0 = int(round(mx - (w - 1) / 2))
    r0 = int(round(my - (w - 1) / 2))
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[r0 : r0 + w, c0 - arm : c0 + w + arm] = 255
    mask[r0 - arm : r0 + w + arm, c0 : c0 + w] = 255
    return Image.fromarray(np.stack([mask] * 3, axis=2))


def _render_pair(shape: str, color, pos_a, pos_b, size: int, radius: float):
    """Render (image_a, struct_a, image_b, struct_b) PIL images for one sample."""
    out = []
    for cx, cy in (pos_a, pos_b):
        img = Image.new("RGB", (size, size), (0, 0, 0))
        _draw_shape(ImageDraw.Draw(img), shape, cx, cy, radius, color)
        # Pose marker is centered on the shape's measured centroid so that both
        # rasters agree on the pose to within rounding.
        mx, my = raster_centroid(np.asarray(img))
        out.append((img, _render_marker(size, mx, my, int(radius))))
    return out[0][0], out[0][1], out[1][0], out[1][1]


def generate_toy_dataset(spec: ToyDatasetSpec, root: str | Path) -> list[PairedSample]:
    """Render the synthetic dataset under ``root`` and return the train samples.

    Output is a pure function of ``spec``: equal specs produce byte-identical
    directories. A ``spec.json`` sidecar records the recipe.
    """
    root = Path(root)
    rng = np.random.default_rng(spec.rng_seed)
    size = spec.image_size
    radius = max(4.0, size / 8.0)
    margin = int(radius + MARKER_LINE_WIDTH + 2)
    if 2 * margin >= size:
        raise ValidationError(f"image_size {size} too small for shape radius {radius}")

    for split, count in (("train", spec.num_pairs), ("test", spec.num_test_pairs)):
        split_dir = root / split
        split_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        for idx in range(count):
            shape, color = spec.shape_palette[int(rng.integers(len(spec.shape_palette)))]
            while True:
                ax, ay, bx, by = rng.uniform(margin, size - margin, size=4)
                if math.hypot(ax - bx, ay - by) >= radius:  # two distinct poses
                    break
            img_a, st_a, img_b, st_b = _render_pair(shape, color, (ax, ay), (bx, by), size, radius)
            names = [f"{idx:04d}_{tag}.png" for tag in ("a", "sa", "b", "sb")]
            for im, name in zip((img_a, st_a, img_b, st_b), names):
                im.save(split_dir / name)
            rows.append(names[:1] + [names[1], names[2], names[3], f"{shape}-{color[0]}-{color[1]}-{color[2]}"])
        with open(split_dir / MANIFEST_NAME, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_COLUMNS)
            writer.writerows(rows)

    with open(root / "spec.json", "w") as fh:
        json.dump(
            {
                "num_pairs": spec.num_pairs,
                "image_size": spec.image_size,
                "shape_palette": [[s, list(c)] for s, c in spec.shape_palette],
                "rng_seed": spec.rng_seed,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return load_paired_dataset(root, "train")


def sample_structures(samples, count: int, seed: int = 0) -> list[StructureMap]:
    """Uniformly sample target structure maps from a split with a seeded RNG.

    Inference-time convention for arbitrary translation: target poses are
    drawn at random from the held-out split.
    """
    if not samples:
        raise ValidationError("cannot sample structures from an empty split")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(samples), size=count)
    return [samples[int(i)].c_y for i in picks]


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Stacked tensors of a mini-batch of paired samples."""

    x: torch.Tensor
    c_x: torch.Tensor
    y: torch.Tensor
    c_y: torch.Tensor


def _augment(sample_tensors, rng: np.random.Generator):
    """Left-right flip plus a small random translate-crop, same transform per side."""
    out = []
    for img, struct in sample_tensors:
        if rng.random() < 0.5:
            img, struct = torch.flip(img, dims=[3]), torch.flip(struct, dims=[3])
        pad = 4
        h, w = img.shape[2], img.shape[3]
        oy, ox = int(rng.integers(0, 2 * pad + 1)), int(rng.integers(0, 2 * pad + 1))
        img = torch.nn.functional.pad(img, (pad, pad, pad, pad), mode="reflect")
        struct = torch.nn.functional.pad(struct, (pad, pad, pad, pad), mode="reflect")
        out.append((img[:, :, oy : oy + h, ox : ox + w], struct[:, :, oy : oy + h, ox : ox + w]))
    return out


def iter_batches(samples, batch_size: int, seed: int, epoch: int, augment: bool = False):
    """Yield :class:`Batch` objects in an order that depends only on (seed, epoch)."""
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    rng = np.random.default_rng((seed, epoch))
    order = rng.permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start : start + batch_size]]
        sides_a = [(s.x.values, s.c_x.values) for s in chunk]
        sides_b = [(s.y.values, s.c_y.values) for s in chunk]
        if augment:
            sides_a, sides_b = _augment(sides_a, rng), _augment(sides_b, rng)
        yield Batch(
            x=torch.cat([a for a, _ in sides_a]),
            c_x=torch.cat([c for _, c in sides_a]),
            y=torch.cat([b for b, _ in sides_b]),
            c_y=torch.cat([c for _, c in sides_b]),
        )
