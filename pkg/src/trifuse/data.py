"""Desk-scale synthetic forgery data: splice and copy-move samples with exact
masks, post-processing attacks, flip augmentation, and the on-disk layout.

Images are procedural (textured gradients plus solid shapes) so masks are
exact by construction and nothing needs downloading. Texture noise rides on
the luma axis and chroma varies smoothly, mirroring natural-photo statistics
(and keeping chroma subsampling from dominating JPEG round-trip error).

On-disk layout::

    images/<id>.png     8-bit RGB
    masks/<id>_gt.png   8-bit grayscale, values {0, 255}
    meta/<id>.txt       JSON sidecar (kind, attack, seed)
    split.txt           "<id>\t<train|val|test>" lines
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError
from scipy import ndimage

from .errors import ConfigError, DataIOError

KINDS = ("splice", "copy_move", "authentic")
JPEG_QUALITIES = (50, 60, 70, 80, 90, 100)
BLUR_KERNELS = (5, 11, 17, 23, 29)

SPLICE_AREA_RANGE = (0.05, 0.40)
COPY_AREA_RANGE = (0.04, 0.12)


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    parameter: int | None = None

    def __post_init__(self):
        if self.kind == "none":
            if self.parameter is not None:
                raise ConfigError("'none' attack takes no parameter")
        elif self.kind == "jpeg":
            if self.parameter not in JPEG_QUALITIES:
                raise ConfigError(f"jpeg quality must be one of {JPEG_QUALITIES}, got {self.parameter}")
        elif self.kind == "gaussian_blur":
            if self.parameter not in BLUR_KERNELS:
                raise ConfigError(f"blur kernel must be one of {BLUR_KERNELS}, got {self.parameter}")
        else:
            raise ConfigError(f"unknown attack kind {self.kind!r}")

    def label(self) -> str:
        return self.kind if self.kind == "none" else f"{self.kind}:{self.parameter}"


def attack_from_label(label: str) -> AttackSpec:
    label = label.strip()
    if label == "none":
        return AttackSpec()
    if ":" not in label:
        raise ConfigError(f"bad attack label {label!r}")
    kind, param = label.split(":", 1)
    return AttackSpec(kind, int(param))


@dataclass
class SampleRecord:
    image: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Procedural imagery
# ---------------------------------------------------------------------------


def _procedural_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Textured base image in float64, quantized to uint8 at the end.

    Gradients, waves, shape edges, and per-pixel noise all ride the luma
    axis; chroma is a smooth low-amplitude field. This mirrors natural-photo
    statistics and keeps boundaries (splice seams included) representable
    under 4:2:0 chroma subsampling.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    base = rng.uniform(85, 165)
    gx, gy = rng.uniform(-60, 60, size=2)
    luma = base + gx * (xx / size - 0.5) + gy * (yy / size - 0.5)
    for axis in (xx, yy, xx + yy):
        freq = rng.uniform(0.02, 0.1)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(6, 20)
        luma += amp * np.sin(2 * np.pi * freq * axis + phase)
    img = np.empty((size, size, 3), dtype=np.float64)
    for c in range(3):
        off = rng.uniform(-12, 12)
        cfreq = rng.uniform(0.004, 0.02)
        cphase = rng.uniform(0, 2 * np.pi)
        camp = rng.uniform(2, 8)
        img[:, :, c] = luma + off + camp * np.sin(2 * np.pi * cfreq * (xx + 0.7 * yy) + cphase)
    # a few shapes: strong luma offset plus a mild tint
    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    n_shapes = int(rng.integers(2, 5))
    for _ in range(n_shapes):
        shape_luma = rng.uniform(25, 60) * (1 if rng.random() < 0.5 else -1)
        tint = rng.uniform(-8, 8, size=3)
        x0, y0 = rng.integers(0, size - 8, size=2)
        ww, hh = rng.integers(6, max(7, size // 2), size=2)
        box = (int(x0), int(y0), int(min(x0 + ww, size - 1)), int(min(y0 + hh, size - 1)))
        draw.rectangle((0, 0, size, size), fill=0)
        if rng.random() < 0.5:
            draw.ellipse(box, fill=255)
        else:
            draw.rectangle(box, fill=255)
        m = np.asarray(canvas, dtype=bool)
        img[m] += shape_luma + tint
    # fine texture applied along the luma axis only
    sigma = rng.uniform(5, 11)
    img += rng.normal(0.0, sigma, size=(size, size))[:, :, None]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _region_mask(
    rng: np.random.Generator, size: int, frac_lo: float, frac_hi: float, margin: int = 2
) -> np.ndarray:
    """Random filled ellipse or polygon with area fraction inside the range."""
    area = size * size
    for _ in range(64):
        target = rng.uniform(frac_lo * 1.15, frac_hi * 0.85)
        canvas = Image.new("L", (size, size), 0)
        draw = ImageDraw.Draw(canvas)
        if rng.random() < 0.5:
            ab = target * area / np.pi
            ratio = rng.uniform(0.6, 1.6)
            a = int(max(2, round(np.sqrt(ab * ratio))))
            b = int(max(2, round(np.sqrt(ab / ratio))))
            cx = int(rng.integers(margin + a, max(margin + a + 1, size - margin - a)))
            cy = int(rng.integers(margin + b, max(margin + b + 1, size - margin - b)))
            draw.ellipse((cx - a, cy - b, cx + a, cy + b), fill=255)
        else:
            radius = np.sqrt(target * area / np.pi)
            nv = int(rng.integers(5, 9))
            cx = int(rng.integers(margin + int(radius) + 1, max(margin + int(radius) + 2, size - margin - int(radius))))
            cy = int(rng.integers(margin + int(radius) + 1, max(margin + int(radius) + 2, size - margin - int(radius))))
            angles = np.sort(rng.uniform(0, 2 * np.pi, size=nv))
            radii = radius * rng.uniform(0.65, 1.25, size=nv)
            pts = [
                (int(round(cx + r * np.cos(t))), int(round(cy + r * np.sin(t))))
                for r, t in zip(radii, angles)
            ]
            draw.polygon(pts, fill=255)
        m = np.asarray(canvas, dtype=np.uint8) > 0
        m[:margin, :] = False
        m[-margin:, :] = False
        m[:, :margin] = False
        m[:, -margin:] = False
        frac = m.sum() / area
        if frac_lo <= frac <= frac_hi and m.any():
            return m
    raise RuntimeError("could not draw a region in the requested area range")


def generate_splice(rng: np.random.Generator, size: int) -> SampleRecord:
    """Paste a random region of an independently textured donor into a host."""
    if size % 16 != 0:
        raise ConfigError(f"size {size} must be divisible by 16")
    seed_note = int(rng.integers(0, 2 ** 31))
    host = _procedural_image(rng, size)
    donor = _procedural_image(rng, size)
    m = _region_mask(rng, size, *SPLICE_AREA_RANGE)
    img = host.copy()
    img[m] = donor[m]
    return SampleRecord(
        image=img,
        mask=m.astype(np.uint8),
        meta={"kind": "splice", "attack": "none", "seed": seed_note},
    )


def generate_copy_move(rng: np.random.Generator, size: int) -> SampleRecord:
    """Duplicate a region elsewhere in the same image.

    The mask covers both the source and the pasted target; the two supports
    are kept at least two pixels apart so they form two connected components.
    """
    if size % 16 != 0:
        raise ConfigError(f"size {size} must be divisible by 16")
    seed_note = int(rng.integers(0, 2 ** 31))
    base = _procedural_image(rng, size)
    for _ in range(64):
        src = _region_mask(rng, size, *COPY_AREA_RANGE)
        ys, xs = np.nonzero(src)
        grown = ndimage.binary_dilation(src, structure=np.ones((5, 5), dtype=bool))
        for _ in range(64):
            dy = int(rng.integers(-size + 1, size))
            dx = int(rng.integers(-size + 1, size))
            ty, tx = ys + dy, xs + dx
            if ty.min() < 0 or tx.min() < 0 or ty.max() >= size or tx.max() >= size:
                continue
            if grown[ty, tx].any():
                continue
            img = base.copy()
            img[ty, tx] = base[ys, xs]
            mask = src.copy()
            mask[ty, tx] = True
            return SampleRecord(
                image=img,
                mask=mask.astype(np.uint8),
                meta={"kind": "copy_move", "attack": "none", "seed": seed_note},
            )
    raise RuntimeError("could not place a non-overlapping copy-move target")


def generate_authentic(rng: np.random.Generator, size: int) -> SampleRecord:
    if size % 16 != 0:
        raise ConfigError(f"size {size} must be divisible by 16")
    seed_note = int(rng.integers(0, 2 ** 31))
    return SampleRecord(
        image=_procedural_image(rng, size),
        mask=np.zeros((size, size), dtype=np.uint8),
        meta={"kind": "authentic", "attack": "none", "seed": seed_note},
    )


_GENERATORS = {
    "splice": generate_splice,
    "copy_move": generate_copy_move,
    "authentic": generate_authentic,
}


# ---------------------------------------------------------------------------
# Attacks and augmentation
# ---------------------------------------------------------------------------


def gaussian_kernel1d(kernel_size: int, sigma: float | None = None) -> np.ndarray:
    """Normalized 1-D Gaussian; default sigma follows 0.3((k-1)/2 - 1) + 0.8."""
    if sigma is None:
        sigma = 0.3 * ((kernel_size - 1) / 2.0 - 1.0) + 0.8
    x = np.arange(kernel_size, dtype=np.float64) - (kernel_size - 1) / 2.0
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Baseline JPEG encode/decode with 4:2:0 chroma subsampling."""
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="JPEG", quality=int(quality), subsampling=2)
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"))


def gaussian_blur(image: np.ndarray, kernel_size: int) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; preserves constants."""
    k = gaussian_kernel1d(kernel_size)
    out = image.astype(np.float64)
    out = ndimage.correlate1d(out, k, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def apply_attack(image: np.ndarray, spec: AttackSpec) -> np.ndarray:
    if spec.kind == "none":
        return image.copy()
    if spec.kind == "jpeg":
        return jpeg_roundtrip(image, spec.parameter)
    return gaussian_blur(image, spec.parameter)


def augment_flip(sample: SampleRecord, rng: np.random.Generator) -> SampleRecord:
    """Random horizontal and vertical flips (p=0.5 each), image and mask
    flipped together."""
    image, mask = sample.image, sample.mask
    if rng.random() < 0.5:
        image = image[:, ::-1].copy()
        mask = mask[:, ::-1].copy()
    if rng.random() < 0.5:
        image = image[::-1].copy()
        mask = mask[::-1].copy()
    return SampleRecord(image=image, mask=mask, meta=dict(sample.meta))


# ---------------------------------------------------------------------------
# On-disk format
# ---------------------------------------------------------------------------


def save_sample(root, sample_id: str, sample: SampleRecord) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    (root / "meta").mkdir(parents=True, exist_ok=True)
    Image.fromarray(sample.image).save(root / "images" / f"{sample_id}.png")
    Image.fromarray((sample.mask.astype(np.uint8) * 255), mode="L").save(
        root / "masks" / f"{sample_id}_gt.png"
    )
    (root / "meta" / f"{sample_id}.txt").write_text(json.dumps(sample.meta, sort_keys=True) + "\n")


def load_sample(root, sample_id: str) -> SampleRecord:
    root = Path(root)
    img_path = root / "images" / f"{sample_id}.png"
    mask_path = root / "masks" / f"{sample_id}_gt.png"
    meta_path = root / "meta" / f"{sample_id}.txt"
    if not img_path.exists():
        raise DataIOError(f"missing image file {img_path}")
    if not mask_path.exists():
        raise DataIOError(f"missing mask file {mask_path}")
    try:
        image = np.asarray(Image.open(img_path).convert("RGB"))
        mask_raw = np.asarray(Image.open(mask_path).convert("L"))
    except (UnidentifiedImageError, OSError) as e:
        raise DataIOError(f"corrupt PNG for sample {sample_id!r}: {e}") from e
    if not np.isin(mask_raw, (0, 255)).all():
        raise DataIOError(f"mask {mask_path} is not binary {{0, 255}}")
    meta = {}
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
    return SampleRecord(image=image, mask=(mask_raw > 0).astype(np.uint8), meta=meta)


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------


def make_dataset(
    rng: np.random.Generator,
    counts: dict,
    size: int = 64,
    attack_grid: list[AttackSpec] | None = None,
    ratios: tuple = (8, 1, 1),
    split_counts: tuple | None = None,
):
    """Generate samples and a deterministic train/val/test split.

    ``counts`` maps kind -> number of samples. Attacks, if given, are cycled
    across samples and recorded in the meta. ``split_counts`` overrides the
    ratio split with explicit sizes.
    """
    for kind in counts:
        if kind not in KINDS:
            raise ConfigError(f"unknown sample kind {kind!r}")
    attack_grid = attack_grid or [AttackSpec()]
    samples: dict[str, SampleRecord] = {}
    order = []
    i = 0
    for kind in KINDS:
        for j in range(counts.get(kind, 0)):
            sample_id = f"{kind}_{j:04d}"
            rec = _GENERATORS[kind](rng, size)
            spec = attack_grid[i % len(attack_grid)]
            if spec.kind != "none":
                rec = SampleRecord(
                    image=apply_attack(rec.image, spec),
                    mask=rec.mask,
                    meta={**rec.meta, "attack": spec.label()},
                )
            samples[sample_id] = rec
            order.append(sample_id)
            i += 1
    perm = rng.permutation(len(order))
    shuffled = [order[int(k)] for k in perm]
    n = len(shuffled)
    if split_counts is not None:
        n_train, n_val, n_test = split_counts
        if n_train + n_val + n_test != n:
            raise ConfigError(f"split_counts {split_counts} do not sum to {n}")
    else:
        total = sum(ratios)
        n_val = round(n * ratios[1] / total)
        n_test = round(n * ratios[2] / total)
        n_train = n - n_val - n_test
    splits = {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train : n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val :]),
    }
    return samples, splits


def write_dataset(root, samples: dict, splits: dict) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for sample_id, rec in samples.items():
        save_sample(root, sample_id, rec)
    lines = []
    for split in ("train", "val", "test"):
        for sample_id in splits.get(split, []):
            lines.append(f"{sample_id}\t{split}")
    (root / "split.txt").write_text("\n".join(lines) + "\n")


def load_split(root) -> dict:
    root = Path(root)
    split_path = root / "split.txt"
    if not split_path.exists():
        raise DataIOError(f"missing split file {split_path}")
    splits = {"train": [], "val": [], "test": []}
    for line in split_path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            sample_id, split = line.split("\t")
        except ValueError as e:
            raise DataIOError(f"bad split line {line!r}") from e
        if split not in splits:
            raise DataIOError(f"unknown split {split!r} in {split_path}")
        splits[split].append(sample_id)
    return splits


def load_dataset(root):
    """(records by id, splits). Only ids listed in split.txt are loaded."""
    splits = load_split(root)
    records = {}
    for ids in splits.values():
        for sample_id in ids:
            records[sample_id] = load_sample(root, sample_id)
    return records, splits
