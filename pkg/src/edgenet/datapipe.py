"""Dataset loading and the offline augmentation pipeline.

Every source image is split into width halves; each half yields the
original centre crop, one crop per rotation angle and one per gamma
value, and each of those appears under three flip states. With the
default plan (15 rotations, 2 gammas) that is 2 * (1+15+2) * 3 = 108
variants per source. Sample ids encode the full augmentation chain:
``src#half.rot<angle>|gamma<g>|orig.flip<i|h|v>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError


@dataclass
class Sample:
    image: np.ndarray  # (3,H,W) float32 in [0,1]
    gt: np.ndarray     # (H,W) float32 binary
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DataError(f"image must be (3,H,W), got {self.image.shape}")
        if self.gt.shape != self.image.shape[1:]:
            raise DataError(f"gt {self.gt.shape} misaligned with image {self.image.shape}")


@dataclass
class AugmentPlan:
    rotations: int = 15
    crop_size: int = 256
    gammas: tuple[float, ...] = (0.3030, 0.6060)
    flips: tuple[str, ...] = ("i", "h", "v")
    split: bool = True

    def __post_init__(self):
        if self.rotations < 0 or self.crop_size < 1:
            raise ConfigError("rotations must be >= 0 and crop_size >= 1")
        for g in self.gammas:
            if g <= 0:
                raise ConfigError(f"gamma must be positive, got {g}")
        for f in self.flips:
            if f not in ("i", "h", "v"):
                raise ConfigError(f"unknown flip state {f!r}")

    @property
    def angles(self) -> list[float]:
        """Rotation angles evenly spaced over [0, 360)."""
        if self.rotations == 0:
            return []
        step = 360.0 / self.rotations
        return [i * step for i in range(self.rotations)]

    @property
    def factor(self) -> int:
        return (2 if self.split else 1) * (1 + self.rotations + len(self.gammas)) * len(self.flips)


# ------------------------------------------------------------- primitive ops


def split_halves(sample: Sample) -> list[Sample]:
    """Left half [0, W//2) and right half [W//2, W), gt split identically."""
    w = sample.image.shape[2]
    if w < 2:
        raise DataError("image too narrow to split")
    mid = w // 2
    left = Sample(sample.image[:, :, :mid].copy(), sample.gt[:, :mid].copy(), f"{sample.id}#0")
    right = Sample(sample.image[:, :, mid:].copy(), sample.gt[:, mid:].copy(), f"{sample.id}#1")
    return [left, right]


def _rotated_coords(h: int, w: int, crop: int, angle_deg: float):
    """Source coordinates for each pixel of the centre crop after rotation."""
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    top = (h - crop) // 2
    left = (w - crop) // 2
    rows = np.arange(top, top + crop, dtype=np.float64)[:, None] - cy
    cols = np.arange(left, left + crop, dtype=np.float64)[None, :] - cx
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    src_r = cy + rows * cos_t - cols * sin_t
    src_c = cx + rows * sin_t + cols * cos_t
    return src_r + 0 * src_c, src_c + 0 * src_r


def _bilinear_sample(plane: np.ndarray, rr: np.ndarray, cc: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    inb = (rr >= 0) & (rr <= h - 1) & (cc >= 0) & (cc <= w - 1)
    r = np.clip(rr, 0, h - 1)
    c = np.clip(cc, 0, w - 1)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = r - r0
    fc = c - c0
    val = (
        plane[r0, c0] * (1 - fr) * (1 - fc)
        + plane[r0, c1] * (1 - fr) * fc
        + plane[r1, c0] * fr * (1 - fc)
        + plane[r1, c1] * fr * fc
    )
    return np.where(inb, val, 0.0)


def _nearest_sample(plane: np.ndarray, rr: np.ndarray, cc: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    r = np.round(rr).astype(np.int64)
    c = np.round(cc).astype(np.int64)
    inb = (r >= 0) & (r < h) & (c >= 0) & (c < w)
    return np.where(inb, plane[np.clip(r, 0, h - 1), np.clip(c, 0, w - 1)], 0.0)


def rotate_center_crop(sample: Sample, angle_deg: float, crop: int) -> Sample:
    """Rotate about the image centre and take the centre crop.

    The image resamples bilinearly; the gt resamples nearest-neighbour so
    it stays binary. Pixels pulled from outside the source are 0.
    """
    h, w = sample.gt.shape
    if crop > min(h, w):
        raise ConfigError(f"crop {crop} exceeds image {h}x{w}")
    rr, cc = _rotated_coords(h, w, crop, angle_deg)
    image = np.stack(
        [_bilinear_sample(sample.image[ch], rr, cc) for ch in range(3)]
    ).astype(np.float32)
    gt = _nearest_sample(sample.gt, rr, cc).astype(np.float32)
    return Sample(image, gt, sample.id)


def center_crop(sample: Sample, crop: int) -> Sample:
    h, w = sample.gt.shape
    if crop > min(h, w):
        raise ConfigError(f"crop {crop} exceeds image {h}x{w}")
    top = (h - crop) // 2
    left = (w - crop) // 2
    return Sample(
        sample.image[:, top : top + crop, left : left + crop].copy(),
        sample.gt[top : top + crop, left : left + crop].copy(),
        sample.id,
    )


def gamma_correct(image: np.ndarray, g: float) -> np.ndarray:
    """Elementwise image**g; the caller leaves the gt untouched."""
    if g <= 0:
        raise ConfigError(f"gamma must be positive, got {g}")
    return np.power(image, np.float32(g), dtype=np.float32)


def flip(sample: Sample, mode: str) -> Sample:
    if mode == "i":
        return Sample(sample.image.copy(), sample.gt.copy(), f"{sample.id}.flipi")
    if mode == "h":
        return Sample(sample.image[:, :, ::-1].copy(), sample.gt[:, ::-1].copy(), f"{sample.id}.fliph")
    if mode == "v":
        return Sample(sample.image[:, ::-1, :].copy(), sample.gt[::-1, :].copy(), f"{sample.id}.flipv")
    raise ConfigError(f"unknown flip state {mode!r}")


def expand(sample: Sample, plan: AugmentPlan) -> list[Sample]:
    """All augmentation variants of one source sample, ids encoding the chain."""
    halves = split_halves(sample) if plan.split else [Sample(sample.image, sample.gt, f"{sample.id}#0")]
    out: list[Sample] = []
    for half in halves:
        base = center_crop(half, plan.crop_size)
        variants = [Sample(base.image, base.gt, f"{half.id}.orig")]
        for angle in plan.angles:
            rot = rotate_center_crop(half, angle, plan.crop_size)
            variants.append(Sample(rot.image, rot.gt, f"{half.id}.rot{angle:g}"))
        for g in plan.gammas:
            variants.append(Sample(gamma_correct(base.image, g), base.gt.copy(), f"{half.id}.gamma{g:g}"))
        for variant in variants:
            for mode in plan.flips:
                out.append(flip(variant, mode))
    return out


# --------------------------------------------------------------------- files


def _decode_png(path: Path) -> np.ndarray:
    """PNG to float array in [0,1]; handles 8- and 16-bit depths."""
    with Image.open(path) as img:
        if img.mode == "I;16" or img.mode == "I":
            arr = np.asarray(img, dtype=np.float64)
            scale = 65535.0 if img.mode == "I;16" else max(arr.max(), 1.0)
            return (arr / scale).astype(np.float32)
        if img.mode not in ("RGB", "L"):
            img = img.convert("RGB")
        return (np.asarray(img, dtype=np.float64) / 255.0).astype(np.float32)


def load_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing image file: {path}")
    arr = _decode_png(path)
    if arr.ndim == 2:
        arr = np.stack([arr, arr, arr])
    else:
        arr = arr.transpose(2, 0, 1)[:3]
    return np.ascontiguousarray(arr, dtype=np.float32)


def load_probability(path) -> np.ndarray:
    """Grayscale PNG to a (H,W) float map in [0,1]; color inputs average."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing prediction file: {path}")
    arr = _decode_png(path)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return np.ascontiguousarray(arr, dtype=np.float32)


def load_gt(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing gt file: {path}")
    arr = _decode_png(path)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return (arr >= 0.5).astype(np.float32)


def save_image_png(array: np.ndarray, path) -> None:
    """(3,H,W) or (H,W) float [0,1] to an 8-bit PNG."""
    arr = np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
        mode = "RGB"
    else:
        mode = "L"
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode=mode).save(path)


def read_manifest(path) -> list[tuple[Path, Path]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing manifest: {path}")
    pairs = []
    root = path.parent
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{ln}: expected 'image<TAB>gt', got {line!r}")
        img, gt = (Path(p) if Path(p).is_absolute() else root / p for p in parts)
        pairs.append((img, gt))
    return pairs


def load_dataset(manifest_path) -> list[Sample]:
    """Decode every manifest pair; gt binarized at 0.5."""
    samples = []
    for img_path, gt_path in read_manifest(manifest_path):
        image = load_image(img_path)
        gt = load_gt(gt_path)
        if gt.shape != image.shape[1:]:
            raise DataError(
                f"gt size {gt.shape} != image size {image.shape[1:]} for {img_path.name}"
            )
        samples.append(Sample(image, gt, img_path.stem))
    return samples


def write_samples(samples, out_dir) -> Path:
    """Write sample/gt PNG pairs plus a regenerated manifest; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for sample in samples:
        safe = sample.id.replace("#", "_").replace(".", "_")
        img_name = f"{safe}.png"
        gt_name = f"{safe}.gt.png"
        save_image_png(sample.image, out_dir / img_name)
        save_image_png(sample.gt, out_dir / gt_name)
        lines.append(f"{img_name}\t{gt_name}")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    return manifest
