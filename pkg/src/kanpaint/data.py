"""Synthetic phantoms, volume slicing, and dataset directories.

Phantoms are procedurally generated brain-like slices (nested soft
ellipses with a sinusoidal ripple texture) used in place of real scans at
desk scale. Real volumetric data enters through ``slice_volume``, which
mirrors the usual preprocessing: axial slicing, per-volume min-max
normalization, center cropping, and dropping slices without mask content.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .io import read_tensor, write_tensor

__all__ = [
    "SliceRecord", "PhantomSpec", "generate_phantom", "slice_volume",
    "mask_apply", "split_by_subject", "save_dataset", "load_dataset",
]


@dataclass
class SliceRecord:
    """One 2-D training/evaluation unit: image plus its two masks."""

    image: np.ndarray
    tumor_mask: np.ndarray
    healthy_mask: np.ndarray
    subject_id: str
    slice_index: int

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.tumor_mask = np.asarray(self.tumor_mask, dtype=np.float64)
        self.healthy_mask = np.asarray(self.healthy_mask, dtype=np.float64)
        for name, arr in (("image", self.image), ("tumor_mask", self.tumor_mask),
                          ("healthy_mask", self.healthy_mask)):
            if arr.ndim != 3 or arr.shape[0] != 1:
                raise ContractError(
                    f"{name} must be [1, H, W], got {arr.shape}")
        if not (self.image.shape == self.tumor_mask.shape
                == self.healthy_mask.shape):
            raise ContractError("record arrays must share one shape")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ContractError("image values must lie in [0, 1]")
        for name, arr in (("tumor_mask", self.tumor_mask),
                          ("healthy_mask", self.healthy_mask)):
            if not np.all((arr == 0.0) | (arr == 1.0)):
                raise ContractError(f"{name} must be binary")


@dataclass(frozen=True)
class PhantomSpec:
    """Deterministic generator settings for one synthetic slice."""

    seed: int = 0
    height: int = 64
    width: int = 64
    ellipse_count: tuple[int, int] = (2, 4)
    intensity_bands: tuple[tuple[float, float], ...] = (
        (0.25, 0.45), (0.45, 0.70), (0.70, 0.95))
    mask_radius: tuple[int, int] = (5, 11)

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ConfigError(
                f"phantom dims too small: {self.height}x{self.width}")
        if self.mask_radius[0] < 1 or self.mask_radius[0] > self.mask_radius[1]:
            raise ConfigError(f"bad mask radius range {self.mask_radius}")
        if self.mask_radius[1] * 2 + 2 >= min(self.height, self.width):
            raise ConfigError("mask radius too large for phantom dims")


def _disk(h: int, w: int, cy: float, cx: float, r: float) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    return (((ys - cy) ** 2 + (xs - cx) ** 2) <= r * r).astype(np.float64)


def generate_phantom(spec: PhantomSpec) -> SliceRecord:
    """Deterministic synthetic slice: brain-like texture plus two disk masks."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    image = np.zeros((h, w))
    n_ellipses = int(rng.integers(spec.ellipse_count[0],
                                  spec.ellipse_count[1] + 1))
    bands = spec.intensity_bands
    # Outermost ellipse is the "brain"; inner ones add structure.
    brain_a = h * rng.uniform(0.38, 0.46)
    brain_b = w * rng.uniform(0.38, 0.46)
    theta = rng.uniform(0.0, np.pi)
    for i in range(n_ellipses):
        shrink = 1.0 - 0.72 * i / max(n_ellipses - 1, 1)
        a, b = brain_a * shrink, brain_b * shrink
        ct, st = np.cos(theta + 0.3 * i), np.sin(theta + 0.3 * i)
        u = (ys - cy) * ct + (xs - cx) * st
        v = -(ys - cy) * st + (xs - cx) * ct
        dist = (u / a) ** 2 + (v / b) ** 2
        lo, hi = bands[min(i, len(bands) - 1)]
        level = rng.uniform(lo, hi)
        soft = np.clip((1.0 - dist) * 6.0, 0.0, 1.0)  # soft rim
        image = np.where(dist <= 1.0, level * soft + image * (1.0 - soft),
                         image)
    inside = _disk(h, w, cy, cx, min(brain_a, brain_b) * 0.98)
    ripple = 0.06 * np.sin(xs * rng.uniform(0.25, 0.55) + rng.uniform(0, 6.28)) \
        * np.sin(ys * rng.uniform(0.25, 0.55) + rng.uniform(0, 6.28))
    image = np.clip(image + ripple * inside, 0.0, 1.0)

    def random_disk() -> np.ndarray:
        r = int(rng.integers(spec.mask_radius[0], spec.mask_radius[1] + 1))
        margin = min(brain_a, brain_b) * 0.9 - r
        margin = max(margin, 2.0)
        angle = rng.uniform(0.0, 2 * np.pi)
        rad = rng.uniform(0.0, margin)
        return _disk(h, w, cy + rad * np.sin(angle), cx + rad * np.cos(angle), r)

    healthy = random_disk()
    tumor = random_disk()
    return SliceRecord(image[None], tumor[None], healthy[None],
                       subject_id=f"phantom-{spec.seed:05d}", slice_index=0)


def slice_volume(volume: np.ndarray, tumor_mask: np.ndarray,
                 healthy_mask: np.ndarray, crop: int,
                 subject_id: str = "volume") -> list[SliceRecord]:
    """Split a [D, H, W] volume into normalized, cropped 2-D records.

    Normalization is per volume, (x - min) / (max - min + 1e-8), applied
    before cropping; slices whose cropped masks are entirely zero are
    dropped.
    """
    volume = np.asarray(volume, dtype=np.float64)
    tumor_mask = np.asarray(tumor_mask, dtype=np.float64)
    healthy_mask = np.asarray(healthy_mask, dtype=np.float64)
    if volume.ndim != 3:
        raise ConfigError(f"volume must be [D, H, W], got {volume.shape}")
    if volume.shape != tumor_mask.shape or volume.shape != healthy_mask.shape:
        raise ConfigError("volume and masks must share one shape")
    d, h, w = volume.shape
    if crop > min(h, w):
        raise ConfigError(f"crop {crop} exceeds volume plane {h}x{w}")
    for name, arr in (("tumor_mask", tumor_mask), ("healthy_mask", healthy_mask)):
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise DataError(f"{name} must be binary")

    lo, hi = volume.min(), volume.max()
    normed = (volume - lo) / (hi - lo + 1e-8)
    y0 = (h - crop) // 2
    x0 = (w - crop) // 2
    records = []
    for k in range(d):
        img = normed[k, y0:y0 + crop, x0:x0 + crop]
        tm = tumor_mask[k, y0:y0 + crop, x0:x0 + crop]
        hm = healthy_mask[k, y0:y0 + crop, x0:x0 + crop]
        if tm.max() == 0.0 and hm.max() == 0.0:
            continue
        records.append(SliceRecord(img[None].copy(), tm[None].copy(),
                                   hm[None].copy(), subject_id, k))
    return records


def mask_apply(record: SliceRecord) -> np.ndarray:
    """The masked scan: image with the healthy-mask region zeroed."""
    return record.image * (1.0 - record.healthy_mask)


def split_by_subject(records: list[SliceRecord], val_subjects: int,
                     seed: int = 0) -> tuple[list[SliceRecord], list[SliceRecord]]:
    """Disjoint train/validation split at subject granularity."""
    subjects = sorted({r.subject_id for r in records})
    if val_subjects >= len(subjects):
        raise ConfigError(
            f"cannot hold out {val_subjects} of {len(subjects)} subjects")
    rng = np.random.default_rng(seed)
    held = set(rng.choice(subjects, size=val_subjects, replace=False)) \
        if val_subjects else set()
    train = [r for r in records if r.subject_id not in held]
    val = [r for r in records if r.subject_id in held]
    return train, val


def save_dataset(directory, records: list[SliceRecord]) -> None:
    """Lay records out as one directory per slice plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for rec in records:
        name = f"{rec.subject_id}_s{rec.slice_index:03d}"
        sub = directory / name
        sub.mkdir(exist_ok=True)
        write_tensor(sub / "image.dkt1", rec.image)
        write_tensor(sub / "tumor_mask.dkt1", rec.tumor_mask)
        write_tensor(sub / "healthy_mask.dkt1", rec.healthy_mask)
        lines.append(f"{rec.subject_id}\t{rec.slice_index}\t{name}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_dataset(directory) -> list[SliceRecord]:
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise DataError(f"dataset manifest not found: {manifest}")
    records = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{manifest}:{lineno}: malformed line")
        subject_id, slice_index, name = parts
        sub = directory / name
        try:
            rec = SliceRecord(
                image=read_tensor(sub / "image.dkt1"),
                tumor_mask=read_tensor(sub / "tumor_mask.dkt1"),
                healthy_mask=read_tensor(sub / "healthy_mask.dkt1"),
                subject_id=subject_id, slice_index=int(slice_index))
        except ContractError as exc:
            raise DataError(f"{sub}: {exc}") from exc
        records.append(rec)
    return records
