"""Dataset ingestion, train/validation splitting, batching, augmentations.

All pipeline code works on plain numpy arrays; tensors enter the picture only
inside the training loops.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .losses import label_smooth, one_hot

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (n, H, W) or flat (n, d)
    labels: np.ndarray  # int class ids in [0, c)
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        if len(self.images) == 0:
            raise FormatError(f"{self.name}: empty dataset")
        if len(self.images) != len(self.labels):
            raise FormatError(
                f"{self.name}: {len(self.images)} images vs {len(self.labels)} labels"
            )
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise FormatError(f"{self.name}: label outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.images)

    @property
    def is_image(self):
        return self.images.ndim == 3

    def flat_inputs(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.name)


@dataclass
class Batch:
    x: np.ndarray  # flat (b, d) model inputs
    y: np.ndarray  # (b, c) target distributions
    raw_labels: np.ndarray  # (b,) int ids


def load_idx(path):
    """Parse one big-endian IDX file (images or labels), scaled to [0, 1]."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_IMAGES_MAGIC:
        if len(raw) < 16:
            raise FormatError(f"{path}: truncated IDX image header")
        n, h, w = struct.unpack(">III", raw[4:16])
        payload = raw[16:]
        if len(payload) != n * h * w:
            raise FormatError(
                f"{path}: expected {n * h * w} image bytes, got {len(payload)}"
            )
        data = np.frombuffer(payload, dtype=np.uint8).reshape(n, h, w)
        return data.astype(np.float64) / 255.0
    if magic == IDX_LABELS_MAGIC:
        (n,) = struct.unpack(">I", raw[4:8])
        payload = raw[8:]
        if len(payload) != n:
            raise FormatError(f"{path}: expected {n} label bytes, got {len(payload)}")
        return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}")


def load_idx_dataset(images_path, labels_path, num_classes=10, name="idx"):
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: not an IDX image file")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: not an IDX label file")
    return Dataset(images, labels, num_classes=num_classes, name=name)


def load_csv(path, name="csv"):
    """Rows of "label, f1, ..., fd" with a constant feature count."""
    rows = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
                if width < 2:
                    raise FormatError(f"{path}:{lineno}: need a label and features")
            elif len(cells) != width:
                raise FormatError(
                    f"{path}:{lineno}: ragged row, {len(cells)} cells vs {width}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                bad = next(i for i, c in enumerate(cells) if not _is_number(c))
                raise FormatError(
                    f"{path}:{lineno}: non-numeric cell in column {bad + 1}"
                )
    if not rows:
        raise FormatError(f"{path}: empty dataset")
    arr = np.asarray(rows)
    labels = arr[:, 0].astype(np.int64)
    if np.any(arr[:, 0] != labels):
        raise FormatError(f"{path}: non-integer label values")
    features = arr[:, 1:]
    return Dataset(features, labels, num_classes=int(labels.max()) + 1, name=name)


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def save_csv(path, ds: Dataset):
    flat = ds.flat_inputs()
    with open(path, "w") as f:
        for label, row in zip(ds.labels, flat):
            f.write(",".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")


def split_train_val(ds: Dataset, holdout_fraction: float = 0.10, seed: int = 0):
    """Deterministic held-out split: floor(n*fraction) samples (min 1) to val."""
    if not 0 < holdout_fraction < 1:
        raise SplitError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    n = len(ds)
    if n < 2:
        raise SplitError(f"cannot split a dataset of size {n}")
    n_val = max(1, int(np.floor(n * holdout_fraction)))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return ds.subset(train_idx), ds.subset(val_idx)


@dataclass
class AugmentConfig:
    crop_flip: bool = False
    crop_padding: int = 4
    label_smooth_eps: float = 0.0
    mixup_alpha: float = 0.0  # 0 disables
    cutmix_alpha: float = 0.0  # 0 disables


def random_crop_flip(images: np.ndarray, rng, padding: int = 4) -> np.ndarray:
    """4-pixel zero-padded random crop plus horizontal flip, per image."""
    n, h, w = images.shape
    padded = np.zeros((n, h + 2 * padding, w + 2 * padding))
    padded[:, padding : padding + h, padding : padding + w] = images
    out = np.empty_like(images)
    offs = rng.integers(0, 2 * padding + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    for i in range(n):
        oy, ox = offs[i]
        crop = padded[i, oy : oy + h, ox : ox + w]
        out[i] = crop[:, ::-1] if flips[i] else crop
    return out


def mixup(batch_a: Batch, batch_b: Batch, alpha: float, rng) -> Batch:
    """Convex combination of two batches with a single Beta(alpha, alpha) lam."""
    if batch_a.x.shape != batch_b.x.shape:
        raise FormatError("mixup: batch shapes differ")
    lam = rng.beta(alpha, alpha)
    return Batch(
        x=lam * batch_a.x + (1 - lam) * batch_b.x,
        y=lam * batch_a.y + (1 - lam) * batch_b.y,
        raw_labels=np.where(lam >= 0.5, batch_a.raw_labels, batch_b.raw_labels),
    )


def cutmix_images(images_a, images_b, alpha: float, rng):
    """Paste one rectangle of b into a; returns (images, realized area ratio)."""
    if images_a.ndim != 3:
        raise FormatError(f"cutmix: expected image batches, got shape {images_a.shape}")
    n, h, w = images_a.shape
    lam = rng.beta(alpha, alpha)
    cut = np.sqrt(1.0 - lam)
    ph, pw = int(np.round(h * cut)), int(np.round(w * cut))
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    y0, y1 = np.clip([cy - ph // 2, cy + (ph + 1) // 2], 0, h)
    x0, x1 = np.clip([cx - pw // 2, cx + (pw + 1) // 2], 0, w)
    out = images_a.copy()
    out[:, y0:y1, x0:x1] = images_b[:, y0:y1, x0:x1]
    area = (y1 - y0) * (x1 - x0) / (h * w)
    return out, area


def cutmix(batch_a: Batch, batch_b: Batch, alpha: float, rng,
           image_shape=None) -> Batch:
    """Batch-level cutmix; label weights use the realized (clipped) patch area."""
    if image_shape is None:
        raise FormatError("cutmix: flat inputs need an explicit image_shape")
    h, w = image_shape
    imgs_a = batch_a.x.reshape(-1, h, w)
    imgs_b = batch_b.x.reshape(-1, h, w)
    mixed, area = cutmix_images(imgs_a, imgs_b, alpha, rng)
    return Batch(
        x=mixed.reshape(batch_a.x.shape),
        y=(1 - area) * batch_a.y + area * batch_b.y,
        raw_labels=np.where(area < 0.5, batch_a.raw_labels, batch_b.raw_labels),
    )


def augment_pipeline(batch: Batch, config: AugmentConfig, rng,
                     image_shape=None) -> Batch:
    """crop/flip -> (mixup | cutmix, fair coin when both on) -> label smoothing."""
    out = batch
    if config.crop_flip:
        if image_shape is None:
            raise FormatError("augment: crop_flip needs image-shaped inputs")
        h, w = image_shape
        imgs = random_crop_flip(out.x.reshape(-1, h, w), rng, config.crop_padding)
        out = Batch(x=imgs.reshape(out.x.shape), y=out.y, raw_labels=out.raw_labels)
    use_mix = config.mixup_alpha > 0
    use_cut = config.cutmix_alpha > 0
    if use_mix and use_cut:
        if rng.random() < 0.5:
            use_cut = False
        else:
            use_mix = False
    if use_mix or use_cut:
        perm = rng.permutation(len(out.x))
        partner = Batch(x=out.x[perm], y=out.y[perm], raw_labels=out.raw_labels[perm])
        if use_mix:
            out = mixup(out, partner, config.mixup_alpha, rng)
        else:
            out = cutmix(out, partner, config.cutmix_alpha, rng, image_shape)
    if config.label_smooth_eps > 0:
        out = Batch(
            x=out.x,
            y=label_smooth(out.y, config.label_smooth_eps),
            raw_labels=out.raw_labels,
        )
    return out


def iter_batches(ds: Dataset, batch_size: int, rng, augment: AugmentConfig = None):
    """One epoch of seeded-shuffle batches; every sample appears exactly once."""
    idx = rng.permutation(len(ds))
    flat = ds.flat_inputs()
    onehot = one_hot(ds.labels, ds.num_classes)
    image_shape = ds.images.shape[1:] if ds.is_image else None
    for start in range(0, len(ds), batch_size):
        sel = idx[start : start + batch_size]
        batch = Batch(x=flat[sel], y=onehot[sel], raw_labels=ds.labels[sel])
        if augment is not None:
            batch = augment_pipeline(batch, augment, rng, image_shape)
        yield batch


class CyclicValBatches:
    """Endless validation batches, reshuffled each pass, served un-augmented."""

    def __init__(self, ds: Dataset, batch_size: int, rng):
        self.ds = ds
        self.batch_size = batch_size
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self._it = iter(())

    def next(self) -> Batch:
        batch = next(self._it, None)
        if batch is None:
            self._it = iter_batches(self.ds, self.batch_size, self.rng)
            batch = next(self._it)
        return batch


def gaussian_mixture(n: int, dim: int, num_classes: int, seed: int,
                     spread: float = 1.0, name="gaussian-mixture") -> Dataset:
    """Synthetic classification data: one spherical Gaussian per class."""
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, dim))
    labels = rng.integers(0, num_classes, size=n)
    samples = means[labels] + spread * rng.normal(size=(n, dim))
    return Dataset(samples, labels, num_classes=num_classes, name=name)
