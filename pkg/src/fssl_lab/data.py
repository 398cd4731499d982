"""Synthetic datasets, the view-augmentation pipeline, and raw CIFAR ingestion.

Labels ride along with the samples but are consumed only by poison
selection and downstream evaluation; the self-supervised training path
receives bare sample arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RngStream
from .errors import DimTooSmall, LabelOutOfRange, MalformedRecord

_CIFAR_RECORD = 3073   # 1 label byte + 32*32*3 pixel bytes
_CIFAR_CLASSES = 10


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray   # (n, dim) float64
    labels: np.ndarray    # (n,) int64 in [0, n_classes)
    n_classes: int

    def __post_init__(self):
        if self.samples.shape[0] != self.labels.shape[0]:
            raise ValueError("samples and labels disagree in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels outside [0, n_classes)")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def class_means(n_classes: int, dim: int) -> np.ndarray:
    """Orthogonal unit class means: the first n_classes coordinate axes."""
    if dim < n_classes:
        raise DimTooSmall(f"dim {dim} cannot host {n_classes} orthogonal means")
    means = np.zeros((n_classes, dim))
    means[np.arange(n_classes), np.arange(n_classes)] = 1.0
    return means


def synth_blobs(
    n_classes: int,
    dim: int,
    n_per_class: int,
    spread: float,
    rng: RngStream,
) -> Dataset:
    """Isotropic Gaussian blobs around orthogonal unit class means."""
    means = class_means(n_classes, dim)
    samples = np.concatenate(
        [means[c] + rng.normal(0.0, spread, size=(n_per_class, dim)) for c in range(n_classes)]
    )
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), n_per_class)
    return Dataset(samples, labels, n_classes)


def _one_view(x: np.ndarray, noise: float, mask_frac: float, rng: RngStream) -> np.ndarray:
    view = x + rng.normal(0.0, noise, size=x.shape) if noise > 0 else x.copy()
    n_mask = int(round(mask_frac * x.shape[-1]))
    if n_mask:
        view = view.copy()
        view[rng.choice(x.shape[-1], size=n_mask, replace=False)] = 0.0
    return view


def augment_view(x: np.ndarray, noise: float, mask_frac: float, rng: RngStream) -> np.ndarray:
    """A single augmented view (noise then zero-masking)."""
    return _one_view(np.asarray(x, dtype=np.float64), noise, mask_frac, rng)


def augment_pair(
    x: np.ndarray, noise: float, mask_frac: float, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """Two independent views: additive Gaussian noise, then zero-masking.

    Exactly round(mask_frac * dim) coordinates are zeroed per view, chosen
    without replacement, so E[view] = (1 - mask_frac) * x whenever
    mask_frac * dim is integral.
    """
    x = np.asarray(x, dtype=np.float64)
    return _one_view(x, noise, mask_frac, rng), _one_view(x, noise, mask_frac, rng)


def view_batch(batch: np.ndarray, noise: float, mask_frac: float, rng: RngStream) -> np.ndarray:
    """One augmented view per row, drawn with whole-batch RNG calls."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    n, dim = batch.shape
    out = batch + rng.normal(0.0, noise, size=(n, dim)) if noise > 0 else batch.copy()
    n_mask = int(round(mask_frac * dim))
    if n_mask:
        scores = rng.uniform(size=(n, dim))
        idx = np.argpartition(scores, n_mask - 1, axis=1)[:, :n_mask]
        np.put_along_axis(out, idx, 0.0, axis=1)
    return out


def augment_batch(
    batch: np.ndarray, noise: float, mask_frac: float, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """Two independent augmented views per row of a batch."""
    return (view_batch(batch, noise, mask_frac, rng),
            view_batch(batch, noise, mask_frac, rng))


def ingest_cifar10(path) -> Dataset:
    """Load a raw CIFAR-10 binary batch: 3073-byte records, pixels scaled to [0,1]."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % _CIFAR_RECORD != 0:
        raise MalformedRecord(
            f"{path}: {raw.size} bytes is not a multiple of {_CIFAR_RECORD}"
        )
    records = raw.reshape(-1, _CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max(initial=0) >= _CIFAR_CLASSES:
        raise LabelOutOfRange(f"{path}: label byte {labels.max()} >= {_CIFAR_CLASSES}")
    samples = records[:, 1:].astype(np.float64) / 255.0
    return Dataset(samples, labels, _CIFAR_CLASSES)


def dump_csv(ds: Dataset, path) -> None:
    """Write label,coord0,... rows for eyeballing a synthetic dataset."""
    with open(path, "w") as f:
        for x, y in zip(ds.samples, ds.labels):
            f.write(",".join([str(int(y))] + [repr(float(v)) for v in x]) + "\n")
