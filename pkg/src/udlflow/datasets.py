"""Synthetic 2-D distributions and desk-scale ingestion of IDX/CSV data."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError

SYNTH_NAMES = ("two-moons", "rings", "checkerboard", "gaussian-mixture")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""
    shape: tuple = ()
    value_range: tuple | None = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if not self.shape:
            self.shape = (self.samples.shape[1],)
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape[0] != self.samples.shape[0]:
                raise ContractError("labels length must match sample count")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def empty(self) -> bool:
        return self.n == 0


def synth(name: str, n: int, seed: int = 0, **kwargs) -> Dataset:
    """Built-in 2-D generators at unit scale."""
    if n <= 0:
        raise ContractError("n must be positive")
    rng = np.random.default_rng(seed)
    if name == "two-moons":
        noise = kwargs.get("noise", 0.06)
        half = n // 2
        t1 = rng.uniform(0.0, np.pi, half)
        t2 = rng.uniform(0.0, np.pi, n - half)
        upper = np.stack([np.cos(t1), np.sin(t1)], axis=1)
        lower = np.stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)], axis=1)
        pts = np.concatenate([upper, lower]) + rng.normal(0, noise, (n, 2))
        labels = np.concatenate([np.zeros(half, int), np.ones(n - half, int)])
        order = rng.permutation(n)
        return Dataset(pts[order], labels[order], name, value_range=None)
    if name == "rings":
        noise = kwargs.get("noise", 0.04)
        radii = np.where(rng.integers(0, 2, n) == 0, 0.5, 1.0)
        theta = rng.uniform(0, 2 * np.pi, n)
        pts = radii[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        pts += rng.normal(0, noise, (n, 2))
        labels = (radii > 0.75).astype(int)
        return Dataset(pts, labels, name)
    if name == "checkerboard":
        pts = np.empty((0, 2))
        while pts.shape[0] < n:
            cand = rng.uniform(-2.0, 2.0, (2 * n, 2))
            keep = (np.floor(cand[:, 0]) + np.floor(cand[:, 1])) % 2 == 0
            pts = np.concatenate([pts, cand[keep]])
        return Dataset(pts[:n], None, name)
    if name == "gaussian-mixture":
        centers = np.asarray(kwargs.get(
            "centers", [(-1.5, -1.5), (-1.5, 1.5), (1.5, -1.5), (1.5, 1.5)]),
            dtype=np.float64)
        std = kwargs.get("std", 0.3)
        comp = rng.integers(0, centers.shape[0], n)
        pts = centers[comp] + rng.normal(0, std, (n, centers.shape[1]))
        return Dataset(pts, comp, name)
    raise ContractError(f"unknown synthetic dataset {name!r}")


# ---------------------------------------------------------------------------
# IDX ingestion

def _read_idx(path: str, expect_magic: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expect_magic:
        raise FormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims)):
        raise FormatError(f"{path}: payload size does not match declared dims {dims}")
    return data.reshape(dims)


def load_idx(images_path: str, labels_path: str | None = None,
             class_filter: int | None = None, downsample: int | None = None,
             scale: bool = True) -> Dataset:
    """Load IDX images (optionally label-filtered and mean-pooled).

    scale=True maps to [0, 1]; scale=False keeps the raw integer values
    so they can be dequantized later (only without pooling, which breaks
    integrality).
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC).astype(np.float64)
    labels = None
    if labels_path is not None:
        labels = _read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
        if labels.shape[0] != images.shape[0]:
            raise FormatError("image and label counts disagree")
    if class_filter is not None:
        if labels is None:
            raise ContractError("class_filter requires a labels file")
        keep = labels == class_filter
        images, labels = images[keep], labels[keep]
    n, h, w = images.shape
    if downsample is not None and downsample > 1:
        if h % downsample or w % downsample:
            raise ContractError(
                f"downsample factor {downsample} does not divide {h}x{w}")
        images = images.reshape(n, h // downsample, downsample,
                                w // downsample, downsample).mean(axis=(2, 4))
        h, w = h // downsample, w // downsample
    if scale:
        images = images / 255.0
        vrange = (0.0, 1.0)
    else:
        vrange = (0.0, 255.0)
    return Dataset(images.reshape(n, h * w), labels, name="idx",
                   shape=(h, w, 1), value_range=vrange)


# ---------------------------------------------------------------------------
# CSV

def load_csv(path: str, has_header: bool = False) -> Dataset:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for i, row in enumerate(reader):
            if i == 0 and has_header:
                continue
            if not row:
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise FormatError(f"{path}: non-numeric cell in row {i}") from None
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise FormatError(f"{path}: ragged row {i}")
    return Dataset(np.asarray(rows, dtype=np.float64), None, name="csv")


def save_csv(samples: np.ndarray, path: str, header: list | None = None) -> None:
    """Write rows with shortest round-trip decimal representation."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in samples:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
