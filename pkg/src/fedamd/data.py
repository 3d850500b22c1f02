"""Datasets, non-IID partitioning, batch sampling and IDX ingestion."""

from __future__ import annotations

import functools
import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, UsageError
from .objectives import Batch
from .numerics import SERVER, Purpose, stream

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# data-generation sub-streams (carried in the round slot of the stream tuple)
MEANS_STREAM = 0
TRAIN_STREAM = 1
TEST_STREAM = 2
PARTITION_STREAM = 5


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        if self.labels.shape[0] < 1:
            raise UsageError("dataset must contain at least one sample")
        if self.features.shape[0] != self.labels.shape[0]:
            raise UsageError("features and labels disagree on sample count")
        if self.labels.min() < 0 or self.labels.max() >= self.classes:
            raise UsageError(f"labels must lie in [0, {self.classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True, eq=False)
class ClientShard:
    features: np.ndarray
    labels: np.ndarray
    client: int

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    def as_batch(self) -> Batch:
        return Batch(self.features, self.labels, self.client)


@dataclass(frozen=True, eq=False)
class Partition:
    shards: list[ClientShard]
    classes_per_client: int = 2
    source: Dataset | None = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return len(self.shards)

    def sizes(self) -> list[int]:
        return [s.n for s in self.shards]


def _feature_scales(in_dim: int, anisotropy: float, feature_scale: float) -> np.ndarray:
    if in_dim == 1 or anisotropy == 1.0:
        return np.full(in_dim, float(feature_scale))
    return feature_scale * anisotropy ** (-np.arange(in_dim) / (in_dim - 1))


def gen_synthetic_classification(
    in_dim: int,
    C: int,
    N: int,
    cluster_spread: float,
    seed: int,
    *,
    anisotropy: float = 1.0,
    feature_scale: float = 1.0,
    split: str = "train",
) -> Dataset:
    """Gaussian class clusters around seeded unit-sphere means.

    Sample ``i`` has label ``i mod C`` (balanced classes) and features
    ``(mean[label] + cluster_spread * z) * s`` with ``z ~ N(0, I)``. The
    per-dimension scale ``s`` decays geometrically from ``feature_scale``
    to ``feature_scale / anisotropy``; ``anisotropy=1`` is isotropic.
    ``split`` picks an independent sample stream over the same means.
    """
    if N < C:
        raise UsageError("need at least one sample per class (N >= C)")
    if split not in ("train", "test"):
        raise UsageError("split must be 'train' or 'test'")
    mrng = stream(seed, MEANS_STREAM, SERVER, Purpose.DATA_GENERATION)
    means = mrng.standard_normal((C, in_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    srng = stream(seed, TRAIN_STREAM if split == "train" else TEST_STREAM, SERVER, Purpose.DATA_GENERATION)
    labels = np.arange(N, dtype=np.int64) % C
    noise = srng.standard_normal((N, in_dim))
    feats = (means[labels] + cluster_spread * noise) * _feature_scales(in_dim, anisotropy, feature_scale)
    return Dataset(np.ascontiguousarray(feats), labels, C)


def _balanced(total: int, parts: int) -> list[int]:
    q, r = divmod(total, parts)
    return [q + (i < r) for i in range(parts)]


def partition_label_skew(ds: Dataset, M: int, classes_per_client: int = 2, seed: int = 0) -> Partition:
    """Sort by label, cut into ``M * classes_per_client`` contiguous chunks,
    and deal the chunks to clients after one seeded shuffle.

    Chunk sizes are chosen so shard sizes differ by at most one. Raises
    :class:`ConfigError` if a resulting shard would hold more than
    ``classes_per_client`` labels, which happens when class sizes are not
    compatible with equal chunks.
    """
    if M < 1 or classes_per_client < 1:
        raise ConfigError("M and classes_per_client must be positive")
    if ds.classes > M * classes_per_client:
        raise ConfigError(
            f"cannot cover {ds.classes} classes with M*classes_per_client = {M * classes_per_client} chunks"
        )
    if len(ds) < M * classes_per_client:
        raise ConfigError("fewer samples than chunks")
    order = np.argsort(ds.labels, kind="stable")
    shard_sizes = _balanced(len(ds), M)
    slots = [(m, j) for m in range(M) for j in range(classes_per_client)]
    slot_size = {(m, j): s for m in range(M) for j, s in enumerate(_balanced(shard_sizes[m], classes_per_client))}
    rng = stream(seed, PARTITION_STREAM, SERVER, Purpose.DATA_GENERATION)
    perm = rng.permutation(len(slots))
    pieces: dict[int, list[np.ndarray]] = {m: [] for m in range(M)}
    pos = 0
    for k in perm:
        m, j = slots[k]
        size = slot_size[(m, j)]
        pieces[m].append(order[pos: pos + size])
        pos += size
    shards = []
    for m in range(M):
        idx = np.concatenate(pieces[m])
        labels = ds.labels[idx]
        if np.unique(labels).size > classes_per_client:
            raise ConfigError(
                f"client {m} would hold {np.unique(labels).size} labels > {classes_per_client}; "
                "class sizes must be multiples of the chunk size"
            )
        shards.append(ClientShard(np.ascontiguousarray(ds.features[idx]), np.ascontiguousarray(labels), m))
    return Partition(shards, classes_per_client, ds)


def quadratic_partition(M: int, n: int) -> Partition:
    """Placeholder shards for quadratic clients: ``n`` featureless samples each."""
    return Partition(
        [ClientShard(np.zeros((n, 0)), np.zeros(n, dtype=np.int64), m) for m in range(M)],
        classes_per_client=1,
    )


@functools.lru_cache(maxsize=256)
def _warn_clamp(size: int, n: int) -> None:
    # cached so each (size, n) pair is reported once per process
    log.warning("batch size %d exceeds shard size %d; clamping", size, n)


def sample_batch(shard: ClientShard, size: int, rng: np.random.Generator) -> Batch:
    """Uniform batch without replacement.

    ``size >= n`` returns the whole shard in stored order without drawing
    from ``rng``, so full-batch gradients are exact and reproducible.
    """
    n = shard.n
    if n < 1:
        raise UsageError("cannot sample from an empty shard")
    if size < 1:
        raise UsageError("batch size must be >= 1")
    if size >= n:
        if size > n:
            _warn_clamp(size, n)
        return shard.as_batch()
    idx = rng.choice(n, size=size, replace=False)
    return Batch(shard.features[idx], shard.labels[idx], shard.client)


# --- IDX -----------------------------------------------------------------


def _read_idx(path: str | os.PathLike, expect_magic: int, what: str) -> tuple[list[int], np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{what} file truncated before magic number", 0)
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise FormatError(f"{what} file has magic 0x{magic:08x}, expected 0x{expect_magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{what} file truncated inside dimension header", len(raw))
    dims = list(struct.unpack(f">{ndim}I", raw[4:header]))
    body = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < body:
        raise FormatError(f"{what} file truncated: need {body} data bytes, found {len(raw) - header}", len(raw))
    if len(raw) - header > body:
        raise FormatError(f"{what} file has {len(raw) - header - body} trailing bytes", header + body)
    return dims, np.frombuffer(raw, dtype=np.uint8, count=body, offset=header)


def load_idx(images_path, labels_path, classes: int | None = None) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to ``[0, 1]``."""
    idims, pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    ldims, labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if idims[0] != ldims[0]:
        raise FormatError(f"count mismatch: {idims[0]} images vs {ldims[0]} labels", 4)
    n = idims[0]
    feats = pixels.reshape(n, -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if classes is None:
        classes = max(int(labels.max()) + 1, 2)
    return Dataset(np.ascontiguousarray(feats), labels, classes)


def idx_bytes(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def save_idx(ds: Dataset, images_path, labels_path, shape: tuple[int, int] | None = None) -> None:
    """Write ``ds`` as an IDX pair. Features must be multiples of 1/255."""
    n, width = ds.features.shape
    rows, cols = shape if shape is not None else (1, width)
    if rows * cols != width:
        raise UsageError(f"shape {shape} does not hold {width} features")
    pix = np.rint(ds.features * 255.0)
    if pix.min() < 0 or pix.max() > 255 or not np.array_equal(pix / 255.0, ds.features):
        raise UsageError("features must be k/255 for integer k in [0, 255]")
    with open(images_path, "wb") as fh:
        fh.write(idx_bytes(pix.astype(np.uint8).reshape(n, rows, cols)))
    with open(labels_path, "wb") as fh:
        fh.write(idx_bytes(ds.labels.astype(np.uint8)))
