"""Datasets, IDX file handling, and per-learner partitioning.

The partitioners implement four skew patterns: uniform (iid), class
subsets where each group of learners owns an exclusive set of classes,
a per-learner Gaussian over class indices (overlapping skew with no clean
groups), and two fully disjoint source datasets split across two halves
of the population. Every partitioner hands out pairwise-disjoint sample
sets and is deterministic for a given (dataset, spec) pair.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .params import derive_seed

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

PARTITION_KINDS = ("iid", "class_subsets", "gaussian_labels", "disjoint_datasets")


@dataclass
class Dataset:
    """Feature matrix in [0, 1] plus optional integer labels."""

    features: np.ndarray
    labels: np.ndarray | None
    class_count: int
    feature_shape: tuple[int, ...] = ()

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ValueError(
                    f"{self.features.shape[0]} samples but {self.labels.shape} labels"
                )
            if self.labels.size and (
                self.labels.min() < 0 or self.labels.max() >= self.class_count
            ):
                raise ValueError("labels out of range for class_count")
        if not self.feature_shape:
            self.feature_shape = (self.features.shape[1],)

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.features[indices], labels, self.class_count, self.feature_shape)

    def class_histogram(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError("dataset has no labels")
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass
class LearnerSplit:
    """One learner's train/validation/test slices.

    ``sample_count`` is the training-set size, which is the weight the
    learner's updates carry during aggregation.
    """

    train: Dataset
    validation: Dataset
    test: Dataset

    @property
    def sample_count(self) -> int:
        return self.train.sample_count


@dataclass
class PartitionSpec:
    """Declarative description of how a dataset is skewed across learners."""

    kind: str
    learner_count: int
    rng_seed: int = 0
    subset_count: int = 0
    class_to_subset: dict[int, int] | None = None
    means: list[float] | None = None
    stddev: float = 1.5
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def __post_init__(self):
        if self.kind not in PARTITION_KINDS:
            raise ValueError(f"unknown partition kind {self.kind!r}")
        if self.learner_count < 2:
            raise ValueError("learner_count must be >= 2")
        if self.kind == "class_subsets" and self.subset_count < 1:
            raise ValueError("class_subsets needs subset_count >= 1")
        if self.stddev <= 0:
            raise ValueError("stddev must be positive")


# ---------------------------------------------------------------------------
# IDX format
# ---------------------------------------------------------------------------

def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair.

    Headers are big-endian: magic 2051 then (count, rows, cols) for
    images, magic 2049 then count for labels. Pixels are scaled to
    [0, 1]; images flatten row-major.
    """
    with open(images_path, "rb") as fh:
        image_bytes = fh.read()
    with open(labels_path, "rb") as fh:
        label_bytes = fh.read()
    return parse_idx(image_bytes, label_bytes)


def parse_idx(image_bytes: bytes, label_bytes: bytes) -> Dataset:
    if len(image_bytes) < 16:
        raise ValueError("image file truncated: incomplete header")
    magic, count, rows, cols = struct.unpack(">IIII", image_bytes[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"bad image magic {magic}, expected {IDX_IMAGES_MAGIC}")
    expected = 16 + count * rows * cols
    if len(image_bytes) != expected:
        raise ValueError(
            f"image payload truncated: expected {expected} bytes, got {len(image_bytes)}"
        )

    if len(label_bytes) < 8:
        raise ValueError("label file truncated: incomplete header")
    lmagic, lcount = struct.unpack(">II", label_bytes[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise ValueError(f"bad label magic {lmagic}, expected {IDX_LABELS_MAGIC}")
    if len(label_bytes) != 8 + lcount:
        raise ValueError(
            f"label payload truncated: expected {8 + lcount} bytes, got {len(label_bytes)}"
        )
    if count != lcount:
        raise ValueError(f"image count {count} != label count {lcount}")

    pixels = np.frombuffer(image_bytes, dtype=np.uint8, offset=16)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8, offset=8).astype(np.int64)
    class_count = int(labels.max()) + 1 if count else 0
    return Dataset(features, labels, class_count, feature_shape=(rows, cols))


def serialize_idx(dataset: Dataset) -> tuple[bytes, bytes]:
    """Write a dataset back to IDX bytes (inverse of ``parse_idx``)."""
    if dataset.labels is None:
        raise ValueError("IDX serialization needs labels")
    if len(dataset.feature_shape) != 2:
        raise ValueError("IDX serialization needs a 2-D image shape")
    rows, cols = dataset.feature_shape
    pixels = np.round(dataset.features * 255.0).astype(np.uint8)
    images = io.BytesIO()
    images.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, dataset.sample_count, rows, cols))
    images.write(pixels.tobytes())
    labels = io.BytesIO()
    labels.write(struct.pack(">II", IDX_LABELS_MAGIC, dataset.sample_count))
    labels.write(dataset.labels.astype(np.uint8).tobytes())
    return images.getvalue(), labels.getvalue()


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    image_bytes, label_bytes = serialize_idx(dataset)
    with open(images_path, "wb") as fh:
        fh.write(image_bytes)
    with open(labels_path, "wb") as fh:
        fh.write(label_bytes)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def generate_blobs(
    class_count: int,
    samples_per_class: int,
    dim: int,
    spread: float,
    seed: int,
) -> Dataset:
    """Gaussian clusters around well-separated random centers.

    Centers are drawn inside [0.2, 0.8]^dim with a minimum pairwise
    distance so small spreads give a linearly separable problem. Features
    are clamped to [0, 1]. Deterministic per seed.
    """
    if min(class_count, samples_per_class, dim) < 1:
        raise ValueError("class_count, samples_per_class, and dim must be positive")
    if spread <= 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(seed)
    centers = _pick_centers(rng, class_count, dim, min_dist=0.25)
    features = np.empty((class_count * samples_per_class, dim))
    labels = np.empty(class_count * samples_per_class, dtype=np.int64)
    for cls in range(class_count):
        start = cls * samples_per_class
        noise = rng.normal(0.0, spread, size=(samples_per_class, dim))
        features[start : start + samples_per_class] = centers[cls] + noise
        labels[start : start + samples_per_class] = cls
    np.clip(features, 0.0, 1.0, out=features)
    return Dataset(features, labels, class_count)


def _pick_centers(rng: np.random.Generator, count: int, dim: int, min_dist: float) -> np.ndarray:
    centers: list[np.ndarray] = []
    for _ in range(count):
        best, best_dist = None, -1.0
        for _ in range(200):
            candidate = rng.uniform(0.2, 0.8, size=dim)
            dist = min(
                (float(np.linalg.norm(candidate - c)) for c in centers), default=math.inf
            )
            if dist >= min_dist:
                best = candidate
                break
            if dist > best_dist:
                best, best_dist = candidate, dist
        centers.append(best)
    return np.array(centers)


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------

def split_three_way(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> LearnerSplit:
    """Shuffle once by seed, then slice into train/validation/test."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be three positive values")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    n = dataset.sample_count
    n_train = int(n * fractions[0])
    n_val = int(n * fractions[1])
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"{n} samples cannot fill a {fractions} three-way split")
    order = np.random.default_rng(seed).permutation(n)
    return LearnerSplit(
        train=dataset.subset(order[:n_train]),
        validation=dataset.subset(order[n_train : n_train + n_val]),
        test=dataset.subset(order[n_train + n_val :]),
    )


def partition(
    dataset: Dataset,
    spec: PartitionSpec,
    second: Dataset | None = None,
) -> list[LearnerSplit]:
    """Assign disjoint sample sets to learners per the spec, then split
    each learner's share three ways.

    ``second`` supplies the second source for ``disjoint_datasets`` (the
    first half of the population draws from ``dataset``, the second half
    from ``second``).
    """
    if spec.kind == "disjoint_datasets":
        if second is None:
            raise ValueError("disjoint_datasets partition requires a second dataset")
        return _partition_disjoint(dataset, second, spec)

    assignments = learner_index_sets(dataset, spec)
    return _split_assignments(dataset, assignments, spec)


def learner_index_sets(dataset: Dataset, spec: PartitionSpec) -> list[np.ndarray]:
    """Per-learner sample index arrays (pairwise disjoint)."""
    if spec.kind == "iid":
        return _assign_iid(dataset, spec)
    if spec.kind == "class_subsets":
        return _assign_class_subsets(dataset, spec)
    if spec.kind == "gaussian_labels":
        return _assign_gaussian(dataset, spec)
    raise ValueError(f"no index assignment for kind {spec.kind!r}")


def _split_assignments(dataset, assignments, spec) -> list[LearnerSplit]:
    splits = []
    for learner, indices in enumerate(assignments):
        if indices.size == 0:
            raise ValueError(f"learner {learner} received no samples")
        share = dataset.subset(indices)
        seed = derive_seed(spec.rng_seed, "split", learner)
        splits.append(split_three_way(share, spec.fractions, seed))
    return splits


def _assign_iid(dataset: Dataset, spec: PartitionSpec) -> list[np.ndarray]:
    # Stratified dealing keeps every learner's class histogram within one
    # sample per class of the global proportions.
    rng = np.random.default_rng(derive_seed(spec.rng_seed, "iid"))
    k = spec.learner_count
    if dataset.sample_count < k:
        raise ValueError(f"{dataset.sample_count} samples cannot cover {k} learners")
    buckets: list[list[int]] = [[] for _ in range(k)]
    if dataset.labels is None:
        order = rng.permutation(dataset.sample_count)
        for pos, idx in enumerate(order):
            buckets[pos % k].append(int(idx))
    else:
        for cls in range(dataset.class_count):
            cls_indices = np.flatnonzero(dataset.labels == cls)
            cls_indices = cls_indices[rng.permutation(cls_indices.size)]
            for pos, idx in enumerate(cls_indices):
                buckets[pos % k].append(int(idx))
    return [np.sort(np.array(b, dtype=np.int64)) for b in buckets]


def default_class_map(class_count: int, subset_count: int) -> dict[int, int]:
    """Contiguous class blocks: classes [0..C/S) to subset 0, and so on."""
    return {c: c * subset_count // class_count for c in range(class_count)}


def _assign_class_subsets(dataset: Dataset, spec: PartitionSpec) -> list[np.ndarray]:
    if dataset.labels is None:
        raise ValueError("class_subsets partition requires labels")
    class_map = spec.class_to_subset or default_class_map(dataset.class_count, spec.subset_count)
    if set(class_map.keys()) != set(range(dataset.class_count)):
        raise ValueError("class_to_subset must map every class exactly once")
    for cls, sub in class_map.items():
        if not 0 <= sub < spec.subset_count:
            raise ValueError(f"class {cls} mapped to invalid subset {sub}")
    for sub in range(spec.subset_count):
        if sub not in class_map.values():
            raise ValueError(f"subset {sub} receives no classes")

    k, s = spec.learner_count, spec.subset_count
    learner_subset = [i * s // k for i in range(k)]
    rng = np.random.default_rng(derive_seed(spec.rng_seed, "class_subsets"))
    buckets: list[list[int]] = [[] for _ in range(k)]
    for sub in range(s):
        members = [i for i in range(k) if learner_subset[i] == sub]
        if not members:
            raise ValueError(f"subset {sub} has no learners (too many subsets?)")
        classes = [c for c, m in class_map.items() if m == sub]
        for cls in classes:
            cls_indices = np.flatnonzero(dataset.labels == cls)
            cls_indices = cls_indices[rng.permutation(cls_indices.size)]
            for pos, idx in enumerate(cls_indices):
                buckets[members[pos % len(members)]].append(int(idx))
    return [np.sort(np.array(b, dtype=np.int64)) for b in buckets]


def gaussian_class_weights(
    class_count: int, mean: float, stddev: float
) -> np.ndarray:
    """Normal density sampled at integer class indices, normalized."""
    classes = np.arange(class_count, dtype=np.float64)
    density = np.exp(-0.5 * ((classes - mean) / stddev) ** 2)
    return density / density.sum()


def largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``weights``.

    Floors the exact shares, then hands the leftover units to the largest
    fractional remainders (ties broken by lower index), so the result is
    deterministic and sums to ``total``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.sum() <= 0:
        raise ValueError("weights must have positive sum")
    exact = total * weights / weights.sum()
    counts = np.floor(exact).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        fracs = exact - counts
        for idx in np.argsort(-fracs, kind="stable")[:remainder]:
            counts[idx] += 1
    return counts


def _assign_gaussian(dataset: Dataset, spec: PartitionSpec) -> list[np.ndarray]:
    if dataset.labels is None:
        raise ValueError("gaussian_labels partition requires labels")
    k, c = spec.learner_count, dataset.class_count
    if spec.means is None:
        means = [i * (c - 1) / (k - 1) for i in range(k)] if k > 1 else [c / 2]
    else:
        means = list(spec.means)
        if len(means) != k:
            raise ValueError(f"{len(means)} means for {k} learners")

    rng = np.random.default_rng(derive_seed(spec.rng_seed, "gaussian_labels"))
    pools = []
    for cls in range(c):
        cls_indices = np.flatnonzero(dataset.labels == cls)
        pools.append(list(cls_indices[rng.permutation(cls_indices.size)]))

    budget = dataset.sample_count // k
    buckets: list[list[int]] = [[] for _ in range(k)]
    for learner in range(k):
        weights = gaussian_class_weights(c, means[learner], spec.stddev)
        desired = largest_remainder(budget, weights)
        for cls in range(c):
            take = min(int(desired[cls]), len(pools[cls]))
            for _ in range(take):
                buckets[learner].append(int(pools[cls].pop()))
    return [np.sort(np.array(b, dtype=np.int64)) for b in buckets]


def _partition_disjoint(
    first: Dataset, second: Dataset, spec: PartitionSpec
) -> list[LearnerSplit]:
    k = spec.learner_count
    half = k // 2
    if half < 1 or k - half < 1:
        raise ValueError("disjoint_datasets needs at least 2 learners")

    def side(dataset: Dataset, members: int, tag: str) -> list[LearnerSplit]:
        sub_spec = PartitionSpec(
            kind="iid",
            learner_count=max(members, 2),
            rng_seed=derive_seed(spec.rng_seed, tag),
            fractions=spec.fractions,
        )
        assignments = _assign_iid(dataset, sub_spec)[:members]
        return _split_assignments(dataset, assignments, sub_spec)

    if half == 1:
        # _assign_iid needs >= 2 learners; deal a single-member side directly
        first_side = _split_assignments(
            first,
            [np.arange(first.sample_count, dtype=np.int64)],
            PartitionSpec("iid", 2, derive_seed(spec.rng_seed, "A"), fractions=spec.fractions),
        )
    else:
        first_side = side(first, half, "A")
    second_side = side(second, k - half, "B")
    return first_side + second_side


def partition_preview(dataset: Dataset, spec: PartitionSpec, second: Dataset | None = None) -> str:
    """Learner-by-class histogram as ``learner_id,class,count`` CSV."""
    splits = partition(dataset, spec, second=second)
    lines = ["learner_id,class,count"]
    for learner, split in enumerate(splits):
        counts: dict[int, int] = {}
        for part in (split.train, split.validation, split.test):
            if part.labels is None:
                continue
            for cls, count in zip(*np.unique(part.labels, return_counts=True)):
                counts[int(cls)] = counts.get(int(cls), 0) + int(count)
        for cls in sorted(counts):
            lines.append(f"{learner},{cls},{counts[cls]}")
    return "\n".join(lines) + "\n"
