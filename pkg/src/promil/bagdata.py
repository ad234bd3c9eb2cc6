"""Percentage-based bag datasets.

Synthetic bags draw instances from two isotropic Gaussian clusters; each
bag's target positive fraction comes from Uniform(0, 1) and the bag label
compares the realized fraction against a threshold (percentage rule) or
checks for any positive instance (standard rule).  The MNIST-bag path
builds the same structure from user-supplied IDX files, with the digit 9
as the positive class.

Hidden per-instance labels ride along for diagnostics only; training never
sees them.
"""

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

DATASET_SCHEMA = "bagdata/1"
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
LABEL_RULES = ("percentage", "standard")


class IdxParseError(ValueError):
    """IDX file violated the format; the message names the byte offset."""


@dataclass
class Bag:
    id: str
    instances: np.ndarray
    label: int
    hidden_instance_labels: np.ndarray = None
    positive_fraction: float = None
    split: str = None

    def __post_init__(self):
        self.instances = np.asarray(self.instances, dtype=np.float64)
        if self.instances.ndim != 2 or self.instances.shape[0] == 0:
            raise ValueError(f"bag {self.id}: instances must be a nonempty 2-D array")
        if self.label not in (0, 1):
            raise ValueError(f"bag {self.id}: label must be 0 or 1, got {self.label}")
        if self.hidden_instance_labels is not None:
            self.hidden_instance_labels = np.asarray(self.hidden_instance_labels, dtype=np.int64)
            if len(self.hidden_instance_labels) != len(self.instances):
                raise ValueError(f"bag {self.id}: hidden label count mismatch")
            if self.positive_fraction is not None:
                expect = self.hidden_instance_labels.sum() / len(self.instances)
                if abs(self.positive_fraction - expect) > 1e-12:
                    raise ValueError(
                        f"bag {self.id}: positive_fraction {self.positive_fraction} "
                        f"inconsistent with hidden labels ({expect})"
                    )

    def __len__(self):
        return self.instances.shape[0]


@dataclass
class SyntheticSpec:
    n_bags: int
    threshold_qstar: float
    bag_size_mean: float = 30.0
    bag_size_std: float = 5.0
    feature_dim: int = 2
    class_separation: float = 6.0
    noise_std: float = 1.0
    label_rule: str = "percentage"
    rebalance: bool = False

    def __post_init__(self):
        if self.n_bags < 2:
            raise ValueError(f"n_bags must be at least 2, got {self.n_bags}")
        if not 0.0 < self.threshold_qstar < 1.0:
            raise ValueError(f"threshold_qstar must be in (0, 1), got {self.threshold_qstar}")
        if self.bag_size_mean < 2:
            raise ValueError(f"bag_size_mean must be >= 2, got {self.bag_size_mean}")
        if self.bag_size_std < 0:
            raise ValueError(f"bag_size_std must be nonnegative, got {self.bag_size_std}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be positive, got {self.feature_dim}")
        if self.class_separation < 0:
            raise ValueError(f"class_separation must be nonnegative, got {self.class_separation}")
        if self.noise_std <= 0:
            raise ValueError(f"noise_std must be positive, got {self.noise_std}")
        if self.label_rule not in LABEL_RULES:
            raise ValueError(f"label_rule must be one of {LABEL_RULES}, got {self.label_rule!r}")


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)


def _bag_label(n_pos, size, spec):
    if spec.label_rule == "percentage":
        return int(n_pos / size >= spec.threshold_qstar)
    return int(n_pos > 0)


def _draw_bag_size(rng, spec):
    return max(2, int(round(rng.normal(spec.bag_size_mean, spec.bag_size_std))))


def _synthetic_bag(rng, spec, bag_id):
    size = _draw_bag_size(rng, spec)
    pi = rng.uniform(0.0, 1.0)
    n_pos = int(np.floor(pi * size))
    mu = np.zeros(spec.feature_dim)
    mu[0] = spec.class_separation / 2.0
    x_pos = rng.normal(size=(n_pos, spec.feature_dim)) * spec.noise_std + mu
    x_neg = rng.normal(size=(size - n_pos, spec.feature_dim)) * spec.noise_std - mu
    instances = np.vstack([x_pos, x_neg])
    hidden = np.concatenate([np.ones(n_pos, dtype=np.int64),
                             np.zeros(size - n_pos, dtype=np.int64)])
    order = rng.permutation(size)
    return Bag(
        id=bag_id,
        instances=instances[order],
        label=_bag_label(n_pos, size, spec),
        hidden_instance_labels=hidden[order],
        positive_fraction=n_pos / size,
    )


def generate_synthetic(spec, seed):
    """Generate spec.n_bags bags; each bag uses its own derived seed.

    With ``spec.rebalance`` the generator keeps drawing extra bags (same
    derived-seed stream) until both classes reach n_bags/2, then truncates.
    """
    root = np.random.SeedSequence([int(seed), 0xBA9])
    if not spec.rebalance:
        children = root.spawn(spec.n_bags)
        return [
            _synthetic_bag(np.random.default_rng(children[i]), spec, f"bag-{i:06d}")
            for i in range(spec.n_bags)
        ]
    per_class = spec.n_bags // 2
    want = {0: per_class, 1: spec.n_bags - per_class}
    have = {0: 0, 1: 0}
    bags = []
    i = 0
    while have[0] < want[0] or have[1] < want[1]:
        child = root.spawn(1)[0]
        bag = _synthetic_bag(np.random.default_rng(child), spec, f"bag-{i:06d}")
        i += 1
        if have[bag.label] < want[bag.label]:
            have[bag.label] += 1
            bags.append(bag)
        if i > 1000 * spec.n_bags:
            raise ValueError("rebalancing failed: one class essentially never occurs")
    return bags


def _read_be32(data, offset, path):
    if offset + 4 > len(data):
        raise IdxParseError(f"{path}: truncated at byte offset {offset} (expected 4-byte field)")
    return struct.unpack_from(">I", data, offset)[0]


def load_idx(images_path, labels_path):
    """Read an IDX image/label file pair; counts must agree.

    Returns (images, labels) with images shaped (count, rows, cols) uint8
    and labels shaped (count,) uint8.
    """
    with open(images_path, "rb") as f:
        img_data = f.read()
    with open(labels_path, "rb") as f:
        lab_data = f.read()

    magic = _read_be32(img_data, 0, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxParseError(
            f"{images_path}: bad magic 0x{magic:08x} at byte offset 0 "
            f"(expected 0x{IDX_IMAGES_MAGIC:08x})"
        )
    count = _read_be32(img_data, 4, images_path)
    rows = _read_be32(img_data, 8, images_path)
    cols = _read_be32(img_data, 12, images_path)
    need = 16 + count * rows * cols
    if len(img_data) < need:
        raise IdxParseError(
            f"{images_path}: truncated pixel data at byte offset {len(img_data)} "
            f"(expected {need} bytes)"
        )
    images = np.frombuffer(img_data, dtype=np.uint8, count=count * rows * cols,
                           offset=16).reshape(count, rows, cols).copy()

    magic = _read_be32(lab_data, 0, labels_path)
    if magic != IDX_LABELS_MAGIC:
        raise IdxParseError(
            f"{labels_path}: bad magic 0x{magic:08x} at byte offset 0 "
            f"(expected 0x{IDX_LABELS_MAGIC:08x})"
        )
    lab_count = _read_be32(lab_data, 4, labels_path)
    if lab_count != count:
        raise IdxParseError(
            f"{labels_path}: label count {lab_count} at byte offset 4 does not "
            f"match image count {count}"
        )
    if len(lab_data) < 8 + count:
        raise IdxParseError(
            f"{labels_path}: truncated label data at byte offset {len(lab_data)} "
            f"(expected {8 + count} bytes)"
        )
    labels = np.frombuffer(lab_data, dtype=np.uint8, count=count, offset=8).copy()
    return images, labels


def write_idx_images(path, images):
    """Write images (count, rows, cols) uint8 in IDX format."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def make_mnist_bags(images, labels, spec, seed, positive_digit=9, split=None):
    """Assemble bags of flattened digit images, positives being one digit.

    Pixel bytes are scaled to [0, 1].  Bag sizes, target fractions, and
    labels follow the same protocol as generate_synthetic.  ``split`` tags
    the produced bags so the source train/test division is preserved.
    """
    labels = np.asarray(labels)
    pos_idx = np.flatnonzero(labels == positive_digit)
    neg_idx = np.flatnonzero(labels != positive_digit)
    if pos_idx.size == 0:
        raise ValueError(f"no images of digit {positive_digit} available")
    if neg_idx.size == 0:
        raise ValueError("no negative-class images available")
    flat = np.asarray(images, dtype=np.float64).reshape(len(labels), -1) / 255.0
    root = np.random.SeedSequence([int(seed), 0x31D])
    children = root.spawn(spec.n_bags)
    bags = []
    for i in range(spec.n_bags):
        rng = np.random.default_rng(children[i])
        size = _draw_bag_size(rng, spec)
        pi = rng.uniform(0.0, 1.0)
        n_pos = int(np.floor(pi * size))
        take_pos = rng.choice(pos_idx, size=n_pos, replace=True)
        take_neg = rng.choice(neg_idx, size=size - n_pos, replace=True)
        idx = np.concatenate([take_pos, take_neg])
        hidden = np.concatenate([np.ones(n_pos, dtype=np.int64),
                                 np.zeros(size - n_pos, dtype=np.int64)])
        order = rng.permutation(size)
        prefix = split or "bag"
        bags.append(Bag(
            id=f"{prefix}-{i:06d}",
            instances=flat[idx][order],
            label=_bag_label(n_pos, size, spec),
            hidden_instance_labels=hidden[order],
            positive_fraction=n_pos / size,
            split=split,
        ))
    return bags


def split_dataset(bags, fractions, seed):
    """Seeded stratified split into (train, validation, test).

    Fractions must be nonnegative and sum to 1.  Every nonempty split must
    receive both classes.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be three nonnegative reals, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x59711]))
    split = DatasetSplit()
    buckets = (split.train, split.validation, split.test)
    for cls in (0, 1):
        members = [b for b in bags if b.label == cls]
        order = rng.permutation(len(members))
        n = len(members)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        if fractions[2] == 0.0:
            n_val = n - n_train
        n_train = min(n_train, n)
        n_val = min(n_val, n - n_train)
        counts = (n_train, n_val, n - n_train - n_val)
        at = 0
        for bucket, cnt in zip(buckets, counts):
            for i in range(at, at + cnt):
                bucket.append(members[int(order[i])])
            at += cnt
    for name, bucket, frac in zip(("train", "validation", "test"), buckets, fractions):
        if frac > 0 and bucket:
            present = {b.label for b in bucket}
            if present != {0, 1}:
                raise ValueError(f"{name} split is missing one class; need more bags")
    return split


def _bag_to_json(bag):
    out = {
        "id": bag.id,
        "instances": bag.instances.tolist(),
        "label": int(bag.label),
    }
    if bag.hidden_instance_labels is not None:
        out["hidden_instance_labels"] = bag.hidden_instance_labels.tolist()
    if bag.positive_fraction is not None:
        out["positive_fraction"] = float(bag.positive_fraction)
    if bag.split is not None:
        out["split"] = bag.split
    return out


def _bag_from_json(obj):
    return Bag(
        id=obj["id"],
        instances=np.asarray(obj["instances"], dtype=np.float64),
        label=int(obj["label"]),
        hidden_instance_labels=obj.get("hidden_instance_labels"),
        positive_fraction=obj.get("positive_fraction"),
        split=obj.get("split"),
    )


def save_dataset(path, bags, spec=None, seed=None):
    """Write the self-describing dataset container (schema bagdata/1)."""
    doc = {
        "schema": DATASET_SCHEMA,
        "spec": asdict(spec) if spec is not None else None,
        "seed": seed,
        "bags": [_bag_to_json(b) for b in bags],
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_dataset(path):
    """Read a dataset container; returns (bags, spec_dict, seed)."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("schema") != DATASET_SCHEMA:
        raise ValueError(
            f"{path}: unsupported dataset schema {doc.get('schema')!r} "
            f"(expected {DATASET_SCHEMA!r})"
        )
    bags = [_bag_from_json(b) for b in doc["bags"]]
    return bags, doc.get("spec"), doc.get("seed")
