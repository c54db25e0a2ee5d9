"""
Benchmark Data Module

Dataset ingestion, task splitting, normalization and augmentation.

Two source formats are supported:
    cifar_binary  CIFAR-10 binary batches: records of 1 label byte followed
                  by 3072 pixel bytes (R plane, G plane, B plane, each 32x32
                  row-major); `data_batch_*.bin` are training files and
                  `test_batch.bin` the test file.
    image_dir     one subdirectory per class, optionally below `train/` and
                  `test/`; a `labels.csv` (filename,label[,split]) replaces
                  the subdirectories when present.

Random crops are restricted to even pixel offsets so that the same crop can
be expressed exactly on the half-resolution encoded maps.
"""

import glob
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from PIL import Image

from errors import ConfigError, DatasetFormatError

logger = logging.getLogger(__name__)

CIFAR_SIDE = 32
CIFAR_RECORD_BYTES = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE
CIFAR10_CLASSES = ['airplane', 'automobile', 'bird', 'cat', 'deer',
                   'dog', 'frog', 'horse', 'ship', 'truck']
IMAGE_EXTENSIONS = {'.png', '.jpg', '.jpeg', '.bmp', '.gif', '.ppm'}

# pixel-space crop padding; encoded maps use half of it
PAD = 4
EVEN_OFFSETS = np.arange(0, 2 * PAD + 1, 2)


@dataclass
class DatasetSource:
    """Where a dataset lives and how to read it."""

    format: str = 'cifar_binary'
    path: str = 'data/cifar-10-batches-bin'
    class_names: list = None
    mean: tuple = None
    std: tuple = None
    test_fraction: float = 0.2
    limit_per_class: int = 0
    test_limit_per_class: int = 0

    def __post_init__(self):
        if self.format not in ('cifar_binary', 'image_dir'):
            raise ConfigError(f"unknown dataset format '{self.format}'", key='data.format')


@dataclass
class LabeledImageSet:
    """Normalized float32 images (N, 3, H, W) with integer labels."""

    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    class_names: list
    mean: np.ndarray
    std: np.ndarray

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def image_shape(self):
        return tuple(self.train_images.shape[1:])


@dataclass
class Task:
    """One step of the task stream (task ids are 1-based)."""

    task_id: int
    classes: tuple
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray


@dataclass
class TaskStream:
    """Ordered tasks with disjoint class sets and their epoch counts."""

    tasks: list
    epochs: list = field(default_factory=list)

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)


@dataclass
class SplitSpec:
    """Ordered list of disjoint class subsets, one per task."""

    tasks: list

    def validate(self, num_classes):
        seen = set()
        for i, classes in enumerate(self.tasks, 1):
            if not classes:
                raise ConfigError(f"task {i} has no classes", key='data.tasks')
            overlap = seen.intersection(classes)
            if overlap:
                raise ConfigError(f"task {i} repeats classes {sorted(overlap)}", key='data.tasks')
            seen.update(classes)
        out_of_range = sorted(c for c in seen if not 0 <= c < num_classes)
        if out_of_range:
            raise ConfigError(f"classes {out_of_range} are not in the dataset", key='data.tasks')
        missing = sorted(set(range(num_classes)) - seen)
        if missing:
            raise ConfigError(f"classes {missing} are missing from the split", key='data.tasks')

    @classmethod
    def default(cls, num_classes, classes_per_task=2):
        return cls([tuple(range(start, min(start + classes_per_task, num_classes)))
                    for start in range(0, num_classes, classes_per_task)])

    @classmethod
    def joint(cls, num_classes):
        return cls([tuple(range(num_classes))])

    @classmethod
    def parse(cls, text):
        """Parse '0,1;2,3;4,5' into a split."""
        try:
            return cls([tuple(int(c) for c in part.split(',') if c.strip())
                        for part in text.split(';') if part.strip()])
        except ValueError:
            raise ConfigError(f"cannot parse task split '{text}'", key='data.tasks') from None


def read_cifar_records(path, num_classes=10):
    """
    Read one CIFAR binary batch file.

    Returns:
        tuple: (uint8 images of shape (N, 3, 32, 32), int64 labels)

    Raises:
        DatasetFormatError: On a truncated record or an out-of-range label.
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES:
        raise DatasetFormatError(
            f"{path}: size {raw.size} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record")
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= num_classes:
        raise DatasetFormatError(f"{path}: label {labels.max()} out of range for {num_classes} classes")
    images = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    return images, labels


def _load_cifar_binary(source):
    class_names = source.class_names
    meta = os.path.join(source.path, 'batches.meta.txt')
    if not class_names and os.path.exists(meta):
        with open(meta) as f:
            class_names = [line.strip() for line in f if line.strip()]
    class_names = class_names or CIFAR10_CLASSES

    train_files = sorted(glob.glob(os.path.join(source.path, 'data_batch_*.bin')))
    test_file = os.path.join(source.path, 'test_batch.bin')
    if not train_files or not os.path.exists(test_file):
        raise FileNotFoundError(f"no CIFAR binary batches found in {source.path}")

    parts = [read_cifar_records(p, len(class_names)) for p in train_files]
    train_images = np.concatenate([p[0] for p in parts])
    train_labels = np.concatenate([p[1] for p in parts])
    test_images, test_labels = read_cifar_records(test_file, len(class_names))
    return train_images, train_labels, test_images, test_labels, list(class_names)


def _read_image(path):
    with Image.open(path) as img:
        return np.asarray(img.convert('RGB'), dtype=np.uint8).transpose(2, 0, 1)


def _list_class_dirs(root):
    return sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))


def _scan_class_dirs(root, class_names):
    paths, labels = [], []
    for label, name in enumerate(class_names):
        folder = os.path.join(root, name)
        if not os.path.isdir(folder):
            continue
        for filename in sorted(os.listdir(folder)):
            if os.path.splitext(filename)[1].lower() in IMAGE_EXTENSIONS:
                paths.append(os.path.join(folder, filename))
                labels.append(label)
    return paths, labels


def _stack_images(paths):
    if not paths:
        return np.zeros((0, 3, CIFAR_SIDE, CIFAR_SIDE), dtype=np.uint8)
    images = [_read_image(p) for p in paths]
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise DatasetFormatError(f"images differ in shape: {sorted(shapes)}")
    return np.stack(images)


def _holdout(labels, fraction, seed):
    """Deterministic per-class holdout; returns a boolean test mask."""
    rng = np.random.default_rng(seed)
    is_test = np.zeros(len(labels), dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        is_test[idx[:int(round(fraction * len(idx)))]] = True
    return is_test


def _load_image_dir(source, seed):
    root = source.path
    labels_csv = os.path.join(root, 'labels.csv')

    if os.path.exists(labels_csv):
        table = pd.read_csv(labels_csv)
        class_names = source.class_names or sorted(table['label'].astype(str).unique())
        index = {name: i for i, name in enumerate(class_names)}
        unknown = set(table['label'].astype(str)) - set(index)
        if unknown:
            raise DatasetFormatError(f"labels.csv names undeclared classes {sorted(unknown)}")
        paths = [os.path.join(root, f) for f in table['filename']]
        labels = np.array([index[str(v)] for v in table['label']], dtype=np.int64)
        if 'split' in table.columns:
            is_test = (table['split'].astype(str).str.lower() == 'test').to_numpy()
        else:
            is_test = _holdout(labels, source.test_fraction, seed)
        images = _stack_images(paths)
        return (images[~is_test], labels[~is_test], images[is_test], labels[is_test], list(class_names))

    if os.path.isdir(os.path.join(root, 'train')):
        class_names = source.class_names or _list_class_dirs(os.path.join(root, 'train'))
        train_paths, train_labels = _scan_class_dirs(os.path.join(root, 'train'), class_names)
        test_paths, test_labels = _scan_class_dirs(os.path.join(root, 'test'), class_names)
        return (_stack_images(train_paths), np.array(train_labels, dtype=np.int64),
                _stack_images(test_paths), np.array(test_labels, dtype=np.int64), list(class_names))

    class_names = source.class_names or _list_class_dirs(root)
    paths, labels = _scan_class_dirs(root, class_names)
    labels = np.array(labels, dtype=np.int64)
    images = _stack_images(paths)
    is_test = _holdout(labels, source.test_fraction, seed)
    return images[~is_test], labels[~is_test], images[is_test], labels[is_test], list(class_names)


def _limit(images, labels, per_class, seed):
    if not per_class:
        return images, labels
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        keep.append(np.sort(rng.permutation(idx)[:per_class]))
    keep = np.sort(np.concatenate(keep))
    return images[keep], labels[keep]


def compute_normalization(images):
    """Per-channel mean and std of uint8 images scaled to [0, 1]."""
    scaled = images.astype(np.float64) / 255.0
    return scaled.mean(axis=(0, 2, 3)), scaled.std(axis=(0, 2, 3))


def normalize(images, mean, std):
    scaled = images.astype(np.float32) / 255.0
    return ((scaled - np.asarray(mean, dtype=np.float32)[:, None, None])
            / np.asarray(std, dtype=np.float32)[:, None, None]).astype(np.float32)


def load(source, seed=0):
    """
    Load and normalize a dataset.

    Normalization statistics come from the source when given, otherwise
    from the (limited) training split, and are applied to both splits.

    Args:
        source (DatasetSource): Dataset description.
        seed (int): Seed for holdout splits and per-class limits.

    Returns:
        LabeledImageSet: Normalized images with their labels.
    """
    if source.format == 'cifar_binary':
        train_x, train_y, test_x, test_y, class_names = _load_cifar_binary(source)
    else:
        train_x, train_y, test_x, test_y, class_names = _load_image_dir(source, seed)

    h, w = train_x.shape[-2:]
    if h % 2 or w % 2:
        raise DatasetFormatError(f"images must have even height and width, got {h}x{w}")
    found = set(np.unique(train_y)) | set(np.unique(test_y))
    if len(found) > len(class_names):
        raise DatasetFormatError(f"found {len(found)} labels for {len(class_names)} declared classes")

    train_x, train_y = _limit(train_x, train_y, source.limit_per_class, seed)
    test_x, test_y = _limit(test_x, test_y, source.test_limit_per_class, seed + 1)

    if source.mean is not None and source.std is not None:
        mean, std = np.asarray(source.mean, dtype=np.float64), np.asarray(source.std, dtype=np.float64)
    else:
        mean, std = compute_normalization(train_x)

    logger.info(f"Loaded {source.format} dataset from {source.path}: "
                f"{len(train_y)} train / {len(test_y)} test images, {len(class_names)} classes")
    return LabeledImageSet(
        train_images=normalize(train_x, mean, std), train_labels=train_y,
        test_images=normalize(test_x, mean, std), test_labels=test_y,
        class_names=class_names, mean=mean, std=std,
    )


def split_tasks(dataset, spec, seed=0, epochs=1):
    """
    Partition a dataset into a task stream.

    Each task gets the train and test samples of its classes, with the
    training samples shuffled under `seed`.

    Args:
        dataset (LabeledImageSet): Normalized data.
        spec (SplitSpec): Class subsets per task.
        seed (int): Shuffle seed.
        epochs (int or list): Epochs per task.

    Returns:
        TaskStream: Tasks with 1-based ids.
    """
    spec.validate(dataset.num_classes)
    rng = np.random.default_rng(seed)
    tasks = []
    for task_id, classes in enumerate(spec.tasks, 1):
        train_idx = np.flatnonzero(np.isin(dataset.train_labels, classes))
        test_idx = np.flatnonzero(np.isin(dataset.test_labels, classes))
        train_idx = rng.permutation(train_idx)
        tasks.append(Task(
            task_id=task_id, classes=tuple(classes),
            train_images=dataset.train_images[train_idx], train_labels=dataset.train_labels[train_idx],
            test_images=dataset.test_images[test_idx], test_labels=dataset.test_labels[test_idx],
        ))
    if isinstance(epochs, int):
        epochs = [epochs] * len(tasks)
    return TaskStream(tasks=tasks, epochs=list(epochs))


@dataclass(frozen=True)
class AugmentParams:
    """Crop offsets in the padded pixel frame (even values) and a flip flag."""

    offset_y: int = PAD
    offset_x: int = PAD
    flip: bool = False

    def in_space(self, space):
        """Padding and offsets for `space`; encoded maps halve both."""
        if space == 'pixel':
            return PAD, self.offset_y, self.offset_x
        if space == 'encoded':
            return PAD // 2, self.offset_y // 2, self.offset_x // 2
        raise ValueError(f"unknown augmentation space '{space}'")


IDENTITY = AugmentParams()


def draw_augmentation(rng):
    """Even crop offsets from {0, 2, ..., 2*PAD} and a fair-coin flip."""
    offset_y, offset_x = rng.choice(EVEN_OFFSETS, size=2)
    return AugmentParams(int(offset_y), int(offset_x), bool(rng.random() < 0.5))


def apply_augmentation(sample, params, space='pixel', flip_encoded=True):
    """
    Zero-pad, crop and optionally mirror one CxHxW sample.

    In the encoded space the flip is applied only when `flip_encoded` is set.
    """
    sample = np.asarray(sample)
    pad, oy, ox = params.in_space(space)
    h, w = sample.shape[-2:]
    padded = np.pad(sample, ((0, 0), (pad, pad), (pad, pad)))
    out = padded[:, oy:oy + h, ox:ox + w]
    if params.flip and (space == 'pixel' or flip_encoded):
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def augment(sample, space, rng, flip_encoded=True):
    """Draw augmentation parameters and apply them to one sample."""
    return apply_augmentation(sample, draw_augmentation(rng), space, flip_encoded)


def augment_batch(batch, space, rng, flip_encoded=True):
    """
    Augment a (B, C, H, W) tensor sample by sample, drawing parameters in order.
    """
    params = [draw_augmentation(rng) for _ in range(batch.shape[0])]
    pad = params[0].in_space(space)[0] if params else 0
    h, w = batch.shape[-2:]
    padded = F.pad(batch, (pad, pad, pad, pad))
    out = []
    for i, p in enumerate(params):
        _, oy, ox = p.in_space(space)
        crop = padded[i, :, oy:oy + h, ox:ox + w]
        if p.flip and (space == 'pixel' or flip_encoded):
            crop = torch.flip(crop, dims=(-1,))
        out.append(crop)
    return torch.stack(out) if out else batch
