"""
Feature Selection Module

Class-aware selection of the backbone's output features.

For every class the module keeps a signature (the running sum of the
flattened low-frequency subbands of its training images). Signatures of the
classes in a new task are compared with those of earlier classes by cosine
similarity, which yields, per new class, its most similar (y_plus) and
least similar (y_minus) earlier class. Two keep-probability schedules are
derived from the per-class selection counter:

    frequency dropout  P_f[c, j] = lam * exp(-F[y_minus]_j / max F[y_minus] * alpha_minus)
                                 + (1 - lam) * (1 - exp(-F[y_plus]_j / max F[y_plus] * alpha_plus))
    semantic dropout   P_s[c, j] = 1 - exp(-F[c]_j / max F[c] * beta)

During training a dropout mask is sampled from the row of the sample's
label, and the top fraction of the surviving features (by magnitude) is
selected for classification. The counter F tallies every selection.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch
from sklearn.metrics.pairwise import cosine_similarity as _pairwise_cosine

from errors import (DegenerateSignatureError, PreconditionError,
                    ShapeMismatchError, UnknownClassError)

logger = logging.getLogger(__name__)

REGIMES = ('none', 'frequency', 'semantic')


@dataclass
class ClassSignature:
    """Running sum of the low-frequency subbands seen for one class."""

    class_id: int
    sum_ll: np.ndarray
    sample_count: int = 0

    @classmethod
    def empty(cls, class_id, dim):
        return cls(class_id=class_id, sum_ll=np.zeros(dim, dtype=np.float64))


def update_signature(sig, ll_flat):
    """
    Add one flattened ll vector to a class signature.

    Returns:
        ClassSignature: The same signature, updated in place.

    Raises:
        ShapeMismatchError: If the vector dimension differs from the signature's.
    """
    vector = np.asarray(ll_flat, dtype=np.float64).reshape(-1)
    if vector.shape[0] != sig.sum_ll.shape[0]:
        raise ShapeMismatchError(
            f"signature of class {sig.class_id} has dimension {sig.sum_ll.shape[0]}, got {vector.shape[0]}"
        )
    sig.sum_ll += vector
    sig.sample_count += 1
    return sig


def cosine_similarity(f_i, f_j):
    """
    Cosine similarity of two signature vectors, in [-1, 1].

    Raises:
        DegenerateSignatureError: If either vector has zero norm.
    """
    a = np.asarray(f_i, dtype=np.float64).reshape(1, -1)
    b = np.asarray(f_j, dtype=np.float64).reshape(1, -1)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"vector dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if not np.linalg.norm(a) or not np.linalg.norm(b):
        raise DegenerateSignatureError("cosine similarity is undefined for a zero vector")
    return float(np.clip(_pairwise_cosine(a, b)[0, 0], -1.0, 1.0))


@dataclass
class SimilarityTable:
    """Similarities between the classes of the current task and earlier classes.

    Rows follow `current_classes`, columns follow `previous_classes`. The
    per-row arrays (y_plus, y_minus, s_bar, alpha_plus, alpha_minus) are
    aligned with the rows.
    """

    current_classes: list
    previous_classes: list
    S: np.ndarray
    y_plus: np.ndarray
    y_minus: np.ndarray
    s_bar: np.ndarray
    alpha_plus: np.ndarray
    alpha_minus: np.ndarray

    def index_of(self, class_id):
        try:
            return self.current_classes.index(class_id)
        except ValueError:
            raise UnknownClassError(f"class {class_id} is not a current class of this table") from None


def build_similarity(current_signatures, previous_signatures, candidate_classes=None,
                     alpha_min=1e-3, alpha_max=1e3):
    """
    Build the similarity table for a new task.

    Args:
        current_signatures (list[ClassSignature]): Signatures of the new classes.
        previous_signatures (list[ClassSignature]): Signatures of all earlier classes.
        candidate_classes (iterable, optional): Earlier classes eligible as
            y_plus / y_minus. Defaults to all earlier classes. The mean
            similarity s_bar always averages over all earlier classes.
        alpha_min (float): Lower clamp for both alpha values.
        alpha_max (float): Upper clamp for both alpha values.

    Returns:
        SimilarityTable: Filled table. Ties in argmax/argmin go to the lowest class id.

    Raises:
        PreconditionError: If there are no earlier classes.
    """
    if not previous_signatures:
        raise PreconditionError("similarity needs at least one previously seen class")

    current = sorted(current_signatures, key=lambda s: s.class_id)
    previous = sorted(previous_signatures, key=lambda s: s.class_id)
    cur = np.stack([s.sum_ll for s in current])
    prev = np.stack([s.sum_ll for s in previous])

    for sig in current + previous:
        if not np.any(sig.sum_ll):
            logger.warning(f"Class {sig.class_id} has a zero signature; its similarities are set to 0")

    S = np.clip(_pairwise_cosine(cur, prev), -1.0, 1.0)
    previous_ids = [s.class_id for s in previous]

    if candidate_classes is None:
        candidates = np.arange(len(previous_ids))
    else:
        wanted = set(candidate_classes)
        candidates = np.array([i for i, c in enumerate(previous_ids) if c in wanted])
        if candidates.size == 0:
            raise PreconditionError("no candidate class is among the previously seen classes")

    sub = S[:, candidates]
    plus_col = candidates[np.argmax(sub, axis=1)]
    minus_col = candidates[np.argmin(sub, axis=1)]
    rows = np.arange(len(current))
    s_plus = S[rows, plus_col]
    s_minus = S[rows, minus_col]
    s_bar = S.mean(axis=1)

    with np.errstate(divide='ignore', invalid='ignore'):
        alpha_minus = s_bar / s_minus
        alpha_plus = s_plus / s_bar
    alpha_minus = _clamp_alpha(alpha_minus, alpha_min, alpha_max, 'alpha_minus')
    alpha_plus = _clamp_alpha(alpha_plus, alpha_min, alpha_max, 'alpha_plus')

    return SimilarityTable(
        current_classes=[s.class_id for s in current],
        previous_classes=previous_ids,
        S=S,
        y_plus=np.array(previous_ids)[plus_col],
        y_minus=np.array(previous_ids)[minus_col],
        s_bar=s_bar,
        alpha_plus=alpha_plus,
        alpha_minus=alpha_minus,
    )


def _clamp_alpha(values, low, high, name):
    values = np.where(np.isnan(values), 1.0, values)
    outside = (values < low) | (values > high)
    if outside.any():
        logger.warning(f"{int(outside.sum())} {name} value(s) clamped to [{low:g}, {high:g}]")
    return np.clip(values, low, high)


class SelectionCounter:
    """Per-class, per-feature tally of feature selections."""

    def __init__(self, num_classes, num_features):
        self.num_features = num_features
        self.counts = np.zeros((num_classes, num_features), dtype=np.int64)
        self.registered = np.zeros(num_classes, dtype=bool)

    def register(self, class_ids):
        self.registered[list(class_ids)] = True

    @property
    def classes(self):
        return [int(c) for c in np.flatnonzero(self.registered)]

    def _check(self, class_id):
        if not (0 <= class_id < len(self.registered)) or not self.registered[class_id]:
            raise UnknownClassError(f"class {class_id} is not registered with the counter")

    def row(self, class_id):
        self._check(class_id)
        return self.counts[class_id]

    def normalized_row(self, class_id):
        """Counts divided by the row maximum; a zero row normalizes by 1."""
        row = self.row(class_id)
        peak = row.max()
        return row / (peak if peak > 0 else 1)

    def update(self, class_id, mask):
        self._check(class_id)
        mask = np.asarray(mask).reshape(-1)
        if mask.shape[0] != self.num_features:
            raise ShapeMismatchError(f"mask has length {mask.shape[0]}, expected {self.num_features}")
        self.counts[class_id] += mask.astype(np.int64)

    def update_batch(self, labels, masks):
        labels = np.asarray(labels, dtype=np.int64)
        for c in np.unique(labels):
            self._check(int(c))
        np.add.at(self.counts, labels, np.asarray(masks).astype(np.int64))

    def to_frame(self):
        classes = self.classes
        return pd.DataFrame({
            'class': np.repeat(classes, self.num_features),
            'feature_index': np.tile(np.arange(self.num_features), len(classes)),
            'count': self.counts[classes].reshape(-1),
        })

    def export_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_frame(cls, frame, num_classes=None):
        num_features = int(frame['feature_index'].max()) + 1
        num_classes = num_classes or int(frame['class'].max()) + 1
        counter = cls(num_classes, num_features)
        counter.register(frame['class'].unique())
        counter.counts[frame['class'].to_numpy(), frame['feature_index'].to_numpy()] = frame['count'].to_numpy()
        return counter

    @classmethod
    def from_csv(cls, path, num_classes=None):
        return cls.from_frame(pd.read_csv(path), num_classes)


def update_counter(counter, class_id, selection_mask):
    counter.update(class_id, selection_mask)
    return counter


def frequency_keep_probs(counter, table, lam, class_id):
    """
    Frequency-dropout keep probabilities for one class of the current task.

    Raises:
        ValueError: If lam is outside [0, 1].
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    i = table.index_of(class_id)
    dissimilar = counter.normalized_row(int(table.y_minus[i]))
    similar = counter.normalized_row(int(table.y_plus[i]))
    probs = (lam * np.exp(-dissimilar * table.alpha_minus[i])
             + (1.0 - lam) * (1.0 - np.exp(-similar * table.alpha_plus[i])))
    return np.clip(probs, 0.0, 1.0)


def semantic_keep_probs(counter, beta, class_id):
    """
    Semantic-dropout keep probabilities for one class.

    Raises:
        ValueError: If beta is not positive.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return 1.0 - np.exp(-counter.normalized_row(class_id) * beta)


def sample_mask(keep_probs, rng):
    """Independent Bernoulli keep mask; entry j survives with probability keep_probs[j]."""
    keep_probs = np.asarray(keep_probs, dtype=np.float64)
    return rng.random(keep_probs.shape) < keep_probs


def selection_size(num_features, fraction):
    """Number of selected features, floor(fraction * N)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"selection fraction must lie in (0, 1], got {fraction}")
    return int(math.floor(fraction * num_features + 1e-9))


def topk_select(features, surviving, fraction=0.6):
    """
    Select the largest-magnitude surviving features.

    Among indices where `surviving` is set, picks the floor(fraction * N)
    entries with the largest |value|, lowest index first on ties. When fewer
    features survive, all survivors are selected.

    Returns:
        numpy.ndarray: Boolean selection mask, a subset of `surviving`.
    """
    features = np.asarray(features, dtype=np.float64).reshape(-1)
    surviving = np.asarray(surviving, dtype=bool).reshape(-1)
    k = selection_size(features.shape[0], fraction)
    scores = np.where(surviving, np.abs(features), -np.inf)
    order = np.lexsort((np.arange(features.shape[0]), -scores))
    chosen = order[:min(k, int(surviving.sum()))]
    mask = np.zeros(features.shape[0], dtype=bool)
    mask[chosen] = True
    return mask


def topk_mask(features, surviving, k):
    """
    Batched torch counterpart of topk_select.

    Args:
        features (torch.Tensor): Shape (B, N).
        surviving (torch.Tensor): Boolean, shape (B, N).
        k (int): Number of features to select per row.

    Returns:
        torch.Tensor: Boolean mask of shape (B, N).
    """
    scores = features.detach().abs().masked_fill(~surviving, float('-inf'))
    _, order = torch.sort(scores, dim=1, descending=True, stable=True)
    top = order[:, :k]
    picked = torch.zeros_like(surviving)
    picked.scatter_(1, top, True)
    return picked & surviving


@dataclass
class DropoutSchedule:
    """Keep-probability matrices for both dropout regimes."""

    p_f: np.ndarray
    p_s: np.ndarray
    lam: float
    beta: np.ndarray
    epochs_freq: int

    @classmethod
    def create(cls, num_classes, num_features, lam=0.5, beta=2.0, epochs_freq=0):
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {lam}")
        beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), (num_classes,)).copy()
        if (beta <= 0).any():
            raise ValueError("beta must be positive for every class")
        return cls(
            p_f=np.ones((num_classes, num_features)),
            p_s=np.ones((num_classes, num_features)),
            lam=lam, beta=beta, epochs_freq=epochs_freq,
        )

    def rebuild_frequency(self, counter, table):
        for c in table.current_classes:
            self.p_f[c] = frequency_keep_probs(counter, table, self.lam, c)

    def rebuild_semantic(self, counter, classes):
        for c in classes:
            self.p_s[c] = semantic_keep_probs(counter, self.beta[c], c)

    def rows(self, regime, labels):
        """Keep-probability rows for a batch of labels under a regime."""
        if regime == 'frequency':
            return self.p_f[labels]
        if regime == 'semantic':
            return self.p_s[labels]
        return np.ones((len(labels), self.p_f.shape[1]))

    def to_frame(self, classes):
        n = self.p_f.shape[1]
        return pd.DataFrame({
            'class': np.repeat(classes, n),
            'feature_index': np.tile(np.arange(n), len(classes)),
            'p_f': self.p_f[classes].reshape(-1),
            'p_s': self.p_s[classes].reshape(-1),
        })

    def export_csv(self, path, classes):
        self.to_frame(classes).to_csv(path, index=False)


@dataclass
class FeatureSelector:
    """
    Training-side bookkeeping for class-aware feature selection: signatures,
    counter, schedule, and per-batch mask construction.
    """

    num_classes: int
    num_features: int
    signature_dim: int
    lam: float = 0.5
    beta: float = 2.0
    selection_fraction: float = 0.6
    epochs_freq: int = 0
    compare_scope: str = 'all'
    alpha_min: float = 1e-3
    alpha_max: float = 1e3
    enabled: bool = True
    signatures: dict = field(default_factory=dict)
    table: SimilarityTable = None

    def __post_init__(self):
        if self.compare_scope not in ('all', 'last'):
            raise ValueError(f"compare_scope must be 'all' or 'last', got '{self.compare_scope}'")
        self.counter = SelectionCounter(self.num_classes, self.num_features)
        self.schedule = DropoutSchedule.create(
            self.num_classes, self.num_features, self.lam, self.beta, self.epochs_freq)
        self.k = selection_size(self.num_features, self.selection_fraction)

    def register_task(self, classes):
        self.counter.register(classes)
        for c in classes:
            self.signatures.setdefault(int(c), ClassSignature.empty(int(c), self.signature_dim))

    def observe_signatures(self, ll_batch, labels):
        ll_batch = np.asarray(ll_batch, dtype=np.float64)
        for vector, label in zip(ll_batch, np.asarray(labels)):
            update_signature(self.signatures[int(label)], vector)

    def rebuild_frequency(self, current_classes, previous_classes, last_task_classes=None):
        """Recompute P_f rows for the current task's classes."""
        candidates = last_task_classes if self.compare_scope == 'last' else None
        self.table = build_similarity(
            [self.signatures[c] for c in current_classes],
            [self.signatures[c] for c in previous_classes],
            candidate_classes=candidates,
            alpha_min=self.alpha_min, alpha_max=self.alpha_max,
        )
        self.schedule.rebuild_frequency(self.counter, self.table)
        logger.info(
            "Frequency dropout rebuilt: " + ", ".join(
                f"{c}->(+{p}, -{m})" for c, p, m in
                zip(self.table.current_classes, self.table.y_plus, self.table.y_minus))
        )

    def rebuild_semantic(self):
        self.schedule.rebuild_semantic(self.counter, self.counter.classes)

    def training_masks(self, features, labels, regime, rng):
        """
        Dropout-then-top-k selection masks for one training batch.

        Args:
            features (torch.Tensor): Extractor outputs, shape (B, N).
            labels (numpy.ndarray): True labels selecting the probability rows.
            regime (str): One of REGIMES.
            rng (numpy.random.Generator): Dropout random stream.

        Returns:
            torch.Tensor: Boolean mask of shape (B, N).
        """
        if not self.enabled:
            return torch.ones_like(features, dtype=torch.bool)
        if regime not in REGIMES:
            raise ValueError(f"unknown regime '{regime}'")
        probs = self.schedule.rows(regime, np.asarray(labels, dtype=np.int64))
        surviving = torch.from_numpy(sample_mask(probs, rng)).to(features.device)
        return topk_mask(features, surviving, self.k)

    def evaluation_masks(self, features):
        if not self.enabled:
            return torch.ones_like(features, dtype=torch.bool)
        return topk_mask(features, torch.ones_like(features, dtype=torch.bool), self.k)

    def record(self, labels, masks):
        if self.enabled:
            self.counter.update_batch(labels, masks.cpu().numpy())
