"""
Metrics Module

Accuracy-matrix bookkeeping and the continual-learning metrics computed
from it, plus training-efficiency accounting.

Task indices in the metric functions are 1-based, matching the usual
R[t, tau] notation: R[t, tau] is the accuracy on task tau after training
task t, defined for tau <= t.
"""

import logging
import platform
import sys
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from backbone import count_flops
from errors import PreconditionError

logger = logging.getLogger(__name__)

# forward + backward, with backward counted as twice the forward pass
TRAINING_FLOPS_MULTIPLIER = 3


class AccuracyMatrix:
    """Lower-triangular matrix of per-task accuracies."""

    def __init__(self, num_tasks):
        self.num_tasks = num_tasks
        self.R = np.full((num_tasks, num_tasks), np.nan)

    def set_row(self, t, accuracies):
        """Store the accuracies on tasks 1..t after training task t (1-based)."""
        accuracies = np.asarray(accuracies, dtype=np.float64)
        if accuracies.shape[0] != t:
            raise PreconditionError(f"row {t} needs {t} accuracies, got {accuracies.shape[0]}")
        if ((accuracies < 0) | (accuracies > 1)).any():
            raise ValueError("accuracies must lie in [0, 1]")
        self.R[t - 1, :t] = accuracies

    def row(self, t):
        values = self.R[t - 1, :t]
        if np.isnan(values).any():
            raise PreconditionError(f"row {t} of the accuracy matrix is incomplete")
        return values

    @property
    def completed_rows(self):
        return int(sum(not np.isnan(self.R[t, :t + 1]).any() for t in range(self.num_tasks)))

    def to_records(self):
        """(row task, column task, accuracy) triples for every defined cell, 1-based."""
        return [(t + 1, tau + 1, float(self.R[t, tau]))
                for t in range(self.num_tasks) for tau in range(t + 1)
                if not np.isnan(self.R[t, tau])]

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=np.float64)
        matrix = cls(values.shape[0])
        for t in range(values.shape[0]):
            matrix.R[t, :t + 1] = values[t, :t + 1]
        return matrix


def _as_array(R):
    return R.R if isinstance(R, AccuracyMatrix) else np.asarray(R, dtype=np.float64)


def average_accuracy(R, t):
    """Mean of R[t, 1..t]."""
    row = _as_array(R)[t - 1, :t]
    if np.isnan(row).any():
        raise PreconditionError(f"row {t} of the accuracy matrix is incomplete")
    return float(row.mean())


def final_forgetting(R, t, clip=False):
    """
    Final forgetting after task t.

    For every earlier task j, the best accuracy it reached before task t
    (over the defined cells R[i, j], j <= i < t) minus its accuracy after
    task t, averaged over j. Negative values mean the task improved; with
    `clip` they are floored at zero per task.

    Raises:
        PreconditionError: If t < 2.
    """
    if t < 2:
        raise PreconditionError("final forgetting needs at least two tasks")
    R = _as_array(R)
    drops = []
    for j in range(t - 1):
        best = np.max(R[j:t - 1, j])
        drop = best - R[t - 1, j]
        drops.append(max(drop, 0.0) if clip else drop)
    return float(np.mean(drops))


def stability_plasticity(R, T):
    """
    Stability, plasticity and their harmonic mean after the final task T.

    S averages R[T, tau] over tau < T; P averages R[tau, tau] over all tasks.

    Returns:
        tuple: (S, P, tradeoff); tradeoff is 0 when S + P = 0.
    """
    if T < 2:
        raise PreconditionError("stability needs at least two tasks")
    R = _as_array(R)
    S = float(np.sum(R[T - 1, :T - 1]) / (T - 1))
    P = float(np.sum(np.diag(R)[:T]) / T)
    tradeoff = 0.0 if S + P == 0 else 2 * S * P / (S + P)
    return S, P, tradeoff


def flops_for_examples(config, examples, input_shape=None):
    """Analytic training FLOPs for `examples` forward/backward passes."""
    if examples == 0:
        return 0
    return TRAINING_FLOPS_MULTIPLIER * count_flops(config, input_shape) * int(examples)


def training_flops(config, steps, batch_sizes, input_shape=None):
    """
    Analytic training FLOPs: 3x the forward FLOPs per example, times the
    examples processed in `steps` steps.

    Args:
        batch_sizes (sequence): Sizes of the batches that make up one step,
            e.g. (fresh, replay) or (fresh, replay draw 1, replay draw 2).
    """
    return flops_for_examples(config, steps * int(sum(batch_sizes)), input_shape)


def peak_memory_bytes():
    """
    Peak resident memory of the process.

    Returns:
        tuple: (bytes, estimated) where estimated is True when no platform
        reading was available and the caller must supply a fallback.
    """
    try:
        import resource
    except ImportError:
        return 0, True
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    # ru_maxrss is in kilobytes on Linux and bytes on macOS
    scale = 1 if sys.platform == 'darwin' else 1024
    return int(peak) * scale, False


def activation_bytes_estimate(model, input_shape, batch_size):
    """Upper bound on forward activation memory: float32 outputs of every leaf module."""
    sizes = []

    def hook(layer, inputs, output):
        sizes.append(output.numel())

    handles = [m.register_forward_hook(hook) for m in model.modules() if not list(m.children())]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            model(torch.zeros((1,) + tuple(input_shape)))
    finally:
        for handle in handles:
            handle.remove()
        model.train(was_training)
    return int(sum(sizes)) * 4 * batch_size


@dataclass
class EfficiencyReport:
    """Training cost of one run."""

    flops_total: int = 0
    wall_time_per_task: list = field(default_factory=list)
    steps_per_task: list = field(default_factory=list)
    peak_memory_bytes: int = 0
    peak_memory_estimated: bool = False
    buffer_bytes: int = 0
    host: str = field(default_factory=platform.platform)

    @property
    def wall_time_total(self):
        return float(sum(self.wall_time_per_task))

    @property
    def seconds_per_step(self):
        steps = sum(self.steps_per_task)
        return self.wall_time_total / steps if steps else 0.0

    def to_dict(self):
        data = asdict(self)
        data['wall_time_total'] = self.wall_time_total
        data['seconds_per_step'] = self.seconds_per_step
        data['flops_note'] = 'training FLOPs = 3 x analytic forward FLOPs x examples processed'
        return data
