"""
Rehearsal Strategies Module

Loss composition for the supported rehearsal methods:

    SGD    cross-entropy on the fresh batch only (no buffer)
    ER     cross-entropy over fresh and replayed samples together
    DERPP  fresh cross-entropy + alpha * logit MSE on one replay draw
           + beta * cross-entropy on a second replay draw
    ERACE  fresh cross-entropy with earlier classes absent from the batch
           masked out, plus full-class cross-entropy on replayed samples
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from errors import PreconditionError

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ('SGD', 'ER', 'DERPP', 'ERACE', 'CLSER')


@dataclass
class StrategyConfig:
    """Rehearsal method and its loss weights."""

    kind: str = 'ER'
    alpha: float = 0.1
    beta: float = 0.5
    replay_batch: int = 32
    single_draw: bool = False

    def __post_init__(self):
        self.kind = self.kind.upper().replace('+', 'P').replace('-', '')
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy '{self.kind}', expected one of {STRATEGY_KINDS}")
        if self.kind == 'CLSER':
            raise ValueError("CLSER is reserved and not supported by this engine")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("strategy alpha and beta must be non-negative")
        if self.replay_batch <= 0:
            raise ValueError("replay_batch must be positive")

    @property
    def uses_buffer(self):
        return self.kind != 'SGD'

    @property
    def stores_logits(self):
        return self.kind == 'DERPP'

    @property
    def replay_draws(self):
        """Independent replay batches drawn per step."""
        if self.kind == 'SGD':
            return 0
        if self.kind == 'DERPP' and not self.single_draw:
            return 2
        return 1


def _require_fresh(fresh_logits):
    if fresh_logits is None or fresh_logits.shape[0] == 0:
        raise PreconditionError("the fresh batch is empty")


def loss_er(fresh_logits, fresh_labels, replay_logits=None, replay_labels=None):
    """Mean cross-entropy over the concatenation of fresh and replayed examples."""
    _require_fresh(fresh_logits)
    if replay_logits is None or replay_logits.shape[0] == 0:
        return F.cross_entropy(fresh_logits, fresh_labels)
    return F.cross_entropy(torch.cat([fresh_logits, replay_logits]),
                           torch.cat([fresh_labels, replay_labels]))


def loss_derpp(fresh_logits, fresh_labels, replay_a_logits=None, stored_logits=None,
               replay_b_logits=None, replay_b_labels=None, alpha=0.1, beta=0.5):
    """
    Cross-entropy on the fresh batch plus the two replay terms.

    Args:
        replay_a_logits: Current logits on the first replay draw.
        stored_logits: Logits recorded when those entries were inserted.
        replay_b_logits: Current logits on the second replay draw.
        replay_b_labels: Labels of the second replay draw.

    Raises:
        PreconditionError: If the first draw lacks (or has missing) stored logits.
    """
    _require_fresh(fresh_logits)
    loss = F.cross_entropy(fresh_logits, fresh_labels)
    if replay_a_logits is not None and replay_a_logits.shape[0]:
        if stored_logits is None or torch.isnan(stored_logits).any():
            raise PreconditionError("a replayed entry has no stored logits")
        loss = loss + alpha * F.mse_loss(replay_a_logits, stored_logits)
    if replay_b_logits is not None and replay_b_logits.shape[0]:
        loss = loss + beta * F.cross_entropy(replay_b_logits, replay_b_labels)
    return loss


def loss_erace(fresh_logits, fresh_labels, replay_logits, replay_labels,
               seen_classes, batch_classes, previous_classes=None):
    """
    Asymmetric cross-entropy.

    Fresh examples see the logits of seen classes only when those classes
    occur in the fresh batch; logits of every other seen class are pushed to
    the dtype minimum. Classes not yet seen stay unmasked. Replayed examples
    use all logits. The result is the sum of the two means.

    When `previous_classes` is given and empty (the first task), nothing is
    hidden and the loss is exactly `loss_er`.
    """
    _require_fresh(fresh_logits)
    if previous_classes is not None and len(previous_classes) == 0:
        return loss_er(fresh_logits, fresh_labels, replay_logits, replay_labels)
    hidden = sorted(set(int(c) for c in seen_classes) - set(int(c) for c in batch_classes))
    masked = fresh_logits
    if hidden:
        drop = torch.zeros(fresh_logits.shape[1], dtype=torch.bool, device=fresh_logits.device)
        drop[hidden] = True
        masked = fresh_logits.masked_fill(drop, torch.finfo(fresh_logits.dtype).min)
    loss = F.cross_entropy(masked, fresh_labels)
    if replay_logits is not None and replay_logits.shape[0]:
        loss = loss + F.cross_entropy(replay_logits, replay_labels)
    return loss


class RehearsalStrategy:
    """
    Binds a StrategyConfig to the loss functions used by the training loop.
    """

    def __init__(self, config):
        self.config = config

    @property
    def kind(self):
        return self.config.kind

    def compute_loss(self, fresh_logits, fresh_labels, replay=(), seen_classes=(), batch_classes=(),
                     previous_classes=None):
        """
        Compose the strategy loss.

        Args:
            fresh_logits, fresh_labels: Current-task outputs and targets.
            replay (sequence): One (logits, labels, stored_logits) triple per
                replay draw, in draw order. Empty before the buffer fills.
            seen_classes: Classes seen so far, for ERACE.
            batch_classes: Classes present in the fresh batch, for ERACE.
            previous_classes: Classes of earlier tasks, for ERACE; empty in task 1.
        """
        kind = self.config.kind
        if kind == 'SGD':
            return F.cross_entropy(fresh_logits, fresh_labels)
        if kind == 'ER':
            logits, labels = (replay[0][0], replay[0][1]) if replay else (None, None)
            return loss_er(fresh_logits, fresh_labels, logits, labels)
        if kind == 'ERACE':
            logits, labels = (replay[0][0], replay[0][1]) if replay else (None, None)
            return loss_erace(fresh_logits, fresh_labels, logits, labels, seen_classes, batch_classes,
                              previous_classes=previous_classes)
        if not replay:
            return loss_derpp(fresh_logits, fresh_labels, alpha=self.config.alpha, beta=self.config.beta)
        first = replay[0]
        second = replay[1] if len(replay) > 1 else replay[0]
        return loss_derpp(fresh_logits, fresh_labels,
                          replay_a_logits=first[0], stored_logits=first[2],
                          replay_b_logits=second[0], replay_b_labels=second[1],
                          alpha=self.config.alpha, beta=self.config.beta)
