"""
Tests for the rehearsal loss compositions.
"""

import math
import os
import sys
import unittest

import torch

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import PreconditionError
from rehearsal_strategies import RehearsalStrategy, StrategyConfig, loss_derpp, loss_er, loss_erace


class TestStrategyConfig(unittest.TestCase):

    def test_spellings_normalized(self):
        self.assertEqual(StrategyConfig('der++').kind, 'DERPP')
        self.assertEqual(StrategyConfig('er-ace').kind, 'ERACE')

    def test_clser_is_rejected(self):
        with self.assertRaises(ValueError):
            StrategyConfig('CLSER')

    def test_replay_draws(self):
        self.assertEqual(StrategyConfig('SGD').replay_draws, 0)
        self.assertEqual(StrategyConfig('ER').replay_draws, 1)
        self.assertEqual(StrategyConfig('DERPP').replay_draws, 2)
        self.assertEqual(StrategyConfig('DERPP', single_draw=True).replay_draws, 1)
        self.assertFalse(StrategyConfig('SGD').uses_buffer)
        self.assertTrue(StrategyConfig('DERPP').stores_logits)

    def test_negative_weights(self):
        with self.assertRaises(ValueError):
            StrategyConfig('DERPP', alpha=-1.0)


class TestLosses(unittest.TestCase):

    def test_er_averages_over_all_examples(self):
        fresh = torch.zeros(2, 2)
        replay = torch.tensor([[10.0, 0.0]])
        labels = torch.tensor([0, 1])
        loss = loss_er(fresh, labels, replay, torch.tensor([0]))
        expected = (2 * math.log(2) + math.log(1 + math.exp(-10))) / 3
        self.assertAlmostEqual(loss.item(), expected, places=5)
        self.assertAlmostEqual(loss_er(fresh, labels).item(), math.log(2), places=6)

    def test_derpp_terms(self):
        fresh = torch.zeros(2, 2)
        labels = torch.tensor([0, 1])
        loss = loss_derpp(fresh, labels, replay_a_logits=torch.ones(3, 2), stored_logits=torch.zeros(3, 2),
                          replay_b_logits=torch.zeros(1, 2), replay_b_labels=torch.tensor([0]),
                          alpha=0.1, beta=0.5)
        self.assertAlmostEqual(loss.item(), math.log(2) + 0.1 + 0.5 * math.log(2), places=5)

    def test_derpp_needs_stored_logits(self):
        with self.assertRaises(PreconditionError):
            loss_derpp(torch.zeros(1, 2), torch.tensor([0]), replay_a_logits=torch.zeros(1, 2),
                       stored_logits=torch.full((1, 2), float('nan')))

    def test_erace_hides_absent_seen_classes(self):
        fresh = torch.zeros(1, 4)
        loss = loss_erace(fresh, torch.tensor([2]), None, None, seen_classes=[0, 1, 2], batch_classes=[2])
        # class 3 is unseen and stays in the softmax
        self.assertAlmostEqual(loss.item(), math.log(2), places=5)

    def test_erace_adds_replay_term(self):
        fresh = torch.zeros(1, 2)
        replay = torch.zeros(2, 2)
        loss = loss_erace(fresh, torch.tensor([1]), replay, torch.tensor([0, 1]),
                          seen_classes=[0, 1], batch_classes=[1])
        self.assertAlmostEqual(loss.item(), math.log(2), places=5)

    def test_erace_equals_er_in_first_task(self):
        torch.manual_seed(0)
        fresh = torch.randn(4, 10)
        labels = torch.tensor([0, 0, 0, 0])
        replay = torch.randn(3, 10)
        replay_labels = torch.tensor([1, 0, 1])
        ace = loss_erace(fresh, labels, None, None, seen_classes=[0, 1], batch_classes=[0], previous_classes=[])
        self.assertAlmostEqual(ace.item(), loss_er(fresh, labels).item(), places=6)
        ace = loss_erace(fresh, labels, replay, replay_labels, seen_classes=[0, 1], batch_classes=[0],
                         previous_classes=[])
        self.assertAlmostEqual(ace.item(), loss_er(fresh, labels, replay, replay_labels).item(), places=6)

    def test_erace_masks_once_earlier_tasks_exist(self):
        fresh = torch.zeros(1, 4)
        loss = loss_erace(fresh, torch.tensor([2]), None, None, seen_classes=[0, 1, 2, 3], batch_classes=[2],
                          previous_classes=[0, 1])
        self.assertAlmostEqual(loss.item(), 0.0, places=5)

    def test_empty_fresh_batch(self):
        with self.assertRaises(PreconditionError):
            loss_er(torch.zeros(0, 2), torch.zeros(0, dtype=torch.long))


class TestRehearsalStrategy(unittest.TestCase):

    def test_er_without_replay_is_plain_cross_entropy(self):
        strategy = RehearsalStrategy(StrategyConfig('ER'))
        loss = strategy.compute_loss(torch.zeros(2, 3), torch.tensor([0, 1]))
        self.assertAlmostEqual(loss.item(), math.log(3), places=6)

    def test_derpp_uses_draws_in_order(self):
        strategy = RehearsalStrategy(StrategyConfig('DERPP', alpha=1.0, beta=0.0))
        first = (torch.ones(2, 2), torch.tensor([0, 1]), torch.zeros(2, 2))
        second = (torch.zeros(2, 2), torch.tensor([0, 1]), None)
        loss = strategy.compute_loss(torch.zeros(1, 2), torch.tensor([0]), replay=[first, second])
        self.assertAlmostEqual(loss.item(), math.log(2) + 1.0, places=5)

    def test_erace_first_task_hides_nothing(self):
        strategy = RehearsalStrategy(StrategyConfig('ERACE'))
        fresh = torch.tensor([[1.0, 2.0, 0.5]])
        labels = torch.tensor([0])
        loss = strategy.compute_loss(fresh, labels, seen_classes=[0, 1, 2], batch_classes=[0],
                                     previous_classes=[])
        self.assertAlmostEqual(loss.item(), loss_er(fresh, labels).item(), places=6)

    def test_sgd_ignores_replay(self):
        strategy = RehearsalStrategy(StrategyConfig('SGD'))
        replay = [(torch.tensor([[50.0, 0.0]]), torch.tensor([1]), None)]
        loss = strategy.compute_loss(torch.zeros(1, 2), torch.tensor([0]), replay=replay)
        self.assertAlmostEqual(loss.item(), math.log(2), places=6)


if __name__ == '__main__':
    unittest.main()
