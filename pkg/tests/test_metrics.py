"""
Tests for the continual-learning metrics and efficiency accounting.
"""

import os
import sys
import unittest

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import PreconditionError
from metrics import (AccuracyMatrix, EfficiencyReport, average_accuracy, final_forgetting,
                     peak_memory_bytes, stability_plasticity)


class TestAccuracyMatrix(unittest.TestCase):

    def test_rows_fill_lower_triangle(self):
        matrix = AccuracyMatrix(3)
        matrix.set_row(1, [0.9])
        matrix.set_row(2, [0.7, 0.8])
        self.assertEqual(matrix.completed_rows, 2)
        self.assertEqual(matrix.to_records(), [(1, 1, 0.9), (2, 1, 0.7), (2, 2, 0.8)])
        self.assertTrue(np.isnan(matrix.R[0, 1]))

    def test_row_length_checked(self):
        with self.assertRaises(PreconditionError):
            AccuracyMatrix(2).set_row(2, [0.5])

    def test_accuracy_range_checked(self):
        with self.assertRaises(ValueError):
            AccuracyMatrix(1).set_row(1, [1.2])

    def test_incomplete_row(self):
        with self.assertRaises(PreconditionError):
            AccuracyMatrix(2).row(2)


class TestMetrics(unittest.TestCase):

    def test_average_accuracy(self):
        R = AccuracyMatrix.from_array([[0.9, 0], [0.6, 0.8]])
        self.assertAlmostEqual(average_accuracy(R, 1), 0.9)
        self.assertAlmostEqual(average_accuracy(R, 2), 0.7)

    def test_forgetting_example(self):
        R = AccuracyMatrix.from_array([[0.9, 0], [0.6, 0.8]])
        self.assertAlmostEqual(final_forgetting(R, 2), 0.3)

    def test_forgetting_uses_best_earlier_accuracy(self):
        R = AccuracyMatrix.from_array([[0.5, 0, 0], [0.8, 0.9, 0], [0.6, 0.9, 0.7]])
        # task 1 peaked at 0.8 and ends at 0.6, task 2 did not drop
        self.assertAlmostEqual(final_forgetting(R, 3), 0.1)

    def test_negative_forgetting_and_clip(self):
        R = AccuracyMatrix.from_array([[0.4, 0], [0.6, 0.8]])
        self.assertAlmostEqual(final_forgetting(R, 2), -0.2)
        self.assertEqual(final_forgetting(R, 2, clip=True), 0.0)

    def test_forgetting_needs_two_tasks(self):
        with self.assertRaises(PreconditionError):
            final_forgetting(AccuracyMatrix.from_array([[0.5]]), 1)

    def test_stability_plasticity_example(self):
        S, P, tradeoff = stability_plasticity(AccuracyMatrix.from_array([[1.0, 0], [0.5, 1.0]]), 2)
        self.assertAlmostEqual(S, 0.5)
        self.assertAlmostEqual(P, 1.0)
        self.assertAlmostEqual(tradeoff, 2 / 3)

    def test_tradeoff_of_zero_matrix(self):
        self.assertEqual(stability_plasticity(np.zeros((2, 2)), 2)[2], 0.0)


class TestEfficiency(unittest.TestCase):

    def test_report_totals(self):
        report = EfficiencyReport(flops_total=10, wall_time_per_task=[1.5, 2.5], steps_per_task=[10, 30])
        self.assertEqual(report.wall_time_total, 4.0)
        self.assertAlmostEqual(report.seconds_per_step, 0.1)
        self.assertIn('flops_note', report.to_dict())

    def test_report_without_steps(self):
        self.assertEqual(EfficiencyReport().seconds_per_step, 0.0)

    def test_peak_memory_reading(self):
        value, estimated = peak_memory_bytes()
        if not estimated:
            self.assertGreater(value, 0)


if __name__ == '__main__':
    unittest.main()
