"""
Tests for run comparison, counter reports, seed aggregation and the run registry.
"""

import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from database import Database
from errors import MissingArtifactError, PreconditionError
from feature_selection import SelectionCounter
from reporting import ReportGenerator, load_counter, load_run, summarize_seeds
from training_loop import run_sequence

from test_training_loop import tiny_config, tiny_dataset


def counter_with(rows):
    counter = SelectionCounter(len(rows), len(rows[0]))
    counter.register(range(len(rows)))
    counter.counts[:] = np.asarray(rows)
    return counter


class TestCounterReport(unittest.TestCase):

    def setUp(self):
        self.generator = ReportGenerator(top_fraction=0.6)
        self.counter = counter_with([
            [9, 8, 7, 6, 5, 0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0, 5, 6, 7, 8, 9],
            [5, 6, 7, 8, 9, 0, 0, 0, 0, 0],
        ])

    def test_top_features_skip_unused(self):
        self.assertEqual(self.generator.top_features(self.counter, 0), [0, 1, 2, 3, 4])
        self.assertEqual(self.generator.top_features(self.counter, 2), [4, 3, 2, 1, 0])

    def test_overlap(self):
        overlap = self.generator.counter_report(self.counter)['overlap'].set_index(['class_a', 'class_b'])
        self.assertEqual(overlap.loc[(0, 1), 'overlap'], 0.0)
        self.assertEqual(overlap.loc[(0, 2), 'overlap'], 1.0)
        self.assertEqual(overlap.loc[(0, 2), 'shared'], 5)

    def test_normalized_rows(self):
        normalized = self.generator.counter_report(self.counter)['normalized']
        self.assertEqual(list(normalized.index), [0, 1, 2])
        np.testing.assert_allclose(normalized.max(axis=1), 1.0)

    def test_written_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            _, paths = self.generator.write_counter_report(self.counter, tmp)
            for path in paths.values():
                self.assertTrue(os.path.exists(path))
            with open(paths['text']) as f:
                self.assertIn('0 vs 2: 100%', f.read())

    def test_missing_counter(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(MissingArtifactError):
                load_counter(tmp)


class TestSeedSummary(unittest.TestCase):

    def test_mean_and_sample_std(self):
        table = summarize_seeds([{'acc_final': 0.5, 'ff_final': 0.1},
                                 {'acc_final': 0.7, 'ff_final': 0.3}]).set_index('metric')
        self.assertAlmostEqual(table.loc['acc_final', 'mean'], 0.6)
        self.assertAlmostEqual(table.loc['acc_final', 'std'], np.std([0.5, 0.7], ddof=1))
        self.assertEqual(table.loc['ff_final', 'n'], 2)

    def test_single_seed(self):
        table = summarize_seeds([{'acc_final': 0.5}])
        self.assertEqual(table.iloc[0]['std'], 0.0)


class TestComparison(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        dataset = tiny_dataset()
        cls.er = run_sequence(tiny_config(cls.tmp.name, 'ER'), seed=1, dataset=dataset)
        cls.ace = run_sequence(tiny_config(cls.tmp.name, 'ERACE'), seed=1, dataset=dataset)
        cls.joint = run_sequence(tiny_config(cls.tmp.name, 'SGD', loop__joint=True), seed=1, dataset=dataset)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_run_record(self):
        run = load_run(self.er.out_dir)
        self.assertEqual(run.run_id, self.er.run_id)
        self.assertEqual(run.num_tasks, 2)
        np.testing.assert_allclose(run.accuracy_matrix('class_il'), self.er.class_il.R)

    def test_same_run_has_zero_deltas(self):
        run = load_run(self.er.out_dir)
        table = ReportGenerator().comparison_table([run, run])
        self.assertTrue(np.all(table['delta_acc_class_il'] == 0))
        self.assertTrue(np.all(table['delta_tradeoff'] == 0))

    def test_efficiency_columns_come_from_metadata(self):
        runs = [load_run(self.er.out_dir), load_run(self.ace.out_dir)]
        table = ReportGenerator().comparison_table(runs)
        self.assertEqual(table['buffer_bytes'].iloc[0], self.er.efficiency.buffer_bytes)
        self.assertAlmostEqual(table['s_per_step'].iloc[1], self.ace.efficiency.seconds_per_step, places=5)
        self.assertGreater(table['s_per_step'].iloc[0], 0)
        self.assertEqual(table['delta_s_per_step'].iloc[0], 0)

    def test_task_counts_must_match(self):
        runs = [load_run(self.er.out_dir), load_run(self.joint.out_dir)]
        with self.assertRaises(PreconditionError):
            ReportGenerator().comparison_table(runs)

    def test_needs_two_runs(self):
        with self.assertRaises(PreconditionError):
            ReportGenerator().comparison_table([load_run(self.er.out_dir)])

    def test_write_comparison(self):
        out = os.path.join(self.tmp.name, 'comparison')
        paths = ReportGenerator().write_comparison([self.er.out_dir, self.ace.out_dir], out)
        for name in ('comparison.txt', 'comparison.csv', 'comparison.json', 'series.csv', 'series.svg',
                     'tradeoff.svg', f"heatmap_{self.ace.run_id}_task_il.svg"):
            self.assertTrue(os.path.exists(paths[name]), name)
        with open(paths['comparison.txt']) as f:
            self.assertIn(self.ace.run_id, f.read())


class TestDatabase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.db = Database(os.path.join(self.tmp.name, 'runs.db'))

    def tearDown(self):
        self.db.close()
        self.tmp.cleanup()

    def test_save_and_get(self):
        summary = {'acc_final': 0.42, 'ff_final': float('nan'), 'tradeoff': 0.3}
        self.db.save_run('CLFD-ER-s1-abc', 'abc', 'CLFD-ER', 1, summary, '/tmp/run')
        run = self.db.get_run('CLFD-ER-s1-abc')
        self.assertEqual(run['acc_final'], 0.42)
        self.assertIsNone(run['ff_final'])
        self.assertEqual(run['summary']['tradeoff'], 0.3)
        self.assertIsNone(self.db.get_run('missing'))

    def test_recent_runs(self):
        for seed in (1, 2, 3):
            self.db.save_run(f"ER-s{seed}", 'abc', 'ER', seed, {'acc_final': 0.1 * seed})
        recent = self.db.get_recent_runs(limit=2)
        self.assertEqual(len(recent), 2)
        self.assertEqual(recent[0]['id'], 'ER-s3')


if __name__ == '__main__':
    unittest.main()
