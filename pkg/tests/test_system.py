"""
End-to-end test of the command-line workflow

This script drives the whole system through its command-line verbs on a
small synthetic dataset in CIFAR binary format:
1. validate-config
2. run (two seeds, registered in the run database)
3. compare
4. inspect-counter (stored and test-split counters)
5. export-buffer
6. list-runs
"""

import glob
import io
import os
import sys
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from unittest.mock import patch

import numpy as np

# Add parent directory to path to import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from reporting import load_run

RECORD_BYTES = 1 + 3 * 32 * 32
CLASS_NAMES = ['plane', 'car', 'bird', 'cat']


def write_batch(path, labels, rng):
    records = np.zeros((len(labels), RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    # class-dependent brightness keeps the classes separable
    base = (np.asarray(labels) * 60)[:, None]
    records[:, 1:] = np.clip(base + rng.integers(0, 40, size=(len(labels), RECORD_BYTES - 1)), 0, 255)
    records.tofile(path)


class TestCommandLineWorkflow(unittest.TestCase):
    """Runs the full workflow once and checks every verb's output."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        root = cls.tmp.name
        cls.data_dir = os.path.join(root, 'data')
        os.makedirs(cls.data_dir)
        rng = np.random.default_rng(0)
        write_batch(os.path.join(cls.data_dir, 'data_batch_1.bin'), np.repeat(np.arange(4), 8), rng)
        write_batch(os.path.join(cls.data_dir, 'test_batch.bin'), np.repeat(np.arange(4), 4), rng)
        with open(os.path.join(cls.data_dir, 'batches.meta.txt'), 'w') as f:
            f.write('\n'.join(CLASS_NAMES) + '\n')

        cls.out_root = os.path.join(root, 'runs')
        cls.db_path = os.path.join(root, 'runs.db')
        cls.config_path = os.path.join(root, 'tiny.cfg')
        with open(cls.config_path, 'w') as f:
            f.write(
                "# two tasks of two classes, one epoch each\n"
                f"data.path = {cls.data_dir}\n"
                "data.tasks = 0,1;2,3\n"
                "strategy.kind = ER\n"
                "buffer.capacity = 12\n"
                "optim.epochs = 1\n"
                "optim.batch_size = 8\n"
                "optim.replay_batch = 8\n"
                "optim.lr = 0.05\n"
            )

        cls.env = patch.dict(os.environ, {'CLFD_OUT': cls.out_root})
        cls.env.start()
        cls.run_code, cls.run_output = cls.cli('run', '--config', cls.config_path, '--seeds', '1,2',
                                               '--db', cls.db_path)
        cls.run_dirs = sorted(d for d in glob.glob(os.path.join(cls.out_root, 'CLFD-ER-s*'))
                              if not d.endswith('-seeds'))

    @classmethod
    def tearDownClass(cls):
        cls.env.stop()
        cls.tmp.cleanup()

    @staticmethod
    def cli(*argv):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = main(['--log-level', 'WARNING'] + list(argv))
        return code, out.getvalue() + err.getvalue()

    def test_validate_config(self):
        code, output = self.cli('validate-config', self.config_path)
        self.assertEqual(code, EXIT_OK)
        self.assertIn('ok', output)

        bad = os.path.join(self.tmp.name, 'bad.cfg')
        with open(bad, 'w') as f:
            f.write("strategy.kind = ER\ncffs.lamda = 0.5\n")
        code, output = self.cli('validate-config', bad)
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("did you mean 'cffs.lambda'", output)

    def test_run_outputs(self):
        self.assertEqual(self.run_code, EXIT_OK)
        self.assertEqual(len(self.run_dirs), 2)
        self.assertIn('ACC', self.run_output)
        seeds_dirs = glob.glob(os.path.join(self.out_root, '*-seeds'))
        self.assertEqual(len(seeds_dirs), 1)
        self.assertTrue(os.path.exists(os.path.join(seeds_dirs[0], 'summary_seeds.csv')))
        run = load_run(self.run_dirs[0])
        self.assertEqual(run.num_tasks, 2)
        self.assertEqual(run.metadata['input_mode'], 'ffe')

    def test_failed_run_closes_registry(self):
        with patch('cli.Database') as registry, \
                patch('cli.run_sequence', side_effect=RuntimeError('training diverged')):
            code, output = self.cli('run', '--config', self.config_path, '--db', self.db_path)
        self.assertEqual(code, EXIT_RUNTIME)
        self.assertIn('training diverged', output)
        registry.return_value.close.assert_called_once()
        registry.return_value.save_run.assert_not_called()

    def test_run_with_unknown_override(self):
        code, output = self.cli('run', '--config', self.config_path, '--set', 'cffs.lamda=0.3',
                                '--no-register')
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn('cffs.lambda', output)

    def test_compare(self):
        out = os.path.join(self.tmp.name, 'comparison')
        code, output = self.cli('compare', *self.run_dirs, '--out', out)
        self.assertEqual(code, EXIT_OK)
        self.assertIn('CONTINUAL LEARNING RUN COMPARISON', output)
        self.assertTrue(os.path.exists(os.path.join(out, 'series.svg')))

    def test_compare_missing_run(self):
        code, _ = self.cli('compare', self.run_dirs[0], os.path.join(self.tmp.name, 'nothing'))
        self.assertEqual(code, EXIT_RUNTIME)

    def test_inspect_counter(self):
        out = os.path.join(self.tmp.name, 'counter')
        code, output = self.cli('inspect-counter', self.run_dirs[0], '--out', out)
        self.assertEqual(code, EXIT_OK)
        self.assertIn('FEATURE SELECTION COUNTER', output)
        self.assertTrue(os.path.exists(os.path.join(out, 'counter_report_overlap.csv')))

        code, _ = self.cli('inspect-counter', self.run_dirs[0], '--out', out, '--replay-test')
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(out, 'counter_report_test_normalized.csv')))

    def test_export_buffer(self):
        out = os.path.join(self.tmp.name, 'buffer.npz')
        previews = os.path.join(self.tmp.name, 'previews')
        code, output = self.cli('export-buffer', self.run_dirs[0], '--out', out,
                                '--preview', previews, '--count', '3')
        self.assertEqual(code, EXIT_OK)
        with np.load(out) as arrays:
            self.assertEqual(arrays['maps'].shape, (12, 3, 16, 16))
            self.assertEqual(int(arrays['capacity']), 12)
        self.assertEqual(len(glob.glob(os.path.join(previews, '*.png'))), 3)

    def test_list_runs(self):
        code, output = self.cli('list-runs', '--db', self.db_path)
        self.assertEqual(code, EXIT_OK)
        for run_dir in self.run_dirs:
            self.assertIn(os.path.basename(run_dir), output)


if __name__ == '__main__':
    unittest.main()
