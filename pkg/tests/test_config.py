"""
Tests for run configuration parsing and validation.
"""

import glob
import os
import sys
import tempfile
import unittest
from unittest.mock import patch

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.append(ROOT)

from config import RunConfig, load_config, parse_lines, validate_config
from errors import ConfigError


class TestParsing(unittest.TestCase):

    def test_typed_values(self):
        config = parse_lines([
            'strategy.kind = DERPP   # with logits',
            'cffs.lambda = 0.25',
            'buffer.capacity = 200',
            'ffe.enabled = false',
            'run.seeds = 1,2,3',
            '',
            '# trailing comment',
        ])
        self.assertEqual(config.strategy.kind, 'DERPP')
        self.assertEqual(config.cffs.lam, 0.25)
        self.assertEqual(config.buffer.capacity, 200)
        self.assertFalse(config.ffe.enabled)
        self.assertEqual(config.run.seeds, [1, 2, 3])

    def test_unknown_key_suggests_closest(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_lines(['strategy.kind = ER', 'cffs.lamda = 0.5'])
        self.assertEqual(ctx.exception.line, 2)
        self.assertEqual(ctx.exception.suggestion, 'cffs.lambda')
        self.assertIn('line 2', str(ctx.exception))

    def test_bad_value_type(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_lines(['buffer.capacity = many'])
        self.assertEqual(ctx.exception.key, 'buffer.capacity')

    def test_line_without_assignment(self):
        with self.assertRaises(ConfigError):
            parse_lines(['buffer.capacity'])

    def test_text_form_round_trips(self):
        config = parse_lines(['strategy.kind = ERACE', 'cffs.lambda = 0.7', 'data.mean = 0.5,0.5,0.5'])
        again = parse_lines(config.to_text().splitlines())
        self.assertEqual(again, config)
        self.assertIn('cffs.lambda = 0.7', config.to_text())

    def test_digest_ignores_output_root(self):
        a, b = RunConfig(), RunConfig()
        b.output.root = '/elsewhere'
        self.assertEqual(a.digest(), b.digest())
        b.cffs.beta = 3.0
        self.assertNotEqual(a.digest(), b.digest())

    def test_run_names(self):
        self.assertEqual(RunConfig().run_name, 'CLFD-ER')
        plain = parse_lines(['ffe.enabled = false', 'strategy.kind = DERPP'])
        self.assertEqual(plain.run_name, 'DERPP')
        joint = parse_lines(['strategy.kind = SGD', 'loop.joint = true', 'ffe.enabled = false'])
        self.assertEqual(joint.run_name, 'SGD-JOINT')


class TestValidation(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        path = os.path.join(self.tmp.name, 'run.cfg')
        with open(path, 'w') as f:
            f.write(text)
        return path

    def test_collects_every_problem(self):
        path = self.write('cffs.lamda = 0.5\ncffs.beta = -1\nstrategy.kind = CLSER\n')
        problems = validate_config(path)
        keys = {p.key for p in problems}
        self.assertEqual(len(problems), 3)
        self.assertTrue({'cffs.lamda', 'cffs.beta', 'strategy.kind'} <= keys)

    def test_buffer_required_for_rehearsal(self):
        problems = validate_config(self.write('strategy.kind = ER\nbuffer.capacity = 0\n'))
        self.assertEqual([p.key for p in problems], ['buffer.capacity'])
        self.assertEqual(validate_config(self.write('strategy.kind = SGD\nbuffer.capacity = 0\n')), [])

    def test_bad_task_split(self):
        problems = validate_config(self.write('data.tasks = 0,1;x\n'))
        self.assertEqual([p.key for p in problems], ['data.tasks'])

    def test_load_raises_first_problem(self):
        with self.assertRaises(ConfigError):
            load_config(self.write('cffs.lambda = 2\n'))

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(os.path.join(self.tmp.name, 'absent.cfg'))

    def test_overrides_and_output_environment(self):
        path = self.write('strategy.kind = ER\n')
        with patch.dict(os.environ, {'CLFD_OUT': '/tmp/clfd-out'}):
            config = load_config(path, overrides=['optim.epochs=2', 'cffs.lambda=0.1'])
        self.assertEqual(config.output.root, '/tmp/clfd-out')
        self.assertEqual(config.optim.epochs, 2)
        self.assertEqual(config.cffs.lam, 0.1)

    def test_shipped_configs_are_valid(self):
        paths = sorted(glob.glob(os.path.join(ROOT, 'configs', '*.cfg')))
        self.assertTrue(paths)
        for path in paths:
            self.assertEqual(validate_config(path), [], path)


if __name__ == '__main__':
    unittest.main()
