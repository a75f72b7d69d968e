import json
import tempfile
from io import StringIO
from pathlib import Path

import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, override_settings

from detection.evaluator import TABLE_COLUMNS
from detection.models import ExperimentRun
from detection.trainer import LOG_COLUMNS
from .helpers import synthetic_dataset, write_csv

"""
Command Tests

Runs prepare -> train -> eval -> sweep end to end on a small synthetic
CSV, with every output under a temporary OUTPUT_ROOT.
"""

RUN_CONFIG = """
[dataset]
cache = toy.cache

[model]
input_dim = 6
encoder_dims = 5, 4
graph_dim = 4
latent_dim = 2
decoder_dims = 4
estimator_dims = 5
n_components = 2
k = 3

[train]
iterations = 4
batch_size = 20
learning_rate = 0.001
seed = 0

[eval]
seeds = 0, 1

[output]
dir = toy
"""


class CommandTestCase(TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.root = Path(self._tmp.name).resolve()
        detection = {'OUTPUT_ROOT': self.root, 'DATA_ROOT': None, 'LOG_EVERY': 0, 'SCORING_WORKERS': 1}
        override = override_settings(DETECTION=detection)
        override.enable()
        self.addCleanup(override.disable)

        raw = synthetic_dataset(prepared=False)
        rows = [list(features) + ["attack" if label else "normal"] for features, label in zip(raw.features, raw.labels)]
        write_csv(self.root / "toy.csv", rows)
        (self.root / "toy.recipe").write_text(
            "[recipe]\nname = toy\nsources = toy.csv\nlabel_column = 6\nanomaly_labels = attack\nexpected_features = 6\n",
            encoding="utf-8",
        )
        self.config = self.root / "toy.cfg"
        self.config.write_text(RUN_CONFIG, encoding="utf-8")

    def call(self, *args):
        out = StringIO()
        call_command(*args, stdout=out)
        return out.getvalue()

    def prepare(self, out="toy.cache", seed=0):
        return self.call('prepare', str(self.root / "toy.recipe"), out, '--seed', str(seed))


class PrepareCommandTest(CommandTestCase):

    def test_writes_cache_and_recipe_echo(self):
        output = self.prepare()

        self.assertIn("N=150 F=6", output)
        self.assertTrue((self.root / "toy.cache").exists())
        echo = json.loads((self.root / "toy.cache.recipe.json").read_text())
        self.assertEqual(echo['split_seed'], 0)
        self.assertEqual(echo['recipe']['anomaly_labels'], ["attack"])

    def test_missing_recipe(self):
        with self.assertRaises(CommandError):
            self.call('prepare', str(self.root / "absent.recipe"), "x.cache")


class TrainEvalCommandTest(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.prepare()

    def test_train_writes_checkpoint_and_log(self):
        self.call('train', str(self.config), '--checkpoint-every', '2')

        out_dir = self.root / "toy"
        self.assertTrue((out_dir / "checkpoint.ckpt").exists())
        self.assertTrue((out_dir / "checkpoint-000002.ckpt").exists())
        self.assertTrue((out_dir / "checkpoint-000004.ckpt").exists())
        log = pd.read_csv(out_dir / "training_log.csv")
        self.assertEqual(tuple(log.columns), LOG_COLUMNS)
        self.assertEqual(len(log), 4)
        sidecar = json.loads((out_dir / "training_log.csv.config.json").read_text())
        self.assertEqual(sidecar['train']['iterations'], 4)

    def test_same_seed_gives_identical_checkpoint(self):
        self.call('train', str(self.config), '--seed', '5')
        first = (self.root / "toy" / "checkpoint.ckpt").read_bytes()
        self.call('train', str(self.config), '--seed', '5')
        second = (self.root / "toy" / "checkpoint.ckpt").read_bytes()

        self.assertEqual(first, second)

    def test_eval_reports_and_records(self):
        self.call('train', str(self.config))
        output = self.call(
            'eval', 'toy/checkpoint.ckpt', 'toy.cache', '--record', '--scores', 'toy/scores.csv',
        )

        report = json.loads((self.root / "toy" / "checkpoint.eval.json").read_text())
        self.assertEqual(report['n_scored'], 75)
        self.assertEqual(report['threshold_mode'], 'ratio')
        self.assertEqual(report['tp'] + report['fp'] + report['fn'] + report['tn'], 75)
        self.assertIn("precision", output)
        scores = pd.read_csv(self.root / "toy" / "scores.csv")
        self.assertEqual(len(scores), 75)

        run = ExperimentRun.objects.get()
        self.assertEqual((run.dataset, run.kind, run.setting), ("toy", "eval", "seed=0"))
        self.assertEqual(run.seed_results.count(), 1)

    def test_eval_energy_threshold(self):
        self.call('train', str(self.config))
        self.call('eval', 'toy/checkpoint.ckpt', 'toy.cache', '--threshold-energy=-1e9', '--report', 'all.json')

        report = json.loads((self.root / "all.json").read_text())
        self.assertEqual(report['n_flagged'], 75)

    def test_eval_rejects_other_dataset(self):
        self.call('train', str(self.config))
        self.prepare(out="other.cache", seed=1)

        with self.assertRaises(CommandError) as ctx:
            self.call('eval', 'toy/checkpoint.ckpt', 'other.cache')
        self.assertIn("trained on dataset", str(ctx.exception))

    def test_eval_rejects_intermediate_checkpoint(self):
        self.call('train', str(self.config), '--checkpoint-every', '2')

        with self.assertRaises(CommandError) as ctx:
            self.call('eval', 'toy/checkpoint-000002.ckpt', 'toy.cache')
        self.assertIn("intermediate checkpoint", str(ctx.exception))

    def test_missing_config(self):
        with self.assertRaises(CommandError):
            self.call('train', str(self.root / "absent.cfg"))

    def test_model_must_match_cache_width(self):
        self.config.write_text(
            RUN_CONFIG.replace("input_dim = 6", "input_dim = 7"), encoding="utf-8",
        )
        with self.assertRaises(CommandError) as ctx:
            self.call('train', str(self.config))
        self.assertIn("model expects 7", str(ctx.exception))


class SweepCommandTest(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.prepare()

    def test_k_sweep_writes_table_and_records(self):
        output = self.call('sweep', str(self.config), '--k-list', '2,3', '--seeds', '0', '--record')

        table = pd.read_csv(self.root / "toy" / "k_sweep.csv")
        self.assertEqual(tuple(table.columns), TABLE_COLUMNS)
        self.assertEqual(list(table['setting']), ["k=2", "k=3"])
        self.assertIn("mean F1 spread across K", output)
        self.assertEqual(ExperimentRun.objects.filter(kind="k_sweep").count(), 2)

    def test_noise_sweep_reports_degradation(self):
        output = self.call('sweep', str(self.config), '--noise-list', '0,5', '--seeds', '0')

        report = json.loads((self.root / "toy" / "noise.json").read_text())
        self.assertEqual([s['setting'] for s in report['settings']], ["noise=0", "noise=0.05"])
        self.assertIn("degradation", report)
        self.assertIn("mean F1 degradation", output)

    def test_plain_experiment_uses_config_seeds(self):
        self.call('sweep', str(self.config))

        report = json.loads((self.root / "toy" / "experiment.json").read_text())
        self.assertEqual(report['seeds'], [0, 1])
        self.assertEqual(len(report['settings'][0]['runs']), 2)

    def test_empty_list_rejected(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('sweep', str(self.config), '--k-list', ',')
        self.assertIn("the list is empty", str(ctx.exception))

    def test_k_and_noise_lists_are_exclusive(self):
        with self.assertRaises(CommandError):
            self.call('sweep', str(self.config), '--k-list', '3', '--noise-list', '1')
