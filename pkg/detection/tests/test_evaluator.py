import math
import os
import tempfile
from unittest import mock

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from detection import evaluator
from detection.cadgmm_model import ParamStore
from detection.evaluator import (
    TABLE_COLUMNS, EvalOptions, ExperimentReport, Metrics, SeedOutcome, SweepReport, evaluate,
    export_embeddings, k_sweep, prf1, run_experiment, score_dataset, threshold_by_energy,
    threshold_by_ratio, write_scores,
)
from detection.exceptions import ConfigError, EvaluationError, GraphError
from detection.numeric_core import SeededRng
from detection.trainer import TrainConfig, freeze_gmm, train
from .helpers import synthetic_dataset, tiny_config


class ThresholdTest(SimpleTestCase):

    def test_flags_highest_energy(self):
        threshold, predictions = threshold_by_ratio([0.1, 0.9, 0.5, 0.7], 0.25)
        np.testing.assert_array_equal(predictions, [0, 1, 0, 0])
        self.assertEqual(threshold, 0.9)

    def test_flag_count_is_ceiling_of_ratio(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 200))
            ratio = float(rng.uniform(0.01, 0.99))
            energies = rng.standard_normal(n)
            threshold, predictions = threshold_by_ratio(energies, ratio)
            self.assertEqual(predictions.sum(), min(n, math.ceil(round(ratio * n, 9))))
            self.assertTrue((energies[predictions == 1] >= threshold).all())
            self.assertTrue((energies[predictions == 0] <= threshold).all())

    def test_exact_products_do_not_round_up(self):
        _, predictions = threshold_by_ratio(np.arange(100.0), 0.07)
        self.assertEqual(predictions.sum(), 7)

    def test_ties_go_to_lower_index(self):
        _, predictions = threshold_by_ratio([1.0, 3.0, 3.0, 3.0, 0.0], 0.4)
        np.testing.assert_array_equal(predictions, [0, 1, 1, 0, 0])

    def test_empty_input(self):
        threshold, predictions = threshold_by_ratio([], 0.2)
        self.assertEqual(threshold, math.inf)
        self.assertEqual(len(predictions), 0)

    def test_ratio_out_of_range(self):
        with self.assertRaises(EvaluationError):
            threshold_by_ratio([1.0, 2.0], 1.0)

    def test_energy_threshold_is_inclusive(self):
        _, predictions = threshold_by_energy([0.5, 1.0, 1.5], 1.0)
        np.testing.assert_array_equal(predictions, [0, 1, 1])

    def test_options_reject_both_thresholds(self):
        with self.assertRaises(ConfigError):
            EvalOptions(threshold_ratio=0.2, threshold_energy=3.0)


class MetricsTest(SimpleTestCase):

    def test_counts_and_scores(self):
        labels = [1, 1, 1, 1, 1, 0, 0, 0]
        predictions = [1, 1, 1, 0, 0, 1, 0, 0]
        metrics = prf1(labels, predictions)
        self.assertEqual((metrics.tp, metrics.fp, metrics.fn, metrics.tn), (3, 1, 2, 2))
        self.assertAlmostEqual(metrics.precision, 0.75)
        self.assertAlmostEqual(metrics.recall, 0.6)
        self.assertAlmostEqual(metrics.f1, 2 / 3)
        self.assertFalse(metrics.zero_division)

    def test_no_positive_predictions(self):
        metrics = prf1([1, 0, 0], [0, 0, 0])
        self.assertEqual((metrics.precision, metrics.recall, metrics.f1), (0.0, 0.0, 0.0))
        self.assertTrue(metrics.zero_division)

    def test_matches_direct_counting(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            labels = rng.integers(0, 2, 60)
            predictions = rng.integers(0, 2, 60)
            tp = int(((labels == 1) & (predictions == 1)).sum())
            precision = tp / max(predictions.sum(), 1)
            recall = tp / max(labels.sum(), 1)
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            metrics = prf1(labels, predictions)
            self.assertAlmostEqual(metrics.precision, precision)
            self.assertAlmostEqual(metrics.recall, recall)
            self.assertAlmostEqual(metrics.f1, f1)

    def test_length_mismatch(self):
        with self.assertRaises(EvaluationError):
            prf1([1, 0], [1])


class ScoringTest(SimpleTestCase):

    def setUp(self):
        self.dataset = synthetic_dataset()
        self.config = tiny_config()
        self.params = ParamStore.initialize(self.config, SeededRng(0))
        self.gmm = freeze_gmm(self.dataset.features[self.dataset.train_indices], self.params, self.config, 20)

    def test_duplicate_rows_get_equal_energy(self):
        features = np.vstack([self.dataset.features[:15], self.dataset.features[:1]])
        energies = score_dataset(features, self.params, self.gmm, self.config, 16)
        self.assertAlmostEqual(energies[0], energies[15], places=9)

    def test_duplicated_batch_scores_identically(self):
        block = self.dataset.features[:20]
        energies = score_dataset(np.vstack([block, block]), self.params, self.gmm, self.config, 20)
        np.testing.assert_array_equal(energies[:20], energies[20:])

    def test_trained_model_scores_anomalies_higher(self):
        result = train(self.dataset, TrainConfig(model=self.config, iterations=500, batch_size=30, learning_rate=1e-3))
        rows = self.dataset.test_indices
        energies = score_dataset(self.dataset.features[rows], result.params, result.gmm, self.config, 30)
        labels = self.dataset.labels[rows]
        self.assertLess(energies[labels == 0].mean(), energies[labels == 1].mean())

    def test_scores_every_row_once_with_short_final_batch(self):
        features = self.dataset.features[:41]
        energies = score_dataset(features, self.params, self.gmm, self.config, 20)
        self.assertEqual(energies.shape, (41,))
        self.assertTrue(np.isfinite(energies).all())

    def test_batch_must_exceed_k(self):
        with self.assertRaises(ConfigError):
            score_dataset(self.dataset.features[:10], self.params, self.gmm, self.config, 3)

    def test_too_few_rows_for_a_graph(self):
        with self.assertRaises(GraphError):
            score_dataset(self.dataset.features[:3], self.params, self.gmm, self.config, 20)

    def test_evaluate_defaults_to_dataset_anomaly_ratio(self):
        report = evaluate(self.dataset, self.params, self.gmm, self.config, EvalOptions(batch_size=20))
        n_test = len(self.dataset.test_indices)
        self.assertEqual(report.predictions.sum(), math.ceil(round(self.dataset.anomaly_ratio * n_test, 9)))
        self.assertEqual(report.mode, "ratio")
        self.assertEqual(report.to_dict()["n_scored"], n_test)

    def test_evaluate_with_energy_threshold(self):
        report = evaluate(
            self.dataset, self.params, self.gmm, self.config, EvalOptions(batch_size=20, threshold_energy=-1e9),
        )
        self.assertEqual(report.predictions.sum(), len(self.dataset.test_indices))
        self.assertEqual(report.mode, "energy")

    def test_write_scores(self):
        report = evaluate(self.dataset, self.params, self.gmm, self.config, EvalOptions(batch_size=20))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "scores.csv")
            write_scores(path, report, self.dataset.test_indices)
            frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ["row", "energy", "prediction", "label"])
        np.testing.assert_array_equal(frame["row"], self.dataset.test_indices)
        np.testing.assert_array_equal(frame["energy"], report.energies)

    def test_export_embeddings(self):
        with tempfile.TemporaryDirectory() as tmp:
            first = os.path.join(tmp, "a.csv")
            second = os.path.join(tmp, "b.csv")
            export_embeddings(first, self.dataset, self.params, self.gmm, self.config, 20, sample=30, seed=2)
            export_embeddings(second, self.dataset, self.params, self.gmm, self.config, 20, sample=30, seed=2)
            frame = pd.read_csv(first)
            with open(first, "rb") as a, open(second, "rb") as b:
                self.assertEqual(a.read(), b.read())
        self.assertEqual(len(frame), 30)
        self.assertEqual(list(frame.columns), ["z_0", "z_1", "z_2", "z_3", "energy", "label"])


class ExperimentTest(SimpleTestCase):

    def setUp(self):
        self.dataset = synthetic_dataset()
        self.cfg = TrainConfig(model=tiny_config(), iterations=3, batch_size=20, learning_rate=1e-3)
        self.options = EvalOptions()

    def test_failing_seed_is_recorded_and_others_run(self):
        real_train = evaluator.train

        def flaky(dataset, cfg, **kwargs):
            if cfg.seed == 1:
                raise EvaluationError("seed 1 diverged")
            return real_train(dataset, cfg, **kwargs)

        with mock.patch.object(evaluator, "train", side_effect=flaky):
            report = run_experiment(self.dataset, self.cfg, [0, 1, 2], self.options, setting="base")
        self.assertEqual(report.failed, [1])
        self.assertEqual([o.seed for o in report.succeeded], [0, 2])
        self.assertEqual(report.outcomes[1].error, "seed 1 diverged")
        self.assertTrue(math.isfinite(report.mean("f1")))
        self.assertEqual(report.to_dict()["failed_seeds"], [1])

    def test_seeds_are_reproducible(self):
        first = run_experiment(self.dataset, self.cfg, [4], self.options)
        second = run_experiment(self.dataset, self.cfg, [4], self.options)
        self.assertEqual(first.outcomes[0].metrics, second.outcomes[0].metrics)

    def test_concurrent_seeds_match_sequential(self):
        sequential = run_experiment(self.dataset, self.cfg, [0, 1, 2], self.options)
        concurrent = run_experiment(self.dataset, self.cfg, [0, 1, 2], self.options, jobs=3)
        self.assertEqual([o.seed for o in concurrent.outcomes], [0, 1, 2])
        self.assertEqual(
            [o.metrics for o in concurrent.outcomes], [o.metrics for o in sequential.outcomes],
        )

    def test_empty_seed_list(self):
        with self.assertRaises(ConfigError):
            run_experiment(self.dataset, self.cfg, [], self.options)

    def test_k_sweep_labels_and_limits(self):
        sweep = k_sweep(self.dataset, self.cfg, [2, 4], [0], self.options)
        self.assertEqual([r.setting for r in sweep.reports], ["k=2", "k=4"])
        with self.assertRaises(ConfigError):
            k_sweep(self.dataset, self.cfg, [20], [0], self.options)


def outcome(seed, f1):
    return SeedOutcome(seed, "ok", Metrics(f1, f1, f1, 1, 1, 1, 1))


class SweepReportTest(SimpleTestCase):

    def setUp(self):
        self.sweep = SweepReport("noise", [
            ExperimentReport("toy", "noise=0.01", "", [outcome(0, 0.9), outcome(1, 0.7)]),
            ExperimentReport("toy", "noise=0.05", "", [outcome(0, 0.5), SeedOutcome(1, "failed", error="x")]),
        ])

    def test_mean_and_population_std(self):
        first = self.sweep.reports[0]
        self.assertAlmostEqual(first.mean("f1"), 0.8)
        self.assertAlmostEqual(first.std("f1"), 0.1)

    def test_spread_and_degradation(self):
        self.assertAlmostEqual(self.sweep.spread(), 0.3)
        self.assertAlmostEqual(self.sweep.degradation(), 0.3)
        self.assertEqual(self.sweep.failed, 1)

    def test_table_columns(self):
        table = self.sweep.to_table()
        self.assertEqual(tuple(table.columns), TABLE_COLUMNS)
        self.assertEqual(list(table["setting"]), ["noise=0.01", "noise=0.05"])
        self.assertEqual(list(table["failed"]), [0, 1])

    def test_dict_carries_degradation_for_noise_only(self):
        self.assertIn("degradation", self.sweep.to_dict())
        self.assertNotIn("degradation", SweepReport("k_sweep", self.sweep.reports).to_dict())
