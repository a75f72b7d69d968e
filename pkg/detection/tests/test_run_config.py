import os
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from detection.exceptions import ConfigError
from detection.run_config import load_run_config

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"


class RunConfigTestCase(SimpleTestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name).resolve()

    def tearDown(self):
        self._tmp.cleanup()

    def write_config(self, body, name="run.cfg"):
        path = self.root / name
        path.write_text(body, encoding="utf-8")
        return path

    def touch_cache(self, name="toy.cache"):
        (self.root / name).write_bytes(b"")


class PresetConfigTest(RunConfigTestCase):

    def test_every_shipped_config_loads(self):
        for name, batch_size, embedding in (("kdd99", 1024, 10.0), ("arrhythmia", 128, 0.001), ("satellite", 512, 0.005)):
            self.touch_cache(f"{name}.cache")
            run = load_run_config(PRESET_DIR / f"{name}.cfg", output_root=self.root)
            self.assertEqual(run.train.batch_size, batch_size)
            self.assertEqual(run.train.weights.embedding, embedding)
            self.assertEqual(run.train.learning_rate, 1e-4)
            self.assertEqual(run.seeds, tuple(range(10)))
            self.assertEqual(run.recipe, PRESET_DIR / f"{name}.recipe")
            self.assertEqual(run.cache, self.root / f"{name}.cache")
            self.assertEqual(run.output_dir, self.root / name)

    def test_preset_sizes_expanded_into_effective_config(self):
        self.touch_cache("satellite.cache")
        run = load_run_config(PRESET_DIR / "satellite.cfg", output_root=self.root)
        self.assertEqual(run.model.k, 13)
        self.assertEqual(run.effective["model"]["encoder_dims"], [16])
        self.assertNotIn("preset", run.effective["model"])
        self.assertEqual(run.eval.batch_size, 512)

    def test_kdd99_exports_a_sample(self):
        self.touch_cache("kdd99.cache")
        run = load_run_config(PRESET_DIR / "kdd99.cfg", output_root=self.root)
        self.assertEqual(run.export_sample, 40000)


class RunConfigValidationTest(RunConfigTestCase):

    BASE = (
        "[dataset]\ncache = toy.cache\n\n"
        "[model]\ninput_dim = 6\nencoder_dims = 5, 4\ngraph_dim = 4\nlatent_dim = 2\n"
        "decoder_dims = 4\nestimator_dims = 5\nn_components = 2\nk = 3\n\n"
        "[train]\niterations = 5\nbatch_size = 20\n\n"
        "[output]\ndir = out\n"
    )

    def setUp(self):
        super().setUp()
        self.touch_cache()

    def test_defaults_filled_in(self):
        run = load_run_config(self.write_config(self.BASE))
        self.assertEqual(run.train.weights.energy, 0.1)
        self.assertEqual(run.train.weights.covariance, 0.005)
        self.assertEqual(run.seeds, (0,))
        self.assertIsNone(run.recipe)
        self.assertEqual(run.cache, self.root / "toy.cache")

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(self.write_config(self.BASE + "colour = red\n"))
        self.assertIn("colour", str(ctx.exception))

    def test_unknown_section(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(self.write_config(self.BASE + "\n[plots]\nstyle = dark\n"))
        self.assertIn("plots", ctx.exception.errors)

    def test_missing_required_section(self):
        body = self.BASE.replace("[output]\ndir = out\n", "")
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(self.write_config(body))
        self.assertEqual(ctx.exception.errors["output"], "Missing section")

    def test_overrides_apply_before_validation(self):
        run = load_run_config(
            self.write_config(self.BASE),
            overrides={"train": {"seed": 7, "learning_rate": None}, "model": {"ablate_graph": True}},
        )
        self.assertEqual(run.train.seed, 7)
        self.assertEqual(run.train.learning_rate, 1e-4)
        self.assertTrue(run.model.ablate_graph)
        self.assertEqual(run.effective["train"]["seed"], 7)

    def test_batch_must_exceed_k(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(self.write_config(self.BASE), overrides={"train": {"batch_size": 3}})
        self.assertIn("batch_size", str(ctx.exception))

    def test_encoder_width_must_match_graph_dim(self):
        with self.assertRaises(ConfigError):
            load_run_config(self.write_config(self.BASE.replace("graph_dim = 4", "graph_dim = 3")))

    def test_fingerprint_is_stable_and_config_sensitive(self):
        path = self.write_config(self.BASE)
        first = load_run_config(path).fingerprint
        self.assertEqual(load_run_config(path).fingerprint, first)
        self.assertNotEqual(load_run_config(path, overrides={"train": {"seed": 1}}).fingerprint, first)

    def test_missing_cache(self):
        os.remove(self.root / "toy.cache")
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(self.write_config(self.BASE))
        self.assertIn("run prepare first", str(ctx.exception))
        self.assertIsNotNone(load_run_config(self.root / "run.cfg", require_cache=False))

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_run_config(self.root / "absent.cfg")

    def test_both_thresholds_rejected(self):
        body = self.BASE + "\n[eval]\nthreshold_ratio = 0.2\nthreshold_energy = 4\n"
        with self.assertRaises(ConfigError):
            load_run_config(self.write_config(body))
