"""Tests for run configs and the key = value reader."""

import pathlib
import tempfile
from unittest import TestCase

from misf_inpaint.lib.config import RunConfig, parse_override, resolve_run_config
from misf_inpaint.lib.errors import ConfigError
from misf_inpaint.lib.kvfile import parse_bool, parse_text
from misf_inpaint.lib.networks import Variant


class TestKvFile(TestCase):
    """Unit test cases for parse_text."""

    def test_values_and_sections(self):
        parsed = parse_text("# header\nseed = 3\n\n[train]\na.png\nb = c\n")
        self.assertEqual(parsed.values, {"seed": "3"})
        self.assertEqual(parsed.sections, {"train": ["a.png", "b = c"]})

    def test_duplicate_key(self):
        with self.assertRaises(ConfigError) as caught:
            parse_text("seed = 1\nseed = 2\n")
        self.assertEqual(caught.exception.key, "seed")

    def test_bad_line(self):
        with self.assertRaises(ConfigError):
            parse_text("just words\n")

    def test_empty_section(self):
        with self.assertRaises(ConfigError):
            parse_text("[ ]\n")

    def test_parse_bool(self):
        self.assertTrue(parse_bool("k", "Yes"))
        self.assertFalse(parse_bool("k", "0"))
        with self.assertRaises(ConfigError):
            parse_bool("k", "maybe")


class TestRunConfig(TestCase):
    """Unit test cases for RunConfig resolution."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.path = pathlib.Path(self._tmp.name) / "run.cfg"
        self.path.write_text("seed = 5\nlr = 0.001\nvariant = sem-filter\n", encoding="utf-8")

    def tearDown(self):
        self._tmp.cleanup()

    def test_defaults(self):
        config = resolve_run_config(env={})
        self.assertEqual(config, RunConfig())
        self.assertEqual(config.effective_batch_size, 4)
        self.assertIs(config.model_config().variant, Variant.MISF)

    def test_precedence(self):
        config = resolve_run_config(
            self.path,
            overrides=["seed=6", "max_iters = 9"],
            flags={"seed": 7, "variant": None},
            env={},
        )
        self.assertEqual(config.lr, 0.001)
        self.assertEqual(config.variant, "sem-filter")
        self.assertEqual(config.max_iters, 9)
        self.assertEqual(config.seed, 7)

    def test_env_seed_wins(self):
        config = resolve_run_config(self.path, flags={"seed": 7}, env={"MISF_SEED": "11"})
        self.assertEqual(config.seed, 11)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as caught:
            resolve_run_config(overrides=["learning_rate=1"], env={})
        self.assertEqual(caught.exception.key, "learning_rate")

    def test_bad_value(self):
        with self.assertRaises(ConfigError) as caught:
            RunConfig.from_mapping({"max_iters": "ten"})
        self.assertEqual(caught.exception.key, "max_iters")
        with self.assertRaises(ConfigError) as caught:
            RunConfig.from_mapping({"variant": "unet"})
        self.assertEqual(caught.exception.key, "variant")
        with self.assertRaises(ConfigError):
            RunConfig.from_mapping({"gan_weight": "-1"})

    def test_sections_rejected(self):
        self.path.write_text("seed = 1\n[extra]\nx\n", encoding="utf-8")
        with self.assertRaises(ConfigError):
            resolve_run_config(self.path, env={})

    def test_parse_override(self):
        self.assertEqual(parse_override(" lr = 0.5 "), ("lr", "0.5"))
        with self.assertRaises(ConfigError):
            parse_override("lr")

    def test_hash(self):
        config = RunConfig()
        self.assertEqual(len(config.config_hash()), 12)
        self.assertEqual(config.config_hash(), RunConfig().config_hash())
        self.assertNotEqual(config.config_hash(), RunConfig(seed=1).config_hash())

    def test_text_round_trip(self):
        config = RunConfig(seed=9, masked_l1=True, variant="img-filter")
        parsed = parse_text(config.to_text())
        self.assertEqual(RunConfig.from_mapping(parsed.values), config)

    def test_derived_configs(self):
        config = RunConfig(preset="full-256", gan_weight=0.0)
        self.assertEqual(config.train_config().batch_size, 16)
        self.assertEqual(config.loss_weights().gan, 0.0)
        self.assertEqual(config.model_config().preset.name, "full-256")
