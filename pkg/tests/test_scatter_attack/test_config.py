"""
Unit tests for run configuration parsing and seed handling.
"""

from __future__ import annotations

import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from scatter_attack.classifier import TrainConfig
from scatter_attack.config import (
    SEED_ENV_VAR,
    RunConfig,
    build_run_config,
    component_seed,
    load_run_config,
    parse_assignment,
    parse_config_text,
    seed_from_env,
)
from scatter_attack.dataio import SynthConfig
from scatter_attack.errors import ConfigError


CONFIG_TEXT = """
# small run
seed=3
synth.images_per_class=5   # per class
attack.lambda=2.5
attack.theta_max=8, 87, 87, 1, 2, 5, 1
campaign.kinds=otsa,fgsm
campaign.n_values=1,2
campaign.per_class=none
"""


class TestParsing(unittest.TestCase):

    def test_assignment(self):
        self.assertEqual(parse_assignment(" attack.tau = 0.2 "), ("attack.tau", "0.2"))

    def test_assignment_without_equals(self):
        with self.assertRaises(ConfigError):
            parse_assignment("attack.tau")

    def test_comments_and_blank_lines(self):
        flat = parse_config_text(CONFIG_TEXT)
        self.assertEqual(flat["synth.images_per_class"], "5")
        self.assertEqual(len(flat), 7)

    def test_later_lines_win(self):
        self.assertEqual(parse_config_text("seed=1\nseed=2")["seed"], "2")

    def test_error_names_the_line(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config_text("seed=1\nbroken", "run.cfg")
        self.assertIn("run.cfg:2", str(ctx.exception))


class TestBuild(unittest.TestCase):

    def test_defaults(self):
        config = build_run_config({})
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.attack_config().lam, 10.0)
        self.assertEqual(config.attack_config().max_iters, 200)
        self.assertEqual(config.campaign_config().n_values, (1, 2, 3))

    def test_defaults_match_components(self):
        config = build_run_config({})
        train, synth = config.train_config(), config.synth_config()
        defaults = TrainConfig()
        self.assertEqual(train.epochs, defaults.epochs)
        self.assertEqual(train.learning_rate, defaults.learning_rate)
        self.assertEqual(train.batch_size, defaults.batch_size)
        self.assertEqual(synth.images_per_class, SynthConfig().images_per_class)
        self.assertEqual(synth.max_shift, SynthConfig().max_shift)
        self.assertFalse(config.imaging_params().length_in_pixels)

    def test_values_from_text(self):
        config = build_run_config(parse_config_text(CONFIG_TEXT))
        self.assertEqual(config.synth_config().images_per_class, 5)
        attack = config.attack_config()
        self.assertEqual(attack.lam, 2.5)
        self.assertEqual(attack.theta_max, (8.0, 87.0, 87.0, 1.0, 2.0, 5.0, 1.0))
        campaign = config.campaign_config()
        self.assertEqual(campaign.kinds, ("otsa", "fgsm"))
        self.assertEqual(campaign.n_values, (1, 2))
        self.assertIsNone(campaign.per_class)

    def test_field_name_also_accepted(self):
        self.assertEqual(build_run_config({"attack.lam": "4"}).attack_config().lam, 4.0)

    def test_unknown_keys(self):
        for key in ("bogus", "attack.bogus", "video.fps", "attack.tau.x"):
            with self.assertRaises(ConfigError, msg=key):
                build_run_config({key: "1"})

    def test_out_of_range_values(self):
        for key, value in (("attack.tau", "1.5"), ("jobs", "0"), ("synth.speckle", "2"),
                           ("campaign.n_values", "0"), ("attack.max_iters", "ten"), ("seed", "-1")):
            with self.assertRaises(ConfigError, msg=key):
                build_run_config({key: value})

    def test_component_invariants_become_config_errors(self):
        with self.assertRaises(ConfigError):
            build_run_config({"imaging.fc": "1e8"})
        with self.assertRaises(ConfigError):
            build_run_config({"attack.theta_min": "0,0,0"})
        with self.assertRaises(ConfigError):
            build_run_config({"synth.num_classes": "9"})

    def test_max_scatterers_follows_campaign(self):
        config = build_run_config({"campaign.n_values": "1,4"})
        self.assertEqual(config.attack_config().max_scatterers, 4)

    def test_component_seeds_differ(self):
        config = build_run_config({"seed": "7"})
        seeds = {
            config.synth_config().seed,
            config.train_config().seed,
            config.attack_config().seed,
            config.campaign_config().sample_seed,
        }
        self.assertEqual(len(seeds), 4)

    def test_config_is_frozen(self):
        config = RunConfig()
        with self.assertRaises(Exception):
            config.seed = 3


class TestSeeds(unittest.TestCase):

    def test_component_seed_is_stable(self):
        self.assertEqual(component_seed(5, "attack"), component_seed(5, "attack"))
        self.assertNotEqual(component_seed(5, "attack"), component_seed(6, "attack"))
        self.assertNotEqual(component_seed(5, "attack"), component_seed(5, "train"))
        self.assertIsInstance(component_seed(5, "split"), int)

    @mock.patch("scatter_attack.config.load_dotenv")
    def test_env_seed(self, _):
        with mock.patch.dict(os.environ, {SEED_ENV_VAR: "17"}):
            self.assertEqual(seed_from_env(), 17)
            self.assertEqual(load_run_config().seed, 17)
            self.assertEqual(load_run_config(seed=2).seed, 2)

    @mock.patch("scatter_attack.config.load_dotenv")
    def test_bad_env_seed(self, _):
        with mock.patch.dict(os.environ, {SEED_ENV_VAR: "abc"}):
            with self.assertRaises(ConfigError):
                seed_from_env()

    @mock.patch("scatter_attack.config.load_dotenv")
    def test_no_env_seed(self, _):
        with mock.patch.dict(os.environ):
            os.environ.pop(SEED_ENV_VAR, None)
            self.assertIsNone(seed_from_env())


class TestLoadRunConfig(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "run.cfg"
        self.path.write_text("seed=3\nattack.tau=0.2\noutput_dir=from-file\n")

    def tearDown(self):
        self.tmp.cleanup()

    def test_file_values(self):
        config = load_run_config(self.path)
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.attack.tau, 0.2)
        self.assertEqual(config.output_dir, "from-file")

    def test_precedence(self):
        config = load_run_config(
            self.path, overrides=["attack.tau=0.3", "seed=4"], seed=5, output_dir="cli"
        )
        self.assertEqual(config.attack.tau, 0.3)
        self.assertEqual(config.seed, 5)
        self.assertEqual(config.output_dir, "cli")

    def test_override_beats_file(self):
        self.assertEqual(load_run_config(self.path, overrides=["seed=4"]).seed, 4)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_run_config(Path(self.tmp.name) / "missing.cfg")


if __name__ == "__main__":
    unittest.main()
