"""
End-to-end tests for the command-line interface.

Every command runs in-process through :func:`scatter_attack.cli.main`
with a tiny synthetic dataset.
"""

from __future__ import annotations

import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np

from scatter_attack.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main, parse_params
from scatter_attack.errors import ConfigError


TINY = [
    "--set", "synth.num_classes=2",
    "--set", "synth.images_per_class=4",
    "--set", "train.epochs=1",
    "--set", "attack.max_iters=1",
    "--set", "campaign.kinds=fgsm",
    "--seed", "1",
]


def run_cli(*argv: str):
    stdout, stderr = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
        code = main(list(argv))
    return code, stdout.getvalue(), stderr.getvalue()


class TestParseParams(unittest.TestCase):

    def test_pads_missing_parameters(self):
        theta = parse_params("2,10,20")
        self.assertEqual(theta.as_array().tolist(), [2, 10, 20, 0, 0, 0, 0])

    def test_rejects_bad_input(self):
        for text in ("1,2", "1,2,3,4,5,6,7,8", "a,b,c"):
            with self.assertRaises(ConfigError, msg=text):
                parse_params(text)


class TestRender(unittest.TestCase):

    def test_peak_location(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, out, _ = run_cli("render", "--params", "1,44,44,0,0,0,0", "--out", tmp)
            self.assertEqual(code, EXIT_OK)
            self.assertIn("Peak 1.000000 at (44, 44)", out)
            self.assertTrue((Path(tmp) / "scatterers.pgm").exists())

    def test_without_params(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _, err = run_cli("render", "--out", tmp)
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("Error:", err)

    def test_unwritable_output(self):
        with tempfile.TemporaryDirectory() as tmp:
            blocker = Path(tmp) / "blocker"
            blocker.write_text("")
            code, _, _ = run_cli("render", "--params", "1,44,44", "--out", str(blocker / "sub"))
        self.assertEqual(code, EXIT_IO)

    def test_non_finite_render(self):
        with tempfile.TemporaryDirectory() as tmp:
            with mock.patch("scatter_attack.cli.render_image", return_value=np.full((4, 4), np.nan)):
                code, _, _ = run_cli("render", "--params", "1,44,44", "--out", tmp)
        self.assertEqual(code, EXIT_NUMERICAL)


class TestUsageErrors(unittest.TestCase):

    def test_missing_manifest(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _, err = run_cli("train", "--out", tmp)
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("manifest.json", err)

    def test_unknown_config_key(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _, _ = run_cli("render", "--params", "1,44,44", "--out", tmp, "--set", "attack.bogus=1")
        self.assertEqual(code, EXIT_USAGE)

    def test_missing_command(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as ctx:
                main([])
        self.assertEqual(ctx.exception.code, 2)

    def test_missing_report_summary(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _, _ = run_cli("report", "--out", tmp)
        self.assertEqual(code, EXIT_USAGE)


class TestPipeline(unittest.TestCase):
    """gen-data, train, attack, campaign and report on one output directory."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.out = Path(cls.tmp.name)
        cls.args = TINY + ["--out", str(cls.out)]
        cls.gen = run_cli("gen-data", *cls.args)
        cls.train = run_cli("train", *cls.args)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_gen_data(self):
        code, out, _ = self.gen
        self.assertEqual(code, EXIT_OK)
        self.assertIn("Wrote 8 samples", out)
        manifest = json.loads((self.out / "data" / "manifest.json").read_text())
        self.assertEqual(len(manifest), 8)

    def test_train(self):
        code, out, _ = self.train
        self.assertEqual(code, EXIT_OK)
        self.assertIn("Test accuracy:", out)
        self.assertTrue((self.out / "model.otsaw").exists())

    def test_fgsm_with_zero_epsilon(self):
        code, out, _ = run_cli(
            "attack", *self.args, "--kind", "fgsm", "--image", "synth-0000", "--epsilon", "0"
        )
        self.assertEqual(code, EXIT_OK)
        summary = json.loads((self.out / "attacks" / "synth-0000-fgsm.json").read_text())
        self.assertEqual(summary["epsilon"], 0.0)
        self.assertIn("fgsm on synth-0000", out)

    def test_scatterer_attack(self):
        code, _, _ = run_cli("attack", *self.args, "--kind", "otsa", "--image", "synth-0001")
        self.assertEqual(code, EXIT_OK)
        result = json.loads((self.out / "attacks" / "synth-0001-otsa.json").read_text())
        self.assertEqual(result["kind"], "otsa")
        self.assertLessEqual(result["iterations"], 1)
        self.assertTrue((self.out / "attacks" / "synth-0001-otsa.pgm").exists())

    def test_unknown_image(self):
        code, _, _ = run_cli("attack", *self.args, "--image", "nope")
        self.assertEqual(code, EXIT_USAGE)

    def test_campaign_and_report(self):
        code, out, _ = run_cli("campaign", *self.args)
        self.assertEqual(code, EXIT_OK)
        report_dir = self.out / "report"
        csv_bytes = (report_dir / "outcomes.csv").read_bytes()
        svg_bytes = (report_dir / "success_rates.svg").read_bytes()
        self.assertTrue(csv_bytes.startswith(b"id,attack,pre_pred,post_pred,success,n_kept,iters\r\n"))

        code, _, _ = run_cli("report", *self.args)
        self.assertEqual(code, EXIT_OK)
        self.assertEqual((report_dir / "outcomes.csv").read_bytes(), csv_bytes)
        self.assertEqual((report_dir / "success_rates.svg").read_bytes(), svg_bytes)

    def test_compare_writes_panel(self):
        code, out, _ = run_cli("compare", *self.args, "--image", "synth-0001")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("otsa on synth-0001", out)
        self.assertIn("baseline on synth-0001", out)
        attacks = self.out / "attacks"
        self.assertIn(b"<svg", (attacks / "synth-0001-compare.svg").read_bytes())
        self.assertEqual(json.loads((attacks / "synth-0001-baseline.json").read_text())["kind"], "baseline")

    def test_repeated_campaigns_write_identical_files(self):
        emitted = []
        for _ in range(2):
            with tempfile.TemporaryDirectory() as tmp:
                code, _, _ = run_cli(
                    "campaign", *TINY,
                    "--set", "campaign.kinds=otsa,baseline,fgsm",
                    "--data", str(self.out / "data" / "manifest.json"),
                    "--model", str(self.out / "model.otsaw"),
                    "--out", tmp,
                )
                self.assertEqual(code, EXIT_OK)
                report_dir = Path(tmp) / "report"
                names = ("outcomes.csv", "summary.json", "success_rates.svg")
                emitted.append([(report_dir / name).read_bytes() for name in names])
        self.assertEqual(emitted[0], emitted[1])


if __name__ == "__main__":
    unittest.main()
