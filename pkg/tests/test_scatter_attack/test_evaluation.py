"""
Unit tests for the positioning filter, success rates and campaigns.

Campaigns use tiny linear models and a handful of ascent steps. The
comparison on a trained network over the default synthetic data is gated
behind ``OTSA_SLOW_TESTS=1``.
"""

from __future__ import annotations

import os
import unittest

import numpy as np

from scatter_attack.ascm import ImagingParams, ScattererParams, ScattererSet, render_window
from scatter_attack.attack import AttackConfig, AttackResult
from scatter_attack.classifier import ConvClassifier, LinearSoftmaxModel, ModelSpec, train
from scatter_attack.dataio import LabeledSample, SynthConfig, generate_synthetic_dataset, prepare_split
from scatter_attack.errors import ParameterError, UndefinedRateError
from scatter_attack.evaluation import (
    REFERENCE_CLASSIFIERS,
    REFERENCE_SUCCESS_RATES,
    CampaignConfig,
    ImageOutcome,
    enforce_positioning_filter,
    filter_on_target,
    prefilter_correct,
    run_campaign,
    sample_balanced,
    success_rate,
)
from scatter_attack.positioning import TargetMask


SLOW = os.environ.get("OTSA_SLOW_TESTS") == "1"

MASK = TargetMask(frozenset((x, y) for x in range(35, 45) for y in range(35, 45)), (88, 88))


def _region_model(bias: float = 0.5) -> LinearSoftmaxModel:
    """Class 1 wins once the brightness summed over ``MASK`` exceeds ``bias``."""
    w = np.zeros((2, 88, 88))
    w[0, 35:45, 35:45] = -0.01
    w[1, 35:45, 35:45] = 0.01
    return LinearSoftmaxModel(w, np.array([bias, -bias]))


def _samples(count: int = 4):
    samples = []
    for i in range(count):
        label = i % 2
        image = np.full((88, 88), 0.05)
        if label:
            image[35:45, 35:45] = 1.0
        samples.append(LabeledSample(image, MASK, label, f"s-{i:02d}"))
    return samples


def _result(thetas: ScattererSet, label: int = 0) -> AttackResult:
    model = _region_model()
    image = np.zeros((88, 88))
    return AttackResult(
        kind="otsa",
        label=label,
        thetas=thetas,
        adversarial=image,
        prediction=model.predict(image),
        iterations=7,
        on_target=(),
    )


def _outcome(success: bool) -> ImageOutcome:
    return ImageOutcome("a", "otsa-n1", 0, 1 if success else 0, success, 1, 3)


class TestReferenceRates(unittest.TestCase):

    def test_table_shape(self):
        self.assertEqual(sorted(REFERENCE_SUCCESS_RATES), [1, 2, 3])
        for table in REFERENCE_SUCCESS_RATES.values():
            self.assertEqual(tuple(table), REFERENCE_CLASSIFIERS)

    def test_otsa_beats_baseline(self):
        for table in REFERENCE_SUCCESS_RATES.values():
            for baseline, otsa in table.values():
                self.assertGreater(otsa, baseline)


class TestPrefilter(unittest.TestCase):

    def test_perfect_model_keeps_everything(self):
        samples = _samples()
        self.assertEqual(prefilter_correct(_region_model(), samples), samples)

    def test_constant_model_keeps_one_class(self):
        constant = LinearSoftmaxModel(np.zeros((2, 88, 88)), np.array([1.0, 0.0]))
        kept = prefilter_correct(constant, _samples())
        self.assertEqual([s.label for s in kept], [0, 0])


class TestSampleBalanced(unittest.TestCase):

    def test_caps_every_class(self):
        samples = _samples(9)
        chosen = sample_balanced(samples, 2, np.random.default_rng(0))
        labels = [s.label for s in chosen]
        self.assertEqual(labels.count(0), 2)
        self.assertEqual(labels.count(1), 2)
        ids = [s.id for s in chosen]
        self.assertEqual(ids, sorted(ids))

    def test_none_keeps_all(self):
        samples = _samples(5)
        self.assertEqual(sample_balanced(samples, None, np.random.default_rng(0)), samples)


class TestPositioningFilter(unittest.TestCase):

    def setUp(self):
        self.xi = ImagingParams()
        self.image = np.zeros((88, 88))

    def test_all_on_target(self):
        thetas = ScattererSet((ScattererParams(A=5, x=38, y=40), ScattererParams(A=5, x=41.4, y=36)))
        survivors, adversarial = filter_on_target(_result(thetas), self.image, MASK, self.xi)
        self.assertEqual(survivors, thetas)
        np.testing.assert_allclose(adversarial, render_window(thetas, self.xi, (88, 88)), atol=1e-12)

    def test_all_off_target_is_failure(self):
        thetas = ScattererSet((ScattererParams(A=10, x=10, y=10),))
        outcome = enforce_positioning_filter(
            _result(thetas), self.image, 0, MASK, _region_model(), self.xi, "img", "otsa-n1"
        )
        self.assertEqual(outcome.n_kept, 0)
        self.assertFalse(outcome.success)
        self.assertEqual(outcome.post_pred, outcome.pre_pred)
        self.assertEqual(outcome.iters, 7)
        self.assertEqual(outcome.attack, "otsa-n1")

    def test_off_target_scatterers_are_dropped(self):
        on_a = ScattererParams(A=10, x=40, y=40)
        off = ScattererParams(A=10, x=5, y=80)
        on_b = ScattererParams(A=10, x=36, y=43)
        result = _result(ScattererSet((on_a, off, on_b)))
        survivors, adversarial = filter_on_target(result, self.image, MASK, self.xi)
        self.assertEqual(survivors.scatterers, (on_a, on_b))
        np.testing.assert_allclose(
            adversarial, render_window(survivors, self.xi, (88, 88)), atol=1e-12
        )
        outcome = enforce_positioning_filter(
            result, self.image, 0, MASK, _region_model(bias=0.05), self.xi
        )
        self.assertEqual(outcome.n_kept, 2)
        self.assertTrue(outcome.success)
        self.assertEqual(outcome.post_pred, 1)
        self.assertEqual(outcome.attack, "otsa")


class TestSuccessRate(unittest.TestCase):

    def test_fraction(self):
        outcomes = [_outcome(True), _outcome(True), _outcome(False), _outcome(True)]
        self.assertEqual(success_rate(outcomes), 0.75)

    def test_empty_is_undefined(self):
        with self.assertRaises(UndefinedRateError):
            success_rate([])


class TestCampaignConfig(unittest.TestCase):

    def test_labels(self):
        config = CampaignConfig(kinds=("otsa", "baseline", "fgsm"), n_values=(1, 2))
        self.assertEqual(
            config.attack_labels(), ["otsa-n1", "baseline-n1", "otsa-n2", "baseline-n2", "fgsm"]
        )

    def test_invalid(self):
        for kwargs in ({"kinds": ("pgd",)}, {"kinds": ()}, {"n_values": (0,)},
                       {"seeds": ()}, {"per_class": 0}, {"fgsm_epsilon": -1.0}):
            with self.assertRaises(ParameterError, msg=str(kwargs)):
                CampaignConfig(**kwargs)


class TestRunCampaign(unittest.TestCase):

    def setUp(self):
        self.campaign = CampaignConfig(
            kinds=("otsa", "baseline", "fgsm"), n_values=(1,), seeds=(0, 1), fgsm_epsilon=0.01
        )
        self.attack = AttackConfig(max_iters=3)

    def test_empty_prefilter(self):
        wrong = LinearSoftmaxModel(np.zeros((3, 88, 88)), np.array([0.0, 0.0, 1.0]))
        report = run_campaign(_samples(), wrong, self.campaign, self.attack)
        self.assertTrue(report.empty)
        self.assertEqual(report.rates, {})
        self.assertEqual(report.sample_size, 0)

    def test_report_contents(self):
        report = run_campaign(_samples(), _region_model(), self.campaign, self.attack)
        self.assertEqual(report.sample_size, 8)
        self.assertEqual(list(report.rates), ["otsa-n1", "baseline-n1", "fgsm"])
        self.assertEqual(len(report.outcomes), 24)
        self.assertEqual(set(report.on_target_fraction), {"otsa-n1", "baseline-n1"})
        for outcome in report.outcomes:
            self.assertLessEqual(outcome.iters, 3)
            if outcome.attack == "fgsm":
                self.assertEqual(outcome.n_kept, 0)
            if not outcome.n_kept and outcome.attack != "fgsm":
                self.assertFalse(outcome.success)
        self.assertEqual(report.outcomes[0].id, "s-00/s0")
        self.assertEqual(report.to_dict()["config"]["attack"]["max_iters"], 3)

    def test_deterministic_and_independent_of_jobs(self):
        serial = run_campaign(_samples(), _region_model(), self.campaign, self.attack, jobs=1)
        again = run_campaign(_samples(), _region_model(), self.campaign, self.attack, jobs=1)
        threaded = run_campaign(_samples(), _region_model(), self.campaign, self.attack, jobs=3)
        self.assertEqual(serial.outcomes, again.outcomes)
        self.assertEqual(serial.outcomes, threaded.outcomes)
        self.assertEqual(serial.rates, threaded.rates)

    def test_per_class_cap(self):
        campaign = CampaignConfig(kinds=("fgsm",), n_values=(1,), per_class=1)
        report = run_campaign(_samples(6), _region_model(), campaign, self.attack)
        self.assertEqual(report.sample_size, 2)

    def test_invalid_jobs(self):
        with self.assertRaises(ParameterError):
            run_campaign(_samples(), _region_model(), self.campaign, self.attack, jobs=0)

    def test_on_result_sees_every_scatterer_run(self):
        seen = []
        report = run_campaign(
            _samples(), _region_model(), self.campaign, self.attack,
            on_result=lambda sample, outcome, result: seen.append((sample.id, outcome, result)),
        )
        scatterer_outcomes = [o for o in report.outcomes if o.attack != "fgsm"]
        self.assertEqual([o for _, o, _ in seen], scatterer_outcomes)
        for sample_id, outcome, result in seen:
            self.assertTrue(outcome.id.startswith(sample_id))
            self.assertEqual(result.kind, outcome.attack.split("-")[0])
            self.assertEqual(result.iterations, outcome.iters)


class TestSyntheticCampaign(unittest.TestCase):
    """Default pipeline: synthetic data, trained network, default attack settings."""

    @unittest.skipUnless(SLOW, "set OTSA_SLOW_TESTS=1 to run")
    def test_positioning_term_keeps_scatterers_on_target(self):
        train_set, test_set = prepare_split(generate_synthetic_dataset(SynthConfig()), seed=0)
        weights = train(np.stack([s.image for s in train_set]), [s.label for s in train_set], ModelSpec())
        model = ConvClassifier(weights)
        attack = AttackConfig()
        finished = []

        def check_stop_rule(sample, outcome, result):
            if result.kind == "otsa" and result.iterations < attack.max_iters:
                finished.append(outcome.id)
                self.assertLess(result.confidence, attack.tau, outcome.id)
                self.assertTrue(all(result.on_target), outcome.id)

        campaign = CampaignConfig(kinds=("otsa", "baseline"), n_values=(1, 2, 3), per_class=13)
        report = run_campaign(
            test_set, model, campaign, attack, xi=ImagingParams(length_in_pixels=True),
            jobs=os.cpu_count() or 1, on_result=check_stop_rule,
        )
        self.assertGreaterEqual(report.sample_size, 50)
        self.assertTrue(finished)
        for n in (1, 2, 3):
            self.assertGreaterEqual(report.rates[f"otsa-n{n}"], report.rates[f"baseline-n{n}"])
            self.assertGreaterEqual(report.on_target_fraction[f"otsa-n{n}"], 0.9)
        otsa = np.mean([report.on_target_fraction[f"otsa-n{n}"] for n in (1, 2, 3)])
        baseline = np.mean([report.on_target_fraction[f"baseline-n{n}"] for n in (1, 2, 3)])
        self.assertGreater(otsa, baseline)


if __name__ == "__main__":
    unittest.main()
