"""
Attack campaigns.

A campaign keeps the samples the model already classifies correctly,
optionally draws a class-balanced subset, runs every configured attack on
every sample for every seed, drops scatterers that ended off the target
and judges success on the re-rendered image.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .ascm import ImagingParams, ScattererSet, render_window
from .attack import (
    ATTACK_KINDS,
    KIND_BASELINE,
    KIND_FGSM,
    KIND_OTSA,
    AttackConfig,
    AttackResult,
    fgsm,
    run_baseline,
    run_otsa,
)
from .classifier import Classifier
from .dataio import LabeledSample
from .errors import ParameterError, UndefinedRateError
from .positioning import TargetMask, is_on_target


logger = logging.getLogger(__name__)

# Published white-box success rates (percent) on MSTAR, keyed by scatterer
# count, then classifier, as (baseline, otsa). For reference only.
REFERENCE_CLASSIFIERS = (
    "GNN",
    "VGG11",
    "AlexNet",
    "SqueezeNet",
    "DenseNet121",
    "MobileNetv2",
    "ResNet50",
    "ShuffleNetv2",
    "AConvNet",
)
_REFERENCE_BASELINE = {
    1: (21, 51, 77, 59, 57, 23, 29, 39, 47),
    2: (25, 60, 81, 66, 61, 39, 46, 46, 62),
    3: (40, 73, 88, 74, 69, 49, 52, 53, 67),
}
_REFERENCE_OTSA = {
    1: (50, 76, 89, 74, 76, 51, 59, 58, 68),
    2: (73, 82, 96, 87, 86, 72, 82, 72, 86),
    3: (78, 91, 100, 92, 95, 77, 84, 81, 89),
}
REFERENCE_SUCCESS_RATES: Dict[int, Dict[str, Tuple[int, int]]] = {
    n: dict(zip(REFERENCE_CLASSIFIERS, zip(_REFERENCE_BASELINE[n], _REFERENCE_OTSA[n])))
    for n in (1, 2, 3)
}


@dataclass(frozen=True)
class ImageOutcome:
    """One attacked image; the fields are the columns of the outcome CSV."""

    id: str
    attack: str
    pre_pred: int
    post_pred: int
    success: bool
    n_kept: int
    iters: int


ResultCallback = Callable[[LabeledSample, ImageOutcome, AttackResult], None]


@dataclass(frozen=True)
class CampaignConfig:
    """Which attacks to run and on how many samples.

    Parameters
    ----------
    kinds:
        Subset of ``("otsa", "baseline", "fgsm")``.
    n_values:
        Scatterer counts tried for the scatterer attacks.
    seeds:
        One attack run per sample per seed.
    per_class:
        Draw at most this many prefiltered samples per class; ``None`` keeps all.
    """

    kinds: Tuple[str, ...] = (KIND_OTSA, KIND_BASELINE)
    n_values: Tuple[int, ...] = (1, 2, 3)
    seeds: Tuple[int, ...] = (0,)
    per_class: Optional[int] = None
    fgsm_epsilon: float = 0.05
    sample_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("kinds", "n_values", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        unknown = set(self.kinds) - set(ATTACK_KINDS)
        if unknown:
            raise ParameterError(f"unknown attack kinds: {sorted(unknown)}")
        if not self.kinds:
            raise ParameterError("at least one attack kind is required")
        if not self.n_values or min(self.n_values) < 1:
            raise ParameterError("n_values must be a nonempty list of positive counts")
        if not self.seeds:
            raise ParameterError("at least one seed is required")
        if self.per_class is not None and self.per_class < 1:
            raise ParameterError("per_class must be positive")
        if self.fgsm_epsilon < 0:
            raise ParameterError("fgsm_epsilon must be non-negative")

    def attack_labels(self) -> List[str]:
        """Report labels in run order, e.g. ``otsa-n1``, ``baseline-n1``, ``fgsm``."""
        labels = []
        for n in self.n_values:
            labels.extend(f"{k}-n{n}" for k in self.kinds if k != KIND_FGSM)
        if KIND_FGSM in self.kinds:
            labels.append(KIND_FGSM)
        return labels


@dataclass
class CampaignReport:
    """Aggregated campaign results, keyed by attack label."""

    rates: Dict[str, float]
    on_target_fraction: Dict[str, float]
    sample_size: int
    config: Dict[str, Any]
    outcomes: List[ImageOutcome] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.outcomes

    def to_dict(self) -> Dict[str, Any]:
        return {
            "empty": self.empty,
            "sample_size": self.sample_size,
            "rates": dict(self.rates),
            "on_target_fraction": dict(self.on_target_fraction),
            "config": self.config,
            "outcomes": [asdict(o) for o in self.outcomes],
        }


# ---------------------------------------------------------------------------
# Filters and rates
# ---------------------------------------------------------------------------


def prefilter_correct(model: Classifier, samples: Iterable[LabeledSample]) -> List[LabeledSample]:
    """Keep the samples *model* classifies correctly before any attack."""
    return [s for s in samples if model.predict(s.image).label == s.label]


def sample_balanced(
    samples: Sequence[LabeledSample], per_class: Optional[int], rng: np.random.Generator
) -> List[LabeledSample]:
    """Draw up to *per_class* samples of every label, keeping input order."""
    if per_class is None:
        return list(samples)
    by_label: Dict[int, List[int]] = {}
    for index, sample in enumerate(samples):
        by_label.setdefault(sample.label, []).append(index)
    chosen: List[int] = []
    for label in sorted(by_label):
        indices = by_label[label]
        take = min(per_class, len(indices))
        chosen.extend(rng.choice(indices, size=take, replace=False).tolist())
    return [samples[i] for i in sorted(chosen)]


def filter_on_target(
    result: AttackResult, image: np.ndarray, mask: TargetMask, xi: Optional[ImagingParams] = None
) -> Tuple[ScattererSet, np.ndarray]:
    """Scatterers of *result* that are on the target, and ``X`` plus their render."""
    xi = xi or ImagingParams()
    image = np.asarray(image, dtype=np.float64)
    kept = [i for i, t in enumerate(result.thetas) if is_on_target(t.x, t.y, mask)]
    survivors = result.thetas.subset(kept)
    if not kept:
        return survivors, image.copy()
    return survivors, image + render_window(survivors, xi, image.shape)


def enforce_positioning_filter(
    result: AttackResult,
    image: np.ndarray,
    label: int,
    mask: TargetMask,
    model: Classifier,
    xi: Optional[ImagingParams] = None,
    sample_id: str = "",
    attack: Optional[str] = None,
) -> ImageOutcome:
    """Judge *result* after dropping its off-target scatterers."""
    survivors, adversarial = filter_on_target(result, image, mask, xi)
    pre = model.predict(np.asarray(image, dtype=np.float64)).label
    post = model.predict(adversarial).label
    return ImageOutcome(
        id=sample_id,
        attack=attack or result.kind,
        pre_pred=pre,
        post_pred=post,
        success=bool(len(survivors) and post != label),
        n_kept=len(survivors),
        iters=result.iterations,
    )


def success_rate(outcomes: Sequence[ImageOutcome]) -> float:
    """Fraction of *outcomes* whose attack succeeded."""
    if not outcomes:
        raise UndefinedRateError("success rate of an empty outcome list is undefined")
    return sum(1 for o in outcomes if o.success) / len(outcomes)


# ---------------------------------------------------------------------------
# Campaign
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Job:
    sample: LabeledSample
    label: str
    kind: str
    n: int
    seed: int


def _attack_seed(seed: int, sample_index: int, n: int) -> int:
    return int(np.random.SeedSequence([seed, sample_index, n]).generate_state(1)[0])


def _run_job(
    job: _Job,
    index: int,
    model: Classifier,
    attack_config: AttackConfig,
    campaign: CampaignConfig,
    xi: ImagingParams,
) -> Tuple[ImageOutcome, Optional[AttackResult]]:
    sample = job.sample
    outcome_id = f"{sample.id}/s{job.seed}"
    if job.kind == KIND_FGSM:
        pre = model.predict(sample.image).label
        adversarial = fgsm(sample.image, sample.label, model, campaign.fgsm_epsilon)
        post = model.predict(adversarial).label
        outcome = ImageOutcome(outcome_id, job.label, pre, post, post != sample.label, 0, 1)
        return outcome, None

    config = replace(
        attack_config,
        n_scatterers=job.n,
        max_scatterers=max(attack_config.max_scatterers, job.n),
        seed=_attack_seed(job.seed, index, job.n),
    )
    runner = run_otsa if job.kind == KIND_OTSA else run_baseline
    result = runner(sample.image, sample.label, sample.mask, model, config, xi)
    outcome = enforce_positioning_filter(
        result, sample.image, sample.label, sample.mask, model, xi, outcome_id, job.label
    )
    return outcome, result


def run_campaign(
    samples: Sequence[LabeledSample],
    model: Classifier,
    campaign: Optional[CampaignConfig] = None,
    attack_config: Optional[AttackConfig] = None,
    xi: Optional[ImagingParams] = None,
    jobs: int = 1,
    on_result: Optional[ResultCallback] = None,
) -> CampaignReport:
    """Attack every prefiltered sample with every configured attack.

    Outcomes are ordered by attack label, then sample id, then seed, so the
    report does not depend on *jobs*. *on_result* receives every scatterer
    attack's unfiltered result, in outcome order, on the calling thread.
    """
    campaign = campaign or CampaignConfig()
    attack_config = attack_config or AttackConfig()
    xi = xi or ImagingParams()
    if jobs < 1:
        raise ParameterError("jobs must be at least 1")

    correct = prefilter_correct(model, samples)
    chosen = sample_balanced(correct, campaign.per_class, np.random.default_rng(campaign.sample_seed))
    chosen = sorted(chosen, key=lambda s: s.id)
    logger.info(
        "campaign: %d of %d samples classified correctly, %d attacked",
        len(correct),
        len(samples),
        len(chosen),
    )
    snapshot = {"campaign": asdict(campaign), "attack": asdict(attack_config), "imaging": _imaging_dict(xi)}
    if not chosen:
        logger.warning("campaign is empty: no sample survived the prefilter")
        return CampaignReport({}, {}, 0, snapshot, [])

    tasks: List[Tuple[_Job, int]] = []
    for n in campaign.n_values:
        for kind in (k for k in campaign.kinds if k != KIND_FGSM):
            tasks.extend(
                (_Job(s, f"{kind}-n{n}", kind, n, seed), i)
                for i, s in enumerate(chosen)
                for seed in campaign.seeds
            )
    if KIND_FGSM in campaign.kinds:
        tasks.extend(
            (_Job(s, KIND_FGSM, KIND_FGSM, 0, seed), i)
            for i, s in enumerate(chosen)
            for seed in campaign.seeds
        )

    def work(task: Tuple[_Job, int]) -> Tuple[ImageOutcome, Optional[AttackResult]]:
        job, index = task
        return _run_job(job, index, model, attack_config, campaign, xi)

    if jobs == 1:
        results = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, tasks))

    outcomes = [outcome for outcome, _ in results]
    if on_result is not None:
        for (job, _), (outcome, result) in zip(tasks, results):
            if result is not None:
                on_result(job.sample, outcome, result)
    rates: Dict[str, float] = {}
    fractions: Dict[str, float] = {}
    for label in campaign.attack_labels():
        group = [r for r in results if r[0].attack == label]
        rates[label] = success_rate([o for o, _ in group])
        on_target = [r.on_target_fraction for _, r in group if r is not None]
        if on_target:
            fractions[label] = math.fsum(on_target) / len(on_target)
        logger.info("%s: success rate %.3f over %d runs", label, rates[label], len(group))
    return CampaignReport(
        rates=rates,
        on_target_fraction=fractions,
        sample_size=len(chosen) * len(campaign.seeds),
        config=snapshot,
        outcomes=outcomes,
    )


def _imaging_dict(xi: ImagingParams) -> Dict[str, Any]:
    return {
        "bandwidth": xi.bandwidth,
        "center_frequency": xi.center_frequency,
        "aperture_angle": xi.aperture_angle,
        "m_star": xi.m_star,
        "n_star": xi.n_star,
        "length_in_pixels": xi.length_in_pixels,
    }
