"""
Scatter Attack – physically placed scatterer attacks on SAR image classifiers,
with an on-target positioning constraint, a small trainable classifier,
synthetic SAR-like data and a campaign harness.
"""

from .ascm import ImagingParams, ScattererParams, ScattererSet, render_image
from .attack import AttackConfig, AttackResult, fgsm, run_baseline, run_otsa
from .classifier import ConvClassifier, LinearSoftmaxModel, ModelSpec, TrainConfig, train
from .evaluation import CampaignConfig, CampaignReport, ImageOutcome, run_campaign
from .positioning import TargetMask, is_on_target, positioning_score
from .report_generator import emit_report

__all__ = [
    "ImagingParams",
    "ScattererParams",
    "ScattererSet",
    "render_image",
    "AttackConfig",
    "AttackResult",
    "fgsm",
    "run_baseline",
    "run_otsa",
    "ConvClassifier",
    "LinearSoftmaxModel",
    "ModelSpec",
    "TrainConfig",
    "train",
    "CampaignConfig",
    "CampaignReport",
    "ImageOutcome",
    "run_campaign",
    "TargetMask",
    "is_on_target",
    "positioning_score",
    "emit_report",
]
