"""
Scatterer attacks and FGSM.

:func:`run_otsa` maximizes the classifier loss plus the mean positioning
score by projected gradient ascent over the scatterer parameters, and
stops once every scatterer sits on the target and the ground-truth
confidence has dropped below ``tau``. :func:`run_baseline` runs the same
loop without the positioning term and stops on confidence alone.
:func:`fgsm` is the single-step pixel attack used for comparison.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .ascm import (
    DEFAULT_MAX_SCATTERERS,
    NUM_PARAMS,
    ImagingParams,
    ScattererSet,
)
from .classifier import Classifier, Prediction
from .dataio import save_image
from .errors import InitError, NumericalError, ParameterError
from .gradient_engine import evaluate_objective
from .positioning import DEFAULT_MAX_SCORE, DEFAULT_SIGMA, TargetMask, on_target_flags


logger = logging.getLogger(__name__)

KIND_OTSA = "otsa"
KIND_BASELINE = "baseline"
KIND_FGSM = "fgsm"
ATTACK_KINDS = (KIND_OTSA, KIND_BASELINE, KIND_FGSM)

# Bounds in parameter order [A, x, y, gamma, L, alpha, phi_bar].
DEFAULT_THETA_MIN = (0.0, 0.0, 0.0, -1.0, 0.0, 0.0, -1.0)
DEFAULT_THETA_MAX = (10.0, 87.0, 87.0, 1.0, 2.0, 5.0, 1.0)

# Positions move in pixel units, so they get a larger share of the step.
STEP_SCALE = np.array([1.0, 5.0, 5.0, 1.0, 1.0, 1.0, 1.0])


@dataclass(frozen=True)
class AttackConfig:
    """Settings shared by :func:`run_otsa` and :func:`run_baseline`.

    Parameters
    ----------
    n_scatterers:
        Number of scatterers ``N``.
    lam:
        Weight of the mean positioning score (ignored by the baseline).
    theta_min, theta_max:
        Component-wise parameter bounds.
    tau:
        Ground-truth confidence below which the attack may stop.
    stop_on_target:
        Also require every scatterer on the target before stopping early.
    """

    n_scatterers: int = 1
    lam: float = 10.0
    sigma: float = DEFAULT_SIGMA
    max_score: float = DEFAULT_MAX_SCORE
    theta_min: Tuple[float, ...] = DEFAULT_THETA_MIN
    theta_max: Tuple[float, ...] = DEFAULT_THETA_MAX
    step_size: float = 0.1
    max_iters: int = 200
    tau: float = 0.10
    seed: int = 0
    stop_on_target: bool = True
    max_scatterers: int = DEFAULT_MAX_SCATTERERS

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta_min", tuple(float(v) for v in self.theta_min))
        object.__setattr__(self, "theta_max", tuple(float(v) for v in self.theta_max))
        self.validate()

    def validate(self) -> None:
        if len(self.theta_min) != NUM_PARAMS or len(self.theta_max) != NUM_PARAMS:
            raise ParameterError(f"theta_min and theta_max need {NUM_PARAMS} components")
        if np.any(np.asarray(self.theta_min) > np.asarray(self.theta_max)):
            raise ParameterError("theta_min must not exceed theta_max")
        if not 1 <= self.n_scatterers <= self.max_scatterers:
            raise ParameterError(
                f"n_scatterers must lie in [1, {self.max_scatterers}], got {self.n_scatterers}"
            )
        if not 0.0 < self.tau < 1.0:
            raise ParameterError("tau must lie in (0, 1)")
        if self.max_iters < 0:
            raise ParameterError("max_iters must be non-negative")
        if not self.step_size > 0:
            raise ParameterError("step_size must be positive")
        if self.lam < 0:
            raise ParameterError("lam must be non-negative")
        if not (self.sigma > 0 and self.max_score > 0):
            raise ParameterError("sigma and max_score must be positive")

    @property
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.theta_min), np.asarray(self.theta_max)


@dataclass(eq=False)
class AttackResult:
    """Final state of one attack run."""

    kind: str
    label: int
    thetas: ScattererSet
    adversarial: np.ndarray
    prediction: Prediction
    iterations: int
    on_target: Tuple[bool, ...] = ()
    confidence_trace: List[float] = field(default_factory=list)

    @property
    def predicted_label(self) -> int:
        return self.prediction.label

    @property
    def success(self) -> bool:
        return self.prediction.label != self.label

    @property
    def confidence(self) -> float:
        """Ground-truth class probability at exit."""
        return self.prediction.confidence(self.label)

    @property
    def on_target_fraction(self) -> float:
        return float(np.mean(self.on_target)) if self.on_target else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "label": self.label,
            "predicted_label": self.predicted_label,
            "success": self.success,
            "iterations": self.iterations,
            "confidence": self.confidence,
            "probabilities": [float(p) for p in self.prediction.probabilities],
            "scatterers": self.thetas.as_array().tolist(),
            "on_target": list(self.on_target),
            "confidence_trace": list(self.confidence_trace),
        }


def save_result(result: AttackResult, directory: Union[str, Path], stem: str = "attack") -> Path:
    """Write ``<stem>.json`` and the perturbed image ``<stem>.pgm`` under *directory*."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_image(result.adversarial, directory / f"{stem}.pgm")
    path = directory / f"{stem}.json"
    path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Scatterer initialization and projection
# ---------------------------------------------------------------------------


def init_scatterers(
    mask: TargetMask,
    n: int,
    bounds: Tuple[Sequence[float], Sequence[float]],
    rng: np.random.Generator,
) -> ScattererSet:
    """Place *n* scatterers on uniformly chosen mask pixels.

    Positions get a sub-pixel jitter in ``[-0.5, 0.5)``; the other five
    parameters are drawn uniformly within *bounds*.
    """
    if not len(mask):
        raise InitError("cannot place scatterers on an empty target mask")
    if n < 1:
        raise InitError("at least one scatterer is required")
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    points = mask.points
    rows = np.empty((n, NUM_PARAMS))
    for i in range(n):
        pixel = points[rng.integers(len(points))]
        rows[i] = rng.uniform(lo, hi)
        rows[i, 1:3] = pixel + rng.uniform(-0.5, 0.5, size=2)
    return project_bounds(ScattererSet.from_array(rows), lo, hi)


def project_bounds(
    thetas: ScattererSet, theta_min: Sequence[float], theta_max: Sequence[float]
) -> ScattererSet:
    """Clamp every parameter into ``[theta_min, theta_max]``."""
    if len(thetas) == 0:
        return thetas
    clipped = np.clip(thetas.as_array(), np.asarray(theta_min), np.asarray(theta_max))
    return ScattererSet.from_array(clipped)


# ---------------------------------------------------------------------------
# Gradient ascent
# ---------------------------------------------------------------------------


def _ascend(
    kind: str,
    image: np.ndarray,
    label: int,
    mask: TargetMask,
    model: Classifier,
    config: AttackConfig,
    xi: Optional[ImagingParams],
    lam: float,
    stop_on_target: bool,
) -> AttackResult:
    xi = xi or ImagingParams()
    image = np.asarray(image, dtype=np.float64)
    if image.shape != mask.shape:
        raise ParameterError(f"image shape {image.shape} does not match mask shape {mask.shape}")
    lo, hi = config.bounds
    rng = np.random.default_rng(config.seed)
    thetas = init_scatterers(mask, config.n_scatterers, (lo, hi), rng)

    trace: List[float] = []
    iterations = 0
    while True:
        state = evaluate_objective(
            thetas, image, label, model, mask, lam, config.sigma, config.max_score, xi
        )
        if not (np.isfinite(state.value) and np.all(np.isfinite(state.gradient.values))):
            raise NumericalError(f"{kind} objective became non-finite at iteration {iterations}")
        confidence = state.prediction.confidence(label)
        trace.append(confidence)
        flags = on_target_flags(thetas, mask)
        logger.debug(
            "%s iter=%d objective=%.6g confidence=%.4f amplitudes=%s",
            kind,
            iterations,
            state.value,
            confidence,
            [round(t.A, 6) for t in thetas],
        )
        done = confidence < config.tau and (all(flags) or not stop_on_target)
        if done or iterations >= config.max_iters:
            break
        step = config.step_size * STEP_SCALE * state.gradient.values
        thetas = project_bounds(ScattererSet.from_array(thetas.as_array() + step), lo, hi)
        iterations += 1

    logger.info(
        "%s finished after %d iterations: confidence %.4f, on target %d/%d",
        kind,
        iterations,
        confidence,
        sum(flags),
        len(flags),
    )
    return AttackResult(
        kind=kind,
        label=int(label),
        thetas=thetas,
        adversarial=state.adversarial,
        prediction=state.prediction,
        iterations=iterations,
        on_target=tuple(flags),
        confidence_trace=trace,
    )


def run_otsa(
    image: np.ndarray,
    label: int,
    mask: TargetMask,
    model: Classifier,
    config: Optional[AttackConfig] = None,
    xi: Optional[ImagingParams] = None,
) -> AttackResult:
    """On-target scatterer attack on a correctly classified image."""
    config = config or AttackConfig()
    return _ascend(
        KIND_OTSA, image, label, mask, model, config, xi, config.lam, config.stop_on_target
    )


def run_baseline(
    image: np.ndarray,
    label: int,
    mask: TargetMask,
    model: Classifier,
    config: Optional[AttackConfig] = None,
    xi: Optional[ImagingParams] = None,
) -> AttackResult:
    """Same ascent without the positioning score; stops on confidence only.

    Scatterers still start on the target.
    """
    config = config or AttackConfig()
    return _ascend(KIND_BASELINE, image, label, mask, model, config, xi, 0.0, False)


def fgsm(image: np.ndarray, label: int, model: Classifier, epsilon: float) -> np.ndarray:
    """``X + epsilon * sign(dL/dX)``; no clipping is applied."""
    if epsilon < 0:
        raise ParameterError("epsilon must be non-negative")
    image = np.asarray(image, dtype=np.float64)
    return image + epsilon * np.sign(model.input_gradient(image, label))
