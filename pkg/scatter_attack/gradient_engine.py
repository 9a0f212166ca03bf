"""
Objective and exact gradients for scatterer attacks.

The attack objective for scatterers ``Theta`` on image ``X`` with label ``y`` is

    J(Theta) = CE(F(X + I(Theta)), y) + (lambda / N) * sum_i S(x_i, y_i)

The loss term is differentiated analytically: every factor of the
scatterer field is differentiated in closed form, pushed through the
(linear) inverse transform, and then through the pixel magnitude with

    d|z|/dtheta = Re(conj(z) * dz/dtheta) / max(|z|, eps)

before being contracted with the classifier's input gradient. The
contraction runs through the adjoint transform, so one iteration costs a
single extra inverse DFT however many parameters there are.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .ascm import (
    NUM_PARAMS,
    PARAM_NAMES,
    FrequencyGrid,
    ImagingParams,
    ScattererParams,
    ScattererSet,
    cached_grid,
    centered_idft2,
    check_window,
    field_factors,
    render_complex,
    sinc,
)
from .classifier import Classifier, Prediction
from .errors import ParameterError
from .positioning import (
    DEFAULT_MAX_SCORE,
    DEFAULT_SIGMA,
    TargetMask,
    mean_score,
    score_gradient,
)


MAGNITUDE_EPS = 1e-12

# Central-difference steps per parameter [A, x, y, gamma, L, alpha, phi_bar].
FD_STEPS = np.array([1e-4, 1e-2, 1e-2, 1e-4, 1e-4, 1e-4, 1e-4])


@dataclass(frozen=True)
class ParamGradient:
    """Gradient with one 7-vector per scatterer, ``values[i, k]``."""

    values: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]

    def component(self, index: int, name: str) -> float:
        return float(self.values[index, PARAM_NAMES.index(name)])


class ObjectiveState(NamedTuple):
    """Everything one attack iteration needs from a single evaluation."""

    value: float
    gradient: ParamGradient
    adversarial: np.ndarray
    prediction: Prediction


# ---------------------------------------------------------------------------
# Image Jacobian
# ---------------------------------------------------------------------------


def sinc_derivative(u: np.ndarray) -> np.ndarray:
    """``d/du [sin(u) / u]``, using its series near 0."""
    u = np.asarray(u, dtype=np.float64)
    small = np.abs(u) < 1e-4
    safe = np.where(small, 1.0, u)
    exact = (np.cos(safe) - sinc(safe)) / safe
    return np.where(small, -u / 3.0 + u ** 3 / 30.0, exact)


def field_derivatives(
    theta: ScattererParams, grid: FrequencyGrid, xi: ImagingParams
) -> np.ndarray:
    """``(7, m*, n*)`` complex derivatives of the scatterer field per parameter."""
    f = field_factors(theta, grid, xi)
    fx, fy = grid.fx_mesh, grid.fy_mesh
    unit = f.unit_field
    value = theta.A * unit
    half_aperture = xi.aperture_angle / 2.0
    wave = 4.0 * np.pi / xi.c

    derivs = np.empty((NUM_PARAMS,) + grid.shape, dtype=np.complex128)
    derivs[0] = unit
    derivs[1] = value * (-1j * wave * xi.p_x * fx)
    derivs[2] = value * (-1j * wave * xi.p_y * fy)
    derivs[3] = value * (-fy / xi.center_frequency)

    rest = theta.A * f.frequency * f.aspect * f.phase * sinc_derivative(f.sinc_arg)
    scale = np.pi * f.length_radial / (2.0 * math.sin(half_aperture)) * xi.eta_y
    offset_angle = f.angle - theta.phi_bar * half_aperture
    derivs[4] = rest * scale * np.sin(offset_angle)
    derivs[6] = rest * scale * theta.L * np.cos(offset_angle) * (-half_aperture)

    positive = f.radial > 0
    log_j_radial = np.where(
        positive, np.log(np.where(positive, f.radial, 1.0)) + 0.5j * np.pi, 0.0
    )
    derivs[5] = value * log_j_radial
    return derivs


def image_param_jacobian(
    thetas: ScattererSet, xi: ImagingParams, z: Optional[np.ndarray] = None
) -> np.ndarray:
    """Derivative images ``dI_p/dtheta_k`` with shape ``(N, 7, m*, n*)``.

    *z* is the complex image of *thetas* when the caller already has it.
    """
    grid = cached_grid(xi)
    if len(thetas) == 0:
        return np.zeros((0, NUM_PARAMS) + xi.shape)
    if z is None:
        z = render_complex(thetas, xi)
    denom = np.maximum(np.abs(z), MAGNITUDE_EPS)
    jac = np.empty((len(thetas), NUM_PARAMS) + xi.shape)
    for i, theta in enumerate(thetas):
        dz = centered_idft2(field_derivatives(theta, grid, xi))
        jac[i] = np.real(np.conj(z)[None] * dz) / denom[None]
    return jac


def contract_jacobian(
    thetas: ScattererSet,
    xi: ImagingParams,
    pixel_grad: np.ndarray,
    z: Optional[np.ndarray] = None,
) -> np.ndarray:
    """``sum_p pixel_grad[p] * dI_p/dtheta`` as an ``(N, 7)`` array.

    Equals contracting :func:`image_param_jacobian` over the top-left
    window of *pixel_grad*'s shape, without forming it. The centred
    transform satisfies ``sum(a * T(b)) == sum(T(a) * b)``, so the weights
    are transformed once and paired with each field derivative.
    """
    grid = cached_grid(xi)
    if len(thetas) == 0:
        return np.zeros((0, NUM_PARAMS))
    if z is None:
        z = render_complex(thetas, xi)
    h, w = pixel_grad.shape
    window = z[:h, :w]
    weights = np.zeros(xi.shape, dtype=np.complex128)
    weights[:h, :w] = pixel_grad * np.conj(window) / np.maximum(np.abs(window), MAGNITUDE_EPS)
    adjoint = centered_idft2(weights)
    grad = np.empty((len(thetas), NUM_PARAMS))
    for i, theta in enumerate(thetas):
        derivs = field_derivatives(theta, grid, xi)
        grad[i] = np.real(np.tensordot(derivs, adjoint, axes=([1, 2], [0, 1])))
    return grad


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def _check_inputs(
    thetas: ScattererSet, image: np.ndarray, mask: TargetMask, xi: ImagingParams
) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ParameterError("image must be two-dimensional")
    if tuple(image.shape) != tuple(mask.shape):
        raise ParameterError(
            f"image shape {image.shape} does not match mask shape {mask.shape}"
        )
    if len(thetas) == 0:
        raise ParameterError("the objective needs at least one scatterer")
    check_window(image.shape, xi)
    return image


def evaluate_objective(
    thetas: ScattererSet,
    image: np.ndarray,
    label: int,
    model: Classifier,
    mask: TargetMask,
    lam: float = 10.0,
    sigma: float = DEFAULT_SIGMA,
    max_score: float = DEFAULT_MAX_SCORE,
    xi: Optional[ImagingParams] = None,
) -> ObjectiveState:
    """Value, gradient, perturbed image and prediction in one pass."""
    xi = xi or ImagingParams()
    image = _check_inputs(thetas, image, mask, xi)
    h, w = image.shape
    n = len(thetas)

    z = render_complex(thetas, xi)
    adversarial = image + np.abs(z)[:h, :w]
    prediction = model.predict(adversarial)
    value = model.loss(adversarial, label)
    if lam:
        value += lam * mean_score(thetas, mask, sigma, max_score)

    pixel_grad = model.input_gradient(adversarial, label)
    grad = contract_jacobian(thetas, xi, pixel_grad, z)
    if lam:
        for i, theta in enumerate(thetas):
            gx, gy = score_gradient(theta.x, theta.y, mask, sigma, max_score)
            grad[i, 1] += lam / n * gx
            grad[i, 2] += lam / n * gy
    return ObjectiveState(float(value), ParamGradient(grad), adversarial, prediction)


def objective_value(
    thetas: ScattererSet,
    image: np.ndarray,
    label: int,
    model: Classifier,
    mask: TargetMask,
    lam: float = 10.0,
    sigma: float = DEFAULT_SIGMA,
    max_score: float = DEFAULT_MAX_SCORE,
    xi: Optional[ImagingParams] = None,
) -> float:
    """Classifier loss on ``X + I(Theta)`` plus ``lam`` times the mean positioning score."""
    xi = xi or ImagingParams()
    image = _check_inputs(thetas, image, mask, xi)
    h, w = image.shape
    adversarial = image + np.abs(render_complex(thetas, xi))[:h, :w]
    value = model.loss(adversarial, label)
    if lam:
        value += lam * mean_score(thetas, mask, sigma, max_score)
    return float(value)


def objective_gradient(
    thetas: ScattererSet,
    image: np.ndarray,
    label: int,
    model: Classifier,
    mask: TargetMask,
    lam: float = 10.0,
    sigma: float = DEFAULT_SIGMA,
    max_score: float = DEFAULT_MAX_SCORE,
    xi: Optional[ImagingParams] = None,
) -> ParamGradient:
    """Exact gradient of :func:`objective_value` with respect to every parameter."""
    return evaluate_objective(
        thetas, image, label, model, mask, lam, sigma, max_score, xi
    ).gradient


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def finite_difference(
    f: Callable[[np.ndarray], float],
    theta0: Sequence[float],
    h: Union[float, Sequence[float]] = 1e-5,
) -> np.ndarray:
    """Central differences ``(f(theta + h e_k) - f(theta - h e_k)) / 2h``.

    *h* may be a scalar or one step per component; the result has the
    shape of *theta0*.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    flat = theta0.reshape(-1)
    steps = np.broadcast_to(np.asarray(h, dtype=np.float64), theta0.shape).reshape(-1)
    if np.any(steps <= 0):
        raise ParameterError("finite-difference steps must be positive")
    grad = np.empty_like(flat)
    for k in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[k] += steps[k]
        minus[k] -= steps[k]
        grad[k] = (f(plus.reshape(theta0.shape)) - f(minus.reshape(theta0.shape))) / (2.0 * steps[k])
    return grad.reshape(theta0.shape)


def default_steps(num_scatterers: int) -> np.ndarray:
    """``(N, 7)`` array of the default per-parameter steps."""
    return np.tile(FD_STEPS, (num_scatterers, 1))
