"""
Gaussian-kernel positioning score.

A scatterer at real-valued pixel position ``(x, y)`` scores

    raw(x, y) = sum_j exp(-||(x, y) - (x'_j, y'_j)||^2 / (2 sigma^2))

over every target pixel ``(x'_j, y'_j)``, truncated at ``MAX``. With the
default ``sigma = 0.4`` and ``MAX = 0.5`` every target pixel scores
exactly ``MAX`` and the score falls off within about half a pixel of the
target boundary, so its gradient only pulls scatterers that have left
the target.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Tuple

import numpy as np

from .ascm import ScattererSet
from .errors import ParameterError


DEFAULT_SIGMA = 0.4
DEFAULT_MAX_SCORE = 0.5


@dataclass(frozen=True)
class ScoreParams:
    """Kernel width ``sigma`` (pixels) and truncation threshold ``MAX``."""

    sigma: float = DEFAULT_SIGMA
    max_score: float = DEFAULT_MAX_SCORE

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")
        if not self.max_score > 0:
            raise ParameterError("max_score must be positive")


@dataclass(frozen=True, eq=False)
class TargetMask:
    """Pixels ``(x, y)`` belonging to the on-ground target in an image of ``shape``."""

    coords: FrozenSet[Tuple[int, int]]
    shape: Tuple[int, int]

    def __post_init__(self) -> None:
        coords = frozenset((int(x), int(y)) for x, y in self.coords)
        h, w = self.shape
        for x, y in coords:
            if not (0 <= x < h and 0 <= y < w):
                raise ParameterError(f"Mask pixel {(x, y)} lies outside {self.shape}")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "shape", (int(h), int(w)))

    def __len__(self) -> int:
        return len(self.coords)

    def __contains__(self, item: Tuple[int, int]) -> bool:
        return item in self.coords

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TargetMask):
            return NotImplemented
        return self.coords == other.coords and self.shape == other.shape

    def __hash__(self) -> int:
        return hash((self.coords, self.shape))

    @functools.cached_property
    def points(self) -> np.ndarray:
        """Mask pixels as a sorted ``(K, 2)`` float array."""
        if not self.coords:
            return np.zeros((0, 2))
        return np.array(sorted(self.coords), dtype=np.float64)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "TargetMask":
        arr = np.asarray(array, dtype=bool)
        xs, ys = np.nonzero(arr)
        return cls(frozenset(zip(xs.tolist(), ys.tolist())), arr.shape)

    def to_array(self) -> np.ndarray:
        arr = np.zeros(self.shape, dtype=bool)
        for x, y in self.coords:
            arr[x, y] = True
        return arr

    def translated(self, dx: int, dy: int, shape: Tuple[int, int]) -> "TargetMask":
        """Shift every pixel by ``(dx, dy)`` and drop those outside *shape*."""
        h, w = shape
        moved = (
            (x + dx, y + dy)
            for x, y in self.coords
            if 0 <= x + dx < h and 0 <= y + dy < w
        )
        return TargetMask(frozenset(moved), (h, w))


def _kernels(x: float, y: float, mask: TargetMask, sigma: float) -> Tuple[np.ndarray, np.ndarray]:
    offsets = np.array([x, y], dtype=np.float64) - mask.points
    sq_dist = np.einsum("ij,ij->i", offsets, offsets)
    return offsets, np.exp(-sq_dist / (2.0 * sigma * sigma))


def raw_score(x: float, y: float, mask: TargetMask, sigma: float = DEFAULT_SIGMA) -> float:
    """Untruncated sum of Gaussian kernels; 0 for an empty mask."""
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    if not len(mask):
        return 0.0
    _, kernels = _kernels(x, y, mask, sigma)
    return float(kernels.sum())


def positioning_score(
    x: float,
    y: float,
    mask: TargetMask,
    sigma: float = DEFAULT_SIGMA,
    max_score: float = DEFAULT_MAX_SCORE,
) -> float:
    """``min(raw_score, MAX)``."""
    return min(raw_score(x, y, mask, sigma), max_score)


def score_gradient(
    x: float,
    y: float,
    mask: TargetMask,
    sigma: float = DEFAULT_SIGMA,
    max_score: float = DEFAULT_MAX_SCORE,
) -> Tuple[float, float]:
    """Return ``(dS/dx, dS/dy)``; zero on the truncation plateau (``raw >= MAX``)."""
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    if not len(mask):
        return (0.0, 0.0)
    offsets, kernels = _kernels(x, y, mask, sigma)
    if kernels.sum() >= max_score:
        return (0.0, 0.0)
    grad = -(offsets * kernels[:, None]).sum(axis=0) / (sigma * sigma)
    return (float(grad[0]), float(grad[1]))


def mean_score(
    thetas: ScattererSet,
    mask: TargetMask,
    sigma: float = DEFAULT_SIGMA,
    max_score: float = DEFAULT_MAX_SCORE,
) -> float:
    """Average positioning score of the scatterers in *thetas*."""
    if len(thetas) == 0:
        raise ParameterError("mean_score needs at least one scatterer")
    scores = [positioning_score(t.x, t.y, mask, sigma, max_score) for t in thetas]
    return math.fsum(scores) / len(scores)


def nearest_pixel(x: float, y: float) -> Tuple[int, int]:
    # Half-up rounding so a position exactly between pixels always picks the same one.
    return (math.floor(x + 0.5), math.floor(y + 0.5))


def is_on_target(x: float, y: float, mask: TargetMask) -> bool:
    """True iff the nearest pixel to ``(x, y)`` belongs to *mask*."""
    return nearest_pixel(x, y) in mask.coords


def on_target_flags(thetas: Iterable, mask: TargetMask) -> List[bool]:
    return [is_on_target(t.x, t.y, mask) for t in thetas]
