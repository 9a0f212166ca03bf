"""
Attributed scattering center model (ASCM) renderer.

Converts a set of parameterized scatterers into a SAR amplitude image:

* the backscattered field of every scatterer is evaluated directly on a
  Cartesian ``(f_x, f_y)`` frequency grid,
* the fields are summed,
* a centred 2-D inverse DFT maps the field to the image plane and the
  magnitude is taken.

Images are ``numpy`` arrays indexed ``[x, y]``: rows are range (the
``f_x`` axis) and columns are cross-range (the ``f_y`` axis).

The grid includes both band edges, so consecutive samples are spaced
``B / (m* - 1)`` apart and the position phase ramp advances
``2*pi*x / (m* - 1)`` per sample. The inverse transform therefore uses
period ``m* - 1``: the last sample is folded onto the first, an inverse
FFT of size ``(m* - 1, n* - 1)`` is taken and pixel ``m* - 1`` wraps to
pixel 0. With the ``1 / (m* n*)`` normalization a unit-amplitude point
scatterer at integer ``(x, y)`` renders with a peak of exactly 1.0.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ParameterError


SPEED_OF_LIGHT = 299_792_458.0

PARAM_NAMES: Tuple[str, ...] = ("A", "x", "y", "gamma", "L", "alpha", "phi_bar")
NUM_PARAMS = len(PARAM_NAMES)
DEFAULT_MAX_SCATTERERS = 3

# X-band spotlight values consistent with 128x128 imagery.
DEFAULT_CENTER_FREQUENCY = 9.6e9
DEFAULT_BANDWIDTH = 0.591e9
DEFAULT_APERTURE_ANGLE = 0.05
DEFAULT_GRID_SIZE = 128


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScattererParams:
    """The seven parameters ``[A, x, y, gamma, L, alpha, phi_bar]`` of one scatterer."""

    A: float
    x: float
    y: float
    gamma: float = 0.0
    L: float = 0.0
    alpha: float = 0.0
    phi_bar: float = 0.0

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.as_array())):
            raise ParameterError(f"Scatterer parameters must be finite: {self}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.A, self.x, self.y, self.gamma, self.L, self.alpha, self.phi_bar],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ScattererParams":
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.size != NUM_PARAMS:
            raise ParameterError(
                f"A scatterer needs {NUM_PARAMS} parameters, got {arr.size}"
            )
        return cls(*(float(v) for v in arr))

    def validate_bounds(self, lower: Sequence[float], upper: Sequence[float]) -> None:
        """Raise :class:`ParameterError` unless ``lower <= theta <= upper``."""
        values = self.as_array()
        lo = np.asarray(lower, dtype=np.float64)
        hi = np.asarray(upper, dtype=np.float64)
        bad = np.flatnonzero((values < lo) | (values > hi))
        if bad.size:
            names = ", ".join(PARAM_NAMES[i] for i in bad)
            raise ParameterError(f"Scatterer parameters out of bounds: {names}")


@dataclass(frozen=True)
class ScattererSet:
    """An ordered collection of scatterers (``Theta_N``)."""

    scatterers: Tuple[ScattererParams, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "scatterers", tuple(self.scatterers))

    def __len__(self) -> int:
        return len(self.scatterers)

    def __iter__(self) -> Iterator[ScattererParams]:
        return iter(self.scatterers)

    def __getitem__(self, index: int) -> ScattererParams:
        return self.scatterers[index]

    def as_array(self) -> np.ndarray:
        """Return an ``(N, 7)`` array of parameters."""
        if not self.scatterers:
            return np.zeros((0, NUM_PARAMS))
        return np.stack([s.as_array() for s in self.scatterers])

    @classmethod
    def from_array(cls, values: np.ndarray) -> "ScattererSet":
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            return cls(())
        arr = arr.reshape(-1, NUM_PARAMS)
        return cls(tuple(ScattererParams.from_array(row) for row in arr))

    def union(self, other: "ScattererSet") -> "ScattererSet":
        return ScattererSet(self.scatterers + other.scatterers)

    def subset(self, indices: Iterable[int]) -> "ScattererSet":
        return ScattererSet(tuple(self.scatterers[i] for i in indices))

    def check_size(self, max_size: int = DEFAULT_MAX_SCATTERERS) -> None:
        if len(self) > max_size:
            raise ParameterError(
                f"{len(self)} scatterers exceed the configured maximum of {max_size}"
            )


@dataclass(frozen=True)
class ImagingParams:
    """SAR imaging constants (``xi``).

    Parameters
    ----------
    bandwidth:
        Radar bandwidth ``B`` in Hz.
    center_frequency:
        Centre frequency ``f_c`` in Hz.
    aperture_angle:
        Aperture accumulation angle ``phi_m`` in radians.
    m_star, n_star:
        Number of grid samples along ``f_x`` and ``f_y``.
    eta_x, eta_y:
        Resampling factors; 1 for direct Cartesian evaluation.
    length_in_pixels:
        Divide the radial frequency in the length term by ``f_c``. Off by
        default, so ``L`` scales ``sqrt(f_x^2 + f_y^2)`` in Hz as written
        and any ``L`` above about 1e-8 suppresses the scatterer under the
        default constants. When on, ``L`` in ``[0, 2]`` keeps the scatterer
        visible.
    """

    bandwidth: float = DEFAULT_BANDWIDTH
    center_frequency: float = DEFAULT_CENTER_FREQUENCY
    aperture_angle: float = DEFAULT_APERTURE_ANGLE
    m_star: int = DEFAULT_GRID_SIZE
    n_star: int = DEFAULT_GRID_SIZE
    c: float = SPEED_OF_LIGHT
    eta_x: float = 1.0
    eta_y: float = 1.0
    length_in_pixels: bool = False
    p_x: float = field(init=False)
    p_y: float = field(init=False)

    def __post_init__(self) -> None:
        self.validate_constants()
        object.__setattr__(self, "p_x", self._range_spacing())
        object.__setattr__(self, "p_y", self._cross_range_spacing())

    def _range_spacing(self) -> float:
        return self.c * self.eta_x / (2.0 * self.bandwidth)

    def _cross_range_spacing(self) -> float:
        return self.c * self.eta_y / (
            4.0 * self.center_frequency * math.sin(self.aperture_angle / 2.0)
        )

    def validate_constants(self) -> None:
        if not self.bandwidth > 0:
            raise ParameterError("bandwidth must be positive")
        if not self.center_frequency > self.bandwidth / 2.0:
            raise ParameterError("center_frequency must exceed bandwidth / 2")
        if not 0.0 < self.aperture_angle < math.pi:
            raise ParameterError("aperture_angle must lie in (0, pi)")
        if int(self.m_star) != self.m_star or int(self.n_star) != self.n_star:
            raise ParameterError("m_star and n_star must be integers")
        if self.m_star < 2 or self.n_star < 2:
            raise ParameterError("m_star and n_star must be at least 2")
        if not (self.c > 0 and self.eta_x > 0 and self.eta_y > 0):
            raise ParameterError("c, eta_x and eta_y must be positive")

    def validate(self) -> None:
        """Check the constants and that the stored pixel spacings are current."""
        self.validate_constants()
        for stored, fresh, name in (
            (self.p_x, self._range_spacing(), "p_x"),
            (self.p_y, self._cross_range_spacing(), "p_y"),
        ):
            if abs(stored - fresh) > 1e-12 * abs(fresh):
                raise ParameterError(f"{name} is inconsistent with the other constants")

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.m_star), int(self.n_star))

    @property
    def cross_range_extent(self) -> float:
        """Cross-range frequency extent ``F_y = 2 f_c sin(phi_m / 2)``."""
        return 2.0 * self.center_frequency * math.sin(self.aperture_angle / 2.0)


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Cartesian frequency samples; ``fx_mesh``/``fy_mesh`` are ``[k, l]`` meshes."""

    f_x: np.ndarray
    f_y: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.f_x.size, self.f_y.size)

    @functools.cached_property
    def fx_mesh(self) -> np.ndarray:
        return np.broadcast_to(self.f_x[:, None], self.shape)

    @functools.cached_property
    def fy_mesh(self) -> np.ndarray:
        return np.broadcast_to(self.f_y[None, :], self.shape)


class FieldFactors(NamedTuple):
    """The four modulation factors of a scatterer's field, without ``A``.

    ``radial`` is ``sqrt(f_x^2 + f_y^2) / f_c``, ``angle`` is
    ``atan2(f_y, f_x)`` and ``sinc_arg`` the argument of the length term.
    ``length_radial`` is the radial frequency the length term scales: in Hz,
    or equal to ``radial`` when ``xi.length_in_pixels`` is set. All are kept
    for the gradient computation.
    """

    frequency: np.ndarray
    aspect: np.ndarray
    length: np.ndarray
    phase: np.ndarray
    radial: np.ndarray
    angle: np.ndarray
    sinc_arg: np.ndarray
    length_radial: np.ndarray

    @property
    def unit_field(self) -> np.ndarray:
        return self.frequency * self.aspect * self.length * self.phase


# ---------------------------------------------------------------------------
# Grid and field
# ---------------------------------------------------------------------------


def build_frequency_grid(xi: ImagingParams) -> FrequencyGrid:
    """Return the Cartesian frequency grid for *xi*.

    ``f_x`` spans ``[f_c - B/2, f_c + B/2]`` and ``f_y`` spans
    ``[-F_y/2, F_y/2]``, both with their end points included.
    """
    xi.validate()
    m, n = xi.shape
    f_x = xi.center_frequency - xi.bandwidth / 2.0 + np.arange(m) * (xi.bandwidth / (m - 1))
    extent = xi.cross_range_extent
    f_y = -extent / 2.0 + np.arange(n) * (extent / (n - 1))
    f_x.setflags(write=False)
    f_y.setflags(write=False)
    return FrequencyGrid(f_x=f_x, f_y=f_y)


@functools.lru_cache(maxsize=16)
def cached_grid(xi: ImagingParams) -> FrequencyGrid:
    return build_frequency_grid(xi)


def complex_power(radial: np.ndarray, alpha: float) -> np.ndarray:
    """Principal-branch ``(j * radial) ** alpha``.

    ``radial == 0`` maps to 0 when ``alpha > 0`` and to 1 when ``alpha == 0``.
    """
    positive = radial > 0
    safe = np.where(positive, radial, 1.0)
    value = np.exp(alpha * (np.log(safe) + 0.5j * np.pi))
    if alpha == 0:
        return np.where(positive, value, 1.0 + 0j)
    return np.where(positive, value, 0j)


def sinc(u: np.ndarray) -> np.ndarray:
    """Unnormalized ``sin(u) / u`` with ``sinc(0) = 1``."""
    return np.sinc(np.asarray(u) / np.pi)


def field_factors(
    theta: ScattererParams, grid: FrequencyGrid, xi: ImagingParams
) -> FieldFactors:
    """Evaluate the modulation factors of one scatterer on *grid*."""
    fx, fy = grid.fx_mesh, grid.fy_mesh
    fc = xi.center_frequency
    magnitude = np.hypot(fx, fy)
    radial = magnitude / fc
    angle = np.arctan2(fy, fx)
    half_aperture = xi.aperture_angle / 2.0

    frequency = complex_power(radial, theta.alpha)
    aspect = np.exp(-(fy / fc) * theta.gamma)
    length_radial = radial if xi.length_in_pixels else magnitude
    sinc_arg = (
        np.pi * length_radial / (2.0 * math.sin(half_aperture))
        * theta.L * xi.eta_y
        * np.sin(angle - theta.phi_bar * half_aperture)
    )
    length = sinc(sinc_arg)
    phase = np.exp(
        -1j * (4.0 * np.pi / xi.c) * (xi.p_x * theta.x * fx + xi.p_y * theta.y * fy)
    )
    return FieldFactors(
        frequency, aspect, length, phase, radial, angle, sinc_arg, length_radial
    )


def scatterer_field(
    theta: ScattererParams, grid: FrequencyGrid, xi: ImagingParams
) -> np.ndarray:
    """Backscattered field ``E_i(f_x, f_y; theta)`` of one scatterer."""
    return theta.A * field_factors(theta, grid, xi).unit_field


def total_field(
    thetas: ScattererSet, grid: FrequencyGrid, xi: ImagingParams
) -> np.ndarray:
    """Entry-wise complex sum of :func:`scatterer_field` over *thetas*."""
    total = np.zeros(grid.shape, dtype=np.complex128)
    for theta in thetas:
        total += scatterer_field(theta, grid, xi)
    return total


# ---------------------------------------------------------------------------
# Image formation
# ---------------------------------------------------------------------------


def centered_idft2(values: np.ndarray) -> np.ndarray:
    """Inverse DFT of period ``(m - 1, n - 1)`` over the last two axes.

    The output keeps the input's ``(m, n)`` trailing shape; row ``m - 1``
    and column ``n - 1`` repeat row/column 0. Normalized by ``1 / (m n)``.
    """
    m, n = values.shape[-2:]
    folded = np.array(values[..., : m - 1, : n - 1], dtype=np.complex128)
    folded[..., 0, :] += values[..., m - 1, : n - 1]
    folded[..., :, 0] += values[..., : m - 1, n - 1]
    folded[..., 0, 0] += values[..., m - 1, n - 1]
    image = np.fft.ifft2(folded, axes=(-2, -1)) * ((m - 1) * (n - 1) / (m * n))
    pad = [(0, 0)] * (values.ndim - 2) + [(0, 1), (0, 1)]
    return np.pad(image, pad, mode="wrap")


def render_complex(thetas: ScattererSet, xi: ImagingParams) -> np.ndarray:
    """Complex image before the magnitude is taken."""
    grid = cached_grid(xi)
    return centered_idft2(total_field(thetas, grid, xi))


def render_image(thetas: ScattererSet, xi: Optional[ImagingParams] = None) -> np.ndarray:
    """Render *thetas* into a non-negative ``(m*, n*)`` SAR amplitude image."""
    xi = xi or ImagingParams()
    if len(thetas) == 0:
        return np.zeros(xi.shape)
    return np.abs(render_complex(thetas, xi))


def render_window(
    thetas: ScattererSet, xi: ImagingParams, shape: Tuple[int, int]
) -> np.ndarray:
    """Return the ``shape``-sized window of the render anchored at pixel (0, 0)."""
    check_window(shape, xi)
    return render_image(thetas, xi)[: shape[0], : shape[1]]


def check_window(shape: Tuple[int, int], xi: ImagingParams) -> None:
    h, w = shape
    m, n = xi.shape
    if h > m or w > n:
        raise ParameterError(
            f"Image of shape {shape} does not fit the {m}x{n} imaging grid"
        )
