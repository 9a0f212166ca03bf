"""
Datasets and file formats.

* Synthetic SAR-like scenes: one bright convex polygon per image, a dark
  shadow cast away from a fixed illumination direction, multiplicative
  exponential speckle, and a ground-truth mask of the target pixels.
* 88x88 centre / random crops with mask translation.
* Threshold segmentation fallback for images without a mask.
* 16-bit PGM (P5) images with a JSON scale sidecar, PBM (P4) masks and a
  JSON manifest tying them together.
* A best-effort reader for Phoenix-style (MSTAR) file headers.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from .errors import FormatError, ParameterError, UnsupportedFormatError
from .positioning import TargetMask


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CROP_SIZE = 88
PGM_MAXVAL = 65535

BACKGROUND_LEVEL = 0.1
TARGET_LEVEL = 1.0
SHADOW_LEVEL = 0.03
# Speckled intensities are clipped here before max-normalization, so the
# normalizing peak is the same for every speckled scene.
SATURATION_LEVEL = 1.5
# Illumination arrives from -x, so shadows extend towards +x (down the rows).
SHADOW_DIRECTION = (1.0, 0.0)

_HEXAGON = tuple(
    (math.cos(math.pi / 3 * k), math.sin(math.pi / 3 * k)) for k in range(6)
)
_OCTAGON = tuple(
    (math.cos(math.pi / 4 * k + math.pi / 8), math.sin(math.pi / 4 * k + math.pi / 8))
    for k in range(8)
)


@dataclass(frozen=True)
class ShapeTemplate:
    """A convex polygon in unit coordinates and the scale range (pixels) it is drawn at."""

    name: str
    vertices: Tuple[Tuple[float, float], ...]
    scale_range: Tuple[float, float]


# Target areas in pixels: square 225-276, octagon 407-478, bar 555-635,
# triangle 924-1012, diamond 1009-1116, hexagon 1497-1690. The default four
# classes differ in area by at least a factor of 1.45.
DEFAULT_TEMPLATES: Tuple[ShapeTemplate, ...] = (
    ShapeTemplate("square", ((-1, -1), (-1, 1), (1, 1), (1, -1)), (7.5, 8.3)),
    ShapeTemplate("bar", ((-0.3, -1), (-0.3, 1), (0.3, 1), (0.3, -1)), (21.5, 23.0)),
    ShapeTemplate("triangle", ((-1, -1), (-1, 1), (1, 0)), (21.5, 22.5)),
    ShapeTemplate("hexagon", _HEXAGON, (24.0, 25.5)),
    ShapeTemplate("diamond", ((-1, 0), (0, 0.6), (1, 0), (0, -0.6)), (29.0, 30.5)),
    ShapeTemplate("octagon", _OCTAGON, (12.0, 13.0)),
)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """An image, its target mask and its class label."""

    image: np.ndarray = field(repr=False)
    mask: TargetMask = field(repr=False)
    label: int
    id: str

    def __post_init__(self) -> None:
        if tuple(self.image.shape) != tuple(self.mask.shape):
            raise ParameterError(
                f"{self.id}: mask shape {self.mask.shape} differs from image shape {self.image.shape}"
            )


@dataclass(frozen=True)
class SynthConfig:
    """Settings for :func:`generate_synthetic_dataset`.

    Parameters
    ----------
    num_classes:
        Number of classes ``K``; one polygon template per class.
    images_per_class:
        Samples generated for every class.
    image_size:
        Side length of the square scenes.
    speckle:
        Speckle strength in ``[0, 1]``; each pixel is multiplied by
        ``(1 - s) + s * E`` with ``E ~ Exp(1)`` and clipped at
        ``SATURATION_LEVEL``.
    rotation_range:
        Target rotation is uniform in ``[-r, r]`` degrees.
    max_shift:
        Target centre is shifted by up to this many pixels per axis.
    shadow_length:
        Shadow extrusion length in pixels.
    """

    num_classes: int = 4
    images_per_class: int = 100
    image_size: int = 128
    speckle: float = 0.5
    rotation_range: float = 10.0
    max_shift: float = 4.0
    shadow_length: float = 10.0
    seed: int = 0
    templates: Tuple[ShapeTemplate, ...] = DEFAULT_TEMPLATES

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ParameterError("num_classes must be at least 2")
        if self.num_classes > len(self.templates):
            raise ParameterError(
                f"num_classes {self.num_classes} exceeds the {len(self.templates)} shape templates"
            )
        if self.image_size < 32:
            raise ParameterError("image_size must be at least 32")
        if self.images_per_class < 1:
            raise ParameterError("images_per_class must be at least 1")
        if not 0.0 <= self.speckle <= 1.0:
            raise ParameterError("speckle must lie in [0, 1]")
        reach = (
            max(t.scale_range[1] for t in self.templates[: self.num_classes])
            + self.max_shift + self.shadow_length + 2
        )
        if reach >= self.image_size / 2:
            raise ParameterError("targets and shadows would not fit inside the image")


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


def _fill(points_xy: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Rasterize a polygon given in (x=row, y=col) coordinates."""
    canvas = np.zeros(shape, dtype=np.uint8)
    # OpenCV wants (col, row) vertices; 4 fractional bits keep sub-pixel accuracy.
    pts = np.round(points_xy[:, ::-1] * 16).astype(np.int32)
    cv2.fillPoly(canvas, [pts], 1, lineType=cv2.LINE_8, shift=4)
    return canvas.astype(bool)


def render_scene(
    template: ShapeTemplate,
    size: int,
    scale: float,
    rotation_deg: float,
    center: Tuple[float, float],
    speckle: float,
    shadow_length: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(image, target)`` for one polygonal target.

    ``image`` is normalized to ``[0, 1]``; ``target`` is the boolean
    polygon raster.
    """
    angle = math.radians(rotation_deg)
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    vertices = np.asarray(template.vertices, dtype=np.float64) * scale @ rot.T
    vertices += np.asarray(center)
    target = _fill(vertices, (size, size))

    swept = np.vstack([vertices, vertices + shadow_length * np.asarray(SHADOW_DIRECTION)])
    hull = cv2.convexHull(np.round(swept[:, ::-1] * 16).astype(np.int32))[:, 0, ::-1] / 16.0
    shadow = _fill(hull, (size, size)) & ~target

    scene = np.full((size, size), BACKGROUND_LEVEL)
    scene[shadow] = SHADOW_LEVEL
    scene[target] = TARGET_LEVEL
    if speckle > 0:
        scene *= (1.0 - speckle) + speckle * rng.exponential(1.0, scene.shape)
        scene = np.minimum(scene, SATURATION_LEVEL)
    return scene / scene.max(), target


def generate_synthetic_dataset(config: Optional[SynthConfig] = None) -> List[LabeledSample]:
    """Generate ``num_classes * images_per_class`` labelled scenes, deterministic per seed."""
    config = config or SynthConfig()
    config.validate()
    rng = np.random.default_rng(config.seed)
    size = config.image_size
    samples: List[LabeledSample] = []
    for index in range(config.num_classes * config.images_per_class):
        label = index % config.num_classes
        template = config.templates[label]
        scale = rng.uniform(*template.scale_range)
        rotation = rng.uniform(-config.rotation_range, config.rotation_range)
        center = (
            size / 2 + rng.uniform(-config.max_shift, config.max_shift),
            size / 2 + rng.uniform(-config.max_shift, config.max_shift),
        )
        image, target = render_scene(
            template, size, scale, rotation, center, config.speckle, config.shadow_length, rng
        )
        samples.append(
            LabeledSample(
                image=image,
                mask=TargetMask.from_array(target),
                label=label,
                id=f"synth-{index:04d}",
            )
        )
    logger.info("generated %d synthetic samples (%d classes)", len(samples), config.num_classes)
    return samples


# ---------------------------------------------------------------------------
# Crops and segmentation
# ---------------------------------------------------------------------------


def _crop(image: np.ndarray, mask: TargetMask, size: int, dx: int, dy: int):
    cropped = np.array(image[dx:dx + size, dy:dy + size])
    return cropped, mask.translated(-dx, -dy, (size, size))


def _check_crop(image: np.ndarray, size: int) -> None:
    h, w = image.shape
    if h < size or w < size:
        raise ParameterError(f"image of shape {image.shape} is smaller than crop size {size}")


def center_crop(
    image: np.ndarray, mask: TargetMask, size: int = CROP_SIZE
) -> Tuple[np.ndarray, TargetMask]:
    """Centred ``size x size`` crop; offsets are ``floor((dim - size) / 2)``."""
    _check_crop(image, size)
    h, w = image.shape
    return _crop(image, mask, size, (h - size) // 2, (w - size) // 2)


def random_crop(
    image: np.ndarray,
    mask: TargetMask,
    size: int = CROP_SIZE,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, TargetMask]:
    """Crop at offsets drawn uniformly from ``[0, dim - size]``."""
    _check_crop(image, size)
    rng = rng if rng is not None else np.random.default_rng()
    h, w = image.shape
    dx = int(rng.integers(0, h - size + 1))
    dy = int(rng.integers(0, w - size + 1))
    return _crop(image, mask, size, dx, dy)


def threshold_segment(image: np.ndarray, threshold: float = 0.5) -> TargetMask:
    """Largest 4-connected component of pixels ``>= threshold * max``."""
    if not 0.0 < threshold < 1.0:
        raise ParameterError("threshold must lie in (0, 1)")
    image = np.asarray(image, dtype=np.float64)
    peak = image.max() if image.size else 0.0
    if peak <= 0:
        return TargetMask(frozenset(), image.shape)
    binary = (image >= threshold * peak).astype(np.uint8)
    count, labels, stats, _ = cv2.connectedComponentsWithStats(binary, connectivity=4)
    if count < 2:
        return TargetMask(frozenset(), image.shape)
    largest = 1 + int(np.argmax(stats[1:, cv2.CC_STAT_AREA]))
    return TargetMask.from_array(labels == largest)


def prepare_split(
    samples: Sequence[LabeledSample],
    test_fraction: float = 0.25,
    size: int = CROP_SIZE,
    seed: int = 0,
) -> Tuple[List[LabeledSample], List[LabeledSample]]:
    """Stratified train/test split; random crops for training, centre crops for testing."""
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train: List[LabeledSample] = []
    test: List[LabeledSample] = []
    for label in sorted({s.label for s in samples}):
        members = [s for s in samples if s.label == label]
        order = rng.permutation(len(members))
        n_test = int(round(len(members) * test_fraction))
        for rank, idx in enumerate(order):
            sample = members[idx]
            if rank < n_test:
                image, mask = center_crop(sample.image, sample.mask, size)
                test.append(LabeledSample(image, mask, sample.label, sample.id))
            else:
                image, mask = random_crop(sample.image, sample.mask, size, rng)
                train.append(LabeledSample(image, mask, sample.label, sample.id))
    train.sort(key=lambda s: s.id)
    test.sort(key=lambda s: s.id)
    return train, test


# ---------------------------------------------------------------------------
# Netpbm helpers
# ---------------------------------------------------------------------------


def _read_header(data: bytes, count: int, where: str) -> Tuple[List[bytes], int]:
    """Read *count* whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset of the first data byte.
    """
    tokens: List[bytes] = []
    pos = 0
    names = ("magic", "width", "height", "maxval")
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end == -1:
                raise FormatError(names[len(tokens)], "header ends inside a comment", where)
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError(names[len(tokens)], "header is truncated", where)
        tokens.append(data[start:pos])
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError(names[count - 1], "missing whitespace after header", where)
    return tokens, pos + 1


def _header_int(token: bytes, name: str, where: str, upper: int = 1 << 20) -> int:
    if not token.isdigit():
        raise FormatError(name, f"expected a positive integer, got {token[:20]!r}", where)
    value = int(token)
    if not 0 < value <= upper:
        raise FormatError(name, f"value {value} out of range", where)
    return value


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_image(image: np.ndarray, path: PathLike) -> Path:
    """Write *image* as a 16-bit PGM plus a ``{"scale", "width", "height"}`` sidecar.

    Samples are ``round(value / scale * 65535)`` with ``scale`` the image
    maximum; negative values cannot be represented and are clipped to 0.
    """
    path = Path(path)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ParameterError("only two-dimensional images can be saved")
    if not np.all(np.isfinite(image)):
        raise ParameterError("image contains non-finite values")
    if np.any(image < 0):
        logger.warning("%s: clipping %d negative pixels to 0", path, int((image < 0).sum()))
        image = np.clip(image, 0.0, None)
    peak = float(image.max()) if image.size else 0.0
    scale = peak if peak > 0 else 1.0
    height, width = image.shape
    samples = np.round(image / scale * PGM_MAXVAL).astype(">u2")
    header = f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii")
    path.write_bytes(header + samples.tobytes())
    sidecar = {"scale": scale, "width": width, "height": height}
    _sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    return path


def load_image(path: PathLike) -> np.ndarray:
    """Read an image written by :func:`save_image`."""
    path = Path(path)
    where = str(path)
    data = path.read_bytes()
    tokens, offset = _read_header(data, 4, where)
    if tokens[0] != b"P5":
        raise FormatError("magic", f"expected P5, got {tokens[0][:8]!r}", where)
    width = _header_int(tokens[1], "width", where)
    height = _header_int(tokens[2], "height", where)
    maxval = _header_int(tokens[3], "maxval", where, upper=PGM_MAXVAL)
    dtype = ">u2" if maxval > 255 else "u1"
    expected = width * height * np.dtype(dtype).itemsize
    if len(data) - offset != expected:
        raise FormatError(
            "data", f"expected {expected} sample bytes, found {len(data) - offset}", where
        )
    samples = np.frombuffer(data, dtype=dtype, count=width * height, offset=offset)
    if np.any(samples > maxval):
        raise FormatError("data", "sample exceeds maxval", where)

    scale = 1.0
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text())
            scale = float(meta["scale"])
            side_w, side_h = int(meta["width"]), int(meta["height"])
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError("sidecar", f"unreadable sidecar: {exc}", str(sidecar)) from exc
        if (side_w, side_h) != (width, height):
            raise FormatError("sidecar", "dimensions disagree with the PGM header", str(sidecar))
        if not (math.isfinite(scale) and scale > 0):
            raise FormatError("sidecar", "scale must be positive", str(sidecar))
    return samples.reshape(height, width).astype(np.float64) / maxval * scale


def save_mask(mask: TargetMask, path: PathLike) -> Path:
    """Write *mask* as a binary PBM (P4); bit 1 marks a target pixel."""
    path = Path(path)
    height, width = mask.shape
    packed = np.packbits(mask.to_array().astype(np.uint8), axis=1)
    header = f"P4\n{width} {height}\n".encode("ascii")
    path.write_bytes(header + packed.tobytes())
    return path


def load_mask(path: PathLike) -> TargetMask:
    """Read a PBM (P4) mask."""
    path = Path(path)
    where = str(path)
    data = path.read_bytes()
    tokens, offset = _read_header(data, 3, where)
    if tokens[0] != b"P4":
        raise FormatError("magic", f"expected P4, got {tokens[0][:8]!r}", where)
    width = _header_int(tokens[1], "width", where)
    height = _header_int(tokens[2], "height", where)
    row_bytes = (width + 7) // 8
    if len(data) - offset != row_bytes * height:
        raise FormatError(
            "data", f"expected {row_bytes * height} bytes, found {len(data) - offset}", where
        )
    packed = np.frombuffer(data, dtype=np.uint8, offset=offset).reshape(height, row_bytes)
    bits = np.unpackbits(packed, axis=1)[:, :width]
    return TargetMask.from_array(bits.astype(bool))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def write_dataset(samples: Sequence[LabeledSample], directory: PathLike) -> Path:
    """Write images, masks and ``manifest.json`` under *directory*."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in samples:
        image_rel = f"images/{sample.id}.pgm"
        mask_rel = f"masks/{sample.id}.pbm"
        save_image(sample.image, directory / image_rel)
        save_mask(sample.mask, directory / mask_rel)
        entries.append(
            {"id": sample.id, "image_path": image_rel, "mask_path": mask_rel, "label": sample.label}
        )
    return save_manifest(entries, directory / "manifest.json")


def save_manifest(entries: Sequence[Dict], path: PathLike) -> Path:
    path = Path(path)
    path.write_text(json.dumps(list(entries), indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path: PathLike) -> List[Dict]:
    """Read and validate a manifest: a JSON list of ``{id, image_path, mask_path, label}``."""
    path = Path(path)
    where = str(path)
    try:
        entries = json.loads(path.read_text())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("manifest", f"invalid JSON: {exc}", where) from exc
    if not isinstance(entries, list):
        raise FormatError("manifest", "top level must be a list", where)
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise FormatError(f"entry[{i}]", "must be an object", where)
        for key, kind in (("id", str), ("image_path", str), ("mask_path", str), ("label", int)):
            if not isinstance(entry.get(key), kind) or isinstance(entry.get(key), bool):
                raise FormatError(f"entry[{i}].{key}", f"missing or not a {kind.__name__}", where)
        if entry["label"] < 0:
            raise FormatError(f"entry[{i}].label", "must be non-negative", where)
    return entries


def read_dataset(manifest_path: PathLike) -> List[LabeledSample]:
    """Load every sample listed in a manifest."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    samples = []
    for entry in load_manifest(manifest_path):
        samples.append(
            LabeledSample(
                image=load_image(base / entry["image_path"]),
                mask=load_mask(base / entry["mask_path"]),
                label=entry["label"],
                id=entry["id"],
            )
        )
    return samples


# ---------------------------------------------------------------------------
# Phoenix (MSTAR) headers
# ---------------------------------------------------------------------------


PHOENIX_SENTINEL = b"[PhoenixHeaderVer"
PHOENIX_END = b"[EndofPhoenixHeader]"


@dataclass
class MstarHeader:
    """Parsed Phoenix header; ``magnitude`` is decoded only when dimensions are declared."""

    fields: Dict[str, str]
    data_offset: int
    magnitude: Optional[np.ndarray] = field(default=None, repr=False)


def parse_mstar_header(data: bytes) -> MstarHeader:
    """Parse a Phoenix-style header into key/value pairs and a data offset.

    The data offset is ``PhoenixHeaderLength`` plus ``NativeHeaderLength``
    when the latter is declared. When ``NumberOfColumns`` and
    ``NumberOfRows`` are present and enough bytes follow, the first
    ``rows * cols`` big-endian float32 samples are returned as the
    magnitude image.
    """
    if not data.startswith(PHOENIX_SENTINEL):
        raise UnsupportedFormatError("sentinel", "missing [PhoenixHeaderVer sentinel")
    end = data.find(PHOENIX_END)
    text = data[: end if end != -1 else len(data)].decode("latin-1")

    fields: Dict[str, str] = {}
    for line in text.splitlines()[1:]:
        if "=" not in line:
            continue
        key, _, value = line.partition("=")
        if key.strip():
            fields[key.strip()] = value.strip()

    def declared_int(name: str, required: bool) -> Optional[int]:
        raw = fields.get(name)
        if raw is None:
            if required:
                raise UnsupportedFormatError(name, "field is missing")
            return None
        if not (raw.isascii() and raw.isdigit()):
            raise UnsupportedFormatError(name, f"not a non-negative integer: {raw[:20]!r}")
        return int(raw)

    offset = declared_int("PhoenixHeaderLength", True) + (declared_int("NativeHeaderLength", False) or 0)
    header = MstarHeader(fields=fields, data_offset=offset)

    cols = declared_int("NumberOfColumns", False)
    rows = declared_int("NumberOfRows", False)
    if cols and rows:
        needed = offset + 4 * rows * cols
        if len(data) >= needed:
            header.magnitude = (
                np.frombuffer(data, dtype=">f4", count=rows * cols, offset=offset)
                .astype(np.float64)
                .reshape(rows, cols)
            )
        else:
            logger.warning("Phoenix data shorter than %d bytes; samples not decoded", needed)
    return header
