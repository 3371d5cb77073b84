"""Panoramic depth images: projection, construction, normals, smoothing.

Pixels are laid out on an equirectangular grid. Column ``j`` is centred on
azimuth ``2*pi*j/W`` (counter-clockwise from +x); row ``i`` is centred on
elevation ``el_max - (i + 0.5) * (el_max - el_min) / H``. Continuous
coordinates put pixel centres on integers.
"""

from __future__ import annotations

import io
import math
import struct
import zlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels as K
from .errors import IntegrityError, OutOfBoundsError

INVALID_DEPTH = 0.0
EDGE_ABS = 0.5
EDGE_REL = 0.02
CREASE_ANGLE = math.radians(45.0)


@dataclass(frozen=True)
class ProjectionModel:
    width: int
    height: int
    el_min: float = -math.pi / 4
    el_max: float = math.pi / 4
    max_range: float = 120.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"panorama dimensions must be positive, got {self.width}x{self.height}")
        if not self.el_min < self.el_max:
            raise ValueError("el_min must be below el_max")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    @property
    def d_el(self) -> float:
        return (self.el_max - self.el_min) / self.height

    @property
    def d_az(self) -> float:
        return 2.0 * math.pi / self.width

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    def ray_directions(self) -> np.ndarray:
        """Unit ray through every pixel centre, shape (H, W, 3). Read-only."""
        return _ray_table(self)

    def scaled(self, factor: int) -> ProjectionModel:
        if self.width % factor or self.height % factor:
            raise ValueError(f"{self.width}x{self.height} not divisible by {factor}")
        return ProjectionModel(
            self.width // factor, self.height // factor, self.el_min, self.el_max, self.max_range
        )

    @classmethod
    def preset(cls, name: str, **kwargs) -> ProjectionModel:
        sizes = {"2048x256": (2048, 256), "1024x128": (1024, 128), "high": (2048, 256), "low": (1024, 128)}
        if name not in sizes:
            raise ValueError(f"unknown resolution preset {name!r}; choose 2048x256 or 1024x128")
        w, h = sizes[name]
        return cls(w, h, **kwargs)

    @classmethod
    def for_sensor(cls, columns: int, beams: int, vertical_fov: float, max_range: float = 120.0):
        """Model whose rows are centred on uniformly spaced beam elevations."""
        step = vertical_fov / (beams - 1)
        half = vertical_fov / 2 + step / 2
        return cls(columns, beams, -half, half, max_range)


@lru_cache(maxsize=32)
def _ray_table(model: ProjectionModel) -> np.ndarray:
    rows = model.el_max - (np.arange(model.height) + 0.5) * model.d_el
    cols = np.arange(model.width) * model.d_az
    el, az = np.meshgrid(rows, cols, indexing="ij")
    dirs = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
    dirs.setflags(write=False)
    return dirs


def project(model: ProjectionModel, x) -> tuple:
    """Continuous ``(row, col, range)`` of a point.

    Raises :class:`OutOfBoundsError` for points outside the elevation range.
    """
    x = np.asarray(x, dtype=float)
    rng = float(np.linalg.norm(x))
    if rng <= 0.0:
        raise ValueError("cannot project the origin")
    el = math.asin(max(-1.0, min(1.0, x[2] / rng)))
    if el > model.el_max or el < model.el_min:
        raise OutOfBoundsError(f"elevation {math.degrees(el):.3f} deg outside model range")
    az = math.atan2(x[1], x[0])
    col = (az / (2.0 * math.pi) * model.width) % model.width
    row = (model.el_max - el) / model.d_el - 0.5
    return row, col, rng


def unproject(model: ProjectionModel, row: float, col: float, rng: float) -> np.ndarray:
    if rng <= 0.0:
        raise ValueError(f"range must be positive, got {rng}")
    if not (-0.5 <= row <= model.height - 0.5):
        raise OutOfBoundsError(f"row {row} outside image")
    el = model.el_max - (row + 0.5) * model.d_el
    az = col / model.width * 2.0 * math.pi
    return rng * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def project_many(model: ProjectionModel, pts: np.ndarray):
    """Vectorised projection; returns (row, col, range) arrays without bounds checks."""
    pts = np.asarray(pts, dtype=float)
    rng = np.linalg.norm(pts, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        el = np.arcsin(np.clip(pts[..., 2] / rng, -1.0, 1.0))
    az = np.arctan2(pts[..., 1], pts[..., 0])
    col = np.mod(az / (2.0 * np.pi) * model.width, model.width)
    row = (model.el_max - el) / model.d_el - 0.5
    return row, col, rng


@dataclass
class DepthPanorama:
    """Depth, intensity, normal, and fusion-weight images on one projection model.

    Invalid depth is stored as ``0``; invalid normals are the zero vector.
    """

    model: ProjectionModel
    depth: np.ndarray
    intensity: np.ndarray
    normal: np.ndarray
    weight: np.ndarray

    @classmethod
    def empty(cls, model: ProjectionModel) -> DepthPanorama:
        h, w = model.shape
        return cls(
            model,
            np.zeros((h, w), np.float32),
            np.zeros((h, w), np.float32),
            np.zeros((h, w, 3), np.float32),
            np.zeros((h, w), np.uint8),
        )

    def copy(self) -> DepthPanorama:
        return DepthPanorama(
            self.model, self.depth.copy(), self.intensity.copy(), self.normal.copy(), self.weight.copy()
        )

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0.0

    @property
    def normal_valid(self) -> np.ndarray:
        n = self.normal
        return (n[..., 0] != 0.0) | (n[..., 1] != 0.0) | (n[..., 2] != 0.0)

    def points(self) -> np.ndarray:
        """Unprojected pixel-centre points, (H, W, 3); invalid pixels give the origin."""
        return self.model.ray_directions() * self.depth[..., None].astype(float)

    def invalidate(self, mask: np.ndarray) -> None:
        self.depth[mask] = INVALID_DEPTH
        self.intensity[mask] = 0.0
        self.normal[mask] = 0.0
        self.weight[mask] = 0

    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))


@dataclass
class ValidityMask:
    mask: np.ndarray
    count: int = field(init=False)

    def __post_init__(self):
        self.count = int(np.count_nonzero(self.mask))


def build_panorama(model: ProjectionModel, points, intensity=None) -> DepthPanorama:
    """Z-buffer points into a panorama; the nearest point wins each pixel.

    Exact range ties go to the lexicographically smaller point, so the result
    does not depend on input order.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    if intensity is None:
        intensity = np.ones(len(pts))
    inten = np.ascontiguousarray(np.asarray(intensity, dtype=float).reshape(-1))
    pano = DepthPanorama.empty(model)
    if len(pts):
        depth, inten_img = K.zbuffer(
            pts, inten, model.width, model.height, model.el_max, model.d_el, model.max_range
        )
        pano.depth[:] = depth
        pano.intensity[:] = inten_img
        pano.weight[depth > 0] = 1
    return pano


def estimate_normals(pano: DepthPanorama, edge_abs: float = EDGE_ABS, edge_rel: float = EDGE_REL, mask=None):
    """Per-pixel normals from the cross product with right and down neighbours.

    Normals face the sensor. A pixel gets no normal when it or a neighbour is
    invalid, or when the depth gap to a neighbour exceeds
    ``edge_abs + edge_rel * depth``.
    """
    if mask is None:
        mask = np.ones(pano.model.shape, dtype=np.bool_)
    return K.normals_from_depth(
        pano.depth, pano.model.ray_directions(), edge_abs, edge_rel, np.ascontiguousarray(mask)
    )


def smooth_normals_atrous(
    pano: DepthPanorama,
    passes: int = 3,
    edge_abs: float = EDGE_ABS,
    edge_rel: float = EDGE_REL,
    normals=None,
    mask=None,
    crease_angle: float = CREASE_ANGLE,
) -> np.ndarray:
    """Edge-aware a-trous smoothing with a 5x5 B3-spline kernel at dilations 1, 2, 4, ...

    Neighbours across a depth discontinuity contribute nothing. From the
    second pass on, neighbours whose normal differs from the centre normal by
    more than ``crease_angle`` are also skipped. Pixels with depth but no
    normal are filled from their neighbours. Output normals are unit length,
    or zero where no neighbour had a normal.
    """
    n = pano.normal if normals is None else normals
    n = np.ascontiguousarray(n, dtype=np.float32)
    if mask is None:
        mask = np.ones(pano.model.shape, dtype=np.bool_)
    mask = np.ascontiguousarray(mask)
    for k in range(passes):
        # the finest pass runs ungated so noisy normals can average before creases are judged
        gate = -2.0 if k == 0 else math.cos(crease_angle)
        n = K.atrous_pass(n, pano.depth, 1 << k, edge_abs, edge_rel, mask, gate)
    return n


def downsample(pano: DepthPanorama, factor: int, w_max: int = 255) -> DepthPanorama:
    """Block-minimum depth pyramid level; weights summed and saturated at ``w_max``."""
    if factor < 1 or factor & (factor - 1):
        raise ValueError(f"factor must be a power of two, got {factor}")
    model = pano.model.scaled(factor)
    if factor == 1:
        return pano.copy()
    d, i, n, w = K.downsample_min(pano.depth, pano.intensity, pano.normal, pano.weight, factor, w_max)
    return DepthPanorama(model, d, i, n, w)


def valid_count(pano: DepthPanorama, intensity_threshold: float = 0.0) -> ValidityMask:
    """Pixels with valid depth and intensity strictly above the threshold."""
    return ValidityMask(pano.valid & (pano.intensity > intensity_threshold))


def prepare_sweep_panorama(model, points, intensity, passes: int = 3) -> DepthPanorama:
    """Build a panorama, estimate normals, and smooth them."""
    pano = build_panorama(model, points, intensity)
    pano.normal = estimate_normals(pano)
    if passes:
        pano.normal = smooth_normals_atrous(pano, passes)
    return pano


# --- archive record --------------------------------------------------------

_MAGIC = b"PANO"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIddddI")


def write_record(pano: DepthPanorama, fh) -> int:
    """Write one little-endian panorama record; returns bytes written."""
    m = pano.model
    valid = pano.valid_count()
    body = io.BytesIO()
    body.write(np.ascontiguousarray(pano.depth, "<f4").tobytes())
    body.write(np.ascontiguousarray(pano.intensity, "<f4").tobytes())
    body.write(np.ascontiguousarray(pano.normal, "<f4").tobytes())
    body.write(np.ascontiguousarray(pano.weight, "u1").tobytes())
    payload = body.getvalue()
    header = _HEADER.pack(_MAGIC, _VERSION, m.width, m.height, m.el_min, m.el_max, m.max_range, 0.0, valid)
    crc = zlib.crc32(header + payload)
    fh.write(header)
    fh.write(payload)
    fh.write(struct.pack("<I", crc))
    return len(header) + len(payload) + 4


def read_record(fh) -> DepthPanorama:
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise IntegrityError("truncated panorama header")
    magic, version, w, h, el_min, el_max, max_range, _, valid = _HEADER.unpack(raw)
    if magic != _MAGIC or version != _VERSION:
        raise IntegrityError("bad panorama magic/version")
    n = w * h
    size = n * 4 * 2 + n * 12 + n
    payload = fh.read(size)
    tail = fh.read(4)
    if len(payload) != size or len(tail) != 4:
        raise IntegrityError("truncated panorama body")
    if struct.unpack("<I", tail)[0] != zlib.crc32(raw + payload):
        raise IntegrityError("panorama checksum mismatch")
    off = 0
    depth = np.frombuffer(payload, "<f4", n, off).reshape(h, w).astype(np.float32)
    off += 4 * n
    inten = np.frombuffer(payload, "<f4", n, off).reshape(h, w).astype(np.float32)
    off += 4 * n
    normal = np.frombuffer(payload, "<f4", 3 * n, off).reshape(h, w, 3).astype(np.float32)
    off += 12 * n
    weight = np.frombuffer(payload, "u1", n, off).reshape(h, w).copy()
    pano = DepthPanorama(ProjectionModel(w, h, el_min, el_max, max_range), depth, inten, normal, weight)
    if pano.valid_count() != valid:
        raise IntegrityError("valid pixel count does not match header")
    if np.any(weight[~pano.valid]):
        raise IntegrityError("nonzero weight on invalid pixel")
    return pano


def save_panorama(pano: DepthPanorama, path) -> int:
    with open(path, "wb") as fh:
        return write_record(pano, fh)


def load_panorama(path) -> DepthPanorama:
    with open(path, "rb") as fh:
        return read_record(fh)
