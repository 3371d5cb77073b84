"""Projective point-to-plane ICP between panoramas."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import geometry as g
from .errors import DegenerateGeometryError, IllConditionedError, NumericalFailureError
from .panorama import DepthPanorama, downsample

MAX_CONDITION = 1e12
MIN_CORRESPONDENCES = 6


@dataclass(frozen=True)
class SimilarityFilter:
    """Correspondence gate: point distance at most ``max_distance`` and normal angle at most ``max_angle``."""

    max_distance: float = 0.5
    max_angle: float = math.radians(30.0)

    def __post_init__(self):
        if not self.max_distance > 0:
            raise ValueError("max_distance must be positive")
        if not 0 < self.max_angle <= math.pi / 2:
            raise ValueError("max_angle must lie in (0, pi/2]")

    @property
    def cos_angle(self) -> float:
        return math.cos(self.max_angle)


@dataclass
class CorrespondenceSet:
    """Accepted pairs with their geometry in the target frame, plus gate statistics."""

    source_pixels: np.ndarray  # flat source pixel indices of accepted pairs
    target_pixels: np.ndarray
    source_points: np.ndarray  # transformed into the target frame
    target_points: np.ndarray
    target_normals: np.ndarray
    candidates: int
    rejected_distance: int
    rejected_angle: int

    @property
    def accepted(self) -> int:
        return len(self.source_pixels)

    def __len__(self) -> int:
        return self.accepted


@dataclass
class RegistrationResult:
    pose: g.Pose
    inliers: int
    valid: int
    iterations: int
    residual: float
    converged: bool

    @property
    def quality(self) -> float:
        return self.inliers / self.valid if self.valid else 0.0


def _source_arrays(source: DepthPanorama):
    idx = np.flatnonzero((source.valid & source.normal_valid).ravel())
    # unproject only the used pixels
    pts = source.model.ray_directions().reshape(-1, 3)[idx] * source.depth.ravel()[idx, None].astype(float)
    nrm = source.normal.reshape(-1, 3)[idx].astype(float)
    return idx, np.ascontiguousarray(pts), np.ascontiguousarray(nrm)


def _associate(src_pts, src_nrm, target: DepthPanorama, pose: g.Pose, flt: SimilarityFilter, accumulate=True):
    m = target.model
    mask = np.zeros(len(src_pts), dtype=np.bool_)
    ata, atb, sum_sq, counts = K.associate_accumulate(
        src_pts, src_nrm, pose.rotation, np.asarray(pose.t, float),
        target.depth, target.normal, m.ray_directions(), m.el_max, m.d_el,
        flt.max_distance, flt.cos_angle, accumulate, mask,
    )
    return ata, atb, sum_sq, counts, mask


def projective_correspondences(source: DepthPanorama, target: DepthPanorama, pose: g.Pose, flt: SimilarityFilter | None = None) -> CorrespondenceSet:
    """Pair each valid source pixel with the target pixel it projects onto under ``pose``."""
    flt = flt or SimilarityFilter()
    idx, pts, nrm = _source_arrays(source)
    _, _, _, counts, mask = _associate(pts, nrm, target, pose, flt, accumulate=False)
    moved = g.transform_points(pose, pts[mask])
    rows, cols, _ = _target_pixels(target, moved)
    tpix = rows * target.model.width + cols
    depth = target.depth.ravel()[tpix].astype(float)
    tpts = target.model.ray_directions().reshape(-1, 3)[tpix] * depth[:, None]
    return CorrespondenceSet(
        idx[mask], tpix, moved, tpts, target.normal.reshape(-1, 3)[tpix].astype(float),
        int(counts[0]), int(counts[2]), int(counts[3]),
    )


def _target_pixels(target: DepthPanorama, pts: np.ndarray):
    m = target.model
    rows = np.empty(len(pts), dtype=np.int64)
    cols = np.empty(len(pts), dtype=np.int64)
    for k, p in enumerate(pts):
        r, c, rng = K.project_one(p[0], p[1], p[2], m.width, m.height, m.el_max, m.d_el)
        rows[k], cols[k] = K.pixel_of(r, c, m.width, m.height)
    return rows, cols, None


def _solve_normal_equations(ata: np.ndarray, atb: np.ndarray, estimate=None) -> np.ndarray:
    if not (np.all(np.isfinite(ata)) and np.all(np.isfinite(atb))):
        raise NumericalFailureError("non-finite normal equations", estimate)
    evals, evecs = np.linalg.eigh(ata)
    top = evals[-1]
    if top <= 0.0:
        raise IllConditionedError("empty normal equations", math.inf, evecs.T, estimate)
    cond = top / evals[0] if evals[0] > 0 else math.inf
    if cond > MAX_CONDITION:
        weak = evecs[:, evals < top / MAX_CONDITION].T
        raise IllConditionedError(
            f"point-to-plane system is ill-conditioned (condition {cond:.3g}); "
            f"{len(weak)} unconstrained direction(s)",
            cond, weak, estimate,
        )
    delta = -np.linalg.solve(ata, atb)
    if not np.all(np.isfinite(delta)):
        raise NumericalFailureError("non-finite twist update", estimate)
    return delta


def solve_point_to_plane_step(corr: CorrespondenceSet) -> np.ndarray:
    """Least-squares twist ``(dtheta, dt)`` reducing the point-to-plane residuals.

    Rows are sorted into a canonical order before accumulation, so the
    result does not depend on how the pairs are ordered.
    """
    if corr.accepted < MIN_CORRESPONDENCES:
        raise DegenerateGeometryError(f"only {corr.accepted} correspondences; need {MIN_CORRESPONDENCES}")
    x = np.asarray(corr.source_points, float)
    t = np.asarray(corr.target_points, float)
    n = np.asarray(corr.target_normals, float)
    order = np.lexsort(np.concatenate([x, t, n], axis=1).T[::-1])
    x, t, n = x[order], t[order], n[order]
    r = np.einsum("ij,ij->i", x - t, n)
    jac = np.concatenate([np.cross(x, n), n], axis=1)
    return _solve_normal_equations(jac.T @ jac, jac.T @ r)


def icp_point_to_plane(
    source: DepthPanorama,
    target: DepthPanorama,
    init: g.Pose | None = None,
    flt: SimilarityFilter | None = None,
    max_iterations: int = 30,
    tolerance: float = 1e-4,
    intensity_threshold: float = 0.0,
    pyramid: bool = False,
    history: list | None = None,
) -> RegistrationResult:
    """Register ``source`` onto ``target``; the returned pose maps source coordinates into the target frame.

    ``history``, when given, receives the pose after every iteration.
    """
    flt = flt or SimilarityFilter()
    pose = init if init is not None else g.Pose.identity()
    used = 0
    if pyramid:
        coarse = icp_point_to_plane(
            downsample(source, 4), downsample(target, 4), pose, flt, max_iterations, tolerance,
            intensity_threshold, pyramid=False,
        )
        pose = coarse.pose
        used = coarse.iterations
    _, pts, nrm = _source_arrays(source)
    valid = int(np.count_nonzero(source.valid & (source.intensity > intensity_threshold)))
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        ata, atb, _, counts, _ = _associate(pts, nrm, target, pose, flt)
        if counts[1] < MIN_CORRESPONDENCES:
            raise DegenerateGeometryError(
                f"only {int(counts[1])} correspondences at iteration {it}", pose
            )
        delta = _solve_normal_equations(ata, atb, pose)
        pose = g.compose(g.exp(delta), pose)
        if history is not None:
            history.append(pose)
        if float(np.linalg.norm(delta)) < tolerance:
            converged = True
            break
    _, _, sum_sq, counts, mask = _associate(pts, nrm, target, pose, flt, accumulate=False)
    if not math.isfinite(sum_sq):
        raise NumericalFailureError("non-finite residual", pose)
    # quality counts only sweep pixels that pass the intensity floor
    if intensity_threshold > 0.0:
        idx, _, _ = _source_arrays(source)
        bright = source.intensity.ravel()[idx] > intensity_threshold
        inliers = int(np.count_nonzero(mask & bright))
    else:
        inliers = int(counts[1])
    rms = math.sqrt(sum_sq / counts[1]) if counts[1] else 0.0
    return RegistrationResult(pose, inliers, valid, used + it, rms, converged)


def alignment_score(source: DepthPanorama, target: DepthPanorama, pose: g.Pose, flt: SimilarityFilter | None = None) -> float:
    """Fraction of valid source pixels passing the similarity gate under ``pose``."""
    flt = flt or SimilarityFilter()
    _, pts, nrm = _source_arrays(source)
    valid = source.valid_count()
    if valid == 0:
        return 0.0
    _, _, _, counts, _ = _associate(pts, nrm, target, pose, flt, accumulate=False)
    return int(counts[1]) / valid
