"""Keyframe mapping: fusion, keyframe switching, loop closure and the map graph."""

from __future__ import annotations

import enum
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from . import geometry as g
from . import posegraph as pg
from .errors import DegenerateGeometryError, IntegrityError, MissingImuDataError
from .evaluation import Trajectory
from .imu import GravityEstimate, GravityFilter, derotate_sweep, integrate_rotation
from .panorama import (
    DepthPanorama,
    ProjectionModel,
    downsample,
    estimate_normals,
    load_panorama,
    prepare_sweep_panorama,
    save_panorama,
    smooth_normals_atrous,
)
from .registration import SimilarityFilter, alignment_score, icp_point_to_plane

log = logging.getLogger(__name__)


class Decision(enum.Enum):
    CONTINUE = "continue"
    SEEK_CLOSURE_OR_CREATE = "seek"


class ClosureKind(enum.Enum):
    STRONG = "strong"
    WEAK = "weak"
    REJECT = "reject"


class EdgeKind(enum.Enum):
    ODOMETRY = "odometry"
    STRONG = "strong-closure"
    WEAK = "weak-closure"


@dataclass(frozen=True)
class GridSpec:
    """Search lattice of (x, y, yaw) offsets around a prior pose."""

    xy_extent: float = 2.0
    xy_step: float = 0.5
    yaw_extent: float = math.radians(40.0)
    yaw_step: float = math.radians(10.0)
    factor: int = 4

    def offsets(self):
        nxy = int(round(self.xy_extent / self.xy_step))
        nyaw = int(round(self.yaw_extent / self.yaw_step))
        xy = np.arange(-nxy, nxy + 1) * self.xy_step
        yaw = np.arange(-nyaw, nyaw + 1) * self.yaw_step
        return [(x, y, a) for a in yaw for x in xy for y in xy]

    def within_basin(self, seed: g.Pose, refined: g.Pose) -> bool:
        """Whether ICP stayed within two lattice steps of its seed.

        A refinement that travels further left the region the lattice vouched
        for, typically by sliding along a self-similar corridor.
        """
        moved = g.compose(g.inverse(seed), refined)
        return (
            float(np.linalg.norm(moved.t)) <= 2.0 * self.xy_step
            and g.rotation_angle_between(seed, refined) <= 2.0 * self.yaw_step
        )


@dataclass(frozen=True)
class MapperConfig:
    quality_threshold: float = 0.6
    motion_prior: str = "zero-velocity"
    use_imu_rotation: bool = True
    similarity: SimilarityFilter = field(default_factory=SimilarityFilter)
    w_max: int = 10
    closure_radius: float = 15.0
    max_candidates: int = 3
    closure_min_age: float = 20.0
    grid: GridSpec = field(default_factory=GridSpec)
    keyframe_model: ProjectionModel = field(default_factory=lambda: ProjectionModel.preset("1024x128"))
    sensor_fov: float = math.radians(33.0)
    intensity_threshold: float = 0.0
    smoothing_passes: int = 3
    refresh_passes: int = 1
    icp_iterations: int = 30
    icp_tolerance: float = 5e-4
    gravity_alpha: float = 0.02
    odometry_info: tuple = pg.DEFAULT_INFO
    closure_info: tuple = pg.DEFAULT_INFO
    gravity_weight: float = pg.DEFAULT_GRAVITY_WEIGHT
    optimize_iterations: int = 20
    max_consecutive_skips: int = 50
    imu_extrinsic: tuple | None = None  # sensor-to-IMU rotation matrix; None when the frames coincide

    def __post_init__(self):
        if not 0.0 < self.quality_threshold < 1.0:
            raise ValueError("quality threshold must lie in (0, 1)")
        if self.w_max < 1 or self.w_max > 255:
            raise ValueError("w_max must lie in [1, 255]")
        if self.motion_prior not in ("zero-velocity", "zero-acceleration"):
            raise ValueError("motion prior must be zero-velocity or zero-acceleration")
        if self.imu_extrinsic is not None:
            ext = np.asarray(self.imu_extrinsic, dtype=float)
            if ext.shape != (3, 3) or not np.allclose(ext.T @ ext, np.eye(3), atol=1e-6) or np.linalg.det(ext) < 0:
                raise ValueError("imu_extrinsic must be a 3x3 rotation matrix")


@dataclass
class Keyframe:
    id: int
    pose: g.Pose
    gravity: GravityEstimate
    stamp: float
    _panorama: DepthPanorama | None = field(default=None, repr=False)
    path: Path | None = None

    @property
    def panorama(self) -> DepthPanorama:
        if self._panorama is None:
            if self.path is None:
                raise IntegrityError(f"keyframe {self.id} has no panorama")
            try:
                self._panorama = load_panorama(self.path)
            except IntegrityError as exc:
                raise IntegrityError(f"keyframe {self.id}: {exc}") from None
        return self._panorama

    @panorama.setter
    def panorama(self, pano: DepthPanorama) -> None:
        self._panorama = pano

    @property
    def resident(self) -> bool:
        return self._panorama is not None


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    pose: g.Pose  # pose of keyframe j in keyframe i
    kind: EdgeKind


@dataclass
class MapGraph:
    keyframes: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)
    current: int | None = None
    relative: g.Pose = field(default_factory=g.Pose.identity)

    def add_keyframe(self, kf: Keyframe) -> None:
        if kf.id in self.keyframes:
            raise ValueError(f"duplicate keyframe id {kf.id}")
        self.keyframes[kf.id] = kf

    def add_edge(self, edge: Edge) -> None:
        if edge.i not in self.keyframes or edge.j not in self.keyframes:
            raise ValueError("edge endpoints must exist")
        self.edges.append(edge)

    def next_id(self) -> int:
        return max(self.keyframes) + 1 if self.keyframes else 0

    def closure_count(self, kind: EdgeKind | None = None) -> int:
        kinds = (EdgeKind.STRONG, EdgeKind.WEAK) if kind is None else (kind,)
        return sum(e.kind in kinds for e in self.edges)

    def is_connected(self) -> bool:
        if not self.keyframes:
            return True
        adj = {k: set() for k in self.keyframes}
        for e in self.edges:
            adj[e.i].add(e.j)
            adj[e.j].add(e.i)
        start = next(iter(self.keyframes))
        seen, stack = {start}, [start]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.keyframes)

    def problem(self, config: MapperConfig | None = None) -> pg.GraphProblem:
        config = config or MapperConfig()
        poses = {k: kf.pose for k, kf in self.keyframes.items()}
        factors = [
            pg.RelativePoseFactor(
                e.i, e.j, e.pose, config.odometry_info if e.kind is EdgeKind.ODOMETRY else config.closure_info
            )
            for e in self.edges
        ]
        grav = [
            pg.GravityFactor(k, tuple(kf.gravity.down), config.gravity_weight * kf.gravity.weight)
            for k, kf in self.keyframes.items()
        ]
        return pg.GraphProblem(poses, factors, grav, anchor=min(self.keyframes))

    def current_pose(self) -> g.Pose:
        return g.compose(self.keyframes[self.current].pose, self.relative)


# --- fusion ------------------------------------------------------------------


@dataclass
class FusionStats:
    averaged: int
    filled: int


def fuse_sweep(
    keyframe: DepthPanorama,
    sweep: DepthPanorama,
    pose: g.Pose,
    flt: SimilarityFilter | None = None,
    w_max: int = 10,
    refresh_passes: int = 3,
) -> FusionStats:
    """Fuse a registered sweep panorama into a keyframe panorama in place.

    ``pose`` maps sweep coordinates into the keyframe frame. Occupied
    keyframe pixels that pass the similarity gate take a running average
    with the weight capped at ``w_max``; empty pixels take the nearest
    sweep sample with weight 1. Normals are then re-estimated from depth
    around the touched pixels.
    """
    flt = flt or SimilarityFilter()
    km, sm = keyframe.model, sweep.model
    touched = np.zeros(km.shape, dtype=np.bool_)
    n_avg, n_new = K.fuse_into(
        keyframe.depth, keyframe.intensity, keyframe.normal, keyframe.weight,
        km.ray_directions(), km.el_max, km.d_el,
        sweep.depth, sweep.intensity, sweep.normal, sm.ray_directions(), sm.el_max, sm.d_el,
        np.ascontiguousarray(sweep.valid & sweep.normal_valid),
        pose.rotation, np.asarray(pose.t, float), flt.max_distance, flt.cos_angle, w_max, touched,
    )
    if refresh_passes >= 0 and (n_avg or n_new):
        refresh_normals(keyframe, touched, refresh_passes)
    return FusionStats(int(n_avg), int(n_new))


def _dilate(mask: np.ndarray, steps: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(steps):
        grown = out.copy()
        grown[1:] |= out[:-1]
        grown[:-1] |= out[1:]
        grown |= np.roll(out, 1, axis=1) | np.roll(out, -1, axis=1)
        out = grown
    return out


def refresh_normals(pano: DepthPanorama, touched: np.ndarray, passes: int = 3) -> None:
    """Re-estimate normals where depth changed, then smooth that region.

    Pixels whose depth estimate is kept but whose neighbourhood changed are
    included, so normal and depth stay consistent.
    """
    region = _dilate(touched, 1)
    fresh = estimate_normals(pano, mask=region)
    n = pano.normal.copy()
    np.copyto(n, fresh, where=region[..., None])
    if passes:
        n = smooth_normals_atrous(pano, passes, normals=n, mask=region)
    pano.normal = n


def keyframe_from_sweep(model: ProjectionModel, sweep: DepthPanorama, flt=None, w_max=10, passes=3) -> DepthPanorama:
    """Re-project a sweep panorama into a (possibly taller) keyframe model."""
    pano = DepthPanorama.empty(model)
    fuse_sweep(pano, sweep, g.Pose.identity(), flt, w_max, passes)
    return pano


# --- decisions ---------------------------------------------------------------


def decide_keyframe(quality: float, config: MapperConfig | None = None) -> Decision:
    thr = (config or MapperConfig()).quality_threshold
    return Decision.CONTINUE if quality >= thr else Decision.SEEK_CLOSURE_OR_CREATE


def classify_closure(quality: float, threshold: float) -> ClosureKind:
    if quality >= threshold:
        return ClosureKind.STRONG
    if quality >= 0.75 * threshold:
        return ClosureKind.WEAK
    return ClosureKind.REJECT


def find_closure_candidates(graph: MapGraph, pose: g.Pose, radius: float, exclude=(), max_count=None) -> list:
    """Keyframe ids within ``radius`` of ``pose``, nearest first (ties by id)."""
    here = np.asarray(pose.t)
    found = []
    for k, kf in graph.keyframes.items():
        if k == graph.current or k in exclude:
            continue
        d = float(np.linalg.norm(np.asarray(kf.pose.t) - here))
        if d <= radius:
            found.append((d, k))
    found.sort()
    ids = [k for _, k in found]
    return ids if max_count is None else ids[:max_count]


def grid_search_alignment(sweep_low: DepthPanorama, cand_low: DepthPanorama, prior: g.Pose, grid: GridSpec | None = None, flt=None):
    """Best lattice pose around ``prior`` by low-resolution alignment score.

    Offsets shift the sweep origin in the candidate's x-y plane and rotate it
    about the candidate's z axis. Ties keep the first lattice entry.
    """
    grid = grid or GridSpec()
    best, best_score = prior, -1.0
    rot0 = prior.rotation
    t0 = np.asarray(prior.t)
    for dx, dy, dyaw in grid.offsets():
        c, s = math.cos(dyaw), math.sin(dyaw)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        seed = g.Pose.from_rt(rz @ rot0, t0 + (dx, dy, 0.0))
        score = alignment_score(sweep_low, cand_low, seed, flt)
        if score > best_score:
            best, best_score = seed, score
    return best, best_score


def consistency_check_on_switch(incoming: Keyframe, others, margin: float, min_weight: int) -> int:
    """Invalidate incoming pixels that an overlapping keyframe confidently sees through.

    Returns the number of invalidated pixels.
    """
    pano = incoming.panorama
    m = pano.model
    invalid = np.zeros(m.shape, dtype=np.bool_)
    for other in others:
        rel = g.compose(g.inverse(other.pose), incoming.pose)
        op = other.panorama
        K.see_through(
            pano.depth, m.ray_directions(), rel.rotation, np.asarray(rel.t, float),
            op.depth, op.weight, op.model.el_max, op.model.d_el, margin, min_weight, invalid,
        )
    if invalid.any():
        pano.invalidate(invalid)
    return int(invalid.sum())


# --- pipeline ----------------------------------------------------------------


@dataclass
class ClosureAttempt:
    candidate: int
    kind: ClosureKind
    quality: float
    grid_score: float
    pose: g.Pose | None  # sweep pose in the candidate frame


@dataclass
class SweepReport:
    stamp: float
    quality: float
    action: str
    keyframe: int
    duration: float
    closures: list = field(default_factory=list)
    fused: FusionStats | None = None


class Mapper:
    """Streaming mapper: feed sweeps in order with :meth:`process_sweep`."""

    def __init__(self, config: MapperConfig | None = None, archive_dir=None, max_resident: int | None = None):
        self.config = config or MapperConfig()
        self.graph = MapGraph()
        self.gravity = GravityFilter(self.config.gravity_alpha)
        self.reports: list = []
        self._track: list = []  # (stamp, keyframe id, pose relative to keyframe)
        self._last_world: g.Pose | None = None
        self._last_delta = g.Pose.identity()
        self._last_stamp: float | None = None
        self._last_imu = None
        self.archive_dir = Path(archive_dir) if archive_dir else None
        self.max_resident = max_resident
        self.skipped = 0
        self._skip_run = 0

    # -- helpers
    def _sweep_model(self, sweep) -> ProjectionModel:
        return ProjectionModel.for_sensor(
            sweep.columns, sweep.beams, self.config.sensor_fov, self.config.keyframe_model.max_range
        )

    def _prepare(self, sweep) -> DepthPanorama:
        keep = sweep.returned
        pts = sweep.points[keep]
        if sweep.imu is not None and len(sweep.imu):
            try:
                pts = derotate_sweep(pts, sweep.timestamps[keep], sweep.imu, sweep.t_end, self.config.imu_extrinsic)
            except MissingImuDataError as exc:
                log.warning("sweep at %.3f not de-rotated: %s", sweep.t_start, exc)
        return prepare_sweep_panorama(
            self._sweep_model(sweep), pts, sweep.intensity[keep], self.config.smoothing_passes
        )

    def _prior(self, sweep) -> g.Pose:
        rel = self.graph.relative
        delta = self._last_delta if self.config.motion_prior == "zero-acceleration" else g.Pose.identity()
        if self.config.use_imu_rotation and sweep.imu is not None and self._last_stamp is not None:
            try:
                rot = integrate_rotation(sweep.imu, self._last_stamp, sweep.t_end)
                if self.config.imu_extrinsic is not None:
                    ext = np.asarray(self.config.imu_extrinsic, dtype=float)
                    rot = ext.T @ rot @ ext
                delta = g.Pose.from_rt(rot, delta.t)
            except MissingImuDataError:
                pass
        return g.compose(rel, delta)

    def _register(self, pano, target, init, pyramid=False):
        c = self.config
        return icp_point_to_plane(
            pano, target, init, c.similarity, c.icp_iterations, c.icp_tolerance,
            c.intensity_threshold, pyramid=pyramid,
        )

    def _new_keyframe(self, pano, pose, stamp) -> Keyframe:
        c = self.config
        kf_pano = keyframe_from_sweep(c.keyframe_model, pano, c.similarity, c.w_max, c.smoothing_passes)
        up = self._sensor_gravity() or GravityEstimate((0.0, 0.0, 1.0))
        kf = Keyframe(self.graph.next_id(), pose, up, stamp, kf_pano)
        self.graph.add_keyframe(kf)
        return kf

    def _optimize(self) -> None:
        if len(self.graph.keyframes) < 2:
            return
        result = pg.optimize(self.graph.problem(self.config), self.config.optimize_iterations)
        for k, p in result.poses.items():
            self.graph.keyframes[k].pose = p

    def _evict(self, keep) -> None:
        if self.archive_dir is None or self.max_resident is None:
            return
        resident = [k for k, kf in self.graph.keyframes.items() if kf.resident and k not in keep]
        excess = len(resident) + len(keep) - self.max_resident
        for k in sorted(resident)[: max(excess, 0)]:
            kf = self.graph.keyframes[k]
            self.archive_dir.mkdir(parents=True, exist_ok=True)
            kf.path = self.archive_dir / f"kf_{k:06d}.pano"
            save_panorama(kf.panorama, kf.path)
            kf._panorama = None

    def attempt_closures(self, pano: DepthPanorama, world: g.Pose, stamp: float, exclude=()) -> list:
        """Try closure candidates near ``world``; stops at the first strong one."""
        c = self.config
        old = [k for k, kf in self.graph.keyframes.items() if stamp - kf.stamp < c.closure_min_age]
        ids = find_closure_candidates(
            self.graph, world, c.closure_radius, set(exclude) | set(old), c.max_candidates
        )
        attempts = []
        low = downsample(pano, c.grid.factor)
        for k in ids:
            cand = self.graph.keyframes[k]
            prior = g.compose(g.inverse(cand.pose), world)
            seed, score = grid_search_alignment(
                low, downsample(cand.panorama, c.grid.factor), prior, c.grid, c.similarity
            )
            try:
                res = self._register(pano, cand.panorama, seed, pyramid=True)
                quality, pose = res.quality, res.pose
            except DegenerateGeometryError:
                quality, pose = 0.0, None
            kind = classify_closure(quality, c.quality_threshold)
            if pose is not None and not c.grid.within_basin(seed, pose):
                kind = ClosureKind.REJECT
            attempts.append(ClosureAttempt(k, kind, quality, score, pose))
            if kind is ClosureKind.STRONG:
                break
        return attempts

    # -- main entry
    def process_sweep(self, sweep) -> SweepReport:
        t0 = time.perf_counter()
        c = self.config
        stamp = sweep.t_end
        if sweep.imu is not None:
            self.gravity.consume(sweep.imu, stamp)
        pano = self._prepare(sweep)
        graph = self.graph

        if graph.current is None:
            kf = self._new_keyframe(pano, self._initial_pose(), stamp)
            graph.current = kf.id
            graph.relative = g.Pose.identity()
            report = SweepReport(stamp, 1.0, "init", kf.id, 0.0)
            return self._finish(report, stamp, t0)

        prior = self._prior(sweep)
        current = graph.keyframes[graph.current]
        try:
            res = self._register(pano, current.panorama, prior)
        except DegenerateGeometryError as exc:
            log.warning("sweep at %.3f skipped (%s); holding motion prior, expect drift", stamp, exc)
            self.skipped += 1
            self._skip_run += 1
            if self._skip_run > c.max_consecutive_skips:
                raise DegenerateGeometryError(
                    f"{self._skip_run} consecutive sweeps could not be registered", g.compose(current.pose, prior)
                ) from exc
            graph.relative = prior
            return self._finish(SweepReport(stamp, 0.0, "skipped", current.id, 0.0), stamp, t0)

        self._skip_run = 0
        fused = fuse_sweep(current.panorama, pano, res.pose, c.similarity, c.w_max, c.refresh_passes)
        report = SweepReport(stamp, res.quality, "continue", current.id, 0.0, fused=fused)
        if decide_keyframe(res.quality, c) is Decision.CONTINUE:
            graph.relative = res.pose
            return self._finish(report, stamp, t0)

        world = g.compose(current.pose, res.pose)
        attempts = self.attempt_closures(pano, world, stamp)
        report.closures = attempts
        strong = next((a for a in attempts if a.kind is ClosureKind.STRONG), None)
        weak = [a for a in attempts if a.kind is ClosureKind.WEAK]
        if strong is not None:
            # edge: pose of the old current keyframe in the candidate frame
            rel = g.compose(strong.pose, g.inverse(res.pose))
            graph.add_edge(Edge(strong.candidate, current.id, rel, EdgeKind.STRONG))
            for a in weak:
                graph.add_edge(Edge(a.candidate, current.id, g.compose(a.pose, g.inverse(res.pose)), EdgeKind.WEAK))
            self._optimize()
            incoming = graph.keyframes[strong.candidate]
            others = [
                kf for k, kf in graph.keyframes.items()
                if k != incoming.id
                and np.linalg.norm(np.asarray(kf.pose.t) - incoming.pose.t) <= c.closure_radius
            ]
            consistency_check_on_switch(incoming, others, c.similarity.max_distance, max(1, c.w_max // 2))
            graph.current = strong.candidate
            graph.relative = strong.pose
            report.action = "strong"
            report.keyframe = strong.candidate
        else:
            kf = self._new_keyframe(pano, world, stamp)
            graph.add_edge(Edge(current.id, kf.id, res.pose, EdgeKind.ODOMETRY))
            for a in weak:
                graph.add_edge(Edge(a.candidate, kf.id, a.pose, EdgeKind.WEAK))
            graph.current = kf.id
            graph.relative = g.Pose.identity()
            self._optimize()
            report.action = "weak" if weak else "keyframe"
            report.keyframe = kf.id
        return self._finish(report, stamp, t0)

    def _sensor_gravity(self) -> GravityEstimate | None:
        """Filtered gravity expressed in the lidar frame."""
        est = self.gravity.estimate
        if est is None or self.config.imu_extrinsic is None:
            return est
        up = np.asarray(self.config.imu_extrinsic, dtype=float).T @ np.asarray(est.direction, float)
        return GravityEstimate(tuple(up), est.weight)

    def _initial_pose(self) -> g.Pose:
        """Level the first keyframe using the current gravity estimate; yaw and position are zero."""
        est = self._sensor_gravity()
        if est is None:
            return g.Pose.identity()
        up = np.asarray(est.direction, float)
        z = np.array([0.0, 0.0, 1.0])
        axis = np.cross(up, z)
        s = float(np.linalg.norm(axis))
        if s < 1e-12:
            return g.Pose.identity()
        angle = math.atan2(s, float(up @ z))
        return g.Pose.from_rotvec(axis / s * angle)

    def _finish(self, report: SweepReport, stamp: float, t0: float) -> SweepReport:
        graph = self.graph
        self._track.append((stamp, graph.current, graph.relative))
        world = graph.current_pose()
        if self._last_world is not None:
            self._last_delta = g.compose(g.inverse(self._last_world), world)
        self._last_world = world
        self._last_stamp = stamp
        self._evict({graph.current})
        report.duration = time.perf_counter() - t0
        self.reports.append(report)
        return report

    def trajectory(self) -> Trajectory:
        """Every sweep pose, re-expressed through the latest keyframe poses."""
        kfs = self.graph.keyframes
        return Trajectory(
            [s for s, _, _ in self._track], [g.compose(kfs[k].pose, rel) for _, k, rel in self._track]
        )

    def run(self, sweeps):
        for s in sweeps:
            self.process_sweep(s)
        return self.trajectory()


# --- map archive -------------------------------------------------------------

_MANIFEST = "graph.txt"


def _fmt_pose(p: g.Pose) -> str:
    return " ".join(repr(float(v)) for v in (*p.t, *p.q))


def _parse_pose(vals) -> g.Pose:
    v = [float(x) for x in vals]
    return g.Pose(tuple(v[3:7]), tuple(v[:3]))


def save_map(graph: MapGraph, directory) -> int:
    """Write the manifest and one panorama record per keyframe; returns total bytes."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = ["# panoslam map v1"]
    total = 0
    for k in sorted(graph.keyframes):
        kf = graph.keyframes[k]
        name = f"kf_{k:06d}.pano"
        if not (kf.path is not None and Path(kf.path).resolve() == (d / name).resolve() and not kf.resident):
            total += save_panorama(kf.panorama, d / name)
        else:
            total += os.path.getsize(d / name)
        gv = " ".join(repr(float(x)) for x in kf.gravity.direction)
        lines.append(f"KEYFRAME {k} {kf.stamp!r} {_fmt_pose(kf.pose)} {gv} {float(kf.gravity.weight)!r} {name}")
    for e in graph.edges:
        lines.append(f"EDGE {e.i} {e.j} {e.kind.value} {_fmt_pose(e.pose)}")
    if graph.current is not None:
        lines.append(f"CURRENT {graph.current} {_fmt_pose(graph.relative)}")
    text = "\n".join(lines) + "\n"
    (d / _MANIFEST).write_text(text)
    return total + len(text)


def load_map(directory, lazy: bool = True) -> MapGraph:
    """Read a map archive; with ``lazy`` panoramas load on first access."""
    d = Path(directory)
    graph = MapGraph()
    kinds = {k.value: k for k in EdgeKind}
    try:
        text = (d / _MANIFEST).read_text()
    except FileNotFoundError:
        raise IntegrityError(f"no map manifest in {d}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] == "KEYFRAME":
                k = int(tok[1])
                grav = GravityEstimate(tuple(float(x) for x in tok[10:13]), float(tok[13]))
                kf = Keyframe(k, _parse_pose(tok[3:10]), grav, float(tok[2]), None, d / tok[14])
                graph.add_keyframe(kf)
                if not lazy:
                    _ = kf.panorama
            elif tok[0] == "EDGE":
                graph.add_edge(Edge(int(tok[1]), int(tok[2]), _parse_pose(tok[4:11]), kinds[tok[3]]))
            elif tok[0] == "CURRENT":
                graph.current = int(tok[1])
                graph.relative = _parse_pose(tok[2:9])
            else:
                raise ValueError(tok[0])
        except (ValueError, IndexError, KeyError):
            raise IntegrityError(f"malformed map manifest line {lineno}") from None
    return graph


__all__ = [
    "ClosureKind", "Decision", "Edge", "EdgeKind", "FusionStats", "GridSpec", "Keyframe", "MapGraph",
    "Mapper", "MapperConfig", "SweepReport", "classify_closure", "consistency_check_on_switch",
    "decide_keyframe", "find_closure_candidates", "fuse_sweep", "grid_search_alignment",
    "keyframe_from_sweep", "load_map", "refresh_normals", "save_map",
]
