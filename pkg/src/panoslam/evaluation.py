"""Trajectory association, rigid alignment and absolute trajectory error."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import geometry as g
from .errors import DegenerateGeometryError, LogParseError


class Trajectory:
    """Timestamped poses with strictly increasing stamps."""

    def __init__(self, stamps, poses):
        self.stamps = np.asarray(stamps, dtype=float).reshape(-1)
        self.poses = list(poses)
        if len(self.stamps) != len(self.poses):
            raise ValueError("stamps and poses differ in length")
        if len(self.stamps) > 1 and np.any(np.diff(self.stamps) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.stamps, self.poses))

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses], dtype=float).reshape(-1, 3)

    def transformed(self, pose: g.Pose) -> Trajectory:
        return Trajectory(self.stamps, [g.compose(pose, p) for p in self.poses])

    def path_length(self) -> float:
        p = self.positions
        return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1))) if len(p) > 1 else 0.0


@dataclass(frozen=True)
class Correspondence:
    a: int
    b: int
    dt: float


def associate(a: Trajectory, b: Trajectory, max_dt: float = 0.05) -> list:
    """Greedy one-to-one pairing by increasing ``|dt|`` within ``max_dt``.

    Ties are broken by index in ``a`` then ``b``. The result is sorted by ``a``.
    """
    ta, tb = a.stamps, b.stamps
    cands = []
    if len(ta) and len(tb):
        lo = np.searchsorted(tb, ta - max_dt, side="left")
        hi = np.searchsorted(tb, ta + max_dt, side="right")
        for i in range(len(ta)):
            for j in range(lo[i], hi[i]):
                d = abs(ta[i] - tb[j])
                if d <= max_dt:
                    cands.append((d, i, j))
    cands.sort()
    used_a, used_b, out = set(), set(), []
    for d, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out.append(Correspondence(i, j, float(tb[j] - ta[i])))
    out.sort(key=lambda c: c.a)
    return out


def align_points(src: np.ndarray, dst: np.ndarray) -> g.Pose:
    """Least-squares rigid transform taking ``src`` onto ``dst`` (Kabsch, no scale)."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    if len(src) < 3:
        raise DegenerateGeometryError("alignment needs at least 3 correspondences")
    ca, cb = src.mean(axis=0), dst.mean(axis=0)
    x, y = src - ca, dst - cb
    u, s, vt = np.linalg.svd(x.T @ y)
    scale = max(float(s[0]), 1e-300)
    if s[1] <= 1e-9 * scale:
        raise DegenerateGeometryError("correspondences are collinear or coincident")
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return g.Pose.from_rt(rot, cb - rot @ ca)


def align(a: Trajectory, b: Trajectory, pairs: list) -> g.Pose:
    """Rigid transform that best maps a's positions onto b's over the given pairs."""
    pa = a.positions[[c.a for c in pairs]] if pairs else np.zeros((0, 3))
    pb = b.positions[[c.b for c in pairs]] if pairs else np.zeros((0, 3))
    return align_points(pa, pb)


@dataclass
class AlignmentReport:
    alignment: g.Pose
    count: int
    median: float
    rmse: float
    stamps: np.ndarray
    errors: np.ndarray

    @property
    def max(self) -> float:
        return float(self.errors.max()) if len(self.errors) else 0.0


def ate(a: Trajectory, b: Trajectory, pairs: list, alignment: g.Pose | None = None) -> AlignmentReport:
    """Per-pair position error after applying ``alignment`` to ``a``."""
    if not pairs:
        raise ValueError("no correspondences between the trajectories")
    if alignment is None:
        alignment = align(a, b, pairs)
    pa = g.transform_points(alignment, a.positions[[c.a for c in pairs]])
    pb = b.positions[[c.b for c in pairs]]
    err = np.linalg.norm(pa - pb, axis=1)
    return AlignmentReport(
        alignment, len(pairs), float(np.median(err)), float(math.sqrt(np.mean(err**2))),
        a.stamps[[c.a for c in pairs]], err,
    )


def evaluate(estimate: Trajectory, truth: Trajectory, max_dt: float = 0.05) -> AlignmentReport:
    pairs = associate(estimate, truth, max_dt)
    return ate(estimate, truth, pairs)


# --- file formats -----------------------------------------------------------


def write_tum(traj: Trajectory, path) -> None:
    """One line per pose: ``t tx ty tz qx qy qz qw``."""
    with open(path, "w") as fh:
        for t, p in traj:
            vals = [t, *p.t, *p.q]
            fh.write(" ".join(f"{v:.9f}" for v in vals) + "\n")


def read_tum(path) -> Trajectory:
    stamps, poses = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.replace(",", " ").split()
            try:
                vals = [float(x) for x in parts]
            except ValueError:
                raise LogParseError("non-numeric trajectory field", lineno) from None
            if len(vals) != 8 or not all(math.isfinite(v) for v in vals):
                raise LogParseError("trajectory line must have 8 finite fields", lineno)
            stamps.append(vals[0])
            poses.append(g.Pose(tuple(vals[4:8]), tuple(vals[1:4])))
    try:
        return Trajectory(stamps, poses)
    except ValueError as exc:
        raise LogParseError(str(exc)) from None


def write_error_csv(report: AlignmentReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "err_m"])
        for t, e in zip(report.stamps, report.errors):
            w.writerow([f"{t:.9f}", f"{e:.9f}"])


def read_error_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r, None) != ["t", "err_m"]:
            raise LogParseError("error CSV header must be t,err_m", 1)
        rows = [(float(a), float(b)) for a, b in r]
    arr = np.array(rows, float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]
