"""Pose-graph optimisation over relative-pose edges and gravity-direction factors.

Each node pose is perturbed on the right: ``R <- R Exp(dtheta)``,
``t <- t + R dt``, with the six-vector ordered (rotation, translation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import geometry as g
from .errors import NumericalFailureError

WORLD_GRAVITY = (0.0, 0.0, -1.0)
DEFAULT_INFO = (100.0, 100.0, 100.0, 25.0, 25.0, 25.0)
DEFAULT_GRAVITY_WEIGHT = 10.0


@dataclass(frozen=True)
class RelativePoseFactor:
    """Measured pose of node ``j`` in the frame of node ``i``; ``info`` is diagonal, rotation first."""

    i: int
    j: int
    measured: g.Pose
    info: tuple = DEFAULT_INFO

    def __post_init__(self):
        if len(self.info) != 6 or min(self.info) <= 0:
            raise ValueError("information weights must be six positive numbers")


@dataclass(frozen=True)
class GravityFactor:
    """Observed gravity (pointing down) in the body frame of ``node``."""

    node: int
    direction: tuple
    weight: float = DEFAULT_GRAVITY_WEIGHT

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.direction))
        if abs(n - 1.0) > 1e-6:
            raise ValueError("gravity direction must be a unit vector")
        if self.weight <= 0:
            raise ValueError("gravity weight must be positive")


@dataclass
class GraphProblem:
    poses: dict
    factors: list = field(default_factory=list)
    gravity: list = field(default_factory=list)
    anchor: int = 0
    world_gravity: tuple = WORLD_GRAVITY

    def __post_init__(self):
        if self.anchor not in self.poses:
            raise ValueError(f"anchor node {self.anchor} not in graph")
        for f in self.factors:
            if f.i not in self.poses or f.j not in self.poses:
                raise ValueError(f"edge {f.i}->{f.j} references a missing node")
        for f in self.gravity:
            if f.node not in self.poses:
                raise ValueError(f"gravity factor references missing node {f.node}")


@dataclass
class OptimizationResult:
    poses: dict
    cost: float
    initial_cost: float
    iterations: int
    converged: bool


def _error_terms(f: RelativePoseFactor, pi: g.Pose, pj: g.Pose):
    ri, rj, rz = pi.rotation, pj.rotation, f.measured.rotation
    a = ri.T @ rj
    u = ri.T @ (np.asarray(pj.t) - np.asarray(pi.t))
    re = rz.T @ a
    te = rz.T @ (u - np.asarray(f.measured.t))
    return g.so3_log(re), te, a, u, rz


def residual_relative(f: RelativePoseFactor, poses: dict, weighted: bool = True) -> np.ndarray:
    """Rotation log and translation of ``measured^-1 * pose_i^-1 * pose_j``."""
    rot, trans, *_ = _error_terms(f, poses[f.i], poses[f.j])
    r = np.concatenate([rot, trans])
    return r * np.sqrt(f.info) if weighted else r


def residual_gravity(f: GravityFactor, poses: dict, world_gravity=WORLD_GRAVITY, weighted: bool = True) -> np.ndarray:
    """Body gravity rotated into the world, minus the world gravity direction."""
    r = poses[f.node].rotation @ np.asarray(f.direction, float) - np.asarray(world_gravity, float)
    return r * math.sqrt(f.weight) if weighted else r


def jacobian_relative(f: RelativePoseFactor, poses: dict):
    """Weighted 6x6 Jacobians of the relative residual with respect to nodes i and j."""
    rot, _, a, u, rz = _error_terms(f, poses[f.i], poses[f.j])
    jr_inv = g.so3_right_jacobian_inv(rot)
    ji = np.zeros((6, 6))
    jj = np.zeros((6, 6))
    ji[:3, :3] = -jr_inv @ a.T
    ji[3:, :3] = rz.T @ g.skew(u)
    ji[3:, 3:] = -rz.T
    jj[:3, :3] = jr_inv
    jj[3:, 3:] = rz.T @ a
    w = np.sqrt(np.asarray(f.info, float))[:, None]
    return ji * w, jj * w


def jacobian_gravity(f: GravityFactor, poses: dict) -> np.ndarray:
    j = np.zeros((3, 6))
    j[:, :3] = -poses[f.node].rotation @ g.skew(np.asarray(f.direction, float))
    return j * math.sqrt(f.weight)


def retract(p: g.Pose, delta) -> g.Pose:
    delta = np.asarray(delta, float)
    return g.compose(p, g.Pose.from_rotvec(delta[:3], delta[3:]))


def total_cost(problem: GraphProblem, poses: dict | None = None) -> float:
    poses = problem.poses if poses is None else poses
    c = 0.0
    for f in problem.factors:
        r = residual_relative(f, poses)
        c += float(r @ r)
    for f in problem.gravity:
        r = residual_gravity(f, poses, problem.world_gravity)
        c += float(r @ r)
    return 0.5 * c


def _linearize(problem: GraphProblem, poses: dict, index: dict):
    n = len(index)
    h = np.zeros((6 * n, 6 * n))
    b = np.zeros(6 * n)
    for f in problem.factors:
        r = residual_relative(f, poses)
        ji, jj = jacobian_relative(f, poses)
        for a, ja in ((f.i, ji), (f.j, jj)):
            ka = index.get(a)
            if ka is None:
                continue
            b[6 * ka : 6 * ka + 6] += ja.T @ r
            for c, jc in ((f.i, ji), (f.j, jj)):
                kc = index.get(c)
                if kc is None:
                    continue
                h[6 * ka : 6 * ka + 6, 6 * kc : 6 * kc + 6] += ja.T @ jc
    for f in problem.gravity:
        k = index.get(f.node)
        if k is None:
            continue
        r = residual_gravity(f, poses, problem.world_gravity)
        j = jacobian_gravity(f, poses)
        b[6 * k : 6 * k + 6] += j.T @ r
        h[6 * k : 6 * k + 6, 6 * k : 6 * k + 6] += j.T @ j
    return h, b


def optimize(problem: GraphProblem, max_iterations: int = 50, tolerance: float = 1e-10, damping: float = 1e-4) -> OptimizationResult:
    """Levenberg-Marquardt with the anchor node held fixed.

    Only cost-reducing steps are accepted; the damping is divided by ten on
    acceptance and multiplied by ten on rejection.
    """
    ids = sorted(problem.poses)
    free = [k for k in ids if k != problem.anchor]
    index = {k: n for n, k in enumerate(free)}
    poses = dict(problem.poses)
    cost = total_cost(problem, poses)
    initial = cost
    if not math.isfinite(cost):
        raise NumericalFailureError("non-finite initial cost", poses)
    if not free or cost < 1e-24:
        return OptimizationResult(poses, cost, initial, 0, True)
    lam = damping
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        h, b = _linearize(problem, poses, index)
        accepted = False
        while lam < 1e12:
            hd = h + lam * np.diag(np.maximum(np.diag(h), 1e-9))
            try:
                step = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(hd), b)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = dict(poses)
            for k, n in index.items():
                trial[k] = retract(poses[k], step[6 * n : 6 * n + 6])
            new_cost = total_cost(problem, trial)
            if not math.isfinite(new_cost):
                raise NumericalFailureError("non-finite cost during optimisation", poses)
            if new_cost <= cost:
                accepted = True
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if not accepted:
            converged = True
            break
        change = (cost - new_cost) / max(cost, 1e-300)
        poses, cost = trial, new_cost
        if change < tolerance or cost < 1e-24:
            converged = True
            break
    return OptimizationResult(poses, cost, initial, it, converged)


# --- plain-text interchange (VERTEX_SE3:QUAT / EDGE_SE3:QUAT) ----------------


def _pose_fields(p: g.Pose) -> list:
    return [*p.t, *p.q]


def write_g2o(problem: GraphProblem, path) -> None:
    with open(path, "w") as fh:
        for k in sorted(problem.poses):
            vals = " ".join(repr(float(v)) for v in _pose_fields(problem.poses[k]))
            fh.write(f"VERTEX_SE3:QUAT {k} {vals}\n")
        fh.write(f"FIX {problem.anchor}\n")
        for f in problem.factors:
            info = np.diag(np.r_[f.info[3:], f.info[:3]])
            upper = info[np.triu_indices(6)]
            vals = " ".join(repr(float(v)) for v in _pose_fields(f.measured) + list(upper))
            fh.write(f"EDGE_SE3:QUAT {f.i} {f.j} {vals}\n")


def read_g2o(path) -> GraphProblem:
    poses, factors, anchor = {}, [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            try:
                if tok[0] == "VERTEX_SE3:QUAT":
                    v = [float(x) for x in tok[2:9]]
                    poses[int(tok[1])] = g.Pose(tuple(v[3:7]), tuple(v[:3]))
                elif tok[0] == "EDGE_SE3:QUAT":
                    v = [float(x) for x in tok[3:]]
                    upper = np.array(v[7:28])
                    info = np.zeros((6, 6))
                    info[np.triu_indices(6)] = upper
                    d = np.diag(info)
                    factors.append(
                        RelativePoseFactor(
                            int(tok[1]), int(tok[2]), g.Pose(tuple(v[3:7]), tuple(v[:3])),
                            tuple(float(x) for x in np.r_[d[3:], d[:3]]),
                        )
                    )
                elif tok[0] == "FIX":
                    anchor = int(tok[1])
            except (ValueError, IndexError):
                raise ValueError(f"malformed pose-graph record on line {lineno}") from None
    if anchor is None:
        anchor = min(poses) if poses else 0
    return GraphProblem(poses, factors, [], anchor)
