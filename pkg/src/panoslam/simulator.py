"""Synthetic lidar: analytic scenes, scripted trajectories, sweeps and IMU streams.

Everything here is deterministic given a seed and serves as the ground
truth the rest of the package is tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.interpolate import CubicSpline

from . import geometry as g
from .imu import STANDARD_GRAVITY, ImuStream
from .sweeps import Sweep

INTENSITY_FALLOFF = 0.01  # m^-2


# --- scene primitives --------------------------------------------------------


@dataclass(frozen=True)
class Plane:
    """Rectangle centred on ``center`` spanning ``half_u`` along ``u`` and ``half_v`` along ``n x u``."""

    center: tuple
    normal: tuple
    u: tuple
    half_u: float
    half_v: float
    reflectance: float = 0.6


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    reflectance: float = 0.6
    active: tuple = (-math.inf, math.inf)


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder with flat caps."""

    x: float
    y: float
    radius: float
    z_min: float
    z_max: float
    reflectance: float = 0.5


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    reflectance: float = 0.5


@dataclass
class SceneModel:
    planes: list = field(default_factory=list)
    boxes: list = field(default_factory=list)
    cylinders: list = field(default_factory=list)
    spheres: list = field(default_factory=list)
    name: str = "scene"

    def __post_init__(self):
        for p in self.planes + self.boxes + self.cylinders + self.spheres:
            if not 0.0 <= p.reflectance <= 1.0:
                raise ValueError("reflectance must lie in [0, 1]")

    def at(self, t: float) -> SceneModel:
        """Scene with transient boxes filtered to those active at time ``t``."""
        boxes = [b for b in self.boxes if b.active[0] <= t < b.active[1]]
        return SceneModel(self.planes, boxes, self.cylinders, self.spheres, self.name)

    def packed(self):
        key = (len(self.planes), len(self.boxes), len(self.cylinders), len(self.spheres))
        cache = getattr(self, "_packed", None)
        if cache is not None and cache[0] == key:
            return cache[1]
        planes = np.zeros((len(self.planes), 15))
        for k, p in enumerate(self.planes):
            n = np.asarray(p.normal, float)
            n = n / np.linalg.norm(n)
            u = np.asarray(p.u, float)
            u = u - n * (u @ n)
            u = u / np.linalg.norm(u)
            v = np.cross(n, u)
            planes[k] = [*p.center, *n, *u, *v, p.half_u, p.half_v, p.reflectance]
        boxes = np.array([[*b.lo, *b.hi, b.reflectance] for b in self.boxes], float).reshape(-1, 7)
        cyl = np.array(
            [[c.x, c.y, c.radius, c.z_min, c.z_max, c.reflectance] for c in self.cylinders], float
        ).reshape(-1, 6)
        sph = np.array([[*s.center, s.radius, s.reflectance] for s in self.spheres], float).reshape(-1, 5)
        packed = (planes, boxes, cyl, sph)
        self._packed = (key, packed)
        return packed


EPS = 1e-9


@njit(cache=True)
def _raycast_kernel(origins, dirs, planes, boxes, cyl, sph, max_range):
    n = dirs.shape[0]
    rng = np.full(n, np.inf)
    refl = np.zeros(n)
    for k in range(n):
        if origins.shape[0] == 1:
            ox, oy, oz = origins[0, 0], origins[0, 1], origins[0, 2]
        else:
            ox, oy, oz = origins[k, 0], origins[k, 1], origins[k, 2]
        dx, dy, dz = dirs[k, 0], dirs[k, 1], dirs[k, 2]
        best = max_range
        br = 0.0
        for p in range(planes.shape[0]):
            nx, ny, nz = planes[p, 3], planes[p, 4], planes[p, 5]
            den = nx * dx + ny * dy + nz * dz
            if abs(den) < 1e-12:
                continue
            t = ((planes[p, 0] - ox) * nx + (planes[p, 1] - oy) * ny + (planes[p, 2] - oz) * nz) / den
            if t <= EPS or t >= best:
                continue
            hx = ox + t * dx - planes[p, 0]
            hy = oy + t * dy - planes[p, 1]
            hz = oz + t * dz - planes[p, 2]
            if abs(hx * planes[p, 6] + hy * planes[p, 7] + hz * planes[p, 8]) > planes[p, 12]:
                continue
            if abs(hx * planes[p, 9] + hy * planes[p, 10] + hz * planes[p, 11]) > planes[p, 13]:
                continue
            best = t
            br = planes[p, 14]
        for b in range(boxes.shape[0]):
            tmin = -np.inf
            tmax = np.inf
            hit = True
            for a in range(3):
                o = ox if a == 0 else (oy if a == 1 else oz)
                d = dx if a == 0 else (dy if a == 1 else dz)
                lo = boxes[b, a]
                hi = boxes[b, a + 3]
                if abs(d) < 1e-15:
                    if o < lo or o > hi:
                        hit = False
                        break
                else:
                    t1 = (lo - o) / d
                    t2 = (hi - o) / d
                    if t1 > t2:
                        t1, t2 = t2, t1
                    if t1 > tmin:
                        tmin = t1
                    if t2 < tmax:
                        tmax = t2
            if not hit or tmax < tmin:
                continue
            t = tmin if tmin > EPS else tmax
            if t > EPS and t < best:
                best = t
                br = boxes[b, 6]
        for c in range(cyl.shape[0]):
            cx, cy, r, z0, z1 = cyl[c, 0], cyl[c, 1], cyl[c, 2], cyl[c, 3], cyl[c, 4]
            # side
            a2 = dx * dx + dy * dy
            fx = ox - cx
            fy = oy - cy
            if a2 > 1e-15:
                bb = fx * dx + fy * dy
                cc = fx * fx + fy * fy - r * r
                disc = bb * bb - a2 * cc
                if disc >= 0.0:
                    sq = math.sqrt(disc)
                    for t in ((-bb - sq) / a2, (-bb + sq) / a2):
                        if t > EPS and t < best:
                            z = oz + t * dz
                            if z0 <= z <= z1:
                                best = t
                                br = cyl[c, 5]
                                break
            # caps
            if abs(dz) > 1e-15:
                for zc in (z0, z1):
                    t = (zc - oz) / dz
                    if t > EPS and t < best:
                        hx = ox + t * dx - cx
                        hy = oy + t * dy - cy
                        if hx * hx + hy * hy <= r * r:
                            best = t
                            br = cyl[c, 5]
        for s in range(sph.shape[0]):
            fx = ox - sph[s, 0]
            fy = oy - sph[s, 1]
            fz = oz - sph[s, 2]
            bb = fx * dx + fy * dy + fz * dz
            cc = fx * fx + fy * fy + fz * fz - sph[s, 3] * sph[s, 3]
            disc = bb * bb - cc
            if disc < 0.0:
                continue
            sq = math.sqrt(disc)
            for t in (-bb - sq, -bb + sq):
                if t > EPS and t < best:
                    best = t
                    br = sph[s, 4]
                    break
        if best < max_range:
            rng[k] = best
            refl[k] = br
    return rng, refl


def raycast_many(scene: SceneModel, origins, dirs, max_range: float = np.inf):
    """Nearest positive hit per ray; misses return ``inf`` range and zero reflectance."""
    origins = np.ascontiguousarray(np.asarray(origins, float).reshape(-1, 3))
    dirs = np.ascontiguousarray(np.asarray(dirs, float).reshape(-1, 3))
    planes, boxes, cyl, sph = scene.packed()
    return _raycast_kernel(origins, dirs, planes, boxes, cyl, sph, float(max_range))


def raycast(scene: SceneModel, origin, direction):
    """Single ray; returns ``(range, reflectance)`` or ``None`` on a miss."""
    r, refl = raycast_many(scene, origin, direction)
    if not np.isfinite(r[0]):
        return None
    return float(r[0]), float(refl[0])


# --- sensor ------------------------------------------------------------------


@dataclass(frozen=True)
class SensorModel:
    beams: int = 64
    vertical_fov: float = math.radians(33.0)
    rate: float = 10.0
    columns: int = 1024
    max_range: float = 100.0
    range_noise: float = 0.0
    dropout: float = 0.0

    def __post_init__(self):
        if self.beams < 2 or self.columns < 8 or self.rate <= 0 or self.max_range <= 0:
            raise ValueError("invalid sensor model")
        if not 0.0 <= self.dropout <= 1.0 or self.range_noise < 0:
            raise ValueError("invalid noise parameters")

    @property
    def period(self) -> float:
        return 1.0 / self.rate

    def beam_elevations(self) -> np.ndarray:
        return np.linspace(self.vertical_fov / 2, -self.vertical_fov / 2, self.beams)

    def column_azimuths(self) -> np.ndarray:
        return np.arange(self.columns) * (2.0 * math.pi / self.columns)

    def directions(self) -> np.ndarray:
        """Sensor-frame unit rays, shape (columns, beams, 3)."""
        el = self.beam_elevations()[None, :]
        az = self.column_azimuths()[:, None]
        return np.stack(
            np.broadcast_arrays(np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)), axis=-1
        )

    def projection_model(self):
        from .panorama import ProjectionModel

        return ProjectionModel.for_sensor(self.columns, self.beams, self.vertical_fov, self.max_range)


# --- trajectories ------------------------------------------------------------


class ScriptedTrajectory:
    """Cubic-spline trajectory over position and ZYX Euler angles.

    Yaw must be supplied unwrapped. ``query(t)`` gives the sensor-to-world
    pose; angular velocity is reported in the body frame.
    """

    def __init__(self, times, positions, ypr, bc_type="not-a-knot"):
        times = np.asarray(times, float)
        self.t0 = float(times[0])
        self.t1 = float(times[-1])
        self._pos = CubicSpline(times, np.asarray(positions, float), bc_type=bc_type)
        self._ang = CubicSpline(times, np.asarray(ypr, float), bc_type=bc_type)

    def query(self, t: float) -> g.Pose:
        yaw, pitch, roll = self._ang(t)
        return g.from_ypr(yaw, pitch, roll, self._pos(t))

    def position(self, t):
        return self._pos(t)

    def rotations(self, t) -> np.ndarray:
        """World-from-body rotation matrices for an array of times."""
        ang = self._ang(np.asarray(t, float))
        yaw, pitch, roll = ang[..., 0], ang[..., 1], ang[..., 2]
        cy, sy = np.cos(yaw), np.sin(yaw)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cr, sr = np.cos(roll), np.sin(roll)
        r = np.empty(yaw.shape + (3, 3))
        r[..., 0, 0] = cy * cp
        r[..., 0, 1] = cy * sp * sr - sy * cr
        r[..., 0, 2] = cy * sp * cr + sy * sr
        r[..., 1, 0] = sy * cp
        r[..., 1, 1] = sy * sp * sr + cy * cr
        r[..., 1, 2] = sy * sp * cr - cy * sr
        r[..., 2, 0] = -sp
        r[..., 2, 1] = cp * sr
        r[..., 2, 2] = cp * cr
        return r

    def angular_velocity(self, t) -> np.ndarray:
        """Body-frame angular velocity from Euler angle rates."""
        ang = self._ang(np.asarray(t, float))
        rate = self._ang(np.asarray(t, float), 1)
        pitch, roll = ang[..., 1], ang[..., 2]
        dyaw, dpitch, droll = rate[..., 0], rate[..., 1], rate[..., 2]
        wx = droll - dyaw * np.sin(pitch)
        wy = dpitch * np.cos(roll) + dyaw * np.cos(pitch) * np.sin(roll)
        wz = -dpitch * np.sin(roll) + dyaw * np.cos(pitch) * np.cos(roll)
        return np.stack([wx, wy, wz], axis=-1)

    def acceleration(self, t) -> np.ndarray:
        return self._pos(np.asarray(t, float), 2)

    def velocity(self, t) -> np.ndarray:
        return self._pos(np.asarray(t, float), 1)


def stationary_trajectory(duration: float, position=(0.0, 0.0, 1.5), ypr=(0.0, 0.0, 0.0)):
    times = np.linspace(0.0, duration + 1.0, 4)
    return ScriptedTrajectory(times, np.tile(position, (4, 1)), np.tile(ypr, (4, 1)))


def constant_yaw_trajectory(rate: float, duration: float, position=(0.0, 0.0, 1.5)):
    times = np.linspace(0.0, duration + 1.0, 8)
    ypr = np.stack([rate * times, np.zeros_like(times), np.zeros_like(times)], axis=1)
    return ScriptedTrajectory(times, np.tile(position, (8, 1)), ypr)


def path_trajectory(xy, speed: float, z: float = 1.5, extra: float = 0.0, wobble: float = 0.0, step: float = 0.25):
    """Constant-speed trajectory along a polyline; heading follows the path.

    ``xy`` is a dense polyline (already smoothed at corners). ``wobble`` adds
    a small roll/pitch oscillation (radians amplitude).
    """
    xy = np.asarray(xy, float)
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    s = np.r_[0.0, np.cumsum(seg)]
    total = s[-1]
    # spacing at most ``step`` with the path end included
    grid = np.linspace(0.0, total, max(int(math.ceil(total / step - 1e-9)), 1) + 1)
    px = np.interp(grid, s, xy[:, 0])
    py = np.interp(grid, s, xy[:, 1])
    heading = np.unwrap(np.arctan2(np.gradient(py), np.gradient(px)))
    times = grid / speed
    pos = np.stack([px, py, np.full_like(px, z)], axis=1)
    pitch = wobble * np.sin(2 * np.pi * 0.3 * times)
    roll = wobble * np.sin(2 * np.pi * 0.45 * times + 1.0)
    traj = ScriptedTrajectory(times, pos, np.stack([heading, pitch, roll], axis=1))
    traj.length = float(total)
    return traj


def rounded_square(half: float, radius: float, samples_per_m: float = 8.0, laps: float = 1.0):
    """Counter-clockwise rounded square centred at the origin, starting mid-way along the south side."""
    corners = [(half, -half, -0.5 * math.pi), (half, half, 0.0), (-half, half, 0.5 * math.pi), (-half, -half, math.pi)]
    n_edge = max(int((2 * half - 2 * radius) * samples_per_m), 2)
    n_arc = max(int(0.5 * math.pi * radius * samples_per_m), 4)
    start = (0.0, -half)
    path = [start]

    def straight_to(end):
        sx, sy = path[-1]
        for a in np.linspace(0, 1, n_edge)[1:]:
            path.append((sx + a * (end[0] - sx), sy + a * (end[1] - sy)))

    for cx, cy, a0 in corners:
        ccx = cx - math.copysign(radius, cx)
        ccy = cy - math.copysign(radius, cy)
        arc = [(ccx + radius * math.cos(a0 + a), ccy + radius * math.sin(a0 + a)) for a in np.linspace(0, 0.5 * math.pi, n_arc)]
        straight_to(arc[0])
        path.extend(arc[1:])
    straight_to(start)
    path = np.array(path)
    if laps != 1.0:
        full = np.concatenate([path] + [path[1:]] * (int(math.ceil(laps)) - 1))
        s = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(full, axis=0), axis=1))]
        total = s[len(path) - 1]
        path = full[s <= laps * total + 1e-9]
    return path


# --- synthesis ---------------------------------------------------------------


def synthesize_sweep(scene: SceneModel, trajectory: ScriptedTrajectory, sensor: SensorModel, t_start: float, rng=None) -> Sweep:
    """Fire every column at its own instant from the true pose at that instant.

    Points are returned in the sensor frame at their firing time, so the
    sweep carries genuine intra-sweep motion distortion.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    cols, beams = sensor.columns, sensor.beams
    t_col = t_start + np.arange(cols) * (sensor.period / cols)
    rot = trajectory.rotations(t_col)
    pos = trajectory.position(t_col)
    local = sensor.directions()
    world = np.einsum("cij,cbj->cbi", rot, local)
    origins = np.repeat(pos, beams, axis=0)
    active = scene.at(t_start)
    rngs, refl = raycast_many(active, origins, world.reshape(-1, 3), sensor.max_range)
    hit = np.isfinite(rngs)
    noise = rng.normal(0.0, sensor.range_noise, size=rngs.shape) if sensor.range_noise > 0 else 0.0
    keep = rng.random(size=rngs.shape) >= sensor.dropout
    measured = np.where(hit, rngs + noise, 0.0)
    ok = hit & keep & (measured > 0.0)
    pts = np.where(ok[:, None], local.reshape(-1, 3) * measured[:, None], 0.0)
    inten = np.where(ok, refl / (1.0 + INTENSITY_FALLOFF * rngs**2), 0.0)
    stamps = np.repeat(t_col, beams)
    return Sweep(t_start, cols, beams, pts, inten, stamps, sensor.period)


def synthesize_imu(trajectory: ScriptedTrajectory, rate: float, t0: float, t1: float, gyro_noise: float = 0.0, accel_noise: float = 0.0, rng=None) -> ImuStream:
    """Gyro from the rotational derivative; accelerometer is R^T (a - g) with g = (0, 0, -9.81)."""
    if rng is None:
        rng = np.random.default_rng(0)
    n = int(math.floor((t1 - t0) * rate + 1e-9)) + 1
    t = t0 + np.arange(n) / rate
    w = trajectory.angular_velocity(t)
    acc_w = trajectory.acceleration(t) - np.array([0.0, 0.0, -STANDARD_GRAVITY])
    rot = trajectory.rotations(t)
    acc_b = np.einsum("nji,nj->ni", rot, acc_w)
    if gyro_noise > 0:
        w = w + rng.normal(0.0, gyro_noise, w.shape)
    if accel_noise > 0:
        acc_b = acc_b + rng.normal(0.0, accel_noise, acc_b.shape)
    return ImuStream(t, w, acc_b)


@dataclass
class Dataset:
    """A simulated run: lazily generated sweeps plus IMU and ground truth."""

    scene: SceneModel
    trajectory: ScriptedTrajectory
    sensor: SensorModel
    imu: ImuStream
    sweep_starts: np.ndarray
    seed: int = 0

    def sweeps(self):
        for k, t0 in enumerate(self.sweep_starts):
            rng = np.random.default_rng([self.seed, k])
            s = synthesize_sweep(self.scene, self.trajectory, self.sensor, float(t0), rng)
            s.imu = self.imu.window(s.t_start, s.t_end)
            yield s

    def __len__(self) -> int:
        return len(self.sweep_starts)

    def ground_truth(self):
        from .evaluation import Trajectory

        stamps = self.sweep_starts + self.sensor.period
        return Trajectory(stamps, [self.trajectory.query(float(t)) for t in stamps])


def make_dataset(scene, trajectory, sensor, duration=None, seed=0, imu_rate=100.0, gyro_noise=0.0, accel_noise=0.0):
    t_end = trajectory.t1 if duration is None else trajectory.t0 + duration
    n = int(math.floor((t_end - trajectory.t0) / sensor.period + 1e-9))
    starts = trajectory.t0 + np.arange(n) * sensor.period
    imu = synthesize_imu(
        trajectory, imu_rate, trajectory.t0, min(trajectory.t1, t_end + 0.05), gyro_noise, accel_noise,
        np.random.default_rng([seed, 1 << 20]),
    )
    return Dataset(scene, trajectory, sensor, imu, starts, seed)


# --- canonical scenes ------------------------------------------------------------


def _floor_ceiling(cx, cy, hx, hy, height):
    floor = Plane((cx, cy, 0.0), (0, 0, 1), (1, 0, 0), hx, hy, 0.4)
    ceil = Plane((cx, cy, height), (0, 0, -1), (1, 0, 0), hx, hy, 0.5)
    return [floor, ceil]


def box_room() -> SceneModel:
    """12 x 8 x 3 m room with a few pieces of furniture."""
    rng = np.random.default_rng(11)
    boxes = [Box((-6.0, -4.0, 0.0), (6.0, 4.0, 3.0), 0.7)]
    for k in range(5):
        cx, cy = rng.uniform(-4.5, 4.5), rng.uniform(-2.8, 2.8)
        if abs(cx) < 1.2 and abs(cy) < 1.2:
            cx += 2.5
        sx, sy, sz = rng.uniform(0.4, 1.2, 3)
        boxes.append(Box((cx - sx / 2, cy - sy / 2, 0.0), (cx + sx / 2, cy + sy / 2, sz + 0.3), 0.5))
    cyl = [Cylinder(-3.0, 2.0, 0.25, 0.0, 3.0), Cylinder(3.5, -1.5, 0.3, 0.0, 3.0)]
    return SceneModel(boxes=boxes, cylinders=cyl, spheres=[Sphere((1.5, 2.5, 2.2), 0.4)], name="box-room")


def _corridor_clutter(rng, x0, x1, y_wall, side, height):
    """Irregular pillars and crates along one wall of a corridor running in x."""
    boxes, cyl = [], []
    x = x0 + rng.uniform(1.0, 4.0)
    while x < x1 - 1.0:
        if rng.random() < 0.5:
            r = rng.uniform(0.2, 0.4)
            cyl.append(Cylinder(x, y_wall + side * (r + 0.1), r, 0.0, height))
        else:
            w, d, h = rng.uniform(0.5, 1.5), rng.uniform(0.4, 0.9), rng.uniform(0.6, 2.0)
            y_in = y_wall + side * d
            boxes.append(Box((x - w / 2, min(y_wall, y_in), 0.0), (x + w / 2, max(y_wall, y_in), h), 0.5))
        x += rng.uniform(3.0, 9.0)
    return boxes, cyl


def square_loop(half: float = 20.0, width: float = 6.0, height: float = 4.0, seed: int = 5) -> SceneModel:
    """Closed corridor whose centreline is a square of side ``2 * half``."""
    rng = np.random.default_rng(seed)
    o = half + width / 2
    i = half - width / 2
    t = 0.3
    boxes = [
        Box((-o - t, -o - t, 0.0), (o + t, -o, height), 0.6),
        Box((-o - t, o, 0.0), (o + t, o + t, height), 0.6),
        Box((-o - t, -o, 0.0), (-o, o, height), 0.6),
        Box((o, -o, 0.0), (o + t, o, height), 0.6),
        Box((-i, -i, 0.0), (i, i, height), 0.55),
    ]
    cyl = []
    # clutter in local corridor coordinates, rotated onto each side
    for k in range(4):
        b1, c1 = _corridor_clutter(rng, -o + 1.0, o - 1.0, -o, +1, height)
        b2, c2 = _corridor_clutter(rng, -i + 1.0, i - 1.0, -i, -1, height)
        ang = k * 0.5 * math.pi
        ca, sa = round(math.cos(ang)), round(math.sin(ang))

        def rot(x, y):
            return ca * x - sa * y, sa * x + ca * y

        for b in b1 + b2:
            xs, ys = zip(rot(b.lo[0], b.lo[1]), rot(b.hi[0], b.hi[1]))
            boxes.append(Box((min(xs), min(ys), b.lo[2]), (max(xs), max(ys), b.hi[2]), b.reflectance))
        for c in c1 + c2:
            x, y = rot(c.x, c.y)
            cyl.append(Cylinder(x, y, c.radius, c.z_min, c.z_max, c.reflectance))
    planes = _floor_ceiling(0.0, 0.0, o + 1, o + 1, height)
    return SceneModel(planes=planes, boxes=boxes, cylinders=cyl, name="square-loop")


def hallway(length: float = 110.0, width: float = 5.0, height: float = 3.5, seed: int = 7) -> SceneModel:
    """Straight hallway along +x from x = -5 to ``length``, with wall clutter."""
    rng = np.random.default_rng(seed)
    hw = width / 2
    boxes = [
        Box((-5.0, -hw - 0.3, 0.0), (length, -hw, height), 0.6),
        Box((-5.0, hw, 0.0), (length, hw + 0.3, height), 0.6),
        Box((-5.3, -hw, 0.0), (-5.0, hw, height), 0.6),
        Box((length, -hw, 0.0), (length + 0.3, hw, height), 0.6),
    ]
    b1, c1 = _corridor_clutter(rng, -5.0, length, -hw, +1, height)
    b2, c2 = _corridor_clutter(rng, -5.0, length, hw, -1, height)
    planes = _floor_ceiling(length / 2, 0.0, length / 2 + 6, hw + 1, height)
    return SceneModel(planes=planes, boxes=boxes + b1 + b2, cylinders=c1 + c2, name="hallway")


def l_corridor(seed: int = 3) -> SceneModel:
    """L-shaped corridor: east leg along +x then north leg along +y."""
    rng = np.random.default_rng(seed)
    h = 3.5
    boxes = [
        Box((-5.0, -2.8, 0.0), (32.8, -2.5, h), 0.6),
        Box((-5.0, 2.5, 0.0), (27.5, 2.8, h), 0.6),
        Box((-5.3, -2.5, 0.0), (-5.0, 2.5, h), 0.6),
        Box((32.5, -2.5, 0.0), (32.8, 40.0, h), 0.6),
        Box((27.2, 2.5, 0.0), (27.5, 40.0, h), 0.6),
        Box((27.5, 40.0, 0.0), (32.5, 40.3, h), 0.6),
    ]
    b1, c1 = _corridor_clutter(rng, -5.0, 27.0, -2.5, +1, h)
    planes = _floor_ceiling(14.0, 18.0, 20.0, 24.0, h)
    return SceneModel(planes=planes, boxes=boxes + b1, cylinders=c1, name="l-corridor")


def cylinder_forest(n: int = 120, extent: float = 30.0, seed: int = 13) -> SceneModel:
    rng = np.random.default_rng(seed)
    cyl = []
    while len(cyl) < n:
        x, y = rng.uniform(-extent, extent, 2)
        if math.hypot(x, y) < 2.0:
            continue
        cyl.append(Cylinder(x, y, rng.uniform(0.1, 0.45), 0.0, rng.uniform(4.0, 12.0), 0.45))
    ground = Plane((0.0, 0.0, 0.0), (0, 0, 1), (1, 0, 0), extent + 40, extent + 40, 0.3)
    return SceneModel(planes=[ground], cylinders=cyl, name="cylinder-forest")


def corridor_with_transient(t_on: float = -math.inf, t_off: float = math.inf) -> SceneModel:
    """Hallway with a crate present only during ``[t_on, t_off)``."""
    scene = hallway(length=40.0, seed=21)
    crate = Box((6.0, -1.0, 0.0), (7.2, 0.4, 1.6), 0.5, active=(t_on, t_off))
    return SceneModel(scene.planes, scene.boxes + [crate], scene.cylinders, scene.spheres, "corridor-transient")


SCENES = {
    "box-room": box_room,
    "l-corridor": l_corridor,
    "square-loop": square_loop,
    "cylinder-forest": cylinder_forest,
    "corridor-transient": corridor_with_transient,
    "hallway": hallway,
}


def square_loop_trajectory(speed: float = 1.5, half: float = 20.0, radius: float = 2.0, laps: float = 1.0, wobble: float = 0.0):
    """Centreline circuit of :func:`square_loop` starting mid-way along the south side."""
    path = rounded_square(half, radius, laps=laps)
    return path_trajectory(path, speed, wobble=wobble)


def hallway_trajectory(length: float = 100.0, speed: float = 1.5):
    xs = np.linspace(0.0, length, int(length * 4) + 1)
    return path_trajectory(np.stack([xs, np.zeros_like(xs)], axis=1), speed)


def l_corridor_trajectory(speed: float = 1.5, radius: float = 2.0):
    """East along the first leg of :func:`l_corridor`, then a rounded left turn north."""
    arc = [(28.0 + radius * math.cos(a), radius + radius * math.sin(a)) for a in np.linspace(-0.5 * math.pi, 0.0, 13)]
    east = [(x, 0.0) for x in np.linspace(0.0, 28.0, 113)]
    north = [(30.0, y) for y in np.linspace(radius, 36.0, 137)]
    return path_trajectory(np.array(east[:-1] + arc + north[1:]), speed)


def make_scene(name: str) -> SceneModel:
    try:
        return SCENES[name]()
    except KeyError:
        raise ValueError(f"unknown scene {name!r}; available: {', '.join(sorted(SCENES))}") from None
