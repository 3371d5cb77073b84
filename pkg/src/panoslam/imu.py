"""Gyro integration, sweep de-rotation, and the gravity complementary filter."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from . import geometry as g
from .errors import LogParseError, MissingImuDataError

STANDARD_GRAVITY = 9.80665


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: tuple
    accel: tuple


@dataclass
class ImuStream:
    """Column-oriented IMU samples with strictly increasing timestamps."""

    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.gyro) == len(self.accel)):
            raise ValueError("IMU columns have different lengths")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("IMU timestamps must be strictly increasing")

    @classmethod
    def from_samples(cls, samples) -> ImuStream:
        samples = list(samples)
        return cls(
            [s.t for s in samples],
            np.array([s.gyro for s in samples]).reshape(-1, 3),
            np.array([s.accel for s in samples]).reshape(-1, 3),
        )

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for k in range(len(self.t)):
            yield ImuSample(float(self.t[k]), tuple(self.gyro[k]), tuple(self.accel[k]))

    def window(self, t0: float, t1: float, pad: int = 1) -> ImuStream:
        """Samples covering ``[t0, t1]`` plus ``pad`` samples either side."""
        a = max(int(np.searchsorted(self.t, t0, side="right")) - 1 - pad, 0)
        b = min(int(np.searchsorted(self.t, t1, side="left")) + 1 + pad, len(self.t))
        return ImuStream(self.t[a:b], self.gyro[a:b], self.accel[a:b])

    def period(self) -> float:
        if len(self.t) < 2:
            return 0.01
        return float(np.median(np.diff(self.t)))


def _rate_segments(stream: ImuStream, t_from: float, t_to: float):
    """Piecewise-constant rate segments covering [t_from, t_to].

    Each interval between samples uses the mean of its two endpoint rates;
    up to one sample period beyond the stream ends is covered by holding the
    end sample.
    """
    t = stream.t
    n = len(t)
    if n == 0:
        raise MissingImuDataError("empty IMU stream")
    period = stream.period()
    if t_from < t[0] - period * (1 + 1e-9) or t_to > t[-1] + period * (1 + 1e-9):
        raise MissingImuDataError(
            f"IMU covers [{t[0]:.4f}, {t[-1]:.4f}] but [{t_from:.4f}, {t_to:.4f}] requested"
        )
    if n > 1:
        a = max(int(np.searchsorted(t, t_from, side="right")) - 1, 0)
        b = min(int(np.searchsorted(t, t_to, side="left")), n - 1)
        gaps = np.diff(t[a : b + 1])
        if len(gaps) and gaps.max() > 3 * period:
            raise MissingImuDataError(f"IMU gap of {gaps.max():.4f} s inside requested interval")
    return t, period


def integrate_rotation(stream: ImuStream, t_from: float, t_to: float) -> np.ndarray:
    """Rotation taking body-frame vectors at ``t_to`` into the body frame at ``t_from``.

    Equivalently ``R_world_from.T @ R_world_to``. Integration uses one
    exponential map per sample interval.
    """
    if t_to < t_from:
        return integrate_rotation(stream, t_to, t_from).T
    t, _ = _rate_segments(stream, t_from, t_to)
    rot = np.eye(3)
    for t0, t1, w in _segments(stream, t_from, t_to):
        rot = rot @ g.so3_exp(w * (t1 - t0))
    return rot


def _segments(stream: ImuStream, t_from: float, t_to: float):
    t = stream.t
    gyro = stream.gyro
    n = len(t)
    if n == 1:
        yield t_from, t_to, gyro[0]
        return
    if t_from < t[0]:
        yield t_from, min(t[0], t_to), gyro[0]
    k = max(int(np.searchsorted(t, t_from, side="right")) - 1, 0)
    while k < n - 1 and t[k] < t_to:
        a = max(t[k], t_from)
        b = min(t[k + 1], t_to)
        if b > a:
            yield a, b, 0.5 * (gyro[k] + gyro[k + 1])
        k += 1
    if t_to > t[-1]:
        yield max(t[-1], t_from), t_to, gyro[-1]


def orientation_table(stream: ImuStream, t_ref: float, times: np.ndarray) -> np.ndarray:
    """Rotations ``integrate_rotation(stream, t, t_ref)`` for many query times at once."""
    times = np.asarray(times, dtype=float)
    if np.all(times[1:] >= times[:-1]):
        # firing order is already sorted: skip the sort
        first = np.empty(len(times), dtype=bool)
        first[:1] = True
        np.not_equal(times[1:], times[:-1], out=first[1:])
        uniq = times[first]
        inv = np.cumsum(first) - 1
    else:
        uniq, inv = np.unique(times, return_inverse=True)
    if len(uniq) == 0:
        return np.zeros((0, 3, 3))
    t0 = min(uniq[0], t_ref)
    t1 = max(uniq[-1], t_ref)
    _rate_segments(stream, t0, t1)
    # cumulative orientation relative to the body frame at t0, sampled at segment boundaries
    knots = [t0]
    rots = [np.eye(3)]
    rates = []
    for a, b, w in _segments(stream, t0, t1):
        rates.append(w)
        rots.append(rots[-1] @ g.so3_exp(w * (b - a)))
        knots.append(b)
    knots = np.array(knots)
    if not rates:
        return np.broadcast_to(np.eye(3), (len(times), 3, 3)).copy()
    rates = np.array(rates)
    rots = np.array(rots)
    query = np.append(uniq, t_ref)
    k = np.clip(np.searchsorted(knots, query, side="right") - 1, 0, len(rates) - 1)
    step = Rotation.from_rotvec(rates[k] * (query - knots[k])[:, None]).as_matrix()
    at = rots[k] @ step
    out = np.swapaxes(at[:-1], 1, 2) @ at[-1]
    return out[inv]


def derotate_sweep(points, timestamps, stream: ImuStream, t_ref: float, extrinsic=None) -> np.ndarray:
    """Rotate each point into the body orientation at ``t_ref``.

    Only rotation is compensated; translation during the sweep is left in.
    ``extrinsic`` is an optional sensor-to-IMU rotation matrix.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts.copy()
    table = orientation_table(stream, t_ref, timestamps)
    if extrinsic is not None:
        ext = np.asarray(extrinsic, dtype=float)
        table = ext.T @ table @ ext
    # point in frame t_ref = R(t_ref <- t) p = integrate_rotation(t, t_ref).T p
    return np.einsum("nji,nj->ni", table, pts)


@dataclass(frozen=True)
class GravityEstimate:
    """Unit "up" direction in the body frame (the direction of the specific force at rest)."""

    direction: tuple
    weight: float = 1.0

    @property
    def down(self) -> np.ndarray:
        return -np.asarray(self.direction)


def adaptive_gain(accel_norm: float, g0: float = STANDARD_GRAVITY) -> float:
    """Gain factor in [0, 1] that fades accelerometer trust as |a| departs from g."""
    err = abs(accel_norm - g0) / g0
    if err <= 0.1:
        return 1.0
    if err >= 0.2:
        return 0.0
    return (0.2 - err) / 0.1


def gravity_update(
    state: GravityEstimate, sample: ImuSample, dt: float, alpha: float = 0.02, nominal_dt: float = 0.01
) -> GravityEstimate:
    """One complementary-filter step.

    The gyro rotates the previous direction into the new body frame; the
    accelerometer direction is then blended in with gain ``alpha`` per
    nominal sample period, attenuated when |a| is far from g.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = g.so3_exp(-np.asarray(sample.gyro, dtype=float) * dt) @ np.asarray(state.direction, dtype=float)
    a = np.asarray(sample.accel, dtype=float)
    an = float(np.linalg.norm(a))
    if an > 0.0:
        k = (1.0 - (1.0 - alpha) ** (dt / nominal_dt)) * adaptive_gain(an)
        v = (1.0 - k) * v + k * a / an
    v = v / np.linalg.norm(v)
    return GravityEstimate(tuple(v), state.weight)


class GravityFilter:
    """Stateful wrapper around :func:`gravity_update` consuming an IMU stream in order."""

    def __init__(self, alpha: float = 0.02):
        self.alpha = alpha
        self.estimate = None
        self.t = None

    def update(self, sample: ImuSample) -> GravityEstimate:
        if self.estimate is None:
            a = np.asarray(sample.accel, dtype=float)
            n = np.linalg.norm(a)
            self.estimate = GravityEstimate(tuple(a / n) if n > 0 else (0.0, 0.0, 1.0))
        elif sample.t > self.t:
            self.estimate = gravity_update(self.estimate, sample, sample.t - self.t, self.alpha)
        else:
            return self.estimate
        self.t = sample.t
        return self.estimate

    def consume(self, stream: ImuStream, until: float) -> GravityEstimate:
        for k in range(len(stream)):
            tk = stream.t[k]
            if tk > until:
                break
            if self.t is not None and tk <= self.t:
                continue
            self.update(ImuSample(float(tk), tuple(stream.gyro[k]), tuple(stream.accel[k])))
        return self.estimate


# --- CSV log ----------------------------------------------------------------

IMU_HEADER = ["t", "wx", "wy", "wz", "ax", "ay", "az"]


def write_imu_csv(stream: ImuStream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(IMU_HEADER)
        for k in range(len(stream)):
            w.writerow([repr(float(stream.t[k]))] + [repr(float(x)) for x in stream.gyro[k]] + [repr(float(x)) for x in stream.accel[k]])


def read_imu_csv(path) -> ImuStream:
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != IMU_HEADER:
            raise LogParseError(f"IMU CSV header must be {','.join(IMU_HEADER)}", 1)
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            try:
                vals = [float(x) for x in row]
            except ValueError:
                raise LogParseError("non-numeric IMU field", lineno) from None
            if len(vals) != 7 or not all(math.isfinite(v) for v in vals):
                raise LogParseError("IMU row must have 7 finite fields", lineno)
            rows.append(vals)
    arr = np.array(rows, dtype=float).reshape(-1, 7)
    try:
        return ImuStream(arr[:, 0], arr[:, 1:4], arr[:, 4:7])
    except ValueError as exc:
        raise LogParseError(str(exc)) from None
