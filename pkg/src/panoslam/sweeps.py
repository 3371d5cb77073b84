"""Sweep container and the binary sweep log.

Log layout (little-endian): an 8-byte magic ``PSWEEP01``, then one record
per sweep::

    f64 t_start, u32 columns, u32 beams,
    columns*beams x {f32 x, f32 y, f32 z, f32 intensity, f64 timestamp}

Points are in the sensor frame at their own firing instant. A point with
all-zero coordinates is a missing return.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import LogParseError
from .imu import ImuStream

MAGIC = b"PSWEEP01"
_HEAD = struct.Struct("<dII")
POINT_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("intensity", "<f4"), ("t", "<f8")])


@dataclass
class Sweep:
    t_start: float
    columns: int
    beams: int
    points: np.ndarray
    intensity: np.ndarray
    timestamps: np.ndarray
    period: float = 0.1
    imu: ImuStream | None = field(default=None, repr=False)

    @property
    def t_end(self) -> float:
        return self.t_start + self.period

    @property
    def returned(self) -> np.ndarray:
        p = self.points
        return (p[:, 0] != 0.0) | (p[:, 1] != 0.0) | (p[:, 2] != 0.0)

    def __len__(self) -> int:
        return len(self.points)


class SweepLogWriter:
    def __init__(self, path):
        self._fh = open(path, "wb")
        self._fh.write(MAGIC)

    def write(self, sweep: Sweep) -> None:
        n = sweep.columns * sweep.beams
        if len(sweep.points) != n:
            raise ValueError("sweep point count must equal columns * beams")
        rec = np.zeros(n, dtype=POINT_DTYPE)
        rec["x"], rec["y"], rec["z"] = sweep.points.T
        rec["intensity"] = sweep.intensity
        rec["t"] = sweep.timestamps
        self._fh.write(_HEAD.pack(sweep.t_start, sweep.columns, sweep.beams))
        self._fh.write(rec.tobytes())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_sweep_log(sweeps, path) -> int:
    count = 0
    with SweepLogWriter(path) as w:
        for s in sweeps:
            w.write(s)
            count += 1
    return count


def read_sweep_log(path, imu: ImuStream | None = None, period: float = 0.1):
    """Yield sweeps from a log, attaching the covering IMU window when given.

    Raises :class:`LogParseError` naming the byte offset of malformed data.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if not magic:
            return
        if magic != MAGIC:
            raise LogParseError("bad sweep log magic", 0)
        offset = len(MAGIC)
        while True:
            head = fh.read(_HEAD.size)
            if not head:
                return
            if len(head) != _HEAD.size:
                raise LogParseError("truncated sweep header", offset)
            t_start, cols, beams = _HEAD.unpack(head)
            if not np.isfinite(t_start) or cols == 0 or beams == 0 or cols * beams > 1 << 24:
                raise LogParseError("implausible sweep header", offset)
            n = cols * beams
            body = fh.read(n * POINT_DTYPE.itemsize)
            if len(body) != n * POINT_DTYPE.itemsize:
                raise LogParseError("truncated sweep body", offset + _HEAD.size + len(body))
            rec = np.frombuffer(body, dtype=POINT_DTYPE)
            pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(float)
            if not np.all(np.isfinite(pts)):
                bad = int(np.argmax(~np.all(np.isfinite(pts), axis=1)))
                raise LogParseError("non-finite point", offset + _HEAD.size + bad * POINT_DTYPE.itemsize)
            sweep = Sweep(
                t_start, cols, beams, pts, rec["intensity"].astype(float), rec["t"].astype(float), period
            )
            if imu is not None:
                sweep.imu = imu.window(t_start, t_start + period)
            yield sweep
            offset += _HEAD.size + len(body)
