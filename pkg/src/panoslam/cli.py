"""``panoslam`` command-line interface."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

import click
import numpy as np
import yaml

from . import evaluation as ev
from . import geometry as g
from . import mapper as mp
from . import posegraph as pg
from . import simulator as sim
from .errors import DegenerateGeometryError, IntegrityError, LogParseError, NumericalFailureError
from .imu import read_imu_csv, write_imu_csv
from .panorama import ProjectionModel
from .registration import SimilarityFilter
from .sweeps import read_sweep_log, write_sweep_log

EXIT_PARSE = 2
EXIT_DEGENERATE = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("panoslam")


def _set_threads(threads: int | None) -> int:
    import numba

    if threads is None:
        env = os.environ.get("PANOSLAM_THREADS")
        threads = int(env) if env else None
    if threads:
        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


# --- configuration -----------------------------------------------------------


def build_config(path=None, overrides=None) -> tuple:
    """Mapper configuration from an optional YAML file plus flag overrides.

    Returns ``(MapperConfig, resolution preset name)``.
    """
    raw = {}
    if path:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise click.BadParameter("config file must hold a mapping", param_hint="--config")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    resolution = str(raw.pop("resolution", "1024x128"))
    kf_fov = raw.pop("keyframe_vertical_fov_deg", 90.0)
    sim_cfg = raw.pop("similarity", {}) or {}
    grid_cfg = raw.pop("grid", {}) or {}
    known = {f.name for f in fields(mp.MapperConfig)}
    unknown = set(raw) - known - {"sensor_fov_deg"}
    if unknown:
        raise click.BadParameter(f"unknown config keys: {', '.join(sorted(unknown))}")
    kwargs = {k: v for k, v in raw.items() if k in known}
    if "sensor_fov_deg" in raw:
        kwargs["sensor_fov"] = math.radians(float(raw["sensor_fov_deg"]))
    for key in ("odometry_info", "closure_info"):
        if key in kwargs:
            kwargs[key] = tuple(float(x) for x in kwargs[key])
    if kwargs.get("imu_extrinsic") is not None:
        kwargs["imu_extrinsic"] = tuple(tuple(float(x) for x in row) for row in kwargs["imu_extrinsic"])
    half = math.radians(float(kf_fov)) / 2
    kwargs["keyframe_model"] = ProjectionModel.preset(resolution, el_min=-half, el_max=half)
    kwargs["similarity"] = SimilarityFilter(
        float(sim_cfg.get("max_distance", 0.5)), math.radians(float(sim_cfg.get("max_angle_deg", 30.0)))
    )
    if grid_cfg:
        kwargs["grid"] = mp.GridSpec(
            float(grid_cfg.get("xy_extent", 2.0)),
            float(grid_cfg.get("xy_step", 0.5)),
            math.radians(float(grid_cfg.get("yaw_extent_deg", 40.0))),
            math.radians(float(grid_cfg.get("yaw_step_deg", 10.0))),
            int(grid_cfg.get("factor", 4)),
        )
    try:
        return mp.MapperConfig(**kwargs), resolution
    except (TypeError, ValueError) as exc:
        raise click.BadParameter(str(exc)) from None


# --- outputs -----------------------------------------------------------------


def timing_summary(durations) -> dict:
    d = np.asarray(durations, float)
    if len(d) == 0:
        return {"count": 0}
    pct = {f"p{p}": float(np.percentile(d, p)) for p in (5, 25, 50, 75, 90, 95, 99)}
    return {"count": int(len(d)), "median": float(np.median(d)), "mean": float(d.mean()), "max": float(d.max()), **pct}


def write_timing(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "t", "duration_s", "action", "quality", "keyframe"])
        for k, r in enumerate(reports):
            w.writerow([k, f"{r.stamp:.6f}", f"{r.duration:.6f}", r.action, f"{r.quality:.6f}", r.keyframe])


def write_density(durations, path, points: int = 200) -> None:
    """Kernel density estimate of update times as ``duration_s,density`` rows."""
    from scipy.stats import gaussian_kde

    d = np.asarray(durations, float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["duration_s", "density"])
        if len(d) < 2 or np.ptp(d) == 0:
            return
        kde = gaussian_kde(d)
        xs = np.linspace(0.0, d.max() * 1.1, points)
        for x, y in zip(xs, kde(xs)):
            w.writerow([f"{x:.6f}", f"{y:.6f}"])


def write_ply(points: np.ndarray, intensity: np.ndarray, path) -> int:
    """Binary little-endian PLY with float x, y, z, intensity."""
    pts = np.asarray(points, dtype="<f4").reshape(-1, 3)
    inten = np.asarray(intensity, dtype="<f4").reshape(-1, 1)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\nproperty float intensity\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.hstack([pts, inten]).astype("<f4").tobytes())
    return len(pts)


def read_ply(path):
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    head = data[:end].decode("ascii").splitlines()
    n = next(int(line.split()[2]) for line in head if line.startswith("element vertex"))
    arr = np.frombuffer(data[end:], dtype="<f4", count=4 * n).reshape(n, 4)
    return arr[:, :3].astype(float), arr[:, 3].astype(float)


def map_point_cloud(graph: mp.MapGraph):
    pts, inten = [], []
    for k in sorted(graph.keyframes):
        kf = graph.keyframes[k]
        pano = kf.panorama
        v = pano.valid
        pts.append(g.transform_points(kf.pose, pano.points()[v]))
        inten.append(pano.intensity[v])
    if not pts:
        return np.zeros((0, 3)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(inten)


# --- commands ----------------------------------------------------------------


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose):
    """Panoramic depth-image lidar SLAM."""
    level = logging.WARNING - 10 * verbose
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.group()
def slam():
    """Run the mapper."""


@slam.command("run")
@click.option("--sweeps", "sweeps_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--imu", "imu_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--resolution", type=click.Choice(["1024x128", "2048x256"]))
@click.option("--quality-threshold", type=float, help="Keyframe switch threshold on registration quality.")
@click.option("--motion-prior", type=click.Choice(["zero-velocity", "zero-acceleration"]))
@click.option("--threads", type=int, help="Worker threads (default: PANOSLAM_THREADS or all cores).")
@click.option("--deterministic/--no-deterministic", default=True, show_default=True)
@click.option("--max-resident", type=int, help="Keep at most this many keyframe panoramas in memory.")
def slam_run(sweeps_path, imu_path, config_path, out_dir, resolution, quality_threshold, motion_prior, threads, deterministic, max_resident):
    """Process a sweep log and write trajectory, map archive, timing and summary."""
    threads = _set_threads(threads)
    config, resolution = build_config(
        config_path,
        {"quality_threshold": quality_threshold, "motion_prior": motion_prior, "resolution": resolution},
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        imu = read_imu_csv(imu_path) if imu_path else None
    except LogParseError as exc:
        click.echo(f"error: {imu_path}: {exc}", err=True)
        sys.exit(EXIT_PARSE)
    mapper = mp.Mapper(config, archive_dir=out / "map" if max_resident else None, max_resident=max_resident)
    count = 0
    try:
        for sweep in read_sweep_log(sweeps_path, imu):
            mapper.process_sweep(sweep)
            count += 1
    except LogParseError as exc:
        click.echo(f"error: {sweeps_path}: {exc}", err=True)
        sys.exit(EXIT_PARSE)
    except DegenerateGeometryError as exc:
        click.echo(f"error: registration degenerate, aborting: {exc}", err=True)
        sys.exit(EXIT_DEGENERATE)
    except NumericalFailureError as exc:
        click.echo(f"error: numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    if count == 0:
        click.echo("warning: sweep log holds no sweeps", err=True)
    traj = mapper.trajectory()
    ev.write_tum(traj, out / "trajectory.txt")
    size = mp.save_map(mapper.graph, out / "map")
    durations = [r.duration for r in mapper.reports]
    write_timing(mapper.reports, out / "timing.csv")
    write_density(durations, out / "timing_density.csv")
    summary = {
        "sweeps": count,
        "skipped_sweeps": mapper.skipped,
        "keyframes": len(mapper.graph.keyframes),
        "edges": {k.value: mapper.graph.closure_count(k) if k is not mp.EdgeKind.ODOMETRY else
                  sum(e.kind is k for e in mapper.graph.edges) for k in mp.EdgeKind},
        "closures": mapper.graph.closure_count(),
        "archive_bytes": size,
        "resolution": resolution,
        "threads": threads,
        "deterministic": deterministic,
        "timing_s": timing_summary(durations),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    click.echo(
        f"{count} sweeps, {summary['keyframes']} keyframes, {summary['closures']} closures, "
        f"median update {summary['timing_s'].get('median', 0.0) * 1e3:.1f} ms"
    )


@main.group("sim")
def sim_group():
    """Synthetic datasets."""


TRAJECTORIES = ("stationary", "spin", "square-loop", "hallway", "l-corridor")


def make_trajectory(kind: str, duration: float, speed: float, laps: float):
    if kind == "stationary":
        return sim.stationary_trajectory(duration)
    if kind == "spin":
        return sim.constant_yaw_trajectory(1.0, duration)
    if kind == "square-loop":
        return sim.square_loop_trajectory(speed, laps=laps)
    if kind == "hallway":
        return sim.hallway_trajectory(100.0, speed)
    if kind == "l-corridor":
        return sim.l_corridor_trajectory(speed)
    raise click.BadParameter(f"unknown trajectory {kind!r}; available: {', '.join(TRAJECTORIES)}")


@sim_group.command("generate")
@click.option("--scene", required=True, help=f"One of: {', '.join(sorted(sim.SCENES))}.")
@click.option("--trajectory", "traj_kind", default="stationary", show_default=True, type=click.Choice(TRAJECTORIES))
@click.option("--duration", type=float, default=10.0, show_default=True, help="Seconds (stationary/spin).")
@click.option("--speed", type=float, default=1.5, show_default=True)
@click.option("--laps", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--noise", type=float, default=0.0, show_default=True, help="Range noise sigma in meters.")
@click.option("--dropout", type=float, default=0.0, show_default=True)
@click.option("--columns", type=int, default=1024, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def sim_generate(scene, traj_kind, duration, speed, laps, seed, noise, dropout, columns, out_dir):
    """Write sweeps.bin, imu.csv and groundtruth.txt for a simulated run."""
    if scene not in sim.SCENES:
        raise click.BadParameter(f"unknown scene {scene!r}; available: {', '.join(sorted(sim.SCENES))}", param_hint="--scene")
    traj = make_trajectory(traj_kind, duration, speed, laps)
    sensor = sim.SensorModel(columns=columns, range_noise=noise, dropout=dropout)
    span = duration if traj_kind in ("stationary", "spin") else None
    ds = sim.make_dataset(sim.make_scene(scene), traj, sensor, duration=span, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = write_sweep_log(ds.sweeps(), out / "sweeps.bin")
    write_imu_csv(ds.imu, out / "imu.csv")
    ev.write_tum(ds.ground_truth(), out / "groundtruth.txt")
    click.echo(f"{n} sweeps written to {out}")


@main.group("eval")
def eval_group():
    """Trajectory evaluation."""


@eval_group.command("ate")
@click.argument("estimate", type=click.Path(exists=True, dir_okay=False))
@click.argument("truth", type=click.Path(exists=True, dir_okay=False))
@click.option("--max-dt", type=float, default=0.05, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Error series output.")
def eval_ate(estimate, truth, max_dt, csv_path):
    """Absolute trajectory error after rigid alignment."""
    try:
        est, gt = ev.read_tum(estimate), ev.read_tum(truth)
    except LogParseError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_PARSE)
    pairs = ev.associate(est, gt, max_dt)
    if not pairs:
        click.echo("error: no timestamp correspondences within max-dt", err=True)
        sys.exit(1)
    try:
        report = ev.ate(est, gt, pairs)
    except DegenerateGeometryError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_DEGENERATE)
    click.echo(f"correspondences {report.count}")
    click.echo(f"median {report.median:.6f} m")
    click.echo(f"rmse {report.rmse:.6f} m")
    if csv_path:
        ev.write_error_csv(report, csv_path)


@main.group("map")
def map_group():
    """Map archive tools."""


@map_group.command("export")
@click.argument("archive", type=click.Path(exists=True, file_okay=False))
@click.option("--format", "fmt", required=True, type=click.Choice(["point-cloud", "trajectory", "graph"]))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def map_export(archive, fmt, out_path):
    """Export a map archive as a PLY point cloud, keyframe trajectory, or pose graph."""
    try:
        graph = mp.load_map(archive)
        if fmt == "point-cloud":
            pts, inten = map_point_cloud(graph)
            n = write_ply(pts, inten, out_path)
            click.echo(f"{n} points")
        elif fmt == "trajectory":
            ids = sorted(graph.keyframes)
            ev.write_tum(ev.Trajectory([graph.keyframes[k].stamp for k in ids], [graph.keyframes[k].pose for k in ids]), out_path)
        else:
            if graph.keyframes:
                pg.write_g2o(graph.problem(), out_path)
            else:
                Path(out_path).write_text("")
    except IntegrityError as exc:
        click.echo(f"error: corrupt map archive: {exc}", err=True)
        sys.exit(EXIT_PARSE)


if __name__ == "__main__":
    main()
