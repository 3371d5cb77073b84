import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import render, sweep_model
from panoslam import geometry as g
from panoslam import simulator as sim
from panoslam.errors import DegenerateGeometryError, IntegrityError
from panoslam.evaluation import evaluate
from panoslam.imu import GravityEstimate
from panoslam.mapper import (
    ClosureKind,
    Decision,
    Edge,
    EdgeKind,
    GridSpec,
    Keyframe,
    MapGraph,
    Mapper,
    MapperConfig,
    classify_closure,
    consistency_check_on_switch,
    decide_keyframe,
    find_closure_candidates,
    fuse_sweep,
    grid_search_alignment,
    keyframe_from_sweep,
    load_map,
    save_map,
)
from panoslam.panorama import DepthPanorama, ProjectionModel, downsample
from panoslam.registration import alignment_score

TINY = ProjectionModel(32, 8, -math.pi / 4, math.pi / 4)
KEYFRAME = ProjectionModel.preset("1024x128")
UP = GravityEstimate((0.0, 0.0, 1.0))


def facing(model, depth, weight=0):
    """Panorama whose every pixel is a surface patch facing the sensor."""
    pano = DepthPanorama.empty(model)
    pano.depth[:] = depth
    pano.normal[:] = -model.ray_directions()
    pano.normal[pano.depth <= 0] = 0.0
    pano.weight[:] = np.where(pano.depth > 0, weight, 0)
    return pano


def fuse_reference(depth, weight, meas, max_dist=0.5, w_max=10):
    """Scalar fusion rule for one pixel; returns the new (depth, weight)."""
    if meas <= 0.0:
        return depth, weight
    if depth <= 0.0:
        return meas, 1
    if abs(meas - depth) > max_dist:
        return depth, weight
    w = min(weight, w_max)
    return (w * depth + meas) / (w + 1), min(w + 1, w_max)


# --- fusion ---------------------------------------------------------------------------


def test_saturated_pixel_averages_and_keeps_weight():
    kf = facing(TINY, 5.0, weight=10)
    fuse_sweep(kf, facing(TINY, 5.2), g.Pose.identity(), refresh_passes=-1)
    np.testing.assert_allclose(kf.depth, (10 * 5.0 + 5.2) / 11, rtol=1e-6)
    assert kf.depth[0, 0] == pytest.approx(5.018, abs=1e-3)
    assert np.all(kf.weight == 10)


def test_empty_pixel_takes_sample_with_weight_one():
    kf = DepthPanorama.empty(TINY)
    stats = fuse_sweep(kf, facing(TINY, 4.0), g.Pose.identity(), refresh_passes=-1)
    np.testing.assert_allclose(kf.depth, 4.0, rtol=1e-6)
    assert np.all(kf.weight == 1)
    assert stats.filled == TINY.width * TINY.height and stats.averaged == 0


def test_sample_failing_distance_gate_leaves_pixel():
    kf = facing(TINY, 5.0, weight=3)
    before = kf.copy()
    stats = fuse_sweep(kf, facing(TINY, 6.0), g.Pose.identity(), refresh_passes=-1)
    assert stats.averaged == 0
    assert np.array_equal(kf.depth, before.depth)
    assert np.array_equal(kf.weight, before.weight)


def test_sample_failing_angle_gate_leaves_pixel():
    kf = facing(TINY, 5.0, weight=3)
    sweep = facing(TINY, 5.1)
    sweep.normal[:] = np.cross(TINY.ray_directions(), (0.0, 0.0, 1.0))
    sweep.normal /= np.linalg.norm(sweep.normal, axis=-1, keepdims=True)
    before = kf.depth.copy()
    fuse_sweep(kf, sweep, g.Pose.identity(), refresh_passes=-1)
    assert np.array_equal(kf.depth, before)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_fusion_matches_scalar_reference_on_random_streams(seed):
    rng = np.random.default_rng(seed)
    h, w = TINY.shape
    kf = DepthPanorama.empty(TINY)
    ref_d = np.zeros((h, w))
    ref_w = np.zeros((h, w), int)
    ambiguous = np.zeros((h, w), bool)
    surface = rng.uniform(2.0, 20.0, (h, w))
    for _ in range(25):
        meas = surface + rng.normal(0, 0.3, (h, w))
        meas[rng.random((h, w)) < 0.2] = 0.0
        meas[rng.random((h, w)) < 0.05] += 3.0  # occasional outlier
        for i in range(h):
            for j in range(w):
                gap = abs(meas[i, j] - ref_d[i, j])
                if ref_d[i, j] > 0 and meas[i, j] > 0 and abs(gap - 0.5) < 1e-4:
                    ambiguous[i, j] = True
                ref_d[i, j], ref_w[i, j] = fuse_reference(ref_d[i, j], ref_w[i, j], meas[i, j])
        old = kf.depth.copy()
        fuse_sweep(kf, facing(TINY, meas), g.Pose.identity(), refresh_passes=-1)
        ok = ~ambiguous
        np.testing.assert_allclose(kf.depth[ok], ref_d[ok], rtol=1e-5)
        assert np.array_equal(kf.weight[ok], ref_w[ok])
        assert kf.weight.max() <= 10
        both = (old > 0) & (meas > 0) & ok
        lo, hi = np.minimum(old, meas), np.maximum(old, meas)
        assert np.all((kf.depth[both] >= lo[both] - 1e-5) & (kf.depth[both] <= hi[both] + 1e-5))


def test_fusing_a_registered_rendering_keeps_surfaces(room):
    pose = g.from_ypr(0.0, 0.0, 0.0, (0.0, 0.0, 1.5))
    moved = g.from_ypr(0.05, 0.0, 0.0, (0.3, 0.1, 1.5))
    kf = keyframe_from_sweep(KEYFRAME, render(room, pose, sweep_model()))
    truth = render(room, pose, KEYFRAME, passes=0)
    for _ in range(5):
        fuse_sweep(kf, render(room, moved, sweep_model()), pose.inverse() @ moved)
    both = kf.valid & truth.valid
    err = np.abs(kf.depth[both] - truth.depth[both])
    assert np.median(err) < 0.005
    assert kf.weight.max() <= 10


def test_keyframe_rows_outside_sweep_fov_start_invalid(room):
    pose = g.from_ypr(0.0, 0.0, 0.0, (0.0, 0.0, 1.5))
    kf = keyframe_from_sweep(KEYFRAME, render(room, pose, sweep_model()))
    el = KEYFRAME.el_max - (np.arange(KEYFRAME.height) + 0.5) * KEYFRAME.d_el
    outside = np.abs(el) > math.radians(16.5) + KEYFRAME.d_el
    assert not kf.valid[outside].any()
    assert kf.valid[~outside].mean() > 0.9


# --- decisions ------------------------------------------------------------------------


@pytest.mark.parametrize(
    "quality, expected",
    [(0.9, Decision.CONTINUE), (0.5, Decision.SEEK_CLOSURE_OR_CREATE), (0.6, Decision.CONTINUE)],
)
def test_decide_keyframe_table(quality, expected):
    assert decide_keyframe(quality, MapperConfig(quality_threshold=0.6)) is expected


@pytest.mark.parametrize(
    "quality, expected",
    [(0.8, ClosureKind.STRONG), (0.6, ClosureKind.STRONG), (0.5, ClosureKind.WEAK), (0.45, ClosureKind.WEAK), (0.3, ClosureKind.REJECT), (0.0, ClosureKind.REJECT)],
)
def test_classify_closure_table(quality, expected):
    assert classify_closure(quality, 0.6) is expected


def test_config_validation():
    with pytest.raises(ValueError):
        MapperConfig(quality_threshold=1.0)
    with pytest.raises(ValueError):
        MapperConfig(w_max=0)
    with pytest.raises(ValueError):
        MapperConfig(motion_prior="constant-jerk")


# --- closure candidates and grid search ----------------------------------------------


def graph_with(positions, current=0):
    graph = MapGraph()
    for k, p in enumerate(positions):
        graph.add_keyframe(Keyframe(k, g.Pose(t=p), UP, float(k)))
    graph.current = current
    return graph


def test_only_current_gives_no_candidates():
    assert find_closure_candidates(graph_with([(0, 0, 0)]), g.Pose(), 10.0) == []


def test_candidates_nearest_first():
    graph = graph_with([(0, 0, 0), (8, 0, 0), (0, 3, 0), (30, 0, 0)])
    assert find_closure_candidates(graph, g.Pose(), 10.0) == [2, 1]


def test_candidates_match_sort_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 40))
        pos = rng.uniform(-30, 30, (n, 3))
        current = int(rng.integers(n))
        here = rng.uniform(-30, 30, 3)
        radius = float(rng.uniform(1, 40))
        graph = graph_with([tuple(p) for p in pos], current)
        oracle = sorted(
            (k for k in range(n) if k != current and np.linalg.norm(pos[k] - here) <= radius),
            key=lambda k: (np.linalg.norm(pos[k] - here), k),
        )
        assert find_closure_candidates(graph, g.Pose(t=here), radius) == oracle


def test_default_lattice_has_729_poses():
    offsets = GridSpec().offsets()
    assert len(offsets) == 729
    assert len(set(offsets)) == 729
    assert (0.0, 0.0, 0.0) in offsets


@pytest.fixture(scope="module")
def room_keyframe(room):
    pose = g.from_ypr(0.0, 0.0, 0.0, (0.0, 0.0, 1.5))
    return pose, keyframe_from_sweep(KEYFRAME, render(room, pose, sweep_model()))


def test_grid_search_keeps_aligned_prior(room, room_keyframe):
    pose, kf = room_keyframe
    sweep = render(room, pose, sweep_model())
    best, score = grid_search_alignment(downsample(sweep, 4), downsample(kf, 4), g.Pose.identity())
    assert np.linalg.norm(g.log(best)) < 1e-12
    assert score > 0.9


def test_grid_search_finds_one_step_offset(room, room_keyframe):
    pose, kf = room_keyframe
    step = GridSpec().xy_step
    sweep = render(room, g.from_ypr(0.0, 0.0, 0.0, (step, 0.0, 1.5)), sweep_model())
    low_s, low_k = downsample(sweep, 4), downsample(kf, 4)
    best, score = grid_search_alignment(low_s, low_k, g.Pose.identity())
    np.testing.assert_allclose(best.t, (step, 0.0, 0.0), atol=1e-12)
    assert best.angle() < 1e-12
    assert score >= alignment_score(low_s, low_k, g.Pose.identity())


def test_refinement_basin_is_two_lattice_steps():
    grid = GridSpec()
    seed = g.from_ypr(0.4, 0.0, 0.0, (3.0, -1.0, 0.0))
    assert grid.within_basin(seed, seed @ g.Pose(t=(0.99, 0.0, 0.0)))
    assert not grid.within_basin(seed, seed @ g.Pose(t=(0.0, 1.01, 0.0)))
    assert grid.within_basin(seed, seed @ g.from_ypr(math.radians(19.9), 0.0, 0.0))
    assert not grid.within_basin(seed, seed @ g.from_ypr(0.0, math.radians(20.1), 0.0))


# --- consistency check -----------------------------------------------------------------


def _keyframe(k, scene, pose, weight):
    pano = render(scene, pose, KEYFRAME)
    pano.weight[pano.valid] = weight
    return Keyframe(k, pose, UP, 0.0, pano)


def test_transient_box_is_removed_from_the_keyframe_that_saw_it():
    scene = sim.corridor_with_transient(t_on=0.0, t_off=10.0)
    a = g.from_ypr(0.0, 0.0, 0.0, (2.0, 0.0, 1.5))
    b = g.from_ypr(0.0, 0.0, 0.0, (3.0, -0.5, 1.5))
    incoming = _keyframe(0, scene.at(5.0), a, 10)
    other = _keyframe(1, scene.at(20.0), b, 10)
    empty = render(scene.at(20.0), a, KEYFRAME, passes=0)
    box = incoming.panorama.valid & (np.abs(incoming.panorama.depth - empty.depth) > 0.5)
    assert box.sum() > 500
    removed = consistency_check_on_switch(incoming, [other], 0.5, 5)
    gone = box & ~incoming.panorama.valid
    assert gone.sum() >= 0.8 * box.sum()
    assert removed - gone.sum() < 0.02 * (incoming.panorama.valid.sum())


def test_static_scene_loses_nothing(room):
    a = _keyframe(0, room, g.from_ypr(0.0, 0.0, 0.0, (0.0, 0.0, 1.5)), 10)
    b = _keyframe(1, room, g.from_ypr(0.3, 0.0, 0.0, (1.0, 0.5, 1.5)), 10)
    assert consistency_check_on_switch(a, [b], 0.5, 5) == 0


def test_disjoint_keyframes_leave_incoming_unchanged(room):
    a = _keyframe(0, room, g.from_ypr(0.0, 0.0, 0.0, (0.0, 0.0, 1.5)), 10)
    far = _keyframe(1, room, g.from_ypr(0.0, 0.0, 0.0, (0.0, 0.0, 1.5)), 10)
    far.pose = g.Pose(t=(500.0, 0.0, 0.0))
    before = a.panorama.copy()
    assert consistency_check_on_switch(a, [far], 0.5, 5) == 0
    assert np.array_equal(a.panorama.depth, before.depth)


def test_low_weight_keyframes_are_not_trusted():
    scene = sim.corridor_with_transient(t_on=0.0, t_off=10.0)
    a = g.from_ypr(0.0, 0.0, 0.0, (2.0, 0.0, 1.5))
    incoming = _keyframe(0, scene.at(5.0), a, 10)
    other = _keyframe(1, scene.at(20.0), g.from_ypr(0.0, 0.0, 0.0, (3.0, -0.5, 1.5)), 2)
    assert consistency_check_on_switch(incoming, [other], 0.5, 5) == 0


# --- pipeline ---------------------------------------------------------------------------


def test_first_sweep_creates_keyframe_zero(room):
    ds = sim.make_dataset(room, sim.stationary_trajectory(1.0), sim.SensorModel(), duration=0.1)
    m = Mapper()
    report = m.process_sweep(next(ds.sweeps()))
    assert report.action == "init" and report.keyframe == 0
    assert list(m.graph.keyframes) == [0] and m.graph.edges == []


def test_stationary_sensor_keeps_one_keyframe(room):
    ds = sim.make_dataset(room, sim.stationary_trajectory(10.0), sim.SensorModel(range_noise=0.02, dropout=0.1), duration=10.0, seed=3)
    m = Mapper()
    traj = m.run(ds.sweeps())
    assert len(traj) == 100
    assert len(m.graph.keyframes) == 1
    start = traj.poses[0]
    drift = max(g.translation_distance(start, p) for p in traj.poses)
    assert drift < 0.01


def test_imu_extrinsic_undoes_a_rotated_imu(room):
    ds = sim.make_dataset(room, sim.constant_yaw_trajectory(1.0, 1.0), sim.SensorModel(), duration=1.0)
    ext = g.from_ypr(0.7, -0.4, 1.2).rotation
    plain = Mapper().run(ds.sweeps())
    rotated = []
    for s in ds.sweeps():
        s.imu = type(s.imu)(s.imu.t, s.imu.gyro @ ext.T, s.imu.accel @ ext.T)
        rotated.append(s)
    turned = Mapper(MapperConfig(imu_extrinsic=tuple(map(tuple, ext)))).run(rotated)
    for p, q in zip(plain.poses, turned.poses):
        assert g.translation_distance(p, q) < 1e-6
        assert g.rotation_angle_between(p, q) < 1e-6
    with pytest.raises(ValueError):
        MapperConfig(imu_extrinsic=((1, 0, 0), (0, 1, 0), (0, 0, -1)))


def test_unregistrable_sweeps_are_skipped_then_abort(room):
    sensor = sim.SensorModel(columns=256, beams=16)
    ds = sim.make_dataset(room, sim.stationary_trajectory(1.0), sensor, duration=0.8)
    sweeps = list(ds.sweeps())
    m = Mapper(MapperConfig(max_consecutive_skips=3))
    m.process_sweep(sweeps[0])
    blank = [s for s in sweeps[1:]]
    for s in blank:
        s.points[:] = 0.0
    for s in blank[:3]:
        assert m.process_sweep(s).action == "skipped"
    with pytest.raises(DegenerateGeometryError):
        m.process_sweep(blank[3])
    assert m.skipped == 4


def _two_keyframe_graph(room):
    graph = MapGraph()
    a = g.from_ypr(0.0, 0.0, 0.0, (0.0, 0.0, 1.5))
    b = g.from_ypr(0.2, 0.0, 0.0, (1.0, 0.5, 1.5))
    graph.add_keyframe(Keyframe(0, a, UP, 0.1, render(room, a, KEYFRAME)))
    graph.add_keyframe(Keyframe(1, b, GravityEstimate((0.01, 0.0, 0.99995), 3.0), 0.7, render(room, b, KEYFRAME)))
    graph.add_edge(Edge(0, 1, a.inverse() @ b, EdgeKind.ODOMETRY))
    graph.current = 1
    graph.relative = g.Pose(t=(0.1, 0.0, 0.0))
    return graph


def test_map_archive_round_trip(room, tmp_path):
    graph = _two_keyframe_graph(room)
    size = save_map(graph, tmp_path / "map")
    assert size > 0
    back = load_map(tmp_path / "map")
    assert not any(kf.resident for kf in back.keyframes.values())
    assert back.current == 1
    assert back.edges[0].kind is EdgeKind.ODOMETRY
    for k, kf in graph.keyframes.items():
        other = back.keyframes[k]
        assert (other.pose.q, other.pose.t, other.stamp) == (kf.pose.q, kf.pose.t, kf.stamp)
        np.testing.assert_allclose(other.gravity.direction, kf.gravity.direction)
        assert np.array_equal(other.panorama.depth, kf.panorama.depth)
        assert np.array_equal(other.panorama.normal, kf.panorama.normal)


def test_corrupt_keyframe_record_names_the_keyframe(room, tmp_path):
    save_map(_two_keyframe_graph(room), tmp_path / "map")
    path = tmp_path / "map" / "kf_000001.pano"
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    back = load_map(tmp_path / "map")
    _ = back.keyframes[0].panorama
    with pytest.raises(IntegrityError, match="keyframe 1"):
        _ = back.keyframes[1].panorama


def test_missing_manifest(tmp_path):
    with pytest.raises(IntegrityError):
        load_map(tmp_path)


@pytest.mark.slow
def test_hallway_pass_makes_keyframes_without_closures(tmp_path):
    ds = sim.make_dataset(sim.hallway(), sim.hallway_trajectory(), sim.SensorModel(range_noise=0.02, dropout=0.1), seed=2)
    m = Mapper(archive_dir=tmp_path / "kf", max_resident=3)
    for s in ds.sweeps():
        m.process_sweep(s)
        graph = m.graph
        assert len(graph.edges) >= len(graph.keyframes) - 1
        assert graph.is_connected()
    assert len(graph.keyframes) > 1
    assert graph.closure_count() == 0
    # odometry edges agree with the ground-truth motion between keyframe stamps
    truth = ds.ground_truth()
    at = dict(zip(np.round(truth.stamps, 6), truth.poses))
    for e in graph.edges:
        ti, tj = (at[round(graph.keyframes[k].stamp, 6)] for k in (e.i, e.j))
        expected = ti.inverse() @ tj
        assert g.translation_distance(e.pose, expected) < 0.01 * np.linalg.norm(expected.t) + 0.02
        assert g.rotation_angle_between(e.pose, expected) < math.radians(1.0)
    # evicted keyframes reload from the archive
    evicted = [kf for kf in graph.keyframes.values() if not kf.resident]
    assert evicted and all(kf.panorama.valid_count() > 0 for kf in evicted)
    # position drift along a straight hallway stays small
    est = m.trajectory()
    assert np.abs(est.positions[-1] - est.positions[0])[0] == pytest.approx(
        abs(truth.positions[-1, 0] - truth.positions[0, 0]), abs=1.0
    )
