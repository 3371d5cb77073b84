import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import render, sweep_model
from panoslam import geometry as g
from panoslam import simulator as sim
from panoslam.errors import IntegrityError, OutOfBoundsError
from panoslam.panorama import (
    DepthPanorama,
    ProjectionModel,
    build_panorama,
    downsample,
    estimate_normals,
    load_panorama,
    project,
    read_record,
    save_panorama,
    smooth_normals_atrous,
    unproject,
    valid_count,
    write_record,
)

SMALL = ProjectionModel(256, 64, -math.pi / 4, math.pi / 4)


def angle_deg(a, b):
    c = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(c))


# --- projection --------------------------------------------------------------


def test_unit_x_projects_to_centre_row_reference_column():
    m = ProjectionModel.preset("1024x128")
    row, col, rng = project(m, (1.0, 0.0, 0.0))
    assert row == pytest.approx(m.height / 2 - 0.5)
    assert col == pytest.approx(0.0)
    assert rng == pytest.approx(1.0)


def test_point_above_elevation_range_is_out_of_bounds():
    with pytest.raises(OutOfBoundsError):
        project(SMALL, (1.0, 0.0, 5.0))


def test_unproject_centre_pixel():
    m = ProjectionModel.preset("1024x128")
    np.testing.assert_allclose(unproject(m, m.height / 2 - 0.5, 0.0, 5.0), [5.0, 0.0, 0.0], atol=1e-12)


def test_unproject_rejects_nonpositive_range():
    with pytest.raises(ValueError):
        unproject(SMALL, 10, 10, 0.0)


def test_round_trip_many_points():
    rng = np.random.default_rng(0)
    m = ProjectionModel.preset("2048x256")
    az = rng.uniform(-math.pi, math.pi, 10_000)
    el = rng.uniform(m.el_min + 1e-6, m.el_max - 1e-6, 10_000)
    r = rng.uniform(0.5, 80.0, 10_000)
    pts = r[:, None] * np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], 1)
    for p in pts:
        back = unproject(m, *project(m, p))
        assert np.linalg.norm(back - p) <= 1e-6 * np.linalg.norm(p)


@given(
    row=st.floats(-0.5, 127.49),
    col=st.floats(0.0, 1023.99),
    rng_=st.floats(0.1, 200.0),
)
def test_pixel_round_trip_is_subpixel(row, col, rng_):
    m = ProjectionModel.preset("1024x128")
    r2, c2, d2 = project(m, unproject(m, row, col, rng_))
    dc = abs(c2 - col)
    assert abs(r2 - row) < 0.5
    assert min(dc, m.width - dc) < 0.5
    assert d2 == pytest.approx(rng_)


# --- z-buffer ----------------------------------------------------------------


def test_empty_point_list_gives_invalid_panorama():
    pano = build_panorama(SMALL, np.zeros((0, 3)))
    assert pano.valid_count() == 0


def test_nearest_point_wins_pixel():
    pano = build_panorama(SMALL, [(5.0, 0.0, 0.0), (2.0, 0.0, 0.0)], [0.1, 0.9])
    r, c, _ = project(SMALL, (1.0, 0.0, 0.0))
    i, j = int(math.floor(r + 0.5)), int(math.floor(c + 0.5))
    assert pano.depth[i, j] == pytest.approx(2.0)
    assert pano.intensity[i, j] == pytest.approx(0.9)
    assert pano.weight[i, j] == 1
    assert pano.valid_count() == 1


def test_room_sweep_matches_raycast_oracle(room):
    sensor = sim.SensorModel()
    traj = sim.stationary_trajectory(1.0)
    sweep = sim.synthesize_sweep(room, traj, sensor, 0.0)
    model = sensor.projection_model()
    pano = build_panorama(model, sweep.points[sweep.returned], sweep.intensity[sweep.returned])
    oracle = render(room, traj.query(0.0), model, passes=0)
    both = pano.valid | oracle.valid
    assert np.array_equal(pano.valid, oracle.valid)
    assert np.max(np.abs(pano.depth[both] - oracle.depth[both])) < 0.01


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_build_panorama_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(400, 3)) * [5, 5, 1]
    # exact range ties on one pixel: mirrored z on the horizon row is impossible, so duplicate points instead
    pts = np.concatenate([pts, pts[:50]])
    inten = rng.uniform(0, 1, len(pts))
    a = build_panorama(SMALL, pts, inten)
    perm = rng.permutation(len(pts))
    b = build_panorama(SMALL, pts[perm], inten[perm])
    assert a.depth.tobytes() == b.depth.tobytes()
    assert a.intensity.tobytes() == b.intensity.tobytes()


def test_equal_range_tie_goes_to_smaller_point():
    # both points have range exactly 7 and land on the same pixel of a coarse model
    small, large = (2.0, 3.0, 6.0), (3.0, 2.0, 6.0)
    m = ProjectionModel(8, 8, -math.pi / 2, math.pi / 2)
    for pts, inten in (([small, large], [1.0, 2.0]), ([large, small], [2.0, 1.0])):
        pano = build_panorama(m, pts, inten)
        assert pano.valid_count() == 1
        assert pano.depth.max() == 7.0
        assert pano.intensity.max() == 1.0


# --- normals -----------------------------------------------------------------


def test_plane_facing_sensor_normals_within_two_degrees():
    scene = sim.SceneModel(planes=[sim.Plane((5.0, 0.0, 0.0), (-1, 0, 0), (0, 1, 0), 50.0, 50.0)])
    pano = render(scene, g.Pose.identity(), SMALL)
    ok = pano.normal_valid
    assert ok.sum() > 1000
    assert angle_deg(pano.normal[ok], np.array([-1.0, 0.0, 0.0])).max() < 2.0


def test_sphere_normals_point_back_at_sensor():
    scene = sim.SceneModel(spheres=[sim.Sphere((0.0, 0.0, 0.0), 10.0)])
    pano = render(scene, g.Pose.identity(), SMALL, passes=0)
    ok = pano.normal_valid
    assert ok.all()
    rays = SMALL.ray_directions()[ok]
    assert angle_deg(pano.normal[ok], -rays).max() < 2.0


def test_pixel_next_to_hole_has_no_normal():
    pano = DepthPanorama.empty(SMALL)
    pano.depth[:] = 5.0
    pano.depth[20, 31] = 0.0
    n = estimate_normals(pano)
    assert not np.any(n[20, 30])  # right neighbour missing
    assert not np.any(n[19, 31])  # down neighbour missing
    assert np.any(n[20, 29])


def test_normals_face_sensor_and_are_unit(room):
    pano = render(room, g.Pose((0, 0, 0, 1), (0.5, 0.3, 1.4)), SMALL)
    ok = pano.normal_valid
    assert np.all(np.sum(pano.normal[ok] * SMALL.ray_directions()[ok], axis=-1) <= 1e-6)
    np.testing.assert_allclose(np.linalg.norm(pano.normal[ok], axis=-1), 1.0, atol=1e-5)


# --- smoothing ---------------------------------------------------------------


def test_constant_normal_field_is_fixed_point():
    pano = DepthPanorama.empty(SMALL)
    pano.depth[:] = 5.0
    pano.normal[:] = np.array([0.0, 0.6, -0.8], np.float32)
    out = smooth_normals_atrous(pano)
    np.testing.assert_allclose(out, pano.normal, atol=1e-6)


def test_no_blending_across_depth_step():
    pano = DepthPanorama.empty(SMALL)
    left = np.array([0.0, 0.0, -1.0], np.float32)
    right = np.array([0.0, -1.0, 0.0], np.float32)
    pano.depth[:, :128] = 3.0
    pano.depth[:, 128:] = 10.0
    pano.normal[:, :128] = left
    pano.normal[:, 128:] = right
    rng = np.random.default_rng(1)
    noisy = pano.normal + rng.normal(0, 0.1, pano.normal.shape).astype(np.float32)
    noisy /= np.linalg.norm(noisy, axis=-1, keepdims=True)
    out = smooth_normals_atrous(pano, normals=noisy)
    # columns 0 and 255 are also a step (wrap-around)
    assert angle_deg(out[:, 2:126], left).mean() < angle_deg(noisy[:, 2:126], left).mean() / 2
    assert angle_deg(out[:, 130:254], right).mean() < angle_deg(noisy[:, 130:254], right).mean() / 2
    # pixels touching the step keep their own side
    assert angle_deg(out[:, 127], left).max() < 30.0
    assert angle_deg(out[:, 128], right).max() < 30.0
    exact = smooth_normals_atrous(pano)
    np.testing.assert_allclose(exact[:, :128], np.broadcast_to(left, (64, 128, 3)), atol=1e-6)
    np.testing.assert_allclose(exact[:, 128:], np.broadcast_to(right, (64, 128, 3)), atol=1e-6)


def _perturb(normals, sigma_deg, rng):
    """Rotate each normal about a random perpendicular axis by a Gaussian angle."""
    axis = np.cross(normals, rng.normal(size=normals.shape))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    ang = np.radians(rng.normal(0.0, sigma_deg, normals.shape[:-1]))[..., None]
    n = normals * np.cos(ang) + np.cross(axis, normals) * np.sin(ang)
    return n.astype(np.float32)


def test_smoothing_halves_noise_on_plane():
    scene = sim.SceneModel(planes=[sim.Plane((0.0, 0.0, -2.0), (0, 0, 1), (1, 0, 0), 100.0, 100.0)])
    model = ProjectionModel(512, 64, -math.pi / 4, -math.radians(10))
    pano = render(scene, g.Pose.identity(), model, passes=0)
    truth = np.broadcast_to(np.array([0.0, 0.0, 1.0]), pano.normal.shape)
    noisy = _perturb(truth, 15.0, np.random.default_rng(3))
    out = smooth_normals_atrous(pano, normals=noisy)
    before = angle_deg(noisy, truth).mean()
    after = angle_deg(out, truth).mean()
    assert after <= before / 2


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_smoothing_output_is_unit_or_zero(seed):
    rng = np.random.default_rng(seed)
    pano = DepthPanorama.empty(ProjectionModel(32, 16))
    pano.depth[:] = rng.uniform(0, 10, pano.depth.shape) * (rng.random(pano.depth.shape) > 0.2)
    n = rng.normal(size=pano.normal.shape)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    n[rng.random(pano.depth.shape) < 0.2] = 0
    out = smooth_normals_atrous(pano, normals=n.astype(np.float32))
    norms = np.linalg.norm(out, axis=-1)
    assert np.all((np.abs(norms - 1) < 1e-5) | (norms == 0))


# --- pyramid and validity -------------------------------------------------------


def test_downsample_factor_one_is_identity(room):
    pano = render(room, g.Pose((0, 0, 0, 1), (0, 0, 1.5)), SMALL)
    d = downsample(pano, 1)
    assert d.depth.tobytes() == pano.depth.tobytes()
    assert d.normal.tobytes() == pano.normal.tobytes()


def test_downsample_shape():
    d = downsample(DepthPanorama.empty(ProjectionModel.preset("2048x256")), 4)
    assert d.model.shape == (64, 512)


def test_downsample_takes_block_minimum():
    pano = DepthPanorama.empty(ProjectionModel(16, 8))
    pano.depth[0, 0], pano.depth[0, 1], pano.depth[1, 0], pano.depth[1, 1] = 3, 5, 0, 4
    pano.weight[0, 0], pano.weight[0, 1], pano.weight[1, 1] = 10, 10, 10
    d = downsample(pano, 2, w_max=10)
    assert d.depth[0, 0] == 3
    assert d.weight[0, 0] == 10


def test_downsample_rejects_bad_factor():
    with pytest.raises(ValueError):
        downsample(DepthPanorama.empty(ProjectionModel(24, 8)), 16)
    with pytest.raises(ValueError):
        downsample(DepthPanorama.empty(ProjectionModel(24, 8)), 3)


def test_valid_count_rules():
    pano = DepthPanorama.empty(SMALL)
    pano.depth[:] = 4.0
    pano.intensity[:] = 0.2
    assert valid_count(pano, 0.0).count == SMALL.width * SMALL.height
    assert valid_count(pano, 0.5).count == 0


def test_valid_count_matches_enumeration_with_dropout(room):
    sensor = sim.SensorModel(dropout=0.3)
    sweep = sim.synthesize_sweep(room, sim.stationary_trajectory(1.0), sensor, 0.0, np.random.default_rng(4))
    model = sensor.projection_model()
    pano = build_panorama(model, sweep.points[sweep.returned], sweep.intensity[sweep.returned])
    thr = 0.05
    expected = 0
    for i in range(model.height):
        for j in range(model.width):
            expected += bool(pano.depth[i, j] > 0 and pano.intensity[i, j] > thr)
    assert valid_count(pano, thr).count == expected
    assert 0 < expected < model.width * model.height


# --- archive record ------------------------------------------------------------


def test_record_round_trip(tmp_path, room):
    pano = render(room, g.Pose((0, 0, 0, 1), (0, 0, 1.5)), SMALL)
    save_panorama(pano, tmp_path / "a.pano")
    back = load_panorama(tmp_path / "a.pano")
    assert back.model == pano.model
    for name in ("depth", "intensity", "normal", "weight"):
        assert getattr(back, name).tobytes() == getattr(pano, name).tobytes()


def test_corrupt_record_raises_integrity_error(room):
    pano = render(room, g.Pose((0, 0, 0, 1), (0, 0, 1.5)), SMALL)
    buf = io.BytesIO()
    write_record(pano, buf)
    raw = bytearray(buf.getvalue())
    raw[200] ^= 0xFF
    with pytest.raises(IntegrityError):
        read_record(io.BytesIO(bytes(raw)))
    with pytest.raises(IntegrityError):
        read_record(io.BytesIO(bytes(raw[:100])))


def test_sweep_model_rows_sit_on_beams():
    sensor = sim.SensorModel()
    m = sweep_model()
    el_rows = m.el_max - (np.arange(m.height) + 0.5) * m.d_el
    np.testing.assert_allclose(el_rows, sensor.beam_elevations(), atol=1e-12)
