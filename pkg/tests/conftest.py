import math

import numpy as np
import pytest

from panoslam import geometry as g
from panoslam import simulator as sim
from panoslam.panorama import DepthPanorama, ProjectionModel, estimate_normals, smooth_normals_atrous

SENSOR_FOV = math.radians(33.0)


def render(scene, pose: g.Pose, model: ProjectionModel, noise: float = 0.0, seed: int = 0, passes: int = 3):
    """Ray-cast every pixel centre of ``model`` from ``pose``; normals estimated and smoothed."""
    dirs = model.ray_directions().reshape(-1, 3)
    world = dirs @ pose.rotation.T
    origins = np.broadcast_to(np.asarray(pose.t, float), world.shape)
    rng_, refl = sim.raycast_many(scene, origins, world, model.max_range)
    hit = np.isfinite(rng_)
    if noise > 0:
        rng_ = rng_ + np.random.default_rng(seed).normal(0.0, noise, rng_.shape)
    pano = DepthPanorama.empty(model)
    pano.depth[:] = np.where(hit, rng_, 0.0).reshape(model.shape)
    pano.intensity[:] = np.where(hit, refl / (1.0 + 0.01 * np.where(hit, rng_, 0.0) ** 2), 0.0).reshape(model.shape)
    pano.weight[pano.depth > 0] = 1
    pano.normal = estimate_normals(pano)
    if passes:
        pano.normal = smooth_normals_atrous(pano, passes)
    return pano


def sweep_model(columns=1024, beams=64):
    return ProjectionModel.for_sensor(columns, beams, SENSOR_FOV, 120.0)


def random_pose(rng, max_angle=3.0, max_t=10.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return g.Pose.from_rotvec(axis * rng.uniform(0, max_angle), rng.uniform(-max_t, max_t, 3))


def pose_error(a: g.Pose, b: g.Pose):
    """(translation m, rotation deg) between two poses."""
    return g.translation_distance(a, b), math.degrees(g.rotation_angle_between(a, b))


@pytest.fixture(scope="session")
def room():
    return sim.box_room()


@pytest.fixture(scope="session")
def loop_scene():
    return sim.square_loop()


# one line per acceptance criterion, filled in by test_acceptance and echoed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
