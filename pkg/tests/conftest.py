"""Shared fixtures and cloud generators for the test suite."""

import numpy as np
import pytest

from nodtamp.descriptor import FieldConfig
from nodtamp.geometry import Pose, PointCloud, random_quat


def random_cloud(rng, n=256, half=0.08):
    return PointCloud(rng.uniform(-half, half, size=(n, 3)))


def constellation_cloud(rng, n=256, k_blobs=6, sigma=0.0005, half=0.07):
    """Asymmetric cloud of tight Gaussian blobs.

    The descriptor field over such a cloud is a smooth multilateration-like
    landscape, which is what global pose recovery is exercised on.
    """
    centers = rng.uniform(-half, half, size=(k_blobs, 3))
    counts = rng.multinomial(n - 16 * k_blobs, np.ones(k_blobs) / k_blobs) + 16
    parts = [c + sigma * rng.normal(size=(m, 3)) for c, m in zip(centers, counts)]
    return PointCloud(np.concatenate(parts))


def random_pose(rng, trans_scale=0.1):
    return Pose(random_quat(rng), rng.uniform(-trans_scale, trans_scale, 3))


@pytest.fixture
def cfg():
    return FieldConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
