"""Basic projection mapping: drop z, scale to pixels, floor, mark occupancy.

Defines MappedImage, the common output type of every mapping here. The
grad_path tag records whether raw point coordinates reach pixel intensities
(CoordinateLeak) or are destroyed by quantization (Blocked); the attack
module keys off it.
"""

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cloud import PointCloud


class GradPath(Enum):
    BLOCKED = "blocked"
    COORDINATE_LEAK = "coordinate-leak"


def cloud_key(cloud: PointCloud) -> str:
    return hashlib.sha1(np.ascontiguousarray(cloud.points).tobytes()).hexdigest()


@dataclass
class MappedImage:
    """H x W x C intensity grid in [0, 1].

    leak_map is an (L, 4) int array of (row, col, point_index, channel) links,
    present exactly when grad_path is COORDINATE_LEAK; channel k of a linked
    pixel holds (coordinate_k + 1) / 2 of the linked point. source_key
    fingerprints the cloud the image was mapped from so a stale leak_map can
    be detected.
    """
    data: np.ndarray
    grad_path: GradPath
    leak_map: np.ndarray | None = None
    source_key: str | None = None

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("data must be (H, W, C)")
        has_leak = self.leak_map is not None and len(self.leak_map) > 0
        if has_leak != (self.grad_path is GradPath.COORDINATE_LEAK):
            raise ValueError("leak_map must be non-empty iff grad_path is COORDINATE_LEAK")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _pixel_coords(points: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Floor mapping from world (x, y) to (row, col); y grows upward in the
    world, row index grows downward. Out-of-bounds points land on pixel (0, 0)."""
    rows = np.floor((1.0 - points[:, 1]) / 2.0 * size).astype(np.int64)
    cols = np.floor((points[:, 0] + 1.0) / 2.0 * size).astype(np.int64)
    oob = (rows < 0) | (rows >= size) | (cols < 0) | (cols >= size)
    rows[oob] = 0
    cols[oob] = 0
    return rows, cols


def basic_project(cloud: PointCloud, size: int = 456) -> MappedImage:
    """Binary occupancy image of the cloud's (x, y) footprint; z is discarded.

    The floor quantization has zero derivative almost everywhere, so the
    result carries no usable input gradient: grad_path is Blocked.
    """
    if cloud.n < 1:
        raise ValueError("empty cloud")
    rows, cols = _pixel_coords(cloud.points, size)
    data = np.zeros((size, size, 1), dtype=np.float64)
    data[rows, cols, 0] = 1.0
    return MappedImage(data, GradPath.BLOCKED, source_key=cloud_key(cloud))


def basic_project_leaky(cloud: PointCloud, size: int = 456) -> MappedImage:
    """Same occupancy geometry as basic_project, but each lit pixel's three
    channels hold the mapped point's coordinates encoded as (t + 1) / 2.

    Collisions resolve last-writer-wins in ascending point order; leak_map
    records only the surviving links, so it is exactly the image's
    dependency on the cloud.
    """
    if cloud.n < 1:
        raise ValueError("empty cloud")
    rows, cols = _pixel_coords(cloud.points, size)
    data = np.zeros((size, size, 3), dtype=np.float64)
    winner = {}
    for i in range(cloud.n):
        winner[(int(rows[i]), int(cols[i]))] = i
    links = np.empty((len(winner) * 3, 4), dtype=np.int64)
    k = 0
    for (r, c), i in winner.items():
        data[r, c, :] = np.clip((cloud.points[i] + 1.0) / 2.0, 0.0, 1.0)
        for ch in range(3):
            links[k] = (r, c, i, ch)
            k += 1
    return MappedImage(data, GradPath.COORDINATE_LEAK, leak_map=links,
                       source_key=cloud_key(cloud))


def remap_frozen(image: MappedImage, cloud: PointCloud) -> np.ndarray:
    """Re-encode pixel intensities from the (possibly perturbed) cloud while
    holding the pixel/point assignment in leak_map fixed.

    This is the differentiable branch of a leaky mapping in isolation; the
    attack module uses it for finite-difference checks of the leak gradient.
    """
    if image.leak_map is None:
        raise ValueError("image has no leak_map")
    data = image.data.copy()
    rows, cols, pts, chans = image.leak_map.T
    data[rows, cols, chans] = np.clip((cloud.points[pts, chans] + 1.0) / 2.0, 0.0, 1.0)
    return data
