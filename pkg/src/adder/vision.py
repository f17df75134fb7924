"""Corner detection and density clustering on reconstructed frames.

FAST-9 segment test: a pixel is a corner when at least 9 contiguous pixels on
the 16-pixel Bresenham ring of radius 3 are all brighter than center +
threshold or all darker than center - threshold.  No non-maximum suppression;
the clustering stage downstream prefers dense responses.

DBSCAN labels the detected keypoints with Euclidean density clustering;
cluster ids follow first-touch order of the input scan, and each cluster is
fully expanded before the scan moves on, so a border point reachable from
several clusters joins the earliest-created one.  Deterministic for a given
input order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

# Bresenham ring of radius 3, clockwise from 12 o'clock: (dx, dy) offsets.
RING_OFFSETS = (
    (0, -3), (1, -3), (2, -2), (3, -1),
    (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1),
    (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)

NOISE = -1


@dataclass(frozen=True, slots=True)
class Keypoint:
    x: int
    y: int


@dataclass(frozen=True, slots=True)
class ClusterConfig:
    eps: float = 16.0
    min_pts: int = 4
    min_cluster_size: int = 5
    max_boxes: int = 25

    def validate(self) -> None:
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.min_pts < 2:
            raise ValueError("min_pts must be >= 2")
        if self.max_boxes < 1:
            raise ValueError("max_boxes must be >= 1")


@dataclass(frozen=True, slots=True)
class FeatureCluster:
    members: tuple[Keypoint, ...]
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 (tight hull)

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def area(self) -> int:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0 + 1) * (y1 - y0 + 1)


def fast_detect(image: np.ndarray, threshold: int, arc_len: int = 9) -> list[Keypoint]:
    """All ring-segment corners of a grayscale plane, sorted by (y, x).

    Vectorized over the interior (3-pixel margin); evaluates the full ring,
    so the result set is exactly the segment-test definition.
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] < 7 or image.shape[1] < 7:
        raise ValueError("image must be a grayscale plane of at least 7x7")
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    img = image.astype(np.int16)
    h, w = img.shape
    center = img[3:h - 3, 3:w - 3]
    hi = center + threshold
    lo = center - threshold

    brighter = np.empty((16,) + center.shape, dtype=bool)
    darker = np.empty((16,) + center.shape, dtype=bool)
    for i, (dx, dy) in enumerate(RING_OFFSETS):
        ring = img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx]
        brighter[i] = ring > hi
        darker[i] = ring < lo

    corner = np.zeros(center.shape, dtype=bool)
    for mask in (brighter, darker):
        wrapped = np.concatenate([mask, mask[:arc_len - 1]], axis=0)
        run = np.ones(center.shape, dtype=bool)
        for start in range(16):
            np.all(wrapped[start:start + arc_len], axis=0, out=run)
            corner |= run
    ys, xs = np.nonzero(corner)
    return [Keypoint(int(x) + 3, int(y) + 3) for y, x in zip(ys, xs)]


def dbscan(points: list[Keypoint], eps: float, min_pts: int) -> list[int]:
    """Label each point with its cluster id, or NOISE (-1).

    Standard density clustering: a point is core when at least ``min_pts``
    points (itself included) lie within ``eps``.  Each unvisited core seeds
    the next cluster id and the cluster is grown to completion before the
    scan continues.
    """
    n = len(points)
    if n == 0:
        return []
    coords = np.array([(p.x, p.y) for p in points], dtype=np.float64)
    eps2 = eps * eps
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
    neighbor_lists = [np.nonzero(row <= eps2)[0] for row in d2]
    core = np.array([len(nb) >= min_pts for nb in neighbor_lists])

    labels = [None] * n
    cluster = 0
    for i in range(n):
        if labels[i] is not None or not core[i]:
            continue
        labels[i] = cluster
        queue = deque(neighbor_lists[i])
        while queue:
            j = queue.popleft()
            if labels[j] is not None:
                continue
            labels[j] = cluster
            if core[j]:
                queue.extend(neighbor_lists[j])
        cluster += 1
    return [NOISE if lab is None else lab for lab in labels]


def clusters_to_boxes(points: list[Keypoint], labels: list[int],
                      cfg: ClusterConfig) -> list[FeatureCluster]:
    """Bounding boxes of the large clusters, biggest first, capped at max_boxes."""
    cfg.validate()
    groups: dict[int, list[Keypoint]] = {}
    for p, lab in zip(points, labels):
        if lab != NOISE:
            groups.setdefault(lab, []).append(p)
    clusters = []
    for members in groups.values():
        if len(members) < cfg.min_cluster_size:
            continue
        xs = [p.x for p in members]
        ys = [p.y for p in members]
        clusters.append(FeatureCluster(tuple(members),
                                       (min(xs), min(ys), max(xs), max(ys))))
    clusters.sort(key=lambda cl: (-cl.size, -cl.area, cl.bbox[1], cl.bbox[0]))
    return clusters[:cfg.max_boxes]
