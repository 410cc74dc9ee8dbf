"""Synthetic object and street-scene generators for tests and demos.

The evaluation data the original street-view experiments used is not
available, so acceptance runs on seeded stand-ins: jittered spheres,
cylinders, boxes, and poles, plus a flat ground scene with objects planted
at known tiles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import PointCloud

OBJECT_KINDS = ("sphere", "cylinder", "box", "pole", "lshape")


def make_object(
    kind: str,
    n_points: int,
    rng: np.random.Generator,
    size: float = 1.0,
    jitter: float = 0.01,
    label: Optional[str] = None,
) -> PointCloud:
    """Sample n points from the surface of a primitive, plus Gaussian jitter.

    `size` scales the primitive (sphere radius, cylinder radius with height
    3*size, box half-extent, pole radius size/10 with height 6*size; the
    lshape is an asymmetric two-box body useful as an alignment fixture).
    """
    if kind == "sphere":
        pts = _sphere_surface(n_points, rng) * size
    elif kind == "cylinder":
        pts = _cylinder_surface(n_points, rng, radius=size, height=3.0 * size)
    elif kind == "box":
        pts = _box_surface(n_points, rng) * size
    elif kind == "pole":
        pts = _cylinder_surface(n_points, rng, radius=0.1 * size, height=6.0 * size)
    elif kind == "lshape":
        pts = _lshape_surface(n_points, rng) * size
    else:
        raise ValueError(f"unknown object kind {kind!r}; expected one of {OBJECT_KINDS}")
    if jitter > 0:
        pts = pts + rng.normal(scale=jitter * size, size=pts.shape)
    return PointCloud(pts, label=label or kind)


def _sphere_surface(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def _cylinder_surface(n: int, rng: np.random.Generator, radius: float, height: float) -> np.ndarray:
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    z = rng.uniform(0.0, height, size=n)
    return np.column_stack([radius * np.cos(phi), radius * np.sin(phi), z])


def _box_surface(n: int, rng: np.random.Generator) -> np.ndarray:
    # pick a face uniformly by area (unit cube: all faces equal), then a point on it
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        mask = axis == a
        others = [i for i in range(3) if i != a]
        pts[mask, a] = sign[mask]
        pts[np.ix_(mask, others)] = uv[mask]
    return pts


def _lshape_surface(n: int, rng: np.random.Generator) -> np.ndarray:
    # long flat body with an offset cabin: strong, unambiguous yaw structure
    n_body = n * 2 // 3
    body = _box_surface(n_body, rng) * np.array([2.0, 0.7, 0.5])
    cabin = _box_surface(n - n_body, rng) * np.array([0.6, 0.6, 1.0])
    cabin += np.array([1.4, 0.0, 1.5])
    return np.vstack([body, cabin])


def make_dataset(
    classes: Dict[str, int],
    n_points: int,
    seed: int,
    size_jitter: float = 0.15,
    noise: float = 0.01,
) -> List[PointCloud]:
    """One labeled cloud per object: `classes` maps kind -> object count.

    Sizes vary per object by `size_jitter` (relative) so within-class
    distances are non-trivial; category labels are the primitive kinds.
    """
    rng = np.random.default_rng(seed)
    objects = []
    for kind in sorted(classes):
        for _ in range(classes[kind]):
            size = 1.0 * (1.0 + size_jitter * rng.uniform(-1.0, 1.0))
            objects.append(make_object(kind, n_points, rng, size=size, jitter=noise))
    return objects


@dataclass(frozen=True)
class PlantedScene:
    """Flat ground with objects planted at known tiles."""

    scene: PointCloud
    object_tiles: List[Tuple[int, int]]  # tile coords of each planted object
    tile_size: float


def make_scene(
    seed: int,
    extent_tiles: int = 20,
    tile_size: float = 1.0,
    n_objects: int = 8,
    ground_points_per_tile: int = 30,
    object_points: int = 150,
    ground_noise: float = 0.02,
) -> PlantedScene:
    """Street-scene stand-in: jittered flat ground plus compact objects.

    Each object is centered in a distinct tile with a footprint smaller than
    the tile, so the planted tile is exactly the tile holding its points.
    """
    rng = np.random.default_rng(seed)
    parts = []
    for ix in range(extent_tiles):
        for iy in range(extent_tiles):
            xy = rng.uniform(0.0, tile_size, size=(ground_points_per_tile, 2))
            xy[:, 0] += ix * tile_size
            xy[:, 1] += iy * tile_size
            z = rng.normal(scale=ground_noise, size=(ground_points_per_tile, 1))
            parts.append(np.hstack([xy, z]))

    tiles = [(ix, iy) for ix in range(extent_tiles) for iy in range(extent_tiles)]
    chosen = rng.choice(len(tiles), size=n_objects, replace=False)
    object_tiles = []
    for tile_idx in chosen:
        ix, iy = tiles[tile_idx]
        height = rng.uniform(0.6, 4.0)
        radius = 0.3 * tile_size
        phi = rng.uniform(0.0, 2.0 * np.pi, size=object_points)
        rad = radius * np.sqrt(rng.uniform(0.0, 1.0, size=object_points))
        x = (ix + 0.5) * tile_size + rad * np.cos(phi)
        y = (iy + 0.5) * tile_size + rad * np.sin(phi)
        z = rng.uniform(0.05, height, size=object_points)
        parts.append(np.column_stack([x, y, z]))
        object_tiles.append((ix, iy))

    scene = PointCloud(np.vstack(parts), label="scene")
    return PlantedScene(scene=scene, object_tiles=sorted(object_tiles), tile_size=tile_size)
