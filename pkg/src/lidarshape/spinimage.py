"""Spin images, PCA codebooks, point encoding, and part clustering.

A spin image bins a point's neighborhood by radial distance from a spin axis
(alpha, 16 columns over [0, R]) and signed height along it (beta, 31 rows
over [-R, R]), with bilinear vote splitting. With the global +z axis the
descriptor is invariant to planar translation, vertical translation, and
rotation about z, which matches how upright street objects can move.

Codebooks compress descriptors to 30 PCA coefficients, either over whole
31x16 images (the default; most robust) or over 11x11 pixel patches (finer
but noise-sensitive). Points are grouped into parts by k-means over their
codes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .core import PointCloud

SPIN_ROWS = 31  # beta axis, [-R, R]
SPIN_COLS = 16  # alpha axis, [0, R]
CODE_COUNT = 30
PATCH_SIZE = 11
WHOLE_IMAGE = "whole-image"
PATCH_11X11 = "patch-11x11"
GLOBAL_Z = "global-z"
LOCAL_NORMAL = "local-normal"


@dataclass(frozen=True)
class SpinImage:
    """31x16 non-negative grid; normalized to unit mass unless no neighbor
    fell inside the support radius (then all-zero, flagged by is_empty)."""

    grid: np.ndarray
    support_radius: float

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.shape != (SPIN_ROWS, SPIN_COLS):
            raise ValueError(f"spin image must be {SPIN_ROWS}x{SPIN_COLS}, got {g.shape}")
        if np.any(g < 0):
            raise ValueError("spin image entries must be non-negative")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    @property
    def is_empty(self) -> bool:
        return float(self.grid.sum()) == 0.0

    def vector(self) -> np.ndarray:
        return self.grid.ravel()


@dataclass(frozen=True)
class Codebook:
    """Orthonormal PCA basis (30 x dims) with the training mean.

    eigenvalues holds the full descending spectrum when the codebook was
    trained in-process; it is absent after loading from file.
    """

    kind: str
    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: Optional[np.ndarray] = None

    @property
    def dims(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class PointCode:
    coeffs: np.ndarray


@dataclass(frozen=True)
class PartLabeling:
    labels: np.ndarray
    k: int
    centers: np.ndarray
    inertia_history: tuple


def default_support_radius(cloud: PointCloud) -> float:
    """Half the bounding-box diagonal."""
    return 0.5 * cloud.bbox_diagonal()


def _local_normal(points: np.ndarray, index: int, k_neighbors: int = 16) -> np.ndarray:
    """PCA normal over the k nearest neighbors, flipped into the upper
    hemisphere."""
    p = points[index]
    d2 = np.square(points - p).sum(axis=1)
    order = np.argsort(d2, kind="stable")
    take = order[: min(k_neighbors + 1, len(points))]  # includes the point itself
    nbhd = points[take]
    centered = nbhd - nbhd.mean(axis=0)
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    if normal[2] < 0:
        normal = -normal
    return normal


def spin_image_at(
    cloud: PointCloud,
    index: int,
    axis_mode: str = GLOBAL_Z,
    support_radius: Optional[float] = None,
) -> SpinImage:
    """Spin image at one point: bilinear (alpha, beta) votes from every other
    point within the support radius, normalized to unit mass."""
    if support_radius is None:
        support_radius = default_support_radius(cloud)
    if not support_radius > 0:
        raise ValueError(f"support_radius must be positive, got {support_radius}")
    pts = cloud.points
    p = pts[index]
    if axis_mode == GLOBAL_Z:
        axis = np.array([0.0, 0.0, 1.0])
    elif axis_mode == LOCAL_NORMAL:
        axis = _local_normal(pts, index)
    else:
        raise ValueError(f"unknown axis_mode {axis_mode!r}")

    rel = np.delete(pts, index, axis=0) - p
    dist = np.linalg.norm(rel, axis=1)
    rel = rel[dist <= support_radius]
    grid = np.zeros((SPIN_ROWS, SPIN_COLS))
    if rel.shape[0] == 0:
        return SpinImage(grid, support_radius)

    beta = rel @ axis
    alpha = np.linalg.norm(rel - beta[:, None] * axis[None, :], axis=1)

    col_w = support_radius / SPIN_COLS
    row_h = 2.0 * support_radius / SPIN_ROWS
    u = alpha / col_w - 0.5
    v = (beta + support_radius) / row_h - 0.5
    j0 = np.floor(u).astype(np.int64)
    i0 = np.floor(v).astype(np.int64)
    fu = u - j0
    fv = v - i0
    # split each vote over the 4 surrounding cells; off-grid shares clamp in
    for di, wv in ((0, 1.0 - fv), (1, fv)):
        for dj, wu in ((0, 1.0 - fu), (1, fu)):
            rows = np.clip(i0 + di, 0, SPIN_ROWS - 1)
            cols = np.clip(j0 + dj, 0, SPIN_COLS - 1)
            np.add.at(grid, (rows, cols), wv * wu)
    return SpinImage(grid / grid.sum(), support_radius)


def spin_images(
    cloud: PointCloud,
    axis_mode: str = GLOBAL_Z,
    support_radius: Optional[float] = None,
) -> List[SpinImage]:
    if support_radius is None:
        support_radius = default_support_radius(cloud)
    return [spin_image_at(cloud, i, axis_mode, support_radius) for i in range(len(cloud))]


# ---------------------------------------------------------------------------
# PCA codebooks
# ---------------------------------------------------------------------------


def _extract_patches(grid: np.ndarray) -> np.ndarray:
    """All 11x11 patches centered at each pixel, zero-padded borders;
    returns (rows*cols, 121)."""
    half = PATCH_SIZE // 2
    padded = np.pad(grid, half)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (PATCH_SIZE, PATCH_SIZE))
    return windows.reshape(-1, PATCH_SIZE * PATCH_SIZE)


def train_codebook(images: Sequence[SpinImage], kind: str = WHOLE_IMAGE) -> Codebook:
    """PCA of training descriptors, keeping the top 30 eigenvectors.

    whole-image: one 496-d sample per spin image. patch-11x11: one 121-d
    sample per pixel patch of every image.
    """
    if len(images) <= CODE_COUNT:
        raise ValueError(
            f"need more than {CODE_COUNT} training images, got {len(images)}"
        )
    if kind == WHOLE_IMAGE:
        data = np.stack([img.vector() for img in images])
    elif kind == PATCH_11X11:
        data = np.vstack([_extract_patches(img.grid) for img in images])
    else:
        raise ValueError(f"unknown codebook kind {kind!r}")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / data.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    basis = eigvecs[:, order[:CODE_COUNT]].T
    return Codebook(kind=kind, mean=mean, basis=basis, eigenvalues=eigvals)


def encode(img: SpinImage, cb: Codebook) -> PointCode:
    """Project the descriptor on the codebook basis.

    whole-image: 30 projection coefficients of the image vector. patch: the
    per-patch coefficient vectors mean-pooled over all pixels.
    """
    if cb.kind == WHOLE_IMAGE:
        vec = img.vector()
        if vec.shape[0] != cb.dims:
            raise ValueError(f"codebook dims {cb.dims} do not match image {vec.shape[0]}")
        return PointCode(cb.basis @ (vec - cb.mean))
    patches = _extract_patches(img.grid)
    if patches.shape[1] != cb.dims:
        raise ValueError(f"codebook dims {cb.dims} do not match patches {patches.shape[1]}")
    coeffs = (patches - cb.mean) @ cb.basis.T
    return PointCode(coeffs.mean(axis=0))


def encode_all(images: Sequence[SpinImage], cb: Codebook) -> List[PointCode]:
    return [encode(img, cb) for img in images]


# ---------------------------------------------------------------------------
# Part clustering
# ---------------------------------------------------------------------------


def cluster_parts(codes: Sequence[PointCode], k: int, seed: int = 0) -> PartLabeling:
    """Seeded k-means (k-means++ init) over point codes; at most 100
    iterations, stops when assignments no longer change."""
    x = np.stack([c.coeffs for c in codes])
    n = x.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_plusplus(x, k, rng)

    labels = np.full(n, -1, dtype=np.int64)
    history = []
    for _ in range(100):
        d2 = np.square(x[:, None, :] - centers[None, :, :]).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = x[labels == j]
            if members.shape[0] > 0:
                centers[j] = members.mean(axis=0)
    return PartLabeling(labels=labels, k=k, centers=centers, inertia_history=tuple(history))


def _kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(0, n)]
    d2 = np.square(x - centers[0]).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = centers[0]
            break
        centers[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.square(x - centers[j]).sum(axis=1))
    return centers


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def save_codebook(cb: Codebook, path) -> None:
    """Header line (kind, dims, count), then the mean and each eigenvector
    as CSV rows."""
    with open(path, "w") as fh:
        fh.write(f"{cb.kind},{cb.dims},{cb.basis.shape[0]}\n")
        fh.write(",".join(f"{v:.17g}" for v in cb.mean) + "\n")
        for row in cb.basis:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_codebook(path) -> Codebook:
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2:
        raise ValueError(f"{path}: not a codebook file")
    kind, dims_s, count_s = lines[0].split(",")
    dims, count = int(dims_s), int(count_s)
    if kind not in (WHOLE_IMAGE, PATCH_11X11):
        raise ValueError(f"{path}: unknown codebook kind {kind!r}")
    if len(lines) != 2 + count:
        raise ValueError(f"{path}: expected {count} basis rows, got {len(lines) - 2}")
    mean = np.array([float(v) for v in lines[1].split(",")])
    basis = np.array([[float(v) for v in line.split(",")] for line in lines[2:]])
    if mean.shape[0] != dims or basis.shape != (count, dims):
        raise ValueError(f"{path}: inconsistent codebook dimensions")
    return Codebook(kind=kind, mean=mean, basis=basis)


def write_spin_pgm(img: SpinImage, path) -> None:
    """ASCII PGM for visual inspection; brightest pixel = highest density,
    row 0 = top of the beta range."""
    peak = float(img.grid.max())
    scaled = np.zeros_like(img.grid, dtype=np.int64) if peak == 0 else np.rint(
        img.grid / peak * 255
    ).astype(np.int64)
    flipped = scaled[::-1]  # beta increases upward
    with open(path, "w") as fh:
        fh.write(f"P2\n{SPIN_COLS} {SPIN_ROWS}\n255\n")
        for row in flipped:
            fh.write(" ".join(str(v) for v in row) + "\n")
