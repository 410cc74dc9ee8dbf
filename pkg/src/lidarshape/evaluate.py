"""Within/across-group evaluation of the four shape distribution features.

Every object gets D2, A3, T3, R3 histograms over ranges fixed once from the
dataset-wide maximum diameter (so histograms are comparable across objects),
either exactly or via the octree-accelerated path. Object pairs are scored
by per-histogram EMD aggregated under three strategies (average, smallest,
biggest of the four), and per-category statistics summarize how tight each
category is relative to everything else: the within/across mean-distance
ratio should sit well below 1 for well-separated classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import Histogram1D, PointCloud, emd_1d, load_cloud
from .octree import OctreeConfig, build_octree
from .shapedist import KINDS, SDConfig, SDFeature, exact_sd, hsd, histogram_l1, sd_ranges

STRATEGIES = ("average", "smallest", "biggest")
MODES = ("exact", "hsd")
UNDEFINED = "NA"  # explicit marker for stats that do not exist


@dataclass(frozen=True)
class LabeledDataset:
    objects: Tuple[Tuple[PointCloud, str], ...]
    categories: Tuple[str, ...]

    def __post_init__(self):
        known = set(self.categories)
        for _, cat in self.objects:
            if cat not in known:
                raise ValueError(f"object category {cat!r} not in category list")

    @staticmethod
    def from_pairs(pairs: Sequence[Tuple[PointCloud, str]]) -> "LabeledDataset":
        cats = []
        for _, cat in pairs:
            if cat not in cats:
                cats.append(cat)
        return LabeledDataset(objects=tuple(pairs), categories=tuple(cats))

    def __len__(self) -> int:
        return len(self.objects)


def load_manifest(path) -> LabeledDataset:
    """CSV manifest: file_path,category per line; relative paths resolve
    against the manifest's directory."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such manifest: {path}")
    base = path.parent
    pairs = []
    with open(path, "r") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.lower().replace(" ", "") == "file_path,category":
                continue  # optional header
            fields = line.split(",")
            if len(fields) != 2:
                raise ValueError(f"{path}:{line_no}: expected 'file_path,category'")
            rel, cat = fields[0].strip(), fields[1].strip()
            cloud_path = Path(rel)
            if not cloud_path.is_absolute():
                cloud_path = base / cloud_path
            pairs.append((load_cloud(cloud_path, label=cat), cat))
    if not pairs:
        raise ValueError(f"{path}: manifest lists no objects")
    return LabeledDataset.from_pairs(pairs)


def dataset_max_diameter(ds: LabeledDataset) -> float:
    return max(cloud.bbox_diagonal() for cloud, _ in ds.objects)


def object_4features(
    cloud: PointCloud,
    mode: str,
    cfg: SDConfig,
    ranges: Dict[str, Tuple[float, float]],
    octree_cfg: OctreeConfig = OctreeConfig(),
    level: int = 3,
) -> Dict[str, SDFeature]:
    """All four histograms for one object, over the supplied fixed ranges."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if len(cloud) < 4:
        raise ValueError(f"need at least 4 points for all features, got {len(cloud)}")
    out = {}
    root = build_octree(cloud, octree_cfg) if mode == "hsd" else None
    for kind in KINDS:
        lo, hi = ranges[kind]
        kind_cfg = cfg.fixed(lo, hi)
        if mode == "exact":
            out[kind] = exact_sd(cloud, kind, kind_cfg)
        else:
            out[kind] = hsd(root, kind, level, kind_cfg)
    return out


def pairwise_distance(
    a: Dict[str, SDFeature],
    b: Dict[str, SDFeature],
    strategy: str = "average",
    use_l1: bool = False,
) -> float:
    """Aggregate of the four per-histogram distances (EMD by default)."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    metric = histogram_l1 if use_l1 else emd_1d
    dists = [metric(a[kind].histogram, b[kind].histogram) for kind in KINDS]
    if strategy == "average":
        return float(np.mean(dists))
    if strategy == "smallest":
        return float(np.min(dists))
    return float(np.max(dists))


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    strategy: str
    mode: str
    row_categories: Tuple[str, ...]
    row_objects: Tuple[int, ...]  # original dataset indices, category-blocked


def dataset_features(
    ds: LabeledDataset,
    mode: str,
    cfg: SDConfig,
    octree_cfg: OctreeConfig = OctreeConfig(),
    level: int = 3,
    threads: int = 1,
) -> List[Dict[str, SDFeature]]:
    """Per-object features in dataset order; ranges fixed from the dataset
    maximum diameter. Every object uses the same sampling seed, so duplicate
    objects always map to identical features."""
    ranges = sd_ranges(dataset_max_diameter(ds))

    def one(i_cloud):
        _, cloud = i_cloud
        return object_4features(cloud, mode, cfg, ranges, octree_cfg, level)

    items = list(enumerate(c for c, _ in ds.objects))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, items))
    return [one(it) for it in items]


def block_order(ds: LabeledDataset) -> List[int]:
    """Objects grouped by category (in category-list order), input order
    within a category; matches the block-structured matrix presentation."""
    order = []
    for cat in ds.categories:
        order.extend(i for i, (_, c) in enumerate(ds.objects) if c == cat)
    return order


def distance_matrix(
    ds: LabeledDataset,
    strategy: str = "average",
    mode: str = "exact",
    cfg: SDConfig = SDConfig(),
    octree_cfg: OctreeConfig = OctreeConfig(),
    level: int = 3,
    features: Optional[List[Dict[str, SDFeature]]] = None,
    use_l1: bool = False,
) -> DistanceMatrix:
    if len(ds) < 2:
        raise ValueError(f"need at least 2 objects, got {len(ds)}")
    feats = (
        dataset_features(ds, mode, cfg, octree_cfg, level) if features is None else features
    )
    order = block_order(ds)
    n = len(order)
    values = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            d = pairwise_distance(feats[order[a]], feats[order[b]], strategy, use_l1)
            values[a, b] = values[b, a] = d
    return DistanceMatrix(
        values=values,
        strategy=strategy,
        mode=mode,
        row_categories=tuple(ds.objects[i][1] for i in order),
        row_objects=tuple(order),
    )


@dataclass(frozen=True)
class CategoryStats:
    category: str
    within_mean: Optional[float]
    within_var: Optional[float]
    across_mean: Optional[float]
    across_var: Optional[float]

    @property
    def ratio(self) -> Optional[float]:
        if self.within_mean is None or self.across_mean is None or self.across_mean <= 0:
            return None
        return self.within_mean / self.across_mean


@dataclass(frozen=True)
class GroupStats:
    per_category: Tuple[CategoryStats, ...]

    def by_name(self, category: str) -> CategoryStats:
        for stats in self.per_category:
            if stats.category == category:
                return stats
        raise KeyError(category)


def group_stats(m: DistanceMatrix, ds: LabeledDataset) -> GroupStats:
    """Population mean/variance of within- and across-category entries.

    Within uses unordered same-category pairs; across pairs the category's
    objects with every object outside it. Singleton categories have no
    within pairs and single-category datasets no across pairs; those stats
    stay undefined rather than reading as zero.
    """
    if len(m.row_categories) != len(ds):
        raise ValueError("matrix does not match dataset size")
    cats = np.array(m.row_categories)
    out = []
    for cat in ds.categories:
        inside = np.nonzero(cats == cat)[0]
        outside = np.nonzero(cats != cat)[0]
        within_vals = [
            m.values[i, j] for ai, i in enumerate(inside) for j in inside[ai + 1 :]
        ]
        across_vals = [m.values[i, j] for i in inside for j in outside]
        within_mean = float(np.mean(within_vals)) if within_vals else None
        within_var = float(np.var(within_vals)) if within_vals else None
        across_mean = float(np.mean(across_vals)) if across_vals else None
        across_var = float(np.var(across_vals)) if across_vals else None
        out.append(
            CategoryStats(
                category=cat,
                within_mean=within_mean,
                within_var=within_var,
                across_mean=across_mean,
                across_var=across_var,
            )
        )
    return GroupStats(per_category=tuple(out))


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def _fmt(v: Optional[float]) -> str:
    return UNDEFINED if v is None else f"{v:.9g}"


def write_matrix_csv(m: DistanceMatrix, path) -> None:
    with open(path, "w") as fh:
        n = m.values.shape[0]
        header = ",".join(
            f"{m.row_categories[j]}:{m.row_objects[j]}" for j in range(n)
        )
        fh.write("object," + header + "\n")
        for i in range(n):
            row = ",".join(f"{v:.9g}" for v in m.values[i])
            fh.write(f"{m.row_categories[i]}:{m.row_objects[i]},{row}\n")


def write_stats_csv(stats_rows: Sequence[Tuple[GroupStats, str, str]], path) -> None:
    """Rows of (stats, strategy, mode) flattened to one CSV line per category."""
    with open(path, "w") as fh:
        fh.write(
            "category,within_mean,within_var,across_mean,across_var,ratio,strategy,mode\n"
        )
        for stats, strategy, mode in stats_rows:
            for cs in stats.per_category:
                fh.write(
                    f"{cs.category},{_fmt(cs.within_mean)},{_fmt(cs.within_var)},"
                    f"{_fmt(cs.across_mean)},{_fmt(cs.across_var)},{_fmt(cs.ratio)},"
                    f"{strategy},{mode}\n"
                )


def write_matrix_pgm(m: DistanceMatrix, path) -> None:
    """Linear gray heatmap, smallest distance white, largest black."""
    vals = m.values
    span = float(vals.max() - vals.min())
    if span <= 0:
        gray = np.full(vals.shape, 255, dtype=np.int64)
    else:
        gray = np.rint(255 * (1.0 - (vals - vals.min()) / span)).astype(np.int64)
    n = vals.shape[0]
    with open(path, "w") as fh:
        fh.write(f"P2\n{n} {n}\n255\n")
        for row in gray:
            fh.write(" ".join(str(v) for v in row) + "\n")
