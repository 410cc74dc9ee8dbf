import numpy as np
import pytest

from lidarshape.core import PointCloud, save_cloud
from lidarshape.evaluate import (
    KINDS,
    STRATEGIES,
    DistanceMatrix,
    LabeledDataset,
    dataset_features,
    distance_matrix,
    group_stats,
    load_manifest,
    object_4features,
    pairwise_distance,
    write_matrix_csv,
    write_matrix_pgm,
    write_stats_csv,
)
from lidarshape.octree import OctreeConfig
from lidarshape.shapedist import SDConfig, histogram_l1, sd_ranges
from lidarshape.synth import make_dataset, make_object

from _oracles import brute_force_histogram


def tiny_dataset(rng, per_class=3, n=120):
    objs = []
    for kind in ("sphere", "box"):
        for _ in range(per_class):
            objs.append((make_object(kind, n, rng), kind))
    return LabeledDataset.from_pairs(objs)


# ---------------------------------------------------------------------------
# object_4features
# ---------------------------------------------------------------------------


def test_identical_objects_identical_features():
    rng = np.random.default_rng(3)
    cloud = make_object("box", 100, rng)
    ranges = sd_ranges(cloud.bbox_diagonal())
    cfg = SDConfig(sample_budget=2_000, seed=4)
    a = object_4features(cloud, "exact", cfg, ranges)
    b = object_4features(PointCloud(cloud.points.copy()), "exact", cfg, ranges)
    for kind in KINDS:
        assert np.array_equal(a[kind].histogram.mass, b[kind].histogram.mass)


def test_exact_mode_matches_enumeration_under_budget():
    rng = np.random.default_rng(5)
    cloud = make_object("sphere", 16, rng)
    ranges = sd_ranges(cloud.bbox_diagonal())
    feats = object_4features(cloud, "exact", SDConfig(bins=16), ranges)
    for kind in KINDS:
        lo, hi = ranges[kind]
        oracle = brute_force_histogram(cloud.points, kind, lo, hi, 16)
        assert np.allclose(feats[kind].histogram.mass, oracle, atol=1e-12)


def test_hsd_mode_close_to_exact():
    rng = np.random.default_rng(7)
    cloud = make_object("cylinder", 300, rng)
    ranges = sd_ranges(cloud.bbox_diagonal())
    cfg = SDConfig(seed=2)
    ex = object_4features(cloud, "exact", cfg, ranges)
    hs = object_4features(cloud, "hsd", cfg, ranges, OctreeConfig(), level=3)
    for kind in KINDS:
        assert histogram_l1(ex[kind].histogram, hs[kind].histogram) <= 0.15


def test_too_few_points_rejected():
    cloud = PointCloud(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        object_4features(cloud, "exact", SDConfig(), sd_ranges(1.0))


# ---------------------------------------------------------------------------
# pairwise_distance
# ---------------------------------------------------------------------------


def test_identical_features_zero_under_all_strategies():
    rng = np.random.default_rng(9)
    cloud = make_object("box", 80, rng)
    ranges = sd_ranges(cloud.bbox_diagonal())
    f = object_4features(cloud, "exact", SDConfig(sample_budget=2_000), ranges)
    for strategy in STRATEGIES:
        assert pairwise_distance(f, f, strategy) == 0.0


def test_strategy_ordering():
    rng = np.random.default_rng(11)
    a_cloud = make_object("box", 80, rng)
    b_cloud = make_object("sphere", 80, rng)
    d = max(a_cloud.bbox_diagonal(), b_cloud.bbox_diagonal())
    ranges = sd_ranges(d)
    cfg = SDConfig(sample_budget=2_000)
    a = object_4features(a_cloud, "exact", cfg, ranges)
    b = object_4features(b_cloud, "exact", cfg, ranges)
    small = pairwise_distance(a, b, "smallest")
    avg = pairwise_distance(a, b, "average")
    big = pairwise_distance(a, b, "biggest")
    assert small <= avg <= big


def test_average_strategy_is_mean_of_four_emds():
    rng = np.random.default_rng(13)
    from lidarshape.core import emd_1d

    a_cloud = make_object("box", 60, rng)
    b_cloud = make_object("cylinder", 60, rng)
    ranges = sd_ranges(max(a_cloud.bbox_diagonal(), b_cloud.bbox_diagonal()))
    cfg = SDConfig(sample_budget=1_000)
    a = object_4features(a_cloud, "exact", cfg, ranges)
    b = object_4features(b_cloud, "exact", cfg, ranges)
    expected = sum(emd_1d(a[k].histogram, b[k].histogram) for k in KINDS) / 4
    assert pairwise_distance(a, b, "average") == pytest.approx(expected, abs=1e-12)


# ---------------------------------------------------------------------------
# distance_matrix / group_stats
# ---------------------------------------------------------------------------


def test_duplicated_object_gives_zero_matrix():
    rng = np.random.default_rng(17)
    cloud = make_object("box", 80, rng)
    ds = LabeledDataset.from_pairs([(cloud, "box"), (PointCloud(cloud.points.copy()), "box")])
    m = distance_matrix(ds, cfg=SDConfig(sample_budget=1_000))
    assert np.allclose(m.values, 0.0, atol=1e-12)


def test_matrix_symmetric_zero_diagonal_blocked():
    rng = np.random.default_rng(19)
    ds = tiny_dataset(rng)
    m = distance_matrix(ds, cfg=SDConfig(sample_budget=1_000, seed=3))
    assert np.abs(m.values - m.values.T).max() == 0.0
    assert np.all(np.diag(m.values) == 0)
    assert list(m.row_categories) == ["sphere"] * 3 + ["box"] * 3


def test_block_diagonal_dominance_three_classes():
    objs = make_dataset({"sphere": 4, "box": 4, "cylinder": 4}, n_points=150, seed=23)
    ds = LabeledDataset.from_pairs([(o, o.label) for o in objs])
    m = distance_matrix(ds, cfg=SDConfig(sample_budget=2_000, seed=1))
    stats = group_stats(m, ds)
    for cs in stats.per_category:
        assert cs.within_mean < cs.across_mean
        assert cs.ratio < 1


def test_group_stats_identical_within_classes():
    rng = np.random.default_rng(29)
    a = make_object("sphere", 80, rng)
    b = make_object("pole", 80, rng)
    ds = LabeledDataset.from_pairs(
        [
            (a, "sphere"),
            (PointCloud(a.points.copy()), "sphere"),
            (b, "pole"),
            (PointCloud(b.points.copy()), "pole"),
        ]
    )
    m = distance_matrix(ds, cfg=SDConfig(sample_budget=1_000))
    stats = group_stats(m, ds)
    for cs in stats.per_category:
        assert cs.within_mean == pytest.approx(0.0, abs=1e-12)
        assert cs.across_mean > 0
        assert cs.ratio == pytest.approx(0.0, abs=1e-9)


def test_single_category_across_undefined():
    rng = np.random.default_rng(31)
    ds = LabeledDataset.from_pairs([(make_object("box", 60, rng), "box") for _ in range(3)])
    m = distance_matrix(ds, cfg=SDConfig(sample_budget=500))
    stats = group_stats(m, ds)
    cs = stats.by_name("box")
    assert cs.across_mean is None
    assert cs.ratio is None
    assert cs.within_mean is not None


def test_singleton_category_within_undefined():
    rng = np.random.default_rng(37)
    ds = LabeledDataset.from_pairs(
        [
            (make_object("box", 60, rng), "box"),
            (make_object("sphere", 60, rng), "sphere"),
        ]
    )
    m = distance_matrix(ds, cfg=SDConfig(sample_budget=500))
    stats = group_stats(m, ds)
    assert stats.by_name("box").within_mean is None
    assert stats.by_name("box").across_mean is not None


def test_group_stats_match_brute_force_loops():
    rng = np.random.default_rng(41)
    ds = tiny_dataset(rng, per_class=4, n=80)
    m = distance_matrix(ds, cfg=SDConfig(sample_budget=1_000, seed=9))
    stats = group_stats(m, ds)

    cats = list(m.row_categories)
    for cat in ds.categories:
        within, across = [], []
        for i in range(len(cats)):
            for j in range(len(cats)):
                if i < j and cats[i] == cat and cats[j] == cat:
                    within.append(m.values[i, j])
                if cats[i] == cat and cats[j] != cat:
                    across.append(m.values[i, j])
        cs = stats.by_name(cat)
        assert cs.within_mean == pytest.approx(np.mean(within), abs=1e-12)
        assert cs.within_var == pytest.approx(np.var(within), abs=1e-12)
        assert cs.across_mean == pytest.approx(np.mean(across), abs=1e-12)
        assert cs.across_var == pytest.approx(np.var(across), abs=1e-12)


def test_group_stats_invariant_to_within_category_permutation():
    rng = np.random.default_rng(43)
    objs = [(make_object("box", 70, rng), "box") for _ in range(3)]
    objs += [(make_object("sphere", 70, rng), "sphere") for _ in range(3)]
    ds1 = LabeledDataset.from_pairs(objs)
    ds2 = LabeledDataset.from_pairs([objs[1], objs[0], objs[2]] + objs[3:])
    cfg = SDConfig(sample_budget=1_000, seed=2)
    s1 = group_stats(distance_matrix(ds1, cfg=cfg), ds1)
    s2 = group_stats(distance_matrix(ds2, cfg=cfg), ds2)
    for cat in ("box", "sphere"):
        assert s1.by_name(cat).within_mean == pytest.approx(
            s2.by_name(cat).within_mean, abs=1e-12
        )


# ---------------------------------------------------------------------------
# manifest + exports
# ---------------------------------------------------------------------------


def test_manifest_roundtrip(tmp_path):
    rng = np.random.default_rng(47)
    lines = []
    for i, kind in enumerate(("sphere", "box")):
        cloud = make_object(kind, 50, rng)
        save_cloud(cloud, tmp_path / f"obj{i}.xyz")
        lines.append(f"obj{i}.xyz,{kind}")
    (tmp_path / "manifest.csv").write_text("file_path,category\n" + "\n".join(lines) + "\n")
    ds = load_manifest(tmp_path / "manifest.csv")
    assert len(ds) == 2
    assert ds.categories == ("sphere", "box")
    assert len(ds.objects[0][0]) == 50


def test_manifest_missing_file(tmp_path):
    (tmp_path / "m.csv").write_text("ghost.xyz,thing\n")
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "m.csv")


def test_matrix_exports(tmp_path):
    rng = np.random.default_rng(53)
    ds = tiny_dataset(rng, per_class=2, n=60)
    m = distance_matrix(ds, cfg=SDConfig(sample_budget=500))
    write_matrix_csv(m, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines) == 1 + 4

    write_matrix_pgm(m, tmp_path / "m.pgm")
    body = (tmp_path / "m.pgm").read_text().splitlines()
    assert body[0] == "P2"
    assert body[1] == "4 4"
    pixels = [int(v) for v in " ".join(body[3:]).split()]
    assert len(pixels) == 16
    # diagonal is the minimum distance -> white
    assert pixels[0] == 255

    from lidarshape.evaluate import group_stats as gs

    write_stats_csv([(gs(m, ds), m.strategy, m.mode)], tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith("category,within_mean")
    assert len(lines) == 1 + len(ds.categories)
