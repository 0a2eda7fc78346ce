"""Sphere lattice generation and CSV ingestion with filtering."""

import numpy as np
import pytest

from jntk import ConfigError, covering_radius, fibonacci_sphere, load_csv
from jntk.datasets import load_cached, save_dataset


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")


class TestFibonacciSphere:
    def test_two_points_unit_norm(self):
        ds = fibonacci_sphere(2, 2)
        np.testing.assert_allclose(np.linalg.norm(ds.inputs, axis=1), 1.0, atol=1e-15)
        # spread apart, not coincident
        assert ds.inputs[0] @ ds.inputs[1] < 0.5

    def test_deterministic(self):
        a = fibonacci_sphere(64, 4)
        b = fibonacci_sphere(64, 4)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.targets, b.targets)

    @pytest.mark.parametrize("n,dim", [(16, 2), (32, 3), (64, 4), (20, 5)])
    def test_unit_norms_and_labels(self, n, dim):
        ds = fibonacci_sphere(n, dim)
        ds.validate()
        assert set(np.unique(ds.targets)) <= {-1.0, 1.0}
        np.testing.assert_array_equal(ds.targets, np.where(ds.inputs[:, 0] >= 0, 1.0, -1.0))

    def test_covering_radius_of_protocol_lattice(self):
        # 256 points on the 3-sphere: a 10^5-probe estimate stays within the
        # half-radian target of a good epsilon-net
        ds = fibonacci_sphere(256, 4)
        assert covering_radius(ds.inputs, probes=100_000, seed=0) <= 0.5

    def test_rejects_degenerate_sizes(self):
        with pytest.raises(Exception):
            fibonacci_sphere(1, 3)
        with pytest.raises(Exception):
            fibonacci_sphere(8, 1)


class TestLoadCsv:
    def test_identical_rows_collapse(self, tmp_path):
        path = str(tmp_path / "dup.csv")
        # every column already spans [-1, 1], so scaling keeps rows as-is
        a = [-1.0, 0.0, 0.5]
        rows = [a + [1], a + [1], a + [1], [1.0, -1.0, 0.0, 0], [0.0, 1.0, -1.0, 1], [0.2, 0.3, 1.0, 0]]
        write_csv(path, ["a", "b", "c", "label"], rows)
        ds, removed = load_csv(path, "label")
        assert removed == [1, 2]
        assert ds.n == 4

    def test_nothing_filtered_below_threshold(self, tmp_path):
        # non-antipodal sentinel rows pin every column's extremes so the
        # affine scaling keeps all rows in place
        pins = np.array([[-1.0, 0.0, 1.0], [1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])
        rng = np.random.default_rng(0)
        extra = 0.6 * rng.standard_normal((6, 3))
        extra /= np.maximum(np.abs(extra).max(), 1.0)
        pts = np.vstack([pins, extra])
        scaled = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        assert np.abs(scaled @ scaled.T - np.eye(pts.shape[0])).max() <= 0.99
        labels = np.arange(pts.shape[0]) % 2
        path = str(tmp_path / "plain.csv")
        write_csv(path, ["f0", "f1", "f2", "y"], np.column_stack([pts, labels]).tolist())
        ds, removed = load_csv(path, "y")
        assert removed == []
        assert ds.n == pts.shape[0]

    def test_engineered_near_duplicate_removed(self, tmp_path):
        # construct a pair with cosine 0.995 after scaling + normalisation by
        # pinning per-column min/max with sentinel rows
        rng = np.random.default_rng(1)
        u = rng.standard_normal(4)
        u /= np.linalg.norm(u)
        w = rng.standard_normal(4)
        w -= (w @ u) * u
        w /= np.linalg.norm(w)
        delta = np.arccos(0.995)
        v = np.cos(delta) * u + np.sin(delta) * w
        others = rng.standard_normal((6, 4))
        others /= np.linalg.norm(others, axis=1, keepdims=True)
        others *= 0.8
        # pin the per-column extremes with two orthogonal-ish sentinel rows
        pin_lo = np.array([-1.0, -1.0, 0.0, 0.0])
        pin_hi = np.array([0.0, 0.0, 1.0, 1.0])
        rows = np.vstack([pin_lo, pin_hi, 0.9 * u, others, 0.7 * v])
        lo, hi = rows.min(axis=0), rows.max(axis=0)
        rows = np.vstack([rows[:2], *[r for r in rows[2:]]])
        rows[0], rows[1] = lo, hi  # exact extremes so scaling is affine-identity-like
        labels = np.arange(rows.shape[0]) % 2
        path = str(tmp_path / "near.csv")
        write_csv(path, ["f0", "f1", "f2", "f3", "y"], np.column_stack([rows, labels]).tolist())
        ds, removed = load_csv(path, "y", parallel_threshold=0.99)
        kept_cos = np.abs(ds.inputs @ ds.inputs.T - np.eye(ds.n))
        assert ds.n == rows.shape[0] - len(removed)
        assert rows.shape[0] - 1 in removed  # the engineered near-duplicate of u
        assert kept_cos.max() <= 0.99 + 1e-12

    def test_post_filter_cosine_bound_order_independent(self, tmp_path):
        rng = np.random.default_rng(2)
        pts = rng.standard_normal((12, 3))
        pts = 0.9 * pts / np.abs(pts).max()
        pts = np.vstack([pts, np.full(3, -1.0), np.full(3, 1.0)])
        labels = rng.integers(0, 2, size=14)
        for order in (np.arange(14), np.arange(13, -1, -1)):
            path = str(tmp_path / f"perm{order[0]}.csv")
            write_csv(
                path, ["f0", "f1", "f2", "y"], np.column_stack([pts[order], labels[order]]).tolist()
            )
            ds, _ = load_csv(path, "y", parallel_threshold=0.95)
            cos = np.abs(ds.inputs @ ds.inputs.T - np.eye(ds.n)).max()
            assert cos <= 0.95 + 1e-12

    def test_non_numeric_cell_named(self, tmp_path):
        path = str(tmp_path / "bad.csv")
        write_csv(path, ["f0", "f1", "y"], [[0.1, 0.2, 1], [0.3, "oops", 0]])
        with pytest.raises(ConfigError, match="f1"):
            load_csv(path, "y")

    def test_constant_feature_named(self, tmp_path):
        path = str(tmp_path / "flat.csv")
        write_csv(path, ["f0", "f1", "y"], [[0.1, 7.0, 1], [0.3, 7.0, 0], [0.5, 7.0, 1]])
        with pytest.raises(ConfigError, match="f1"):
            load_csv(path, "y")

    def test_missing_target_column(self, tmp_path):
        path = str(tmp_path / "cols.csv")
        write_csv(path, ["f0", "f1", "y"], [[0.1, 0.2, 1]])
        with pytest.raises(ConfigError):
            load_csv(path, "label")

    def test_nonbinary_target_rejected(self, tmp_path):
        path = str(tmp_path / "multi.csv")
        write_csv(path, ["f0", "f1", "y"], [[0.1, 0.2, 1], [0.3, 0.1, 2], [0.5, 0.0, 3]])
        with pytest.raises(ConfigError):
            load_csv(path, "y")

    def test_scaling_to_unit_interval(self, tmp_path):
        path = str(tmp_path / "scale.csv")
        write_csv(path, ["f0", "f1", "y"], [[0.0, 10.0, 0], [4.0, 20.0, 1], [10.0, 30.0, 0]])
        ds, _ = load_csv(path, "y")
        np.testing.assert_allclose(ds.inputs[0], np.array([-1, -1]) / np.sqrt(2), atol=1e-12)
        np.testing.assert_allclose(ds.inputs[1], [-1, 0], atol=1e-12)  # (-0.2, 0) normalised


class TestCache:
    def test_round_trip(self, tmp_path):
        ds = fibonacci_sphere(10, 3)
        path = str(tmp_path / "cache.csv")
        save_dataset(ds, path)
        back = load_cached(path)
        np.testing.assert_array_equal(back.inputs, ds.inputs)
        np.testing.assert_array_equal(back.targets, ds.targets)
