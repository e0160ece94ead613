import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rayserde.errors import BoundsError, ConfigError, FormatError
from rayserde.voxels import (
    PointCloud,
    SparseVoxelSet,
    VoxelGridSpec,
    read_points_bin,
    read_points_csv,
    voxel_center_world,
    voxelize,
    write_points_bin,
    write_points_csv,
)


def unit_spec(dims=(10, 10, 10)):
    return VoxelGridSpec(voxel_size=(1.0, 1.0, 1.0), dims=dims, origin=(0.0, 0.0, 0.0))


class TestPointCloud:
    def test_rejects_nan(self):
        with pytest.raises(ConfigError):
            PointCloud(points=np.array([[np.nan, 0, 0, 0.5]]))

    def test_rejects_inf(self):
        with pytest.raises(ConfigError):
            PointCloud(points=np.array([[0, np.inf, 0, 0.5]]))

    def test_rejects_intensity_outside_unit_interval(self):
        with pytest.raises(ConfigError):
            PointCloud(points=np.array([[0, 0, 0, 1.5]]))
        with pytest.raises(ConfigError):
            PointCloud(points=np.array([[0, 0, 0, -0.1]]))

    def test_empty_cloud_ok(self):
        assert len(PointCloud(points=np.empty((0, 4)))) == 0

    def test_points_are_read_only(self):
        cloud = PointCloud(points=np.zeros((2, 4)))
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 1.0


class TestGridSpec:
    def test_rejects_nonpositive_size(self):
        with pytest.raises(ConfigError):
            VoxelGridSpec(voxel_size=(0.0, 1, 1), dims=(2, 2, 2))

    def test_rejects_zero_dims(self):
        with pytest.raises(ConfigError):
            VoxelGridSpec(voxel_size=(1, 1, 1), dims=(0, 2, 2))

    def test_default_center_is_grid_midpoint(self):
        spec = unit_spec((4, 9, 17))
        assert spec.center == (8.0, 4.0)

    def test_center_must_lie_inside(self):
        with pytest.raises(ConfigError):
            VoxelGridSpec(voxel_size=(1, 1, 1), dims=(2, 4, 4), center=(4.0, 1.0))


class TestVoxelize:
    def test_single_point_at_origin_corner(self):
        cloud = PointCloud(points=np.array([[0.0, 0.0, 0.0, 1.0]]))
        voxels, dropped = voxelize(cloud, unit_spec())
        assert dropped == 0
        assert voxels.coords.tolist() == [[0, 0, 0]]
        assert voxels.point_counts.tolist() == [1]

    def test_mean_of_two_points_in_one_cell(self):
        cloud = PointCloud(
            points=np.array([[0.25, 0.5, 0.5, 0.2], [0.75, 0.5, 0.5, 0.4]])
        )
        voxels, _ = voxelize(cloud, unit_spec(), reduce="mean")
        assert len(voxels) == 1
        assert voxels.point_counts.tolist() == [2]
        np.testing.assert_allclose(voxels.features[0], [0.5, 0.5, 0.5, 0.3])

    def test_out_of_range_point_dropped(self):
        cloud = PointCloud(points=np.array([[-0.5, 0.0, 0.0, 1.0]]))
        voxels, dropped = voxelize(cloud, unit_spec())
        assert dropped == 1
        assert len(voxels) == 0

    def test_max_reduce(self):
        cloud = PointCloud(
            points=np.array([[0.25, 0.5, 0.5, 0.2], [0.75, 0.25, 0.5, 0.4]])
        )
        voxels, _ = voxelize(cloud, unit_spec(), reduce="max")
        np.testing.assert_allclose(voxels.features[0], [0.75, 0.5, 0.5, 0.4])

    def test_count_augmented_mean_appends_count(self):
        cloud = PointCloud(
            points=np.array([[0.25, 0.5, 0.5, 0.2], [0.75, 0.5, 0.5, 0.4]])
        )
        voxels, _ = voxelize(cloud, unit_spec(), reduce="count-augmented-mean")
        assert voxels.n_channels == 5
        assert voxels.features[0, 4] == 2.0

    def test_unknown_reduce_rejected(self):
        cloud = PointCloud(points=np.zeros((1, 4)))
        with pytest.raises(ConfigError):
            voxelize(cloud, unit_spec(), reduce="sum")

    def test_point_count_sum_equals_in_range_points(self):
        rng = np.random.default_rng(7)
        pts = np.concatenate(
            [rng.uniform(-2, 12, (500, 3)), rng.uniform(0, 1, (500, 1))], axis=1
        )
        cloud = PointCloud(points=pts)
        voxels, dropped = voxelize(cloud, unit_spec())
        assert int(voxels.point_counts.sum()) + dropped == 500

    def test_voxelizing_voxel_centers_is_idempotent(self):
        spec = VoxelGridSpec(
            voxel_size=(0.8, 0.4, 0.4), dims=(6, 32, 32), origin=(-6.4, -6.4, -2.0)
        )
        rng = np.random.default_rng(3)
        lin = rng.choice(spec.n_cells, 300, replace=False)
        Z, Y, X = spec.dims
        coords = np.stack([lin // (Y * X), (lin // X) % Y, lin % X], axis=1)
        centers = voxel_center_world(coords, spec)
        cloud = PointCloud(
            points=np.concatenate([centers, np.full((300, 1), 0.5)], axis=1)
        )
        voxels, dropped = voxelize(cloud, spec)
        assert dropped == 0
        assert sorted(map(tuple, voxels.coords.tolist())) == sorted(
            map(tuple, coords.tolist())
        )

    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        pts = np.concatenate(
            [rng.uniform(0, 10, (200, 3)), rng.uniform(0, 1, (200, 1))], axis=1
        )
        perm = rng.permutation(200)
        a, _ = voxelize(PointCloud(points=pts), unit_spec())
        b, _ = voxelize(PointCloud(points=pts[perm]), unit_spec())
        assert np.array_equal(a.coords, b.coords)
        np.testing.assert_allclose(a.features, b.features, atol=1e-6)


class TestVoxelCenterWorld:
    def test_half_cell_offset(self):
        spec = unit_spec()
        np.testing.assert_allclose(voxel_center_world((0, 0, 0), spec), [0.5, 0.5, 0.5])

    def test_arithmetic(self):
        spec = VoxelGridSpec(voxel_size=(2, 2, 2), dims=(4, 4, 4), origin=(0, 0, 0))
        np.testing.assert_allclose(voxel_center_world((1, 2, 3), spec), [7.0, 5.0, 3.0])

    def test_out_of_range_coord(self):
        spec = unit_spec((2, 2, 2))
        with pytest.raises(BoundsError):
            voxel_center_world((2, 2, 2), spec)


class TestSparseVoxelSet:
    def test_duplicate_coords_rejected(self, small_spec):
        with pytest.raises(ConfigError):
            SparseVoxelSet(
                coords=np.array([[0, 0, 0], [0, 0, 0]]),
                features=np.zeros((2, 4)),
                point_counts=np.ones(2, np.int64),
                spec=small_spec,
            )

    def test_out_of_range_coords_rejected(self, small_spec):
        with pytest.raises(BoundsError):
            SparseVoxelSet(
                coords=np.array([[0, 0, 99]]),
                features=np.zeros((1, 4)),
                point_counts=np.ones(1, np.int64),
                spec=small_spec,
            )

    def test_length_mismatch_rejected(self, small_spec):
        with pytest.raises(ConfigError):
            SparseVoxelSet(
                coords=np.array([[0, 0, 0]]),
                features=np.zeros((2, 4)),
                point_counts=np.ones(1, np.int64),
                spec=small_spec,
            )


class TestCloudFiles:
    def test_csv_round_trip(self, tmp_path):
        cloud = PointCloud(
            points=np.array([[1.5, -2.25, 0.5, 0.75], [0.0, 0.0, 0.0, 0.0]]),
            scene_id="x",
        )
        path = tmp_path / "cloud.csv"
        write_points_csv(cloud, path)
        back = read_points_csv(path)
        np.testing.assert_allclose(back.points, cloud.points)

    def test_csv_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c,d\n1,2,3,0.5\n")
        with pytest.raises(FormatError):
            read_points_csv(path)

    def test_bin_round_trip(self, tmp_path):
        pts = np.array([[1.5, -2.25, 0.5, 0.75]], dtype=np.float32)
        cloud = PointCloud(points=pts.astype(np.float64))
        path = tmp_path / "cloud.bin"
        write_points_bin(cloud, path)
        back = read_points_bin(path)
        np.testing.assert_allclose(back.points, cloud.points)

    def test_bin_truncated(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 15)
        with pytest.raises(FormatError):
            read_points_bin(path)
