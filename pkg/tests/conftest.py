import numpy as np
import pytest

from rayserde.sectors import SectorConfig, build_template
from rayserde.voxels import SparseVoxelSet, VoxelGridSpec


@pytest.fixture(scope="session")
def small_spec():
    return VoxelGridSpec(voxel_size=(1.0, 1.0, 1.0), dims=(4, 16, 16), origin=(0.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def small_template(small_spec):
    return build_template(small_spec, SectorConfig.for_spec(60.0, small_spec))


@pytest.fixture(scope="session")
def paper_spec():
    # the default desk-scale grid: 0.4 m BEV cells over +-51.2 m, 11 layers
    return VoxelGridSpec(
        voxel_size=(0.8, 0.4, 0.4), dims=(11, 256, 256), origin=(-51.2, -51.2, -2.0)
    )


@pytest.fixture(scope="session")
def paper_template(paper_spec):
    return build_template(paper_spec, SectorConfig.for_spec(60.0, paper_spec))


def random_voxels(spec, n, seed=0, channels=4, scene_id="rand"):
    """Unique random active cells with random features."""
    rng = np.random.default_rng(seed)
    n = min(n, spec.n_cells)
    lin = rng.choice(spec.n_cells, size=n, replace=False)
    Z, Y, X = spec.dims
    coords = np.stack([lin // (Y * X), (lin // X) % Y, lin % X], axis=1)
    return SparseVoxelSet(
        coords=coords.astype(np.int64),
        features=rng.standard_normal((n, channels)),
        point_counts=rng.integers(1, 5, n),
        spec=spec,
        scene_id=scene_id,
    )
