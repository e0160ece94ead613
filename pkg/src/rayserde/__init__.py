"""rayserde: ray-aligned sector-wise serialization of sparse LiDAR voxels.

Spatial voxel features are grouped into azimuth sectors and ordered by
descending height layer then ascending azimuth, via a precomputed dense
sector template; the resulting per-sector sequences feed a selective
state-space block whose outputs scatter exactly back to their source voxels.
Baseline orderings (Hilbert, Morton, axis sort), a synthetic LiDAR simulator
and context-coherence metrics round out the toolkit.
"""

from .blocks import SectorMambaBlock, local_aggregate, make_block, positional_embed, sector_mamba_forward
from .curves import hilbert_cell, hilbert_key, morton_cell, morton_key
from .errors import (
    BoundsError,
    CapacityError,
    ConfigError,
    ContractError,
    FormatError,
    NumericError,
    RayserdeError,
    SequenceLookupError,
)
from .metrics import (
    CoherenceReport,
    angular_spread,
    compare_strategies,
    context_window,
    dispersion,
    far_field_rows,
    same_sector_fraction,
)
from .sectors import (
    SectorConfig,
    SectorTemplate,
    azimuth_deg,
    build_template,
    order_key,
    read_template,
    sector_of,
    write_template,
)
from .serialize import (
    AxisSort,
    Hilbert,
    InverseIndex,
    Morton,
    RayAligned,
    SectorSequence,
    SectorSequences,
    min_curve_order,
    sequence_to_spatial,
    spatial_to_sequence,
)
from .simulate import Box, HitRecord, Scene, SensorModel, returns_per_object, simulate_scan, standard_scene_suite
from .ssm import (
    ScanCache,
    SsmGrads,
    SsmParams,
    discretize,
    grad_check,
    init_ssm_params,
    selective_scan_bwd,
    selective_scan_fwd,
)
from .voxels import (
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

__version__ = "0.1.0"
