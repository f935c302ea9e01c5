"""Deformation-corrected compressed sensing for dynamic MRI.

Recovers a dynamic image series from undersampled k-t measurements by
jointly estimating the images and an inter-frame deformation field,
enforcing a compactness prior (temporal Fourier sparsity, temporal total
variation, or low rank) on the deformation-corrected series.
"""

from .data_model import (
    DeformationField,
    DynamicDataset,
    KSpaceData,
    Roi,
    SamplingPattern,
    extract_roi,
    load_dataset,
    load_field,
    load_kspace,
    save_dataset,
    save_field,
    save_kspace,
)
from .encoding import (
    GOLDEN_ANGLE_DEG,
    add_noise,
    adjoint,
    forward,
    golden_angle_mask,
    load_pattern,
    save_pattern,
)
from .metrics import hfser_roi, registration_error, ser_roi
from .phantom import Motion, PhantomConfig, PhantomResult, generate
from .priors import (
    PriorKind,
    PriorTag,
    nuclear_norm,
    phi_value,
    prox,
    prox_nuclear,
    prox_temporal_fourier,
    prox_temporal_tv,
    soft_threshold,
    temporal_fourier_l1,
    temporal_tv,
)
from .registration import (
    DemonsConfig,
    demons_force,
    demons_register,
    register_sequence,
    warp,
    warp_transpose,
)
from .solver import (
    Provided,
    ReconConfig,
    ReconLog,
    ReconResult,
    SpatialTV,
    ZeroFilled,
    cost,
    dccs_reconstruct,
    solve_f,
    spatial_tv_init,
)

__version__ = "0.1.0"
