"""Cell-topology analysis toolkit: width/depth metrics, variant sampling,
desk-scale convergence experiments, landscape surfaces, and linear-cell
smoothness/variance checks."""

__version__ = "0.1.0"

from .genotype import (
    CellDag,
    CellGenotype,
    NodeSpec,
    OpSpec,
    all_input_cell,
    chain_cell,
    load_fixture,
    load_genotype,
    save_genotype,
    validate_genotype,
)
from .metrics import (
    WidthDepthReport,
    cell_depth,
    cell_width,
    extremal_width_depth,
    width_depth_report,
)
from .sampler import (
    SampleSpec,
    count_connection_variants,
    enumerate_connection_variants,
    rank_variants,
    sample_connection_variant,
    sample_operation_variant,
    sample_variants,
)
from .linear_theory import (
    LinearCellModel,
    TheoremReport,
    forward_narrowest,
    forward_widest,
    grad_narrowest,
    grad_widest,
    spectral_norm,
    verify_block_smoothness,
    verify_gradient_variance,
)
from .network import CellNetwork, NetworkConfig, build_network, parameter_count
from .data import Dataset, DatasetSpec, make_dataset
from .training import (
    ConvergenceReport,
    TrainConfig,
    TrainTrace,
    adapt_to_widest_shallowest,
    compare_convergence,
    train,
)
from .landscape import (
    DirectionPair,
    LandscapeGrid,
    export_grid,
    gradient_variance_surface,
    grid_coordinates,
    load_grid_csv,
    loss_surface,
    sample_directions,
)
