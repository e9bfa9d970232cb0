"""Broadcast process on Galton-Watson trees, sparse SBM simulation,
Kesten-Stigum threshold formulas, and certified Gaussian-limit bounds."""

from .channel import (
    ModelParams,
    ParameterError,
    ab_from_dlambda,
    channel_matrix,
    compose_lambda,
    dlambda_from_ab,
    ks_lambda,
    transition_prob,
)
from .gwtree import (
    CustomPmf,
    OffspringDist,
    Poisson,
    Regular,
    RootedTree,
    SpinConfig,
    broadcast,
    canonical_code,
    sample_tree,
    tree_from_json,
    tree_to_json,
)
from .posterior import (
    EnumerationLimitError,
    MagnetizationStats,
    brute_force_posterior,
    estimate_magnetization,
    magnetization_trajectory,
    posterior_root,
    star_exact,
)
from .recursions import (
    FirstOrderStep,
    MomentTable,
    PoleError,
    ThresholdReport,
    d_star,
    d_star_bisect,
    f_q_step,
    first_order_step,
    g4_cubic_coeff,
    threshold_report,
    y_moment_table,
)
from .gauss import (
    GaussLimit,
    gauss_limit,
    gq_deficit_mc,
    gq_exp_series,
    gq_mc,
    h_check,
    h_poly,
    h_poly_exact,
    normal_approx_error,
    sample_limit_gaussian,
)
from .intervals import CertifiedValue
from .certify import (
    certified_g4_upper,
    kernel_envelope,
    QuadratureGrid,
    table_rows,
    verify_p_monotone,
)
from .sbm import (
    SbmGraph,
    NeighborhoodSample,
    PartitionClassTally,
    bin_poi_tv_bound,
    coupling_diagnostics,
    extract_neighborhood,
    overlap_statistic,
    partition_map_success,
    read_edge_list,
    sample_sbm,
    two_point_estimate,
    write_edge_list,
)
from .seeding import DEFAULT_SEED, derive_rng

__version__ = "0.1.0"
