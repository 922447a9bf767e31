"""Gamma-based clustering of expression profiles via ordered latent means."""

__version__ = "0.1.0"

from .cluster import (
    ClusterAssignment,
    adjusted_rand_index,
    assign_bayes,
    assign_threshold,
    cluster_summary,
)
from .em import (
    EstimationConfig,
    MixtureFit,
    em_fit,
    estimate_shared_params,
    hessian_quadratic_form,
    log_marginal,
    refit_shared_params,
)
from .errors import ConfigError, GammaRankError, InputError, NumericalError
from .model import (
    SharedParams,
    block_stats,
    log_density_counts,
    log_density_gamma,
    log_density_gamma_unordered,
    log_density_matrix,
)
from .rankprob import (
    GammaRankProblem,
    gamma_rank_prob,
    gamma_rank_prob_mc,
    log_gamma_rank_prob,
    max_log_summand,
    poisson_embedding_check,
)
from .simulator import SimulationConfig, empirical_posterior_check, simulate
from .structures import (
    ExperimentLayout,
    OrderedStructure,
    Partition,
    enumerate_ordered_structures,
    enumerate_partitions,
    filter_catalog,
    parse_structure,
    structure_blocks,
)
