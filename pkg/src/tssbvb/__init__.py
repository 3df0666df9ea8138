"""Tree-structured stick-breaking mixture of Gaussians, fit by
coordinate-ascent variational inference with exact subtree sums."""

from .dataio import (
    Dataset,
    RunConfig,
    build_hyperparams,
    canon_dumps,
    config_from_mapping,
    export_dot,
    format_float,
    generate_dataset,
    parse_config,
    read_csv_dataset,
    read_model,
    write_assignments,
    write_dataset,
    write_model,
)
from .engine import (
    elbo,
    map_nodes,
    node_posterior,
    refresh_all,
    sweep,
)
from .errors import (
    CapacityError,
    ConfigError,
    DataParseError,
    ModelFormatError,
    NumericStateError,
    ParameterDomainError,
)
from .fit import FitResult, fit
from .generative import (
    Hyperparams,
    ModelParams,
    node_marginal,
    node_marginal_bruteforce,
    resolve_node,
    sample_datapoint,
    sample_parameters,
    sample_path,
    sample_subtree,
    subtree_prior_prob,
)
from .oracles import (
    bruteforce_path_posterior,
    bruteforce_tree_posterior,
    tree_factor_prob,
)
from .state import SweepCache, VariationalState, init_cache, init_state
from .tree import (
    FullSubtree,
    TreeShape,
    build_tree,
    enumerate_subtrees,
    is_ancestor_or_self,
    leaf_for_path,
    path_nodes,
    subtree_count,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigError",
    "DataParseError",
    "Dataset",
    "FitResult",
    "FullSubtree",
    "Hyperparams",
    "ModelFormatError",
    "ModelParams",
    "NumericStateError",
    "ParameterDomainError",
    "RunConfig",
    "SweepCache",
    "TreeShape",
    "VariationalState",
    "bruteforce_path_posterior",
    "bruteforce_tree_posterior",
    "build_hyperparams",
    "build_tree",
    "canon_dumps",
    "config_from_mapping",
    "elbo",
    "enumerate_subtrees",
    "export_dot",
    "fit",
    "format_float",
    "generate_dataset",
    "init_cache",
    "init_state",
    "is_ancestor_or_self",
    "leaf_for_path",
    "map_nodes",
    "node_marginal",
    "node_marginal_bruteforce",
    "node_posterior",
    "parse_config",
    "path_nodes",
    "read_csv_dataset",
    "read_model",
    "refresh_all",
    "resolve_node",
    "sample_datapoint",
    "sample_parameters",
    "sample_path",
    "sample_subtree",
    "subtree_count",
    "subtree_prior_prob",
    "sweep",
    "tree_factor_prob",
    "write_assignments",
    "write_dataset",
    "write_model",
]
