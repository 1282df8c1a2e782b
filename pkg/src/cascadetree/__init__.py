"""Edge-factored log-linear spanning-tree models of information cascades."""

from .decode import best_tree
from .evaluate import (
    LinkSet,
    MetricsReport,
    RankedEdgeList,
    eval_cascade_level,
    eval_network,
    naive_baseline,
    network_from_marginals,
    round_robin_folds,
)
from .features import (
    FeatureAlphabet,
    FeatureConfig,
    FeatureSet,
    build_alphabet,
    extract_edge_features,
    jaccard_distance,
    normalize_text,
)
from .matrix_tree import (
    EdgeMarginals,
    EdgeScores,
    NoValidTree,
    brute_force_log_partition,
    build_scores,
    edge_marginals,
    log_partition,
    log_partition_gradient,
)
from .model import (
    Arborescence,
    Cascade,
    ConstraintSet,
    FullConstraints,
    GoldLinks,
    Node,
    TimeConstraints,
    TreeConstraints,
    earliest_node,
    merge_cascades,
    merge_with_gold,
    validate_arborescence,
)
from .train import (
    Mode,
    Model,
    TrainConfig,
    TrainReport,
    compile_dataset,
    contrastive_log_likelihood,
    fit,
    supervised_log_likelihood,
    total_objective_and_gradient,
)

__version__ = "0.1.0"
