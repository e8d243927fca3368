"""Unsupervised anomaly detection over Bitcoin-style transaction ledgers.

Builds the two dual graph views of a ledger (users as nodes, transactions
as nodes), extracts per-node features, and ranks nodes with a
multivariate-Gaussian / Mahalanobis detector and a one-class nu-SVM solved
by SMO, with a k-means baseline and cross-detector dual evaluation.
"""

from .evaluation import (
    DualEvalResult,
    GroundTruth,
    OwnershipIndex,
    build_ownership,
    centroid_distance_ratios,
    dual_evaluation,
    dual_metric,
    ground_truth_hits,
    load_ground_truth,
)
from .features import (
    FeatureMatrix,
    FeatureSchema,
    default_schema,
    extract_transaction_features,
    extract_user_features,
    normalize,
)
from .gaussian import (
    EpsilonThreshold,
    GaussianModel,
    QuantileThreshold,
    fit_gaussian,
    log_density,
    mahalanobis_distance,
)
from .graphs import TransactionGraph, UserGraph, build_transaction_graph, build_user_graph
from .kmeans import KMeansModel, cluster_entropy, fit_kmeans, select_k
from .ledger import (
    TransactionRecord,
    ValidationReport,
    load_user_map,
    parse_ledger,
    serialize_ledger,
    validate_ledger,
)
from .ocsvm import OcSvmModel, SmoConfig, fit_ocsvm, rbf_kernel, recover_rho, tune_nu
from .pipeline import PipelineConfig, run_pipeline
from .ranking import AnomalyRanking
from .synth import SynthConfig, generate

__all__ = [name for name in dir() if not name.startswith("_")]
