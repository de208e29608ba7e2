"""Context-sensitive image similarity: ranking models and ensembles."""

__version__ = "0.1.0"

from .csmodel import (
    CsModel,
    Prediction,
    TrainConfig,
    load_checkpoint,
    predict,
    predict_batch,
    save_checkpoint,
    train_cs_model,
)
from .dataio import (
    ContextCluster,
    DatasetBundle,
    EmbeddingTable,
    RawAnnotation,
    Triple,
    agreement_rate,
    clean_dataset,
    detect_preference_cycles,
    load_embedding_table,
    load_triples,
    resolve_labels,
    split_cluster,
    write_embedding_table,
    write_triples,
)
from .ensemble import (
    CredibilityMap,
    EnsembleModel,
    WeightRegressorSet,
    build_credibility_map,
    build_default_maps,
    evaluate_ensemble,
    filtered_vote,
    load_ensemble_manifest,
    majority_vote,
    predict_ensemble,
    save_ensemble_manifest,
    train_weight_regressors,
    weighted_vote,
)
from .errors import CosimError
from .evalkit import (
    CrossValMatrix,
    EvalReport,
    combination_sweep,
    cross_validation,
    evaluate_model,
    leave_one_out,
    symmetry_accuracy,
    symmetry_score,
)
from .numerics import PcaModel, cosine_distance, pca_fit, pca_transform
from .seeding import derive_seed
from .synthbench import GroundTruth, WorldConfig, generate_world

__all__ = [
    "__version__",
    "CosimError",
    "Triple",
    "RawAnnotation",
    "EmbeddingTable",
    "ContextCluster",
    "DatasetBundle",
    "agreement_rate",
    "resolve_labels",
    "detect_preference_cycles",
    "clean_dataset",
    "split_cluster",
    "load_triples",
    "write_triples",
    "load_embedding_table",
    "write_embedding_table",
    "cosine_distance",
    "PcaModel",
    "pca_fit",
    "pca_transform",
    "TrainConfig",
    "CsModel",
    "Prediction",
    "train_cs_model",
    "predict",
    "predict_batch",
    "save_checkpoint",
    "load_checkpoint",
    "EvalReport",
    "evaluate_model",
    "symmetry_score",
    "symmetry_accuracy",
    "CrossValMatrix",
    "cross_validation",
    "combination_sweep",
    "leave_one_out",
    "CredibilityMap",
    "build_credibility_map",
    "build_default_maps",
    "majority_vote",
    "weighted_vote",
    "filtered_vote",
    "WeightRegressorSet",
    "train_weight_regressors",
    "EnsembleModel",
    "predict_ensemble",
    "evaluate_ensemble",
    "save_ensemble_manifest",
    "load_ensemble_manifest",
    "WorldConfig",
    "GroundTruth",
    "generate_world",
    "derive_seed",
]
