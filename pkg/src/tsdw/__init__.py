"""Tri-stream dynamic-weight metric fusion for clothing-change re-identification.

The package trains and applies a three-way decision head that fuses
face, head-limb and global embedding distances with pair-dependent
weights, and evaluates retrieval quality (CMC, Rank-k, mAP) under
standard and clothing-change protocols.
"""

from .distance import DistanceMatrix, cosine_distance, stream_distance_matrix
from .errors import (
    ConfigError,
    DimensionError,
    EvalError,
    FormatError,
    NumericsError,
    SamplingError,
    TapeError,
)
from .estimator import TriStreamFusion
from .evaluator import EvalProtocol, EvalReport, ablation_sweep, evaluate
from .fusion import (
    BRANCH_LABELS,
    DwtParams,
    Thresholds,
    WeightVector,
    decide_hard,
    decide_soft,
    face_confidence,
    fuse_distance,
    fused_matrix,
    init_dwt_params,
    lg_confidence,
    load_dwt_checkpoint,
    save_dwt_checkpoint,
)
from .losses import CalConfig, TripletConfig, batch_hard_triplet, cal_loss, label_smoothed_ce
from .nn import LrSchedule, lr_at
from .store import (
    EmbeddingRecord,
    EmbeddingSet,
    l2_normalize_set,
    load_embeddings,
    make_set,
    save_embeddings,
)
from .synth import SynthConfig, generate, oracle_dwt, oracle_map
from .trainer import PkSamplerConfig, TrainConfig, TrainResult, sample_batch, train_fusion

__version__ = "0.1.0"

__all__ = [
    "BRANCH_LABELS",
    "CalConfig",
    "ConfigError",
    "DimensionError",
    "DistanceMatrix",
    "DwtParams",
    "EmbeddingRecord",
    "EmbeddingSet",
    "EvalError",
    "EvalProtocol",
    "EvalReport",
    "FormatError",
    "LrSchedule",
    "NumericsError",
    "PkSamplerConfig",
    "SamplingError",
    "SynthConfig",
    "TapeError",
    "Thresholds",
    "TrainConfig",
    "TrainResult",
    "TriStreamFusion",
    "TripletConfig",
    "WeightVector",
    "ablation_sweep",
    "batch_hard_triplet",
    "cal_loss",
    "cosine_distance",
    "decide_hard",
    "decide_soft",
    "evaluate",
    "face_confidence",
    "fuse_distance",
    "fused_matrix",
    "generate",
    "init_dwt_params",
    "l2_normalize_set",
    "label_smoothed_ce",
    "lg_confidence",
    "load_dwt_checkpoint",
    "load_embeddings",
    "lr_at",
    "make_set",
    "oracle_dwt",
    "oracle_map",
    "sample_batch",
    "save_dwt_checkpoint",
    "save_embeddings",
    "stream_distance_matrix",
    "train_fusion",
]
