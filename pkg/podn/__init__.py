"""
Open-set recognition with prototypes, prototype radiuses and an expandable head.

The experiment runner lives in ``podn.harness`` and the command line in ``podn.cli``.
"""
from podn.detector import (
    DISTANCE,
    FEATURE,
    Decision,
    DetectionReport,
    Outcome,
    ThresholdSet,
    calibrate,
    collect_calibration_rows,
    decide,
    decide_rows,
    detection_metrics,
    evaluate_detection,
    load_thresholds,
    save_thresholds,
    score_rows,
)
from podn.errors import (
    CalibrationError,
    ConfigError,
    DatasetFormatError,
    ExpansionError,
    InfeasiblePackingError,
    LabelError,
    OracleMissError,
    PodnError,
    ShapeError,
    SplitError,
    TrainingDivergedError,
    UnbalancedError,
)
from podn.incremental import (
    IncrementalConfig,
    IncrementalResult,
    LabelOracle,
    MemoryBank,
    build_memory_bank,
    distance_weight_init,
    expand_category,
    finetune_balanced,
    mean_normalized_alpha,
    odn_weight_init,
    recalibrate,
    run_incremental_phase,
)
from podn.model import (
    ExpandableNet,
    ModelConfig,
    backward,
    expand_output_dim,
    forward,
    init_net,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from podn.numerics import (
    OptimizerState,
    cross_entropy_mean,
    finite_diff_grad,
    matmul,
    relative_error,
    sgd_momentum_step,
    softmax_rows,
)
from podn.prototypes import (
    LossBreakdown,
    LossWeights,
    PrototypeBank,
    TrainConfig,
    distance_classification_loss,
    distance_matrix,
    init_bank,
    load_bank,
    prototype_l2_loss,
    radius_loss,
    save_bank,
    total_loss,
    train_initial,
)

__all__ = [
    "DISTANCE", "FEATURE", "Decision", "DetectionReport", "Outcome", "ThresholdSet",
    "calibrate", "collect_calibration_rows", "decide", "decide_rows", "detection_metrics",
    "evaluate_detection", "load_thresholds", "save_thresholds", "score_rows",
    "CalibrationError", "ConfigError", "DatasetFormatError", "ExpansionError",
    "InfeasiblePackingError", "LabelError", "OracleMissError", "PodnError", "ShapeError",
    "SplitError", "TrainingDivergedError", "UnbalancedError",
    "IncrementalConfig", "IncrementalResult", "LabelOracle", "MemoryBank", "build_memory_bank",
    "distance_weight_init", "expand_category", "finetune_balanced", "mean_normalized_alpha",
    "odn_weight_init", "recalibrate", "run_incremental_phase",
    "ExpandableNet", "ModelConfig", "backward", "expand_output_dim", "forward", "init_net",
    "load_checkpoint", "predict", "save_checkpoint",
    "OptimizerState", "cross_entropy_mean", "finite_diff_grad", "matmul", "relative_error",
    "sgd_momentum_step", "softmax_rows",
    "LossBreakdown", "LossWeights", "PrototypeBank", "TrainConfig", "distance_classification_loss",
    "distance_matrix", "init_bank", "load_bank", "prototype_l2_loss", "radius_loss", "save_bank",
    "total_loss", "train_initial",
]
