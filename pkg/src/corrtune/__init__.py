"""corrtune: rank-correlation ceiling analysis for binary similarity
predictors and a two-stage correlation-loss fine-tuning pipeline."""

from .errors import (
    CheckpointError,
    CorrtuneError,
    DegenerateInput,
    GenerationError,
    InvalidInput,
    ParseError,
    TrainingDiverged,
)
from .correlation import RankedVector, compute_ranks, pearson, spearman
from .bound import (
    BoundAnalysis,
    BoundRow,
    analyze_split,
    binary_predictor_spearman,
    bound_sweep,
    max_spearman,
    optimal_k,
    sum_d_sq_bruteforce,
    sum_d_sq_closed,
)
from .losses import (
    ContrastiveBatch,
    EmbeddingGrads,
    SimilarityBatch,
    contrastive_grad,
    info_nce,
    info_nce_extended,
    pearson_loss,
    pearson_loss_grad,
)
from .encoder import (
    EncoderParams,
    apply_gradients,
    cosine,
    encode,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .data import (
    ItemFeatures,
    ScoredPair,
    SynthConfig,
    SynthDataset,
    Triplet,
    filter_overlap,
    load_pairs,
    make_batches,
    rescale_sick,
    synth_generate,
    to_contrastive,
)
from .pipeline import (
    EvalReport,
    ExperimentConfig,
    ExperimentResult,
    StageConfig,
    evaluate,
    run_ceiling_experiment,
    run_ceiling_experiments,
    train_stage1,
    train_stage2,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "CorrtuneError",
    "DegenerateInput",
    "GenerationError",
    "InvalidInput",
    "ParseError",
    "TrainingDiverged",
    "RankedVector",
    "compute_ranks",
    "pearson",
    "spearman",
    "BoundAnalysis",
    "BoundRow",
    "analyze_split",
    "binary_predictor_spearman",
    "bound_sweep",
    "max_spearman",
    "optimal_k",
    "sum_d_sq_bruteforce",
    "sum_d_sq_closed",
    "ContrastiveBatch",
    "EmbeddingGrads",
    "SimilarityBatch",
    "contrastive_grad",
    "info_nce",
    "info_nce_extended",
    "pearson_loss",
    "pearson_loss_grad",
    "EncoderParams",
    "apply_gradients",
    "cosine",
    "encode",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "ItemFeatures",
    "ScoredPair",
    "SynthConfig",
    "SynthDataset",
    "Triplet",
    "filter_overlap",
    "load_pairs",
    "make_batches",
    "rescale_sick",
    "synth_generate",
    "to_contrastive",
    "EvalReport",
    "ExperimentConfig",
    "ExperimentResult",
    "StageConfig",
    "evaluate",
    "run_ceiling_experiment",
    "run_ceiling_experiments",
    "train_stage1",
    "train_stage2",
    "__version__",
]
