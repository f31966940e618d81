"""Token-level attention matching for skill extraction.

A sentence is matched against a skill by attending over its tokens: raw
dot products between token representations and the skill vector weight the
per-token cosine similarities. The package bundles the training objective
(symmetric in-batch-negative InfoNCE with gradient caching), inference with
threshold calibration and redundancy filtering, cluster-aware evaluation
metrics, and a skill-set-based job-title normalizer.
"""

__version__ = "0.1.0"

from .autograd import (
    DomainError,
    ParameterSet,
    Tensor,
    cosine,
    finite_difference_gradient,
    no_grad,
    softmax,
)
from .encoder import EncoderConfig, Model, TokenEmbeddings, embed_skill, encode, init_parameters
from .evaluation import (
    AnnotatedAd,
    AnnotatedSentence,
    annotator_agreement,
    attention_alignment,
    cluster_prf,
    corpus_cluster_prf,
    corpus_redundancy,
    mrr,
    prediction_redundancy,
    rp_at_k,
    spearman_rho,
)
from .extraction import (
    CalibrationResult,
    ExtractionConfig,
    RankedPrediction,
    Skill,
    Taxonomy,
    calibrate_threshold,
    explain,
    extract,
    rank_skills,
    redundancy_filter,
)
from .matching import MatchResult, context_match, mean_pool_match
from .objective import (
    TaskKind,
    TrainingPair,
    cached_gradient_step,
    description_task_scores,
    sample_task,
    symmetric_infonce,
)
from .titles import (
    TitleBenchmark,
    TitleModel,
    TitleSkillPair,
    TitleTrainingConfig,
    build_pair,
    normalize,
    title_eval,
    train_title_model,
)
from .tokenization import TokenSequence, Vocabulary, detokenize, tokenize
from .training import (
    AblationFlags,
    Checkpoint,
    EarlyStopState,
    TrainingConfig,
    augment,
    batch_size_sweep,
    learning_rate_at,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
