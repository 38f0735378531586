"""Compositional feature aggregation for few-shot recognition.

Feature maps are decomposed into semantic channel subspaces; each subspace
softly assigns its local features to learnable prototypes and aggregates
the residuals into an orderless descriptor. Episodic training with a
cosine nearest-neighbor classifier and an orthogonality penalty tunes the
prototypes, and a synthetic compositional benchmark plus a mean-pooling
baseline make the aggregation's advantage measurable without any backbone.
"""

from .aggregation import (
    CfaParams,
    aggregate_subspace,
    cfa_backward,
    cfa_forward,
    init_prototypes,
    kmeans,
    mean_pool,
    soft_assign,
)
from .classifier import (
    ClassBank,
    LossBreakdown,
    classification_grads,
    classify,
    cross_entropy,
    episode_loss,
    ortho_penalty,
    ortho_penalty_grad,
)
from .decomposition import split_channels
from .errors import (
    CfaError,
    ConfigError,
    DataError,
    ManifestError,
    NumericError,
    TensorFormatError,
)
from .gradcheck import central_difference, run_suite, worst_relative_error
from .harness import (
    AdamState,
    EvalReport,
    Episode,
    TrainConfig,
    TrainResult,
    adam_step,
    baseline_eval,
    episode_grads,
    evaluate,
    load_params,
    report_from_accuracies,
    sample_episode,
    save_params,
    train,
)
from .synthetic import SyntheticSpec, generate
from .tensor_io import (
    DatasetManifest,
    ManifestRecord,
    load_manifest,
    read_header,
    read_tensor,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CfaError",
    "CfaParams",
    "ClassBank",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "EvalReport",
    "Episode",
    "LossBreakdown",
    "ManifestError",
    "ManifestRecord",
    "NumericError",
    "SyntheticSpec",
    "TensorFormatError",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "aggregate_subspace",
    "baseline_eval",
    "central_difference",
    "cfa_backward",
    "cfa_forward",
    "classification_grads",
    "classify",
    "cross_entropy",
    "episode_grads",
    "episode_loss",
    "evaluate",
    "generate",
    "init_prototypes",
    "kmeans",
    "load_manifest",
    "load_params",
    "mean_pool",
    "ortho_penalty",
    "ortho_penalty_grad",
    "read_header",
    "read_tensor",
    "report_from_accuracies",
    "run_suite",
    "sample_episode",
    "save_params",
    "soft_assign",
    "split_channels",
    "train",
    "worst_relative_error",
    "write_tensor",
]
