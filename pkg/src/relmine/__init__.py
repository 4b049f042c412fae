"""relmine: relevance-aware online mining for cross-modal retrieval.

A desk-scale toolkit around one idea: when mining hard negatives (and
positives) inside a training batch, use the semantic relevance of the
candidates, not just their embedding similarity. Ships the relevance
function over verb/noun class profiles, the mining strategies, the
triplet losses, a small trainable two-tower model with exact gradients,
nDCG/mAP evaluation, a synthetic data generator, and a CLI.
"""

from .semantics import (
    ClassId,
    SemanticProfile,
    CaptionAnnotation,
    class_jaccard,
    relevance,
    aggregate_video_profile,
    relevance_matrix,
    tag_profile,
)
from .mining import (
    Strategy,
    MinedTriplets,
    hardest_negative_standard,
    hardest_negative_ran,
    hardest_positive_naive,
    hardest_positive_ranp,
    mine_batch,
)
from .loss import (
    Margins,
    LossBreakdown,
    triplet_term_negative,
    triplet_term_positive,
    batch_loss,
    bidirectional_loss,
)
from .model import (
    ModelParams,
    GradientSet,
    TrainConfig,
    TrainResult,
    embed,
    cosine_similarity,
    forward_batch,
    loss_gradients,
    sgd_step,
    train,
    init_params,
    save_checkpoint,
    load_checkpoint,
)
from .metrics import (
    RankedList,
    MetricsReport,
    rank_candidates,
    dcg,
    ndcg,
    average_precision,
    evaluate,
)
from .data import (
    Dataset,
    SyntheticConfig,
    Batch,
    load_dataset,
    save_dataset,
    generate_synthetic,
    synthetic_preset,
    sample_batches,
)

__version__ = "0.1.0"
