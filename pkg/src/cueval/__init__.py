"""Unified evaluation and verifiable-reward engine for structured
video-anomaly-understanding outputs."""

__version__ = "0.1.0"

from .answers import (
    TASK_ORDER,
    TASKS,
    AnswerList,
    TaskSpec,
    extract_answer,
    format_reward,
    key_bag,
    parse_answer_list,
    parse_response,
    task_spec,
)
from .assign import hungarian_max, matching_matrix
from .datamodel import (
    AnnotationError,
    EvalSample,
    TripletInstance,
    VideoAnnotation,
    aggregate,
    build_all_samples,
    build_samples,
    load_annotations,
)
from .embed import (
    EmbeddingError,
    EmbeddingProvider,
    FileStoreMissError,
    FileStoreProvider,
    HashEmbeddingProvider,
    RemoteEmbeddingError,
    RemoteEmbeddingProvider,
    cosine,
    embed_text,
    hash_embed,
    normalize_text,
)
from .grposim import (
    TabularPolicy,
    ToyInstance,
    TrainConfig,
    grpo_objective,
    grpo_step,
    load_instance,
    run_training,
    sample_completions,
    sft_step,
)
from .metrics import (
    GroundTruthResolutionError,
    Interval,
    ScoreBundle,
    evaluate_sample,
    frames_to_intervals,
    hierarchy_score,
    semantic_score,
    struct_score,
    temporal_iou,
    topk_hierarchy_score,
)
from .rewards import (
    RewardBundle,
    RewardConfig,
    accuracy_reward,
    group_advantages,
    hierarchy_reward,
    total_reward,
)
from .taxonomy import (
    ContextTriplet,
    Hierarchy,
    TaxonomyError,
    TaxonomyNode,
    TaxonomyStats,
    hierarchy_distance,
    lca,
    load_taxonomy,
    nearest_node,
    render_triplet_text,
    serialize,
    taxonomy_stats,
)
