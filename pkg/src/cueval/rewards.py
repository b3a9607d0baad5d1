"""Verifiable rewards: format, task-routed accuracy, and group advantages.

The total reward is the binary format reward (both tag pairs present)
plus an accuracy reward composed per task family:

  * temporal tasks:       struct + interval IoU
  * event-bearing tasks:  struct + lambda * semantic + (1 - lambda) * smooth hierarchy
  * everything else:      struct + semantic

The hierarchy term drops the evaluation-time validity threshold so the
training signal stays smooth: a near-miss in the tree earns partial
credit instead of a hard zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .answers import (
    VALUE_TAG_EVENT,
    VALUE_TAG_TEMPORAL,
    AnswerList,
    TaskSpec,
    key_bag,
    parse_response,
    record_key_bag,
)
from .embed import EmbeddingProvider
from .metrics import (
    NORMALIZATION_PAPER,
    matched_hierarchy_distances,
    records_to_intervals,
    semantic_score,
    struct_score,
    temporal_iou,
)
from .taxonomy import Hierarchy


@dataclass(frozen=True)
class RewardConfig:
    lambda_weight: float = 0.2
    tau_reward: float = 1.0
    semantic_normalization: str = NORMALIZATION_PAPER

    def __post_init__(self):
        if not 0.0 <= self.lambda_weight <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lambda_weight}")
        if self.tau_reward != 1.0:
            raise ValueError("the smooth hierarchy reward is defined with tau fixed at 1")


@dataclass(frozen=True)
class RewardBundle:
    """Reward components for one completion; total = format + accuracy."""

    format: int
    struct: float
    semantic: float | None
    hierarchy: float | None
    tiou: float | None
    accuracy: float
    total: float


def hierarchy_reward(
    out,
    gt_records,
    spec: TaskSpec,
    h: Hierarchy,
    provider: EmbeddingProvider,
    normalization: str = NORMALIZATION_PAPER,
) -> float:
    """Smooth hierarchy reward: matched (1 - d/d_max) with no threshold."""
    if spec.value_tag != VALUE_TAG_EVENT:
        raise ValueError(f"hierarchy reward undefined for task {spec.task_id!r}")
    distances, r, t, d_max = matched_hierarchy_distances(out, gt_records, spec, h, provider)
    if r == 0 or t == 0:
        return 0.0
    total = sum(1.0 - d / d_max for d in distances)
    denominator = r * t if normalization == NORMALIZATION_PAPER else max(r, t)
    return min(1.0, max(0.0, total / denominator))


def _components(
    out: AnswerList,
    gt_records,
    spec: TaskSpec,
    h: Hierarchy | None,
    provider: EmbeddingProvider | None,
    cfg: RewardConfig,
) -> tuple[float, float | None, float | None, float | None, float]:
    gt = list(gt_records)
    struct = struct_score(key_bag(out), record_key_bag(gt))
    if spec.value_tag == VALUE_TAG_TEMPORAL:
        tiou = temporal_iou(records_to_intervals(out), records_to_intervals(gt))
        return struct, None, None, tiou, struct + tiou
    if provider is None:
        raise ValueError("non-temporal tasks require an embedding provider")
    semantic = semantic_score(out, gt, spec, provider, cfg.semantic_normalization)
    if spec.value_tag != VALUE_TAG_EVENT:
        return struct, semantic, None, None, struct + semantic
    if h is None:
        raise ValueError("event-bearing tasks require a taxonomy")
    hierarchy = hierarchy_reward(out, gt, spec, h, provider, cfg.semantic_normalization)
    accuracy = struct + cfg.lambda_weight * semantic + (1.0 - cfg.lambda_weight) * hierarchy
    return struct, semantic, hierarchy, None, accuracy


def accuracy_reward(
    out: AnswerList,
    gt_records,
    spec: TaskSpec,
    h: Hierarchy | None,
    provider: EmbeddingProvider | None,
    cfg: RewardConfig = RewardConfig(),
) -> float:
    """Task-routed accuracy in [0, 2]: struct plus one content term."""
    return _components(out, gt_records, spec, h, provider, cfg)[4]


def total_reward(
    raw: str,
    gt_records,
    spec: TaskSpec,
    h: Hierarchy | None,
    provider: EmbeddingProvider | None,
    cfg: RewardConfig = RewardConfig(),
) -> RewardBundle:
    """Format plus accuracy reward for a raw model response."""
    answers = parse_response(raw, spec)
    fmt = 1 if answers.think_present and answers.answer_present else 0
    struct, semantic, hierarchy, tiou, accuracy = _components(
        answers, gt_records, spec, h, provider, cfg
    )
    return RewardBundle(
        format=fmt,
        struct=struct,
        semantic=semantic,
        hierarchy=hierarchy,
        tiou=tiou,
        accuracy=accuracy,
        total=fmt + accuracy,
    )


def group_advantages(rewards) -> list[float]:
    """Group-normalized advantages: (r - mean) / population std.

    Constant groups (including singletons) yield all-zero advantages
    rather than dividing by a vanishing standard deviation.
    """
    values = [float(r) for r in rewards]
    if not values:
        raise ValueError("advantage group must contain at least one reward")
    if max(values) == min(values):
        return [0.0] * len(values)
    n = len(values)
    mean = math.fsum(values) / n
    variance = math.fsum((v - mean) ** 2 for v in values) / n
    std = math.sqrt(variance)
    return [(v - mean) / std for v in values]
