"""Desk-scale verification of the clipped-surrogate group policy objective.

Policies here are tabular softmax distributions over a small enumerated
set of candidate completions, which makes every quantity exact: the KL
term is computed over the full distribution instead of sampled, and the
analytic gradient can be checked against finite differences.

Sampling uses the stdlib Mersenne Twister so seeded runs produce
byte-identical traces across platforms and interpreter versions.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .answers import task_spec
from .rewards import group_advantages

_MIN_PROB = 1e-300


@dataclass
class TabularPolicy:
    """Softmax policy over an enumerated completion set."""

    logits: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 1 or self.logits.size < 2:
            raise ValueError("policy needs a 1-d logit vector of size >= 2")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def size(self) -> int:
        return int(self.logits.size)

    def probs(self) -> np.ndarray:
        scaled = self.logits / self.temperature
        scaled = scaled - scaled.max()
        weights = np.exp(scaled)
        return weights / weights.sum()

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(self.logits.copy(), self.temperature)


@dataclass(frozen=True)
class ToyInstance:
    """A prompt with an enumerated completion space and its ground truth."""

    prompt_id: str
    candidates: tuple[str, ...]
    ground_truth: tuple[dict, ...]
    task: str
    gt_index: int | None = None

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise ValueError("instance needs at least two candidate completions")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("candidate completions must be distinct")
        if self.gt_index is not None and not 0 <= self.gt_index < len(self.candidates):
            raise ValueError(f"gt_index {self.gt_index} out of range")
        task_spec(self.task)


def load_instance(source) -> ToyInstance:
    """Read a toy instance from a JSON file, path string, or dict."""
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        doc = source
    ground_truth = doc.get("ground_truth", {})
    records = ground_truth.get("records", []) if isinstance(ground_truth, dict) else ground_truth
    return ToyInstance(
        prompt_id=str(doc["prompt_id"]),
        candidates=tuple(str(c) for c in doc["candidates"]),
        ground_truth=tuple(dict(r) for r in records),
        task=str(doc["task"]),
        gt_index=doc.get("gt_index"),
    )


@dataclass(frozen=True)
class TrainConfig:
    n_completions: int = 4
    temperature: float = 0.9
    beta: float = 0.04
    epsilon: float = 0.2
    lr: float = 0.1
    steps: int = 100
    rng_seed: int = 0
    sft_steps: int = 0

    def __post_init__(self):
        if self.n_completions < 1:
            raise ValueError("need at least one completion per group")
        if self.temperature <= 0 or self.lr <= 0:
            raise ValueError("temperature and lr must be positive")
        if self.steps < 0 or self.sft_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.epsilon < 0 or self.beta < 0:
            raise ValueError("epsilon and beta must be non-negative")


def sft_step(policy: TabularPolicy, gt_index: int, lr: float) -> TabularPolicy:
    """One gradient-descent step on the cross-entropy to the target index."""
    if not 0 <= gt_index < policy.size:
        raise IndexError(f"gt_index {gt_index} out of range for {policy.size} candidates")
    p = policy.probs()
    grad = p.copy()
    grad[gt_index] -= 1.0
    grad /= policy.temperature
    return TabularPolicy(policy.logits - lr * grad, policy.temperature)


def sample_completions(policy: TabularPolicy, n: int, rng) -> list[int]:
    """Draw n i.i.d. candidate indices from the softmax distribution.

    ``rng`` is a seed or a ``random.Random``; a given seed always yields
    the same samples.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if isinstance(rng, bool) or not isinstance(rng, (int, random.Random)):
        raise TypeError(f"rng must be an int seed or random.Random, got {type(rng).__name__}")
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)
    cumulative = np.cumsum(policy.probs())
    cumulative[-1] = 1.0
    samples = []
    for _ in range(n):
        u = rng.random()
        samples.append(int(np.searchsorted(cumulative, u, side="right")))
    return samples


def kl_divergence(policy: TabularPolicy, ref: TabularPolicy) -> float:
    """Exact KL(policy || ref) over the full candidate distribution."""
    p = policy.probs()
    q = ref.probs()
    return float(np.sum(p * (np.log(p) - np.log(q))))


def grpo_objective(
    policy: TabularPolicy,
    ref: TabularPolicy,
    old: TabularPolicy,
    samples,
    advantages,
    epsilon: float = 0.2,
    beta: float = 0.04,
) -> float:
    """Clipped-surrogate objective with exact KL regularization.

    J = mean_i min(s_i * A_i, clip(s_i, 1-eps, 1+eps) * A_i)
        - beta * KL(policy || ref),  with s_i the new/old probability
    ratio of sampled completion i.
    """
    samples = list(samples)
    advantages = [float(a) for a in advantages]
    if len(samples) != len(advantages):
        raise ValueError("samples and advantages must have equal length")
    p = policy.probs()
    q = old.probs()
    terms = []
    for idx, adv in zip(samples, advantages):
        if q[idx] <= _MIN_PROB:
            raise ValueError(f"old policy assigns zero probability to sampled index {idx}")
        ratio = float(p[idx] / q[idx])
        clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
        terms.append(min(ratio * adv, clipped * adv))
    # fsum keeps the objective exactly invariant to pair order
    return math.fsum(terms) / len(samples) - beta * kl_divergence(policy, ref)


def grpo_logit_gradient(
    policy: TabularPolicy,
    ref: TabularPolicy,
    old: TabularPolicy,
    samples,
    advantages,
    epsilon: float = 0.2,
    beta: float = 0.04,
) -> np.ndarray:
    """Analytic gradient of the objective with respect to the logits.

    The surrogate term for sample i only carries gradient while the min
    selects the unclipped branch: for positive advantages that is
    s < 1+eps, for negative ones s > 1-eps. Exact boundary hits take the
    flat clipped branch, so epsilon = 0 leaves only the KL pull when the
    policy still equals the sampling policy.
    """
    samples = list(samples)
    advantages = [float(a) for a in advantages]
    p = policy.probs()
    q = old.probs()
    ref_p = ref.probs()
    temp = policy.temperature
    grad = np.zeros_like(p)
    n = len(samples)
    for idx, adv in zip(samples, advantages):
        if q[idx] <= _MIN_PROB:
            raise ValueError(f"old policy assigns zero probability to sampled index {idx}")
        ratio = float(p[idx] / q[idx])
        active = (adv > 0 and ratio < 1.0 + epsilon) or (adv < 0 and ratio > 1.0 - epsilon)
        if not active:
            continue
        coef = adv / float(q[idx]) * float(p[idx]) / temp / n
        grad -= coef * p
        grad[idx] += coef
    log_ratio = np.log(p) - np.log(ref_p)
    kl = float(np.sum(p * log_ratio))
    grad -= beta * (p * (log_ratio - kl)) / temp
    return grad


def grpo_step(
    policy: TabularPolicy,
    ref: TabularPolicy,
    old: TabularPolicy,
    instance: ToyInstance,
    cfg: TrainConfig,
    reward_fn,
    rng,
) -> tuple[TabularPolicy, dict]:
    """Sample a group, compute advantages, take one ascent step.

    ``reward_fn`` maps a candidate index to its total reward. The trace
    dict records everything needed to replay the step.
    """
    if policy.size != len(instance.candidates):
        raise ValueError("policy size does not match the candidate set")
    samples = sample_completions(old, cfg.n_completions, rng)
    rewards = [float(reward_fn(idx)) for idx in samples]
    advantages = group_advantages(rewards)
    j_before = grpo_objective(policy, ref, old, samples, advantages, cfg.epsilon, cfg.beta)
    grad = grpo_logit_gradient(policy, ref, old, samples, advantages, cfg.epsilon, cfg.beta)
    updated = TabularPolicy(policy.logits + cfg.lr * grad, policy.temperature)
    j_after = grpo_objective(updated, ref, old, samples, advantages, cfg.epsilon, cfg.beta)
    trace = {
        "samples": samples,
        "rewards": rewards,
        "advantages": advantages,
        "mean_reward": math.fsum(rewards) / len(rewards),
        "objective_before": j_before,
        "objective_after": j_after,
        "probs": [float(x) for x in updated.probs()],
    }
    return updated, trace


@dataclass
class TrainingTrace:
    config: TrainConfig
    prompt_id: str
    candidate_count: int
    steps: list[dict] = field(default_factory=list)
    final_probs: list[float] = field(default_factory=list)

    def header(self) -> dict:
        return {
            "type": "header",
            "prompt_id": self.prompt_id,
            "candidates": self.candidate_count,
            "n_completions": self.config.n_completions,
            "temperature": self.config.temperature,
            "beta": self.config.beta,
            "epsilon": self.config.epsilon,
            "lr": self.config.lr,
            "steps": self.config.steps,
            "sft_steps": self.config.sft_steps,
            "rng_seed": self.config.rng_seed,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        for step in self.steps:
            lines.append(json.dumps(step, sort_keys=True))
        return "\n".join(lines) + "\n"


def _derive_gt_index(instance: ToyInstance, reward_fn) -> int:
    if instance.gt_index is not None:
        return instance.gt_index
    rewards = [float(reward_fn(i)) for i in range(len(instance.candidates))]
    return max(range(len(rewards)), key=lambda i: (rewards[i], -i))


def run_training(instance: ToyInstance, cfg: TrainConfig, reward_fn) -> TrainingTrace:
    """SFT warm start (optional) followed by group-relative RFT steps.

    The reference policy is frozen to the post-warm-start policy. Rewards
    are cached per candidate index since the completion space is fixed.
    """
    cache: dict[int, float] = {}

    def cached_reward(idx: int) -> float:
        if idx not in cache:
            cache[idx] = float(reward_fn(idx))
        return cache[idx]

    policy = TabularPolicy(np.zeros(len(instance.candidates)), cfg.temperature)
    trace = TrainingTrace(cfg, instance.prompt_id, len(instance.candidates))

    if cfg.sft_steps > 0:
        gt_index = _derive_gt_index(instance, cached_reward)
        for step in range(cfg.sft_steps):
            policy = sft_step(policy, gt_index, cfg.lr)
            p = policy.probs()
            trace.steps.append(
                {
                    "type": "sft",
                    "step": step,
                    "target": gt_index,
                    "loss": -math.log(float(p[gt_index])),
                    "probs": [float(x) for x in p],
                }
            )

    ref = policy.copy()
    rng = random.Random(cfg.rng_seed)
    for step in range(cfg.steps):
        old = policy.copy()
        policy, step_trace = grpo_step(policy, ref, old, instance, cfg, cached_reward, rng)
        step_trace["type"] = "rft"
        step_trace["step"] = step
        trace.steps.append(step_trace)

    trace.final_probs = [float(x) for x in policy.probs()]
    return trace
