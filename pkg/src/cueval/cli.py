"""Command-line harness for batch evaluation, rewards, prompts, and runs.

Exit codes: 0 success, 1 validation failures or scoring warnings,
2 I/O or configuration errors. Every report embeds the knobs it was
produced with (tau, lambda, normalization, provider) so numbers are
never ambiguous.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .answers import TASK_ORDER, TASKS, AnswerList, parse_answer_list, parse_response, task_spec
from .datamodel import (
    METRIC_COLUMNS,
    AnnotationError,
    EvalSample,
    aggregate,
    build_all_samples,
    load_annotations,
)
from .embed import (
    DEFAULT_DIMS,
    EmbeddingError,
    FileStoreProvider,
    HashEmbeddingProvider,
    RemoteEmbeddingProvider,
)
from .grposim import TrainConfig, load_instance, run_training
from .metrics import GroundTruthResolutionError, evaluate_sample
from .rewards import RewardConfig, group_advantages, total_reward
from .taxonomy import TaxonomyError, load_taxonomy, taxonomy_stats

EXIT_OK = 0
EXIT_WARN = 1
EXIT_IO = 2

REMOTE_TIMEOUT_ENV = "CUE_EVAL_REMOTE_TIMEOUT_MS"
DEFAULT_REMOTE_TIMEOUT_MS = 10_000

PROMPT_STEM = (
    "This is a video showing some key events related to the safety, "
    "laws & rules, or life & health."
)

_TASK_PROBLEMS = {
    "event-rec": "Identify every distinct event occurring in the video.",
    "scene-rec": "Identify every distinct scene in which the video takes place.",
    "attribute-rec": "Identify every distinct attribute characterizing how the events unfold.",
    "anomaly-td": (
        "Identify all anomalous occurrences and report each as its context "
        "triplet of event, scene, and attribute."
    ),
    "anomaly-bu": (
        "Extract every context triplet of event, scene, and attribute present "
        "in the video and assign each an anomaly score between 0 and 1."
    ),
    "grounding": "Locate every moment matching the query. Report one entry per continuous interval.",
    "detection": "Detect and localize every temporal clip that shows an anomaly.",
    "anticipation": (
        "Based on the observed clip, anticipate the upcoming occurrences and "
        "report each as its context triplet of event, scene, and attribute."
    ),
}

_KEY_HINTS = {
    "event": "string",
    "scene": "string",
    "attribute": "string",
    "anomaly": "number in [0, 1]",
    "start": "seconds (number)",
    "end": "seconds (number)",
}


class ConfigError(ValueError):
    """Bad flag values or inconsistent configuration."""


def _build_provider(spec: str, dims: int):
    if spec == "hash":
        return HashEmbeddingProvider(dims)
    if spec.startswith("file:"):
        return FileStoreProvider(spec[len("file:") :])
    if spec.startswith("remote:"):
        timeout_ms = int(os.environ.get(REMOTE_TIMEOUT_ENV, DEFAULT_REMOTE_TIMEOUT_MS))
        return RemoteEmbeddingProvider(spec[len("remote:") :], dims, timeout_ms)
    raise ConfigError(f"unknown provider {spec!r}; expected hash, file:PATH, or remote:URL")


def _parse_tasks(raw: str | None) -> list[str]:
    if not raw:
        return list(TASK_ORDER)
    tasks = [t.strip() for t in raw.split(",") if t.strip()]
    for t in tasks:
        if t not in TASKS:
            raise ConfigError(f"unknown task {t!r}; expected one of {sorted(TASKS)}")
    return tasks


def _validate_common(args) -> None:
    if not 0.0 < args.tau <= 1.0:
        raise ConfigError(f"--tau must be in (0, 1], got {args.tau}")
    if not 0.0 <= args.lambda_weight <= 1.0:
        raise ConfigError(f"--lambda must be in [0, 1], got {args.lambda_weight}")
    if args.workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {args.workers}")


def _write_output(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read_jsonl(path: str) -> list[tuple[int, dict]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: invalid JSON line: {exc}") from exc
            if not isinstance(obj, dict):
                raise ConfigError(f"{path}:{lineno}: expected a JSON object")
            rows.append((lineno, obj))
    return rows


def _prediction_answers(obj: dict, spec) -> AnswerList | None:
    if "response" in obj:
        return parse_response(str(obj["response"]), spec)
    if "answer" in obj:
        # Pre-parsed answers run through the same coercion as raw payloads.
        return parse_answer_list(
            json.dumps(obj["answer"]), spec, think_present=True, answer_present=True
        )
    return None


def cmd_validate_taxonomy(args) -> int:
    hierarchy = load_taxonomy(args.taxonomy)
    stats = taxonomy_stats(hierarchy)
    for level, count in enumerate(stats.level_counts):
        print(f"level {level}: {count} nodes")
    print(f"anomaly leaves: {stats.anomaly_leaves}")
    print(f"normality leaves: {stats.normality_leaves}")
    return EXIT_OK


def _score_sample(sample: EvalSample, predictions, spec_cache, hierarchy, provider, args):
    spec = spec_cache[sample.task]
    answers = predictions.get(sample.sample_id)
    if answers is None:
        answers = AnswerList([], False, False)
    try:
        return evaluate_sample(
            answers,
            sample.ground_truth,
            spec,
            hierarchy,
            provider,
            tau=args.tau,
            normalization=args.sem_norm,
        )
    except EmbeddingError as exc:
        raise EmbeddingError(f"sample {sample.sample_id}: {exc}") from exc
    except GroundTruthResolutionError as exc:
        raise GroundTruthResolutionError(f"sample {sample.sample_id}: {exc}") from exc


def cmd_eval(args) -> int:
    _validate_common(args)
    tasks = _parse_tasks(args.tasks)
    hierarchy = load_taxonomy(args.taxonomy)
    provider = _build_provider(args.provider, args.dims)
    annotations = load_annotations(args.gt, hierarchy)
    samples = build_all_samples(annotations, tasks)
    by_id = {s.sample_id: s for s in samples}
    spec_cache = {t: task_spec(t) for t in tasks}

    predictions: dict[str, AnswerList] = {}
    warnings: list[str] = []
    for lineno, obj in _read_jsonl(args.pred):
        sample_id = obj.get("sample_id")
        sample = by_id.get(sample_id)
        if sample is None:
            warnings.append(f"line {lineno}: unknown sample_id {sample_id!r}, excluded")
            continue
        if obj.get("task") != sample.task:
            warnings.append(
                f"line {lineno}: task {obj.get('task')!r} does not match sample "
                f"{sample_id!r} ({sample.task}), excluded"
            )
            continue
        answers = _prediction_answers(obj, spec_cache[sample.task])
        if answers is None:
            warnings.append(f"line {lineno}: neither 'response' nor 'answer' present, excluded")
            continue
        if sample_id in predictions:
            warnings.append(f"line {lineno}: duplicate prediction for {sample_id!r}, keeping the last")
        predictions[sample_id] = answers

    def score(sample: EvalSample):
        return _score_sample(sample, predictions, spec_cache, hierarchy, provider, args)

    if args.workers == 1:
        bundles = [score(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            bundles = list(pool.map(score, samples))

    rows = []
    for sample, bundle in zip(samples, bundles):
        rows.append(
            {
                "sample_id": sample.sample_id,
                "task": sample.task,
                "struct": bundle.struct,
                "semantic": bundle.semantic,
                "hierarchy": bundle.hierarchy,
                "tiou": bundle.tiou,
            }
        )
    table = aggregate(list(zip((s.task for s in samples), bundles)))
    config = {
        "artifact": f"cueval {__version__}",
        "tau": args.tau,
        "lambda": args.lambda_weight,
        "semantic_normalization": args.sem_norm,
        "provider": args.provider,
        "dims": args.dims,
        "tasks": tasks,
    }
    text = _render_report(config, rows, table, warnings, args.format)
    _write_output(text, args.out)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return EXIT_WARN if warnings else EXIT_OK


def _render_report(config, rows, table, warnings, fmt: str) -> str:
    if fmt == "json":
        report = {"config": config, "samples": rows, "table": table, "warnings": warnings}
        return json.dumps(report, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        lines = ["task,metric,mean,count"]
        for task, row in table.items():
            for metric in METRIC_COLUMNS:
                mean = row[metric]
                rendered = "NA" if mean is None else f"{mean:.4f}"
                lines.append(f"{task},{metric},{rendered},{row['count']}")
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        lines = [
            "| Task | Count | Struct | Semantic | Hierarchy | TIoU |",
            "| --- | --- | --- | --- | --- | --- |",
        ]
        for task, row in table.items():
            cells = [task, str(row["count"])]
            for metric in METRIC_COLUMNS:
                mean = row[metric]
                cells.append("n/a" if mean is None else f"{mean:.2f}")
            lines.append("| " + " | ".join(cells) + " |")
        header = [
            f"<!-- {key}: {value} -->" for key, value in sorted(config.items())
        ]
        return "\n".join(header + lines) + "\n"
    raise ConfigError(f"unknown output format {fmt!r}")


def cmd_reward(args) -> int:
    _validate_common(args)
    hierarchy = load_taxonomy(args.taxonomy)
    provider = _build_provider(args.provider, args.dims)
    annotations = load_annotations(args.gt, hierarchy)
    samples = build_all_samples(annotations, TASK_ORDER)
    by_id = {s.sample_id: s for s in samples}
    cfg = RewardConfig(lambda_weight=args.lambda_weight, semantic_normalization=args.sem_norm)

    entries = []
    for lineno, obj in _read_jsonl(args.completions):
        prompt_id = obj.get("prompt_id")
        sample_id = obj.get("sample_id")
        sample = by_id.get(sample_id)
        if sample is None:
            raise GroundTruthResolutionError(
                f"{args.completions}:{lineno}: prompt group {prompt_id!r} references "
                f"missing ground truth {sample_id!r}"
            )
        spec = task_spec(str(obj.get("task", sample.task)))
        if spec.task_id != sample.task:
            raise GroundTruthResolutionError(
                f"{args.completions}:{lineno}: task {spec.task_id!r} does not match "
                f"sample {sample_id!r} ({sample.task})"
            )
        bundle = total_reward(
            str(obj.get("response", "")), sample.ground_truth, spec, hierarchy, provider, cfg
        )
        entries.append((prompt_id, sample_id, spec.task_id, bundle))

    groups: dict[str, list[int]] = {}
    for idx, (prompt_id, _, _, _) in enumerate(entries):
        groups.setdefault(prompt_id, []).append(idx)
    advantages = [0.0] * len(entries)
    for indices in groups.values():
        group_adv = group_advantages([entries[i][3].total for i in indices])
        for i, adv in zip(indices, group_adv):
            advantages[i] = adv

    lines = []
    for (prompt_id, sample_id, task, bundle), advantage in zip(entries, advantages):
        lines.append(
            json.dumps(
                {
                    "prompt_id": prompt_id,
                    "sample_id": sample_id,
                    "task": task,
                    "format": bundle.format,
                    "struct": bundle.struct,
                    "semantic": bundle.semantic,
                    "hierarchy": bundle.hierarchy,
                    "tiou": bundle.tiou,
                    "accuracy": bundle.accuracy,
                    "total": bundle.total,
                    "advantage": advantage,
                },
                sort_keys=True,
            )
        )
    _write_output("\n".join(lines) + ("\n" if lines else ""), args.out)
    if args.out:
        print(f"scored {len(entries)} completions in {len(groups)} groups")
    return EXIT_OK


def _format_prompt(spec, query: str | None) -> str:
    keys = ", ".join(f'"{k}" ({_KEY_HINTS[k]})' for k in spec.key_schema)
    prompt = (
        "Reason inside <think></think>, then answer inside <answer></answer> "
        "with a JSON array of objects. Each object must carry exactly the "
        f"keys: {keys}."
    )
    if spec.value_tag == "temporal":
        prompt += " Report times in seconds from the start of the video."
    return prompt


def cmd_prompts(args) -> int:
    _validate_common(args)
    tasks = _parse_tasks(args.tasks)
    hierarchy = load_taxonomy(args.taxonomy)
    annotations = load_annotations(args.gt, hierarchy)
    samples = build_all_samples(annotations, tasks)
    lines = [
        json.dumps(
            {
                "type": "header",
                "pack": "prompt-pack",
                "artifact": f"cueval {__version__}",
                "wording": "reconstructed",
                "stem": PROMPT_STEM,
            },
            sort_keys=True,
        )
    ]
    for sample in samples:
        spec = TASKS[sample.task]
        problem = f"{PROMPT_STEM} {_TASK_PROBLEMS[sample.task]}"
        if sample.query:
            problem += f" Query: {sample.query}."
        lines.append(
            json.dumps(
                {
                    "sample_id": sample.sample_id,
                    "video_id": sample.video_id,
                    "task": sample.task,
                    "problem_prompt": problem,
                    "format_prompt": _format_prompt(spec, sample.query),
                },
                sort_keys=True,
            )
        )
    _write_output("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    _validate_common(args)
    instance = load_instance(args.instance)
    spec = task_spec(instance.task)
    hierarchy = load_taxonomy(args.taxonomy) if args.taxonomy else None
    if spec.value_tag == "event" and hierarchy is None:
        raise ConfigError(f"task {spec.task_id!r} needs --taxonomy for hierarchy rewards")
    provider = _build_provider(args.provider, args.dims)
    reward_cfg = RewardConfig(
        lambda_weight=args.lambda_weight, semantic_normalization=args.sem_norm
    )
    cfg = TrainConfig(
        n_completions=args.n,
        temperature=args.temperature,
        beta=args.beta,
        epsilon=args.epsilon,
        lr=args.lr,
        steps=args.steps,
        rng_seed=args.seed,
        sft_steps=args.sft_steps,
    )

    def reward_fn(idx: int) -> float:
        bundle = total_reward(
            instance.candidates[idx], instance.ground_truth, spec, hierarchy, provider, reward_cfg
        )
        return bundle.total

    trace = run_training(instance, cfg, reward_fn)
    _write_output(trace.to_jsonl(), args.out)
    summary = {
        "prompt_id": instance.prompt_id,
        "final_probs": trace.final_probs,
        "best_candidate": max(range(len(trace.final_probs)), key=trace.final_probs.__getitem__)
        if trace.final_probs
        else None,
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--provider", default="hash", help="hash | file:PATH | remote:URL")
    parser.add_argument("--dims", type=int, default=DEFAULT_DIMS)
    parser.add_argument("--tau", type=float, default=0.5)
    parser.add_argument("--lambda", dest="lambda_weight", type=float, default=0.2)
    parser.add_argument("--sem-norm", dest="sem_norm", choices=["paper", "balanced"], default="paper")
    parser.add_argument("--format", choices=["json", "csv", "markdown"], default="json")
    parser.add_argument("--out", default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--tasks", default=None, help="comma-separated task subset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cueval",
        description="Evaluation and verifiable-reward harness for structured video-anomaly answers",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("validate-taxonomy", help="validate a taxonomy document")
    p.add_argument("--taxonomy", required=True)
    p.set_defaults(func=cmd_validate_taxonomy)

    p = subparsers.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    _add_common_flags(p)
    p.set_defaults(func=cmd_eval)

    p = subparsers.add_parser("reward", help="compute rewards and group advantages")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--completions", required=True)
    _add_common_flags(p)
    p.set_defaults(func=cmd_reward)

    p = subparsers.add_parser("prompts", help="generate the prompt pack for a ground-truth file")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--gt", required=True)
    _add_common_flags(p)
    p.set_defaults(func=cmd_prompts)

    p = subparsers.add_parser("simulate", help="run the tabular policy trainer on a toy instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--taxonomy", default=None)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--sft-steps", dest="sft_steps", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--temperature", type=float, default=0.9)
    p.add_argument("--beta", type=float, default=0.04)
    p.add_argument("--epsilon", type=float, default=0.2)
    _add_common_flags(p)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TaxonomyError, AnnotationError, EmbeddingError, GroundTruthResolutionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WARN


if __name__ == "__main__":
    sys.exit(main())
