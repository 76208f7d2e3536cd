"""The outer teaching loop: select bases, perturb, merge, retrain, check.

One iteration grows (or rewrites) the training set with k perturbed
copies of the samples nearest the targets, retrains the student from a
fresh seeded initialization, and stops as soon as every target is
predicted as its teaching label.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, LabeledInstance, TargetSpec, modify
from .errors import CombineError, ConfigError
from .greedy import GreedyConfig, GreedyStepTrace, perturb_dataset
from .scoring import ScoreSpec
from .selection import SelectionPolicy, select_base
from .student import (
    Architecture,
    LogitTrace,
    ModelParams,
    TrainConfig,
    accuracy,
    forward_logits,
    last5_logit_decision,
    train,
)

COMBINE_ADDITION = "addition"
COMBINE_REPLACEMENT = "replacement"

RULE_ARGMAX_NOW = "argmax_now"
RULE_LAST5_MEAN = "last5_mean"


@dataclass(frozen=True)
class TeachingConfig:
    selection: SelectionPolicy
    greedy: GreedyConfig = GreedyConfig()
    score: ScoreSpec = ScoreSpec()
    max_iterations: int = 30
    combine: str = COMBINE_ADDITION
    train: TrainConfig = TrainConfig()
    success_rule: str = RULE_LAST5_MEAN
    arch: Architecture = Architecture()

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.combine not in (COMBINE_ADDITION, COMBINE_REPLACEMENT):
            raise ConfigError(f"unknown combine strategy {self.combine!r}")
        if self.success_rule not in (RULE_ARGMAX_NOW, RULE_LAST5_MEAN):
            raise ConfigError(f"unknown success rule {self.success_rule!r}")


@dataclass
class TeachingState:
    """Mutable loop state; exposed mainly for tests and audits."""

    iteration: int
    dataset: Dataset
    theta: ModelParams
    added: int = 0
    replaced: int = 0
    durations_ms: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    added: int
    sample_percent: float
    duration_ms: float
    target_preds: tuple[int, ...]   # current argmax per target
    success: bool                   # under the configured rule


@dataclass
class RunArtifacts:
    """Heavyweight leftovers of a run, kept out of the serialized report."""

    final_dataset: Dataset
    final_theta: ModelParams
    final_trace: LogitTrace
    greedy_traces: list[dict[int, list[GreedyStepTrace]]]  # one dict per iteration


@dataclass
class TeachingReport:
    method: str
    success: bool
    iterations_used: int
    samples_added: int
    sample_percent: float
    clean_size: int
    clean_acc_before: float | None
    clean_acc_after: float | None
    iterations: list[IterationRecord]
    artifacts: RunArtifacts | None = None

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "success": self.success,
            "iterations_used": self.iterations_used,
            "samples_added": self.samples_added,
            "sample_percent": self.sample_percent,
            "clean_size": self.clean_size,
            "clean_acc_before": self.clean_acc_before,
            "clean_acc_after": self.clean_acc_after,
            "iterations": [
                {
                    "iter": r.iteration,
                    "added": r.added,
                    "sample_pct": r.sample_percent,
                    "duration_ms": r.duration_ms,
                    "target_pred": list(r.target_preds),
                    "success": r.success,
                }
                for r in self.iterations
            ],
        }

    def mean_iteration_ms(self) -> float | None:
        if not self.iterations:
            return None
        return float(np.mean([r.duration_ms for r in self.iterations]))


def write_report_json(report: TeachingReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=1)
        fh.write("\n")


def write_report_csv(report: TeachingReport, path) -> None:
    """One row per iteration: iter,added,sample_pct,duration_ms,target_pred,success."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,added,sample_pct,duration_ms,target_pred,success\n")
        for r in report.iterations:
            preds = "|".join(str(p) for p in r.target_preds)
            fh.write(
                f"{r.iteration},{r.added},{r.sample_percent:.6f},"
                f"{r.duration_ms:.3f},{preds},{int(r.success)}\n"
            )


def combine(
    d_prev: Dataset, d_pert: Dataset, strategy: str, base_ids: list[int]
) -> Dataset:
    """Merge perturbed samples into the working set.

    Addition appends them with fresh ids; replacement swaps each one in
    place of its origin item, keeping the origin's id.
    """
    if d_prev.schema != d_pert.schema:
        raise CombineError("schema mismatch between datasets")
    if strategy == COMBINE_ADDITION:
        next_id = d_prev.next_id()
        fresh = []
        for i, item in enumerate(d_pert.items):
            fresh.append(LabeledInstance(next_id + i, item.instance, item.label, item.provenance))
        return Dataset(d_prev.schema, d_prev.items + tuple(fresh))
    if strategy != COMBINE_REPLACEMENT:
        raise ConfigError(f"unknown combine strategy {strategy!r}")
    known = set(d_prev.ids())
    base_set = set(base_ids)
    by_origin: dict[int, LabeledInstance] = {}
    for item in d_pert.items:
        origin = item.provenance.origin_id
        if origin is None or origin not in known or origin not in base_set:
            raise CombineError(f"replacement origin id {origin} not in previous dataset")
        by_origin[origin] = item
    out = []
    for item in d_prev.items:
        if item.id in by_origin:
            p = by_origin[item.id]
            out.append(LabeledInstance(item.id, p.instance, p.label, p.provenance))
        else:
            out.append(item)
    return Dataset(d_prev.schema, tuple(out))


def predicted_labels(theta: ModelParams, targets: TargetSpec) -> tuple[int, ...]:
    return tuple(int(np.argmax(forward_logits(theta, t.instance))) for t in targets.targets)


def check_success(
    theta: ModelParams, trace: LogitTrace, targets: TargetSpec, rule: str
) -> bool:
    """All-or-nothing: every target must be predicted as its teaching label."""
    if rule == RULE_ARGMAX_NOW:
        preds = predicted_labels(theta, targets)
        return all(p == t.target_label for p, t in zip(preds, targets.targets))
    if rule != RULE_LAST5_MEAN:
        raise ConfigError(f"unknown success rule {rule!r}")
    if trace.num_targets() != len(targets):
        raise ConfigError("logit trace does not cover all targets")
    return all(
        last5_logit_decision(trace, t.target_label, i)
        for i, t in enumerate(targets.targets)
    )


def _derived_train_cfg(cfg: TrainConfig, seed: int | None) -> TrainConfig:
    if seed is None:
        return cfg
    state = np.random.SeedSequence(seed).generate_state(2)
    return replace(cfg, init_seed=int(state[0]), shuffle_seed=int(state[1]))


def run_teaching(
    d_clean: Dataset,
    targets: TargetSpec,
    cfg: TeachingConfig,
    seed: int | None = None,
    d_eval: Dataset | None = None,
    method: str = "iterative",
    keep_artifacts: bool = True,
) -> TeachingReport:
    """Run the full teaching loop and report what it cost.

    Deterministic given (datasets, targets, config, seed): the optional
    seed re-derives the train seeds, everything else is seed-free. The
    clean training set is never mutated; additions get fresh ids.
    """
    if targets.schema != d_clean.schema:
        raise ConfigError("targets do not share the dataset schema")
    train_cfg = _derived_train_cfg(cfg.train, seed)
    clean_size = len(d_clean)

    theta, trace = train(d_clean, train_cfg, monitored=targets, arch=cfg.arch)
    acc_before = accuracy(theta, d_eval) if d_eval is not None else None

    state = TeachingState(iteration=0, dataset=d_clean, theta=theta)
    records: list[IterationRecord] = []
    greedy_traces: list[dict[int, list[GreedyStepTrace]]] = []
    success = check_success(theta, trace, targets, cfg.success_rule)

    while not success and state.iteration < cfg.max_iterations:
        t0 = time.perf_counter()
        ids = select_base(state.dataset, targets, cfg.selection)
        d_base = Dataset(d_clean.schema, tuple(state.dataset.by_id(i) for i in ids))
        d_pert, step_traces = perturb_dataset(theta, d_base, targets, cfg.score, cfg.greedy)
        merged = combine(state.dataset, d_pert, cfg.combine, ids)
        theta, trace = train(merged, train_cfg, monitored=targets, arch=cfg.arch)
        success = check_success(theta, trace, targets, cfg.success_rule)
        duration_ms = (time.perf_counter() - t0) * 1000.0

        state.iteration += 1
        state.dataset = merged
        state.theta = theta
        if cfg.combine == COMBINE_ADDITION:
            state.added += len(d_pert)
        else:
            state.replaced += len(d_pert)
        state.durations_ms.append(duration_ms)
        greedy_traces.append(step_traces)

        touched = state.added if cfg.combine == COMBINE_ADDITION else state.replaced
        records.append(
            IterationRecord(
                iteration=state.iteration,
                added=len(d_pert) if cfg.combine == COMBINE_ADDITION else 0,
                sample_percent=100.0 * touched / clean_size,
                duration_ms=duration_ms,
                target_preds=predicted_labels(theta, targets),
                success=success,
            )
        )

    samples_added = state.added if cfg.combine == COMBINE_ADDITION else state.replaced
    acc_after = accuracy(state.theta, d_eval) if d_eval is not None else None
    artifacts = None
    if keep_artifacts:
        artifacts = RunArtifacts(state.dataset, state.theta, trace, greedy_traces)
    return TeachingReport(
        method=method,
        success=success,
        iterations_used=state.iteration,
        samples_added=samples_added,
        sample_percent=100.0 * samples_added / clean_size,
        clean_size=clean_size,
        clean_acc_before=acc_before,
        clean_acc_after=acc_after,
        iterations=records,
        artifacts=artifacts,
    )


def audit_budget(d: Dataset, budget: int) -> list[str]:
    """Check every perturbed item against its recorded origin.

    Returns human-readable violations (empty list = all good): flip lists
    must stay within the budget, and replaying them on an origin that is
    still present must reproduce the item bit-for-bit.
    """
    problems = []
    for item in d.items:
        if not item.provenance.is_perturbed:
            continue
        flips = item.provenance.flips
        if len(flips) > budget:
            problems.append(f"item {item.id}: {len(flips)} flips exceed budget {budget}")
        origin_id = item.provenance.origin_id
        # Replay is only checkable when the origin still holds its original
        # bits: replacement rewrites the origin id in place (origin_id ==
        # item.id), addition never rewrites anything.
        if origin_id != item.id and d.has_id(origin_id):
            replayed = modify(d.by_id(origin_id).instance, flips)
            if replayed != item.instance:
                problems.append(f"item {item.id}: flip replay does not reproduce bits")
    return problems
