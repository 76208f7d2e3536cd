"""Experiment driver: seeded trial plans, sweep execution, metric
aggregation and CSV/SVG reporting.

A plan is a grid of method variants evaluated over paired trials: every
variant of a trial shares the same generated dataset and targets, so
cross-variant comparisons are paired by seed. Sweep cells are persisted
individually, which makes reruns resumable, and all aggregation is
recomputed from the per-trial CSV so that the `report` path and a fresh
sweep produce identical bytes regardless of worker count.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, run_baseline
from .data import (
    CandidatePool,
    EncodingMode,
    SynthConfig,
    TargetEntry,
    TargetSpec,
    load_dataset,
    load_targets,
    synth_generate,
)
from .errors import ConfigError, MetricError, PlanError
from .greedy import GreedyConfig
from .scoring import ScoreSpec
from .selection import SelectionPolicy
from .student import Architecture, TrainConfig
from .teaching import TeachingConfig, run_teaching

WORKERS_ENV = "DISCTEACH_WORKERS"

_EVAL_SEED_OFFSET = 7_000_003
_TARGET_SEED_OFFSET = 104_729

METHOD_ITERATIVE = "iterative"


# ---------------------------------------------------------------------------
# Plan model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    name: str
    method: str  # iterative | at_once | feature_collision | gradient_matching
    teaching: TeachingConfig
    baseline: BaselineConfig | None = None

    def __post_init__(self):
        if self.method != METHOD_ITERATIVE and self.baseline is None:
            raise PlanError(f"variant {self.name!r}: method {self.method} needs baseline settings")


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    dataset: SynthConfig | None
    dataset_path: str | None
    trials: int
    seeds: tuple[int, ...]
    task: str  # "tampering" | "improvement"
    group_size: int
    cap: float  # sample-percent cap for CSR
    variants: tuple[Variant, ...]
    targets_path: str | None = None  # required for file-backed datasets

    def __post_init__(self):
        if self.trials < 1:
            raise PlanError("plan needs at least one trial")
        if len(self.seeds) != self.trials:
            raise PlanError("seed list length must equal trial count")
        if not self.variants:
            raise PlanError("plan needs at least one variant")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise PlanError("variant names must be unique")
        if self.task not in ("tampering", "improvement"):
            raise PlanError(f"unknown task {self.task!r}")
        if self.group_size < 1:
            raise PlanError("group_size must be >= 1")
        if self.cap <= 0:
            raise PlanError("cap must be positive")
        if (self.dataset is None) == (self.dataset_path is None):
            raise PlanError("exactly one of dataset config and dataset path is required")
        if self.dataset_path is not None and self.targets_path is None:
            raise PlanError("file-backed plans need a targets file")


def sample_targets(
    pool: CandidatePool, task: str, group_size: int, num_classes: int, seed: int
) -> TargetSpec:
    """Deterministically draw a target group from generator candidates.

    Tampering picks one construction class and group_size of its
    candidates, teaching them toward the next class index; improvement
    picks flagged ambiguous candidates with their true labels.
    """
    rng = np.random.default_rng(seed + _TARGET_SEED_OFFSET)
    if task == "tampering":
        labels = sorted({c.label for c in pool.tampering})
        if not labels:
            raise ConfigError("generator emitted no tampering candidates")
        cls_ = int(labels[int(rng.integers(len(labels)))])
        members = [c for c in pool.tampering if c.label == cls_]
        if len(members) < group_size:
            raise ConfigError(
                f"only {len(members)} tampering candidates of class {cls_}, "
                f"need {group_size}"
            )
        chosen = rng.choice(len(members), size=group_size, replace=False)
        want = (cls_ + 1) % num_classes
        entries = tuple(
            TargetEntry(members[int(i)].instance, want, members[int(i)].label)
            for i in sorted(chosen.tolist())
        )
        return TargetSpec(entries, "tampering")
    if len(pool.improvement) < group_size:
        raise ConfigError(
            f"only {len(pool.improvement)} improvement candidates, need {group_size}"
        )
    chosen = rng.choice(len(pool.improvement), size=group_size, replace=False)
    entries = tuple(
        TargetEntry(pool.improvement[int(i)].instance, pool.improvement[int(i)].label,
                    pool.improvement[int(i)].label)
        for i in sorted(chosen.tolist())
    )
    return TargetSpec(entries, "improvement")


# ---------------------------------------------------------------------------
# Trial execution
# ---------------------------------------------------------------------------


@dataclass
class TrialResult:
    variant: str
    method: str
    trial: int
    seed: int
    status: str  # "ok" | "error"
    success: bool = False
    iterations_used: int = 0
    samples_added: int = 0
    sample_percent: float = 0.0
    clean_acc_before: float | None = None
    clean_acc_after: float | None = None
    total_duration_ms: float = 0.0
    mean_iter_duration_ms: float | None = None
    error: str = ""

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "method": self.method,
            "trial": self.trial,
            "seed": self.seed,
            "status": self.status,
            "success": self.success,
            "iterations_used": self.iterations_used,
            "samples_added": self.samples_added,
            "sample_percent": self.sample_percent,
            "clean_acc_before": self.clean_acc_before,
            "clean_acc_after": self.clean_acc_after,
            "total_duration_ms": self.total_duration_ms,
            "mean_iter_duration_ms": self.mean_iter_duration_ms,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TrialResult":
        return cls(**doc)


def _trial_inputs(plan: ExperimentPlan, seed: int):
    if plan.dataset is not None:
        # pin the class profiles to the trial seed so the eval draw shares
        # the training distribution
        cfg = plan.dataset
        if cfg.profile_seed is None:
            cfg = dc_replace(cfg, profile_seed=seed)
        d, pool = synth_generate(cfg, seed)
        d_eval, _ = synth_generate(cfg, seed + _EVAL_SEED_OFFSET)
        targets = sample_targets(pool, plan.task, plan.group_size, d.schema.num_classes, seed)
    else:
        d = load_dataset(plan.dataset_path)
        targets = load_targets(plan.targets_path, d.schema)
        d_eval = None
    return d, d_eval, targets


def run_trial(plan: ExperimentPlan, variant: Variant, trial: int) -> TrialResult:
    """One (variant, trial) cell; errors are captured, not raised."""
    seed = plan.seeds[trial]
    t0 = time.perf_counter()
    try:
        d, d_eval, targets = _trial_inputs(plan, seed)
        if variant.method == METHOD_ITERATIVE:
            report = run_teaching(
                d, targets, variant.teaching, seed=seed, d_eval=d_eval,
                keep_artifacts=False,
            )
        else:
            report = run_baseline(
                d, targets, variant.baseline, variant.teaching, seed=seed, d_eval=d_eval
            )
        total_ms = (time.perf_counter() - t0) * 1000.0
        return TrialResult(
            variant=variant.name,
            method=variant.method,
            trial=trial,
            seed=seed,
            status="ok",
            success=report.success,
            iterations_used=report.iterations_used,
            samples_added=report.samples_added,
            sample_percent=report.sample_percent,
            clean_acc_before=report.clean_acc_before,
            clean_acc_after=report.clean_acc_after,
            total_duration_ms=total_ms,
            mean_iter_duration_ms=report.mean_iteration_ms(),
        )
    except Exception as exc:  # cell failures must not abort the plan
        total_ms = (time.perf_counter() - t0) * 1000.0
        return TrialResult(
            variant=variant.name, method=variant.method, trial=trial, seed=seed,
            status="error", total_duration_ms=total_ms, error=f"{type(exc).__name__}: {exc}",
        )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def compute_csr(reports, cap: float) -> float:
    """Percent of trials that succeeded within the sample-percent cap."""
    rows = list(reports)
    if not rows:
        raise MetricError("CSR over an empty report list")
    hits = sum(1 for r in rows if r.success and r.sample_percent <= cap)
    return 100.0 * hits / len(rows)


@dataclass(frozen=True)
class EfficiencyRow:
    variant: str
    method: str
    trials: int
    successes: int
    csr: float
    mean_iterations: float | None   # over successful trials
    mean_time_min: float | None     # per-iteration wall time, all trials
    mean_sample_percent: float | None  # over successful trials

    def formatted(self) -> dict[str, str]:
        dash = "—"
        return {
            "variant": self.variant,
            "method": self.method,
            "trials": str(self.trials),
            "successes": str(self.successes),
            "csr": f"{self.csr:.2f}",
            "iterations": dash if self.mean_iterations is None else f"{self.mean_iterations:.1f}",
            "time_min": dash if self.mean_time_min is None else f"{self.mean_time_min:.1f}",
            "sample_percent": dash
            if self.mean_sample_percent is None
            else f"{self.mean_sample_percent:.2f}%",
        }


def efficiency_table(groups: dict[str, list], cap: float) -> list[EfficiencyRow]:
    """One row per variant: CSR plus the mean-cost columns.

    Iterations and sample percent average over successful trials only;
    per-iteration time averages over every recorded iteration of every
    trial in the group.
    """
    rows = []
    for variant in sorted(groups):
        members = groups[variant]
        if not members:
            raise MetricError(f"variant {variant!r} has no trials")
        ok = [m for m in members if m.success]
        iter_times = [
            m.mean_iter_duration_ms
            for m in members
            if m.mean_iter_duration_ms is not None and m.iterations_used > 0
        ]
        weights = [m.iterations_used for m in members
                   if m.mean_iter_duration_ms is not None and m.iterations_used > 0]
        if iter_times:
            total_ms = sum(t * w for t, w in zip(iter_times, weights))
            mean_time_min = (total_ms / sum(weights)) / 60_000.0
        else:
            mean_time_min = None
        rows.append(
            EfficiencyRow(
                variant=variant,
                method=members[0].method,
                trials=len(members),
                successes=len(ok),
                csr=compute_csr(members, cap),
                mean_iterations=float(np.mean([m.iterations_used for m in ok])) if ok else None,
                mean_time_min=mean_time_min,
                mean_sample_percent=float(np.mean([m.sample_percent for m in ok])) if ok else None,
            )
        )
    return rows


def csr_curve(members: list, cap: float) -> list[tuple[float, float]]:
    """Monotone CSR as a function of the allowed sample percent."""
    budgets = sorted({round(m.sample_percent, 6) for m in members if m.success})
    budgets = [b for b in budgets if b <= cap]
    points = [(0.0, compute_csr(members, 0.0))]
    for b in budgets:
        points.append((b, compute_csr(members, b)))
    points.append((cap, compute_csr(members, cap)))
    # drop consecutive duplicates while keeping endpoints
    out = [points[0]]
    for p in points[1:]:
        if p != out[-1]:
            out.append(p)
    return out


# ---------------------------------------------------------------------------
# Sweep execution and artifacts
# ---------------------------------------------------------------------------


TRIALS_HEADER = [
    "variant", "method", "trial", "seed", "status", "success", "iterations_used",
    "samples_added", "sample_percent", "clean_acc_before", "clean_acc_after",
    "total_duration_ms", "mean_iter_duration_ms", "error",
]


def _fmt_opt(value, spec: str) -> str:
    return "" if value is None else format(value, spec)


def write_trials_csv(results: list[TrialResult], path) -> None:
    rows = sorted(results, key=lambda r: (r.variant, r.trial))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIALS_HEADER)
        for r in rows:
            w.writerow([
                r.variant, r.method, r.trial, r.seed, r.status, int(r.success),
                r.iterations_used, r.samples_added, f"{r.sample_percent:.6f}",
                _fmt_opt(r.clean_acc_before, ".6f"), _fmt_opt(r.clean_acc_after, ".6f"),
                f"{r.total_duration_ms:.3f}", _fmt_opt(r.mean_iter_duration_ms, ".3f"),
                r.error,
            ])


def read_trials_csv(path) -> list[TrialResult]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRIALS_HEADER:
            raise PlanError(f"unexpected trials.csv header: {reader.fieldnames}")
        for row in reader:
            out.append(
                TrialResult(
                    variant=row["variant"],
                    method=row["method"],
                    trial=int(row["trial"]),
                    seed=int(row["seed"]),
                    status=row["status"],
                    success=bool(int(row["success"])),
                    iterations_used=int(row["iterations_used"]),
                    samples_added=int(row["samples_added"]),
                    sample_percent=float(row["sample_percent"]),
                    clean_acc_before=float(row["clean_acc_before"]) if row["clean_acc_before"] else None,
                    clean_acc_after=float(row["clean_acc_after"]) if row["clean_acc_after"] else None,
                    total_duration_ms=float(row["total_duration_ms"]),
                    mean_iter_duration_ms=float(row["mean_iter_duration_ms"]) if row["mean_iter_duration_ms"] else None,
                    error=row["error"],
                )
            )
    return out


def write_aggregate_csv(rows: list[EfficiencyRow], path) -> None:
    """Deterministic aggregate: timing columns live in report.json instead,
    so reruns at any worker count are byte-identical."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([
            "variant", "method", "trials", "successes", "csr_pct",
            "mean_iterations", "mean_sample_pct",
        ])
        for r in rows:
            w.writerow([
                r.variant, r.method, r.trials, r.successes, f"{r.csr:.2f}",
                _fmt_opt(r.mean_iterations, ".1f"), _fmt_opt(r.mean_sample_percent, ".2f"),
            ])


def write_report_json(plan_name: str, cap: float, rows: list[EfficiencyRow],
                      curves: dict[str, list[tuple[float, float]]], path) -> None:
    doc = {
        "plan": plan_name,
        "cap": cap,
        "variants": [
            {
                "variant": r.variant,
                "method": r.method,
                "trials": r.trials,
                "successes": r.successes,
                "csr_pct": r.csr,
                "mean_iterations": r.mean_iterations,
                "mean_time_min": r.mean_time_min,
                "mean_sample_pct": r.mean_sample_percent,
                "csr_curve": [[p, v] for p, v in curves[r.variant]],
            }
            for r in rows
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def write_csr_svg(variant: str, points: list[tuple[float, float]], cap: float, path) -> None:
    """Self-contained single-series step chart: sample percent vs CSR."""
    width, height = 640, 420
    left, right, top, bottom = 70, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def sx(p: float) -> float:
        return left + (p / cap) * pw if cap > 0 else left

    def sy(v: float) -> float:
        return top + (1.0 - v / 100.0) * ph

    # step curve: hold each CSR level until the next budget
    path_pts = []
    for i, (p, v) in enumerate(points):
        if i > 0:
            path_pts.append((sx(p), sy(points[i - 1][1])))
        path_pts.append((sx(p), sy(v)))
    poly = " ".join(f"{x:.2f},{y:.2f}" for x, y in path_pts)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" font-size="16" '
        f'font-family="sans-serif">change success rate: {variant}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for i in range(5):
        v = 100.0 * i / 4
        y = sy(v)
        lines.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        lines.append(
            f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{v:.0f}</text>'
        )
        p = cap * i / 4
        x = sx(p)
        lines.append(
            f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="black"/>'
        )
        lines.append(
            f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle" font-size="11" '
            f'font-family="sans-serif">{p:.2f}</text>'
        )
    lines.append(
        f'<text x="{left + pw / 2:.0f}" y="{height - 12}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">sample percent allowed (%)</text>'
    )
    lines.append(
        f'<text x="18" y="{top + ph / 2:.0f}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 18 {top + ph / 2:.0f})">CSR (%)</text>'
    )
    lines.append(f'<polyline points="{poly}" fill="none" stroke="#4477aa" stroke-width="2"/>')
    for p, v in points:
        lines.append(f'<circle cx="{sx(p):.2f}" cy="{sy(v):.2f}" r="3" fill="#4477aa"/>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def _cell_path(out_dir: Path, variant: str, trial: int) -> Path:
    safe = variant.replace("/", "_").replace(" ", "_")
    return out_dir / "cells" / f"{safe}__t{trial:04d}.json"


def _run_cell_to_file(args) -> str:
    plan, variant, trial, out_dir = args
    result = run_trial(plan, variant, trial)
    path = _cell_path(Path(out_dir), variant.name, trial)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(result.to_json(), fh)
    os.replace(tmp, path)
    return str(path)


def aggregate_from_trials(results: list[TrialResult], cap: float):
    groups: dict[str, list[TrialResult]] = {}
    for r in results:
        groups.setdefault(r.variant, []).append(r)
    rows = efficiency_table(groups, cap)
    curves = {v: csr_curve(groups[v], cap) for v in groups}
    return rows, curves


def write_all_artifacts(plan_name: str, cap: float, results: list[TrialResult], out_dir: Path) -> None:
    """trials.csv, aggregate.csv, report.json and one SVG per variant.

    Aggregation reads back trials.csv so that the sweep path and the
    re-aggregation path share one source of truth.
    """
    trials_path = out_dir / "trials.csv"
    write_trials_csv(results, trials_path)
    parsed = read_trials_csv(trials_path)
    rows, curves = aggregate_from_trials(parsed, cap)
    write_aggregate_csv(rows, out_dir / "aggregate.csv")
    write_report_json(plan_name, cap, rows, curves, out_dir / "report.json")
    for variant, points in curves.items():
        safe = variant.replace("/", "_").replace(" ", "_")
        write_csr_svg(variant, points, cap, out_dir / f"csr_curve_{safe}.svg")


def run_plan(plan: ExperimentPlan, out_dir, workers: int | None = None) -> list[TrialResult]:
    """Execute every (variant x trial) cell and write all artifacts.

    Completed cells found on disk are not recomputed. Worker count comes
    from the argument, the DISCTEACH_WORKERS variable, or defaults to 1;
    it affects wall time only, never the results.
    """
    out_dir = Path(out_dir)
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers < 1:
        raise ConfigError("workers must be >= 1")

    pending = []
    for variant in plan.variants:
        for trial in range(plan.trials):
            if not _cell_path(out_dir, variant.name, trial).exists():
                pending.append((plan, variant, trial, str(out_dir)))

    if pending:
        if workers == 1:
            for args in pending:
                _run_cell_to_file(args)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                list(pool.map(_run_cell_to_file, pending))

    results = []
    for variant in plan.variants:
        for trial in range(plan.trials):
            path = _cell_path(out_dir, variant.name, trial)
            with open(path, "r", encoding="utf-8") as fh:
                results.append(TrialResult.from_json(json.load(fh)))

    write_all_artifacts(plan.name, plan.cap, results, out_dir)
    return results


# ---------------------------------------------------------------------------
# Plan files (TOML)
# ---------------------------------------------------------------------------


def _load_toml(path) -> dict:
    try:
        import tomllib as toml_mod  # py311+
    except ModuleNotFoundError:
        import tomli as toml_mod
    with open(path, "rb") as fh:
        try:
            return toml_mod.load(fh)
        except toml_mod.TOMLDecodeError as exc:
            raise PlanError(f"invalid plan file: {exc}") from exc


def _synth_from_table(tbl: dict) -> SynthConfig:
    known = {
        "num_features", "arity", "num_classes", "samples_per_class", "separation",
        "noise_rate", "p_high", "p_low", "encoding_mode", "tamper_candidates",
        "tamper_lean", "improve_targets", "confusion_train", "confusion_lean",
        "confusion_true_class", "confusion_decoy_class",
    }
    unknown = set(tbl) - known
    if unknown:
        raise PlanError(f"unknown [dataset] keys: {sorted(unknown)}")
    kwargs = dict(tbl)
    if "samples_per_class" in kwargs and isinstance(kwargs["samples_per_class"], list):
        kwargs["samples_per_class"] = tuple(kwargs["samples_per_class"])
    if "encoding_mode" in kwargs:
        kwargs["encoding_mode"] = EncodingMode(kwargs["encoding_mode"])
    try:
        return SynthConfig(**kwargs)
    except (TypeError, ConfigError) as exc:
        raise PlanError(f"bad [dataset] table: {exc}") from exc


def _train_from_table(tbl: dict) -> tuple[TrainConfig, Architecture]:
    arch = Architecture(
        kind=tbl.get("arch", "softmax"),
        hidden=int(tbl.get("hidden", 32)),
        activation=tbl.get("activation", "tanh"),
    )
    cfg = TrainConfig(
        epochs=int(tbl.get("epochs", 100)),
        batch_size=int(tbl.get("batch_size", 32)),
        learning_rate=float(tbl.get("learning_rate", 0.1)),
        l2_penalty=float(tbl.get("l2_penalty", 1e-4)),
        init_scale=float(tbl.get("init_scale", 0.01)),
        shuffle_seed=int(tbl.get("shuffle_seed", 0)),
        init_seed=int(tbl.get("init_seed", 0)),
    )
    return cfg, arch


def _teaching_from_tables(defaults: dict, overrides: dict, train_cfg: TrainConfig,
                          arch: Architecture) -> TeachingConfig:
    merged = dict(defaults)
    merged.update(overrides)
    score = ScoreSpec(
        kind=merged.get("score", "dist"),
        lam=float(merged.get("lam", 0.5)),
        dist_space=merged.get("dist_space", "probs"),
    )
    greedy = GreedyConfig(
        budget=int(merged.get("budget", 8)),
        candidate_size=int(merged.get("candidate_size", 4)),
        allow_empty_subset=bool(merged.get("allow_empty_subset", True)),
        max_subset_size=merged.get("max_subset_size"),
        feasibility=merged.get("feasibility", "any"),
        gradient_source=merged.get("gradient_source", "loss"),
    )
    selection = SelectionPolicy(
        k=int(merged.get("k", 10)),
        class_filter=merged.get("class_filter"),
        allow_reselect_perturbed=bool(merged.get("allow_reselect_perturbed", True)),
        exclude_exact_target=bool(merged.get("exclude_exact_target", True)),
    )
    try:
        return TeachingConfig(
            selection=selection,
            greedy=greedy,
            score=score,
            max_iterations=int(merged.get("max_iterations", 30)),
            combine=merged.get("combine", "addition"),
            train=train_cfg,
            success_rule=merged.get("success_rule", "last5_mean"),
            arch=arch,
        )
    except ConfigError as exc:
        raise PlanError(f"bad teaching settings: {exc}") from exc


_VARIANT_KEYS = {
    "name", "method", "score", "lam", "dist_space", "k", "budget", "candidate_size",
    "allow_empty_subset", "max_subset_size", "feasibility", "gradient_source",
    "class_filter", "allow_reselect_perturbed", "exclude_exact_target",
    "max_iterations", "combine", "success_rule", "sample_budget", "flip_budget",
    "beta", "pgd_steps", "pgd_lr",
}


def load_plan(path, seed_override: int | None = None) -> ExperimentPlan:
    """Parse a TOML plan document (grammar documented in the README)."""
    doc = _load_toml(path)
    for key in ("name", "trials"):
        if key not in doc:
            raise PlanError(f"plan is missing the {key!r} key")
    trials = int(doc["trials"])
    if "seeds" in doc:
        seeds = tuple(int(s) for s in doc["seeds"])
    else:
        base = int(doc.get("seed_base", 0))
        seeds = tuple(base + i for i in range(trials))
    if seed_override is not None:
        seeds = tuple(seed_override + i for i in range(trials))

    dataset = None
    dataset_path = doc.get("dataset_path")
    targets_path = doc.get("targets_path")
    if dataset_path is None:
        if "dataset" not in doc:
            raise PlanError("plan needs a [dataset] table or a dataset_path")
        dataset = _synth_from_table(doc["dataset"])
    train_cfg, arch = _train_from_table(doc.get("student", {}))
    defaults = doc.get("defaults", {})

    raw_variants = doc.get("variant", [])
    if not raw_variants:
        raise PlanError("plan needs at least one [[variant]] table")
    variants = []
    for i, tbl in enumerate(raw_variants):
        unknown = set(tbl) - _VARIANT_KEYS
        if unknown:
            raise PlanError(f"variant {i}: unknown keys {sorted(unknown)}")
        if "name" not in tbl:
            raise PlanError(f"variant {i} is missing a name")
        method = tbl.get("method", METHOD_ITERATIVE)
        teaching = _teaching_from_tables(defaults, tbl, train_cfg, arch)
        baseline = None
        if method != METHOD_ITERATIVE:
            merged = dict(defaults)
            merged.update(tbl)
            try:
                baseline = BaselineConfig(
                    method=method,
                    sample_budget=int(merged.get("sample_budget", teaching.selection.k)),
                    flip_budget=int(merged.get("flip_budget", teaching.greedy.budget)),
                    beta=float(merged.get("beta", 0.1)),
                    pgd_steps=int(merged.get("pgd_steps", 200)),
                    pgd_lr=float(merged.get("pgd_lr", 0.05)),
                )
            except ConfigError as exc:
                raise PlanError(f"variant {tbl['name']!r}: {exc}") from exc
        variants.append(Variant(tbl["name"], method, teaching, baseline))

    try:
        return ExperimentPlan(
            name=str(doc["name"]),
            dataset=dataset,
            dataset_path=dataset_path,
            trials=trials,
            seeds=seeds,
            task=doc.get("task", "tampering"),
            group_size=int(doc.get("group_size", 1)),
            cap=float(doc.get("cap", 100.0)),
            variants=tuple(variants),
            targets_path=targets_path,
        )
    except PlanError:
        raise
    except ConfigError as exc:
        raise PlanError(str(exc)) from exc
