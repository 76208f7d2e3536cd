"""Command-line entry points.

Subcommands: generate-data, train, teach, baseline, sweep, report.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .baselines import BaselineConfig, run_baseline
from .data import (
    EncodingMode,
    SynthConfig,
    export_csv,
    load_dataset,
    load_targets,
    save_candidates,
    save_dataset,
    synth_generate,
)
from .errors import DiscTeachError
from .greedy import GreedyConfig, dump_traces_jsonl
from .harness import load_plan, run_plan, read_trials_csv, write_all_artifacts
from .scoring import ScoreSpec
from .selection import SelectionPolicy
from .student import Architecture, TrainConfig, accuracy, save_model, train
from .teaching import TeachingConfig, run_teaching, write_report_csv, write_report_json


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--init-scale", type=float, default=0.01)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--arch", choices=["softmax", "mlp1h"], default="softmax")
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--activation", choices=["tanh", "relu"], default="tanh")


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        l2_penalty=args.l2,
        init_scale=args.init_scale,
        init_seed=args.init_seed,
        shuffle_seed=args.shuffle_seed,
    )


def _arch(args) -> Architecture:
    return Architecture(args.arch, args.hidden, args.activation)


def _add_teach_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=10, help="base samples per iteration")
    p.add_argument("--budget", type=int, default=8, help="bit-flip budget per sample")
    p.add_argument("--candidate-size", type=int, default=4, help="gradient-filtered flips per step")
    p.add_argument("--max-iterations", type=int, default=30)
    p.add_argument("--score", choices=["dist", "align"], default="dist")
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--dist-space", choices=["probs", "logits"], default="probs")
    p.add_argument("--combine", choices=["addition", "replacement"], default="addition")
    p.add_argument("--success-rule", choices=["argmax_now", "last5_mean"], default="last5_mean")
    p.add_argument("--class-filter", choices=["target_class", "any"], default=None)
    p.add_argument("--feasibility", choices=["any", "one_hot_subs"], default="any")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--eval-data", type=Path, default=None)


def _teaching_cfg(args) -> TeachingConfig:
    return TeachingConfig(
        selection=SelectionPolicy(k=args.k, class_filter=args.class_filter),
        greedy=GreedyConfig(
            budget=args.budget, candidate_size=args.candidate_size,
            feasibility=args.feasibility,
        ),
        score=ScoreSpec(kind=args.score, lam=args.lam, dist_space=args.dist_space),
        max_iterations=args.max_iterations,
        combine=args.combine,
        train=_train_cfg(args),
        success_rule=args.success_rule,
        arch=_arch(args),
    )


def cmd_generate_data(args) -> int:
    cfg = SynthConfig(
        num_features=args.m,
        arity=args.n,
        num_classes=args.classes,
        samples_per_class=args.per_class,
        separation=args.separation,
        noise_rate=args.noise,
        encoding_mode=EncodingMode(args.mode),
        tamper_candidates=args.tamper_candidates,
        tamper_lean=args.tamper_lean,
        improve_targets=args.improve_targets,
        confusion_train=args.confusion_train,
        confusion_lean=args.confusion_lean,
    )
    dataset, pool = synth_generate(cfg, args.seed)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} items to {args.out}")
    if args.candidates_out:
        save_candidates(pool, args.candidates_out)
        print(
            f"wrote {len(pool.tampering)} tampering / {len(pool.improvement)} "
            f"improvement candidates to {args.candidates_out}"
        )
    if args.csv_out:
        export_csv(dataset, args.csv_out)
        print(f"wrote CSV export to {args.csv_out}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    theta, _ = train(dataset, _train_cfg(args), arch=_arch(args))
    save_model(theta, args.out)
    line = f"trained {theta.arch.kind} on {len(dataset)} items -> {args.out}"
    if args.eval_data:
        line += f" (eval acc {accuracy(theta, load_dataset(args.eval_data)):.4f})"
    print(line)
    return 0


def cmd_teach(args) -> int:
    dataset = load_dataset(args.data)
    targets = load_targets(args.targets, dataset.schema)
    d_eval = load_dataset(args.eval_data) if args.eval_data else None
    report = run_teaching(
        dataset, targets, _teaching_cfg(args), seed=args.seed, d_eval=d_eval
    )
    _emit_report(report, args)
    return 0 if report.success else 3


def _emit_report(report, args) -> None:
    print(
        f"method={report.method} success={report.success} "
        f"iterations={report.iterations_used} added={report.samples_added} "
        f"sample_percent={report.sample_percent:.2f}"
    )
    if args.report_out:
        write_report_json(report, args.report_out)
    if args.csv_out:
        write_report_csv(report, args.csv_out)
    if getattr(args, "dataset_out", None) and report.artifacts is not None:
        save_dataset(report.artifacts.final_dataset, args.dataset_out)
    if getattr(args, "traces_out", None) and report.artifacts is not None:
        flattened = [
            tr
            for per_iter in report.artifacts.greedy_traces
            for traces in per_iter.values()
            for tr in traces
        ]
        dump_traces_jsonl(flattened, args.traces_out)


def cmd_baseline(args) -> int:
    dataset = load_dataset(args.data)
    targets = load_targets(args.targets, dataset.schema)
    d_eval = load_dataset(args.eval_data) if args.eval_data else None
    cfg = BaselineConfig(
        method=args.method.replace("-", "_"),
        sample_budget=args.sample_budget,
        flip_budget=args.flip_budget,
        beta=args.beta,
        pgd_steps=args.pgd_steps,
        pgd_lr=args.pgd_lr,
    )
    report = run_baseline(
        dataset, targets, cfg, _teaching_cfg(args), seed=args.seed, d_eval=d_eval
    )
    _emit_report(report, args)
    return 0 if report.success else 3


def cmd_sweep(args) -> int:
    plan = load_plan(args.plan, seed_override=args.seed)
    results = run_plan(plan, args.out, workers=args.workers)
    errors = sum(1 for r in results if r.status != "ok")
    print(f"completed {len(results)} cells ({errors} errors) -> {args.out}")
    with open(Path(args.out) / "report.json", "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for row in doc["variants"]:
        print(
            f"  {row['variant']}: CSR {row['csr_pct']:.1f}% "
            f"({row['successes']}/{row['trials']} trials)"
        )
    return 0


def cmd_report(args) -> int:
    results = read_trials_csv(args.trials)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_all_artifacts(args.name, args.cap, results, out)
    print(f"re-aggregated {len(results)} trials -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="discteach",
        description="Discrete machine teaching: steer a classifier by perturbing training bits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="emit a seeded synthetic dataset")
    p.add_argument("--m", type=int, required=True, help="number of categorical features")
    p.add_argument("--n", type=int, required=True, help="values per feature")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--mode", choices=["multi_hot", "one_hot"], default="multi_hot")
    p.add_argument("--tamper-candidates", type=int, default=8)
    p.add_argument("--tamper-lean", type=float, default=0.3)
    p.add_argument("--improve-targets", type=int, default=0)
    p.add_argument("--confusion-train", type=int, default=0)
    p.add_argument("--confusion-lean", type=float, default=0.65)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--candidates-out", type=Path, default=None)
    p.add_argument("--csv-out", type=Path, default=None)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a student model on a dataset file")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--eval-data", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("teach", help="run the iterative teaching loop")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--targets", type=Path, required=True)
    p.add_argument("--report-out", type=Path, default=None)
    p.add_argument("--csv-out", type=Path, default=None)
    p.add_argument("--dataset-out", type=Path, default=None,
                   help="write the final combined training set")
    p.add_argument("--traces-out", type=Path, default=None,
                   help="write greedy step traces as JSON lines")
    _add_train_args(p)
    _add_teach_args(p)
    p.set_defaults(func=cmd_teach)

    p = sub.add_parser("baseline", help="run a comparison method")
    p.add_argument("--method", choices=["at-once", "feature-collision", "gradient-matching"],
                   required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--targets", type=Path, required=True)
    p.add_argument("--sample-budget", type=int, required=True)
    p.add_argument("--flip-budget", type=int, default=8)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--pgd-steps", type=int, default=200)
    p.add_argument("--pgd-lr", type=float, default=0.05)
    p.add_argument("--report-out", type=Path, default=None)
    p.add_argument("--csv-out", type=Path, default=None)
    _add_train_args(p)
    _add_teach_args(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", help="execute an experiment plan")
    p.add_argument("--plan", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=None,
                   help=f"parallel cells (default: ${'{'}DISCTEACH_WORKERS{'}'} or 1)")
    p.add_argument("--seed", type=int, default=None, help="override the plan's seed base")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-aggregate artifacts from a trials.csv")
    p.add_argument("--trials", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--cap", type=float, required=True, help="sample-percent cap for CSR")
    p.add_argument("--name", default="report", help="plan name for report.json")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DiscTeachError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
