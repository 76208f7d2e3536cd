"""Gradient-guided greedy perturbation of single base samples.

Per base sample: take the input gradient at the current candidate, keep the
q positions with the largest magnitudes, score every small subset of those
flips exactly, apply the best one, and repeat until the flip budget is
spent. Candidate "units" are single flips in the default mode and
(delete, insert) same-row pairs when the schema is strict one-hot.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .data import (
    DELETE,
    INSERT,
    Dataset,
    EMPTY_FLIPS,
    Flip,
    FlipList,
    Instance,
    LabeledInstance,
    Provenance,
    TargetSpec,
    diff_flips,
    modify,
)
from .errors import ConfigError
from .scoring import CandidateScorer, ScoreSpec
from .student import ModelParams, grad_input, grad_input_logit

FEAS_ANY = "any"
FEAS_ONE_HOT = "one_hot_subs"

GRAD_LOSS = "loss"          # d cross-entropy(x, base label) / d input
GRAD_TARGET_LOGIT = "target_logit"  # d logit[target class] / d input

CandidateUnit = tuple[Flip, ...]  # one flip, or a (delete, insert) pair


@dataclass(frozen=True)
class GreedyConfig:
    budget: int = 8          # max bit flips per sample (a substitution costs 2)
    candidate_size: int = 4  # q: gradient-filtered positions per step
    allow_empty_subset: bool = True
    max_subset_size: int | None = None  # default min(candidate_size, 4)
    feasibility: str = FEAS_ANY
    allow_full_subset: bool = True
    gradient_source: str = GRAD_LOSS

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.candidate_size < 1:
            raise ConfigError("candidate_size must be >= 1")
        if self.feasibility not in (FEAS_ANY, FEAS_ONE_HOT):
            raise ConfigError(f"unknown feasibility {self.feasibility!r}")
        if self.gradient_source not in (GRAD_LOSS, GRAD_TARGET_LOGIT):
            raise ConfigError(f"unknown gradient source {self.gradient_source!r}")
        if self.max_subset_size is not None:
            if not 1 <= self.max_subset_size <= self.candidate_size:
                raise ConfigError("max_subset_size must lie in [1, candidate_size]")

    @property
    def subset_cap(self) -> int:
        if self.max_subset_size is not None:
            return self.max_subset_size
        return min(self.candidate_size, 4)


@dataclass(frozen=True)
class GreedyStepTrace:
    step: int
    grad: np.ndarray               # input-gradient snapshot, M x N
    candidates: tuple[CandidateUnit, ...]
    chosen: FlipList
    score_before: float
    score_after: float

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "grad": self.grad.tolist(),
            "candidates": [[list(f) for f in unit] for unit in self.candidates],
            "chosen": self.chosen.to_json(),
            "score_before": self.score_before,
            "score_after": self.score_after,
        }


def dump_traces_jsonl(traces, path) -> None:
    """One JSON record per greedy step."""
    with open(path, "w", encoding="utf-8") as fh:
        for tr in traces:
            fh.write(json.dumps(tr.to_json()))
            fh.write("\n")


def top_q_candidates(
    r: np.ndarray, x_hat: Instance, q: int, feasibility: str = FEAS_ANY
) -> list[CandidateUnit]:
    """The q candidate units with the largest gradient magnitudes.

    Any-flip mode ranks single positions by |r[m, n]|; one-hot mode ranks
    same-row substitution pairs by |r| at the deleted plus inserted bit.
    Ties break in (m, n) lexicographic order.
    """
    mag = np.abs(np.asarray(r, dtype=np.float64))
    m_count, n_count = x_hat.schema.shape
    if mag.shape != (m_count, n_count):
        raise ConfigError(f"gradient shape {mag.shape} does not match schema")
    units: list[tuple[float, tuple[int, int], CandidateUnit]] = []
    if feasibility == FEAS_ANY:
        for m in range(m_count):
            for n in range(n_count):
                kind = DELETE if x_hat.bits[m, n] else INSERT
                units.append((-mag[m, n], (m, n), (Flip(m, n, kind),)))
    else:
        for m in range(m_count):
            active = np.flatnonzero(x_hat.bits[m])
            if len(active) != 1:
                continue  # substitution undefined without a unique active bit
            n_del = int(active[0])
            for n_ins in range(n_count):
                if n_ins == n_del:
                    continue
                score = mag[m, n_del] + mag[m, n_ins]
                unit = (Flip(m, n_del, DELETE), Flip(m, n_ins, INSERT))
                units.append((-score, (m, n_ins), unit))
    units.sort(key=lambda u: (u[0], u[1]))
    return [u[2] for u in units[:q]]


def _unit_cost(unit: CandidateUnit) -> int:
    return len(unit)


def _subset_key(flips: tuple[Flip, ...]) -> tuple:
    return tuple(sorted((f.feature, f.value) for f in flips))


def best_subset(
    theta: ModelParams,
    x_hat: Instance,
    x_clean: Instance,
    targets: TargetSpec,
    candidates: list[CandidateUnit],
    score: ScoreSpec,
    cfg: GreedyConfig,
    budget_left: int | None = None,
    scorer: CandidateScorer | None = None,
    y_hat: int | None = None,
) -> FlipList:
    """Exhaustively score subsets of the candidate units; return the best.

    Subsets up to cfg.subset_cap units (the empty one included when
    allowed) are evaluated on the modified candidate. Ties break toward
    fewer flips, then lexicographically smaller positions.
    """
    if scorer is None:
        scorer = CandidateScorer(theta, targets, x_clean, y_hat if y_hat is not None else 0, score)
    cap = min(cfg.subset_cap, len(candidates))
    best: tuple[float, int, tuple, FlipList] | None = None
    for size in range(0, cap + 1):
        if size == 0 and not cfg.allow_empty_subset:
            continue
        if size == len(candidates) and size > 0 and not cfg.allow_full_subset:
            continue
        for combo in itertools.combinations(range(len(candidates)), size):
            flips = tuple(f for i in combo for f in candidates[i])
            if budget_left is not None and len(flips) > budget_left:
                continue
            if len({(f.feature, f.value) for f in flips}) != len(flips):
                continue  # overlapping units cannot combine
            bits = np.array(x_hat.bits, dtype=np.uint8)
            for f in flips:
                bits[f.feature, f.value] ^= 1
            value = scorer(bits)
            key = (value, len(flips), _subset_key(flips))
            if best is None or key < best[:3]:
                best = (value, len(flips), _subset_key(flips), FlipList(flips))
    if best is None:
        return EMPTY_FLIPS
    return best[3]


def _input_gradient(
    theta: ModelParams, x_hat: Instance, y_base: int, targets: TargetSpec, source: str
) -> np.ndarray:
    if source == GRAD_LOSS:
        return grad_input(theta, x_hat, y_base)
    g = np.zeros(x_hat.schema.shape, dtype=np.float64)
    for t in targets.targets:
        g += grad_input_logit(theta, x_hat, t.target_label)
    return g / len(targets)


def perturb_instance(
    theta: ModelParams,
    item: LabeledInstance,
    targets: TargetSpec,
    score: ScoreSpec,
    cfg: GreedyConfig,
) -> tuple[Instance, list[GreedyStepTrace]]:
    """Run the budgeted greedy flip search on one base sample.

    Executes max(1, budget // candidate_size) steps, re-deriving the input
    gradient each step; stops early after the empty subset wins twice in a
    row. The returned instance differs from the origin by at most `budget`
    bits.
    """
    x_clean = item.instance
    x_hat = x_clean
    scorer = CandidateScorer(theta, targets, x_clean, item.label, score)
    steps = max(1, cfg.budget // cfg.candidate_size)
    budget_left = cfg.budget
    traces: list[GreedyStepTrace] = []
    empty_strikes = 0

    for p in range(steps):
        r = _input_gradient(theta, x_hat, item.label, targets, cfg.gradient_source)
        candidates = top_q_candidates(r, x_hat, cfg.candidate_size, cfg.feasibility)
        score_before = scorer(np.asarray(x_hat.bits))
        if not candidates:
            break
        chosen = best_subset(
            theta, x_hat, x_clean, targets, candidates, score, cfg,
            budget_left=budget_left, scorer=scorer,
        )
        x_next = modify(x_hat, chosen) if len(chosen) else x_hat
        score_after = scorer(np.asarray(x_next.bits))
        traces.append(
            GreedyStepTrace(p, r, tuple(candidates), chosen, score_before, score_after)
        )
        x_hat = x_next
        budget_left -= len(chosen)
        if len(chosen) == 0:
            empty_strikes += 1
            if empty_strikes >= 2:
                break
        else:
            empty_strikes = 0
        if budget_left <= 0:
            break

    return x_hat, traces


def perturb_dataset(
    theta: ModelParams,
    d_base: Dataset,
    targets: TargetSpec,
    score: ScoreSpec,
    cfg: GreedyConfig,
) -> tuple[Dataset, dict[int, list[GreedyStepTrace]]]:
    """Perturb every base item; outputs keep base labels and record the
    net flip list back to their origin id."""
    if len(d_base) == 0:
        raise ConfigError("base dataset is empty")
    out: list[LabeledInstance] = []
    traces: dict[int, list[GreedyStepTrace]] = {}
    for i, item in enumerate(d_base.items):
        x_hat, tr = perturb_instance(theta, item, targets, score, cfg)
        flips = diff_flips(item.instance, x_hat)
        out.append(
            LabeledInstance(
                i, x_hat, item.label, Provenance.perturbed(item.id, flips)
            )
        )
        traces[item.id] = tr
    return Dataset(d_base.schema, tuple(out)), traces
