"""Comparison methods: single-shot teaching, feature collision and
gradient matching, each adapted to binary inputs by optimizing a [0, 1]
relaxation and rounding back onto the flip budget.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, Instance, LabeledInstance, Provenance, TargetSpec, diff_flips
from .errors import ConfigError, DegenerateObjectiveError, DivergenceError
from .scoring import mean_target_grad
from .selection import select_base
from .student import ModelParams, grad_theta, train, accuracy
from .teaching import (
    COMBINE_ADDITION,
    IterationRecord,
    RunArtifacts,
    TeachingConfig,
    TeachingReport,
    check_success,
    combine,
    predicted_labels,
    run_teaching,
    _derived_train_cfg,
)

METHOD_AT_ONCE = "at_once"
METHOD_FEATURE_COLLISION = "feature_collision"
METHOD_GRADIENT_MATCHING = "gradient_matching"

_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class BaselineConfig:
    method: str
    sample_budget: int
    flip_budget: int = 8
    beta: float = 0.1          # feature-collision stay-close penalty
    pgd_steps: int = 200
    pgd_lr: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.method not in (METHOD_AT_ONCE, METHOD_FEATURE_COLLISION, METHOD_GRADIENT_MATCHING):
            raise ConfigError(f"unknown baseline method {self.method!r}")
        if self.sample_budget < 0:
            raise ConfigError("sample_budget must be >= 0")
        if self.flip_budget < 0:
            raise ConfigError("flip_budget must be >= 0")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.pgd_steps < 1:
            raise ConfigError("pgd_steps must be >= 1")
        if self.pgd_lr <= 0:
            raise ConfigError("pgd_lr must be positive")


@dataclass
class RelaxedInstance:
    """A base sample relaxed to [0, 1] values during continuous crafting."""

    values: np.ndarray  # M x N float64 in [0, 1]
    origin_id: int

    def clamp(self) -> None:
        np.clip(self.values, 0.0, 1.0, out=self.values)


def round_to_budget(relaxed: RelaxedInstance, origin: Instance, budget: int) -> Instance:
    """Snap a relaxed matrix back to bits, spending at most `budget` flips.

    Positions are ranked by drift |relaxed - origin| descending (ties by
    position); a position flips only if its relaxed value crossed 0.5 away
    from the origin bit. Strict one-hot schemas flip whole substitution
    pairs instead: a row's active value moves to the row argmax when that
    argmax crossed 0.5, costing two flips.
    """
    v = np.asarray(relaxed.values, dtype=np.float64)
    if v.shape != origin.schema.shape:
        raise ConfigError(f"relaxed shape {v.shape} does not match schema")
    bits = np.array(origin.bits, dtype=np.uint8)
    if origin.schema.strict_one_hot:
        rows = []
        for m in range(origin.schema.num_features):
            n0 = int(np.flatnonzero(origin.bits[m])[0])
            n1 = int(np.argmax(v[m]))
            if n1 == n0 or not (v[m, n1] > 0.5 and v[m, n1] > v[m, n0]):
                continue
            drift = abs(v[m, n1] - 0.0) + abs(v[m, n0] - 1.0)
            rows.append((-drift, m, n0, n1))
        rows.sort()
        spent = 0
        for _, m, n0, n1 in rows:
            if spent + 2 > budget:
                break
            bits[m, n0] = 0
            bits[m, n1] = 1
            spent += 2
        return Instance(origin.schema, bits)
    drift = np.abs(v - origin.bits.astype(np.float64))
    order = sorted(
        ((m, n) for m in range(v.shape[0]) for n in range(v.shape[1])),
        key=lambda p: (-drift[p], p),
    )
    spent = 0
    for m, n in order:
        if spent >= budget:
            break
        if origin.bits[m, n] == 0 and v[m, n] > 0.5:
            bits[m, n] = 1
            spent += 1
        elif origin.bits[m, n] == 1 and v[m, n] < 0.5:
            bits[m, n] = 0
            spent += 1
    return Instance(origin.schema, bits)


# ---------------------------------------------------------------------------
# Feature collision
# ---------------------------------------------------------------------------


def _embed(theta: ModelParams, flat: np.ndarray) -> np.ndarray:
    """The model's representation: logits for softmax, hidden for the MLP."""
    if theta.arch.kind == "softmax":
        w, b = theta.unpack()
        return flat @ w + b
    w1, b1, _, _ = theta.unpack()
    pre = flat @ w1 + b1
    return np.tanh(pre) if theta.arch.activation == "tanh" else np.maximum(pre, 0.0)


def _embed_grad(theta: ModelParams, flat: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """d ||embed(v) - target||^2 / dv given resid = embed(v) - target."""
    if theta.arch.kind == "softmax":
        w, _ = theta.unpack()
        return 2.0 * (w @ resid)
    w1, b1, _, _ = theta.unpack()
    pre = flat @ w1 + b1
    if theta.arch.activation == "tanh":
        h = np.tanh(pre)
        dact = 1.0 - h * h
    else:
        dact = (pre > 0).astype(np.float64)
    return 2.0 * (w1 @ (dact * resid))


def feature_collision_descend(
    theta: ModelParams,
    base: LabeledInstance,
    target_embed: np.ndarray,
    cfg: BaselineConfig,
) -> tuple[RelaxedInstance, list[float]]:
    """Projected gradient descent moving a base toward a target embedding.

    Returns the relaxed result plus the per-step objective values
    (evaluated before each update, with a final post-update entry).
    """
    shape = base.instance.schema.shape
    base_flat = base.instance.flat_float()
    relaxed = RelaxedInstance(base.instance.bits.astype(np.float64), base.id)
    objectives: list[float] = []
    for step in range(cfg.pgd_steps + 1):
        flat = relaxed.values.reshape(-1)
        resid = _embed(theta, flat) - target_embed
        diff = flat - base_flat
        obj = float(resid @ resid + cfg.beta * (diff @ diff))
        if not np.isfinite(obj):
            raise DivergenceError(step)
        objectives.append(obj)
        if step == cfg.pgd_steps:
            break
        g = _embed_grad(theta, flat, resid) + 2.0 * cfg.beta * diff
        relaxed.values = (flat - cfg.pgd_lr * g).reshape(shape)
        relaxed.clamp()
    return relaxed, objectives


def feature_collision_craft(
    theta: ModelParams, base: LabeledInstance, target: Instance, cfg: BaselineConfig
) -> Instance:
    """Craft one poison: collide with the target's embedding, then round."""
    relaxed, _ = feature_collision_descend(theta, base, _embed(theta, target.flat_float()), cfg)
    return round_to_budget(relaxed, base.instance, cfg.flip_budget)


# ---------------------------------------------------------------------------
# Gradient matching
# ---------------------------------------------------------------------------


def _gm_objective(theta: ModelParams, flats: list[np.ndarray], labels: list[int],
                  target_grad: np.ndarray) -> tuple[float, np.ndarray]:
    """1 - cos(sum of poison gradients, target gradient); returns (J, G)."""
    g = np.zeros_like(theta.weights)
    for flat, y in zip(flats, labels):
        g += grad_theta(theta, flat, y)
    ng = float(np.linalg.norm(g))
    nt = float(np.linalg.norm(target_grad))
    if ng < _NORM_FLOOR:
        return 1.0, g
    return 1.0 - float(g @ target_grad) / (ng * nt), g


def _gm_grads(
    theta: ModelParams,
    flats: list[np.ndarray],
    labels: list[int],
    target_grad: np.ndarray,
) -> tuple[float, list[np.ndarray]]:
    """Objective and its gradient w.r.t. every relaxed poison."""
    obj, g = _gm_objective(theta, flats, labels, target_grad)
    ng = float(np.linalg.norm(g))
    nt = float(np.linalg.norm(target_grad))
    if ng < _NORM_FLOOR:
        # flat spot: no usable direction
        return obj, [np.zeros_like(f) for f in flats]
    cos = float(g @ target_grad) / (ng * nt)
    u = target_grad / (ng * nt) - cos * g / (ng * ng)  # d cos / d G
    if theta.arch.kind == "softmax":
        d, c = theta.input_dim, theta.num_classes
        u_w = u[: d * c].reshape(d, c)
        u_b = u[d * c :]
        w, b = theta.unpack()
        out = []
        for flat, y in zip(flats, labels):
            z = flat @ w + b
            e = np.exp(z - z.max())
            p = e / e.sum()
            delta = p.copy()
            delta[y] -= 1.0
            y_term = u_w.T @ flat + u_b
            s_y = p * y_term - p * float(p @ y_term)
            out.append(-(u_w @ delta + w @ s_y))
        return obj, out
    # MLP path: central differences on the relaxed inputs
    out = []
    eps = 1e-5
    for i, flat in enumerate(flats):
        gi = np.zeros_like(flat)
        for j in range(flat.shape[0]):
            fp = [f.copy() for f in flats]
            fm = [f.copy() for f in flats]
            fp[i][j] += eps
            fm[i][j] -= eps
            op, _ = _gm_objective(theta, fp, labels, target_grad)
            om, _ = _gm_objective(theta, fm, labels, target_grad)
            gi[j] = (op - om) / (2 * eps)
        out.append(gi)
    return obj, out


def gradient_matching_craft(
    theta: ModelParams, bases: Dataset, targets: TargetSpec, cfg: BaselineConfig
) -> Dataset:
    """Jointly steer all relaxed bases so their summed parameter gradient
    points along the target gradient, then round each to the budget."""
    d_pert, _ = gradient_matching_descend(theta, bases, targets, cfg)
    return d_pert


def gradient_matching_descend(
    theta: ModelParams, bases: Dataset, targets: TargetSpec, cfg: BaselineConfig
) -> tuple[Dataset, list[float]]:
    if len(bases) == 0:
        raise ConfigError("gradient matching needs at least one base")
    target_grad = mean_target_grad(theta, targets)
    if float(np.linalg.norm(target_grad)) < _NORM_FLOOR:
        raise DegenerateObjectiveError("target gradient norm is (near) zero")
    shape = bases.schema.shape
    flats = [it.instance.flat_float() for it in bases.items]
    labels = [it.label for it in bases.items]
    objectives: list[float] = []
    for step in range(cfg.pgd_steps + 1):
        obj, grads = _gm_grads(theta, flats, labels, target_grad)
        if not np.isfinite(obj):
            raise DivergenceError(step)
        objectives.append(obj)
        if step == cfg.pgd_steps:
            break
        flats = [
            np.clip(f - cfg.pgd_lr * g, 0.0, 1.0) for f, g in zip(flats, grads)
        ]
    out = []
    for i, (item, flat) in enumerate(zip(bases.items, flats)):
        relaxed = RelaxedInstance(flat.reshape(shape), item.id)
        inst = round_to_budget(relaxed, item.instance, cfg.flip_budget)
        out.append(
            LabeledInstance(
                i, inst, item.label,
                Provenance.perturbed(item.id, diff_flips(item.instance, inst)),
            )
        )
    return Dataset(bases.schema, tuple(out)), objectives


# ---------------------------------------------------------------------------
# Report-producing entry points
# ---------------------------------------------------------------------------


def at_once(
    d_clean: Dataset,
    targets: TargetSpec,
    cfg: BaselineConfig,
    teach_cfg: TeachingConfig,
    seed: int | None = None,
    d_eval: Dataset | None = None,
) -> TeachingReport:
    """One teaching iteration with step size = sample_budget.

    Identical (timing aside) to the iterative loop run with T = 1 and
    k = sample_budget. A zero budget degenerates to the clean model check.
    """
    if cfg.sample_budget == 0:
        train_cfg = _derived_train_cfg(teach_cfg.train, seed)
        theta, trace = train(d_clean, train_cfg, monitored=targets, arch=teach_cfg.arch)
        acc = accuracy(theta, d_eval) if d_eval is not None else None
        return TeachingReport(
            method=METHOD_AT_ONCE,
            success=check_success(theta, trace, targets, teach_cfg.success_rule),
            iterations_used=0,
            samples_added=0,
            sample_percent=0.0,
            clean_size=len(d_clean),
            clean_acc_before=acc,
            clean_acc_after=acc,
            iterations=[],
            artifacts=RunArtifacts(d_clean, theta, trace, []),
        )
    one_shot = replace(
        teach_cfg,
        max_iterations=1,
        combine=COMBINE_ADDITION,
        selection=replace(teach_cfg.selection, k=cfg.sample_budget),
    )
    report = run_teaching(d_clean, targets, one_shot, seed=seed, d_eval=d_eval)
    report.method = METHOD_AT_ONCE
    return report


def run_baseline(
    d_clean: Dataset,
    targets: TargetSpec,
    cfg: BaselineConfig,
    teach_cfg: TeachingConfig,
    seed: int | None = None,
    d_eval: Dataset | None = None,
) -> TeachingReport:
    """Craft poisons with the configured method, retrain once, and report
    in the same schema as the teaching loop."""
    if cfg.method == METHOD_AT_ONCE:
        return at_once(d_clean, targets, cfg, teach_cfg, seed=seed, d_eval=d_eval)

    train_cfg = _derived_train_cfg(teach_cfg.train, seed)
    theta, trace = train(d_clean, train_cfg, monitored=targets, arch=teach_cfg.arch)
    acc_before = accuracy(theta, d_eval) if d_eval is not None else None
    clean_size = len(d_clean)

    if check_success(theta, trace, targets, teach_cfg.success_rule):
        return TeachingReport(
            method=cfg.method, success=True, iterations_used=0, samples_added=0,
            sample_percent=0.0, clean_size=clean_size,
            clean_acc_before=acc_before, clean_acc_after=acc_before,
            iterations=[], artifacts=RunArtifacts(d_clean, theta, trace, []),
        )

    t0 = time.perf_counter()
    policy = replace(teach_cfg.selection, k=cfg.sample_budget)
    ids = select_base(d_clean, targets, policy)
    d_base = Dataset(d_clean.schema, tuple(d_clean.by_id(i) for i in ids))

    if cfg.method == METHOD_FEATURE_COLLISION:
        embeds = np.stack([_embed(theta, t.instance.flat_float()) for t in targets.targets])
        target_embed = embeds.mean(axis=0)
        out = []
        for i, item in enumerate(d_base.items):
            relaxed, _ = feature_collision_descend(theta, item, target_embed, cfg)
            inst = round_to_budget(relaxed, item.instance, cfg.flip_budget)
            out.append(
                LabeledInstance(
                    i, inst, item.label,
                    Provenance.perturbed(item.id, diff_flips(item.instance, inst)),
                )
            )
        d_pert = Dataset(d_clean.schema, tuple(out))
    else:
        d_pert = gradient_matching_craft(theta, d_base, targets, cfg)

    merged = combine(d_clean, d_pert, COMBINE_ADDITION, ids)
    theta, trace = train(merged, train_cfg, monitored=targets, arch=teach_cfg.arch)
    success = check_success(theta, trace, targets, teach_cfg.success_rule)
    duration_ms = (time.perf_counter() - t0) * 1000.0
    acc_after = accuracy(theta, d_eval) if d_eval is not None else None

    added = len(d_pert)
    record = IterationRecord(
        iteration=1,
        added=added,
        sample_percent=100.0 * added / clean_size,
        duration_ms=duration_ms,
        target_preds=predicted_labels(theta, targets),
        success=success,
    )
    return TeachingReport(
        method=cfg.method,
        success=success,
        iterations_used=1,
        samples_added=added,
        sample_percent=100.0 * added / clean_size,
        clean_size=clean_size,
        clean_acc_before=acc_before,
        clean_acc_after=acc_after,
        iterations=[record],
        artifacts=RunArtifacts(merged, theta, trace, []),
    )
