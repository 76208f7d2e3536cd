"""Base-sample selection: the k nearest training items to the targets
under mean Jaccard distance, with class/provenance filters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, TargetSpec
from .errors import ConfigError, SelectionError

TARGET_CLASS_ONLY = "target_class"
ANY_CLASS = "any"


@dataclass(frozen=True)
class SelectionPolicy:
    """How the per-iteration base set is drawn.

    class_filter None resolves by task kind at run time: tampering keeps
    only items labeled with a target class (clean-label convention),
    improvement draws from any class.
    """

    k: int
    class_filter: str | None = None
    allow_reselect_perturbed: bool = True
    exclude_exact_target: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.class_filter not in (None, TARGET_CLASS_ONLY, ANY_CLASS):
            raise ConfigError(f"unknown class filter {self.class_filter!r}")

    def resolved_filter(self, task_kind: str) -> str:
        if self.class_filter is not None:
            return self.class_filter
        return TARGET_CLASS_ONLY if task_kind == "tampering" else ANY_CLASS


def mean_jaccard_to_targets(d: Dataset, targets: TargetSpec) -> np.ndarray:
    """Per-item mean Jaccard distance to the target instances (vectorized)."""
    bits = d.stacked_bits.astype(bool).reshape(len(d), -1)
    out = np.zeros(len(d), dtype=np.float64)
    for t in targets.targets:
        tb = t.instance.bits.astype(bool).reshape(-1)
        inter = (bits & tb).sum(axis=1)
        union = (bits | tb).sum(axis=1)
        dist = np.ones(len(d), dtype=np.float64)
        nz = union > 0
        dist[nz] = 1.0 - inter[nz] / union[nz]
        dist[union == 0] = 0.0
        out += dist
    return out / len(targets)


def select_base(d: Dataset, targets: TargetSpec, policy: SelectionPolicy) -> list[int]:
    """Ids of the k pool items closest to the targets, ties toward lower id."""
    wanted_labels = set(targets.target_labels())
    cls_filter = policy.resolved_filter(targets.task_kind)
    target_instances = [t.instance for t in targets.targets]

    pool: list[int] = []
    for i, item in enumerate(d.items):
        if cls_filter == TARGET_CLASS_ONLY and item.label not in wanted_labels:
            continue
        if not policy.allow_reselect_perturbed and item.provenance.is_perturbed:
            continue
        if policy.exclude_exact_target and any(item.instance == t for t in target_instances):
            continue
        pool.append(i)

    if len(pool) < policy.k:
        raise SelectionError(
            f"candidate pool has {len(pool)} items after filters, need k={policy.k}"
        )

    dist = mean_jaccard_to_targets(d, targets)
    ranked = sorted(pool, key=lambda i: (dist[i], d.items[i].id))
    return [d.items[i].id for i in ranked[: policy.k]]
