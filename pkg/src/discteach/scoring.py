"""Candidate score functions for the greedy search.

Two families, both "lower is better":

* prediction distance: Euclidean gap between the model outputs on the
  target(s) and on the perturbed candidate, averaged over targets;
* gradient alignment: negative cosine similarity between the candidate's
  parameter gradient and (a) the target-averaged gradient, (b) the clean
  origin's gradient, mixed by a trade-off weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Instance, TargetSpec
from .errors import ConfigError
from .student import ModelParams, forward_logits, grad_theta, predict_probs

SCORE_DIST = "dist"
SCORE_ALIGN = "align"

SPACE_PROBS = "probs"
SPACE_LOGITS = "logits"

_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class ScoreSpec:
    kind: str = SCORE_DIST
    lam: float = 0.5  # alignment trade-off between goal term and stealth term
    dist_space: str = SPACE_PROBS
    flip_stealth_sign: bool = False  # experimental: reward moving away from clean

    def __post_init__(self):
        if self.kind not in (SCORE_DIST, SCORE_ALIGN):
            raise ConfigError(f"unknown score kind {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if self.dist_space not in (SPACE_PROBS, SPACE_LOGITS):
            raise ConfigError(f"unknown dist space {self.dist_space!r}")


def _output(theta: ModelParams, x, space: str) -> np.ndarray:
    return predict_probs(theta, x) if space == SPACE_PROBS else forward_logits(theta, x)


def g_dist(theta: ModelParams, x_hat, targets: TargetSpec, space: str = SPACE_PROBS) -> float:
    """Mean over targets of || f(x_j) - f(x_hat) ||_2 in the chosen space."""
    out_hat = _output(theta, x_hat, space)
    total = 0.0
    for t in targets.targets:
        total += float(np.linalg.norm(_output(theta, t.instance, space) - out_hat))
    return total / len(targets)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with a zero-gradient guard: near-zero norm -> 0."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < _NORM_FLOOR or nb < _NORM_FLOOR:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def align(theta: ModelParams, x_a, y_a: int, x_b, y_b: int) -> float:
    """Cosine similarity of the two samples' loss gradients w.r.t. weights."""
    return cosine(grad_theta(theta, x_a, y_a), grad_theta(theta, x_b, y_b))


def mean_target_grad(theta: ModelParams, targets: TargetSpec) -> np.ndarray:
    """Average of grad_theta over all targets at their teaching labels."""
    g = np.zeros_like(theta.weights)
    for t in targets.targets:
        g += grad_theta(theta, t.instance, t.target_label)
    return g / len(targets)


def g_align(
    theta: ModelParams,
    x_hat,
    y_hat: int,
    x_clean,
    y_clean: int,
    targets: TargetSpec,
    lam: float,
    flip_stealth_sign: bool = False,
) -> float:
    """-lam * cos(g_hat, mean target grad) - (1 - lam) * cos(g_hat, g_clean)."""
    g_hat = grad_theta(theta, x_hat, y_hat)
    goal = cosine(g_hat, mean_target_grad(theta, targets))
    stealth = cosine(g_hat, grad_theta(theta, x_clean, y_clean))
    if flip_stealth_sign:
        stealth = -stealth
    return -lam * goal - (1.0 - lam) * stealth


class CandidateScorer:
    """Evaluates one perturbation candidate against fixed run context.

    Precomputes the target-side quantities (per-target outputs for the
    distance score, the averaged target gradient for alignment) once per
    model, since candidate search evaluates many flips under the same
    parameters.
    """

    def __init__(
        self,
        theta: ModelParams,
        targets: TargetSpec,
        x_clean: Instance,
        y_clean: int,
        spec: ScoreSpec,
    ):
        self.theta = theta
        self.spec = spec
        self.y_clean = int(y_clean)
        if spec.kind == SCORE_DIST:
            self._target_outputs = [
                _output(theta, t.instance, spec.dist_space) for t in targets.targets
            ]
        else:
            self._target_grad = mean_target_grad(theta, targets)
            self._clean_grad = grad_theta(theta, x_clean, self.y_clean)

    def __call__(self, bits: np.ndarray) -> float:
        flat = bits.reshape(-1).astype(np.float64)
        if self.spec.kind == SCORE_DIST:
            out_hat = _output(self.theta, flat, self.spec.dist_space)
            total = 0.0
            for tgt in self._target_outputs:
                total += float(np.linalg.norm(tgt - out_hat))
            return total / len(self._target_outputs)
        g_hat = grad_theta(self.theta, flat, self.y_clean)
        goal = cosine(g_hat, self._target_grad)
        stealth = cosine(g_hat, self._clean_grad)
        if self.spec.flip_stealth_sign:
            stealth = -stealth
        return -self.spec.lam * goal - (1.0 - self.spec.lam) * stealth
