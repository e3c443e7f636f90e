"""L2 projected-gradient probing of trained classifiers.

The attack maximizes the cross-entropy of the true label inside an L2 ball,
with random start, fixed step size, and exact projection after every step.
Robustness curves evaluate an ascending budget list with warm starts, keeping
the strongest iterate found per sample so far, which makes accuracy monotone
in the budget by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import models

L2 = "l2"


@dataclass(frozen=True)
class AttackSpec:
    """L2 attack budget and schedule; step_size defaults to 2.5 eps / steps."""

    epsilon: float
    steps: int = 20
    step_size: float | None = None
    norm: str = L2
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.norm != L2:
            raise ValueError("only the L2 norm is supported")

    @property
    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps


def _project_ball(delta: np.ndarray, eps: float) -> np.ndarray:
    """Exact projection of each row onto the L2 ball of radius eps."""
    norms = np.linalg.norm(delta, axis=1, keepdims=True)
    factor = np.minimum(1.0, eps / np.maximum(norms, 1e-300))
    return delta * factor


def _random_in_ball(rng, shape, eps):
    d = rng.standard_normal(shape)
    d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
    radii = eps * rng.random((shape[0], 1)) ** (1.0 / shape[1])
    return d * radii


def pgd_attack(spec: models.ModelSpec, params, x, labels, attack: AttackSpec,
               init_delta=None):
    """Per-sample strongest perturbation found by PGD (batched).

    Returns (x_adv, delta). The kept iterate per sample is the lexicographic
    best of (misclassified, per-sample loss) over every iterate visited,
    including the start point, so supplying a feasible warm start can never
    make the result weaker.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    n = x.shape[0]
    rng = np.random.default_rng([attack.seed, 0xAD5])
    if attack.epsilon == 0.0:
        return x.copy(), np.zeros_like(x)
    if init_delta is None:
        delta = _random_in_ball(rng, x.shape, attack.epsilon)
    else:
        delta = _project_ball(np.asarray(init_delta, dtype=np.float64).copy(),
                              attack.epsilon)
    best_delta = delta.copy()
    best_loss = np.full(n, -np.inf)
    best_fooled = np.zeros(n, dtype=bool)
    step = attack.resolved_step_size
    for _ in range(attack.steps + 1):  # +1 scores the final iterate
        loss, grad, logits = models.mlp_input_gradient(spec, params, x + delta, labels)
        per_sample = _per_sample_loss(logits, labels)
        fooled = logits.argmax(axis=1) != labels
        better = (fooled & ~best_fooled) | ((fooled == best_fooled)
                                            & (per_sample > best_loss))
        best_delta[better] = delta[better]
        best_loss[better] = per_sample[better]
        best_fooled |= fooled
        gn = np.linalg.norm(grad, axis=1, keepdims=True)
        delta = _project_ball(delta + step * grad / np.maximum(gn, 1e-300),
                              attack.epsilon)
    return x + best_delta, best_delta


def _per_sample_loss(logits, labels):
    shift = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1)) + logits.max(axis=1)
    return lse - logits[np.arange(len(labels)), labels]


def robustness_curve(spec: models.ModelSpec, params, x, labels, epsilons,
                     steps: int = 20, seed: int = 0):
    """(epsilon, accuracy, mean correct-class probability) rows.

    Budgets are evaluated in ascending order; each budget warm-starts from
    the strongest perturbation found at the previous one (feasible because
    the balls are nested), so accuracy never increases with epsilon.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.argsort(epsilons)
    rows_by_eps = {}
    warm = None
    for idx in order:
        eps = float(epsilons[idx])
        attack = AttackSpec(epsilon=eps, steps=steps, seed=seed)
        x_adv, warm = pgd_attack(spec, params, x, labels, attack, init_delta=warm)
        logits, _ = models.forward_mlp(spec, params, x_adv)
        _, _, probs = models.softmax_cross_entropy(logits, labels)
        pred = logits.argmax(axis=1)
        rows_by_eps[idx] = {
            "epsilon": eps,
            "accuracy": float(np.mean(pred == labels)),
            "mean_correct_prob": float(np.mean(
                probs[np.arange(len(labels)), labels])),
        }
    return [rows_by_eps[i] for i in range(len(epsilons))]


def certified_radius(margins, lipschitz_bound: float, dim: int, n_classes: int):
    """Largest L2 perturbation that provably cannot flip each prediction.

    A logit margin m can only close once the logit vector moves by m/sqrt(2)
    in L2. An input L2 change of eps is an RMS change of eps/sqrt(dim), the
    bound maps it to an RMS logit change of at most L * eps / sqrt(dim), i.e.
    an L2 logit change of L * eps * sqrt(n_classes / dim).
    """
    margins = np.asarray(margins, dtype=np.float64)
    scale = lipschitz_bound * math.sqrt(n_classes / dim)
    if scale == 0.0:
        return np.full_like(margins, np.inf)
    return margins / (math.sqrt(2.0) * scale)


def logit_margins(logits, labels):
    """Correct-class logit minus the best other logit, per sample."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    idx = np.arange(len(labels))
    correct = logits[idx, labels]
    masked = logits.copy()
    masked[idx, labels] = -np.inf
    return correct - masked.max(axis=1)
