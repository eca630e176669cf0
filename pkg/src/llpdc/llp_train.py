"""Dual-constraint LLP training.

Each step draws a few bags, makes a weak and a strong noisy view of every
instance, and combines

* a bag term: cross-entropy between the bag's proportions and the mean
  weak-view prediction, and
* an instance term: cross-entropy of the strong view against hard
  pseudo-labels assigned from the weak-view predictions under the bag's
  exact class counts, kept only where the weak-view probability of the
  assigned label reaches ``tau``.

``total = bag + lam * instance``. With ``lam == 0`` the instance branch is
skipped entirely and training is plain DLLP.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import proportion_assign as pa
from .classifier import (
    PROB_FLOOR,
    ClassifierParams,
    OptimizerState,
    backward,
    forward,
    forward_logits,
    init_params,
    save_checkpoint,
    sgd_step,
    softmax,
)
from .datagen import Bag, Dataset

__all__ = [
    "Bag",
    "TrainConfig",
    "TrainHooks",
    "EpochMetrics",
    "TrainingDiverged",
    "bag_loss",
    "instance_loss",
    "total_loss",
    "bag_loss_and_grad",
    "instance_loss_and_grad",
    "rng_streams",
    "pseudo_label_metrics",
    "train",
    "evaluate",
]

log = logging.getLogger(__name__)

REDUCTIONS = ("mean_selected", "mean_all", "sum")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lam: float = 0.5
    tau: float = 0.6
    bags_per_step: int = 4
    epochs: int = 10
    weak_noise: float = 0.05
    strong_noise: float = 0.25
    seed: int = 0
    arch: str = "mlp"
    hidden: int = 64
    base_lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # Normalisation of the instance term within a step.
    instance_reduction: str = "mean_all"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.bags_per_step < 1 or self.epochs < 1:
            raise ValueError("bags_per_step and epochs must be positive")
        if not 0 <= self.weak_noise <= self.strong_noise:
            raise ValueError("need 0 <= weak_noise <= strong_noise")
        if self.instance_reduction not in REDUCTIONS:
            raise ValueError(f"instance_reduction must be one of {REDUCTIONS}")
        if self.arch not in ("linear", "mlp"):
            raise ValueError(f"unknown architecture {self.arch!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochMetrics:
    epoch: int
    bag_loss: float
    instance_loss: float
    pl_accuracy: float
    pl_ratio: float
    test_accuracy: float

    CSV_FIELDS = ("epoch", "bag_loss", "instance_loss", "pl_accuracy", "pl_ratio", "test_accuracy")

    def row(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]


@dataclass
class TrainHooks:
    """Optional callbacks; ``on_assignment(view, bag_id, probs, result)``."""

    on_assignment: Callable | None = None
    on_step: Callable | None = None


def bag_loss(P_weak, alpha) -> float:
    """``-sum_c alpha_c log(mean_j P[j, c])``."""
    P = np.asarray(P_weak, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != a.shape[0]:
        raise ValueError(f"probabilities {P.shape} do not match {a.shape[0]} proportions")
    mean = np.maximum(P.mean(axis=0), PROB_FLOOR)
    return float(-(a * np.log(mean)).sum())


def instance_loss(P_strong, assignment: pa.AssignmentResult, tau: float) -> tuple[float, int]:
    """Summed cross-entropy over the instances whose weak-view confidence is >= tau."""
    P = np.asarray(P_strong, dtype=np.float64)
    gate = assignment.per_instance_prob >= tau
    if not gate.any():
        return 0.0, 0
    rows = np.flatnonzero(gate)
    p = P[rows, assignment.labels[rows]]
    return float(-np.log(np.maximum(p, PROB_FLOOR)).sum()), int(rows.size)


def total_loss(bag_term: float, instance_term: float, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return bag_term + lam * instance_term


def _stack(views):
    sizes = [v.shape[0] for v in views]
    return np.concatenate(views, axis=0), np.cumsum([0] + sizes)


def bag_loss_and_grad(params: ClassifierParams, weak_views, alphas):
    """Mean bag loss over a batch of bags, its gradient, and the per-bag probabilities."""
    X, bounds = _stack(weak_views)
    logits, cache = forward_logits(params, X)
    P = softmax(logits)
    n_bags = len(weak_views)
    dlogits = np.empty_like(P)
    loss = 0.0
    probs = []
    for b in range(n_bags):
        lo, hi = bounds[b], bounds[b + 1]
        Pb = P[lo:hi]
        alpha = np.asarray(alphas[b], dtype=np.float64)
        mean = Pb.mean(axis=0)
        clamped = np.maximum(mean, PROB_FLOOR)
        loss += float(-(alpha * np.log(clamped)).sum())
        # dL/dP[j, c] = -alpha_c / (m * mean_c), zero where the floor is active
        dP = np.where(mean > PROB_FLOOR, -alpha / (clamped * (hi - lo)), 0.0)
        dP = np.broadcast_to(dP, Pb.shape)
        dlogits[lo:hi] = Pb * (dP - (dP * Pb).sum(axis=1, keepdims=True))
        probs.append(Pb)
    dlogits /= n_bags
    return loss / n_bags, backward(params, cache, dlogits), probs


def instance_loss_and_grad(
    params: ClassifierParams, strong_views, assignments, tau: float, reduction: str = "mean_selected"
):
    """Gated pseudo-label cross-entropy on the strong views.

    Pseudo-labels and gates are constants here. Returns
    ``(loss, grads, selected_count)``.
    """
    X, bounds = _stack(strong_views)
    logits, cache = forward_logits(params, X)
    P = softmax(logits)
    targets = np.zeros_like(P)
    for b, result in enumerate(assignments):
        lo = bounds[b]
        rows = np.flatnonzero(result.per_instance_prob >= tau)
        targets[lo + rows, result.labels[rows]] = 1.0
    selected = int(targets.sum())
    if reduction == "mean_selected":
        scale = 1.0 / selected if selected else 0.0
    elif reduction == "mean_all":
        scale = 1.0 / X.shape[0]
    else:
        scale = 1.0
    chosen = targets.any(axis=1)
    picked = P[targets.astype(bool)]
    loss = float(-np.log(np.maximum(picked, PROB_FLOOR)).sum()) * scale
    dlogits = (P * chosen[:, None] - targets) * scale
    return loss, backward(params, cache, dlogits), selected


def rng_streams(seed: int) -> dict:
    """Independent generators for init, bag order, weak noise and strong noise.

    Separate streams keep the weak-view noise identical whether or not the
    strong view is drawn, which is what makes ``lam == 0`` runs match DLLP.
    """
    init, order, weak, strong = np.random.SeedSequence(seed).spawn(4)
    return {
        "init_seed": int(init.generate_state(1)[0]),
        "order": np.random.default_rng(order),
        "weak": np.random.default_rng(weak),
        "strong": np.random.default_rng(strong),
    }


def _assign(probs, bag: Bag, view: str, bag_id: int, hooks: TrainHooks | None):
    result = pa.assign_pseudo_labels(probs, bag.counts)
    hist = np.bincount(result.labels, minlength=bag.counts.shape[0])
    if not np.array_equal(hist, bag.counts):
        raise AssertionError(f"bag {bag_id}: pseudo-label histogram {hist} != counts {bag.counts}")
    if hooks and hooks.on_assignment:
        hooks.on_assignment(view, bag_id, probs, result)
    return result


def pseudo_label_metrics(params: ClassifierParams, dataset: Dataset, bags, tau: float):
    """Pseudo-label accuracy and ratio over the training pool, on clean inputs.

    Accuracy is over the gated-in instances (0.0 when none pass).
    """
    selected = correct = total = 0
    for bag in bags:
        P = forward(params, dataset.features[bag.indices])
        if P.ndim == 1:
            P = P[None, :]
        result = pa.assign_pseudo_labels(P, bag.counts)
        gate = result.per_instance_prob >= tau
        truth = dataset.labels[bag.indices]
        selected += int(gate.sum())
        correct += int((result.labels[gate] == truth[gate]).sum())
        total += bag.size
    return (correct / selected if selected else 0.0), selected / total


def evaluate(params: ClassifierParams, dataset: Dataset) -> float:
    """Accuracy of argmax predictions (ties go to the lowest class index)."""
    if dataset.n == 0:
        raise ValueError("empty test set")
    P = softmax(forward_logits(params, dataset.features)[0])
    return float((P.argmax(axis=1) == dataset.labels).mean())


def _run_epoch(epoch, params, state, X, dataset, bags, config, streams, test, hooks) -> EpochMetrics:
    n_bags = len(bags)
    steps_per_epoch = math.ceil(n_bags / config.bags_per_step)
    order = streams["order"].permutation(n_bags)
    bag_sum = ins_sum = 0.0
    for s in range(steps_per_epoch):
        chosen = order[s * config.bags_per_step : (s + 1) * config.bags_per_step]
        clean = [X[bags[b].indices] for b in chosen]
        weak = [x + config.weak_noise * streams["weak"].normal(size=x.shape) for x in clean]
        b_loss, grads, weak_probs = bag_loss_and_grad(params, weak, [bags[b].alpha for b in chosen])
        i_loss = 0.0
        if config.lam > 0:
            assignments = [_assign(P, bags[b], "weak", int(b), hooks) for P, b in zip(weak_probs, chosen)]
            strong = [x + config.strong_noise * streams["strong"].normal(size=x.shape) for x in clean]
            i_loss, i_grads, _ = instance_loss_and_grad(
                params, strong, assignments, config.tau, config.instance_reduction
            )
            grads = [g + config.lam * h for g, h in zip(grads, i_grads)]
        if not math.isfinite(total_loss(b_loss, i_loss, config.lam)):
            raise FloatingPointError("non-finite loss")
        sgd_step(params, grads, state)
        bag_sum += b_loss
        ins_sum += i_loss
        if hooks and hooks.on_step:
            hooks.on_step(state.step, params)
    pl_acc, pl_ratio = pseudo_label_metrics(params, dataset, bags, config.tau)
    return EpochMetrics(
        epoch=epoch,
        bag_loss=bag_sum / steps_per_epoch,
        instance_loss=ins_sum / steps_per_epoch,
        pl_accuracy=pl_acc,
        pl_ratio=pl_ratio,
        test_accuracy=evaluate(params, test) if test is not None else float("nan"),
    )


def train(
    dataset: Dataset,
    bags: list[Bag],
    config: TrainConfig,
    test: Dataset | None = None,
    hooks: TrainHooks | None = None,
    diagnostic_path=None,
):
    """Run ``config.epochs`` epochs and return ``(params, [EpochMetrics, ...])``.

    The learner sees features and bag proportions only; ``dataset.labels``
    feed the per-epoch pseudo-label metrics and nothing else.
    """
    if not bags:
        raise ValueError("no bags to train on")
    streams = rng_streams(config.seed)
    params = init_params(config.arch, dataset.dim, dataset.n_classes, config.hidden, streams["init_seed"])
    n_bags = len(bags)
    steps_per_epoch = math.ceil(n_bags / config.bags_per_step)
    state = OptimizerState(
        base_lr=config.base_lr,
        total_steps=config.epochs * steps_per_epoch,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    X = dataset.features
    history = []
    for epoch in range(1, config.epochs + 1):
        try:
            history.append(_run_epoch(epoch, params, state, X, dataset, bags, config, streams, test, hooks))
        except FloatingPointError as exc:
            if diagnostic_path is not None:
                save_checkpoint(params, diagnostic_path, {"epoch": epoch, "step": state.step})
            raise TrainingDiverged(f"epoch {epoch}, step {state.step}: {exc}") from exc
        log.debug("epoch %d: %s", epoch, history[-1])
    return params, history
