"""L-infinity PGD and the superclass attacks built on it."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .diffmodel import Classifier, backward, forward, forward_trace
from .losses import LossSpec, evaluate
from .taxonomy import Taxonomy, complement_of, top_k_in

ALL = None  # early-stop budget meaning "every class outside the superclass"
BOUND_SLACK = 1e-9

NON_TARGETED_TAG = 0


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    alpha: float
    steps: int
    k: int | None = ALL
    norm: str = "linf"
    random_init: bool = True
    seed: int = 0
    raw_gradient: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if self.k is not ALL and (int(self.k) != self.k or self.k < 1):
            raise ValueError(f"k must be a positive integer or ALL, got {self.k}")
        if self.norm != "linf":
            raise ValueError(f"unsupported norm {self.norm!r}; only linf is implemented")


@dataclass
class AttackOutcome:
    adversarial: np.ndarray
    success: bool
    steps_used: int
    attempts_used: int
    elapsed: float = 0.0
    aborted: bool = False
    targets: tuple = field(default_factory=tuple)


def attack_rng(seed: int, example_index: int, tag: int) -> np.random.Generator:
    """Independent stream per (global seed, example, target tag).

    Tag 0 is the non-targeted stream; a targeted attempt on class ``t`` uses
    ``t + 1``, so a target's stream does not depend on its attempt position.
    """
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(example_index), int(tag)))
    return np.random.default_rng(ss)


def project_linf(x_orig, x, epsilon) -> np.ndarray:
    x_orig = np.asarray(x_orig, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != x_orig.shape:
        raise ValueError(f"shape mismatch: {x_orig.shape} vs {x.shape}")
    lo = np.maximum(x_orig - epsilon, 0.0)
    hi = np.minimum(x_orig + epsilon, 1.0)
    return np.minimum(np.maximum(x, lo), hi)


def within_ball(x_orig, x_a, epsilon) -> bool:
    return bool(np.max(np.abs(np.asarray(x_a) - np.asarray(x_orig)), initial=0.0) <= epsilon + BOUND_SLACK)


def is_superclass_adversarial(model: Classifier, x_orig, x_a, y, taxonomy: Taxonomy, epsilon) -> bool:
    pred = int(np.argmax(forward(model, x_a)))
    return taxonomy.group_index(pred) != taxonomy.group_index(y) and within_ball(x_orig, x_a, epsilon)


def superclass_success(x_orig, y, taxonomy: Taxonomy, epsilon):
    """Predicate on ``(x_a, logits)``: prediction left the superclass of ``y``."""
    gid = taxonomy.group_ids()
    own = gid[y]

    def check(x_a, logits):
        return gid[int(np.argmax(logits))] != own and within_ball(x_orig, x_a, epsilon)

    return check


def fine_success(x_orig, y, epsilon):
    def check(x_a, logits):
        return int(np.argmax(logits)) != y and within_ball(x_orig, x_a, epsilon)

    return check


def pgd(
    model: Classifier,
    x,
    y,
    loss: LossSpec,
    cfg: AttackConfig,
    success=None,
    rng=None,
    taxonomy: Taxonomy | None = None,
) -> AttackOutcome:
    """Projected gradient ascent on ``loss`` inside the epsilon box around ``x``.

    ``success(x_a, logits)`` is checked on the starting point and after every
    step; the attack returns as soon as it holds. With ``steps=1`` and no
    random start this is FGSM.
    """
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=np.float64)
    if cfg.random_init:
        rng = attack_rng(cfg.seed, 0, NON_TARGETED_TAG) if rng is None else np.random.default_rng(rng)
        x_a = project_linf(x, x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), cfg.epsilon)
    else:
        x_a = x.copy()

    trace = forward_trace(model, x_a)
    if success is not None and success(x_a, trace[-1]):
        return AttackOutcome(x_a, True, 0, 1, time.perf_counter() - t0)

    for step in range(1, cfg.steps + 1):
        _, g_logits = evaluate(loss, trace[-1], y, taxonomy)
        grad = backward(model, trace, g_logits)
        if not np.all(np.isfinite(grad)):
            return AttackOutcome(x_a, False, step, 1, time.perf_counter() - t0, aborted=True)
        direction = grad if cfg.raw_gradient else np.sign(grad)
        x_a = project_linf(x, x_a + cfg.alpha * direction, cfg.epsilon)
        trace = forward_trace(model, x_a)
        if success is not None and success(x_a, trace[-1]):
            return AttackOutcome(x_a, True, step, 1, time.perf_counter() - t0)
    return AttackOutcome(x_a, False, cfg.steps, 1, time.perf_counter() - t0)


def standard_attack(
    model, x, y, cfg: AttackConfig, variant: str = "ce", taxonomy: Taxonomy | None = None, example_index: int = 0
) -> AttackOutcome:
    """Non-targeted fine-class attack.

    Stops early on superclass misclassification when ``taxonomy`` is given
    (the evaluation protocol), otherwise on any fine misclassification.
    """
    if taxonomy is not None:
        success = superclass_success(x, y, taxonomy, cfg.epsilon)
    else:
        success = fine_success(x, y, cfg.epsilon)
    rng = attack_rng(cfg.seed, example_index, NON_TARGETED_TAG)
    return pgd(model, x, y, LossSpec("standard", variant), cfg, success, rng)


def non_iterative_attack(
    model, x, y, taxonomy: Taxonomy, cfg: AttackConfig, family: str, variant: str, example_index: int = 0
) -> AttackOutcome:
    loss = LossSpec(family, variant)
    success = superclass_success(x, y, taxonomy, cfg.epsilon)
    rng = attack_rng(cfg.seed, example_index, NON_TARGETED_TAG)
    return pgd(model, x, y, loss, cfg, success, rng, taxonomy)


def target_order(logits, taxonomy: Taxonomy, y: int, order: str, k=ALL) -> list[int]:
    """Classes outside the superclass of ``y`` to attack, in attempt order."""
    outside = complement_of(taxonomy, y)
    budget = len(outside) if k is ALL else min(k, len(outside))
    if order == "sorted":
        return top_k_in(logits, outside, budget)
    if order == "sequence":
        # early stopping for the ascending order is an extension: first k indices
        return sorted(outside)[:budget]
    raise ValueError(f"unknown target order {order!r}")


def iterative_attack(
    model,
    x,
    y,
    taxonomy: Taxonomy,
    cfg: AttackConfig,
    variant: str = "ce",
    order: str = "sorted",
    example_index: int = 0,
) -> AttackOutcome:
    """Repeated targeted attacks on classes outside the superclass until one succeeds.

    Every attempt restarts from ``x`` with its own random start drawn from
    the class-keyed stream.
    """
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=np.float64)
    targets = target_order(forward(model, x), taxonomy, y, order, cfg.k)
    if not targets:
        raise ValueError("no classes outside the superclass to target")
    success = superclass_success(x, y, taxonomy, cfg.epsilon)
    steps = 0
    out = None
    for attempt, target in enumerate(targets, start=1):
        rng = attack_rng(cfg.seed, example_index, target + 1)
        out = pgd(model, x, y, LossSpec("targeted", variant, target), cfg, success, rng)
        steps += out.steps_used
        if out.success or out.aborted:
            break
    return AttackOutcome(
        out.adversarial,
        out.success,
        steps,
        attempt,
        time.perf_counter() - t0,
        aborted=out.aborted,
        targets=tuple(targets[:attempt]),
    )
