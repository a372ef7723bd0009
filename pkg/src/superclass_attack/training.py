"""Toy-scale fixture training: minibatch SGD on cross-entropy, optionally adversarial."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .diffmodel import Classifier, backward, forward_trace, log_softmax, mlp, softmax

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    # adversarial mode: PGD on fine-class CE before each update
    adversarial: bool = False
    adv_steps: int = 10
    adv_epsilon: float = 8 / 255
    adv_alpha: float = 2 / 255


def pgd_batch(model: Classifier, X, Y, epsilon, alpha, steps, rng) -> np.ndarray:
    """Batched sign-PGD on cross-entropy with a uniform random start.

    An example stops moving once it is misclassified.
    """
    X = np.asarray(X, dtype=np.float64)
    lo, hi = np.maximum(X - epsilon, 0.0), np.minimum(X + epsilon, 1.0)
    Xa = np.clip(X + rng.uniform(-epsilon, epsilon, size=X.shape), lo, hi)
    rows = np.arange(len(Y))
    for _ in range(steps):
        trace = forward_trace(model, Xa)
        logits = trace[-1]
        active = np.argmax(logits, axis=1) == Y
        if not active.any():
            break
        g = softmax(logits)
        g[rows, Y] -= 1.0  # d(-log p_y)/d logits
        grad = backward(model, trace, g)
        step = alpha * np.sign(grad) * active[:, None]
        Xa = np.clip(Xa + step, lo, hi)
    return Xa


def train_fixture(X, Y, hidden=(32, 32), cfg: TrainConfig = TrainConfig(), seed: int = 0, num_classes=None) -> Classifier:
    """Train a small MLP deterministically from ``seed``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("empty training set")
    if len(X) != len(Y):
        raise ValueError("features and labels differ in length")
    k = int(num_classes if num_classes is not None else Y.max() + 1)
    rng = np.random.default_rng(seed)
    model = mlp(X.shape[1], hidden, k, rng)
    params = [(w.copy(), b.copy()) for w, b in model.params()]
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), cfg.batch):
            idx = order[start : start + cfg.batch]
            xb, yb = X[idx], Y[idx]
            if cfg.adversarial:
                xb = pgd_batch(model, xb, yb, cfg.adv_epsilon, cfg.adv_alpha, cfg.adv_steps, rng)
            trace = forward_trace(model, xb)
            logp = log_softmax(trace[-1])
            batch_loss = -logp[np.arange(len(yb)), yb].mean()
            if not np.isfinite(batch_loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            total += batch_loss * len(yb)
            g = np.exp(logp)
            g[np.arange(len(yb)), yb] -= 1.0
            _, grads = backward(model, trace, g / len(yb), want_params=True)
            for (w, b), (vw, vb), (dw, db) in zip(params, velocity, grads):
                vw *= cfg.momentum
                vw += dw + cfg.weight_decay * w
                vb *= cfg.momentum
                vb += db
                w -= cfg.lr * vw
                b -= cfg.lr * vb
            model = model.replace_params(params)
        log.debug("epoch %d loss %.4f", epoch, total / len(X))
    return model
