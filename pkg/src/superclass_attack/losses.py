"""Attack losses over a logit vector, with exact gradients.

Every loss is *maximised* by the attack. Argmax selections (the best class of
a set) are taken on the current logits and held fixed while differentiating.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .diffmodel import log_softmax, logsumexp, softmax
from .taxonomy import Taxonomy

FAMILIES = ("standard", "targeted", "max", "sum", "lse")
VARIANTS = ("ce", "cw", "prob-cw", "weighted-cw", "logit-ce", "prob-ce")

_BASIC = ("ce", "cw", "prob-cw", "weighted-cw")
LEGAL = {
    "standard": _BASIC,
    "targeted": _BASIC,
    "max": _BASIC,
    "sum": ("ce", "logit-ce", "prob-ce", "cw", "prob-cw", "weighted-cw"),
    "lse": ("ce", "prob-ce", "cw", "prob-cw", "weighted-cw"),
}
# lse over superclass logits collapses algebraically onto sum(prob-ce)
ALIASES = {("lse", "logit-ce"): ("sum", "prob-ce")}


class TableRow(NamedTuple):
    method: str
    family: str
    variant: str


TABLE_ROWS = (
    *(TableRow("standard", "standard", v) for v in _BASIC),
    TableRow("iter-seq", "targeted", "ce"),
    *(TableRow("iter-sort", "targeted", v) for v in _BASIC),
    *(TableRow("non-iterative", fam, v) for fam in ("max", "sum", "lse") for v in LEGAL[fam]),
)


class IllegalLossRow(ValueError):
    pass


class LossContextError(ValueError):
    pass


def list_legal_rows() -> list[TableRow]:
    """All 24 loss rows, in table order. See :data:`ALIASES` for accepted aliases."""
    return list(TABLE_ROWS)


def is_legal(family: str, variant: str) -> bool:
    return variant in LEGAL.get(family, ()) or (family, variant) in ALIASES


@dataclass(frozen=True)
class LossSpec:
    family: str
    variant: str
    target: int | None = None

    def __post_init__(self):
        if not is_legal(self.family, self.variant):
            raise IllegalLossRow(f"illegal loss row: {self.family}:{self.variant}")
        if (self.family == "targeted") != (self.target is not None):
            raise LossContextError("a target class is required for, and only for, targeted losses")

    @classmethod
    def parse(cls, name: str, target: int | None = None) -> LossSpec:
        family, sep, variant = name.partition(":")
        if not sep:
            raise IllegalLossRow(f"illegal loss row: {name!r} (expected family:variant)")
        return cls(family, variant, target)

    @property
    def name(self) -> str:
        return f"{self.family}:{self.variant}"

    def resolved(self) -> LossSpec:
        fam, var = ALIASES.get((self.family, self.variant), (self.family, self.variant))
        return LossSpec(fam, var, self.target)


def _best(logits, mask) -> int:
    if not mask.any():
        raise LossContextError("argmax over an empty class set")
    return int(np.argmax(np.where(mask, logits, -np.inf)))


class _Acc:
    """Loss value plus partials w.r.t. logits, probabilities and log-probabilities."""

    def __init__(self, logits):
        self.l = logits
        self.logp = log_softmax(logits)
        self.p = softmax(logits)
        self.value = 0.0
        self.g_l = np.zeros_like(logits)
        self.g_p = np.zeros_like(logits)
        self.g_lp = np.zeros_like(logits)

    def single(self, variant, c, sign):
        """Add ``sign`` times the per-class term of ``variant`` for class ``c``."""
        l, p = self.l, self.p
        if variant == "ce":
            self.value += sign * self.logp[c]
            self.g_lp[c] += sign
        elif variant == "cw":
            self.value += sign * l[c]
            self.g_l[c] += sign
        elif variant == "prob-cw":
            self.value += sign * p[c]
            self.g_p[c] += sign
        elif variant == "weighted-cw":
            self.value += sign * p[c] * l[c]
            self.g_p[c] += sign * l[c]
            self.g_l[c] += sign * p[c]
        else:
            raise IllegalLossRow(f"no per-class term for {variant}")

    def lse(self, values, sign):
        """Add ``sign * LSE(values)``; returns the softmax weights of ``values``."""
        self.value += sign * logsumexp(values)
        return softmax(values)

    def grad(self):
        p = self.p
        return self.g_l + p * (self.g_p - p @ self.g_p) + (self.g_lp - p * self.g_lp.sum())


def _check_class(c, k, what):
    if c is None:
        raise LossContextError(f"{what} is required")
    if not 0 <= int(c) < k:
        raise LossContextError(f"{what} {c} out of range [0, {k})")
    return int(c)


def evaluate(spec: LossSpec, logits, y=None, taxonomy: Taxonomy | None = None):
    """Return ``(loss, d loss / d logits)`` for a single logit vector."""
    spec = spec.resolved()
    l = np.asarray(logits, dtype=np.float64)
    if l.ndim != 1:
        raise ValueError("evaluate expects a single logit vector")
    k = l.shape[0]
    acc = _Acc(l)
    fam, var = spec.family, spec.variant
    everyone = np.ones(k, dtype=bool)

    if fam in ("standard", "targeted"):
        c = _check_class(spec.target if fam == "targeted" else y, k, "target" if fam == "targeted" else "label")
        sign = 1.0 if fam == "targeted" else -1.0
        acc.single(var, c, sign)
        if var != "ce":
            others = everyone.copy()
            others[c] = False
            acc.single(var, _best(l, others), -sign)
        return float(acc.value), acc.grad()

    y = _check_class(y, k, "label")
    if taxonomy is None:
        raise LossContextError(f"{spec.name} needs a taxonomy")
    if taxonomy.num_classes != k:
        raise LossContextError(f"taxonomy has {taxonomy.num_classes} classes, logits have {k}")
    gid = taxonomy.group_ids()
    own = gid == gid[y]
    members = np.flatnonzero(own)

    if fam == "max":
        acc.single(var, _best(l, own), -1.0)
    elif fam == "sum":
        if var == "logit-ce":
            n_groups = taxonomy.num_superclasses
            sup = np.bincount(gid, weights=l, minlength=n_groups)
            acc.value = -log_softmax(sup)[gid[y]]
            g_sup = softmax(sup)
            g_sup[gid[y]] -= 1.0
            acc.g_l += g_sup[gid]
            return float(acc.value), acc.grad()
        if var == "prob-ce":
            # -ln sum_S p_i, via log-probabilities
            w = acc.lse(acc.logp[members], -1.0)
            acc.g_lp[members] -= w
            return float(acc.value), acc.grad()
        for c in members:
            acc.single(var, c, -1.0)
    elif fam == "lse":
        if var == "ce":
            w = acc.lse(-acc.logp[members], 1.0)
            acc.g_lp[members] -= w
            return float(acc.value), acc.grad()
        if var == "prob-ce":
            s = logsumexp(acc.p[members])
            acc.value = -np.log(s)
            acc.g_p[members] -= softmax(acc.p[members]) / s
            return float(acc.value), acc.grad()
        if var == "cw":
            w = acc.lse(l[members], -1.0)
            acc.g_l[members] -= w
        elif var == "prob-cw":
            w = acc.lse(acc.p[members], -1.0)
            acc.g_p[members] -= w
        else:  # weighted-cw
            pl = acc.p[members] * l[members]
            w = acc.lse(pl, -1.0)
            acc.g_p[members] -= w * l[members]
            acc.g_l[members] -= w * acc.p[members]
    else:
        raise IllegalLossRow(f"illegal loss row: {spec.name}")

    if var != "ce":
        # a single incentive class outside the superclass, never an aggregate
        acc.single(var, _best(l, ~own), 1.0)
    return float(acc.value), acc.grad()


def loss_value(spec: LossSpec, logits, y=None, taxonomy: Taxonomy | None = None) -> float:
    return evaluate(spec, logits, y, taxonomy)[0]


def standard_loss(variant: str, logits, y: int) -> float:
    return loss_value(LossSpec("standard", variant), logits, y)


def targeted_loss(variant: str, logits, target: int) -> float:
    return loss_value(LossSpec("targeted", variant, target), logits)


def superclass_loss(family: str, variant: str, logits, y: int, taxonomy: Taxonomy) -> float:
    if family not in ("max", "sum", "lse"):
        raise IllegalLossRow(f"illegal loss row: {family}:{variant} is not a superclass loss")
    return loss_value(LossSpec(family, variant), logits, y, taxonomy)
