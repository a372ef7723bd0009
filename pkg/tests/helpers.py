"""Independent oracles and random-instance generators shared by the tests."""

import itertools
import math
from pathlib import Path

import numpy as np

from superclass_attack.diffmodel import Classifier, Linear, ReLU, forward_trace
from superclass_attack.losses import LossSpec, list_legal_rows
from superclass_attack.taxonomy import Taxonomy

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

FD_STEP = 1e-4
FD_RTOL = 1e-4
FD_ATOL = 1e-7


def central_diff(f, x, h=FD_STEP):
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_mismatch(analytic, numeric):
    """Elementwise excess over the tolerance; all <= 0 means the check passes."""
    allowed = np.maximum(FD_RTOL * np.maximum(np.abs(analytic), np.abs(numeric)), FD_ATOL)
    return np.abs(analytic - numeric) - allowed


def random_taxonomy(rng, k, min_groups=2):
    """Random partition of ``k`` classes into at least ``min_groups`` groups."""
    perm = rng.permutation(k)
    n_groups = rng.integers(min_groups, k + 1)
    cuts = np.sort(rng.choice(np.arange(1, k), size=n_groups - 1, replace=False))
    return Taxonomy.from_groups([list(map(int, g)) for g in np.split(perm, cuts)], k)


def random_mlp(rng, d, k, hidden=(8,), scale=1.0):
    dims = [d, *hidden, k]
    layers = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        layers.append(Linear(rng.normal(0, scale, (b, a)), rng.normal(0, 0.3, b)))
        if i < len(dims) - 2:
            layers.append(ReLU())
    return Classifier(tuple(layers))


def random_linear(rng, d, k, scale=1.0):
    return Classifier((Linear(rng.normal(0, scale, (k, d)), rng.normal(0, 0.3, k)),))


def spec_for_row(row, rng, y, taxonomy):
    """LossSpec for a table row; targeted rows get a random class outside S(y)."""
    if row.family == "targeted":
        outside = [c for c in range(taxonomy.num_classes) if taxonomy.group_index(c) != taxonomy.group_index(y)]
        return LossSpec("targeted", row.variant, int(rng.choice(outside)))
    return LossSpec(row.family, row.variant)


ROWS = list_legal_rows()
ROW_IDS = [f"{r.method}-{r.family}:{r.variant}" for r in ROWS]


def smooth_around(model, x, h=FD_STEP):
    """True if relu patterns and logit ordering are constant on the FD stencil."""
    base = forward_trace(model, x)
    pattern = [t > 0 for t in base[1:-1]]
    order = np.argsort(base[-1], kind="stable")
    for i, s in itertools.product(range(x.size), (-h, h)):
        xe = x.copy()
        xe[i] += s
        tr = forward_trace(model, xe)
        if any(np.any((t > 0) != p) for t, p in zip(tr[1:-1], pattern)):
            return False
        if np.any(np.argsort(tr[-1], kind="stable") != order):
            return False
    return True


def logit_lse_identity(logits, members):
    """-ln(sum_{S} e^l / sum e^l) computed directly, independent of the library."""
    m = max(logits)
    num = sum(math.exp(logits[i] - m) for i in members)
    den = sum(math.exp(v - m) for v in logits)
    return -math.log(num / den)


# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
