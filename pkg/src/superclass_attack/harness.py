"""Datasets, attack campaigns and report tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attacks
from .attacks import ALL, AttackConfig, AttackOutcome
from .diffmodel import Classifier, forward, load_weights
from .losses import IllegalLossRow, LossSpec, evaluate
from .taxonomy import Taxonomy, read_taxonomy

log = logging.getLogger(__name__)

DATASET_MAGIC = b"SADS"
DATASET_VERSION = 1

CSV_COLUMNS = (
    "method", "loss", "k", "steps", "superclass_acc", "fine_acc", "mean_attempts", "elapsed_s",
    # extra columns after the fixed header
    "epsilon", "alpha", "total_steps",
)
TIMING_COLUMNS = ("elapsed_s",)

METHODS = ("clean", "standard", "iter-seq", "iter-sort", "non-iterative")


class DatasetFileError(ValueError):
    pass


# ----------------------------------------------------------------- datasets


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    num_classes: int = 0

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        Y = np.array(self.labels, dtype=np.int64)
        if X.ndim != 2 or Y.shape != (X.shape[0],):
            raise ValueError(f"inconsistent dataset shapes {X.shape} / {Y.shape}")
        if X.size and (np.any(~np.isfinite(X)) or X.min() < 0.0 or X.max() > 1.0):
            raise ValueError("features must lie in [0, 1]")
        if Y.size and Y.min() < 0:
            raise ValueError("labels must be non-negative")
        k = self.num_classes or (int(Y.max()) + 1 if Y.size else 0)
        if Y.size and Y.max() >= k:
            raise ValueError(f"label {Y.max()} out of range for {k} classes")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", Y)
        object.__setattr__(self, "num_classes", k)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> Example:
        return Example(self.features[i], int(self.labels[i]))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def dataset_to_bytes(ds: Dataset) -> bytes:
    n, d = ds.features.shape
    return b"".join([
        DATASET_MAGIC,
        struct.pack("<III", DATASET_VERSION, n, d),
        np.ascontiguousarray(ds.features, dtype="<f4").tobytes(),
        np.ascontiguousarray(ds.labels, dtype="<u4").tobytes(),
    ])


def dataset_from_bytes(data: bytes, num_classes: int = 0) -> Dataset:
    if len(data) < 16 or data[:4] != DATASET_MAGIC:
        raise DatasetFileError("bad magic: not a SADS dataset file")
    version, n, d = struct.unpack_from("<III", data, 4)
    if version != DATASET_VERSION:
        raise DatasetFileError(f"unsupported dataset file version {version}")
    expected = 16 + 4 * n * d + 4 * n
    if len(data) != expected:
        raise DatasetFileError(f"truncated or oversized dataset file: {len(data)} bytes, expected {expected}")
    X = np.frombuffer(data, dtype="<f4", count=n * d, offset=16).reshape(n, d).astype(np.float64)
    Y = np.frombuffer(data, dtype="<u4", count=n, offset=16 + 4 * n * d).astype(np.int64)
    try:
        return Dataset(X, Y, num_classes)
    except ValueError as exc:
        raise DatasetFileError(f"range error: {exc}") from exc


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def load_dataset(path, num_classes: int = 0) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes(), num_classes)


def make_blobs(num_classes, per_class, dim, spread, seed, centroids=None) -> Dataset:
    """Gaussian blobs around class centroids, clipped to [0, 1].

    Features are rounded to float32 so the dataset survives a file round trip.
    """
    rng = np.random.default_rng(seed)
    if centroids is None:
        centroids = rng.uniform(0.15, 0.85, size=(num_classes, dim))
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.shape != (num_classes, dim):
        raise ValueError(f"centroids must have shape {(num_classes, dim)}")
    X = np.repeat(centroids, per_class, axis=0) + rng.normal(0.0, 1.0, size=(num_classes * per_class, dim)) * spread
    X = np.clip(X, 0.0, 1.0).astype(np.float32).astype(np.float64)
    Y = np.repeat(np.arange(num_classes), per_class)
    return Dataset(X, Y, num_classes)


def hierarchical_centroids(taxonomy: Taxonomy, dim, group_radius, class_radius, seed) -> np.ndarray:
    """Class centroids clustered by superclass: siblings sit close together."""
    rng = np.random.default_rng(seed)
    centre = np.full(dim, 0.5)
    out = np.zeros((taxonomy.num_classes, dim))
    for group in taxonomy.groups:
        g = centre + group_radius * _unit(rng, dim)
        for c in sorted(group):
            out[c] = g + class_radius * _unit(rng, dim)
    return np.clip(out, 0.0, 1.0)


def _unit(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------- accuracy


def superclass_hits(taxonomy: Taxonomy, preds, labels) -> np.ndarray:
    gid = taxonomy.group_ids()
    return gid[np.asarray(preds)] == gid[np.asarray(labels)]


def superclass_accuracy(model: Classifier, dataset: Dataset, taxonomy: Taxonomy, adversarial=None) -> float:
    """Fraction of examples whose prediction stays in the label's superclass.

    ``adversarial`` optionally replaces the dataset features (attacked inputs).
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    X = dataset.features if adversarial is None else adversarial
    preds = np.argmax(forward(model, X), axis=1)
    return float(superclass_hits(taxonomy, preds, dataset.labels).mean())


def fine_accuracy(model: Classifier, dataset: Dataset, adversarial=None) -> float:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    X = dataset.features if adversarial is None else adversarial
    return float((np.argmax(forward(model, X), axis=1) == dataset.labels).mean())


# --------------------------------------------------------------- campaigns


@dataclass(frozen=True)
class AttackRow:
    method: str
    loss: str = ""
    steps: int = 100
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    k: int | None = ALL
    random_init: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "clean":
            return
        family = self.loss.partition(":")[0]
        expected = {"standard": ("standard",), "iter-seq": ("targeted",), "iter-sort": ("targeted",)}
        allowed = expected.get(self.method, ("max", "sum", "lse"))
        # constructing the spec validates the row against the loss table
        LossSpec.parse(self.loss, target=0 if family == "targeted" else None)
        if family not in allowed:
            raise IllegalLossRow(f"illegal loss row: {self.loss} for method {self.method}")

    @classmethod
    def build(cls, method=None, loss="", **kw) -> AttackRow:
        """Normalise the CLI / manifest spellings of a row.

        ``method`` may be a family name (``max``, ``sum``, ``lse``) with a bare
        variant as ``loss``; a bare variant under ``standard`` or ``iter-*``
        gets the matching family prefix.
        """
        if method in ("max", "sum", "lse"):
            loss = loss if ":" in loss else f"{method}:{loss}"
            method = "non-iterative"
        elif method == "standard" and ":" not in loss:
            loss = f"standard:{loss}"
        elif method in ("iter-seq", "iter-sort") and ":" not in loss:
            loss = f"targeted:{loss}"
        elif method is None:
            family = loss.partition(":")[0]
            method = {"standard": "standard", "max": "non-iterative", "sum": "non-iterative",
                      "lse": "non-iterative"}.get(family)
            if method is None:
                raise ValueError(f"cannot infer the method for loss {loss!r}; give 'method'")
        k = kw.pop("k", ALL)
        if isinstance(k, str):
            k = ALL if k.lower() == "all" else int(k)
        return cls(method, loss, k=k, **kw)

    def config(self, seed: int) -> AttackConfig:
        return AttackConfig(self.epsilon, self.alpha, self.steps, self.k, random_init=self.random_init, seed=seed)


@dataclass
class ReportRow:
    method: str
    loss: str
    k: str
    steps: int
    superclass_accuracy: float
    fine_accuracy: float
    mean_attempts: float
    elapsed_seconds: float
    epsilon: float = float("nan")
    alpha: float = float("nan")
    total_steps: int = 0
    error: str | None = None
    outcomes: list = field(default_factory=list, repr=False)

    def csv_fields(self) -> list[str]:
        if self.error is not None:
            acc = ["", "", "", ""]
        else:
            acc = [f"{self.superclass_accuracy:.6f}", f"{self.fine_accuracy:.6f}",
                   f"{self.mean_attempts:.4f}", f"{self.elapsed_seconds:.3f}"]
        budget = ["", ""] if self.method == "clean" else [repr(self.epsilon), repr(self.alpha)]
        return [self.method, self.loss, self.k, str(self.steps), *acc, *budget, str(self.total_steps)]


def attack_example(model, x, y, taxonomy: Taxonomy, row: AttackRow, seed: int, index: int) -> AttackOutcome:
    """Run one configured attack on one example.

    Examples already outside their superclass are returned untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    if row.method == "clean":
        return AttackOutcome(x.copy(), False, 0, 0)
    cfg = row.config(seed)
    if taxonomy.group_index(int(np.argmax(forward(model, x)))) != taxonomy.group_index(y):
        return AttackOutcome(x.copy(), True, 0, 0)
    spec = LossSpec.parse(row.loss, target=0 if row.method.startswith("iter") else None)
    if row.method == "standard":
        return attacks.standard_attack(model, x, y, cfg, spec.variant, taxonomy, example_index=index)
    if row.method == "non-iterative":
        return attacks.non_iterative_attack(model, x, y, taxonomy, cfg, spec.family, spec.variant, index)
    order = "sequence" if row.method == "iter-seq" else "sorted"
    return attacks.iterative_attack(model, x, y, taxonomy, cfg, spec.variant, order, index)


def _attack_chunk(args):
    model, X, Y, taxonomy, row, seed, indices = args
    return [attack_example(model, X[i], int(Y[i]), taxonomy, row, seed, int(i)) for i in indices]


def attack_dataset(model, dataset: Dataset, taxonomy: Taxonomy, row: AttackRow, seed: int, workers: int = 1):
    """Per-example outcomes in dataset order; identical for any worker count."""
    n = len(dataset)
    if workers <= 1 or n < 2:
        return _attack_chunk((model, dataset.features, dataset.labels, taxonomy, row, seed, range(n)))
    chunks = [c for c in np.array_split(np.arange(n), min(workers * 4, n)) if len(c)]
    jobs = [(model, dataset.features, dataset.labels, taxonomy, row, seed, c) for c in chunks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_attack_chunk, jobs))
    return [o for part in parts for o in part]


def run_row(model, dataset: Dataset, taxonomy: Taxonomy, row: AttackRow, seed: int, workers: int = 1) -> ReportRow:
    t0 = time.perf_counter()
    outcomes = attack_dataset(model, dataset, taxonomy, row, seed, workers)
    elapsed = time.perf_counter() - t0
    adv = np.stack([o.adversarial for o in outcomes])
    if row.method in ("clean", "non-iterative", "standard"):
        k_label = ""
    else:
        k_label = "all" if row.k is ALL else str(row.k)
    return ReportRow(
        method=row.method,
        loss=row.loss,
        k=k_label,
        steps=0 if row.method == "clean" else row.steps,
        superclass_accuracy=superclass_accuracy(model, dataset, taxonomy, adv),
        fine_accuracy=fine_accuracy(model, dataset, adv),
        mean_attempts=float(np.mean([o.attempts_used for o in outcomes])),
        elapsed_seconds=elapsed,
        epsilon=row.epsilon,
        alpha=row.alpha,
        total_steps=int(sum(o.steps_used for o in outcomes)),
        outcomes=outcomes,
    )


def load_manifest(source) -> dict:
    """Read an experiment manifest (JSON); relative paths resolve against its directory."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        base = Path(source).parent
        doc = json.loads(Path(source).read_text())
    elif isinstance(source, dict):
        base, doc = Path("."), dict(source)
    else:
        raise FileNotFoundError(f"manifest not found: {source}")
    for key in ("model", "dataset", "taxonomy"):
        if key in doc:
            doc[key] = str((base / doc[key]) if not Path(doc[key]).is_absolute() else Path(doc[key]))
    doc.setdefault("rows", [])
    doc.setdefault("seed", 0)
    return doc


def run_experiment(manifest, out_csv=None, workers: int = 1) -> list[ReportRow]:
    doc = load_manifest(manifest)
    report: list[ReportRow] = []
    if doc["rows"]:
        for key in ("model", "dataset", "taxonomy"):
            if key not in doc:
                raise ValueError(f"manifest is missing '{key}'")
            if not Path(doc[key]).exists():
                raise FileNotFoundError(f"file not found: {doc[key]}")
        model = load_weights(doc["model"])
        taxonomy = read_taxonomy(doc["taxonomy"])
        dataset = load_dataset(doc["dataset"], taxonomy.num_classes)
        for spec in doc["rows"]:
            spec = dict(spec)
            try:
                row = AttackRow.build(spec.pop("method", None), spec.pop("loss", ""), **spec)
            except (ValueError, TypeError) as exc:
                log.warning("skipping row %s: %s", spec, exc)
                report.append(_error_row(spec, exc))
                continue
            log.info("running %s %s", row.method, row.loss)
            report.append(run_row(model, dataset, taxonomy, row, int(doc["seed"]), workers))
    if out_csv is not None:
        write_csv(report, out_csv)
    return report


def _error_row(spec, exc) -> ReportRow:
    nan = float("nan")
    return ReportRow(str(spec.get("method", "")), str(spec.get("loss", "")), str(spec.get("k", "")),
                     int(spec.get("steps", 0) or 0), nan, nan, nan, nan,
                     float(spec.get("epsilon", nan)), float(spec.get("alpha", nan)), error=str(exc))


def report_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def write_csv(report, path) -> None:
    Path(path).write_text(report_csv(report))


def strip_timing(csv_text: str) -> list[list[str]]:
    rows = list(csv.reader(io.StringIO(csv_text)))
    drop = {rows[0].index(c) for c in TIMING_COLUMNS}
    return [[v for i, v in enumerate(r) if i not in drop] for r in rows]


def to_markdown(csv_text: str) -> str:
    rows = list(csv.reader(io.StringIO(csv_text)))
    lines = ["| " + " | ".join(rows[0]) + " |", "|" + "---|" * len(rows[0])]
    lines += ["| " + " | ".join(r) + " |" for r in rows[1:]]
    return "\n".join(lines)


# -------------------------------------------------------------- diagnostics


def gradient_vanishing(logits, y: int, taxonomy: Taxonomy) -> dict:
    """Logit-gradient norms of sum(logit-ce) and sum(prob-ce), with the margins driving them."""
    l = np.asarray(logits, dtype=np.float64)
    gid = taxonomy.group_ids()
    sums = np.bincount(gid, weights=l, minlength=taxonomy.num_superclasses)
    own = gid[y]
    _, g_logit = evaluate(LossSpec("sum", "logit-ce"), l, y, taxonomy)
    _, g_prob = evaluate(LossSpec("sum", "prob-ce"), l, y, taxonomy)
    return {
        "superclass_sum_margin": float(sums[own] - np.max(np.delete(sums, own))),
        "logit_margin": float(l[gid == own].min() - l[gid != own].max()),
        "logit_ce_grad_norm": float(np.linalg.norm(g_logit)),
        "prob_ce_grad_norm": float(np.linalg.norm(g_prob)),
    }


def ce_conflict(logits, y: int, taxonomy: Taxonomy) -> list[dict]:
    """Split the sum(ce) logit gradient on each superclass member into its opposing parts.

    Term ``-ln p_i`` contributes ``p_j - [i == j]`` to the derivative in ``l_j``;
    for ``j`` in the superclass the own term pushes down and the sibling terms
    push up.
    """
    l = np.asarray(logits, dtype=np.float64)
    p = np.exp(l - l.max())
    p /= p.sum()
    gid = taxonomy.group_ids()
    members = np.flatnonzero(gid == gid[y])
    m = len(members)
    out = []
    for j in members:
        own = p[j] - 1.0
        siblings = (m - 1) * p[j]
        out.append({"class": int(j), "own_term": float(own), "sibling_terms": float(siblings),
                    "net": float(own + siblings)})
    return out
