"""Fine-class / superclass bookkeeping.

A taxonomy partitions the fine classes ``0..K-1`` into disjoint, non-empty
superclasses. Class indices are 0-based everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class TaxonomyError(ValueError):
    """Base class for invalid taxonomy documents."""


class TaxonomyParseError(TaxonomyError):
    pass


class OverlapError(TaxonomyError):
    pass


class CoverageError(TaxonomyError):
    pass


class EmptyGroupError(TaxonomyError):
    pass


@dataclass(frozen=True)
class Taxonomy:
    num_classes: int
    groups: tuple[frozenset[int], ...]
    _owner: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        groups = tuple(frozenset(int(c) for c in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        k = self.num_classes
        if not isinstance(k, (int, np.integer)) or k < 1:
            raise TaxonomyError(f"num_classes must be a positive integer, got {k!r}")
        owner = [-1] * k
        for gi, group in enumerate(groups):
            if not group:
                raise EmptyGroupError(f"superclass {gi} is empty")
            for c in group:
                if not 0 <= c < k:
                    raise CoverageError(f"class {c} outside [0, {k})")
                if owner[c] != -1:
                    raise OverlapError(f"class {c} appears in superclasses {owner[c]} and {gi}")
                owner[c] = gi
        missing = [c for c in range(k) if owner[c] == -1]
        if missing:
            raise CoverageError(f"classes {missing} belong to no superclass")
        object.__setattr__(self, "_owner", tuple(owner))

    @classmethod
    def from_groups(cls, groups, num_classes: int | None = None) -> Taxonomy:
        groups = [list(g) for g in groups]
        if num_classes is None:
            num_classes = sum(len(g) for g in groups)
        # duplicates inside a single group would vanish in the frozenset
        for gi, g in enumerate(groups):
            if len(set(g)) != len(g):
                raise OverlapError(f"superclass {gi} lists a class twice")
        return cls(num_classes, tuple(frozenset(g) for g in groups))

    @classmethod
    def singletons(cls, num_classes: int) -> Taxonomy:
        return cls.from_groups([[c] for c in range(num_classes)], num_classes)

    @property
    def num_superclasses(self) -> int:
        return len(self.groups)

    def group_index(self, y: int) -> int:
        self._check(y)
        return self._owner[y]

    def group_ids(self) -> np.ndarray:
        """Superclass index of every fine class, as an int array of length K."""
        return np.asarray(self._owner, dtype=np.int64)

    def _check(self, y):
        if not 0 <= int(y) < self.num_classes:
            raise IndexError(f"class index {y} out of range [0, {self.num_classes})")

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "superclasses": [sorted(g) for g in self.groups],
        }


def load_taxonomy(source) -> Taxonomy:
    """Parse a taxonomy from a JSON document (bytes, str, or a path)."""
    if isinstance(source, Path):
        source = source.read_bytes()
    try:
        doc = json.loads(source)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise TaxonomyParseError(f"not a valid JSON document: {exc}") from exc
    if not isinstance(doc, dict) or "num_classes" not in doc or "superclasses" not in doc:
        raise TaxonomyParseError("document must define 'num_classes' and 'superclasses'")
    k, groups = doc["num_classes"], doc["superclasses"]
    if not isinstance(k, int) or isinstance(k, bool):
        raise TaxonomyParseError("'num_classes' must be an integer")
    if not isinstance(groups, list) or not all(
        isinstance(g, list) and all(isinstance(c, int) and not isinstance(c, bool) for c in g)
        for g in groups
    ):
        raise TaxonomyParseError("'superclasses' must be a list of integer lists")
    return Taxonomy.from_groups(groups, k)


def read_taxonomy(path) -> Taxonomy:
    return load_taxonomy(Path(path))


def save_taxonomy(taxonomy: Taxonomy, path) -> None:
    Path(path).write_text(json.dumps(taxonomy.to_dict()) + "\n")


def superclass_of(t: Taxonomy, y: int) -> frozenset[int]:
    return t.groups[t.group_index(y)]


def complement_of(t: Taxonomy, y: int) -> frozenset[int]:
    own = superclass_of(t, y)
    return frozenset(c for c in range(t.num_classes) if c not in own)


def argmax_in(logits, members) -> int:
    """Index in ``members`` with the largest logit; ties go to the smallest index."""
    if not members:
        raise ValueError("argmax over an empty class set")
    best = None
    for c in sorted(members):
        if best is None or logits[c] > logits[best]:
            best = c
    return best


def top_k_in(logits, members, k: int) -> list[int]:
    """The ``k`` members with largest logits, in descending logit order."""
    if k < 0:
        raise ValueError("k must be non-negative")
    ordered = sorted(members, key=lambda c: (-logits[c], c))
    return ordered[:k]
