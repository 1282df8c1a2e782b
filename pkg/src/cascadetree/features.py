"""Edge-factored one-hot features for candidate cascade edges."""

from __future__ import annotations

import bisect
import enum
import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import Cascade, earliest_node

UNKNOWN = "<unk>"

MINUTE, HOUR, DAY = 60, 3600, 86400
DEFAULT_TIME_BINS = (MINUTE, 10 * MINUTE, HOUR, 6 * HOUR, DAY, 7 * DAY, math.inf)

_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)
_UNSAFE = re.compile(r"[\t\r\n]")


class FeatureSet(str, enum.Enum):
    BASIC = "basic"
    ENHANCED = "enhanced"


@dataclass(frozen=True)
class FeatureConfig:
    feature_set: FeatureSet = FeatureSet.ENHANCED
    time_bin_edges: tuple[float, ...] = DEFAULT_TIME_BINS
    jaccard_bin_width: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "feature_set", FeatureSet(self.feature_set))
        edges = tuple(float(e) for e in self.time_bin_edges)
        if not edges or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("time_bin_edges must be non-empty and strictly ascending")
        object.__setattr__(self, "time_bin_edges", edges)
        w = self.jaccard_bin_width
        if not 0 < w <= 1:
            raise ValueError("jaccard_bin_width must lie in (0, 1]")
        if abs(1 / w - round(1 / w)) > 1e-9:
            raise ValueError("jaccard_bin_width must split [0, 1] into whole bins")

    @property
    def n_jaccard_bins(self) -> int:
        return int(round(1 / self.jaccard_bin_width))

    def time_bin(self, seconds: float) -> int:
        return min(bisect.bisect_right(self.time_bin_edges, seconds), len(self.time_bin_edges) - 1)

    def jaccard_bin(self, distance: float) -> int:
        return min(int(distance / self.jaccard_bin_width + 1e-9), self.n_jaccard_bins - 1)


class FeatureAlphabet:
    """Bijective feature-name index.  Index 0 is reserved for unseen names."""

    def __init__(self, names: Iterable[str] = ()):
        self._index: dict[str, int] = {UNKNOWN: 0}
        self._names: list[str] = [UNKNOWN]
        self.frozen = False
        for name in names:
            self.add(name)

    def __len__(self):
        return len(self._names)

    def __contains__(self, name):
        return name in self._index

    def add(self, name: str) -> int:
        idx = self._index.get(name)
        if idx is not None:
            return idx
        if self.frozen:
            return 0
        idx = len(self._names)
        self._index[name] = idx
        self._names.append(name)
        return idx

    def index(self, name: str) -> int:
        return self._index.get(name, 0)

    def name(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def freeze(self) -> FeatureAlphabet:
        self.frozen = True
        return self

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, name in enumerate(self._names):
            h.update(f"{name}\t{k}\n".encode("utf-8"))
        return h.hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for k, name in enumerate(self._names):
                fh.write(f"{name}\t{k}\n")

    @classmethod
    def load(cls, path) -> FeatureAlphabet:
        alphabet = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            name, _, idx = line.rpartition("\t")
            if int(idx) != alphabet.add(name):
                raise ValueError(f"{path}:{lineno}: alphabet indices must be dense and sorted")
        return alphabet.freeze()


def normalize_text(raw: str) -> frozenset[str]:
    return frozenset(t for t in _PUNCT.sub(" ", raw.lower()).split() if t)


def jaccard_distance(a: Iterable[str], b: Iterable[str]) -> float:
    """``1 - |a & b| / |a | b|``; two empty sets count as maximally distant."""
    a, b = set(a), set(b)
    union = len(a | b)
    if union == 0:
        return 1.0
    return 1.0 - len(a & b) / union


def _clean(value: str) -> str:
    return _UNSAFE.sub(" ", str(value))


def edge_feature_names(cascade: Cascade, j: int, i: int, config: FeatureConfig) -> list[str]:
    """Names of the indicators firing on candidate edge ``j -> i``."""
    if not (0 <= j <= cascade.n and 1 <= i <= cascade.n) or j == i:
        raise ValueError(f"invalid edge ({j}, {i}) for a cascade of {cascade.n} nodes")
    return _feature_names(cascade, j, i, config, earliest_node(cascade))


def _feature_names(cascade, j, i, config, first):
    child = cascade.node(i)
    names = [f"child_site={_clean(child.site)}"]
    enhanced = config.feature_set is FeatureSet.ENHANCED
    if j == 0:
        names.append("root_edge")
        names.append(f"root_lag_bin_{config.time_bin(child.timestamp - cascade.start_time)}")
        if enhanced and i == first:
            names.append("child_is_earliest")
        return names

    parent = cascade.node(j)
    names.append(f"parent_site={_clean(parent.site)}")
    lag = child.timestamp - parent.timestamp
    names.append("lag_bin_neg" if lag < 0 else f"lag_bin_{config.time_bin(lag)}")
    if not enhanced:
        return names
    if parent.language is not None and child.language is not None:
        names.append(f"lang_pair={_clean(parent.language)}|{_clean(child.language)}")
    if parent.content_type is not None and child.content_type is not None:
        names.append(f"ctype_pair={_clean(parent.content_type)}|{_clean(child.content_type)}")
    if j == first:
        names.append("parent_is_earliest")
    if parent.text_tokens is not None and child.text_tokens is not None:
        d = jaccard_distance(parent.text_tokens, child.text_tokens)
        names.append(f"jaccard_bin_{config.jaccard_bin(d)}")
    return names


def extract_edge_features(
    cascade: Cascade, j: int, i: int, config: FeatureConfig, alphabet: FeatureAlphabet
) -> dict[int, float]:
    """Sparse one-hot vector ``{feature index: 1.0}`` for edge ``j -> i``.

    Unseen names are added while the alphabet is open and collapse onto the
    unknown index once it is frozen.
    """
    return {alphabet.add(name): 1.0 for name in edge_feature_names(cascade, j, i, config)}


@dataclass
class EdgeFeatureTable:
    """Feature indices for every non-self edge of one cascade.

    ``rows[k]`` lists the feature indices of edge ``(parents[k], children[k])``;
    edges are ordered by child, then parent.
    """

    n: int
    parents: np.ndarray
    children: np.ndarray
    rows: list[list[int]] = field(repr=False)


def edge_feature_table(
    cascade: Cascade, config: FeatureConfig, alphabet: FeatureAlphabet
) -> EdgeFeatureTable:
    n = cascade.n
    first = earliest_node(cascade)
    parents, children, rows = [], [], []
    for i in range(1, n + 1):
        for j in range(n + 1):
            if j == i:
                continue
            parents.append(j)
            children.append(i)
            names = _feature_names(cascade, j, i, config, first)
            rows.append(sorted({alphabet.add(name) for name in names}))
    return EdgeFeatureTable(n, np.array(parents), np.array(children), rows)


def build_alphabet(cascades: Iterable[Cascade], config: FeatureConfig) -> FeatureAlphabet:
    """Collect every feature name over all candidate edges, then freeze."""
    alphabet = FeatureAlphabet()
    for cascade in cascades:
        first = earliest_node(cascade)
        for i in range(1, cascade.n + 1):
            for j in range(cascade.n + 1):
                if j != i:
                    for name in _feature_names(cascade, j, i, config, first):
                        alphabet.add(name)
    return alphabet.freeze()
