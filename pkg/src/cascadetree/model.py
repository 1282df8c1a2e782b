"""Domain types for cascades, arborescences and edge constraints.

Index conventions used throughout the package: a cascade with ``n`` nodes
uses indices ``1..n`` for its nodes (sorted by ``(timestamp, id)``) and
index ``0`` for the implicit dummy root.  Edge matrices are ``(n+1, n+1)``
with rows indexing parents and columns indexing children; column 0 is
never a valid child and is always masked out.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_ROOT_WINDOW = 3600


class CascadeError(ValueError):
    """Raised for structurally invalid cascades."""


@dataclass(frozen=True)
class Node:
    id: str
    site: str
    timestamp: int
    language: str | None = None
    content_type: str | None = None
    text_tokens: frozenset[str] | None = None

    def __post_init__(self):
        if self.timestamp is None:
            raise CascadeError(f"node {self.id!r} has no timestamp")
        if self.text_tokens is not None and not isinstance(self.text_tokens, frozenset):
            object.__setattr__(self, "text_tokens", frozenset(self.text_tokens))


@dataclass(frozen=True)
class Cascade:
    """An immutable set of activated nodes.

    ``nodes`` is re-sorted by ``(timestamp, id)`` on construction so matrix
    indices are reproducible; ``node(i)`` returns the node at index ``i``.
    """

    cascade_id: str
    nodes: tuple[Node, ...]
    root_window_seconds: int | None = DEFAULT_ROOT_WINDOW

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda v: (v.timestamp, v.id)))
        if not nodes:
            raise CascadeError(f"cascade {self.cascade_id!r} is empty")
        ids = [v.id for v in nodes]
        if len(set(ids)) != len(ids):
            raise CascadeError(f"cascade {self.cascade_id!r} has duplicate node ids")
        object.__setattr__(self, "nodes", nodes)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def node(self, i: int) -> Node:
        if not 1 <= i <= self.n:
            raise IndexError(i)
        return self.nodes[i - 1]

    @property
    def start_time(self) -> int:
        return self.nodes[0].timestamp

    def index_of(self, node_id: str) -> int:
        for k, v in enumerate(self.nodes, start=1):
            if v.id == node_id:
                return k
        raise KeyError(node_id)

    def timestamps(self) -> np.ndarray:
        return np.array([v.timestamp for v in self.nodes], dtype=np.int64)


@dataclass(frozen=True)
class Arborescence:
    """Parent assignment for children ``1..n``; parent ``0`` is the root."""

    parent: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(self, "parent", dict(sorted(self.parent.items())))

    @property
    def n(self) -> int:
        return len(self.parent)

    def edges(self) -> list[tuple[int, int]]:
        """``(parent, child)`` pairs sorted by child."""
        return [(j, i) for i, j in self.parent.items()]

    def is_acyclic(self) -> bool:
        n = self.n
        if sorted(self.parent) != list(range(1, n + 1)):
            return False
        state = [0] * (n + 1)  # 0 unseen, 1 on current path, 2 reaches root
        state[0] = 2
        for start in range(1, n + 1):
            path = []
            v = start
            while state[v] == 0:
                state[v] = 1
                path.append(v)
                v = self.parent[v]
                if not 0 <= v <= n:
                    return False
            if state[v] == 1:
                return False
            for u in path:
                state[u] = 2
        return True


@dataclass(frozen=True)
class GoldLinks:
    """Ground-truth parents for each child; more than one parent means a DAG."""

    parents: Mapping[int, frozenset[int]]

    def __post_init__(self):
        object.__setattr__(
            self, "parents", {i: frozenset(p) for i, p in sorted(self.parents.items())}
        )

    @property
    def is_tree(self) -> bool:
        return all(len(p) == 1 for p in self.parents.values())

    def n_links(self) -> int:
        return sum(len(p) for p in self.parents.values())

    def to_arborescence(self) -> Arborescence | None:
        if not self.is_tree:
            return None
        tree = Arborescence({i: next(iter(p)) for i, p in self.parents.items()})
        return tree if tree.is_acyclic() else None

    @classmethod
    def from_arborescence(cls, tree: Arborescence) -> GoldLinks:
        return cls({i: frozenset([j]) for i, j in tree.parent.items()})


class ConstraintSet:
    """Predicate over candidate edges ``(j -> i)`` of a cascade.

    Subclasses override :meth:`allow`; :meth:`mask` evaluates it over the
    full ``(n+1, n+1)`` grid and may be overridden with a vectorised form.
    """

    def allow(self, cascade: Cascade, j: int, i: int) -> bool:
        raise NotImplementedError

    def mask(self, cascade: Cascade) -> np.ndarray:
        n = cascade.n
        m = np.zeros((n + 1, n + 1), dtype=bool)
        for i in range(1, n + 1):
            for j in range(n + 1):
                if j != i and self.allow(cascade, j, i):
                    m[j, i] = True
        return m


class FullConstraints(ConstraintSet):
    """Every edge except self-loops; the partition-function denominator."""

    def allow(self, cascade, j, i):
        return j != i

    def mask(self, cascade):
        n = cascade.n
        m = np.ones((n + 1, n + 1), dtype=bool)
        np.fill_diagonal(m, False)
        m[:, 0] = False
        return m


@dataclass(frozen=True)
class TimeConstraints(ConstraintSet):
    """Parents must be strictly earlier; only early nodes may attach to root.

    With ``use_root_window`` off, any node may attach to the root.
    """

    use_root_window: bool = True

    def allow(self, cascade, j, i):
        if j == i or i < 1:
            return False
        child = cascade.node(i).timestamp
        if j == 0:
            if not self.use_root_window or cascade.root_window_seconds is None:
                return True
            return child - cascade.start_time <= cascade.root_window_seconds
        return cascade.node(j).timestamp < child

    def mask(self, cascade):
        t = cascade.timestamps()
        n = cascade.n
        m = np.zeros((n + 1, n + 1), dtype=bool)
        m[1:, 1:] = t[:, None] < t[None, :]
        if not self.use_root_window or cascade.root_window_seconds is None:
            m[0, 1:] = True
        else:
            m[0, 1:] = (t - cascade.start_time) <= cascade.root_window_seconds
        return m


@dataclass(frozen=True)
class TreeConstraints(ConstraintSet):
    """Allows exactly the edges of one fixed tree (or DAG gold)."""

    links: GoldLinks

    def allow(self, cascade, j, i):
        return j in self.links.parents.get(i, ())


def validate_arborescence(
    cascade: Cascade, tree: Arborescence, constraints: ConstraintSet | None = None
) -> bool:
    if sorted(tree.parent) != list(range(1, cascade.n + 1)):
        return False
    if any(j == i for i, j in tree.parent.items()):
        return False
    if not tree.is_acyclic():
        return False
    if constraints is None:
        return True
    mask = constraints.mask(cascade)
    return all(bool(mask[j, i]) for i, j in tree.parent.items())


def earliest_node(cascade: Cascade) -> int:
    """Index of the node with minimum ``(timestamp, id)``."""
    keys = [(v.timestamp, v.id) for v in cascade.nodes]
    return keys.index(min(keys)) + 1


def _group_by_start(starts: Sequence[int], window_seconds: int) -> list[list[int]]:
    """Transitive closure of 'starts within window' over sorted start times."""
    order = sorted(range(len(starts)), key=lambda k: starts[k])
    groups: list[list[int]] = []
    last = None
    for k in order:
        if last is not None and starts[k] - last <= window_seconds:
            groups[-1].append(k)
        else:
            groups.append([k])
        last = starts[k]
    return groups


def _merge_group(members: Sequence[Cascade], window_seconds: int) -> Cascade:
    if len(members) == 1:
        return members[0]
    ids = sorted(c.cascade_id for c in members)
    start = min(c.start_time for c in members)
    seeds_reach = max(c.start_time for c in members) - start
    windows = [c.root_window_seconds for c in members]
    if any(w is None for w in windows):
        root_window = None
    else:
        # every original seed stays root-attachable
        root_window = max(max(windows), seeds_reach)
    nodes = [v for c in members for v in c.nodes]
    return Cascade("+".join(ids), tuple(nodes), root_window)


def merge_cascades(cascades: Sequence[Cascade], window_seconds: int = 3600) -> list[Cascade]:
    """Union cascades whose start times chain together within ``window_seconds``."""
    if not cascades:
        return []
    groups = _group_by_start([c.start_time for c in cascades], window_seconds)
    return [_merge_group([cascades[k] for k in g], window_seconds) for g in groups]


def merge_with_gold(
    pairs: Sequence[tuple[Cascade, GoldLinks | None]], window_seconds: int = 3600
) -> list[tuple[Cascade, GoldLinks | None]]:
    """Like :func:`merge_cascades` but remaps gold links onto merged indices.

    Original seeds keep their root attachment; all other links are carried
    through unchanged.
    """
    if not pairs:
        return []
    groups = _group_by_start([c.start_time for c, _ in pairs], window_seconds)
    out = []
    for g in groups:
        members = [pairs[k] for k in g]
        merged = _merge_group([c for c, _ in members], window_seconds)
        if any(gold is None for _, gold in members):
            out.append((merged, None))
            continue
        parents: dict[int, frozenset[int]] = {}
        for c, gold in members:
            for i, ps in gold.parents.items():
                new_i = merged.index_of(c.node(i).id)
                parents[new_i] = frozenset(
                    0 if j == 0 else merged.index_of(c.node(j).id) for j in ps
                )
        out.append((merged, GoldLinks(parents)))
    return out


def enumerate_parent_maps(n: int) -> Iterable[tuple[int, ...]]:
    """All maps ``{1..n} -> {0..n}`` without self loops, as parent tuples."""
    choices = [[j for j in range(n + 1) if j != i] for i in range(1, n + 1)]
    return itertools.product(*choices)
