"""Cascade- and network-level evaluation, the naive baseline, and CV folds."""

from __future__ import annotations

import enum
import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

from .data_io import day_of
from .matrix_tree import EdgeMarginals
from .model import Arborescence, Cascade, GoldLinks, earliest_node


class EmptyGold(ValueError):
    pass


class Granularity(str, enum.Enum):
    STATIC = "static"
    PER_DAY = "per_day"


@dataclass(frozen=True)
class LinkSet:
    """Site-level links ``(source, dest)`` or ``(source, dest, day)``."""

    edges: frozenset

    def __init__(self, edges: Iterable[tuple] = ()):
        edges = frozenset(tuple(e) for e in edges)
        if any(e[0] == e[1] for e in edges):
            raise ValueError("site links must join two different sites")
        object.__setattr__(self, "edges", edges)

    def __len__(self):
        return len(self.edges)

    def days(self) -> list[int]:
        return sorted({e[2] for e in self.edges if len(e) > 2})

    def on_day(self, day: int) -> LinkSet:
        return LinkSet((e[0], e[1]) for e in self.edges if len(e) > 2 and e[2] == day)

    def static(self) -> LinkSet:
        return LinkSet((e[0], e[1]) for e in self.edges)


@dataclass(frozen=True)
class RankedEdgeList:
    entries: tuple[tuple[str, str, float], ...]

    def __init__(self, entries: Iterable[tuple[str, str, float]] = ()):
        ranked = tuple(sorted(entries, key=lambda e: (-e[2], e[0], e[1])))
        pairs = [(a, b) for a, b, _ in ranked]
        if len(set(pairs)) != len(pairs):
            raise ValueError("ranked edge list pairs must be unique")
        object.__setattr__(self, "entries", ranked)

    def __len__(self):
        return len(self.entries)

    def pairs(self) -> list[tuple[str, str]]:
        return [(a, b) for a, b, _ in self.entries]

    def top(self, k: int) -> RankedEdgeList:
        return self if k <= 0 else RankedEdgeList(self.entries[:k])

    def to_csv(self) -> str:
        return "".join(f"{a},{b},{s!r}\n" for a, b, s in self.entries)


@dataclass(frozen=True)
class MetricsReport:
    recall: float
    precision: float
    f1: float
    average_precision: float | None
    true_positives: int
    predicted: int
    gold: int

    @classmethod
    def from_counts(cls, tp_pred: int, tp_gold: int, predicted: int, gold: int, ap=None):
        """Rates from counts; ``tp_pred``/``tp_gold`` differ only for DAG gold."""
        precision = tp_pred / predicted if predicted else 0.0
        recall = tp_gold / gold if gold else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(recall, precision, f1, ap, tp_pred, predicted, gold)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def naive_baseline(cascade: Cascade) -> Arborescence:
    """Earliest node on the root, everything else on the earliest node."""
    first = earliest_node(cascade)
    return Arborescence({i: 0 if i == first else first for i in range(1, cascade.n + 1)})


def eval_cascade_level(
    predictions: Sequence[Arborescence],
    golds: Sequence[GoldLinks | Arborescence],
    cascades: Sequence[Cascade] | None = None,
) -> MetricsReport:
    """Micro-averaged link precision/recall over all cascades.

    A predicted edge is correct if it is one of the child's gold parents
    (root for seeds).  Precision counts predicted edges, recall counts gold
    links, so the two only differ when gold has multi-parent nodes.
    """
    if len(predictions) != len(golds) or (cascades is not None and len(cascades) != len(golds)):
        raise ValueError("predictions, golds and cascades must be aligned")
    tp_pred = tp_gold = n_pred = n_gold = 0
    for k, (pred, gold) in enumerate(zip(predictions, golds)):
        if isinstance(gold, Arborescence):
            gold = GoldLinks.from_arborescence(gold)
        if cascades is not None and pred.n != cascades[k].n:
            raise ValueError(f"prediction {k} does not cover its cascade")
        if sorted(pred.parent) != sorted(gold.parents):
            raise ValueError(f"prediction {k} and its gold cover different nodes")
        n_pred += pred.n
        n_gold += gold.n_links()
        for i, j in pred.parent.items():
            if j in gold.parents[i]:
                tp_pred += 1
                tp_gold += 1
    return MetricsReport.from_counts(tp_pred, tp_gold, n_pred, n_gold)


def network_from_marginals(
    marginals: Sequence[EdgeMarginals],
    cascades: Sequence[Cascade],
    top_k: int = 0,
    granularity: Granularity = Granularity.STATIC,
) -> dict[int | None, RankedEdgeList]:
    """Sum node-level edge posteriors onto site pairs.

    Root edges and same-site edges are skipped.  The static network lives
    under key ``None``; per-day buckets are keyed by the child's UTC day.
    """
    granularity = Granularity(granularity)
    if len(marginals) != len(cascades):
        raise ValueError("marginals and cascades must be aligned")
    buckets: dict[int | None, dict[tuple[str, str], float]] = defaultdict(lambda: defaultdict(float))
    for m, cascade in zip(marginals, cascades):
        p = m.p
        for i in range(1, cascade.n + 1):
            child = cascade.node(i)
            key = day_of(child.timestamp) if granularity is Granularity.PER_DAY else None
            for j in range(1, cascade.n + 1):
                w = p[j, i]
                if w <= 0:
                    continue
                src = cascade.node(j).site
                if src != child.site:
                    buckets[key][src, child.site] += float(w)
    if granularity is Granularity.STATIC and None not in buckets:
        buckets[None] = defaultdict(float)
    return {
        key: RankedEdgeList((a, b, s) for (a, b), s in scores.items()).top(top_k)
        for key, scores in sorted(buckets.items(), key=lambda kv: (kv[0] is not None, kv[0] or 0))
    }


def average_precision(ranked: Sequence, relevant) -> float:
    """Mean of precision@r over the ranks r of relevant items, divided by |relevant|."""
    if not relevant:
        raise EmptyGold("average precision is undefined without gold items")
    hits, total = 0, 0.0
    for r, item in enumerate(ranked, start=1):
        if item in relevant:
            hits += 1
            total += hits / r
    return total / len(relevant)


def eval_network(predicted: RankedEdgeList, gold: LinkSet) -> MetricsReport:
    gold_pairs = {(e[0], e[1]) for e in gold.edges}
    if not gold_pairs:
        raise EmptyGold("gold network is empty")
    pairs = predicted.pairs()
    tp = sum(1 for e in pairs if e in gold_pairs)
    ap = average_precision(pairs, gold_pairs)
    return MetricsReport.from_counts(tp, tp, len(pairs), len(gold_pairs), ap)


def eval_network_per_day(
    predicted: Mapping[int | None, RankedEdgeList], gold: LinkSet
) -> tuple[MetricsReport, dict[int, MetricsReport]]:
    """Per-day reports plus a summary pooling counts over days and averaging AP.

    Days with no gold links are left out of the summary.
    """
    per_day = {}
    for day in gold.days():
        ranked = predicted.get(day, RankedEdgeList())
        per_day[day] = eval_network(ranked, gold.on_day(day))
    if not per_day:
        raise EmptyGold("gold network has no day-tagged links")
    tp = sum(r.true_positives for r in per_day.values())
    n_pred = sum(r.predicted for r in per_day.values())
    n_gold = sum(r.gold for r in per_day.values())
    mean_ap = sum(r.average_precision for r in per_day.values()) / len(per_day)
    return MetricsReport.from_counts(tp, tp, n_pred, n_gold, mean_ap), per_day


def round_robin_folds(cascades: Sequence, k: int = 10) -> list[tuple[list, list]]:
    """Interleaved splits: the i-th cascade by id goes to fold ``i mod k``."""
    if k < 2:
        raise ValueError("need at least two folds")
    if len(cascades) < k:
        raise ValueError(f"{len(cascades)} cascades cannot fill {k} folds")

    def cid(item):
        c = item[0] if isinstance(item, tuple) else item
        return c.cascade_id

    ordered = sorted(cascades, key=cid)
    return [
        ([x for r, x in enumerate(ordered) if r % k != f], ordered[f::k])
        for f in range(k)
    ]
