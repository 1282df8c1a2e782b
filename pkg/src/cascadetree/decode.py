"""Maximum-score spanning arborescence (Chu-Liu-Edmonds)."""

from __future__ import annotations

import numpy as np

from .matrix_tree import EdgeMarginals, EdgeScores, NoValidTree, has_spanning_tree
from .model import Arborescence


def _find_cycle(best: dict[int, int]) -> list[int] | None:
    color: dict[int, int] = {}
    for start in sorted(best):
        path = []
        v = start
        while v in best and v not in color:
            color[v] = start
            path.append(v)
            v = best[v]
        if v in best and color.get(v) == start:
            return path[path.index(v):]
    return None


def _cle(nodes: list[int], edges: dict[tuple[int, int], float], root: int) -> dict[int, int]:
    incoming: dict[int, list[tuple[int, float]]] = {}
    for (h, d), w in edges.items():
        incoming.setdefault(d, []).append((h, w))
    best: dict[int, int] = {}
    for d in nodes:
        if d == root:
            continue
        cands = incoming.get(d)
        if not cands:
            raise NoValidTree(f"node {d} has no allowed parent")
        # highest score, then smallest parent index
        best[d] = min(cands, key=lambda hw: (-hw[1], hw[0]))[0]

    cycle = _find_cycle(best)
    if cycle is None:
        return best

    in_cycle = set(cycle)
    c = max(nodes) + 1
    cycle_in = {d: edges[best[d], d] for d in cycle}
    new_edges: dict[tuple[int, int], float] = {}
    origin: dict[tuple[int, int], tuple[int, int]] = {}
    for (h, d), w in sorted(edges.items()):
        if h in in_cycle and d in in_cycle:
            continue
        if d in in_cycle:
            key, w = (h, c), w - cycle_in[d]
        elif h in in_cycle:
            key = (c, d)
        else:
            key = (h, d)
        if key not in new_edges or w > new_edges[key]:
            new_edges[key] = w
            origin[key] = (h, d)

    sub = _cle([v for v in nodes if v not in in_cycle] + [c], new_edges, root)

    result = {d: best[d] for d in cycle}
    for d, h in sub.items():
        oh, od = origin[h, d]
        result[od] = oh
    return result


def best_tree(scores: EdgeScores) -> Arborescence:
    """Highest-scoring arborescence among mask-allowed edges."""
    if not has_spanning_tree(scores.mask):
        raise NoValidTree("constraints admit no spanning arborescence")
    n = scores.n
    edges = {
        (int(j), int(i)): float(scores.s[j, i]) for j, i in zip(*np.nonzero(scores.mask))
    }
    parent = _cle(list(range(n + 1)), edges, 0)
    return Arborescence(parent)


def marginal_argmax_tree(marginals: EdgeMarginals) -> Arborescence:
    """Per-child most probable parent.  The result need not be acyclic."""
    p = marginals.p
    return Arborescence({i: int(np.argmax(p[:, i])) for i in range(1, p.shape[0])})
