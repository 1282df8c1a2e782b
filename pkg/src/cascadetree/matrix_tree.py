"""Partition functions and edge posteriors over spanning arborescences.

Uses the directed matrix-tree theorem: the total weight of all arborescences
rooted at the dummy node 0 is the determinant of the Laplacian with row and
column 0 deleted.  Scores are shifted by their maximum before exponentiation
and the shift is added back as ``n * shift`` (every tree has ``n`` edges).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .features import FeatureAlphabet, FeatureConfig, extract_edge_features
from .model import Cascade, ConstraintSet, enumerate_parent_maps

BRUTE_FORCE_MAX_N = 8
_TINY_DET = 1e-300


class NoValidTree(ValueError):
    """The edge mask admits no spanning arborescence."""


class InstanceTooLarge(ValueError):
    pass


class NumericalFailure(ArithmeticError):
    """Determinant came out negative beyond tolerance, or similar breakdown."""


@dataclass(frozen=True)
class EdgeScores:
    """Log-scores ``s[j, i]`` and allowed-edge mask, both ``(n+1, n+1)``.

    Column 0 and the diagonal are always masked out.  Entries outside the
    mask are ignored (stored as 0).
    """

    s: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        mask = np.asarray(self.mask, dtype=bool).copy()
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape != mask.shape:
            raise ValueError("scores and mask must be matching (n+1, n+1) matrices")
        mask[:, 0] = False
        np.fill_diagonal(mask, False)
        if not np.all(np.isfinite(s[mask])):
            raise ValueError("allowed edges must have finite scores")
        s = np.where(mask, s, 0.0)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "mask", mask)

    @property
    def n(self) -> int:
        return self.s.shape[0] - 1

    def with_mask(self, mask: np.ndarray) -> EdgeScores:
        return EdgeScores(self.s, mask)

    def shifted(self, c: float) -> EdgeScores:
        return EdgeScores(np.where(self.mask, self.s + c, 0.0), self.mask)

    def tree_score(self, parents) -> float:
        """Sum of ``s[parent(i), i]``; ``parents`` is a mapping or a sequence for ``1..n``."""
        if hasattr(parents, "items"):
            items = parents.items()
        else:
            items = enumerate(parents, start=1)
        return float(sum(self.s[j, i] for i, j in items))


@dataclass(frozen=True)
class LaplacianWorkspace:
    L_reduced: np.ndarray
    log_det: float
    inverse: np.ndarray
    shift: float
    weights: np.ndarray  # u[j, i] = exp(s - shift), zero off-mask


@dataclass(frozen=True)
class EdgeMarginals:
    """Posterior ``p[j, i]`` of edge ``j -> i``; same layout as :class:`EdgeScores`."""

    p: np.ndarray

    def parent_distribution(self, i: int) -> np.ndarray:
        return self.p[:, i]


def build_scores(
    cascade: Cascade,
    theta: np.ndarray,
    config: FeatureConfig,
    constraints: ConstraintSet,
    alphabet: FeatureAlphabet,
) -> EdgeScores:
    theta = np.asarray(theta, dtype=float)
    if len(theta) != len(alphabet):
        raise ValueError(f"theta has {len(theta)} weights for {len(alphabet)} features")
    n = cascade.n
    mask = constraints.mask(cascade)
    s = np.zeros((n + 1, n + 1))
    for i in range(1, n + 1):
        for j in range(n + 1):
            if mask[j, i]:
                f = extract_edge_features(cascade, j, i, config, alphabet)
                s[j, i] = sum(theta[k] * v for k, v in f.items())
    return EdgeScores(s, mask)


def has_spanning_tree(mask: np.ndarray) -> bool:
    """True iff every node is reachable from the root through allowed edges."""
    n = mask.shape[0] - 1
    seen = np.zeros(n + 1, dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        j = frontier.pop()
        for i in np.flatnonzero(mask[j] & ~seen):
            seen[i] = True
            frontier.append(int(i))
    return bool(seen.all())


def reduced_laplacian(weights: np.ndarray) -> np.ndarray:
    """Root-deleted Laplacian from an ``(n+1, n+1)`` weight matrix.

    Entry ``[j-1, i-1]`` is ``-u(j, i)`` off the diagonal; the diagonal holds
    each child's total incoming weight, root edge included.
    """
    L = -weights[1:, 1:].copy()
    np.fill_diagonal(L, weights[:, 1:].sum(axis=0))
    return L


def laplacian_workspace(scores: EdgeScores, shift: float | None = None) -> LaplacianWorkspace:
    """Factor the reduced Laplacian; raises :class:`NoValidTree` if singular."""
    mask = scores.mask
    if not has_spanning_tree(mask):
        raise NoValidTree("constraints admit no spanning arborescence")
    if shift is None:
        shift = float(scores.s[mask].max())
    u = np.where(mask, np.exp(np.where(mask, scores.s - shift, 0.0)), 0.0)
    L = reduced_laplacian(u)
    lu, piv = scipy.linalg.lu_factor(L, check_finite=False)
    diag = np.diag(lu)
    swaps = np.count_nonzero(piv != np.arange(len(piv)))
    sign = (-1.0) ** swaps * np.prod(np.sign(diag))
    with np.errstate(divide="ignore"):
        log_det = float(np.sum(np.log(np.abs(diag))))
    if not np.isfinite(log_det) or log_det < np.log(_TINY_DET):
        raise NoValidTree("reduced Laplacian is numerically singular")
    if sign < 0:
        raise NumericalFailure("reduced Laplacian has a negative determinant")
    inverse = scipy.linalg.lu_solve((lu, piv), np.eye(len(L)), check_finite=False)
    return LaplacianWorkspace(L, log_det, inverse, shift, u)


def log_partition(scores: EdgeScores, shift: float | None = None) -> float:
    ws = laplacian_workspace(scores, shift)
    return ws.shift * scores.n + ws.log_det


def marginals_from_workspace(ws: LaplacianWorkspace) -> np.ndarray:
    u = ws.weights
    inv = ws.inverse
    p = np.zeros_like(u)
    d = np.diag(inv)
    p[0, 1:] = u[0, 1:] * d
    # p[j, i] = u(j, i) * (inv[i, i] - inv[i, j]) in reduced (0-based) coordinates
    p[1:, 1:] = u[1:, 1:] * (d[None, :] - inv.T)
    return np.clip(p, 0.0, 1.0)


def edge_marginals(scores: EdgeScores, shift: float | None = None) -> EdgeMarginals:
    ws = laplacian_workspace(scores, shift)
    p = marginals_from_workspace(ws)
    p[~scores.mask] = 0.0
    return EdgeMarginals(p)


def expected_features(
    cascade: Cascade,
    marginals: EdgeMarginals,
    config: FeatureConfig,
    alphabet: FeatureAlphabet,
) -> np.ndarray:
    grad = np.zeros(len(alphabet))
    p = marginals.p
    for j, i in zip(*np.nonzero(p)):
        for k, v in extract_edge_features(cascade, int(j), int(i), config, alphabet).items():
            grad[k] += p[j, i] * v
    return grad


def log_partition_gradient(
    cascade: Cascade,
    scores: EdgeScores,
    config: FeatureConfig,
    alphabet: FeatureAlphabet,
) -> np.ndarray:
    """Expected feature vector under the tree distribution of ``scores``."""
    return expected_features(cascade, edge_marginals(scores), config, alphabet)


def tree_features(
    cascade: Cascade, parents, config: FeatureConfig, alphabet: FeatureAlphabet
) -> np.ndarray:
    out = np.zeros(len(alphabet))
    for i, j in parents.items():
        for k, v in extract_edge_features(cascade, j, i, config, alphabet).items():
            out[k] += v
    return out


# -- brute-force oracle ----------------------------------------------------


def _is_arborescence(parents: tuple[int, ...]) -> bool:
    n = len(parents)
    for start in range(1, n + 1):
        v, steps = start, 0
        while v != 0:
            v = parents[v - 1]
            steps += 1
            if steps > n:
                return False
    return True


def enumerate_trees(mask: np.ndarray, max_n: int = BRUTE_FORCE_MAX_N):
    """Yield every mask-allowed arborescence as a parent tuple for ``1..n``."""
    n = mask.shape[0] - 1
    if n > max_n:
        raise InstanceTooLarge(f"brute force limited to n <= {max_n}, got {n}")
    for parents in enumerate_parent_maps(n):
        if all(mask[j, i] for i, j in enumerate(parents, start=1)) and _is_arborescence(parents):
            yield parents


def _tree_log_scores(scores: EdgeScores):
    trees = list(enumerate_trees(scores.mask))
    if not trees:
        raise NoValidTree("no allowed arborescence")
    logs = np.array([scores.tree_score(t) for t in trees])
    return trees, logs


def brute_force_log_partition(scores: EdgeScores) -> float:
    _, logs = _tree_log_scores(scores)
    return float(np.logaddexp.reduce(logs))


def brute_force_marginals(scores: EdgeScores) -> EdgeMarginals:
    trees, logs = _tree_log_scores(scores)
    probs = np.exp(logs - np.logaddexp.reduce(logs))
    p = np.zeros_like(scores.s)
    for t, w in zip(trees, probs):
        for i, j in enumerate(t, start=1):
            p[j, i] += w
    return EdgeMarginals(p)


def brute_force_best(scores: EdgeScores) -> tuple[tuple[int, ...], float]:
    trees, logs = _tree_log_scores(scores)
    k = int(np.argmax(logs))
    return trees[k], float(logs[k])
