"""Contrastive and supervised training of the edge-factored tree model.

Per-cascade quantities come in two flavours.  The single-cascade functions
(:func:`contrastive_log_likelihood`, :func:`supervised_log_likelihood`) go
through :mod:`cascadetree.matrix_tree` one cascade at a time.  Training uses
a :class:`CompiledDataset`, which extracts features once into a sparse
``(edges x features)`` matrix and evaluates many cascades at once by padding
their reduced Laplacians to a common size.  A padding node only has a root
edge of weight 1, which leaves determinants and real-node inverses intact.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse

from .features import (
    FeatureAlphabet,
    FeatureConfig,
    FeatureSet,
    edge_feature_table,
)
from .matrix_tree import (
    EdgeMarginals,
    EdgeScores,
    NoValidTree,
    NumericalFailure,
    build_scores,
    has_spanning_tree,
    log_partition,
)
from .model import (
    Arborescence,
    Cascade,
    ConstraintSet,
    FullConstraints,
    GoldLinks,
    validate_arborescence,
)

log = logging.getLogger(__name__)

FULL = FullConstraints()
_BUCKET = 4


class Mode(str, enum.Enum):
    CONTRASTIVE = "contrastive"
    SUPERVISED = "supervised"


class Init(str, enum.Enum):
    ZEROS = "zeros"
    UNIFORM_SMALL = "uniform_small"


class InvalidGoldTree(ValueError):
    pass


class DivergenceDetected(ArithmeticError):
    pass


class AllCascadesSkipped(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode = Mode.CONTRASTIVE
    learning_rate: float = 5e-3
    iterations: int = 1500
    l2_lambda: float = 0.0
    init: Init = Init.ZEROS
    seed: int = 0
    convergence_report_window: int = 100
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "init", Init(self.init))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")


@dataclass
class TrainReport:
    objective_trace: list[float]
    final_theta: np.ndarray
    converged: bool
    final_objective: float
    skipped: int = 0

    def to_json(self) -> dict:
        return {
            "iterations": len(self.objective_trace),
            "objective_trace": self.objective_trace,
            "final_objective": self.final_objective,
            "converged": self.converged,
            "skipped": self.skipped,
        }


# -- single-cascade objectives ---------------------------------------------


def contrastive_log_likelihood(
    cascade: Cascade,
    theta: np.ndarray,
    config: FeatureConfig,
    constraints: ConstraintSet,
    alphabet: FeatureAlphabet,
) -> float:
    """``log Z_C - log Z`` with a shift shared between both determinants."""
    full = build_scores(cascade, theta, config, FULL, alphabet)
    shift = float(full.s[full.mask].max())
    constrained = full.with_mask(constraints.mask(cascade))
    return log_partition(constrained, shift) - log_partition(full, shift)


def _check_gold(cascade: Cascade, gold: Arborescence) -> None:
    if not validate_arborescence(cascade, gold):
        raise InvalidGoldTree(f"gold for {cascade.cascade_id!r} is not a spanning arborescence")


def supervised_log_likelihood(
    cascade: Cascade,
    gold: Arborescence,
    theta: np.ndarray,
    config: FeatureConfig,
    alphabet: FeatureAlphabet,
) -> float:
    _check_gold(cascade, gold)
    full = build_scores(cascade, theta, config, FULL, alphabet)
    return full.tree_score(gold.parent) - log_partition(full)


# -- compiled, batched evaluation ------------------------------------------


@dataclass
class _Bucket:
    size: int
    members: np.ndarray  # cascade positions within the dataset
    ns: np.ndarray
    edge_rows: np.ndarray  # global edge indices
    b: np.ndarray
    j: np.ndarray
    i: np.ndarray


@dataclass
class CompiledDataset:
    """Features and masks for a list of cascades, ready for batched evaluation."""

    cascades: list[Cascade]
    golds: list[Arborescence | None]
    alphabet: FeatureAlphabet
    features: scipy.sparse.csr_matrix
    offsets: np.ndarray  # start of each cascade's edge block; len = N + 1
    edge_parent: np.ndarray
    edge_child: np.ndarray
    constrained: np.ndarray  # bool per edge
    gold_edge: np.ndarray  # bool per edge; all False without gold
    skipped: int = 0
    buckets: list[_Bucket] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.cascades)

    @property
    def ns(self) -> np.ndarray:
        return np.array([c.n for c in self.cascades])

    # scores and weights -------------------------------------------------

    def edge_scores_flat(self, theta: np.ndarray) -> np.ndarray:
        return self.features @ np.asarray(theta, dtype=float)

    def shifts(self, s: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(s, self.offsets[:-1])

    def _batch(self, bucket: _Bucket, u: np.ndarray, use_mask: np.ndarray | None):
        B, K = len(bucket.members), bucket.size
        W = np.zeros((B, K + 1, K + 1))
        w = u[bucket.edge_rows]
        if use_mask is not None:
            w = np.where(use_mask[bucket.edge_rows], w, 0.0)
        W[bucket.b, bucket.j, bucket.i] = w
        for r, n in enumerate(bucket.ns):
            W[r, 0, n + 1 :] = 1.0  # padding nodes hang off the root
        L = -W[:, 1:, 1:]
        idx = np.arange(K)
        L[:, idx, idx] = W[:, :, 1:].sum(axis=1)
        sign, logdet = np.linalg.slogdet(L)
        if np.any(sign <= 0) or not np.all(np.isfinite(logdet)):
            bad = bucket.members[(sign <= 0) | ~np.isfinite(logdet)]
            ids = [self.cascades[k].cascade_id for k in bad[:3]]
            if np.any(sign < 0):
                raise NumericalFailure(f"negative Laplacian determinant for {ids}")
            raise NoValidTree(f"singular Laplacian for {ids}")
        inv = np.linalg.inv(L)
        ci, cj = bucket.i - 1, bucket.j - 1
        diag = inv[bucket.b, ci, ci]
        off = np.where(bucket.j > 0, inv[bucket.b, ci, np.maximum(cj, 0)], 0.0)
        p = np.clip(w * (diag - off), 0.0, 1.0)
        return logdet, p

    def _evaluate(self, theta, which: Sequence[str], workers: int = 1):
        """Per-cascade log-partitions and flat marginals for each requested mask."""
        s = self.edge_scores_flat(theta)
        shift = self.shifts(s)
        per_edge_shift = np.repeat(shift, np.diff(self.offsets))
        u = np.exp(s - per_edge_shift)
        masks = {"full": None, "constrained": self.constrained}

        def run(bucket):
            return [self._batch(bucket, u, masks[w]) for w in which]

        if workers > 1 and len(self.buckets) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, self.buckets))
        else:
            results = [run(bk) for bk in self.buckets]

        N = len(self.cascades)
        out = {}
        for k, w in enumerate(which):
            logz = np.zeros(N)
            p = np.zeros(len(s))
            for bucket, res in zip(self.buckets, results):
                logdet, pb = res[k]
                logz[bucket.members] = logdet + self.ns[bucket.members] * shift[bucket.members]
                p[bucket.edge_rows] = pb
            out[w] = (logz, p)
        return s, out

    def log_partitions(self, theta, constrained: bool = False) -> np.ndarray:
        which = "constrained" if constrained else "full"
        return self._evaluate(theta, [which])[1][which][0]

    def objective_and_gradient(
        self, theta, mode: Mode = Mode.CONTRASTIVE, l2_lambda: float = 0.0, workers: int = 1
    ) -> tuple[float, np.ndarray, np.ndarray]:
        """Total objective, gradient and the per-cascade log-likelihoods."""
        theta = np.asarray(theta, dtype=float)
        mode = Mode(mode)
        if mode is Mode.CONTRASTIVE:
            s, res = self._evaluate(theta, ["constrained", "full"], workers)
            (logz_c, p_c), (logz, p) = res["constrained"], res["full"]
            per_cascade = logz_c - logz
            weights = p_c - p
        else:
            if not self.gold_edge.any():
                raise InvalidGoldTree("supervised mode needs gold trees for every cascade")
            s, res = self._evaluate(theta, ["full"], workers)
            logz, p = res["full"]
            gold_scores = np.add.reduceat(np.where(self.gold_edge, s, 0.0), self.offsets[:-1])
            per_cascade = gold_scores - logz
            weights = self.gold_edge.astype(float) - p
        grad = self.features.T @ weights
        objective = float(per_cascade.sum())
        if l2_lambda:
            objective -= l2_lambda * float(theta @ theta)
            grad = grad - 2.0 * l2_lambda * theta
        return objective, np.asarray(grad), per_cascade

    def _to_matrix(self, k: int, flat: np.ndarray) -> np.ndarray:
        n = self.cascades[k].n
        lo, hi = self.offsets[k], self.offsets[k + 1]
        M = np.zeros((n + 1, n + 1))
        M[self.edge_parent[lo:hi], self.edge_child[lo:hi]] = flat[lo:hi]
        return M

    def edge_scores(self, theta, constrained: bool = True) -> list[EdgeScores]:
        s = self.edge_scores_flat(theta)
        mask = self.constrained if constrained else np.ones(len(s), dtype=bool)
        out = []
        for k in range(len(self.cascades)):
            m = self._to_matrix(k, mask.astype(float)).astype(bool)
            out.append(EdgeScores(self._to_matrix(k, s), m))
        return out

    def marginals(self, theta, constrained: bool = True, workers: int = 1) -> list[EdgeMarginals]:
        which = "constrained" if constrained else "full"
        _, res = self._evaluate(theta, [which], workers)
        p = res[which][1]
        return [EdgeMarginals(self._to_matrix(k, p)) for k in range(len(self.cascades))]


def _as_tree(gold) -> Arborescence | None:
    if gold is None or isinstance(gold, Arborescence):
        return gold
    if isinstance(gold, GoldLinks):
        return gold.to_arborescence()
    return Arborescence(gold)


def compile_dataset(
    dataset: Sequence[tuple[Cascade, object]] | Sequence[Cascade],
    config: FeatureConfig,
    constraints: ConstraintSet,
    alphabet: FeatureAlphabet,
    require_gold: bool = False,
) -> CompiledDataset:
    """Extract features for every candidate edge and group cascades by size.

    Cascades whose constraint mask admits no tree are skipped and counted.
    With ``require_gold``, cascades with missing or non-tree gold are
    skipped as well.
    """
    pairs = [(d, None) if isinstance(d, Cascade) else (d[0], d[1]) for d in dataset]
    cascades, golds = [], []
    rows, cols = [], []
    parents, children, cmask, gmask, offsets = [], [], [], [], [0]
    skipped = 0
    for cascade, gold in pairs:
        mask = constraints.mask(cascade)
        tree = _as_tree(gold)
        if tree is not None and not validate_arborescence(cascade, tree):
            tree = None
        if not has_spanning_tree(mask) or (require_gold and tree is None):
            skipped += 1
            continue
        table = edge_feature_table(cascade, config, alphabet)
        base = offsets[-1]
        for r, feats in enumerate(table.rows):
            rows.extend([base + r] * len(feats))
            cols.extend(feats)
        parents.append(table.parents)
        children.append(table.children)
        cmask.append(mask[table.parents, table.children])
        if tree is not None:
            gp = np.array([tree.parent[int(i)] for i in table.children])
            gmask.append(gp == table.parents)
        else:
            gmask.append(np.zeros(len(table.parents), dtype=bool))
        offsets.append(base + len(table.rows))
        cascades.append(cascade)
        golds.append(tree)
    if skipped:
        log.warning("skipped %d cascade(s) without a valid tree", skipped)
    if not cascades:
        raise AllCascadesSkipped("no cascade admits a valid tree")
    n_edges = offsets[-1]
    F = scipy.sparse.csr_matrix(
        (np.ones(len(rows)), (np.array(rows), np.array(cols))),
        shape=(n_edges, len(alphabet)),
    )
    F.data[:] = 1.0  # guard against duplicate (row, col) pairs summing
    data = CompiledDataset(
        cascades=cascades,
        golds=golds,
        alphabet=alphabet,
        features=F,
        offsets=np.array(offsets),
        edge_parent=np.concatenate(parents),
        edge_child=np.concatenate(children),
        constrained=np.concatenate(cmask),
        gold_edge=np.concatenate(gmask),
        skipped=skipped,
    )
    data.buckets = _make_buckets(data)
    return data


def _make_buckets(data: CompiledDataset) -> list[_Bucket]:
    ns = data.ns
    sizes = (np.ceil(ns / _BUCKET) * _BUCKET).astype(int)
    buckets = []
    for size in sorted(set(sizes.tolist())):
        members = np.flatnonzero(sizes == size)
        edge_rows, bs = [], []
        for r, k in enumerate(members):
            lo, hi = data.offsets[k], data.offsets[k + 1]
            edge_rows.append(np.arange(lo, hi))
            bs.append(np.full(hi - lo, r))
        edge_rows = np.concatenate(edge_rows)
        buckets.append(
            _Bucket(
                size=size,
                members=members,
                ns=ns[members],
                edge_rows=edge_rows,
                b=np.concatenate(bs),
                j=data.edge_parent[edge_rows],
                i=data.edge_child[edge_rows],
            )
        )
    return buckets


def total_objective_and_gradient(
    data: CompiledDataset,
    theta: np.ndarray,
    mode: Mode = Mode.CONTRASTIVE,
    l2_lambda: float = 0.0,
    workers: int = 1,
) -> tuple[float, np.ndarray]:
    objective, grad, _ = data.objective_and_gradient(theta, mode, l2_lambda, workers)
    return objective, grad


def initial_theta(alphabet: FeatureAlphabet, config: TrainConfig) -> np.ndarray:
    theta = np.zeros(len(alphabet))
    if config.init is Init.UNIFORM_SMALL:
        rng = np.random.default_rng(config.seed)
        theta = rng.uniform(-1e-3, 1e-3, len(alphabet))
        theta[0] = 0.0  # unknown-feature slot stays at zero
    return theta


def _converged(trace: list[float], tol: float = 1e-6) -> bool:
    if len(trace) < 2:
        return False
    a, b = trace[-2], trace[-1]
    return abs(b - a) <= tol * max(abs(a), abs(b), 1e-300)


def fit(
    data: CompiledDataset,
    config: TrainConfig = TrainConfig(),
    theta0: np.ndarray | None = None,
) -> TrainReport:
    """Batch gradient ascent with a fixed step."""
    theta = initial_theta(data.alphabet, config) if theta0 is None else np.array(theta0, float)
    trace: list[float] = []
    for it in range(config.iterations):
        obj, grad, _ = data.objective_and_gradient(
            theta, config.mode, config.l2_lambda, config.workers
        )
        if not math.isfinite(obj) or not np.all(np.isfinite(grad)):
            raise DivergenceDetected(f"objective became non-finite at iteration {it}")
        trace.append(obj)
        theta = theta + config.learning_rate * grad
        if config.convergence_report_window and (it + 1) % config.convergence_report_window == 0:
            log.info("iteration %d objective %.6f", it + 1, obj)
    final, _, _ = data.objective_and_gradient(theta, config.mode, config.l2_lambda, config.workers)
    if not math.isfinite(final):
        raise DivergenceDetected("objective became non-finite after the last step")
    return TrainReport(trace, theta, _converged(trace), final, data.skipped)


# -- model files -------------------------------------------------------------


@dataclass
class Model:
    """Trained weights together with the feature setup that produced them."""

    weights: np.ndarray
    alphabet: FeatureAlphabet
    feature_config: FeatureConfig

    def save(self, path) -> None:
        fc = self.feature_config
        lines = [
            "# cascadetree model v1",
            f"# feature_set={fc.feature_set.value}",
            "# time_bin_edges=" + ",".join(repr(e) for e in fc.time_bin_edges),
            f"# jaccard_bin_width={fc.jaccard_bin_width!r}",
            f"# alphabet_sha256={self.alphabet.digest()}",
        ]
        for k, name in enumerate(self.alphabet.names):
            lines.append(f"{name}\t{float(self.weights[k])!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> Model:
        header: dict[str, str] = {}
        names, weights = [], []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    header[key] = value
            elif line:
                name, _, w = line.rpartition("\t")
                names.append(name)
                weights.append(float(w))
        if not all(math.isfinite(w) for w in weights):
            raise ValueError(f"{path}: weights must be finite")
        alphabet = FeatureAlphabet(names[1:]).freeze()
        if alphabet.names != names:
            raise ValueError(f"{path}: feature names must start with the unknown slot and be unique")
        if "alphabet_sha256" in header and header["alphabet_sha256"] != alphabet.digest():
            raise ValueError(f"{path}: alphabet hash mismatch")
        fc = FeatureConfig(
            feature_set=FeatureSet(header.get("feature_set", "enhanced")),
            time_bin_edges=tuple(float(x) for x in header["time_bin_edges"].split(",")),
            jaccard_bin_width=float(header["jaccard_bin_width"]),
        )
        return cls(np.array(weights), alphabet, fc)
