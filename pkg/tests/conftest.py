import sys

import numpy as np
import pytest

from cascadetree.matrix_tree import EdgeScores, has_spanning_tree
from cascadetree.model import Cascade, Node


def make_cascade(timestamps, sites=None, ids=None, cascade_id="c", root_window=3600, **extra):
    n = len(timestamps)
    sites = sites or [f"s{k}" for k in range(n)]
    ids = ids or [f"v{k}" for k in range(n)]
    per_node = {key: vals for key, vals in extra.items()}
    nodes = []
    for k in range(n):
        fields = {key: vals[k] for key, vals in per_node.items()}
        nodes.append(Node(ids[k], sites[k], timestamps[k], **fields))
    return Cascade(cascade_id, tuple(nodes), root_window)


def random_scores(rng, n, density=None, low=-2.0, high=2.0):
    """Random scores with a mask admitting at least one tree (full mask if density is None)."""
    s = rng.uniform(low, high, (n + 1, n + 1))
    if density is None:
        return EdgeScores(s, np.ones((n + 1, n + 1), dtype=bool))
    while True:
        scores = EdgeScores(s, rng.random((n + 1, n + 1)) < density)
        if has_spanning_tree(scores.mask):
            return scores


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
