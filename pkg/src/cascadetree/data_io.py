"""Cascade JSON Lines files, gold network CSVs and a synthetic generator.

A cascade record is one JSON object per line::

    {"cascade_id": "c1",
     "nodes": [{"id": "a", "site": "s1", "timestamp": 100,
                "language": "en", "content_type": "blog", "text": "..."}],
     "gold_links": [{"parent_id": "a", "child_id": "b"}]}

``gold_links`` is optional.  When present, a node without any incoming link
is a seed and attaches to the dummy root; an explicit ``"parent_id": null``
means the same thing.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .features import normalize_text
from .model import DEFAULT_ROOT_WINDOW, Cascade, CascadeError, GoldLinks, Node

EPOCH_2011_01_13 = 1294876800
DAY_SECONDS = 86400


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass
class CascadeRecord:
    cascade_id: str
    nodes: list[dict]
    gold_links: list[dict] | None = None

    def to_json(self) -> dict:
        out = {"cascade_id": self.cascade_id, "nodes": self.nodes}
        if self.gold_links is not None:
            out["gold_links"] = self.gold_links
        return out


def _validate_record(obj: dict, where: str) -> CascadeRecord:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: record must be a JSON object")
    for key in ("cascade_id", "nodes"):
        if key not in obj:
            raise ValidationError(f"{where}: missing {key!r}")
    nodes = obj["nodes"]
    if not isinstance(nodes, list) or not nodes:
        raise ValidationError(f"{where}: 'nodes' must be a non-empty list")
    sites = {}
    for v in nodes:
        for key in ("id", "site", "timestamp"):
            if v.get(key) is None:
                raise ValidationError(f"{where}: node missing {key!r}")
        if not isinstance(v["timestamp"], int) or isinstance(v["timestamp"], bool):
            raise ValidationError(f"{where}: timestamp of {v['id']!r} must be an integer")
        if v["id"] in sites:
            raise ValidationError(f"{where}: duplicate node id {v['id']!r}")
        sites[v["id"]] = v["site"]
    gold = obj.get("gold_links")
    if gold is not None:
        for link in gold:
            child, parent = link.get("child_id"), link.get("parent_id")
            if child not in sites:
                raise ValidationError(f"{where}: gold link child {child!r} is not a node")
            if parent is None:
                continue
            if parent not in sites:
                raise ValidationError(f"{where}: gold link parent {parent!r} is not a node")
            if sites[parent] == sites[child]:
                raise ValidationError(f"{where}: gold link {parent!r}->{child!r} joins one site")
    return CascadeRecord(str(obj["cascade_id"]), nodes, gold)


def record_to_cascade(
    record: CascadeRecord, root_window_seconds: int | None = DEFAULT_ROOT_WINDOW
) -> tuple[Cascade, GoldLinks | None]:
    nodes = []
    for v in record.nodes:
        text = v.get("text")
        nodes.append(
            Node(
                id=str(v["id"]),
                site=str(v["site"]),
                timestamp=int(v["timestamp"]),
                language=v.get("language"),
                content_type=v.get("content_type"),
                text_tokens=None if text is None else normalize_text(text),
            )
        )
    cascade = Cascade(record.cascade_id, tuple(nodes), root_window_seconds)
    if record.gold_links is None:
        return cascade, None
    parents: dict[int, set[int]] = {i: set() for i in range(1, cascade.n + 1)}
    for link in record.gold_links:
        i = cascade.index_of(str(link["child_id"]))
        p = link.get("parent_id")
        parents[i].add(0 if p is None else cascade.index_of(str(p)))
    for i, ps in parents.items():
        if not ps:
            ps.add(0)
    return cascade, GoldLinks({i: frozenset(ps) for i, ps in parents.items()})


def cascade_to_record(cascade: Cascade, gold: GoldLinks | None = None) -> CascadeRecord:
    nodes = []
    for v in cascade.nodes:
        d = {"id": v.id, "site": v.site, "timestamp": v.timestamp}
        if v.language is not None:
            d["language"] = v.language
        if v.content_type is not None:
            d["content_type"] = v.content_type
        if v.text_tokens is not None:
            d["text"] = " ".join(sorted(v.text_tokens))
        nodes.append(d)
    links = None
    if gold is not None:
        links = [
            {"parent_id": cascade.node(j).id, "child_id": cascade.node(i).id}
            for i, ps in gold.parents.items()
            for j in sorted(ps)
            if j != 0
        ]
    return CascadeRecord(cascade.cascade_id, nodes, links)


def read_records(path) -> list[CascadeRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc.msg}") from exc
            records.append(_validate_record(obj, f"{path}:{lineno}"))
    return records


def read_cascades(
    path, root_window_seconds: int | None = DEFAULT_ROOT_WINDOW
) -> list[tuple[Cascade, GoldLinks | None]]:
    out = []
    for rec in read_records(path):
        try:
            out.append(record_to_cascade(rec, root_window_seconds))
        except CascadeError as exc:
            raise ValidationError(str(exc)) from exc
    return out


def write_records(path, records: Iterable[CascadeRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=False) + "\n")


def write_cascades(path, pairs: Iterable[tuple[Cascade, GoldLinks | None]]) -> None:
    write_records(path, (cascade_to_record(c, g) for c, g in pairs))


# -- gold networks -----------------------------------------------------------


def day_of(timestamp: int) -> int:
    """UTC day index (days since the epoch)."""
    return int(timestamp // DAY_SECONDS)


def gold_site_links(
    pairs: Iterable[tuple[Cascade, GoldLinks | None]], per_day: bool = False
) -> set[tuple]:
    """Site-level links implied by node-level gold; days follow the child post."""
    out = set()
    for cascade, gold in pairs:
        if gold is None:
            continue
        for i, ps in gold.parents.items():
            child = cascade.node(i)
            for j in ps:
                if j == 0:
                    continue
                src = cascade.node(j).site
                if src == child.site:
                    continue
                out.add((src, child.site, day_of(child.timestamp)) if per_day else (src, child.site))
    return out


def write_gold_network(path, links: Iterable[tuple]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for link in sorted(links):
            writer.writerow(link)


def read_gold_network(path) -> set[tuple]:
    out = set()
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            if len(row) == 2:
                out.add((row[0], row[1]))
            elif len(row) == 3:
                try:
                    out.add((row[0], row[1], int(row[2])))
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: day must be an integer") from exc
            else:
                raise ParseError(f"{path}:{lineno}: expected source,dest[,day]")
    return out


# -- synthetic generator -----------------------------------------------------

LANGUAGES = ("en", "es", "ja", "pt", "de", "fr")
CONTENT_TYPES = ("blog", "news", "social")


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for :func:`generate_cascades`.

    Lags are log-normal with median ``lag_median_seconds`` and log-space
    standard deviation ``lag_sigma``.  Sizes follow a truncated power law
    with exponent ``size_exponent`` (0 gives a uniform size distribution).
    """

    n_cascades: int = 1000
    size_range: tuple[int, int] = (5, 100)
    size_exponent: float = 2.0
    flat_fraction: float = 0.84
    sites_pool_size: int = 500
    vocab_size: int = 5000
    tokens_per_doc: int = 20
    copy_noise: float = 0.3
    lag_median_seconds: float = 3600.0
    lag_sigma: float = 1.0
    language_homophily: float = 0.8
    tree_only: bool = True
    extra_link_prob: float = 0.3
    start_time: int = EPOCH_2011_01_13
    time_span_seconds: int = 32 * DAY_SECONDS
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.size_range
        object.__setattr__(self, "size_range", (int(lo), int(hi)))
        if not 1 <= lo <= hi <= 100:
            raise ValueError("size_range must lie within [1, 100]")
        for name in ("flat_fraction", "copy_noise", "language_homophily", "extra_link_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.n_cascades < 0 or self.sites_pool_size < 2 or self.vocab_size < 1:
            raise ValueError("n_cascades >= 0, sites_pool_size >= 2 and vocab_size >= 1 required")
        if self.lag_median_seconds <= 0 or self.lag_sigma < 0:
            raise ValueError("lag distribution parameters must be positive")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class _Site:
    name: str
    language: str
    content_type: str


def _make_sites(config: GeneratorConfig, rng: np.random.Generator) -> list[_Site]:
    width = len(str(config.sites_pool_size - 1))
    return [
        _Site(
            f"site{k:0{width}d}.example",
            LANGUAGES[int(rng.integers(len(LANGUAGES)))],
            CONTENT_TYPES[int(rng.integers(len(CONTENT_TYPES)))],
        )
        for k in range(config.sites_pool_size)
    ]


def _sample_size(config: GeneratorConfig, rng: np.random.Generator) -> int:
    lo, hi = config.size_range
    sizes = np.arange(lo, hi + 1)
    w = sizes.astype(float) ** -config.size_exponent
    return int(rng.choice(sizes, p=w / w.sum()))


def _pick_child_site(parent: _Site, sites, by_language, config, rng) -> _Site:
    while True:
        if rng.random() < config.language_homophily:
            pool = by_language[parent.language]
        else:
            pool = sites
        site = pool[int(rng.integers(len(pool)))]
        if site.name != parent.name:
            return site


def _one_cascade(cid: str, start: int, sites, by_language, config, rng) -> CascadeRecord:
    n = _sample_size(config, rng)
    vocab = config.vocab_size
    k = min(config.tokens_per_doc, vocab)
    seed_site = sites[int(rng.integers(len(sites)))]
    node_sites = [seed_site]
    times = [start]
    tokens = [list(rng.choice(vocab, size=k, replace=False))]
    parent = [None]

    flat = n == 1 or rng.random() < config.flat_fraction
    children_count = [0]
    for v in range(1, n):
        if flat:
            p = 0
        else:
            w = np.array(children_count, dtype=float) + 1.0
            p = int(rng.choice(v, p=w / w.sum()))
            if v == n - 1 and all(q == 0 for q in parent[1:]) and p == 0 and v > 1:
                p = int(rng.integers(1, v))  # guarantee a non-flat shape
        children_count[p] += 1
        children_count.append(0)
        parent.append(p)
        node_sites.append(_pick_child_site(node_sites[p], sites, by_language, config, rng))
        lag = max(1, int(round(rng.lognormal(math.log(config.lag_median_seconds), config.lag_sigma))))
        times.append(times[p] + lag)
        noise = rng.random(k) < config.copy_noise
        toks = [
            int(rng.integers(vocab)) if flip else t for t, flip in zip(tokens[p], noise)
        ]
        tokens.append(toks)

    ids = [f"{cid}-n{v:03d}" for v in range(n)]
    nodes = [
        {
            "id": ids[v],
            "site": node_sites[v].name,
            "timestamp": int(times[v]),
            "language": node_sites[v].language,
            "content_type": node_sites[v].content_type,
            "text": " ".join(f"w{t}" for t in tokens[v]),
        }
        for v in range(n)
    ]
    links = [{"parent_id": ids[parent[v]], "child_id": ids[v]} for v in range(1, n)]
    if not config.tree_only:
        for v in range(2, n):
            if rng.random() >= config.extra_link_prob:
                continue
            cands = [
                u
                for u in range(v)
                if u != parent[v]
                and times[u] < times[v]
                and node_sites[u].name != node_sites[v].name
            ]
            if cands:
                u = cands[int(rng.integers(len(cands)))]
                links.append({"parent_id": ids[u], "child_id": ids[v]})
    return CascadeRecord(cid, nodes, links)


def generate_cascades(config: GeneratorConfig) -> list[CascadeRecord]:
    """Synthetic cascades with known gold trees; deterministic given the seed."""
    root = np.random.SeedSequence(config.seed)
    site_seq, start_seq, *cascade_seqs = root.spawn(2 + config.n_cascades)
    sites = _make_sites(config, np.random.default_rng(site_seq))
    by_language: dict[str, list[_Site]] = {}
    for s in sites:
        by_language.setdefault(s.language, []).append(s)
    starts = np.sort(
        np.random.default_rng(start_seq).integers(
            config.start_time, config.start_time + config.time_span_seconds, config.n_cascades
        )
    )
    width = max(5, len(str(config.n_cascades)))
    return [
        _one_cascade(f"c{k:0{width}d}", int(starts[k]), sites, by_language, config,
                     np.random.default_rng(seq))
        for k, seq in enumerate(cascade_seqs)
    ]


def is_flat(record: CascadeRecord) -> bool:
    """All non-earliest nodes hang directly off the earliest node."""
    first = min(record.nodes, key=lambda v: (v["timestamp"], v["id"]))["id"]
    return all(link["parent_id"] == first for link in record.gold_links or [])
