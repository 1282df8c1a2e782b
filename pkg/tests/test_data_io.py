import json

import pytest
from hypothesis import given, settings, strategies as st

from cascadetree.data_io import (
    CascadeRecord,
    GeneratorConfig,
    ParseError,
    ValidationError,
    cascade_to_record,
    day_of,
    generate_cascades,
    gold_site_links,
    is_flat,
    read_cascades,
    read_gold_network,
    read_records,
    record_to_cascade,
    write_cascades,
    write_gold_network,
    write_records,
)
from cascadetree.model import GoldLinks, TimeConstraints, validate_arborescence


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))


def node(i, site, ts, **kw):
    return {"id": i, "site": site, "timestamp": ts, **kw}


def test_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert read_cascades(p) == []


def test_duplicate_node_id(tmp_path):
    p = tmp_path / "dup.jsonl"
    write_lines(p, [{"cascade_id": "c", "nodes": [node("a", "x", 1), node("a", "y", 2)]}])
    with pytest.raises(ValidationError, match="duplicate"):
        read_cascades(p)


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps({"cascade_id": "c", "nodes": [node("a", "x", 1)]}) + "\n{oops\n")
    with pytest.raises(ParseError, match=":2:"):
        read_cascades(p)


@pytest.mark.parametrize(
    "record, message",
    [
        ({"nodes": [node("a", "x", 1)]}, "cascade_id"),
        ({"cascade_id": "c", "nodes": []}, "non-empty"),
        ({"cascade_id": "c", "nodes": [{"id": "a", "site": "x"}]}, "timestamp"),
        ({"cascade_id": "c", "nodes": [node("a", "x", 1.5)]}, "integer"),
        ({"cascade_id": "c", "nodes": [node("a", "x", 1)],
          "gold_links": [{"parent_id": "z", "child_id": "a"}]}, "not a node"),
        ({"cascade_id": "c", "nodes": [node("a", "x", 1), node("b", "x", 2)],
          "gold_links": [{"parent_id": "a", "child_id": "b"}]}, "one site"),
    ],
)
def test_validation_errors(tmp_path, record, message):
    p = tmp_path / "r.jsonl"
    write_lines(p, [record])
    with pytest.raises(ValidationError, match=message):
        read_cascades(p)


def test_gold_mapping_and_text_normalisation(tmp_path):
    p = tmp_path / "g.jsonl"
    rec = {
        "cascade_id": "c",
        "nodes": [node("b", "y", 20, text="Hello, again"), node("a", "x", 10, text="hello world")],
        "gold_links": [{"parent_id": "a", "child_id": "b"}],
    }
    write_lines(p, [rec])
    [(cascade, gold)] = read_cascades(p)
    assert [v.id for v in cascade.nodes] == ["a", "b"]
    assert cascade.node(1).text_tokens == {"hello", "world"}
    assert gold.parents == {1: frozenset({0}), 2: frozenset({1})}


def test_missing_gold_is_none(tmp_path):
    p = tmp_path / "nogold.jsonl"
    write_lines(p, [{"cascade_id": "c", "nodes": [node("a", "x", 1)]}])
    [(_, gold)] = read_cascades(p)
    assert gold is None


def test_round_trip_on_canonical_records(tmp_path):
    records = generate_cascades(GeneratorConfig(n_cascades=30, seed=4, tree_only=False))
    pairs = [record_to_cascade(r) for r in records]
    p = tmp_path / "rt.jsonl"
    write_cascades(p, pairs)
    again = read_cascades(p)
    assert again == pairs
    q = tmp_path / "rt2.jsonl"
    write_cascades(q, again)
    assert p.read_bytes() == q.read_bytes()


names = st.text("abcxyz", min_size=1, max_size=4)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(names, st.integers(0, 10**6), st.text("ab ,.!", max_size=12)),
                min_size=1, max_size=6, unique_by=lambda t: t[0]))
def test_round_trip_property(tmp_path_factory, rows):
    nodes = [node(i, f"site-{i}", ts, text=text) for i, ts, text in rows]
    rec = CascadeRecord("c", nodes, None)
    cascade, _ = record_to_cascade(rec)
    canonical = cascade_to_record(cascade)
    assert record_to_cascade(canonical)[0] == cascade
    p = tmp_path_factory.mktemp("rt") / "x.jsonl"
    write_records(p, [canonical])
    assert read_records(p) == [canonical]


def test_gold_network_files(tmp_path):
    rec = {
        "cascade_id": "c",
        "nodes": [node("a", "x", 0), node("b", "y", 86400 + 5), node("c", "x", 90000)],
        "gold_links": [{"parent_id": "a", "child_id": "b"}, {"parent_id": "b", "child_id": "c"}],
    }
    pair = record_to_cascade(CascadeRecord(rec["cascade_id"], rec["nodes"], rec["gold_links"]))
    assert gold_site_links([pair]) == {("x", "y"), ("y", "x")}
    daily = gold_site_links([pair], per_day=True)
    assert daily == {("x", "y", 1), ("y", "x", 1)}
    p = tmp_path / "net.csv"
    write_gold_network(p, daily)
    assert p.read_text() == "x,y,1\ny,x,1\n"
    assert read_gold_network(p) == daily
    p.write_text("x,y\na,b,c,d\n")
    with pytest.raises(ParseError, match=":2:"):
        read_gold_network(p)


def test_day_of_uses_utc_days():
    assert day_of(0) == 0 and day_of(86399) == 0 and day_of(86400) == 1


# -- generator -------------------------------------------------------------------


@pytest.fixture(scope="module")
def thousand():
    return generate_cascades(GeneratorConfig(n_cascades=1000, seed=11))


def test_flat_fraction_within_three_points(thousand):
    share = sum(map(is_flat, thousand)) / len(thousand)
    assert abs(share - 0.84) <= 0.03


def test_generated_cascades_are_valid_trees(thousand):
    for rec in thousand:
        assert 5 <= len(rec.nodes) <= 100
        cascade, gold = record_to_cascade(rec)
        assert gold.is_tree
        assert validate_arborescence(cascade, gold.to_arborescence(), TimeConstraints())
        ts = {v["id"]: v["timestamp"] for v in rec.nodes}
        site = {v["id"]: v["site"] for v in rec.nodes}
        for link in rec.gold_links:
            assert ts[link["parent_id"]] < ts[link["child_id"]]
            assert site[link["parent_id"]] != site[link["child_id"]]


def test_flat_fraction_one_gives_stars():
    recs = generate_cascades(GeneratorConfig(n_cascades=50, flat_fraction=1.0, seed=2))
    assert all(is_flat(r) for r in recs)


def test_copy_noise_zero_copies_seed_text():
    for rec in generate_cascades(GeneratorConfig(n_cascades=20, copy_noise=0.0, seed=5)):
        cascade, gold = record_to_cascade(rec)
        seed_tokens = cascade.node(1).text_tokens
        assert all(v.text_tokens == seed_tokens for v in cascade.nodes)


def test_generator_is_deterministic(tmp_path):
    config = GeneratorConfig(n_cascades=40, seed=9)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_records(a, generate_cascades(config))
    write_records(b, generate_cascades(config))
    assert a.read_bytes() == b.read_bytes()
    write_records(b, generate_cascades(GeneratorConfig(n_cascades=40, seed=10)))
    assert a.read_bytes() != b.read_bytes()


def test_dag_gold_when_not_tree_only():
    recs = generate_cascades(GeneratorConfig(n_cascades=100, tree_only=False, flat_fraction=0.0, seed=1))
    golds = [record_to_cascade(r)[1] for r in recs]
    assert any(not g.is_tree for g in golds)
    assert all(isinstance(g, GoldLinks) for g in golds)


def test_generator_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(size_range=(0, 10))
    with pytest.raises(ValueError):
        GeneratorConfig(size_range=(5, 101))
    with pytest.raises(ValueError):
        GeneratorConfig(flat_fraction=1.5)
    with pytest.raises(ValueError):
        GeneratorConfig(copy_noise=-0.1)
