"""Command-line pipeline: generate -> train -> infer -> eval (plus baseline).

Settings resolve in three layers: built-in defaults, then an optional INI
file given with ``--config`` (one section per subcommand, e.g. ``[train]``),
then command-line flags.  The resolved settings are echoed to stderr as JSON.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data_io
from .decode import best_tree, marginal_argmax_tree
from .evaluate import (
    LinkSet,
    eval_cascade_level,
    eval_network,
    eval_network_per_day,
    naive_baseline,
    network_from_marginals,
    Granularity,
)
from .features import DEFAULT_TIME_BINS, FeatureConfig, build_alphabet
from .matrix_tree import EdgeMarginals, NoValidTree, NumericalFailure
from .model import Arborescence, Cascade, TimeConstraints, merge_with_gold
from .train import (
    CompiledDataset,
    DivergenceDetected,
    Model,
    TrainConfig,
    compile_dataset,
    fit,
)

log = logging.getLogger("cascadetree")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


DEFAULTS = {
    "generate": {
        "n": 1000,
        "seed": 0,
        "min_size": 5,
        "max_size": 100,
        "size_exponent": 2.0,
        "flat_fraction": 0.84,
        "copy_noise": 0.3,
        "sites": 500,
        "vocab": 5000,
        "dag": False,
        "merge_window": 0,
        "output": "cascades.jsonl",
        "gold_network": None,
        "per_day": False,
    },
    "train": {
        "input": None,
        "mode": "contrastive",
        "feature_set": "enhanced",
        "time_bins": ",".join(str(b) for b in DEFAULT_TIME_BINS),
        "jaccard_bin_width": 0.1,
        "root_window": 3600,
        "learning_rate": 5e-3,
        "iterations": 1500,
        "l2": 0.0,
        "init": "zeros",
        "seed": 0,
        "workers": 1,
        "model_out": "model.txt",
        "report_out": "train_report.json",
    },
    "infer": {
        "input": None,
        "model": None,
        "root_window": 3600,
        "decode": "map",
        "workers": 1,
        "trees_out": None,
        "marginals_out": None,
        "summary_out": None,
    },
    "eval": {
        "input": None,
        "mode": "cascade",
        "predictions": None,
        "marginals": None,
        "gold_network": None,
        "root_window": 3600,
        "top_k": 0,
        "output": None,
        "ranked_out": None,
    },
    "baseline": {
        "input": None,
        "root_window": 3600,
        "trees_out": None,
        "marginals_out": None,
    },
}

_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _coerce(key: str, raw, default):
    if raw is None or not isinstance(raw, str):
        return raw
    if key == "root_window":
        return None if raw.lower() in ("off", "none", "") else int(raw)
    if isinstance(default, bool):
        if raw.lower() not in _BOOL:
            raise UsageError(f"{key}: expected a boolean, got {raw!r}")
        return _BOOL[raw.lower()]
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise UsageError(f"{key}: {exc}") from exc
    return raw


def resolve(command: str, args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS[command])
    if args.config:
        parser = configparser.ConfigParser()
        if not parser.read(args.config, encoding="utf-8"):
            raise UsageError(f"cannot read config file {args.config!r}")
        if parser.has_section(command):
            for key, raw in parser.items(command):
                key = key.replace("-", "_")
                if key not in settings:
                    raise UsageError(f"[{command}] has unknown key {key!r}")
                settings[key] = _coerce(key, raw, DEFAULTS[command][key])
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = _coerce(key, value, DEFAULTS[command][key])
    print(json.dumps({"command": command, "config": settings}, sort_keys=True), file=sys.stderr)
    return settings


def _require(settings: dict, *keys: str) -> None:
    missing = [k for k in keys if settings.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


# -- shared file formats -----------------------------------------------------


def write_trees(path, cascades: list[Cascade], trees: list[Arborescence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for cascade, tree in zip(cascades, trees):
            links = [
                {"parent_id": None if j == 0 else cascade.node(j).id, "child_id": cascade.node(i).id}
                for i, j in tree.parent.items()
            ]
            fh.write(json.dumps({"cascade_id": cascade.cascade_id, "links": links}) + "\n")


def read_trees(path, cascades: dict[str, Cascade]) -> dict[str, Arborescence]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                cascade = cascades[obj["cascade_id"]]
                parent = {}
                for link in obj["links"]:
                    p = link["parent_id"]
                    parent[cascade.index_of(link["child_id"])] = 0 if p is None else cascade.index_of(p)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise data_io.ParseError(f"{path}:{lineno}: bad tree record ({exc})") from exc
            out[cascade.cascade_id] = Arborescence(parent)
    return out


def write_marginals(path, cascades: list[Cascade], marginals: list[EdgeMarginals]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cascade_id", "parent_id", "child_id", "probability"])
        for cascade, m in zip(cascades, marginals):
            for i in range(1, cascade.n + 1):
                for j in np.flatnonzero(m.p[:, i] > 0):
                    parent = "" if j == 0 else cascade.node(int(j)).id
                    writer.writerow([cascade.cascade_id, parent, cascade.node(i).id, repr(float(m.p[j, i]))])


def read_marginals(path, cascades: dict[str, Cascade]) -> dict[str, EdgeMarginals]:
    mats: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["cascade_id", "parent_id", "child_id", "probability"]:
            raise data_io.ParseError(f"{path}:1: unexpected marginals header {header}")
        for lineno, row in enumerate(reader, 2):
            try:
                cid, parent, child, prob = row
                cascade = cascades[cid]
                M = mats.setdefault(cid, np.zeros((cascade.n + 1, cascade.n + 1)))
                j = 0 if parent == "" else cascade.index_of(parent)
                M[j, cascade.index_of(child)] = float(prob)
            except (ValueError, KeyError) as exc:
                raise data_io.ParseError(f"{path}:{lineno}: bad marginal row ({exc})") from exc
    return {cid: EdgeMarginals(M) for cid, M in mats.items()}


def _load(settings) -> list:
    return data_io.read_cascades(settings["input"], settings["root_window"])


def _feature_config(settings) -> FeatureConfig:
    bins = tuple(float(x) for x in str(settings["time_bins"]).split(","))
    return FeatureConfig(settings["feature_set"], bins, float(settings["jaccard_bin_width"]))


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")


# -- subcommands -------------------------------------------------------------


def cmd_generate(settings: dict) -> int:
    config = data_io.GeneratorConfig(
        n_cascades=settings["n"],
        size_range=(settings["min_size"], settings["max_size"]),
        size_exponent=settings["size_exponent"],
        flat_fraction=settings["flat_fraction"],
        copy_noise=settings["copy_noise"],
        sites_pool_size=settings["sites"],
        vocab_size=settings["vocab"],
        tree_only=not settings["dag"],
        seed=settings["seed"],
    )
    records = data_io.generate_cascades(config)
    pairs = [data_io.record_to_cascade(r) for r in records]
    if settings["merge_window"]:
        pairs = merge_with_gold(pairs, settings["merge_window"])
    data_io.write_cascades(settings["output"], pairs)
    if settings["gold_network"]:
        links = data_io.gold_site_links(pairs, per_day=settings["per_day"])
        data_io.write_gold_network(settings["gold_network"], links)
    log.info("wrote %d cascades to %s", len(pairs), settings["output"])
    return EXIT_OK


def cmd_train(settings: dict) -> int:
    _require(settings, "input")
    pairs = _load(settings)
    mode = settings["mode"]
    if mode == "supervised":
        missing = [c.cascade_id for c, g in pairs if g is None]
        if missing:
            raise data_io.ValidationError(f"supervised training needs gold_links; missing for {missing[:5]}")
        bad = [c.cascade_id for c, g in pairs if g.to_arborescence() is None]
        if bad:
            raise data_io.ValidationError(f"supervised training needs tree gold; not a tree: {bad[:5]}")
    else:
        # contrastive training never looks at gold links
        pairs = [(c, None) for c, _ in pairs]
    fc = _feature_config(settings)
    constraints = TimeConstraints()
    alphabet = build_alphabet([c for c, _ in pairs], fc)
    data = compile_dataset(pairs, fc, constraints, alphabet, require_gold=mode == "supervised")
    tc = TrainConfig(
        mode=mode,
        learning_rate=settings["learning_rate"],
        iterations=settings["iterations"],
        l2_lambda=settings["l2"],
        init=settings["init"],
        seed=settings["seed"],
        workers=settings["workers"],
    )
    report = fit(data, tc)
    Model(report.final_theta, alphabet, fc).save(settings["model_out"])
    _write_json(settings["report_out"], report.to_json())
    print(json.dumps({"final_objective": report.final_objective, "converged": report.converged}))
    return EXIT_OK


def _compile_for_model(pairs, model: Model, with_gold: bool = False) -> CompiledDataset:
    items = pairs if with_gold else [(c, None) for c, _ in pairs]
    return compile_dataset(items, model.feature_config, TimeConstraints(), model.alphabet)


def cmd_infer(settings: dict) -> int:
    _require(settings, "input", "model")
    if not (settings["trees_out"] or settings["marginals_out"] or settings["summary_out"]):
        raise UsageError("nothing to write: pass --trees-out, --marginals-out or --summary-out")
    model = Model.load(settings["model"])
    pairs = _load(settings)
    data = _compile_for_model(pairs, model)
    marginals = data.marginals(model.weights, constrained=True, workers=settings["workers"])
    if settings["decode"] == "map":
        trees = [best_tree(s) for s in data.edge_scores(model.weights, constrained=True)]
    elif settings["decode"] == "marginal":
        trees = [marginal_argmax_tree(m) for m in marginals]
    else:
        raise UsageError(f"unknown decode mode {settings['decode']!r}")
    if settings["trees_out"]:
        write_trees(settings["trees_out"], data.cascades, trees)
    if settings["marginals_out"]:
        write_marginals(settings["marginals_out"], data.cascades, marginals)
    objective, _, _ = data.objective_and_gradient(model.weights)
    summary = {"cascades": len(data), "skipped": data.skipped, "contrastive_objective": objective}
    if settings["summary_out"]:
        _write_json(settings["summary_out"], summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_baseline(settings: dict) -> int:
    _require(settings, "input")
    if not (settings["trees_out"] or settings["marginals_out"]):
        raise UsageError("nothing to write: pass --trees-out or --marginals-out")
    cascades = [c for c, _ in _load(settings)]
    trees = [naive_baseline(c) for c in cascades]
    if settings["trees_out"]:
        write_trees(settings["trees_out"], cascades, trees)
    if settings["marginals_out"]:
        forced = []
        for c, t in zip(cascades, trees):
            p = np.zeros((c.n + 1, c.n + 1))
            for i, j in t.parent.items():
                p[j, i] = 1.0
            forced.append(EdgeMarginals(p))
        write_marginals(settings["marginals_out"], cascades, forced)
    return EXIT_OK


def cmd_eval(settings: dict) -> int:
    _require(settings, "input")
    pairs = _load(settings)
    by_id = {c.cascade_id: c for c, _ in pairs}
    mode = settings["mode"]
    ranked_lists = None
    if mode == "cascade":
        _require(settings, "predictions")
        trees = read_trees(settings["predictions"], by_id)
        kept = [(c, g) for c, g in pairs if g is not None]
        if not kept:
            raise data_io.ValidationError("cascade-level evaluation needs gold_links in --input")
        missing = [c.cascade_id for c, _ in kept if c.cascade_id not in trees]
        if missing:
            raise data_io.ValidationError(f"no prediction for cascades {missing[:5]}")
        report = eval_cascade_level([trees[c.cascade_id] for c, _ in kept], [g for _, g in kept],
                                    [c for c, _ in kept])
        result = json.loads(report.to_json())
    elif mode in ("network-static", "network-per-day"):
        _require(settings, "marginals")
        per_day = mode == "network-per-day"
        marg = read_marginals(settings["marginals"], by_id)
        cascades = [c for c, _ in pairs if c.cascade_id in marg]
        granularity = Granularity.PER_DAY if per_day else Granularity.STATIC
        ranked_lists = network_from_marginals(
            [marg[c.cascade_id] for c in cascades], cascades, settings["top_k"], granularity
        )
        if settings["gold_network"]:
            gold = LinkSet(data_io.read_gold_network(settings["gold_network"]))
        else:
            gold = LinkSet(data_io.gold_site_links(pairs, per_day=per_day))
        if per_day:
            report, days = eval_network_per_day(ranked_lists, gold)
            result = json.loads(report.to_json())
            result["days"] = {str(d): json.loads(r.to_json()) for d, r in days.items()}
        else:
            report = eval_network(ranked_lists[None], gold.static())
            result = json.loads(report.to_json())
    else:
        raise UsageError(f"unknown eval mode {mode!r}")
    result["mode"] = mode
    line = json.dumps(result, sort_keys=True)
    if settings["output"]:
        Path(settings["output"]).write_text(line + "\n", encoding="utf-8")
    if settings["ranked_out"] and ranked_lists is not None:
        with open(settings["ranked_out"], "w", encoding="utf-8") as fh:
            for key, ranked in ranked_lists.items():
                for a, b, s in ranked.entries:
                    fh.write(f"{a},{b},{s!r}" + ("" if key is None else f",{key}") + "\n")
    print(line)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    # all flags default to None so unset ones fall through to the config file
    parser = _Parser(prog="cascadetree", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="INI file; values under [%s] are used" % name)
        return p

    g = add("generate", "write synthetic cascades and their gold network")
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--min-size", type=int)
    g.add_argument("--max-size", type=int)
    g.add_argument("--size-exponent", type=float)
    g.add_argument("--flat-fraction", type=float)
    g.add_argument("--copy-noise", type=float)
    g.add_argument("--sites", type=int)
    g.add_argument("--vocab", type=int)
    g.add_argument("--dag", action="store_const", const=True, help="add extra gold parents")
    g.add_argument("--merge-window", type=int, help="merge cascades starting within N seconds")
    g.add_argument("--output")
    g.add_argument("--gold-network", help="CSV of site-level gold links")
    g.add_argument("--per-day", action="store_const", const=True)

    t = add("train", "fit model weights")
    t.add_argument("--input")
    t.add_argument("--mode", choices=["contrastive", "supervised"])
    t.add_argument("--feature-set", choices=["basic", "enhanced"])
    t.add_argument("--time-bins", help="comma-separated bin edges in seconds")
    t.add_argument("--jaccard-bin-width", type=float)
    t.add_argument("--root-window", help="seconds, or 'off'")
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--iterations", type=int)
    t.add_argument("--l2", type=float)
    t.add_argument("--init", choices=["zeros", "uniform_small"])
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--model-out")
    t.add_argument("--report-out")

    i = add("infer", "decode trees and edge posteriors with a trained model")
    i.add_argument("--input")
    i.add_argument("--model")
    i.add_argument("--root-window")
    i.add_argument("--decode", choices=["map", "marginal"])
    i.add_argument("--workers", type=int)
    i.add_argument("--trees-out")
    i.add_argument("--marginals-out")
    i.add_argument("--summary-out")

    e = add("eval", "score predictions against gold")
    e.add_argument("--input", help="cascades JSONL with gold_links")
    e.add_argument("--mode", choices=["cascade", "network-static", "network-per-day"])
    e.add_argument("--predictions", help="trees JSONL (cascade mode)")
    e.add_argument("--marginals", help="marginals CSV (network modes)")
    e.add_argument("--gold-network", help="gold CSV; derived from --input when omitted")
    e.add_argument("--root-window")
    e.add_argument("--top-k", type=int)
    e.add_argument("--output")
    e.add_argument("--ranked-out")

    b = add("baseline", "attach every node to the earliest node")
    b.add_argument("--input")
    b.add_argument("--root-window")
    b.add_argument("--trees-out")
    b.add_argument("--marginals-out")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        settings = resolve(args.command, args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(f"cascadetree: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoValidTree, NumericalFailure, DivergenceDetected, FloatingPointError) as exc:
        print(f"cascadetree: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"cascadetree: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
