"""ctxsearch command line: gen, subset, train, search, eval.

Exit codes: 0 success, 2 usage/config, 3 data/schema, 4 internal invariant.
"""

from __future__ import annotations

import argparse
import collections
import csv
import logging
import os
import sys

import numpy as np

from .config import BACKGROUND_NAME, ConfigError, apply_pairs, default_config, load_config, parse_pairs
from .evaluation import (
    FULL_STRATEGY,
    METHODS,
    PROPOSAL_RANK,
    SCENE_CONTEXT,
    budgets_for,
    corpus_ap,
    curve_full_strategy,
    curve_proposal_rank,
    curve_scene_context,
    train_scene_context,
    write_curves,
)
from .features import SceneArrays
from .policy import DegenerateDataError, SchemaError, TrainConfig, load_policy, save_policy
from .scene import generate_corpus, read_corpus, write_corpus
from .search import POLICY, DaggerConfig, _map, dagger_train, seq_explore, write_traces
from .subset import background_subset

log = logging.getLogger("ctxsearch")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _query_index(catalog, name: str) -> int:
    if name == BACKGROUND_NAME or name not in catalog.classes:
        raise UsageError(f"unknown query class {name!r}; catalog: {', '.join(catalog.classes)}")
    return catalog.index(name)


def _read_corpus(path):
    try:
        scenes = read_corpus(path)
    except FileNotFoundError:
        raise UsageError(f"corpus not found: {path}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from None
    if not scenes:
        raise DataError(f"corpus {path} is empty")
    return scenes


def _load_model(path):
    try:
        return load_policy(path)
    except FileNotFoundError:
        raise UsageError(f"model not found: {path}") from None
    except (ValueError, KeyError) as exc:
        raise SchemaError(f"{path}: {exc}") from None


def _check_writable(path):
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d) or not os.access(d, os.W_OK):
        raise UsageError(f"cannot write to {path}")


def _example_filter(scenes, query, k, seed, max_passes, scope):
    rows, labels, keys = [], [], []
    for s in scenes:
        arr = SceneArrays(s)
        rows.append(arr.unary)
        pos = arr.gt == query if scope == "query" else arr.gt >= 0
        labels.append(pos)
        keys.extend((s.id, int(i)) for i in arr.ids)
    sel, logdet = background_subset(np.vstack(rows), np.concatenate(labels), k,
                                    max_passes, seed)
    allowed = collections.defaultdict(set)
    for i in sel:
        sid, rid = keys[i]
        allowed[sid].add(rid)
    return dict(allowed), len(sel), logdet


def _parse_subset(spec):
    if spec == "none":
        return None
    kind, _, k = spec.partition(":")
    if kind != "doptimal":
        raise UsageError(f"--subset must be 'none' or 'doptimal[:k]', got {spec!r}")
    try:
        return int(k) if k else 0
    except ValueError:
        raise UsageError(f"bad subset size in {spec!r}") from None


def cmd_gen(args):
    overrides = []
    for item in args.set or ():
        overrides.extend(parse_pairs([item]))
    if args.top_k is not None:
        overrides.append(("top_k", str(args.top_k)))
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config not found: {args.config}")
        cfg = load_config(args.config, overrides)
    else:
        cfg = apply_pairs(default_config(), overrides).validate()
    n = args.n if args.n is not None else cfg.n_scenes
    if n <= 0:
        raise UsageError(f"--n must be positive, got {n}")
    _check_writable(args.out)
    scenes = generate_corpus(cfg, n, args.seed)
    write_corpus(args.out, scenes)
    counts = collections.Counter(r.gt_class for s in scenes for r in s.regions if r.gt_class >= 0)
    print(f"scenes: {len(scenes)}")
    for i, name in enumerate(cfg.catalog.classes):
        print(f"{name}: {counts.get(i, 0)}")
    return 0


def cmd_subset(args):
    if args.features:
        try:
            with open(args.features, newline="") as fh:
                rows = list(csv.reader(fh))
        except FileNotFoundError:
            raise UsageError(f"features not found: {args.features}") from None
        if rows and not _is_number(rows[0][1]):
            rows = rows[1:]
        try:
            ids = [r[0] for r in rows]
            X = np.array([[float(v) for v in r[1:7]] for r in rows])
            labels = np.array([int(float(r[7])) for r in rows])
        except (IndexError, ValueError) as exc:
            raise DataError(f"bad feature row: {exc}") from None
    else:
        if not (args.corpus and args.query):
            raise UsageError("subset needs --features or --corpus with --query")
        scenes = _read_corpus(args.corpus)
        q = _query_index(scenes[0].catalog, args.query)
        ids, X, labels = [], [], []
        for s in scenes:
            arr = SceneArrays(s)
            ids.extend(f"{s.id}:{i}" for i in arr.ids)
            X.append(arr.unary)
            labels.append((arr.gt == q).astype(int))
        X, labels = np.vstack(X), np.concatenate(labels)
    _check_writable(args.out)
    try:
        sel, logdet = background_subset(X, labels, args.k or None, args.max_passes, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with open(args.out, "w") as fh:
        for i in sel:
            fh.write(f"{ids[i]}\n")
        fh.write(f"# selected={len(sel)} logdet={logdet!r}\n")
    print(f"selected {len(sel)} of {len(X)} rows, logdet {logdet:.6f}")
    return 0


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def cmd_train(args):
    scenes = _read_corpus(args.corpus)
    catalog = scenes[0].catalog
    q = _query_index(catalog, args.query)
    subset_k = _parse_subset(args.subset)
    _check_writable(args.out)
    diag_path = args.diagnostics or args.out + ".diag.csv"
    _check_writable(diag_path)

    example_filter, subset_rows, subset_logdet = None, None, None
    if subset_k is not None:
        example_filter, subset_rows, subset_logdet = _example_filter(
            scenes, q, subset_k or None, args.seed, args.max_passes, args.subset_scope)

    tc = TrainConfig.for_catalog(catalog, full=args.schema == "full", l2=args.l2,
                                 class_weight=args.class_weight, seed=args.seed,
                                 query_class=q, iou_threshold=args.iou_threshold)
    try:
        if args.schema == "unary":
            policy = train_scene_context(scenes, q, tc, example_filter)
            diags = []
        else:
            budget = args.budget or max(len(s.regions) for s in scenes)
            dc = DaggerConfig(tc, beta0=args.beta0, val_fraction=args.val_fraction,
                              noise_seed=args.noise_seed, seed=args.seed,
                              threads=args.threads, example_filter=example_filter)
            policy, diags, _ = dagger_train(scenes, q, args.iterations, budget, dc)
    except DegenerateDataError as exc:
        raise DataError(str(exc)) from None
    save_policy(args.out, policy)
    with open(diag_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration", "beta", "examples_added", "aggregate_size",
                    "train_hamming", "val_hamming", "subset_rows", "subset_logdet"))
        for d in diags:
            w.writerow((d.iteration, repr(d.beta), d.examples_added, d.aggregate_size,
                        repr(d.train_hamming), repr(d.val_hamming),
                        "" if subset_rows is None else subset_rows,
                        "" if subset_logdet is None else repr(subset_logdet)))
    print(f"model written to {args.out} ({policy.schema}); diagnostics in {diag_path}")
    return 0


def cmd_search(args):
    policy = _load_model(args.model)
    scenes = _read_corpus(args.corpus)
    q = _query_index(scenes[0].catalog, args.query) if args.query else policy.query_class
    budget = args.budget or max(len(s.regions) for s in scenes)
    _check_writable(args.out)
    traces = _map(lambda s: seq_explore(policy, s, q, budget, POLICY,
                                        noise_seed=args.noise_seed), scenes, args.threads)
    write_traces(args.out, traces)
    print(f"{len(traces)} traces written to {args.out}; "
          f"AP@{budget} = {corpus_ap(scenes, traces, q):.4f}")
    return 0


def cmd_eval(args):
    scenes = _read_corpus(args.corpus)
    catalog = scenes[0].catalog
    q = _query_index(catalog, args.query)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    if SCENE_CONTEXT in methods and not args.scene_model:
        raise UsageError(f"method {SCENE_CONTEXT} needs --scene-model")
    if FULL_STRATEGY in methods and not args.model:
        raise UsageError(f"method {FULL_STRATEGY} needs --model")
    _check_writable(args.out)
    top_k = args.budget or max(len(s.regions) for s in scenes)
    budgets = budgets_for(top_k, args.interval)
    opts = dict(budgets=budgets, noise_seed=args.noise_seed, matching=args.matching,
                pooling=args.pooling)
    curves = []
    for m in methods:
        if m == PROPOSAL_RANK:
            curves.append(curve_proposal_rank(scenes, q, **opts))
        elif m == SCENE_CONTEXT:
            curves.append(curve_scene_context(_load_model(args.scene_model), scenes, q, **opts))
        else:
            curves.append(curve_full_strategy(_load_model(args.model), scenes, q, N=top_k,
                                              threads=args.threads, **opts))
    write_curves(args.out, curves, catalog)
    for c in curves:
        print(c.method, " ".join(f"{b}:{ap:.3f}" for b, ap in c.points))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxsearch", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    threads = dict(type=int, default=os.cpu_count() or 1,
                   help="worker threads for per-scene phases (results do not depend on it)")

    g = sub.add_parser("gen", help="generate a synthetic scene corpus")
    g.add_argument("--config", help="key=value GenConfig file")
    g.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override; wins over --config")
    g.add_argument("--n", type=int)
    g.add_argument("--top-k", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("subset", help="D-optimal background subset selection")
    s.add_argument("--features", help="CSV: row id, 6 unary columns, label")
    s.add_argument("--corpus")
    s.add_argument("--query")
    s.add_argument("--k", type=int, default=0, help="subset size (default 5x positives)")
    s.add_argument("--max-passes", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_subset)

    t = sub.add_parser("train", help="train a search policy")
    t.add_argument("--corpus", required=True)
    t.add_argument("--query", required=True)
    t.add_argument("--schema", choices=("full", "unary"), default="full")
    t.add_argument("--iterations", type=int, default=3)
    t.add_argument("--budget", type=int, help="rollout budget N (default top_k)")
    t.add_argument("--subset", default="none", help="none | doptimal[:k]")
    t.add_argument("--subset-scope", choices=("query", "global"), default="query")
    t.add_argument("--max-passes", type=int, default=20)
    t.add_argument("--beta0", type=float, default=0.0)
    t.add_argument("--val-fraction", type=float, default=0.2)
    t.add_argument("--l2", type=float, default=1e-4)
    t.add_argument("--class-weight", choices=("uniform", "balanced"), default="uniform")
    t.add_argument("--iou-threshold", type=float, default=0.3)
    t.add_argument("--noise-seed", type=int, default=0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--threads", **threads)
    t.add_argument("--out", required=True)
    t.add_argument("--diagnostics")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("search", help="roll out a trained policy")
    r.add_argument("--model", required=True)
    r.add_argument("--corpus", required=True)
    r.add_argument("--query")
    r.add_argument("--budget", type=int)
    r.add_argument("--noise-seed", type=int, default=0)
    r.add_argument("--threads", **threads)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_search)

    e = sub.add_parser("eval", help="AP vs. regions processed for each method")
    e.add_argument("--corpus", required=True)
    e.add_argument("--query", required=True)
    e.add_argument("--model", help="full-schema policy")
    e.add_argument("--scene-model", help="unary-schema policy")
    e.add_argument("--methods", default=",".join(METHODS))
    e.add_argument("--interval", type=int, default=10)
    e.add_argument("--budget", type=int)
    e.add_argument("--matching", choices=("id", "iou"), default="id")
    e.add_argument("--pooling", choices=("pooled", "per_image"), default="pooled")
    e.add_argument("--noise-seed", type=int, default=0)
    e.add_argument("--threads", **threads)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AssertionError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
