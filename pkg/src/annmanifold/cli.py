"""``annmanifold`` command line.

Exit codes: 0 success, 2 invalid configuration, 3 data or format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from annmanifold import bench
from annmanifold import distributions as dist_mod
from annmanifold.ann import BACKENDS, knn_graph
from annmanifold.core import (Embedding, PointCloud, read_embedding_csv, read_graph, read_points_csv,
                              write_embedding_csv, write_graph, write_points_csv)
from annmanifold.errors import AnnManifoldError, InvalidInput, InvalidParameter
from annmanifold.manifold import ALGORITHMS, embed
from annmanifold.metrics import Metric
from annmanifold.quality import density_anomalies, quality_report

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# flag dest -> RunConfig field
_FLAG_FIELDS = {
    "backend": "backend", "metric": "metric", "k": "k", "dim": "d", "epsilon": "epsilon",
    "n_trees": "n_trees", "search_k": "search_k", "n_links": "n_links", "ef": "ef", "seed": "seed",
    "bins": "bins", "mode": "mode", "out": "out", "dataset": "dataset", "input": "path", "n": "n",
    "method": "algorithms", "quality_k": "quality_k", "count": "anomalies", "household": "household",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, *, out_default=None):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--backend", choices=BACKENDS)
    p.add_argument("--metric", choices=("l2", "l1"))
    p.add_argument("--k", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--n-trees", type=int)
    p.add_argument("--search-k", type=int)
    p.add_argument("--n-links", type=int)
    p.add_argument("--ef", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--mode", choices=dist_mod.MODES)
    p.add_argument("--out", default=out_default)


def _dataset_args(p):
    p.add_argument("--dataset", choices=bench.DATASETS)
    p.add_argument("--input", help="data file (points CSV, IDX images or long CSV)")
    p.add_argument("--n", type=int, help="keep the first N MNIST images / synthetic size")
    p.add_argument("--household", help="household id to expand into period slots (long CSV)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="annmanifold", description="ANN graphs, manifold embeddings and embedding quality.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="convert a dataset to a points CSV")
    _common(p)
    _dataset_args(p)

    p = sub.add_parser("knn", help="K-nearest-neighbor graph of a points CSV")
    _common(p)
    p.add_argument("--input", required=True)

    p = sub.add_parser("embed", help="embed a points CSV through a neighbor graph")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--graph", help="graph file from `knn`; built on the fly if omitted")
    p.add_argument("--method", choices=ALGORITHMS, default="isomap")

    p = sub.add_parser("quality", help="quality measures of an embedding against its inputs")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--embedding", required=True)
    p.add_argument("--quality-k", type=int)

    p = sub.add_parser("sweep", help="parameter sweep over ANN backends")
    _common(p, out_default=None)
    _dataset_args(p)
    p.add_argument("--backends", help="comma list, default kdtree,annoy,hnsw")
    p.add_argument("--methods", help="comma list of manifold algorithms to score per point")
    p.add_argument("--epsilons", help="comma list overriding the default epsilon grid")
    p.add_argument("--trees", help="comma list overriding the default n_trees grid")
    p.add_argument("--links", help="comma list overriding the default n_links grid")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--parallel", action="store_true")

    p = sub.add_parser("pipeline", help="ingest, graph, embed, score and flag anomalies")
    _common(p)
    _dataset_args(p)
    p.add_argument("--method", choices=ALGORITHMS)

    p = sub.add_parser("anomaly", help="lowest-density points of a 2-d embedding")
    p.add_argument("--embedding", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--out")
    return ap


def _config(args) -> bench.RunConfig:
    values = bench.read_config(args.config) if getattr(args, "config", None) else {}
    flags = {}
    for dest, name in _FLAG_FIELDS.items():
        v = getattr(args, dest, None)
        if v is None:
            continue
        if dest == "metric":
            v = Metric.parse(v).value
        if dest == "method":
            v = (v,)
        flags[name] = v
    for dest, name in (("backends", "backends"), ("methods", "algorithms"), ("epsilons", "epsilons"),
                       ("trees", "trees"), ("links", "links")):
        v = getattr(args, dest, None)
        if v is not None:
            flags[name] = v
    if getattr(args, "parallel", False):
        flags["parallel"] = True
    cfg = bench.RunConfig.from_mapping(values)
    return bench.RunConfig.from_mapping(flags, base=cfg).validate()


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_ingest(args) -> int:
    cfg = _config(args)
    cloud, _ = bench.load_dataset(cfg)
    out = cfg.out
    if out is None:
        raise InvalidParameter("ingest needs --out")
    write_points_csv(cloud, out)
    print(f"wrote {cloud.n} x {cloud.p} points to {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_knn(args) -> int:
    cfg = _config(args)
    cloud = read_points_csv(args.input)
    g = knn_graph(cloud, cfg.k, cfg.backend, cfg.query, cfg.build, cfg.metric)
    if args.out:
        write_graph(g, args.out)
    else:
        from annmanifold.core import format_graph
        sys.stdout.write(format_graph(g))
    print(f"{cfg.backend}: {g.n} x {g.k} graph in {g.seconds:.3f}s", file=sys.stderr)
    return EXIT_OK


def _cmd_embed(args) -> int:
    cfg = _config(args)
    cloud = read_points_csv(args.input)
    if args.graph:
        g = read_graph(args.graph, cfg.metric)
        if g.n != cloud.n:
            raise InvalidInput(f"graph has {g.n} rows but {args.input} has {cloud.n} points")
    else:
        g = knn_graph(cloud, cfg.k, cfg.backend, cfg.query, cfg.build, cfg.metric)
    emb = embed(cloud, g, args.method, cfg.d)
    out = args.out or "embedding.csv"
    write_embedding_csv(emb, out, cloud.ids)
    print(f"{args.method}: {emb.n} x {emb.d} embedding written to {out}", file=sys.stderr)
    return EXIT_OK


def _align(cloud: PointCloud, labels: list) -> np.ndarray:
    names = [str(i) for i in (cloud.ids if cloud.ids is not None else range(cloud.n))]
    pos = {n: r for r, n in enumerate(names)}
    try:
        return np.array([pos[str(l)] for l in labels], dtype=np.int64)
    except KeyError as exc:
        raise InvalidInput(f"embedding id {exc.args[0]} not among the input points") from None


def _cmd_quality(args) -> int:
    cfg = _config(args)
    cloud = read_points_csv(args.input)
    emb, labels = read_embedding_csv(args.embedding)
    rows = _align(cloud, labels)
    emb = Embedding(emb.coords, rows, method="external")
    qk = args.quality_k if args.quality_k is not None else cfg.quality_k
    rep = quality_report(cloud, emb, qk, cfg.metric)
    _emit(rep.to_json() + "\n", args.out)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out or f"sweep.{args.format}")
    rows = []

    def progress(rec):
        rows.append(rec)
        # rewrite after each point so an interrupted sweep leaves a usable file
        bench.emit_reports(rows, out, args.format, cfg.algorithms)
        err = f" error={rec.errors}" if rec.errors else ""
        print(f"{rec.backend} {rec.params} seconds={rec.seconds:.4f} recall={rec.recall:.4f}{err}", file=sys.stderr)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bench.run_sweep(cfg, on_record=progress)
    print(f"{len(rows)} records written to {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    cfg = _config(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = bench.run_pipeline(cfg, args.method)
    for w in caught:
        print(f"notice: {w.message}", file=sys.stderr)
    for name, path in res.files.items():
        print(f"{name}: {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_anomaly(args) -> int:
    emb, labels = read_embedding_csv(args.embedding)
    rep = density_anomalies(emb, args.count)
    _emit(json.dumps(rep.to_dict(labels)) + "\n", args.out)
    return EXIT_OK


COMMANDS = {"ingest": _cmd_ingest, "knn": _cmd_knn, "embed": _cmd_embed, "quality": _cmd_quality,
            "sweep": _cmd_sweep, "pipeline": _cmd_pipeline, "anomaly": _cmd_anomaly}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except AnnManifoldError as exc:
        print(f"annmanifold {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"annmanifold {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
