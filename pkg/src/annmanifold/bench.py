"""Dataset ingestion, parameter sweeps, reports and the end-to-end pipeline."""

from __future__ import annotations

import csv
import dataclasses
import gzip
import json
import math
import os
import struct
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from annmanifold import distributions as dist_mod
from annmanifold.ann import BuildParams, QueryParams, knn_graph, recall
from annmanifold.core import (Embedding, NeighborGraph, PointCloud, brute_force_knn, read_points_csv,
                              write_embedding_csv, write_graph)
from annmanifold.errors import AnnManifoldError, FormatError, InvalidInput, InvalidParameter
from annmanifold.manifold import ALGORITHMS, embed
from annmanifold.metrics import Metric
from annmanifold.quality import DensityReport, QualityReport, density_anomalies, quality_report

IDX_IMAGES_MAGIC = 0x00000803


# ---------------------------------------------------------------------------
# ingestion


def ingest_mnist_idx(path, limit: Optional[int] = None) -> PointCloud:
    """Images from an IDX3 file (optionally gzipped), flattened to rows of 0..255 reals.

    ``limit`` keeps the first images in file order.
    """
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream") from exc
    if len(raw) < 16:
        raise FormatError(f"{path}: too short for an IDX3 header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{path}: magic 0x{magic:08x} is not an IDX3 image file (0x{IDX_IMAGES_MAGIC:08x})")
    need = count * rows * cols
    if len(raw) - 16 < need:
        raise FormatError(f"{path}: payload truncated ({len(raw) - 16} of {need} bytes)")
    n = count if limit is None else min(int(limit), count)
    pix = np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16)
    return PointCloud(pix.reshape(n, rows * cols).astype(np.float64))


def write_mnist_idx(images: np.ndarray, path) -> None:
    """Write uint8 images (n, rows, cols) as an IDX3 file; used for fixtures."""
    images = np.asarray(images, dtype=np.uint8)
    n, r, c = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, r, c) + images.tobytes())


def manifold_sample(n: int, p: int = 50, latent: int = 5, noise: float = 0.01, seed: int = 0) -> np.ndarray:
    """Low-dimensional latent coordinates mapped smoothly into R^p, plus small noise."""
    rng = np.random.default_rng(seed)
    T = rng.uniform(-1.0, 1.0, (n, latent))
    W = rng.standard_normal((latent, p))
    b = rng.uniform(0.0, 2.0 * np.pi, p)
    return np.sin(T @ W + b) + noise * rng.standard_normal((n, p))


DATASETS = ("csv", "mnist", "long", "synthetic-household", "synthetic-households", "synthetic-manifold")


def load_dataset(cfg: "RunConfig") -> tuple[PointCloud, Metric]:
    """Points to embed and the metric that goes with them."""
    kind = cfg.dataset
    mode = cfg.mode
    if kind == "csv":
        return read_points_csv(_need_path(cfg)), Metric.parse(cfg.metric)
    if kind == "mnist":
        path = cfg.path or os.environ.get("MNIST_IDX")
        if not path:
            raise InvalidParameter("mnist dataset needs path= or the MNIST_IDX environment variable")
        return ingest_mnist_idx(path, cfg.n), Metric.parse(cfg.metric)
    if kind == "synthetic-manifold":
        return PointCloud(manifold_sample(cfg.n or 2000, cfg.p, seed=cfg.seed)), Metric.parse(cfg.metric)
    if kind in ("synthetic-household", "synthetic-households", "long"):
        if mode == "raw":
            raise InvalidParameter(f"dataset {kind} needs mode hellinger or tv")
        if kind == "synthetic-household":
            cloud, _ = dist_mod.household_cloud(dist_mod.synthetic_household(cfg.seed), cfg.bins, mode)
        else:
            data = (dist_mod.read_long_csv(_need_path(cfg)) if kind == "long"
                    else dist_mod.synthetic_households(cfg.n or 100, cfg.seed))
            if kind == "long" and cfg.household is not None:
                key = dist_mod._parse_id(str(cfg.household))
                if key not in data:
                    raise InvalidInput(f"household {cfg.household!r} not in {cfg.path}")
                cloud, _ = dist_mod.household_cloud(data[key], cfg.bins, mode)
            else:
                cloud, _ = dist_mod.households_cloud(data, cfg.bins, mode)
        return cloud, dist_mod.metric_for_mode(mode)
    raise InvalidParameter(f"unknown dataset {kind!r}; expected one of {DATASETS}")


def _need_path(cfg) -> str:
    if not cfg.path:
        raise InvalidParameter(f"dataset {cfg.dataset} needs path=")
    return cfg.path


# ---------------------------------------------------------------------------
# configuration


def _grid(start: float, stop: float, step: float) -> tuple:
    n = int(round((stop - start) / step)) + 1
    return tuple(round(start + i * step, 10) for i in range(n))


DEFAULT_EPSILONS = _grid(0.0, 5.0, 0.1)                      # 51 points
DEFAULT_TREES = tuple(range(2, 101, 2))                      # 50 points
DEFAULT_LINKS = tuple(range(2, 201, 2))                      # 100 points


@dataclass
class RunConfig:
    dataset: str = "synthetic-manifold"
    path: Optional[str] = None
    n: Optional[int] = None
    p: int = 50
    household: Optional[str] = None
    mode: str = "raw"
    bins: int = dist_mod.DEFAULT_BINS
    metric: str = "euclidean"
    k: int = 20
    d: int = 5
    quality_k: int = 20
    backend: str = "brute"
    backends: tuple = ("kdtree", "annoy", "hnsw")
    algorithms: tuple = ("isomap",)
    epsilon: float = 0.0
    n_trees: int = 50
    search_k: int = 500
    n_links: int = 16
    ef: Optional[int] = None
    ef_construction: int = 100
    epsilons: tuple = DEFAULT_EPSILONS
    trees: tuple = DEFAULT_TREES
    links: tuple = DEFAULT_LINKS
    seed: int = 0
    anomalies: int = 10
    parallel: bool = False
    workers: int = 2
    out: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> "RunConfig":
        if self.k < 1 or self.quality_k < 1 or self.d < 1:
            raise InvalidParameter("k, quality_k and d must be >= 1")
        if self.mode not in dist_mod.MODES:
            raise InvalidParameter(f"mode must be one of {dist_mod.MODES}")
        Metric.parse(self.metric)
        for b in (self.backend, *self.backends):
            if b not in ("brute", "kdtree", "annoy", "hnsw"):
                raise InvalidParameter(f"unknown backend {b!r}")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise InvalidParameter(f"unknown algorithm {a!r}; expected one of {ALGORITHMS}")
        if self.epsilon < 0 or any(e < 0 for e in self.epsilons):
            raise InvalidParameter("epsilon must be >= 0")
        return self

    @property
    def query(self) -> QueryParams:
        return QueryParams(self.epsilon, self.search_k, self.ef)

    @property
    def build(self) -> BuildParams:
        return BuildParams(n_trees=self.n_trees, n_links=self.n_links,
                           ef_construction=self.ef_construction, seed=self.seed)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_mapping(cls, values: dict, base: Optional["RunConfig"] = None) -> "RunConfig":
        """Build from string or typed values; unknown keys are an error."""
        base = base or cls()
        types = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in values.items():
            name = key.strip().replace("-", "_")
            name = _ALIASES.get(name, name)
            if name not in types:
                raise InvalidParameter(f"unknown configuration key {key!r}")
            kw[name] = _coerce(name, raw, getattr(base, name))
        return dataclasses.replace(base, **kw)


_ALIASES = {"dim": "d", "methods": "algorithms", "method": "algorithms", "input": "path",
            "epsilon_grid": "epsilons", "count": "anomalies"}
_INT_OPTIONAL = {"n", "ef"}
_STR_OPTIONAL = {"path", "household", "out"}


def _coerce(name: str, raw, default):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(raw, list) else raw
    text = raw.strip()
    try:
        if name in _INT_OPTIONAL:
            return None if text.lower() in ("", "none") else int(text)
        if name in _STR_OPTIONAL:
            return None if text.lower() in ("", "none") else text
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if name in ("epsilons",):
                return tuple(float(t) for t in items)
            if name in ("trees", "links"):
                return tuple(int(t) for t in items)
            return tuple(items)
        return text
    except ValueError:
        raise InvalidParameter(f"bad value for {name}: {raw!r}") from None


def read_config(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InvalidParameter(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameter(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# sweeps


PARAM_COLUMNS = ("epsilon", "n_trees", "search_k", "n_links", "ef")


@dataclass
class SweepRecord:
    backend: str
    params: dict
    seconds: float
    recall: float
    quality: dict = field(default_factory=dict)    # algorithm -> QualityReport
    errors: dict = field(default_factory=dict)     # stage or algorithm -> message
    parallel: bool = False

    def flat(self, algorithms, timing: bool = True) -> dict:
        row = {"backend": self.backend}
        for c in PARAM_COLUMNS:
            row[c] = self.params.get(c)
        if timing:
            row["seconds"] = self.seconds
        row["recall"] = self.recall
        row["parallel"] = self.parallel
        row["error"] = "; ".join(f"{k}: {v}" for k, v in sorted(self.errors.items())) or None
        for a in algorithms:
            rep = self.quality.get(a)
            for name in QualityReport.columns():
                row[f"{a}.{name}"] = None if rep is None else getattr(rep, name)
        return row

    @classmethod
    def from_flat(cls, row: dict, algorithms) -> "SweepRecord":
        params = {c: row[c] for c in PARAM_COLUMNS if row.get(c) is not None}
        quality = {}
        for a in algorithms:
            vals = {n: row.get(f"{a}.{n}") for n in QualityReport.columns()}
            if all(v is not None for v in vals.values()):
                quality[a] = QualityReport.from_dict(vals)
        errors = {}
        if row.get("error"):
            for part in str(row["error"]).split("; "):
                k, _, v = part.partition(": ")
                errors[k] = v
        return cls(row["backend"], params, row.get("seconds"), row["recall"], quality, errors,
                   bool(row.get("parallel")))


def grid_points(cfg: RunConfig) -> list[tuple[str, dict]]:
    pts = []
    for b in cfg.backends:
        if b == "kdtree":
            pts += [("kdtree", {"epsilon": float(e)}) for e in cfg.epsilons]
        elif b == "annoy":
            pts += [("annoy", {"n_trees": int(t), "search_k": cfg.search_k}) for t in cfg.trees]
        elif b == "hnsw":
            pts += [("hnsw", {"n_links": int(m), "ef": cfg.ef if cfg.ef is not None else 2 * cfg.k})
                    for m in cfg.links]
        elif b == "brute":
            pts.append(("brute", {}))
    return pts


def _params_for(cfg: RunConfig, backend: str, params: dict):
    q = QueryParams(params.get("epsilon", 0.0), params.get("search_k", cfg.search_k), params.get("ef", cfg.ef))
    b = BuildParams(n_trees=params.get("n_trees", cfg.n_trees), n_links=params.get("n_links", cfg.n_links),
                    ef_construction=cfg.ef_construction, seed=cfg.seed)
    return q, b


def _run_point(cfg: RunConfig, cloud: PointCloud, metric: Metric, exact: NeighborGraph,
               backend: str, params: dict) -> SweepRecord:
    q, b = _params_for(cfg, backend, params)
    rec = SweepRecord(backend, dict(params), float("nan"), float("nan"), parallel=cfg.parallel)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g = knn_graph(cloud, cfg.k, backend, q, b, metric)
    except AnnManifoldError as exc:
        rec.errors["knn"] = str(exc)
        return rec
    rec.seconds = float(g.seconds)
    rec.recall = recall(g, exact)
    for alg in cfg.algorithms:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                emb = embed(cloud, g, alg, cfg.d)
                rec.quality[alg] = quality_report(cloud, emb, cfg.quality_k, metric)
        except (AnnManifoldError, np.linalg.LinAlgError, ValueError) as exc:
            rec.errors[alg] = str(exc)
    return rec


def _warm_up(cfg, cloud, metric, backend, params):
    # compile kernels and touch caches once; the result is discarded
    small = PointCloud(cloud.points[:min(cloud.n, 4 * cfg.k + 8)])
    q, b = _params_for(cfg, backend, params)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            knn_graph(small, min(cfg.k, small.n - 1), backend, q, b, metric)
    except AnnManifoldError:
        pass


def run_sweep(cfg: RunConfig, on_record: Optional[Callable[[SweepRecord], None]] = None,
              cloud: Optional[PointCloud] = None, metric: Optional[Metric] = None) -> list[SweepRecord]:
    """Evaluate every grid point; a failing point is recorded, never fatal.

    The exact graph is computed once and every recall is measured against it.
    ``on_record`` receives rows in grid order as they complete.
    """
    if cloud is None:
        cloud, metric = load_dataset(cfg)
    metric = Metric.parse(metric or cfg.metric)
    exact = brute_force_knn(cloud, cfg.k, metric)
    points = grid_points(cfg)
    records = []
    if cfg.parallel and len(points) > 1:
        with ProcessPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
            futures = [pool.submit(_run_point, cfg, cloud, metric, exact, b, p) for b, p in points]
            for fut in futures:
                records.append(fut.result())
                if on_record:
                    on_record(records[-1])
        return records
    warmed = set()
    for backend, params in points:
        if backend not in warmed:
            _warm_up(cfg, cloud, metric, backend, params)
            warmed.add(backend)
        records.append(_run_point(cfg, cloud, metric, exact, backend, params))
        if on_record:
            on_record(records[-1])
    return records


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _uncell(name: str, text: str):
    if text == "":
        return None
    if name in ("backend", "error"):
        return text
    if name == "parallel":
        return text == "true"
    if name in ("n_trees", "search_k", "n_links", "ef") or name.endswith(".k"):
        return int(text)
    return float(text)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def emit_reports(records, path, fmt: str = "csv", algorithms=None, timing: bool = True) -> Path:
    """Write sweep rows as CSV or JSON.  ``timing=False`` drops the wall-clock column."""
    records = list(records)
    if not records:
        raise InvalidInput("no records to write")
    algorithms = tuple(algorithms) if algorithms is not None else _algorithms_of(records)
    rows = [r.flat(algorithms, timing) for r in records]
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(rows[0]))
            for row in rows:
                w.writerow([_cell(v) for v in row.values()])
    elif fmt == "json":
        path.write_text(json.dumps([{k: _json_value(v) for k, v in row.items()} for row in rows], indent=1) + "\n",
                        encoding="utf-8")
    else:
        raise InvalidParameter(f"unknown report format {fmt!r}")
    return path


def _algorithms_of(records) -> tuple:
    seen = []
    for r in records:
        for a in list(r.quality) + [k for k in r.errors if k in ALGORITHMS]:
            if a not in seen:
                seen.append(a)
    return tuple(a for a in ALGORITHMS if a in seen)


def read_reports(path, fmt: Optional[str] = None) -> tuple[list[SweepRecord], tuple]:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [{k: _uncell(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]
    elif fmt == "json":
        rows = json.loads(path.read_text(encoding="utf-8"))
        for row in rows:
            for k, v in row.items():
                if v in ("inf", "-inf"):
                    row[k] = float(v)
    else:
        raise InvalidParameter(f"unknown report format {fmt!r}")
    if not rows:
        return [], ()
    algorithms = tuple(dict.fromkeys(k.split(".")[0] for k in rows[0] if "." in k))
    for row in rows:
        for k in ("recall", "seconds"):
            if k in row and row[k] is None:
                row[k] = float("nan")
    return [SweepRecord.from_flat(r, algorithms) for r in rows], algorithms


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    graph: NeighborGraph
    embedding: Embedding
    quality: QualityReport
    density: Optional[DensityReport]
    files: dict
    ids: Optional[tuple] = None


def _stage(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except AnnManifoldError as exc:
        exc.args = (f"[{name}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def run_pipeline(cfg: RunConfig, algorithm: Optional[str] = None, cloud: Optional[PointCloud] = None,
                 metric: Optional[Metric] = None) -> PipelineResult:
    """ingest -> kNN graph -> embedding -> quality -> (d = 2) density anomalies, all written to ``cfg.out``.

    Every file except ``timing.json`` is a deterministic function of the configuration.
    """
    algorithm = algorithm or cfg.algorithms[0]
    if cloud is None:
        cloud, metric = _stage("ingest", load_dataset, cfg)
    metric = Metric.parse(metric or cfg.metric)
    out = Path(cfg.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    g = _stage("knn", knn_graph, cloud, cfg.k, cfg.backend, cfg.query, cfg.build, metric)
    emb = _stage("embed", embed, cloud, g, algorithm, cfg.d)
    qual = _stage("quality", quality_report, cloud, emb, cfg.quality_k, metric)
    files = {}
    files["graph"] = out / "graph.txt"
    write_graph(g, files["graph"])
    files["embedding"] = out / "embedding.csv"
    write_embedding_csv(emb, files["embedding"], cloud.ids)
    files["quality"] = out / "quality.json"
    files["quality"].write_text(qual.to_json() + "\n", encoding="utf-8")
    density = None
    if cfg.d == 2:
        density = _stage("anomaly", density_anomalies, emb, min(cfg.anomalies, emb.n))
        labels = [cloud.ids[int(i)] for i in emb.indices] if cloud.ids is not None else None
        files["anomalies"] = out / "anomalies.json"
        files["anomalies"].write_text(json.dumps(density.to_dict(labels)) + "\n", encoding="utf-8")
    else:
        warnings.warn(f"d={cfg.d}: density anomalies need a 2-d embedding, skipped", RuntimeWarning, stacklevel=2)
    files["timing"] = out / "timing.json"
    files["timing"].write_text(json.dumps({"knn_seconds": g.seconds}) + "\n", encoding="utf-8")
    return PipelineResult(g, emb, qual, density, files, cloud.ids)


__all__ = [
    "DATASETS", "DEFAULT_EPSILONS", "DEFAULT_LINKS", "DEFAULT_TREES", "PipelineResult", "RunConfig",
    "SweepRecord", "emit_reports", "grid_points", "ingest_mnist_idx", "load_dataset", "manifold_sample",
    "read_config", "read_reports", "run_pipeline", "run_sweep", "write_mnist_idx",
]
