"""Experiment configuration, sweeps over one model axis, result tables and export."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .data import Dataset, load_dataset, num_splits
from .errors import ConfigError, DatasetError
from .laplacian import assemble_laplacian, normalize_laplacian
from .model import ModelConfig, train
from .sheaf import MapKind, SheafStructure, build_graph, cayley, skew_from_params
from .spectral import cheb_apply, dense_oracle, gershgorin_bound, rescale
from .synth import SyntheticSpec, gen_dataset

__all__ = [
    "AXES",
    "STATUSES",
    "CSV_COLUMNS",
    "ExperimentConfig",
    "ResultRow",
    "Aggregate",
    "ResultsTable",
    "load_config",
    "estimate_memory_bytes",
    "point_config",
    "run_point",
    "run_experiment",
    "export_results",
    "load_results",
    "OracleCheck",
    "oracle_check",
]

log = logging.getLogger(__name__)

# sweep axis name -> ModelConfig field
AXES = {
    "none": None,
    "degree_K": "degree",
    "num_layers": "num_layers",
    "stalk_dim": "stalk_dim",
    "hidden_channels": "hidden_channels",
}
STATUSES = ("OK", "OOM", "INS")
CSV_COLUMNS = ("axis_value", "seed", "accuracy", "loss", "params", "runtime_s", "status")
FORMATS = ("csv", "json")


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data_path: str | None = None
    synthetic: SyntheticSpec | None = None
    sweep_axis: str = "none"
    sweep_values: list[int] = field(default_factory=list)
    num_seeds: int = 1
    seed: int = 0
    memory_budget_mb: float | None = None
    workers: int = 1
    out: str | None = None
    format: str = "csv"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if (self.data_path is None) == (self.synthetic is None):
            raise ConfigError("exactly one of data.path and synthetic must be given")
        if self.sweep_axis not in AXES:
            raise ConfigError(f"unknown sweep axis {self.sweep_axis!r}; expected one of {list(AXES)}")
        if self.sweep_axis == "none":
            if self.sweep_values:
                raise ConfigError("sweep axis 'none' takes no values")
        elif not self.sweep_values:
            raise ConfigError(f"sweep axis {self.sweep_axis!r} needs at least one value")
        for v in self.sweep_values:
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ConfigError(f"sweep value {v!r} is not an integer")
            point_config(self.model, self.sweep_axis, int(v))
        if self.num_seeds < 1:
            raise ConfigError("num_seeds must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.memory_budget_mb is not None and self.memory_budget_mb <= 0:
            raise ConfigError("memory_budget_mb must be positive")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")

    @property
    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.num_seeds)]

    @property
    def points(self) -> list[int | None]:
        return [int(v) for v in self.sweep_values] if self.sweep_axis != "none" else [None]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a mapping")
        d = dict(d)
        known = {"model", "data", "synthetic", "sweep", "num_seeds", "seed",
                 "memory_budget_mb", "workers", "output"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        kw: dict = {}
        kw["model"] = ModelConfig.from_dict(_mapping(d.get("model"), "model"))
        if d.get("data") is not None:
            data = _mapping(d["data"], "data", {"path"})
            if "path" not in data:
                raise ConfigError("data.path is required")
            kw["data_path"] = str(data["path"])
        if d.get("synthetic") is not None:
            kw["synthetic"] = SyntheticSpec.from_dict(_mapping(d["synthetic"], "synthetic"))
        sweep = _mapping(d.get("sweep"), "sweep", {"axis", "values"})
        kw["sweep_axis"] = sweep.get("axis", "none")
        kw["sweep_values"] = list(sweep.get("values") or [])
        out = _mapping(d.get("output"), "output", {"path", "format"})
        kw["out"] = out.get("path")
        kw["format"] = out.get("format", "csv")
        for k in ("num_seeds", "seed", "memory_budget_mb", "workers"):
            if k in d:
                kw[k] = d[k]
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = {
            "model": self.model.to_dict(),
            "sweep": {"axis": self.sweep_axis, "values": list(self.sweep_values)},
            "num_seeds": self.num_seeds,
            "seed": self.seed,
            "memory_budget_mb": self.memory_budget_mb,
            "workers": self.workers,
            "output": {"path": self.out, "format": self.format},
        }
        if self.data_path is not None:
            out["data"] = {"path": self.data_path}
        else:
            out["synthetic"] = self.synthetic.to_dict()
        return out


def _mapping(value, name: str, allowed: set[str] | None = None) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be a mapping")
    if allowed is not None and set(value) - allowed:
        raise ConfigError(f"unknown {name} keys: {sorted(set(value) - allowed)}")
    return value


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a YAML (or JSON) experiment config."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ExperimentConfig.from_dict(raw or {})


def point_config(model: ModelConfig, axis: str, value: int | None) -> ModelConfig:
    """The model config at one sweep point; only the swept field differs."""
    name = AXES.get(axis)
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    if name is None:
        return model
    return replace(model, **{name: int(value)})


def estimate_memory_bytes(config: ModelConfig, num_nodes: int, num_edges: int, in_features: int) -> int:
    """Float64 bytes for restriction maps, Laplacian blocks and per-layer cochains kept for backward."""
    d, C, K = config.stalk_dim, config.hidden_channels, config.degree
    cochain = num_nodes * d * C
    per_layer = 2 * num_edges * d * d + (num_nodes + num_edges) * d * d + (K + 8) * cochain
    total = num_nodes * in_features + cochain + config.num_layers * per_layer
    return 8 * total


@dataclass
class ResultRow:
    axis_value: int | None
    seed: int
    accuracy: float
    loss: float
    params: int
    runtime_s: float = field(compare=False)
    status: str = "OK"


@dataclass(frozen=True)
class Aggregate:
    axis_value: int | None
    mean: float
    std: float
    completed: int
    total: int


def _nan_eq(a: float, b: float) -> bool:
    return (math.isnan(a) and math.isnan(b)) or a == b


@dataclass
class ResultsTable:
    axis: str = field(default="none", compare=False)
    rows: list[ResultRow] = field(default_factory=list)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ResultsTable) or len(self.rows) != len(other.rows):
            return False
        for a, b in zip(self.rows, other.rows):
            if (a.axis_value, a.seed, a.params, a.status) != (b.axis_value, b.seed, b.params, b.status):
                return False
            if not (_nan_eq(a.accuracy, b.accuracy) and _nan_eq(a.loss, b.loss)):
                return False
        return True

    def append(self, row: ResultRow) -> None:
        if row.status not in STATUSES:
            raise ValueError(f"unknown status {row.status!r}")
        self.rows.append(row)

    def aggregates(self) -> list[Aggregate]:
        """Mean and population std of accuracy per sweep point over ``OK`` rows only."""
        order: list = []
        groups: dict = {}
        for r in self.rows:
            if r.axis_value not in groups:
                order.append(r.axis_value)
                groups[r.axis_value] = []
            groups[r.axis_value].append(r)
        out = []
        for v in order:
            ok = [r.accuracy for r in groups[v] if r.status == "OK"]
            mean = float(np.mean(ok)) if ok else float("nan")
            std = float(np.std(ok)) if ok else float("nan")
            out.append(Aggregate(v, mean, std, len(ok), len(groups[v])))
        return out

    def summary(self) -> str:
        lines = [f"{'axis=' + self.axis:<16} {'accuracy':>18}  ok/total"]
        for a in self.aggregates():
            label = "-" if a.axis_value is None else str(a.axis_value)
            lines.append(f"{label:<16} {100 * a.mean:8.2f} ± {100 * a.std:6.2f}  {a.completed}/{a.total}")
        return "\n".join(lines)


def _dataset_for(cfg: ExperimentConfig, seed_index: int, seed: int, cache: dict) -> Dataset:
    """Synthetic data is regenerated per seed; file data rotates through its splits."""
    if cfg.synthetic is not None:
        key = ("synthetic", seed)
        if key not in cache:
            cache[key] = gen_dataset(replace(cfg.synthetic, seed=seed))
        return cache[key]
    if "num_splits" not in cache:
        cache["num_splits"] = num_splits(cfg.data_path)
    split = seed_index % cache["num_splits"]
    key = ("file", split)
    if key not in cache:
        cache[key] = load_dataset(cfg.data_path, split=split)
    return cache[key]


def run_point(model: ModelConfig, dataset: Dataset, axis_value: int | None, seed: int,
              memory_budget_mb: float | None = None) -> ResultRow:
    """Train once; memory-budget overruns are marked ``OOM`` and divergence ``INS``."""
    cfg = replace(model, seed=seed)
    t0 = time.perf_counter()
    if memory_budget_mb is not None:
        need = estimate_memory_bytes(cfg, dataset.num_nodes, dataset.graph.num_edges,
                                     dataset.features.shape[1])
        if need > memory_budget_mb * 2**20:
            log.warning("axis=%s seed=%d needs %.1f MB > budget %.1f MB", axis_value, seed,
                        need / 2**20, memory_budget_mb)
            return ResultRow(axis_value, seed, float("nan"), float("nan"), 0, 0.0, "OOM")
    try:
        rep = train(cfg, dataset)
    except MemoryError:
        return ResultRow(axis_value, seed, float("nan"), float("nan"), 0,
                         time.perf_counter() - t0, "OOM")
    if rep.status != "OK":
        return ResultRow(axis_value, seed, float("nan"), float("nan"), rep.num_params,
                         rep.wall_seconds, rep.status)
    return ResultRow(axis_value, seed, rep.test_acc, rep.test_loss, rep.num_params,
                     rep.wall_seconds, "OK")


def _job(args):
    return run_point(*args)


def run_experiment(cfg: ExperimentConfig, progress=None) -> ResultsTable:
    """One row per (sweep point, seed), ordered point-major regardless of worker count."""
    cache: dict = {}
    jobs = []
    for value in cfg.points:
        model = point_config(cfg.model, cfg.sweep_axis, value)
        for i, seed in enumerate(cfg.seeds):
            try:
                ds = _dataset_for(cfg, i, seed, cache)
            except OSError as exc:
                raise DatasetError(str(exc)) from None
            jobs.append((model, ds, value, seed, cfg.memory_budget_mb))
    table = ResultsTable(cfg.sweep_axis)
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_job, jobs))
    else:
        rows = []
        for job in jobs:
            rows.append(_job(job))
            if progress is not None:
                progress(rows[-1])
    for row in rows:
        table.append(row)
    return table


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _json_num(x: float):
    return None if math.isnan(x) else x


def export_results(table: ResultsTable, path: str | Path, fmt: str = "csv") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in table.rows:
                w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    elif fmt == "json":
        doc = {
            "axis": table.axis,
            "rows": [{c: (_json_num(getattr(r, c)) if c in ("accuracy", "loss") else getattr(r, c))
                      for c in CSV_COLUMNS} for r in table.rows],
            "aggregates": [{"axis_value": a.axis_value, "mean": _json_num(a.mean), "std": _json_num(a.std),
                            "completed": a.completed, "total": a.total} for a in table.aggregates()],
        }
        path.write_text(json.dumps(doc, indent=2))
    else:
        raise ConfigError(f"format must be one of {FORMATS}")
    return path


def _parse_row(rec: dict) -> ResultRow:
    def num(x):
        return float("nan") if x in (None, "") else float(x)

    av = rec["axis_value"]
    return ResultRow(None if av in (None, "") else int(av), int(rec["seed"]), num(rec["accuracy"]),
                     num(rec["loss"]), int(rec["params"]), num(rec["runtime_s"]), str(rec["status"]))


def load_results(path: str | Path, fmt: str | None = None, axis: str = "none") -> ResultsTable:
    """Inverse of :func:`export_results`; the format defaults to the file suffix."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "csv":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise DatasetError(f"{path}: expected columns {CSV_COLUMNS}")
            rows = [_parse_row(rec) for rec in reader]
        return ResultsTable(axis, rows)
    if fmt == "json":
        doc = json.loads(path.read_text())
        return ResultsTable(doc.get("axis", axis), [_parse_row(r) for r in doc["rows"]])
    raise ConfigError(f"format must be one of {FORMATS}")


@dataclass(frozen=True)
class OracleCheck:
    name: str
    passed: bool
    worst: float
    tolerance: float


def _random_sheaf(rng: np.random.Generator, kind: MapKind) -> SheafStructure:
    n = int(rng.integers(2, 21))
    d = int(rng.integers(1, 5))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.3]
    g = build_graph(n, edges)
    E = g.num_edges
    if kind is MapKind.ORTHOGONAL:
        Q = cayley(skew_from_params(rng.normal(size=(2, E, d * (d - 1) // 2)), d))
        return SheafStructure.from_arrays(g, Q[0], Q[1], kind=kind)
    shape = (2, E, d) if kind is MapKind.DIAGONAL else (2, E, d, d)
    raw = np.tanh(rng.normal(size=shape))
    return SheafStructure.from_arrays(g, raw[0], raw[1], kind=kind)


def oracle_check(instances: int = 30, seed: int = 0, degree: int = 8) -> list[OracleCheck]:
    """Compare sparse operators against dense eigendecompositions on random small sheaves.

    Checks the normalized spectrum lies in ``[0, 2]``, the Gershgorin bound
    dominates the true ``lambda_max`` of the unnormalized Laplacian, and the
    Chebyshev recurrence matches the spectral multiplier.
    """
    rng = np.random.default_rng(seed)
    kinds = list(MapKind)
    enclosure = bound = cheb = 0.0
    for i in range(instances):
        sheaf = _random_sheaf(rng, kinds[i % len(kinds)])
        L = assemble_laplacian(sheaf)
        Ln = normalize_laplacian(L)
        lam = dense_oracle(Ln).eigenvalues
        if lam.size:
            enclosure = max(enclosure, -lam.min(), lam.max() - 2.0)
        true_max = dense_oracle(L).lambda_max
        bound = max(bound, true_max - gershgorin_bound(L))
        theta = rng.normal(size=degree + 1)
        X = rng.normal(size=(L.num_nodes, L.stalk_dim, 3))
        got = cheb_apply(rescale(Ln, 2.0), theta, X)
        want = dense_oracle(Ln).apply(
            lambda x: np.polynomial.chebyshev.chebval(x - 1.0, theta), X)
        cheb = max(cheb, np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-300))
    return [
        OracleCheck("spectral enclosure", bool(enclosure <= 1e-8), float(enclosure), 1e-8),
        OracleCheck("gershgorin bound", bool(bound <= 1e-9), float(bound), 1e-9),
        OracleCheck("chebyshev vs dense", bool(cheb <= 1e-10), float(cheb), 1e-10),
    ]
