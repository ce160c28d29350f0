"""Node-classification datasets and their on-disk format.

A dataset directory holds::

    edges.tsv      one "u<TAB>v" pair per line, 0-indexed, '#' comments allowed
    features.csv   one row of floats per node
    labels.txt     one integer per line
    splits.json    list of {"train": [...], "val": [...], "test": [...]} objects
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError, StructuralError
from .sheaf import Graph, build_graph, read_edge_list, write_edge_list

__all__ = ["Dataset", "homophily", "load_dataset", "save_dataset", "REFERENCE_STATS", "check_stats", "num_splits",
           "dataset_from_arrays"]

log = logging.getLogger(__name__)

# homophily, nodes, edges, classes as tabulated for the standard benchmarks
REFERENCE_STATS = {
    "texas": (0.11, 183, 295, 5),
    "wisconsin": (0.21, 251, 466, 5),
    "film": (0.22, 7600, 26752, 5),
    "squirrel": (0.22, 5201, 198493, 5),
    "chameleon": (0.23, 2277, 31421, 5),
    "cornell": (0.30, 183, 280, 5),
    "citeseer": (0.74, 3327, 4676, 7),
    "pubmed": (0.80, 18717, 44327, 3),
    "cora": (0.81, 2708, 5278, 6),
}


@dataclass
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    name: str = "dataset"

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def masks(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("train", "val", "test"):
            m = np.zeros(self.num_nodes, dtype=bool)
            m[getattr(self, f"{name}_idx")] = True
            out[name] = m
        return out

    def check(self) -> None:
        n = self.num_nodes
        if self.features.shape[0] != n or self.labels.shape[0] != n:
            raise StructuralError(f"features {self.features.shape} / labels {self.labels.shape} "
                                  f"do not match {n} nodes")
        seen = np.zeros(n, dtype=int)
        for name in ("train", "val", "test"):
            idx = getattr(self, f"{name}_idx")
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise StructuralError(f"{name} split index out of range [0, {n})")
            seen[idx] += 1
        if (seen > 1).any():
            raise StructuralError("train/val/test splits overlap")


def homophily(graph: Graph, labels) -> float:
    """Fraction of edges whose endpoints share a label (1.0 for an edgeless graph)."""
    labels = np.asarray(labels)
    if labels.shape[0] != graph.num_nodes:
        raise StructuralError("labels must cover every node")
    if graph.num_edges == 0:
        return 1.0
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    return float((labels[u] == labels[v]).mean())


def _read_matrix(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(t) for t in line.replace(",", " ").split()])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric feature value") from None
    if rows and len({len(r) for r in rows}) != 1:
        raise DatasetError(f"{path}: ragged feature rows")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1)


def _read_labels(path: Path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: label is not an integer: {line!r}") from None
    return np.array(out, dtype=np.int64)


def load_dataset(path: str | Path, split: int = 0, name: str | None = None) -> Dataset:
    """Load a dataset directory and log its size and homophily."""
    root = Path(path)
    files = {k: root / f for k, f in (("edges", "edges.tsv"), ("features", "features.csv"),
                                      ("labels", "labels.txt"), ("splits", "splits.json"))}
    for k, f in files.items():
        if not f.exists():
            raise DatasetError(f"missing {k} file {f}")
    features = _read_matrix(files["features"])
    labels = _read_labels(files["labels"])
    n = labels.shape[0]
    try:
        graph = read_edge_list(files["edges"], num_nodes=n)
    except StructuralError as exc:
        raise DatasetError(str(exc)) from None
    try:
        splits = json.loads(files["splits"].read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{files['splits']}: {exc}") from None
    if isinstance(splits, dict):
        splits = [splits]
    if not 0 <= split < len(splits):
        raise DatasetError(f"split {split} not available ({len(splits)} splits)")
    s = splits[split]
    ds = Dataset(graph, features, labels,
                 np.asarray(s["train"], dtype=np.int64), np.asarray(s["val"], dtype=np.int64),
                 np.asarray(s["test"], dtype=np.int64), name or root.name)
    try:
        ds.check()
    except StructuralError as exc:
        raise DatasetError(str(exc)) from None
    h = homophily(graph, labels)
    log.info("%s: N=%d E=%d classes=%d homophily=%.3f", ds.name, n, graph.num_edges, ds.num_classes, h)
    check_stats(ds)
    return ds


def num_splits(path: str | Path) -> int:
    f = Path(path) / "splits.json"
    if not f.exists():
        raise DatasetError(f"missing splits file {f}")
    try:
        splits = json.loads(f.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{f}: {exc}") from None
    return len(splits) if isinstance(splits, list) else 1


def check_stats(ds: Dataset) -> list[str]:
    """Compare against the tabulated statistics for a known dataset name; mismatches only warn."""
    ref = REFERENCE_STATS.get(ds.name.lower())
    if ref is None:
        return []
    h_ref, n_ref, e_ref, c_ref = ref
    found = (round(homophily(ds.graph, ds.labels), 2), ds.num_nodes, ds.graph.num_edges, ds.num_classes)
    notes = []
    for label, want, got in zip(("homophily", "nodes", "edges", "classes"), ref, found):
        if (abs(want - got) > 0.01) if label == "homophily" else want != got:
            notes.append(f"{ds.name}: {label} {got} differs from tabulated {want}")
            log.warning(notes[-1])
    return notes


def save_dataset(ds: Dataset, path: str | Path, extra_splits: list[dict] | None = None) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_edge_list(ds.graph, root / "edges.tsv")
    np.savetxt(root / "features.csv", ds.features, delimiter=",", fmt="%.17g")
    np.savetxt(root / "labels.txt", ds.labels, fmt="%d")
    splits = [{"train": ds.train_idx.tolist(), "val": ds.val_idx.tolist(), "test": ds.test_idx.tolist()}]
    splits += extra_splits or []
    (root / "splits.json").write_text(json.dumps(splits))
    return root


def dataset_from_arrays(num_nodes, edges, features, labels, train, val, test, name="dataset") -> Dataset:
    return Dataset(build_graph(num_nodes, edges), np.asarray(features, dtype=np.float64),
                   np.asarray(labels, dtype=np.int64), np.asarray(train), np.asarray(val),
                   np.asarray(test), name)
