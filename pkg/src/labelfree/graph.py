"""Text-attributed graph container, bundle I/O and sparse adjacency helpers."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

NODES_FILE = "nodes.jsonl"
EDGES_FILE = "edges.tsv"
FEATURES_FILE = "features.csv"
CLASSES_FILE = "classes.json"
MANIFEST_FILE = "manifest.json"


class BundleError(ValueError):
    """A graph bundle failed validation. The message names file and line."""


class PageRankWarning(RuntimeWarning):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TextAttributedGraph:
    """Immutable graph with per-node features and optional text and gold labels.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j``,
    sorted lexicographically. ``gold_labels`` exist for evaluation and the
    simulated annotator only.
    """

    node_count: int
    edges: np.ndarray
    features: np.ndarray
    class_names: tuple
    texts: Optional[tuple] = None
    gold_labels: Optional[np.ndarray] = None
    node_ids: Optional[tuple] = None
    provenance: Optional[str] = None

    def __post_init__(self):
        n = int(self.node_count)
        if n <= 0:
            raise ValueError("node_count must be positive")
        object.__setattr__(self, "node_count", n)
        classes = tuple(str(c) for c in self.class_names)
        if len(classes) < 2:
            raise ValueError("need at least two classes")
        if len(set(classes)) != len(classes):
            raise ValueError("class names must be unique")
        object.__setattr__(self, "class_names", classes)

        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ValueError(f"features must be {n} x d, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite entries")
        object.__setattr__(self, "features", _readonly(feats))

        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValueError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loops are not allowed")
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if len(e) else e
        object.__setattr__(self, "edges", _readonly(e))

        if self.texts is not None:
            texts = tuple(str(t) for t in self.texts)
            if len(texts) != n:
                raise ValueError("texts length must equal node_count")
            object.__setattr__(self, "texts", texts)
        if self.gold_labels is not None:
            g = np.asarray(self.gold_labels, dtype=np.int64)
            if g.shape != (n,):
                raise ValueError("gold_labels length must equal node_count")
            if g.size and (g.min() < 0 or g.max() >= len(classes)):
                raise ValueError("gold label out of range")
            object.__setattr__(self, "gold_labels", _readonly(g))
        ids = self.node_ids
        if ids is None:
            ids = tuple(str(i) for i in range(n))
        ids = tuple(str(i) for i in ids)
        if len(ids) != n or len(set(ids)) != n:
            raise ValueError("node_ids must be unique and of length node_count")
        object.__setattr__(self, "node_ids", ids)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def csr(self) -> tuple:
        """Symmetric 0/1 adjacency without self-loops as ``(indptr, indices)``."""
        n = self.node_count
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return _readonly(indptr), _readonly(dst.astype(np.int64))

    def same_as(self, other: "TextAttributedGraph") -> bool:
        """Field-by-field equality (arrays compared exactly)."""
        def eq(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)
        return (
            self.node_count == other.node_count
            and self.class_names == other.class_names
            and self.texts == other.texts
            and self.node_ids == other.node_ids
            and self.provenance == other.provenance
            and eq(self.edges, other.edges)
            and eq(self.features, other.features)
            and eq(self.gold_labels, other.gold_labels)
        )


@dataclass(frozen=True, eq=False)
class SparseNormalizedAdjacency:
    """CSR form of D~^-1/2 (A + I) D~^-1/2 (symmetric, self-loops included)."""

    dimension: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def matmul(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.dimension:
            raise ValueError(f"row mismatch: adjacency {self.dimension}, input {x.shape[0]}")
        return kernels.spmm(self.indptr, self.indices, self.data, x)

    __matmul__ = matmul

    def entries(self):
        """Iterate ``(row, col, value)`` triples."""
        rows = np.repeat(np.arange(self.dimension), np.diff(self.indptr))
        return zip(rows.tolist(), self.indices.tolist(), self.data.tolist())

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dimension, self.dimension))
        rows = np.repeat(np.arange(self.dimension), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    @classmethod
    def identity(cls, n: int) -> "SparseNormalizedAdjacency":
        return cls(n, _readonly(np.arange(n + 1, dtype=np.int64)),
                   _readonly(np.arange(n, dtype=np.int64)), _readonly(np.ones(n)))


def degrees(graph: TextAttributedGraph) -> np.ndarray:
    """Raw degree of each node (self-loops never stored)."""
    return np.diff(graph.csr[0])


def normalized_adjacency(graph: TextAttributedGraph) -> SparseNormalizedAdjacency:
    n = graph.node_count
    indptr, indices = graph.csr
    deg = np.diff(indptr)
    # insert the diagonal into each row keeping column order sorted
    rows = np.repeat(np.arange(n), deg)
    all_rows = np.concatenate([rows, np.arange(n)])
    all_cols = np.concatenate([indices, np.arange(n)])
    order = np.lexsort((all_cols, all_rows))
    all_rows, all_cols = all_rows[order], all_cols[order]
    inv_sqrt = 1.0 / np.sqrt(deg + 1.0)
    # product of the two factors is commutative in IEEE, so (i,j) == (j,i) bitwise
    vals = inv_sqrt[all_rows] * inv_sqrt[all_cols]
    new_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg + 1, out=new_ptr[1:])
    return SparseNormalizedAdjacency(n, _readonly(new_ptr), _readonly(all_cols.astype(np.int64)),
                                     _readonly(vals))


def propagate(features: np.ndarray, adjacency: SparseNormalizedAdjacency, hops: int) -> np.ndarray:
    """Return ``adjacency**hops @ features``."""
    if hops < 0:
        raise ValueError("hops must be non-negative")
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] != adjacency.dimension:
        raise ValueError(f"row mismatch: adjacency {adjacency.dimension}, features {x.shape[0]}")
    if hops == 0:
        return x.copy()
    for _ in range(hops):
        x = adjacency.matmul(x)
    return x


def pagerank(graph: TextAttributedGraph, damping: float = 0.85, tolerance: float = 1e-12,
             max_iter: int = 1000) -> np.ndarray:
    """Power-iteration PageRank on the undirected graph.

    Dangling (isolated) nodes spread their mass uniformly. Iteration stops
    once the L-infinity change drops below ``tolerance``; hitting
    ``max_iter`` first emits :class:`PageRankWarning` and returns the last
    iterate.
    """
    if not 0 < damping < 1:
        raise ValueError("damping must lie in (0, 1)")
    n = graph.node_count
    indptr, indices = graph.csr
    deg = np.diff(indptr).astype(np.float64)
    dangling = deg == 0
    # column-stochastic transpose of D^-1 A equals A D^-1 for symmetric A
    data = 1.0 / deg[indices]
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        spread = kernels.spmm(indptr, indices, data, x)
        new = damping * (spread + x[dangling].sum() / n) + (1.0 - damping) / n
        new /= new.sum()
        delta = np.max(np.abs(new - x))
        x = new
        if delta < tolerance:
            return x
    warnings.warn(f"pagerank did not converge in {max_iter} iterations (last change {delta:.3e})",
                  PageRankWarning, stacklevel=2)
    return x


# ---------------------------------------------------------------- bundles

def _load_classes(path: Path) -> list:
    try:
        classes = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path.name}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise BundleError(f"{path.name}:1: expected a JSON array of strings")
    return classes


def _load_nodes(path: Path, class_index: dict):
    ids, texts, gold = [], [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BundleError(f"{path.name}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "id" not in obj:
                raise BundleError(f"{path.name}:{lineno}: node object needs an 'id'")
            ids.append(str(obj["id"]))
            texts.append(str(obj.get("text", "")))
            g = obj.get("gold")
            if g is None:
                gold.append(None)
            elif g not in class_index:
                raise BundleError(f"{path.name}:{lineno}: unknown gold class {g!r}")
            else:
                gold.append(class_index[g])
    if len(set(ids)) != len(ids):
        raise BundleError(f"{path.name}: duplicate node ids")
    return ids, texts, gold


def _load_edges(path: Path, id_index: dict) -> np.ndarray:
    pairs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split("\t")
            if len(parts) != 2:
                raise BundleError(f"{path.name}:{lineno}: expected two tab-separated node ids")
            try:
                a, b = id_index[parts[0]], id_index[parts[1]]
            except KeyError as exc:
                raise BundleError(f"{path.name}:{lineno}: edge endpoint out of range ({exc.args[0]!r})") from None
            if a == b:
                raise BundleError(f"{path.name}:{lineno}: self-loop on {parts[0]!r}")
            pairs.append((a, b))
    e = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    if len(e):
        und = np.unique(np.sort(e, axis=1), axis=0)
        if len(und) < len(e):
            warnings.warn(f"{path.name}: collapsed {len(e) - len(und)} reciprocal or duplicate edges "
                          "(graph treated as undirected)", stacklevel=3)
            log.warning("symmetrized %d directed/duplicate edges in %s", len(e) - len(und), path)
    return e


def _load_features(path: Path, n: int) -> np.ndarray:
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise BundleError(f"{path.name}:1: header must be 'dim=<d>'")
        try:
            d = int(header[4:])
        except ValueError:
            raise BundleError(f"{path.name}:1: bad dimension {header[4:]!r}") from None
        rows = []
        for lineno, line in enumerate(fh, 2):
            s = line.strip()
            if not s:
                continue
            parts = s.split(",")
            if len(parts) != d:
                raise BundleError(f"{path.name}:{lineno}: expected {d} values, got {len(parts)}")
            try:
                row = [float(p) for p in parts]
            except ValueError as exc:
                raise BundleError(f"{path.name}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in row):
                raise BundleError(f"{path.name}:{lineno}: non-finite feature value")
            rows.append(row)
    if len(rows) != n:
        raise BundleError(f"{path.name}: dimension mismatch: {len(rows)} feature rows for {n} nodes")
    return np.array(rows, dtype=np.float64).reshape(n, d)


def load_graph_bundle(path) -> TextAttributedGraph:
    """Read and validate a bundle directory (``nodes.jsonl``, ``edges.tsv``,
    ``features.csv``, ``classes.json`` and an optional ``manifest.json``)."""
    root = Path(path)
    for name in (NODES_FILE, EDGES_FILE, FEATURES_FILE, CLASSES_FILE):
        if not (root / name).is_file():
            raise BundleError(f"{name}: missing file in bundle {root}")
    classes = _load_classes(root / CLASSES_FILE)
    class_index = {c: i for i, c in enumerate(classes)}
    ids, texts, gold = _load_nodes(root / NODES_FILE, class_index)
    if not ids:
        raise BundleError(f"{NODES_FILE}: bundle has no nodes")
    edges = _load_edges(root / EDGES_FILE, {k: i for i, k in enumerate(ids)})
    feats = _load_features(root / FEATURES_FILE, len(ids))
    gold_arr = None
    if any(g is not None for g in gold):
        if any(g is None for g in gold):
            raise BundleError(f"{NODES_FILE}: gold labels must be given for all nodes or none")
        gold_arr = np.array(gold, dtype=np.int64)
    provenance = None
    mpath = root / MANIFEST_FILE
    if mpath.is_file():
        provenance = json.loads(mpath.read_text(encoding="utf-8")).get("embedding_provenance")
    try:
        return TextAttributedGraph(len(ids), edges, feats, classes, texts=texts, gold_labels=gold_arr,
                                   node_ids=ids, provenance=provenance)
    except ValueError as exc:
        raise BundleError(str(exc)) from None


def save_graph_bundle(graph: TextAttributedGraph, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / CLASSES_FILE).write_text(json.dumps(list(graph.class_names)), encoding="utf-8")
    with (root / NODES_FILE).open("w", encoding="utf-8") as fh:
        for i, nid in enumerate(graph.node_ids):
            obj = {"id": nid, "text": graph.texts[i] if graph.texts is not None else ""}
            if graph.gold_labels is not None:
                obj["gold"] = graph.class_names[graph.gold_labels[i]]
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    with (root / EDGES_FILE).open("w", encoding="utf-8") as fh:
        for a, b in graph.edges.tolist():
            fh.write(f"{graph.node_ids[a]}\t{graph.node_ids[b]}\n")
    with (root / FEATURES_FILE).open("w", encoding="utf-8") as fh:
        fh.write(f"dim={graph.feature_dim}\n")
        for row in graph.features.tolist():
            fh.write(",".join(repr(v) for v in row) + "\n")
    manifest = {"format": 1, "node_count": graph.node_count, "feature_dim": graph.feature_dim,
                "edge_count": graph.edge_count, "embedding_provenance": graph.provenance}
    (root / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return root


def convert_linqs(content_file, cites_file, out_dir, provenance: str = "linqs bag-of-words") -> TextAttributedGraph:
    """Convert a LINQS-format citation dataset (``*.content`` / ``*.cites``)
    into a bundle. Rows of ``content`` are ``id f1 .. fd label``; citations
    whose endpoints are missing are dropped."""
    ids, rows, labels = [], [], []
    with open(content_file, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:-1]])
            labels.append(parts[-1])
    classes = sorted(set(labels))
    index = {k: i for i, k in enumerate(ids)}
    pairs = set()
    with open(cites_file, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 2 or parts[0] not in index or parts[1] not in index:
                continue
            a, b = index[parts[0]], index[parts[1]]
            if a != b:
                pairs.add((min(a, b), max(a, b)))
    graph = TextAttributedGraph(
        len(ids), sorted(pairs), np.array(rows), classes, texts=[""] * len(ids),
        gold_labels=[classes.index(lbl) for lbl in labels], node_ids=ids, provenance=provenance)
    save_graph_bundle(graph, out_dir)
    return graph

