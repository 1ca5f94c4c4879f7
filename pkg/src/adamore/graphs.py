"""Graph representation, normalized operators, structural statistics, and I/O.

A graph directory holds edges.tsv ("u v" per line, 0-indexed), features.tsv
(one row of floats per node) and optionally labels.tsv (one integer per
line). Splits travel as splits.tsv with lines "index set_name".
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sps


class GraphFormatError(ValueError):
    """Malformed graph directory contents; message carries file and line."""


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph with node features and optional labels.

    Edges are stored once per undirected pair with u < v, lexicographically
    sorted, no self-loops and no duplicates.
    """

    n_nodes: int
    edges: np.ndarray          # (m, 2) int64
    features: np.ndarray       # (n_nodes, F) float64
    labels: np.ndarray | None = None
    n_classes: int | None = None

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.n_nodes:
            raise GraphFormatError(
                f"feature matrix must have {self.n_nodes} rows, got shape {feats.shape}")
        if not np.isfinite(feats).all():
            raise GraphFormatError("feature matrix contains non-finite entries")
        if edges.size:
            if edges.min() < 0 or edges.max() >= self.n_nodes:
                raise GraphFormatError("edge endpoint out of range")
            if (edges[:, 0] == edges[:, 1]).any():
                raise GraphFormatError("self-loop in canonical edge list")
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            canon = np.stack([lo, hi], axis=1)
            order = np.lexsort((canon[:, 1], canon[:, 0]))
            canon = canon[order]
            if canon.shape[0] > 1 and (np.diff(canon, axis=0) == 0).all(axis=1).any():
                raise GraphFormatError("duplicate edge in canonical edge list")
            edges = canon
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (self.n_nodes,):
                raise GraphFormatError(
                    f"labels must have length {self.n_nodes}, got shape {labels.shape}")
            n_classes = self.n_classes if self.n_classes is not None else int(labels.max()) + 1
            if labels.min() < 0 or labels.max() >= n_classes:
                raise GraphFormatError("label outside [0, n_classes)")
            object.__setattr__(self, "n_classes", n_classes)
            labels.setflags(write=False)
        feats.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    def directed_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Both orientations of every undirected edge: (src, dst), length 2m."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        return np.concatenate([u, v]), np.concatenate([v, u])

    def degrees(self) -> np.ndarray:
        """Raw degrees without self-loops."""
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        if self.n_edges:
            src, _ = self.directed_pairs()
            np.add.at(deg, src, 1)
        return deg

    def neighbor_lists(self) -> list[np.ndarray]:
        nbrs = [[] for _ in range(self.n_nodes)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return [np.array(sorted(ns), dtype=np.int64) for ns in nbrs]


@dataclass(frozen=True)
class NormalizedOps:
    """Self-looped adjacency and its symmetric / random-walk normalizations."""

    a_hat: sps.csr_matrix      # A + I
    d_hat: np.ndarray          # self-looped degree vector, entries >= 1
    a_tilde: sps.csr_matrix    # D^-1/2 (A+I) D^-1/2
    t_walk: sps.csr_matrix     # D^-1 (A+I), rows sum to 1


@dataclass(frozen=True)
class StructuralEmbedding:
    """Per-node return probabilities of 1..d_s step self-looped random walks."""

    s: np.ndarray              # (n_nodes, d_s), entries in [0, 1]

    @property
    def d_s(self) -> int:
        return self.s.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def __post_init__(self):
        sets = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("split index sets overlap")


# ---------------------------------------------------------------------------
# construction and normalization

def make_graph(n_nodes: int, edge_pairs, features, labels=None, n_classes=None) -> Graph:
    """Build a validated Graph, symmetrizing/deduplicating raw edge pairs."""
    pairs = np.asarray(edge_pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size:
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return Graph(n_nodes=n_nodes, edges=pairs, features=features,
                 labels=labels, n_classes=n_classes)


def normalize(g: Graph) -> NormalizedOps:
    """Self-looped adjacency with symmetric and random-walk normalizations."""
    n = g.n_nodes
    src, dst = g.directed_pairs()
    rows = np.concatenate([src, np.arange(n)])
    cols = np.concatenate([dst, np.arange(n)])
    vals = np.ones(rows.shape[0])
    a_hat = sps.csr_matrix((vals, (rows, cols)), shape=(n, n))
    d_hat = np.asarray(a_hat.sum(axis=1)).ravel()
    dinv_sqrt = 1.0 / np.sqrt(d_hat)
    dinv = 1.0 / d_hat
    a_tilde = sps.csr_matrix((vals * dinv_sqrt[rows] * dinv_sqrt[cols], (rows, cols)), shape=(n, n))
    t_walk = sps.csr_matrix((vals * dinv[rows], (rows, cols)), shape=(n, n))
    return NormalizedOps(a_hat=a_hat, d_hat=d_hat, a_tilde=a_tilde, t_walk=t_walk)


def structural_embeddings(ops: NormalizedOps, d_s: int = 8,
                          block: int = 1024) -> StructuralEmbedding:
    """Diagonals of T, T^2, ..., T^d_s via blocked indicator probes."""
    if d_s < 1:
        raise ValueError("d_s must be >= 1")
    n = ops.t_walk.shape[0]
    s = np.zeros((n, d_s))
    for start in range(0, n, block):
        stop = min(start + block, n)
        probes = np.zeros((n, stop - start))
        probes[np.arange(start, stop), np.arange(stop - start)] = 1.0
        cur = probes
        for p in range(d_s):
            cur = ops.t_walk @ cur
            s[start:stop, p] = cur[np.arange(start, stop), np.arange(stop - start)]
    return StructuralEmbedding(s=s)


# ---------------------------------------------------------------------------
# topological statistics

def local_homophily(g: Graph) -> np.ndarray:
    """Fraction of same-label neighbors per node; isolated nodes get -1."""
    if g.labels is None:
        raise ValueError("local_homophily requires labels")
    same = np.zeros(g.n_nodes)
    deg = g.degrees().astype(np.float64)
    if g.n_edges:
        src, dst = g.directed_pairs()
        agree = (g.labels[src] == g.labels[dst]).astype(np.float64)
        np.add.at(same, src, agree)
    h = np.full(g.n_nodes, -1.0)
    mask = deg > 0
    h[mask] = same[mask] / deg[mask]
    return h


def mean_edge_homophily(g: Graph) -> float:
    """Fraction of edges joining same-label endpoints."""
    if g.labels is None:
        raise ValueError("mean_edge_homophily requires labels")
    if not g.n_edges:
        return 0.0
    u, v = g.edges[:, 0], g.edges[:, 1]
    return float((g.labels[u] == g.labels[v]).mean())


def clustering_coefficient(g: Graph) -> np.ndarray:
    """Local clustering coefficient; nodes with degree < 2 get 0."""
    deg = g.degrees()
    nbrs = [set() for _ in range(g.n_nodes)]
    for u, v in g.edges:
        nbrs[u].add(int(v))
        nbrs[v].add(int(u))
    tri2 = np.zeros(g.n_nodes)  # per-node triangle count times 2
    for u, v in g.edges:
        common = len(nbrs[u] & nbrs[v])
        tri2[u] += common
        tri2[v] += common
    c = np.zeros(g.n_nodes)
    mask = deg >= 2
    tri = tri2 / 2.0
    c[mask] = 2.0 * tri[mask] / (deg[mask] * (deg[mask] - 1.0))
    return c


# ---------------------------------------------------------------------------
# synthetic graphs and splits

def gen_sbm(n_per_block: int, k_blocks: int, p_in: float, p_out: float,
            feat_dim: int = 16, feat_signal: float = 2.0, seed: int = 0) -> Graph:
    """Stochastic block model with orthogonal block-mean features.

    Labels are block ids; each feature row is its block mean (norm
    ``feat_signal``) plus unit Gaussian noise. Deterministic under ``seed``.
    """
    if n_per_block < 1 or k_blocks < 1:
        raise ValueError("block sizes must be positive")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ValueError("edge probabilities must lie in [0, 1]")
    if feat_dim < k_blocks:
        raise ValueError(f"feat_dim {feat_dim} too small for {k_blocks} orthogonal block means")
    rng = np.random.default_rng(seed)
    n = n_per_block * k_blocks
    labels = np.repeat(np.arange(k_blocks), n_per_block)
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.shape[0]) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    means = np.zeros((k_blocks, feat_dim))
    means[np.arange(k_blocks), np.arange(k_blocks)] = feat_signal
    features = means[labels] + rng.standard_normal((n, feat_dim))
    return Graph(n_nodes=n, edges=edges, features=features,
                 labels=labels, n_classes=k_blocks)


def _allocate(count: int, fractions: Sequence[float]) -> list[int]:
    sizes = [int(round(f * count)) for f in fractions]
    overflow = sum(sizes) - count
    i = len(sizes) - 1
    while overflow > 0 and i >= 0:
        take = min(overflow, sizes[i])
        sizes[i] -= take
        overflow -= take
        i -= 1
    return sizes


def make_splits(g: Graph, fractions: tuple[float, float, float], seed: int) -> SplitSpec:
    """Disjoint train/val/test splits, stratified by label when present."""
    if any(f <= 0 for f in fractions) or sum(fractions) > 1.0 + 1e-9:
        raise ValueError("fractions must be positive and sum to at most 1")
    rng = np.random.default_rng(seed)
    buckets: list[list[np.ndarray]] = [[], [], []]
    if g.labels is not None:
        for c in range(g.n_classes):
            idx = np.flatnonzero(g.labels == c)
            rng.shuffle(idx)
            sizes = _allocate(idx.shape[0], fractions)
            if sizes[0] < 1:
                raise ValueError(f"class {c} has too few members for one train example")
            pos = 0
            for b, size in enumerate(sizes):
                buckets[b].append(idx[pos:pos + size])
                pos += size
    else:
        idx = rng.permutation(g.n_nodes)
        sizes = _allocate(g.n_nodes, fractions)
        pos = 0
        for b, size in enumerate(sizes):
            buckets[b].append(idx[pos:pos + size])
            pos += size
    parts = [np.sort(np.concatenate(b)) if b else np.array([], dtype=np.int64)
             for b in buckets]
    return SplitSpec(train=parts[0], val=parts[1], test=parts[2], seed=seed)


# ---------------------------------------------------------------------------
# directory I/O

def _parse_floats(line: str, path: str, lineno: int) -> list[float]:
    try:
        return [float(tok) for tok in line.split()]
    except ValueError as err:
        raise GraphFormatError(f"{path}:{lineno}: {err}") from None


def load_graph(dir_path: str, normalize_features: bool = False) -> Graph:
    """Load and validate a graph directory (edges/features/labels tsv)."""
    feat_path = os.path.join(dir_path, "features.tsv")
    edge_path = os.path.join(dir_path, "edges.tsv")
    label_path = os.path.join(dir_path, "labels.tsv")
    for required in (feat_path, edge_path):
        if not os.path.exists(required):
            raise GraphFormatError(f"missing file: {required}")

    rows = []
    width = None
    with open(feat_path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            vals = _parse_floats(line, feat_path, lineno)
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise GraphFormatError(
                    f"{feat_path}:{lineno}: ragged row ({len(vals)} values, expected {width})")
            if not all(np.isfinite(vals)):
                raise GraphFormatError(f"{feat_path}:{lineno}: non-finite feature value")
            rows.append(vals)
    if not rows:
        raise GraphFormatError(f"{feat_path}: no feature rows")
    features = np.array(rows)
    n = features.shape[0]

    pairs = []
    with open(edge_path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            toks = line.split()
            if len(toks) != 2:
                raise GraphFormatError(f"{edge_path}:{lineno}: expected 'u v', got {line.strip()!r}")
            try:
                u, v = int(toks[0]), int(toks[1])
            except ValueError:
                raise GraphFormatError(f"{edge_path}:{lineno}: non-integer node index") from None
            if not (0 <= u < n and 0 <= v < n):
                raise GraphFormatError(
                    f"{edge_path}:{lineno}: node index out of range for {n} nodes")
            pairs.append((u, v))

    labels = None
    if os.path.exists(label_path):
        vals = []
        with open(label_path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    vals.append(int(line.split()[0]))
                except ValueError:
                    raise GraphFormatError(f"{label_path}:{lineno}: non-integer label") from None
        if len(vals) != n:
            raise GraphFormatError(
                f"{label_path}: {len(vals)} labels for {n} nodes")
        labels = np.array(vals, dtype=np.int64)
        if labels.min() < 0:
            raise GraphFormatError(f"{label_path}: negative label")

    if normalize_features:
        norms = np.linalg.norm(features, axis=1, keepdims=True)
        features = features / np.maximum(norms, 1e-12)
    return make_graph(n, pairs, features, labels=labels)


def save_graph(g: Graph, dir_path: str) -> None:
    os.makedirs(dir_path, exist_ok=True)
    with open(os.path.join(dir_path, "edges.tsv"), "w") as fh:
        for u, v in g.edges:
            fh.write(f"{u} {v}\n")
    with open(os.path.join(dir_path, "features.tsv"), "w") as fh:
        for row in g.features:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    if g.labels is not None:
        with open(os.path.join(dir_path, "labels.tsv"), "w") as fh:
            for y in g.labels:
                fh.write(f"{y}\n")


def save_splits(split: SplitSpec, path: str) -> None:
    with open(path, "w") as fh:
        for name, idx in (("train", split.train), ("val", split.val), ("test", split.test)):
            for i in idx:
                fh.write(f"{i} {name}\n")


def load_splits(path: str, seed: int = -1) -> SplitSpec:
    parts: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            toks = line.split()
            if len(toks) != 2 or toks[1] not in parts:
                raise GraphFormatError(f"{path}:{lineno}: expected 'index set_name'")
            parts[toks[1]].append(int(toks[0]))
    return SplitSpec(train=np.array(sorted(parts["train"]), dtype=np.int64),
                     val=np.array(sorted(parts["val"]), dtype=np.int64),
                     test=np.array(sorted(parts["test"]), dtype=np.int64),
                     seed=seed)
