"""Downstream evaluation of frozen embeddings.

Linear probing trains a multinomial logistic regression by full-batch
gradient descent in its own engine session; clustering runs seeded Lloyd
k-means with a k-means++ start and scores ACC (optimal assignment), NMI
(arithmetic normalization) and ARI; the prototype protocol classifies
queries by the nearest class mean of k labeled support embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import engine, graphs
from .engine import Tensor
from .graphs import Graph, SplitSpec


@dataclass(frozen=True)
class ProbeResult:
    mean: float
    std: float
    accuracies: tuple[float, ...]


@dataclass(frozen=True)
class ClusterResult:
    acc: float
    nmi: float
    ari: float


@dataclass(frozen=True)
class FewshotResult:
    mean: float
    std: float
    per_task: tuple[float, ...]


# ---------------------------------------------------------------------------
# linear probe

def _fit_logreg(x: np.ndarray, y: np.ndarray, n_classes: int,
                steps: int = 500, lr: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch gradient descent on softmax cross-entropy."""
    engine.reset_tape()
    w = engine.zeros_param((x.shape[1], n_classes))
    b = engine.zeros_param((1, n_classes))
    x_const = Tensor(x)
    onehot = np.zeros((x.shape[0], n_classes))
    onehot[np.arange(x.shape[0]), y] = 1.0
    target = Tensor(onehot)
    for _ in range(steps):
        engine.reset_tape()
        engine.zero_grads([w, b])
        logits = engine.add_row(engine.matmul(x_const, w), b)
        loss = engine.scale(engine.frobenius(engine.log_softmax_rows(logits), target),
                            -1.0 / x.shape[0])
        engine.backward(loss)
        w.values = w.values - lr * w.grad
        b.values = b.values - lr * b.grad
    engine.reset_tape()
    return w.values, b.values


def probe_once(embeddings: np.ndarray, labels: np.ndarray, split: SplitSpec,
               steps: int = 500, lr: float = 0.01) -> float:
    train_y = labels[split.train]
    if np.unique(train_y).size < 2:
        raise ValueError("probe train split contains a single class")
    n_classes = int(labels.max()) + 1
    w, b = _fit_logreg(embeddings[split.train], train_y, n_classes, steps, lr)
    pred = (embeddings[split.test] @ w + b).argmax(axis=1)
    return float((pred == labels[split.test]).mean())


def linear_probe(embeddings: np.ndarray, labels: np.ndarray, g: Graph,
                 fractions: tuple[float, float, float] = (0.1, 0.1, 0.8),
                 repeats: int = 5, seed: int = 0,
                 steps: int = 500, lr: float = 0.01) -> ProbeResult:
    """Probe accuracy repeated over split seeds."""
    accs = []
    for r in range(repeats):
        split = graphs.make_splits(g, fractions, seed=seed + r)
        accs.append(probe_once(embeddings, labels, split, steps=steps, lr=lr))
    accs = np.array(accs)
    return ProbeResult(mean=float(accs.mean()), std=float(accs.std()),
                       accuracies=tuple(accs.tolist()))


# ---------------------------------------------------------------------------
# k-means clustering with standard external metrics

def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.shape[0])]]
    for _ in range(1, k):
        d2 = np.min([((x - c) ** 2).sum(axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0.0:
            centers.append(x[rng.integers(x.shape[0])])
            continue
        probs = d2 / total
        centers.append(x[rng.choice(x.shape[0], p=probs)])
    return np.array(centers)


def _lloyd(x: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int = 100) -> tuple[np.ndarray, float]:
    centers = _kmeans_pp_init(x, k, rng)
    assign = np.full(x.shape[0], -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = x[assign == c]
            if members.shape[0]:
                centers[c] = members.mean(axis=0)
    inertia = float(((x - centers[assign]) ** 2).sum())
    return assign, inertia


def contingency_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    table = np.zeros((int(a.max()) + 1, int(b.max()) + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


def clustering_accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    """Best cluster-to-class matching accuracy via optimal assignment."""
    table = contingency_table(pred, labels)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / labels.shape[0])


def nmi_score(a: np.ndarray, b: np.ndarray) -> float:
    """Mutual information normalized by the arithmetic mean of entropies."""
    n = a.shape[0]
    table = contingency_table(a, b).astype(np.float64) / n
    pa = table.sum(axis=1)
    pb = table.sum(axis=0)
    mask = table > 0
    outer = pa[:, None] * pb[None, :]
    mi = float((table[mask] * np.log(table[mask] / outer[mask])).sum())
    ha = float(-(pa[pa > 0] * np.log(pa[pa > 0])).sum())
    hb = float(-(pb[pb > 0] * np.log(pb[pb > 0])).sum())
    if ha == 0.0 or hb == 0.0:
        return 0.0
    return mi / (0.5 * (ha + hb))


def ari_score(a: np.ndarray, b: np.ndarray) -> float:
    """Adjusted Rand index from the pair-counting contingency formula."""
    table = contingency_table(a, b)
    n = a.shape[0]
    sum_comb = float((table * (table - 1) // 2).sum())
    comb_a = float((table.sum(axis=1) * (table.sum(axis=1) - 1) // 2).sum())
    comb_b = float((table.sum(axis=0) * (table.sum(axis=0) - 1) // 2).sum())
    total = n * (n - 1) / 2
    expected = comb_a * comb_b / total if total else 0.0
    max_index = 0.5 * (comb_a + comb_b)
    if max_index == expected:
        return 0.0
    return (sum_comb - expected) / (max_index - expected)


def kmeans_eval(embeddings: np.ndarray, labels: np.ndarray, k: int,
                seeds: tuple[int, ...] = (0, 1, 2, 3, 4)) -> ClusterResult:
    """Best-of-seeds Lloyd k-means scored against the labels."""
    if k > np.unique(embeddings, axis=0).shape[0]:
        raise ValueError(f"k={k} exceeds the number of distinct points")
    best = None
    for seed in seeds:
        assign, inertia = _lloyd(embeddings, k, np.random.default_rng(seed))
        if best is None or inertia < best[1]:
            best = (assign, inertia)
    assign = best[0]
    return ClusterResult(acc=clustering_accuracy(assign, labels),
                         nmi=nmi_score(assign, labels),
                         ari=ari_score(assign, labels))


# ---------------------------------------------------------------------------
# prototype few-shot protocol

def prototype_classify(embeddings: np.ndarray, support: np.ndarray,
                       support_labels: np.ndarray, queries: np.ndarray,
                       n_classes: int) -> np.ndarray:
    """Assign each query the label of its nearest class prototype.

    Distance ties resolve to the lowest class id.
    """
    protos = np.zeros((n_classes, embeddings.shape[1]))
    for c in range(n_classes):
        members = support[support_labels == c]
        if members.size == 0:
            raise ValueError(f"class {c} has no support examples")
        protos[c] = embeddings[members].mean(axis=0)
    d2 = ((embeddings[queries][:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def prototype_fewshot(embeddings: np.ndarray, labels: np.ndarray, k: int,
                      n_tasks: int = 100, seed: int = 0) -> FewshotResult:
    """Accuracy over sampled k-shot tasks; queries are the remaining nodes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n_classes = int(labels.max()) + 1
    rng = np.random.default_rng(seed)
    labeled = np.flatnonzero(labels >= 0)
    accs = []
    for _ in range(n_tasks):
        support = []
        for c in range(n_classes):
            members = np.flatnonzero(labels == c)
            if members.size < k + 1:
                raise ValueError(f"class {c} too small for {k}-shot tasks")
            support.extend(rng.choice(members, size=k, replace=False).tolist())
        support = np.array(sorted(support))
        queries = np.setdiff1d(labeled, support)
        pred = prototype_classify(embeddings, support, labels[support],
                                  queries, n_classes)
        accs.append(float((pred == labels[queries]).mean()))
    accs = np.array(accs)
    return FewshotResult(mean=float(accs.mean()), std=float(accs.std()),
                         per_task=tuple(accs.tolist()))
