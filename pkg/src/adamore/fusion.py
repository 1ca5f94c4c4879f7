"""Adaptive per-node fusion of the cohesive and dispersive channels.

The blend coefficient alpha averages a structural cue (mean learned weight
on incident edges) with a semantic cue (mean cosine between a node's
cohesive embedding and its neighbors'), then gets smoothed by one step of
normalized propagation and clamped to [0, 1]. Alpha is a constant with
respect to the tape: gradients flow into the channel embeddings only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor
from .gating import ViewPair
from .graphs import Graph, NormalizedOps

ISOLATED_BLEND = 0.5


@dataclass(frozen=True)
class FusionState:
    alpha_struct: np.ndarray
    alpha_sem: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        for name in ("alpha_struct", "alpha_sem", "alpha"):
            vec = getattr(self, name)
            if (vec < 0.0).any() or (vec > 1.0).any():
                raise ValueError(f"{name} has entries outside [0, 1]")


def semantic_score(h_coh: np.ndarray, g: Graph) -> np.ndarray:
    """Mean cosine between each node's embedding and its neighbors'.

    Uses original (non-self-looped) neighborhoods; isolated nodes get the
    neutral blend 0.5; raw cosine is clamped to [0, 1].
    """
    norms = np.linalg.norm(h_coh, axis=1, keepdims=True)
    unit = h_coh / np.maximum(norms, engine.EPS)
    score = np.full(g.n_nodes, ISOLATED_BLEND)
    deg = g.degrees().astype(np.float64)
    if g.n_edges:
        src, dst = g.directed_pairs()
        per_edge = (unit[src] * unit[dst]).sum(axis=1)
        acc = np.zeros(g.n_nodes)
        np.add.at(acc, dst, per_edge)
        mask = deg > 0
        score[mask] = acc[mask] / deg[mask]
    return np.clip(score, 0.0, 1.0)


def structural_score(views: ViewPair, g: Graph,
                     statistic: str = "mean") -> np.ndarray:
    """Statistic of the learned weights over each node's incident edges.

    The default is the arithmetic mean; "variance" is an alternative cue
    (high when a node straddles both confident weight extremes).
    """
    if statistic not in ("mean", "variance"):
        raise ValueError(f"unknown structural statistic {statistic!r}")
    score = np.full(g.n_nodes, ISOLATED_BLEND)
    deg = g.degrees().astype(np.float64)
    if g.n_edges:
        w = views.w.values.ravel()
        mean = np.zeros(g.n_nodes)
        np.add.at(mean, g.edges[:, 0], w)
        np.add.at(mean, g.edges[:, 1], w)
        mask = deg > 0
        mean[mask] = mean[mask] / deg[mask]
        if statistic == "mean":
            score[mask] = mean[mask]
        else:
            sq = np.zeros(g.n_nodes)
            np.add.at(sq, g.edges[:, 0], w * w)
            np.add.at(sq, g.edges[:, 1], w * w)
            score[mask] = sq[mask] / deg[mask] - mean[mask] ** 2
    return np.clip(score, 0.0, 1.0)


def propagate_alpha(init: np.ndarray, ops: NormalizedOps) -> np.ndarray:
    """One normalized propagation step (self-loop included), then clamp."""
    return np.clip(ops.a_tilde @ init, 0.0, 1.0)


def compute_fusion(views: ViewPair, h_coh: np.ndarray, g: Graph,
                   ops: NormalizedOps) -> FusionState:
    a_struct = structural_score(views, g)
    a_sem = semantic_score(h_coh, g)
    alpha = propagate_alpha(0.5 * (a_struct + a_sem), ops)
    return FusionState(alpha_struct=a_struct, alpha_sem=a_sem, alpha=alpha)


def fuse(h_coh: Tensor, h_disp: Tensor, alpha: np.ndarray) -> Tensor:
    """Concatenate alpha-scaled cohesive and (1-alpha)-scaled dispersive halves."""
    if h_coh.shape != h_disp.shape:
        raise engine.ShapeError(
            f"fuse requires matching channel shapes, got {h_coh.shape} and {h_disp.shape}")
    a = Tensor(np.asarray(alpha).reshape(-1, 1))
    if a.shape[0] != h_coh.shape[0]:
        raise engine.ShapeError(
            f"alpha length {a.shape[0]} does not match {h_coh.shape[0]} nodes")
    one_minus = Tensor(1.0 - a.values)
    return engine.concat_cols(engine.mul_col(h_coh, a),
                              engine.mul_col(h_disp, one_minus))


def export_alpha_tsv(alpha: np.ndarray, path: str) -> None:
    with open(path, "w") as fh:
        for i, a in enumerate(np.asarray(alpha).ravel()):
            fh.write(f"{i} {repr(float(a))}\n")
