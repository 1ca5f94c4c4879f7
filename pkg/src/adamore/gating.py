"""Structurally-aware edge gating and the dual structural views.

An edge MLP scores each undirected edge from the concatenated features and
structural embeddings of its endpoints, symmetrized over both orderings.
Gumbel-Sigmoid turns logits into soft weights in (0, 1); the cohesive view
carries w per edge and the dispersive view 1 - w, so the two views sum to
the original adjacency entrywise. The cross-filter loss trains only this
module: a parameter-free low-pass filter must reproduce the dispersive
backbone output on the dispersive view (and the high-pass mirror on the
cohesive view), with backbone outputs held constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor
from .filters import AdjacencyView, FilterSpec, apply_filter
from .graphs import Graph, StructuralEmbedding


@dataclass
class EdgeGateParams:
    """One-hidden-layer MLP from the 2(F + d_s) joint edge representation."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def init_edge_gate(feat_dim: int, d_s: int, hidden: int,
                   rng: np.random.Generator) -> EdgeGateParams:
    in_dim = 2 * (feat_dim + d_s)
    return EdgeGateParams(
        w1=engine.glorot(rng, in_dim, hidden),
        b1=engine.zeros_param((1, hidden)),
        w2=engine.glorot(rng, hidden, 1),
        b2=engine.zeros_param((1, 1)),
    )


@dataclass
class ViewPair:
    """Learned per-edge weights plus the derived cohesive/dispersive views."""

    w: Tensor                 # (m, 1) per undirected edge
    a_coh: AdjacencyView
    a_disp: AdjacencyView
    tau: float
    train_mode: bool


def _mlp(params: EdgeGateParams, z: Tensor) -> Tensor:
    h = engine.relu(engine.add_row(engine.matmul(z, params.w1), params.b1))
    return engine.add_row(engine.matmul(h, params.w2), params.b2)


def edge_logits(params: EdgeGateParams, x: Tensor, s: StructuralEmbedding,
                g: Graph) -> Tensor:
    """Symmetric per-edge logits: the MLP averaged over both orderings."""
    feat_dim = x.shape[1]
    if params.in_dim != 2 * (feat_dim + s.d_s):
        raise engine.ShapeError(
            f"edge gate expects input width {params.in_dim}, "
            f"got 2*({feat_dim}+{s.d_s})")
    i_idx, j_idx = g.edges[:, 0], g.edges[:, 1]
    s_const = Tensor(s.s)
    xi = engine.gather_rows(x, i_idx)
    xj = engine.gather_rows(x, j_idx)
    si = engine.gather_rows(s_const, i_idx)
    sj = engine.gather_rows(s_const, j_idx)
    z_ij = engine.concat_cols(engine.concat_cols(xi, si), engine.concat_cols(xj, sj))
    z_ji = engine.concat_cols(engine.concat_cols(xj, sj), engine.concat_cols(xi, si))
    return engine.scale(engine.add(_mlp(params, z_ij), _mlp(params, z_ji)), 0.5)


def gumbel_sigmoid_weights(logits: Tensor, tau: float, rng: np.random.Generator,
                           train_mode: bool) -> Tensor:
    """Soft edge weights sigma((l + g1 - g2)/tau); no noise in eval mode."""
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    g1, g2 = engine.gumbel_pair(rng, logits.shape, train_mode=train_mode)
    noisy = engine.add(logits, Tensor(g1 - g2)) if train_mode else logits
    return engine.sigmoid(engine.scale(noisy, 1.0 / tau))


def build_views(g: Graph, w: Tensor, tau: float = 0.5,
                train_mode: bool = False) -> ViewPair:
    """Cohesive view carries w on both directions, dispersive carries 1 - w."""
    m = g.n_edges
    if w.shape != (m, 1):
        raise engine.ShapeError(f"expected one weight per edge ({m}, 1), got {w.shape}")
    vals = w.values
    if (vals < 0.0).any() or (vals > 1.0).any():
        raise ValueError("edge weights must lie in [0, 1]")
    src, dst = g.directed_pairs()
    both = np.concatenate([np.arange(m), np.arange(m)])
    w_dir = engine.gather_rows(w, both)
    disp_dir = engine.sub(Tensor(np.ones((2 * m, 1))), w_dir)
    return ViewPair(
        w=w,
        a_coh=AdjacencyView(n_nodes=g.n_nodes, src=src, dst=dst, weights=w_dir),
        a_disp=AdjacencyView(n_nodes=g.n_nodes, src=src, dst=dst, weights=disp_dir),
        tau=tau,
        train_mode=train_mode,
    )


def scaled_cosine_error(recon: Tensor, target: Tensor, gamma: float) -> Tensor:
    """Mean over rows of 1 - cos(recon_i, target_i)^gamma."""
    cos = engine.cosine_rows(recon, target)
    return engine.mean_all(
        engine.sub(Tensor(np.ones(cos.shape)), engine.power(cos, gamma)))


def svg_loss(views: ViewPair, h_b_coh: Tensor, h_b_disp: Tensor,
             gamma_svg: float = 1.0) -> Tensor:
    """Cross-filter reconstruction loss; trains the edge gate only.

    Backbone outputs are detached here, so the only gradient path runs
    through the views' weights back into the gating MLP.
    """
    coh_target = h_b_coh.detach()
    disp_target = h_b_disp.detach()
    lpf_recon = apply_filter(FilterSpec("free_lpf", 1), disp_target, views.a_disp)
    hpf_recon = apply_filter(FilterSpec("free_hpf", 1), coh_target, views.a_coh)
    return engine.add(scaled_cosine_error(lpf_recon, disp_target, gamma_svg),
                      scaled_cosine_error(hpf_recon, coh_target, gamma_svg))


def export_weights_tsv(g: Graph, w_values: np.ndarray, path: str) -> None:
    """Eval-mode edge weights as 'u v w' lines."""
    with open(path, "w") as fh:
        for (u, v), we in zip(g.edges, w_values.ravel()):
            fh.write(f"{u} {v} {repr(float(we))}\n")
