"""Sparse MoE backbone and the heterogeneous residual expert pool.

Each channel owns a bank of same-architecture filter experts differing in
hop count; a per-node gate picks the top-K by logit (ties to the lowest
expert index) and renormalizes the selected logits with a softmax. All
filter outputs are computed densely at desk scale; sparsity lives in the
mixture weights only. The residual pool is dense-activated message-passing
experts summed with learnable scaling factors, regularized toward pairwise
dissimilar outputs through linear-kernel CKA.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import Tensor
from .filters import AdjacencyView, FilterSpec, filter_bank_outputs, sym_propagate
from .graphs import StructuralEmbedding

RESIDUAL_KINDS = ("gcn-layer", "sage-mean", "gin0", "gat-1head")


# ---------------------------------------------------------------------------
# sparse backbone

@dataclass
class ExpertBank:
    """Foundational filter experts with a top-K gate and shared projection."""

    channel: str                    # "coh" or "disp"
    specs: tuple[FilterSpec, ...]
    top_k: int
    gate_w: Tensor                  # (F + d_s, N_exp)
    gate_b: Tensor                  # (1, N_exp)
    proj_w: Tensor                  # (F, d_e)
    proj_b: Tensor                  # (1, d_e)

    def __post_init__(self):
        if not 1 <= self.top_k <= len(self.specs):
            raise ValueError(f"top_k={self.top_k} out of range for {len(self.specs)} experts")
        if len(set(s.token() for s in self.specs)) != len(self.specs):
            raise ValueError("expert specs must be distinct")

    @property
    def n_exp(self) -> int:
        return len(self.specs)

    def parameters(self) -> list[Tensor]:
        return [self.gate_w, self.gate_b, self.proj_w, self.proj_b]


def init_expert_bank(channel: str, specs, top_k: int, feat_dim: int, d_s: int,
                     d_e: int, rng: np.random.Generator) -> ExpertBank:
    n_exp = len(specs)
    return ExpertBank(
        channel=channel,
        specs=tuple(specs),
        top_k=top_k,
        gate_w=engine.glorot(rng, feat_dim + d_s, n_exp),
        gate_b=engine.zeros_param((1, n_exp)),
        proj_w=engine.glorot(rng, feat_dim, d_e),
        proj_b=engine.zeros_param((1, d_e)),
    )


@dataclass
class RoutingStats:
    """Per-step routing summary; f is constant, p stays differentiable."""

    channel: str
    n_exp: int
    top_k: int
    f: np.ndarray            # fraction of nodes whose top-K contains expert k
    p: Tensor                # (1, N_exp) mean softmax probability over all logits

    def p_values(self) -> np.ndarray:
        return self.p.values.ravel()


def backbone_forward(bank: ExpertBank, x: Tensor, s: StructuralEmbedding,
                     view: AdjacencyView, collect_expert_outputs: bool = False):
    """Top-K mixture of projected filter outputs per node.

    Returns (h_b, stats), or (h_b, stats, projected_outputs) when
    ``collect_expert_outputs`` is set (used by the diversity regularizer).
    """
    n = x.shape[0]
    gate_in = engine.concat_cols(x, Tensor(s.s))
    logits = engine.add_row(engine.matmul(gate_in, bank.gate_w), bank.gate_b)

    # selection is a constant decision given the logit values; stable sort
    # breaks ties toward the lowest expert index
    order = np.argsort(-logits.values, axis=1, kind="stable")
    chosen = order[:, :bank.top_k]
    selected = np.zeros((n, bank.n_exp), dtype=bool)
    np.put_along_axis(selected, chosen, True, axis=1)
    mask = np.where(selected, 0.0, -1e30)

    weights = engine.softmax_rows(engine.add(logits, Tensor(mask)))
    outs = filter_bank_outputs(list(bank.specs), x, view)
    h_b = None
    projected = []
    for k, out in enumerate(outs):
        proj = engine.add_row(engine.matmul(out, bank.proj_w), bank.proj_b)
        projected.append(proj)
        term = engine.mul_col(proj, engine.slice_cols(weights, k, k + 1))
        h_b = term if h_b is None else engine.add(h_b, term)

    full_probs = engine.softmax_rows(logits)
    mean_p = engine.matmul(Tensor(np.full((1, n), 1.0 / n)), full_probs)
    stats = RoutingStats(channel=bank.channel, n_exp=bank.n_exp, top_k=bank.top_k,
                         f=selected.mean(axis=0), p=mean_p)
    if collect_expert_outputs:
        return h_b, stats, projected
    return h_b, stats


def load_balance_loss(stats: RoutingStats) -> Tensor:
    """Switch-style fraction-times-probability load balance penalty.

    L = N_exp * sum_k (f_k / K) * P_k; uniform routing gives exactly 1 for
    K = 1, total collapse gives N_exp. Differentiable through P only.
    """
    coef = Tensor((stats.n_exp * stats.f / stats.top_k).reshape(1, -1))
    return engine.frobenius(coef, stats.p)


# ---------------------------------------------------------------------------
# residual experts

@dataclass
class ResidualExpert:
    """One heterogeneous message-passing layer with its own F -> d_e weights."""

    kind: str
    params: dict[str, Tensor] = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def forward(self, x: Tensor, view: AdjacencyView) -> Tensor:
        if self.kind == "gcn-layer":
            return engine.relu(engine.add_row(
                engine.matmul(sym_propagate(view, x), self.params["w"]),
                self.params["b"]))
        if self.kind == "sage-mean":
            mean_nb = _weighted_neighbor_mean(view, x)
            out = engine.add(engine.matmul(x, self.params["w_self"]),
                             engine.matmul(mean_nb, self.params["w_nb"]))
            return engine.relu(engine.add_row(out, self.params["b"]))
        if self.kind == "gin0":
            agg = engine.add(x, _weighted_neighbor_sum(view, x))
            h = engine.relu(engine.add_row(engine.matmul(agg, self.params["w1"]),
                                           self.params["b1"]))
            return engine.relu(engine.add_row(engine.matmul(h, self.params["w2"]),
                                              self.params["b2"]))
        if self.kind == "gat-1head":
            return _gat_forward(self.params, x, view)
        raise ValueError(f"unknown residual expert kind {self.kind!r}")


def _weighted_neighbor_sum(view: AdjacencyView, x: Tensor) -> Tensor:
    if view.src.shape[0] == 0:
        return engine.scale(x, 0.0)
    msg = engine.mul_col(engine.gather_rows(x, view.src), view.weights)
    return engine.scatter_rows(msg, view.dst, view.n_nodes)


def _weighted_neighbor_mean(view: AdjacencyView, x: Tensor) -> Tensor:
    if view.src.shape[0] == 0:
        return engine.scale(x, 0.0)
    total = _weighted_neighbor_sum(view, x)
    deg = engine.add_scalar(
        engine.scatter_rows(view.weights, view.dst, view.n_nodes), engine.EPS)
    return engine.mul_col(total, engine.power(deg, -1.0))


def _gat_forward(params: dict[str, Tensor], x: Tensor, view: AdjacencyView) -> Tensor:
    """Single-head attention over view-weighted neighbors plus self."""
    n = view.n_nodes
    xe = engine.matmul(x, params["w"])
    s_src = engine.matmul(xe, params["a_src"])
    s_dst = engine.matmul(xe, params["a_dst"])
    self_idx = np.arange(n)
    src_all = np.concatenate([view.src, self_idx])
    dst_all = np.concatenate([view.dst, self_idx])
    scores = engine.leaky_relu(engine.add(engine.gather_rows(s_src, src_all),
                                          engine.gather_rows(s_dst, dst_all)))
    # constant shift keeps exp bounded; softmax ratios are shift-invariant
    shift = float(scores.values.max())
    e = engine.exp(engine.add_scalar(scores, -shift))
    w_all = _stack_rows(view.weights, Tensor(np.ones((n, 1))))
    z = engine.mul(e, w_all)
    denom = engine.add_scalar(engine.scatter_rows(z, dst_all, n), engine.EPS)
    alpha = engine.mul(z, engine.power(engine.gather_rows(denom, dst_all), -1.0))
    msg = engine.mul_col(engine.gather_rows(xe, src_all), alpha)
    return engine.scatter_rows(msg, dst_all, n)


def _stack_rows(a: Tensor, b: Tensor) -> Tensor:
    """Vertical concatenation via gather/scatter (keeps gradients exact)."""
    na, nb = a.shape[0], b.shape[0]
    up = engine.scatter_rows(a, np.arange(na), na + nb)
    down = engine.scatter_rows(b, np.arange(na, na + nb), na + nb)
    return engine.add(up, down)


@dataclass
class ResidualPool:
    """Dense-activated heterogeneous experts with learnable scaling factors."""

    experts: list[ResidualExpert]
    gammas: list[Tensor]            # one 1x1 scalar per expert
    d_e: int

    @property
    def n_r(self) -> int:
        return len(self.experts)

    def parameters(self) -> list[Tensor]:
        out = []
        for ex in self.experts:
            out.extend(ex.parameters())
        out.extend(self.gammas)
        return out


def init_residual_expert(kind: str, feat_dim: int, d_e: int,
                         rng: np.random.Generator) -> ResidualExpert:
    if kind == "gcn-layer":
        params = {"w": engine.glorot(rng, feat_dim, d_e),
                  "b": engine.zeros_param((1, d_e))}
    elif kind == "sage-mean":
        params = {"w_self": engine.glorot(rng, feat_dim, d_e),
                  "w_nb": engine.glorot(rng, feat_dim, d_e),
                  "b": engine.zeros_param((1, d_e))}
    elif kind == "gin0":
        params = {"w1": engine.glorot(rng, feat_dim, d_e),
                  "b1": engine.zeros_param((1, d_e)),
                  "w2": engine.glorot(rng, d_e, d_e),
                  "b2": engine.zeros_param((1, d_e))}
    elif kind == "gat-1head":
        params = {"w": engine.glorot(rng, feat_dim, d_e),
                  "a_src": engine.glorot(rng, d_e, 1),
                  "a_dst": engine.glorot(rng, d_e, 1)}
    else:
        raise ValueError(f"unknown residual expert kind {kind!r}")
    return ResidualExpert(kind=kind, params=params)


def init_residual_pool(kinds, feat_dim: int, d_e: int, rng: np.random.Generator,
                       gamma_init: float = 0.1) -> ResidualPool:
    experts = [init_residual_expert(kind, feat_dim, d_e, rng) for kind in kinds]
    gammas = [Tensor([[gamma_init]], requires_grad=True) for _ in experts]
    return ResidualPool(experts=experts, gammas=gammas, d_e=d_e)


def residual_forward(pool: ResidualPool, x: Tensor,
                     view: AdjacencyView) -> tuple[Tensor, list[Tensor]]:
    """Scaled sum of all residual expert outputs; all experts activated."""
    if pool.n_r == 0:
        return Tensor(np.zeros((x.shape[0], pool.d_e))), []
    outs = [ex.forward(x, view) for ex in pool.experts]
    h_r = None
    for gamma, out in zip(pool.gammas, outs):
        term = engine.scale_by(out, gamma)
        h_r = term if h_r is None else engine.add(h_r, term)
    return h_r, outs


def enhance(h_b: Tensor, h_r: Tensor) -> Tensor:
    """Backbone output plus the unified residual signal."""
    return engine.add(h_b, h_r)


# ---------------------------------------------------------------------------
# representation similarity

def cka(e_i: Tensor, e_j: Tensor, eps: float = engine.EPS) -> Tensor:
    """Linear-kernel centered kernel alignment in [0, 1].

    Computed in feature space: with column-centered matrices Xc and Yc,
    HSIC(X, Y) = ||Xc^T Yc||_F^2, identical to tr(Kc_i Kc_j) for the linear
    kernel but O(n d^2) instead of O(n^2 d). Returns a constant 0 when
    either self-HSIC falls below eps.
    """
    if e_i.shape[0] != e_j.shape[0]:
        raise engine.ShapeError(f"cka row mismatch: {e_i.shape} vs {e_j.shape}")
    if e_i.shape[0] < 2:
        raise ValueError("cka needs at least 2 rows")
    ci = _center_columns(e_i)
    cj = _center_columns(e_j)
    cross = engine.matmul(engine.transpose(ci), cj)
    hsic_ij = engine.frobenius(cross, cross)
    hsic_ii = _self_hsic(ci)
    hsic_jj = _self_hsic(cj)
    if hsic_ii.item() < eps or hsic_jj.item() < eps:
        return Tensor([[0.0]])
    denom = engine.power(engine.add_scalar(engine.mul(hsic_ii, hsic_jj), eps), -0.5)
    return engine.mul(hsic_ij, denom)


def _center_columns(e: Tensor) -> Tensor:
    n = e.shape[0]
    col_means = engine.matmul(Tensor(np.full((1, n), 1.0 / n)), e)
    return engine.add_row(e, engine.scale(col_means, -1.0))


def _self_hsic(centered: Tensor) -> Tensor:
    gram = engine.matmul(engine.transpose(centered), centered)
    return engine.frobenius(gram, gram)


def diversity_loss(outputs: list[Tensor]) -> Tensor:
    """Mean pairwise CKA over all unordered output pairs."""
    if len(outputs) < 2:
        warnings.warn("diversity_loss needs at least 2 outputs; returning 0",
                      stacklevel=2)
        return Tensor([[0.0]])
    total = None
    count = 0
    for i in range(len(outputs)):
        for j in range(i + 1, len(outputs)):
            term = cka(outputs[i], outputs[j])
            total = term if total is None else engine.add(total, term)
            count += 1
    return engine.scale(total, 1.0 / count)
