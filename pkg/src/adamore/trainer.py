"""Unsupervised training loop: masked reconstruction with alternating steps.

Each epoch runs two isolated optimization steps. Step 1 updates only the
edge-gating MLP by the cross-filter reconstruction loss (backbone outputs
detached). Step 2 resamples the node mask, substitutes a learnable mask
token for masked feature rows, and updates every main-model parameter
(gating excluded) by the composite masked-reconstruction objective. The
fusion coefficient is recomputed once per epoch from eval-mode edge weights
and the current cohesive embeddings, and is constant on the tape.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import engine, experts, filters, fusion, gating, graphs
from .engine import AdamState, Tensor
from .experts import ExpertBank, ResidualPool, RoutingStats
from .filters import FilterSpec
from .gating import EdgeGateParams, ViewPair
from .graphs import Graph, NormalizedOps, StructuralEmbedding


class TrainingError(RuntimeError):
    """Training aborted; message names the epoch and loss component."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 3e-5
    hidden: int = 128            # d_e; the full-scale setting is 1024
    mask_ratio: float = 0.5
    gamma: float = 2.0
    gamma_svg: float = 1.0
    lambda_load: float = 0.1
    lambda_div: float = 0.1
    lambda_cls: float = 1.0
    tau: float = 0.5
    top_k: int = 2
    n_exp: int = 4
    d_s: int = 8
    edge_hidden: int = 64
    residual_kinds: tuple[str, ...] = ("gat-1head",)
    diversity_targets: str = "foundational"   # foundational | residual | both
    svg_steps: int = 1
    finetune_epochs: int = 30
    normalize_features: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must lie in (0, 1)")
        for name in ("lambda_load", "lambda_div", "lambda_cls"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if not 1 <= self.top_k <= self.n_exp:
            raise ValueError("top_k must lie in [1, n_exp]")
        if self.diversity_targets not in ("foundational", "residual", "both"):
            raise ValueError(f"unknown diversity_targets {self.diversity_targets!r}")
        for kind in self.residual_kinds:
            if kind not in experts.RESIDUAL_KINDS:
                raise ValueError(f"unknown residual expert kind {kind!r}")


@dataclass
class DecoderParams:
    """One-hidden-layer MLP from fused embeddings back to feature space."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, h: Tensor) -> Tensor:
        hidden = engine.relu(engine.add_row(engine.matmul(h, self.w1), self.b1))
        return engine.add_row(engine.matmul(hidden, self.w2), self.b2)


@dataclass
class MaskPlan:
    indices: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.shape[0]


def sample_mask(rng: np.random.Generator, n_nodes: int, mask_ratio: float) -> MaskPlan:
    count = int(round(mask_ratio * n_nodes))
    count = max(1, min(count, n_nodes - 1))
    return MaskPlan(indices=np.sort(rng.choice(n_nodes, size=count, replace=False)))


def masked_input(x_values: np.ndarray, plan: MaskPlan, token: Tensor) -> Tensor:
    """Replace masked feature rows by the learnable token before taping.

    Masked rows of ``x_values`` never reach the tape: they are zeroed on a
    copy first, so even poisoned (NaN) masked rows yield a finite input.
    """
    base = np.array(x_values, dtype=np.float64)
    base[plan.indices] = 0.0
    indicator = np.zeros((base.shape[0], 1))
    indicator[plan.indices] = 1.0
    return engine.add(Tensor(base), engine.matmul(Tensor(indicator), token))


class Model:
    """All learnable components bound to one graph."""

    def __init__(self, g: Graph, cfg: TrainConfig):
        self.graph = g
        self.cfg = cfg
        self.ops: NormalizedOps = graphs.normalize(g)
        self.emb: StructuralEmbedding = graphs.structural_embeddings(self.ops, d_s=cfg.d_s)
        rng = np.random.default_rng(cfg.seed)
        f_dim, d_e = g.feat_dim, cfg.hidden
        self.gate: EdgeGateParams = gating.init_edge_gate(
            f_dim, cfg.d_s, cfg.edge_hidden, rng)
        coh_specs = [FilterSpec("sgc", k) for k in range(1, cfg.n_exp + 1)]
        disp_specs = [FilterSpec("lapsgc", k, alpha=1.0) for k in range(1, cfg.n_exp + 1)]
        self.bank_coh: ExpertBank = experts.init_expert_bank(
            "coh", coh_specs, cfg.top_k, f_dim, cfg.d_s, d_e, rng)
        self.bank_disp: ExpertBank = experts.init_expert_bank(
            "disp", disp_specs, cfg.top_k, f_dim, cfg.d_s, d_e, rng)
        self.pool_coh: ResidualPool = experts.init_residual_pool(
            cfg.residual_kinds, f_dim, d_e, rng)
        self.pool_disp: ResidualPool = experts.init_residual_pool(
            cfg.residual_kinds, f_dim, d_e, rng)
        self.decoder = DecoderParams(
            w1=engine.glorot(rng, 2 * d_e, d_e),
            b1=engine.zeros_param((1, d_e)),
            w2=engine.glorot(rng, d_e, f_dim),
            b2=engine.zeros_param((1, f_dim)),
        )
        self.mask_token = engine.zeros_param((1, f_dim))
        self.head_w: Tensor | None = None
        self.head_b: Tensor | None = None

    def gating_parameters(self) -> list[Tensor]:
        return self.gate.parameters()

    def main_parameters(self) -> list[Tensor]:
        out = self.bank_coh.parameters() + self.bank_disp.parameters()
        out += self.pool_coh.parameters() + self.pool_disp.parameters()
        out += self.decoder.parameters()
        out.append(self.mask_token)
        return out

    def head_parameters(self) -> list[Tensor]:
        return [] if self.head_w is None else [self.head_w, self.head_b]

    def all_parameters(self) -> list[Tensor]:
        return self.gating_parameters() + self.main_parameters() + self.head_parameters()

    def add_head(self, n_classes: int, rng: np.random.Generator) -> None:
        if self.head_w is None:
            self.head_w = engine.glorot(rng, 2 * self.cfg.hidden, n_classes)
            self.head_b = engine.zeros_param((1, n_classes))

    def named_parameters(self) -> dict[str, Tensor]:
        named = {}
        for prefix, group in (("gate", self.gate.parameters()),
                              ("bank_coh", self.bank_coh.parameters()),
                              ("bank_disp", self.bank_disp.parameters()),
                              ("decoder", self.decoder.parameters())):
            for i, p in enumerate(group):
                named[f"{prefix}.{i}"] = p
        for channel, pool in (("coh", self.pool_coh), ("disp", self.pool_disp)):
            for k, expert in enumerate(pool.experts):
                for key, p in expert.params.items():
                    named[f"pool_{channel}.{k}.{key}"] = p
            for k, gamma in enumerate(pool.gammas):
                named[f"pool_{channel}.gamma.{k}"] = gamma
        named["mask_token"] = self.mask_token
        if self.head_w is not None:
            named["head.w"] = self.head_w
            named["head.b"] = self.head_b
        return named


@dataclass
class ForwardResult:
    views: ViewPair
    h_b_coh: Tensor
    h_b_disp: Tensor
    stats_coh: RoutingStats
    stats_disp: RoutingStats
    h_enh_coh: Tensor | None
    h_enh_disp: Tensor | None
    h_final: Tensor | None
    alpha: np.ndarray | None
    diversity_targets: dict[str, list[Tensor]]


def full_forward(model: Model, x_input: Tensor, train_mode: bool,
                 rng: np.random.Generator,
                 fixed_weights: np.ndarray | None = None,
                 alpha_override: np.ndarray | None = None,
                 backbone_only: bool = False) -> ForwardResult:
    """One pass through gating, both channels, and fusion.

    ``backbone_only`` stops after the two backbone outputs (all the
    cross-filter loss consumes); it changes no random draws, so training
    trajectories are identical with or without the skipped work.
    """
    g, cfg = model.graph, model.cfg
    if fixed_weights is not None:
        w = Tensor(np.asarray(fixed_weights).reshape(-1, 1))
        w_eval = w.values.copy()
    else:
        logits = gating.edge_logits(model.gate, x_input, model.emb, g)
        w = gating.gumbel_sigmoid_weights(logits, cfg.tau, rng, train_mode)
        w_eval = expit(logits.values / cfg.tau)
    views = gating.build_views(g, w, tau=cfg.tau, train_mode=train_mode)

    h_b_coh, stats_coh, outs_coh = experts.backbone_forward(
        model.bank_coh, x_input, model.emb, views.a_coh, collect_expert_outputs=True)
    h_b_disp, stats_disp, outs_disp = experts.backbone_forward(
        model.bank_disp, x_input, model.emb, views.a_disp, collect_expert_outputs=True)
    if backbone_only:
        return ForwardResult(views=views, h_b_coh=h_b_coh, h_b_disp=h_b_disp,
                             stats_coh=stats_coh, stats_disp=stats_disp,
                             h_enh_coh=None, h_enh_disp=None, h_final=None,
                             alpha=None, diversity_targets={})

    h_r_coh, r_outs_coh = experts.residual_forward(model.pool_coh, x_input, views.a_coh)
    h_r_disp, r_outs_disp = experts.residual_forward(model.pool_disp, x_input, views.a_disp)
    h_enh_coh = experts.enhance(h_b_coh, h_r_coh)
    h_enh_disp = experts.enhance(h_b_disp, h_r_disp)

    if alpha_override is not None:
        alpha = np.asarray(alpha_override, dtype=np.float64).ravel()
    else:
        eval_views = gating.build_views(g, Tensor(w_eval), tau=cfg.tau, train_mode=False)
        alpha = fusion.compute_fusion(eval_views, h_enh_coh.values, g, model.ops).alpha
    h_final = fusion.fuse(h_enh_coh, h_enh_disp, alpha)

    targets = {
        "foundational": {"coh": outs_coh, "disp": outs_disp},
        "residual": {"coh": r_outs_coh, "disp": r_outs_disp},
    }
    mode = cfg.diversity_targets
    if mode == "both":
        div = {ch: targets["foundational"][ch] + targets["residual"][ch]
               for ch in ("coh", "disp")}
    else:
        div = targets[mode]
    return ForwardResult(views=views, h_b_coh=h_b_coh, h_b_disp=h_b_disp,
                         stats_coh=stats_coh, stats_disp=stats_disp,
                         h_enh_coh=h_enh_coh, h_enh_disp=h_enh_disp,
                         h_final=h_final, alpha=alpha, diversity_targets=div)


def mae_loss(h_final: Tensor, decoder: DecoderParams, x_orig: np.ndarray,
             plan: MaskPlan, gamma: float) -> Tensor:
    """Scaled cosine reconstruction error over the masked node set."""
    if plan.size == 0:
        raise ValueError("mask set is empty")
    rows = engine.gather_rows(h_final, plan.indices)
    recon = decoder.forward(rows)
    return gating.scaled_cosine_error(recon, Tensor(x_orig[plan.indices]), gamma)


def composite_loss(l_mae: Tensor, l_load: Tensor, l_div: Tensor,
                   cfg: TrainConfig) -> Tensor:
    total = l_mae
    if cfg.lambda_load:
        total = engine.add(total, engine.scale(l_load, cfg.lambda_load))
    if cfg.lambda_div:
        total = engine.add(total, engine.scale(l_div, cfg.lambda_div))
    return total


def _channel_mean_diversity(div_targets: dict[str, list[Tensor]]) -> Tensor:
    terms = [experts.diversity_loss(outs) for outs in div_targets.values()
             if len(outs) >= 2]
    if not terms:
        return Tensor([[0.0]])
    total = terms[0]
    for t in terms[1:]:
        total = engine.add(total, t)
    return engine.scale(total, 1.0 / len(terms))


def _mean_load(fwd: ForwardResult) -> Tensor:
    return engine.scale(engine.add(experts.load_balance_loss(fwd.stats_coh),
                                   experts.load_balance_loss(fwd.stats_disp)), 0.5)


@dataclass
class TrainState:
    model: Model
    cfg: TrainConfig
    adam_svg: AdamState
    adam_main: AdamState
    rng: np.random.Generator
    history: list[dict] = field(default_factory=list)
    routing_log: list[tuple] = field(default_factory=list)
    epoch: int = 0
    fixed_weights: np.ndarray | None = None
    adam_head: AdamState | None = None


def init_state(g: Graph, cfg: TrainConfig,
               fixed_weights: np.ndarray | None = None) -> TrainState:
    if cfg.normalize_features:
        norms = np.linalg.norm(g.features, axis=1, keepdims=True)
        feats = g.features / np.maximum(norms, 1e-12)
        g = Graph(n_nodes=g.n_nodes, edges=g.edges, features=feats,
                  labels=g.labels, n_classes=g.n_classes)
    model = Model(g, cfg)
    return TrainState(model=model, cfg=cfg,
                      adam_svg=AdamState(lr=cfg.lr),
                      adam_main=AdamState(lr=cfg.lr),
                      rng=np.random.default_rng(cfg.seed),
                      fixed_weights=fixed_weights)


def _guard(component: str, epoch: int, fn):
    try:
        return fn()
    except engine.NonFiniteError as err:
        raise TrainingError(f"epoch {epoch}: non-finite {component}: {err}") from err


def svg_step(state: TrainState) -> float:
    """Step 1: update the view-gating MLP only, by the cross-filter loss.

    The gate is trained adversarially: it ascends the cross-filter
    reconstruction error, assigning edge weights that make the mismatched
    reconstructions maximally difficult. Ascending the error is what gives
    the views their cohesive/dispersive semantics; descending it instead
    rewards views on which the wrong-direction filters succeed, which
    empirically inverts the learned weights.
    """
    model, cfg = state.model, state.cfg
    epoch = state.epoch
    engine.reset_tape()
    engine.zero_grads(model.all_parameters())
    x_raw = Tensor(model.graph.features)
    fwd = _guard("l_svg forward", epoch, lambda: full_forward(
        model, x_raw, train_mode=True, rng=state.rng, backbone_only=True))
    l_svg = _guard("l_svg", epoch, lambda: gating.svg_loss(
        fwd.views, fwd.h_b_coh, fwd.h_b_disp, cfg.gamma_svg))
    engine.backward(engine.scale(l_svg, -1.0))
    engine.adam_step(model.gating_parameters(), state.adam_svg)
    return l_svg.item()


def reconstruction_step(state: TrainState) -> dict:
    """Step 2: resample the mask and update all main-model parameters."""
    model, cfg = state.model, state.cfg
    g = model.graph
    epoch = state.epoch
    engine.reset_tape()
    engine.zero_grads(model.all_parameters())
    plan = sample_mask(state.rng, g.n_nodes, cfg.mask_ratio)
    x_input = masked_input(g.features, plan, model.mask_token)
    fwd = _guard("reconstruction forward", epoch, lambda: full_forward(
        model, x_input, train_mode=True, rng=state.rng,
        fixed_weights=state.fixed_weights))
    l_mae = _guard("l_mae", epoch, lambda: mae_loss(
        fwd.h_final, model.decoder, g.features, plan, cfg.gamma))
    l_load = _guard("l_load", epoch, lambda: _mean_load(fwd))
    l_div = _guard("l_div", epoch, lambda: _channel_mean_diversity(fwd.diversity_targets))
    total = composite_loss(l_mae, l_load, l_div, cfg)
    engine.backward(total)
    engine.adam_step(model.main_parameters(), state.adam_main)

    for stats in (fwd.stats_coh, fwd.stats_disp):
        for k in range(stats.n_exp):
            state.routing_log.append(
                (epoch, stats.channel, k, float(stats.f[k]), float(stats.p_values()[k])))
    return {"l_mae": l_mae.item(), "l_load": l_load.item(), "l_div": l_div.item(),
            "total": total.item()}


def train_epoch(state: TrainState) -> dict:
    """One alternating optimization epoch; appends and returns the record."""
    l_svg_value = 0.0
    if state.fixed_weights is None:
        for _ in range(state.cfg.svg_steps):
            l_svg_value = svg_step(state)
    losses = reconstruction_step(state)
    record = {"epoch": state.epoch, "l_svg": l_svg_value, **losses}
    state.history.append(record)
    state.epoch += 1
    return record


def train(g: Graph, cfg: TrainConfig,
          fixed_weights: np.ndarray | None = None) -> TrainState:
    state = init_state(g, cfg, fixed_weights=fixed_weights)
    for _ in range(cfg.epochs):
        train_epoch(state)
    return state


def embed(state: TrainState, g: Graph | None = None,
          alpha_override: np.ndarray | None = None) -> np.ndarray:
    """Deterministic eval-mode embedding (no noise, no masking)."""
    model = state.model
    if g is not None and g is not model.graph:
        raise ValueError("embed expects the graph the model was trained on")
    engine.reset_tape()
    fwd = full_forward(model, Tensor(model.graph.features), train_mode=False,
                       rng=np.random.default_rng(0),
                       fixed_weights=state.fixed_weights,
                       alpha_override=alpha_override)
    out = fwd.h_final.values.copy()
    engine.reset_tape()
    return out


def eval_edge_weights(state: TrainState) -> np.ndarray:
    """Eval-mode per-edge weights (deterministic)."""
    model = state.model
    if state.fixed_weights is not None:
        return np.asarray(state.fixed_weights).ravel().copy()
    engine.reset_tape()
    logits = gating.edge_logits(model.gate, Tensor(model.graph.features),
                                model.emb, model.graph)
    out = expit(logits.values / state.cfg.tau).ravel()
    engine.reset_tape()
    return out


# ---------------------------------------------------------------------------
# few-shot fine-tuning

def finetune_fewshot(state: TrainState, g: Graph, support: np.ndarray,
                     cfg: TrainConfig | None = None) -> TrainState:
    """Add a linear head and fine-tune gating + head with experts frozen."""
    cfg = cfg or state.cfg
    model = state.model
    support = np.asarray(support, dtype=np.int64)
    if support.size == 0:
        raise ValueError("support set is empty")
    if g.labels is None:
        raise ValueError("few-shot fine-tuning requires labels")
    present = np.unique(g.labels[support])
    if present.size != g.n_classes:
        missing = sorted(set(range(g.n_classes)) - set(present.tolist()))
        raise ValueError(f"support set misses classes {missing}")

    model.add_head(g.n_classes, state.rng)
    trainable = model.gating_parameters() + model.head_parameters()
    state.adam_head = AdamState(lr=cfg.lr)
    onehot = np.zeros((support.size, g.n_classes))
    onehot[np.arange(support.size), g.labels[support]] = 1.0

    for step in range(cfg.finetune_epochs):
        engine.reset_tape()
        engine.zero_grads(model.all_parameters())
        plan = sample_mask(state.rng, g.n_nodes, cfg.mask_ratio)
        x_input = masked_input(g.features, plan, model.mask_token)
        fwd = full_forward(model, x_input, train_mode=True, rng=state.rng,
                           fixed_weights=state.fixed_weights)
        l_mae = mae_loss(fwd.h_final, model.decoder, g.features, plan, cfg.gamma)
        l_load = _mean_load(fwd)
        l_div = _channel_mean_diversity(fwd.diversity_targets)
        loss = composite_loss(l_mae, l_load, l_div, cfg)
        if cfg.lambda_cls:
            logits = engine.add_row(
                engine.matmul(engine.gather_rows(fwd.h_final, support), model.head_w),
                model.head_b)
            log_probs = engine.log_softmax_rows(logits)
            l_cls = engine.scale(engine.frobenius(log_probs, Tensor(onehot)),
                                 -1.0 / support.size)
            loss = engine.add(loss, engine.scale(l_cls, cfg.lambda_cls))
        engine.backward(loss)
        engine.adam_step(trainable, state.adam_head)
    engine.reset_tape()
    return state


def classify(state: TrainState, embeddings: np.ndarray) -> np.ndarray:
    """Predicted labels from the fine-tuned head."""
    if state.model.head_w is None:
        raise ValueError("model has no classification head; fine-tune first")
    logits = embeddings @ state.model.head_w.values + state.model.head_b.values
    return logits.argmax(axis=1)


# ---------------------------------------------------------------------------
# naive flat MoE baseline

class NaiveMoE:
    """Flat sparse MoE: one gate softmax-routing directly over heterogeneous
    experts (no backbone, no residual decomposition, no diversity loss).

    ``top_k`` selects how many experts each node's gate keeps before the
    softmax renormalization (same mechanics as the backbone's routing);
    ``top_k=None`` gives a dense softmax over all experts.
    """

    def __init__(self, g: Graph, cfg: TrainConfig, kinds: Sequence[str],
                 top_k: int | None = 1):
        self.graph = g
        self.cfg = cfg
        self.kinds = tuple(kinds)
        self.top_k = top_k
        self.ops = graphs.normalize(g)
        self.emb = graphs.structural_embeddings(self.ops, d_s=cfg.d_s)
        rng = np.random.default_rng(cfg.seed)
        f_dim, d_e = g.feat_dim, cfg.hidden
        self.gate_w = engine.glorot(rng, f_dim + cfg.d_s, len(kinds))
        self.gate_b = engine.zeros_param((1, len(kinds)))
        self.experts = [experts.init_residual_expert(kind, f_dim, d_e, rng)
                        for kind in kinds]
        self.decoder = DecoderParams(
            w1=engine.glorot(rng, d_e, d_e),
            b1=engine.zeros_param((1, d_e)),
            w2=engine.glorot(rng, d_e, f_dim),
            b2=engine.zeros_param((1, f_dim)),
        )
        self.mask_token = engine.zeros_param((1, f_dim))

    def parameters(self) -> list[Tensor]:
        out = [self.gate_w, self.gate_b, self.mask_token]
        for ex in self.experts:
            out.extend(ex.parameters())
        out.extend(self.decoder.parameters())
        return out

    def forward(self, x_input: Tensor) -> Tensor:
        view = filters.raw_view(self.graph)
        gate_in = engine.concat_cols(x_input, Tensor(self.emb.s))
        logits = engine.add_row(engine.matmul(gate_in, self.gate_w), self.gate_b)
        if self.top_k is not None and self.top_k < len(self.experts):
            order = np.argsort(-logits.values, axis=1, kind="stable")[:, :self.top_k]
            selected = np.zeros(logits.shape, dtype=bool)
            np.put_along_axis(selected, order, True, axis=1)
            logits = engine.add(logits, Tensor(np.where(selected, 0.0, -1e30)))
        probs = engine.softmax_rows(logits)
        h = None
        for k, expert in enumerate(self.experts):
            term = engine.mul_col(expert.forward(x_input, view),
                                  engine.slice_cols(probs, k, k + 1))
            h = term if h is None else engine.add(h, term)
        return h


def naive_moe_baseline(g: Graph, cfg: TrainConfig,
                       kinds: Sequence[str] | None = None,
                       top_k: int | None = 1) -> list[dict]:
    """Per-epoch loss curve of the flat MoE trained on the same objective."""
    kinds = tuple(kinds) if kinds is not None else experts.RESIDUAL_KINDS
    moe = NaiveMoE(g, cfg, kinds, top_k=top_k)
    adam = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        engine.reset_tape()
        engine.zero_grads(moe.parameters())
        plan = sample_mask(rng, g.n_nodes, cfg.mask_ratio)
        x_input = masked_input(g.features, plan, moe.mask_token)
        h = _guard("naive forward", epoch, lambda: moe.forward(x_input))
        rows = engine.gather_rows(h, plan.indices)
        recon = moe.decoder.forward(rows)
        l_mae = _guard("l_mae", epoch, lambda: gating.scaled_cosine_error(
            recon, Tensor(g.features[plan.indices]), cfg.gamma))
        engine.backward(l_mae)
        engine.adam_step(moe.parameters(), adam)
        history.append({"epoch": epoch, "l_mae": l_mae.item(), "l_load": 0.0,
                        "l_div": 0.0, "l_svg": 0.0, "total": l_mae.item()})
    engine.reset_tape()
    return history


# ---------------------------------------------------------------------------
# persistence and metrics

def atomic_write_text(path: str, text: str) -> None:
    """Write via temp file + rename so interrupted runs never truncate."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def metrics_jsonl(history: list[dict]) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in history)


def write_metrics(history: list[dict], path: str) -> None:
    atomic_write_text(path, metrics_jsonl(history))


def write_routing_csv(routing_log: list[tuple], path: str) -> None:
    lines = ["step,channel,expert,f_k,P_k"]
    lines += [f"{s},{c},{k},{repr(f)},{repr(p)}" for s, c, k, f, p in routing_log]
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_model(state: TrainState, path: str) -> None:
    engine.save_checkpoint(path, {name: p.values
                                  for name, p in state.model.named_parameters().items()})


def load_model(state: TrainState, path: str) -> None:
    named = engine.load_checkpoint(path)
    if "head.w" in named and state.model.head_w is None:
        state.model.add_head(named["head.w"].shape[1], state.rng)
    params = state.model.named_parameters()
    for name, values in named.items():
        if name not in params:
            raise ValueError(f"checkpoint entry {name!r} does not match the model")
        if params[name].values.shape != values.shape:
            raise ValueError(f"checkpoint entry {name!r} has shape {values.shape}, "
                             f"model expects {params[name].values.shape}")
        params[name].values = values
