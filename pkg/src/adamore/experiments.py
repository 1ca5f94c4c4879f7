"""Experiment harnesses: oracle edge weights, noise robustness, training
stability, per-bucket filter comparisons, and hyperparameter sweeps.

Every run is an independent seeded training session, so multi-seed and
multi-value studies can execute in parallel processes; report assembly is
single-threaded and deterministic.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import evaluation, graphs, trainer
from .evaluation import ProbeResult
from .graphs import Graph
from .trainer import TrainConfig, atomic_write_text


@dataclass(frozen=True)
class OracleWeightSpec:
    """Label-derived edge weights with optional Gaussian corruption."""

    mode: str = "distinctiveness"       # distinctiveness | accuracy
    w_same: float = 0.9
    w_diff: float = 0.1
    p_coh_correct: float = 1.0
    p_disp_correct: float = 1.0
    noise_ratio: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.mode not in ("distinctiveness", "accuracy"):
            raise ValueError(f"unknown oracle mode {self.mode!r}")
        for name in ("w_same", "w_diff", "p_coh_correct", "p_disp_correct",
                     "noise_ratio"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be >= 0")


def oracle_weights(g: Graph, spec: OracleWeightSpec, seed: int = 0) -> np.ndarray:
    """Per-undirected-edge weights derived from ground-truth labels."""
    if g.labels is None:
        raise ValueError("oracle weights require labels")
    rng = np.random.default_rng(seed)
    same = g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]
    if spec.mode == "distinctiveness":
        w = np.where(same, spec.w_same, spec.w_diff).astype(np.float64)
    else:
        coh_hit = rng.random(g.n_edges) < spec.p_coh_correct
        disp_hit = rng.random(g.n_edges) < spec.p_disp_correct
        w = np.where(same, np.where(coh_hit, 1.0, 0.0),
                     np.where(disp_hit, 0.0, 1.0))
    if spec.noise_ratio > 0.0 and spec.noise_std > 0.0:
        count = int(round(spec.noise_ratio * g.n_edges))
        hit = rng.choice(g.n_edges, size=count, replace=False)
        w = w.copy()
        w[hit] = np.clip(w[hit] + rng.normal(0.0, spec.noise_std, size=count), 0.0, 1.0)
    return w


def oracle_weight_run(g: Graph, spec: OracleWeightSpec, cfg: TrainConfig,
                      probe_repeats: int = 3, probe_seed: int = 100) -> ProbeResult:
    """Train with fixed oracle views in place of the learned generator, probe."""
    w = oracle_weights(g, spec, seed=cfg.seed)
    state = trainer.train(g, cfg, fixed_weights=w)
    emb = trainer.embed(state)
    return evaluation.linear_probe(emb, g.labels, g, repeats=probe_repeats,
                                   seed=probe_seed)


# ---------------------------------------------------------------------------
# stability study

def loss_volatility(curve: list[float]) -> float:
    """Standard deviation over the final quarter of a loss curve."""
    tail = curve[-max(1, len(curve) // 4):]
    return float(np.std(tail))


@dataclass
class StabilityReport:
    curves: dict[str, dict[int, list[float]]]   # arm -> seed -> l_mae curve
    volatility: dict[str, float]                # median over seeds
    final_loss: dict[str, float]                # median over seeds
    volatility_ratio: float                     # full model / naive heterogeneous

    def curve_rows(self) -> list[tuple]:
        rows = []
        for arm, by_seed in sorted(self.curves.items()):
            for seed, curve in sorted(by_seed.items()):
                rows += [(epoch, f"{arm}:seed{seed}", loss)
                         for epoch, loss in enumerate(curve)]
        return rows


def stability_bench(g: Graph, cfg: TrainConfig, seeds=(0, 1, 2, 3, 4),
                    include_homogeneous: bool = False, jobs: int = 1) -> StabilityReport:
    """Backbone-residual vs naive flat MoE under matched seeds and budgets."""
    arms = ["backbone-residual", "naive-heterogeneous"]
    if include_homogeneous:
        arms.append("naive-homogeneous")
    tasks = [(arm, seed, g, cfg) for arm in arms for seed in seeds]
    results = _map_jobs(_stability_worker, tasks, jobs)
    curves: dict[str, dict[int, list[float]]] = {arm: {} for arm in arms}
    for (arm, seed, _, _), curve in zip(tasks, results):
        curves[arm][seed] = curve
    volatility = {arm: float(np.median([loss_volatility(c) for c in by_seed.values()]))
                  for arm, by_seed in curves.items()}
    final_loss = {arm: float(np.median([c[-1] for c in by_seed.values()]))
                  for arm, by_seed in curves.items()}
    naive = volatility["naive-heterogeneous"]
    ratio = volatility["backbone-residual"] / naive if naive > 0 else float("inf")
    return StabilityReport(curves=curves, volatility=volatility,
                           final_loss=final_loss, volatility_ratio=ratio)


def _stability_worker(task):
    arm, seed, g, cfg = task
    run_cfg = replace(cfg, seed=seed)
    if arm == "backbone-residual":
        history = trainer.train(g, run_cfg).history
    elif arm == "naive-heterogeneous":
        history = trainer.naive_moe_baseline(g, run_cfg)
    else:
        history = trainer.naive_moe_baseline(g, run_cfg, kinds=("gcn-layer",) * 4)
    return [rec["l_mae"] for rec in history]


# ---------------------------------------------------------------------------
# per-bucket motivation analysis

def _dense_filtered(g: Graph, kind: str, hops: int) -> np.ndarray:
    ops = graphs.normalize(g)
    h = g.features.copy()
    for _ in range(hops):
        if kind == "sgc":
            h = ops.a_tilde @ h
        else:
            h = h - ops.a_tilde @ h
    return h


def _bucket_indices(values: np.ndarray, n_buckets: int = 5):
    """Quantile buckets; returns (bucket id per entry, bucket count)."""
    if np.unique(values).size == 1:
        warnings.warn("degenerate bucketing: all values identical", stacklevel=2)
        return np.zeros(values.shape[0], dtype=np.int64), 1
    edges = np.unique(np.quantile(values, np.linspace(0, 1, n_buckets + 1)[1:-1]))
    edges = edges[(edges > values.min()) & (edges <= values.max())]
    bucket = np.searchsorted(edges, values, side="right")
    return bucket, int(bucket.max()) + 1


def _per_bucket_accuracy(emb: np.ndarray, g: Graph, bucket: np.ndarray,
                         n_buckets: int, split) -> list[float]:
    w, b = evaluation._fit_logreg(emb[split.train], g.labels[split.train],
                                  g.n_classes, steps=300, lr=0.05)
    pred = (emb @ w + b).argmax(axis=1)
    out = []
    for q in range(n_buckets):
        members = np.intersect1d(split.test, np.flatnonzero(bucket == q))
        out.append(float((pred[members] == g.labels[members]).mean())
                   if members.size else float("nan"))
    return out


def motivation_analysis(g: Graph, seed: int = 0, hops: int = 1,
                        depths: tuple[int, int] = (1, 4)) -> dict:
    """Per-bucket probe accuracy of complementary filters and depths.

    (a) buckets nodes by local-homophily quantile and compares a low-pass
    against a high-pass probe; (b) buckets by clustering coefficient and
    compares shallow against deep low-pass propagation.
    """
    if g.labels is None:
        raise ValueError("motivation analysis requires labels")
    split = graphs.make_splits(g, (0.3, 0.1, 0.6), seed=seed)

    homo = graphs.local_homophily(g)
    valid = homo >= 0.0
    if not valid.any():
        raise ValueError("every node is isolated; no homophily buckets")
    bucket = np.full(g.n_nodes, -1, dtype=np.int64)
    bucket[valid], n_hb = _bucket_indices(homo[valid])
    sgc_emb = _dense_filtered(g, "sgc", hops)
    lap_emb = _dense_filtered(g, "lapsgc", hops)
    homophily_section = {
        "n_buckets": n_hb,
        "bucket_mean_homophily": [
            float(homo[valid][bucket[valid] == q].mean())
            if (bucket[valid] == q).any() else float("nan")
            for q in range(n_hb)],
        "sgc": _per_bucket_accuracy(sgc_emb, g, bucket, n_hb, split),
        "lapsgc": _per_bucket_accuracy(lap_emb, g, bucket, n_hb, split),
    }

    coef = graphs.clustering_coefficient(g)
    cbucket, n_cb = _bucket_indices(coef)
    clustering_section = {"n_buckets": n_cb}
    for depth in depths:
        emb = _dense_filtered(g, "sgc", depth)
        clustering_section[f"depth{depth}"] = _per_bucket_accuracy(
            emb, g, cbucket, n_cb, split)
    return {"homophily": homophily_section, "clustering": clustering_section}


# ---------------------------------------------------------------------------
# sweeps

SWEEP_AXES = ("lambda_load", "hidden")


def sensitivity_sweep(g: Graph, axis: str, values, cfg: TrainConfig,
                      seeds=(0, 1, 2), jobs: int = 1) -> list[dict]:
    """One trained session per (value, seed); probe accuracy table."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ValueError("sweep values must be nonempty")
    tasks = [(g, replace(cfg, **{axis: type(getattr(cfg, axis))(v), "seed": int(s)}))
             for v in values for s in seeds]
    accs = _map_jobs(_train_probe_worker, tasks, jobs)
    rows = []
    for i, v in enumerate(values):
        per_seed = accs[i * len(seeds):(i + 1) * len(seeds)]
        rows.append({"value": v, "median_accuracy": float(np.median(per_seed)),
                     "mean_accuracy": float(np.mean(per_seed)),
                     "per_seed": per_seed})
    return rows


def noise_robustness(g: Graph, cfg: TrainConfig, ratios=(0.0, 0.2, 0.5, 0.8),
                     stddev: float = 0.5, seeds=(0, 1, 2, 3, 4),
                     base: OracleWeightSpec | None = None, jobs: int = 1) -> list[dict]:
    """Probe accuracy as oracle guiding weights get progressively corrupted."""
    base = base or OracleWeightSpec()
    tasks = []
    for ratio in ratios:
        spec = replace(base, noise_ratio=float(ratio),
                       noise_std=stddev if ratio > 0 else 0.0)
        tasks += [(g, spec, replace(cfg, seed=int(s))) for s in seeds]
    accs = _map_jobs(_oracle_probe_worker, tasks, jobs)
    rows = []
    for i, ratio in enumerate(ratios):
        per_seed = accs[i * len(seeds):(i + 1) * len(seeds)]
        rows.append({"value": float(ratio), "median_accuracy": float(np.median(per_seed)),
                     "mean_accuracy": float(np.mean(per_seed)), "per_seed": per_seed})
    return rows


def distinctiveness_study(g: Graph, cfg: TrainConfig,
                          pairs=((0.9, 0.1), (0.7, 0.3), (0.5, 0.5)),
                          seeds=(0, 1, 2, 3, 4), jobs: int = 1) -> list[dict]:
    """Probe accuracy as the oracle weight separation shrinks."""
    tasks = []
    for w_same, w_diff in pairs:
        spec = OracleWeightSpec(mode="distinctiveness", w_same=w_same, w_diff=w_diff)
        tasks += [(g, spec, replace(cfg, seed=int(s))) for s in seeds]
    accs = _map_jobs(_oracle_probe_worker, tasks, jobs)
    rows = []
    for i, (w_same, w_diff) in enumerate(pairs):
        per_seed = accs[i * len(seeds):(i + 1) * len(seeds)]
        rows.append({"value": f"{w_same}/{w_diff}",
                     "median_accuracy": float(np.median(per_seed)),
                     "mean_accuracy": float(np.mean(per_seed)), "per_seed": per_seed})
    return rows


def _train_probe_worker(task):
    g, cfg = task
    state = trainer.train(g, cfg)
    emb = trainer.embed(state)
    return evaluation.linear_probe(emb, g.labels, g, repeats=3,
                                   seed=1000 + cfg.seed).mean


def _oracle_probe_worker(task):
    g, spec, cfg = task
    return oracle_weight_run(g, spec, cfg, probe_repeats=3,
                             probe_seed=1000 + cfg.seed).mean


def _map_jobs(worker, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


# ---------------------------------------------------------------------------
# report files

def write_report_json(report, path: str) -> None:
    atomic_write_text(path, json.dumps(report, sort_keys=True, indent=2) + "\n")


def write_report_csv(rows: list[dict], path: str) -> None:
    if not rows:
        atomic_write_text(path, "")
        return
    keys = []
    for row in rows:
        keys += [k for k in row if k not in keys]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=keys)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def write_curves_csv(rows: list[tuple], path: str) -> None:
    lines = ["epoch,arm,loss"] + [f"{e},{arm},{repr(float(x))}" for e, arm, x in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")
