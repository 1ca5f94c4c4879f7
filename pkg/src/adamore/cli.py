"""Command-line entry point.

Subcommands cover training, embedding, evaluation, and the experiment
harnesses. Option precedence is flags over config-file keys over defaults;
a config file holds flat ``key=value`` lines mirroring the training
configuration, and unknown keys are rejected. All randomness is controlled
by --seed, and primary output files are written atomically.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import evaluation, experiments, fusion, gating, graphs, trainer
from .engine import Tensor
from .trainer import TrainConfig

# every tunable key, its owning module, and how to parse it from text
CONFIG_REGISTRY = {
    "epochs": ("trainer", int),
    "lr": ("trainer", float),
    "hidden": ("trainer", int),
    "mask_ratio": ("trainer", float),
    "gamma": ("trainer", float),
    "gamma_svg": ("view-gating", float),
    "lambda_load": ("expert-moe", float),
    "lambda_div": ("expert-moe", float),
    "lambda_cls": ("trainer", float),
    "tau": ("view-gating", float),
    "top_k": ("expert-moe", int),
    "n_exp": ("expert-moe", int),
    "d_s": ("graph-core", int),
    "edge_hidden": ("view-gating", int),
    "residual_kinds": ("expert-moe", lambda s: tuple(t for t in s.split(",") if t)),
    "diversity_targets": ("expert-moe", str),
    "svg_steps": ("trainer", int),
    "finetune_epochs": ("trainer", int),
    "normalize_features": ("graph-core", lambda s: s.lower() in ("1", "true", "yes")),
    "seed": ("trainer", int),
}


class UsageError(Exception):
    """Validation problem; the CLI exits with status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def read_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_REGISTRY:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = CONFIG_REGISTRY[key][1](raw)
    return values


def build_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in CONFIG_REGISTRY:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid configuration: {err}") from err


def _add_config_flags(p: argparse.ArgumentParser, include=("seed",)) -> None:
    p.add_argument("--config", help="key=value config file")
    for key in CONFIG_REGISTRY:
        if include != "all" and key not in include:
            continue
        _, conv = CONFIG_REGISTRY[key]
        flag = "--" + key.replace("_", "-")
        if key == "normalize_features":
            p.add_argument(flag, dest=key, action="store_const", const=True)
        elif key == "residual_kinds":
            p.add_argument(flag, dest=key, type=CONFIG_REGISTRY[key][1],
                           metavar="KIND[,KIND...]")
        else:
            p.add_argument(flag, dest=key, type=conv)


_TRAIN_FLAGS = "all"


def build_parser() -> _Parser:
    parser = _Parser(prog="adamore",
                     description="Unsupervised graph mixture-of-residual-experts")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-sbm", help="generate a stochastic block model graph directory")
    p.add_argument("--blocks", type=int, required=True)
    p.add_argument("--per-block", type=int, required=True)
    p.add_argument("--p-in", type=float, required=True)
    p.add_argument("--p-out", type=float, required=True)
    p.add_argument("--feat-dim", type=int, default=16)
    p.add_argument("--feat-signal", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="unsupervised training; writes metrics and checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p, include=_TRAIN_FLAGS)

    p = sub.add_parser("embed", help="write eval-mode embeddings from a trained model")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--out", help="output tsv (default <model-dir>/embeddings.tsv)")

    p = sub.add_parser("eval-probe", help="linear probe accuracy of a trained model")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=100)
    p.add_argument("--out")

    p = sub.add_parser("eval-cluster", help="k-means clustering metrics of a trained model")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("eval-fewshot", help="prototype few-shot accuracy of a trained model")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--tasks", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("bench-stability", help="stability of full model vs naive flat MoE")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--include-homogeneous", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p, include=_TRAIN_FLAGS)

    p = sub.add_parser("exp-oracle-weights", help="probe accuracy under oracle edge weights")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("distinctiveness", "accuracy"),
                   default="distinctiveness")
    p.add_argument("--pairs", default="0.9/0.1,0.7/0.3,0.5/0.5",
                   help="comma list of w_same/w_diff (or p_coh/p_disp) pairs")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p, include=_TRAIN_FLAGS)

    p = sub.add_parser("exp-noise", help="probe accuracy vs noise on oracle weights")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", default="0,0.2,0.5,0.8")
    p.add_argument("--stddev", type=float, default=0.5)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p, include=_TRAIN_FLAGS)

    p = sub.add_parser("exp-sensitivity", help="sweep lambda_load or hidden dimension")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--axis", choices=experiments.SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p, include=_TRAIN_FLAGS)

    p = sub.add_parser("motivate", help="per-bucket filter/depth comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    sub.add_parser("print-config", help="print every config default with its module")
    return parser


# ---------------------------------------------------------------------------
# command implementations

def _load_graph_checked(path: str) -> graphs.Graph:
    try:
        return graphs.load_graph(path)
    except graphs.GraphFormatError as err:
        raise UsageError(str(err)) from err


def _write_run_config(cfg: TrainConfig, path: str) -> None:
    lines = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(value)
        lines.append(f"{f.name}={value}")
    trainer.atomic_write_text(path, "\n".join(lines) + "\n")


def _load_model_dir(model_dir: str):
    cfg_path = os.path.join(model_dir, "config.txt")
    data_path = os.path.join(model_dir, "data_path.txt")
    ckpt_path = os.path.join(model_dir, "model.ckpt")
    for required in (cfg_path, data_path, ckpt_path):
        if not os.path.exists(required):
            raise UsageError(f"missing model file: {required}")
    cfg = TrainConfig(**read_config_file(cfg_path))
    with open(data_path) as fh:
        g = _load_graph_checked(fh.read().strip())
    state = trainer.init_state(g, cfg)
    trainer.load_model(state, ckpt_path)
    return state, g


def cmd_gen_sbm(args) -> int:
    g = graphs.gen_sbm(args.per_block, args.blocks, args.p_in, args.p_out,
                       feat_dim=args.feat_dim, feat_signal=args.feat_signal,
                       seed=args.seed)
    graphs.save_graph(g, args.out)
    print(f"wrote {g.n_nodes} nodes, {g.n_edges} edges to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    g = _load_graph_checked(args.data)
    state = trainer.train(g, cfg)
    os.makedirs(args.out, exist_ok=True)
    trainer.write_metrics(state.history, os.path.join(args.out, "metrics.jsonl"))
    trainer.write_routing_csv(state.routing_log, os.path.join(args.out, "routing.csv"))
    trainer.save_model(state, os.path.join(args.out, "model.ckpt"))
    _write_run_config(cfg, os.path.join(args.out, "config.txt"))
    trainer.atomic_write_text(os.path.join(args.out, "data_path.txt"),
                              os.path.abspath(args.data) + "\n")
    weights = trainer.eval_edge_weights(state)
    gating.export_weights_tsv(g, weights, os.path.join(args.out, "weights.tsv"))
    alpha = trainer.full_forward(state.model, Tensor(g.features), train_mode=False,
                                 rng=np.random.default_rng(0),
                                 fixed_weights=state.fixed_weights).alpha
    fusion.export_alpha_tsv(alpha, os.path.join(args.out, "alpha.tsv"))
    print(f"trained {cfg.epochs} epochs; final loss "
          f"{state.history[-1]['total']:.6f}; outputs in {args.out}")
    return 0


def cmd_embed(args) -> int:
    state, g = _load_model_dir(args.model_dir)
    emb = trainer.embed(state)
    out = args.out or os.path.join(args.model_dir, "embeddings.tsv")
    lines = ["\t".join(repr(float(x)) for x in row) for row in emb]
    trainer.atomic_write_text(out, "\n".join(lines) + "\n")
    print(f"wrote {emb.shape[0]}x{emb.shape[1]} embeddings to {out}")
    return 0


def _require_labels(g: graphs.Graph) -> None:
    if g.labels is None:
        raise UsageError("this command requires labels.tsv in the graph directory")


def cmd_eval_probe(args) -> int:
    state, g = _load_model_dir(args.model_dir)
    _require_labels(g)
    emb = trainer.embed(state)
    res = evaluation.linear_probe(emb, g.labels, g, repeats=args.repeats,
                                  seed=args.seed)
    report = {"accuracy_mean": res.mean, "accuracy_std": res.std,
              "per_split": list(res.accuracies)}
    if args.out:
        experiments.write_report_json(report, args.out)
    print(f"probe accuracy {res.mean:.4f} +/- {res.std:.4f} over {args.repeats} splits")
    return 0


def cmd_eval_cluster(args) -> int:
    state, g = _load_model_dir(args.model_dir)
    _require_labels(g)
    emb = trainer.embed(state)
    res = evaluation.kmeans_eval(emb, g.labels, k=g.n_classes,
                                 seeds=tuple(range(args.seed, args.seed + 5)))
    report = {"acc": res.acc, "nmi": res.nmi, "ari": res.ari}
    if args.out:
        experiments.write_report_json(report, args.out)
    print(f"clustering ACC {res.acc:.4f} NMI {res.nmi:.4f} ARI {res.ari:.4f}")
    return 0


def cmd_eval_fewshot(args) -> int:
    state, g = _load_model_dir(args.model_dir)
    _require_labels(g)
    emb = trainer.embed(state)
    res = evaluation.prototype_fewshot(emb, g.labels, k=args.k,
                                       n_tasks=args.tasks, seed=args.seed)
    report = {"k": args.k, "accuracy_mean": res.mean, "accuracy_std": res.std}
    if args.out:
        experiments.write_report_json(report, args.out)
    print(f"{args.k}-shot prototype accuracy {res.mean:.4f} +/- {res.std:.4f} "
          f"over {args.tasks} tasks")
    return 0


def cmd_bench_stability(args) -> int:
    cfg = build_config(args)
    g = _load_graph_checked(args.data)
    report = experiments.stability_bench(g, cfg, seeds=tuple(range(args.seeds)),
                                         include_homogeneous=args.include_homogeneous,
                                         jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    experiments.write_curves_csv(report.curve_rows(),
                                 os.path.join(args.out, "curves.csv"))
    experiments.write_report_json(
        {"volatility": report.volatility, "final_loss": report.final_loss,
         "volatility_ratio": report.volatility_ratio},
        os.path.join(args.out, "report.json"))
    print(f"volatility ratio (full/naive) {report.volatility_ratio:.4f}; "
          f"reports in {args.out}")
    return 0


def _parse_pairs(raw: str) -> tuple:
    pairs = []
    for token in raw.split(","):
        a, b = token.split("/")
        pairs.append((float(a), float(b)))
    return tuple(pairs)


def cmd_exp_oracle_weights(args) -> int:
    cfg = build_config(args)
    g = _load_graph_checked(args.data)
    _require_labels(g)
    pairs = _parse_pairs(args.pairs)
    if args.mode == "distinctiveness":
        rows = experiments.distinctiveness_study(g, cfg, pairs=pairs,
                                                 seeds=tuple(range(args.seeds)),
                                                 jobs=args.jobs)
    else:
        rows = []
        for p_coh, p_disp in pairs:
            spec = experiments.OracleWeightSpec(mode="accuracy", p_coh_correct=p_coh,
                                                p_disp_correct=p_disp)
            accs = [experiments.oracle_weight_run(
                g, spec, dataclasses.replace(cfg, seed=s)).mean
                for s in range(args.seeds)]
            rows.append({"value": f"{p_coh}/{p_disp}",
                         "median_accuracy": float(np.median(accs)),
                         "mean_accuracy": float(np.mean(accs)), "per_seed": accs})
    _write_rows(rows, args.out)
    for row in rows:
        print(f"{row['value']}: median accuracy {row['median_accuracy']:.4f}")
    return 0


def cmd_exp_noise(args) -> int:
    cfg = build_config(args)
    g = _load_graph_checked(args.data)
    _require_labels(g)
    ratios = tuple(float(x) for x in args.ratios.split(","))
    rows = experiments.noise_robustness(g, cfg, ratios=ratios, stddev=args.stddev,
                                        seeds=tuple(range(args.seeds)), jobs=args.jobs)
    _write_rows(rows, args.out)
    for row in rows:
        print(f"ratio {row['value']}: median accuracy {row['median_accuracy']:.4f}")
    return 0


def cmd_exp_sensitivity(args) -> int:
    cfg = build_config(args)
    g = _load_graph_checked(args.data)
    _require_labels(g)
    conv = float if args.axis == "lambda_load" else int
    values = tuple(conv(x) for x in args.values.split(","))
    rows = experiments.sensitivity_sweep(g, args.axis, values, cfg,
                                         seeds=tuple(range(args.seeds)),
                                         jobs=args.jobs)
    _write_rows(rows, args.out)
    for row in rows:
        print(f"{args.axis}={row['value']}: median accuracy "
              f"{row['median_accuracy']:.4f}")
    return 0


def _write_rows(rows, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    experiments.write_report_json(rows, os.path.join(out_dir, "report.json"))
    flat = [{k: (v if not isinstance(v, list) else " ".join(map(str, v)))
             for k, v in row.items()} for row in rows]
    experiments.write_report_csv(flat, os.path.join(out_dir, "report.csv"))


def cmd_motivate(args) -> int:
    g = _load_graph_checked(args.data)
    _require_labels(g)
    report = experiments.motivation_analysis(g, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    experiments.write_report_json(report, os.path.join(args.out, "report.json"))
    print(f"motivation report in {args.out}")
    return 0


def cmd_print_config(_args) -> int:
    cfg = TrainConfig()
    for f in dataclasses.fields(TrainConfig):
        module = CONFIG_REGISTRY[f.name][0]
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(value)
        print(f"{f.name} = {value}  # {module}")
    return 0


COMMANDS = {
    "gen-sbm": cmd_gen_sbm,
    "train": cmd_train,
    "embed": cmd_embed,
    "eval-probe": cmd_eval_probe,
    "eval-cluster": cmd_eval_cluster,
    "eval-fewshot": cmd_eval_fewshot,
    "bench-stability": cmd_bench_stability,
    "exp-oracle-weights": cmd_exp_oracle_weights,
    "exp-noise": cmd_exp_noise,
    "exp-sensitivity": cmd_exp_sensitivity,
    "motivate": cmd_motivate,
    "print-config": cmd_print_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except (ValueError, OSError, trainer.TrainingError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
