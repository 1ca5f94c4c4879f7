import json
import os

import pytest

from adamore import cli


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def sbm_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "sbm"
    code = run_cli("gen-sbm", "--blocks", "2", "--per-block", "12", "--p-in", "0.6",
                   "--p-out", "0.1", "--feat-dim", "5", "--seed", "7",
                   "--out", str(d))
    assert code == 0
    return str(d)


@pytest.fixture(scope="module")
def model_dir(sbm_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "model"
    code = run_cli("train", "--data", sbm_dir, "--out", str(out),
                   "--epochs", "3", "--hidden", "8", "--d-s", "3",
                   "--edge-hidden", "8", "--n-exp", "3", "--top-k", "2",
                   "--lr", "0.01", "--seed", "1")
    assert code == 0
    return str(out)


def test_gen_sbm_writes_graph_dir(sbm_dir):
    assert os.path.exists(os.path.join(sbm_dir, "edges.tsv"))
    assert os.path.exists(os.path.join(sbm_dir, "features.tsv"))
    assert os.path.exists(os.path.join(sbm_dir, "labels.tsv"))


def test_train_outputs(model_dir):
    for name in ("metrics.jsonl", "routing.csv", "model.ckpt", "config.txt",
                 "weights.tsv", "alpha.tsv", "data_path.txt"):
        assert os.path.exists(os.path.join(model_dir, name)), name
    lines = open(os.path.join(model_dir, "metrics.jsonl")).read().strip().splitlines()
    assert len(lines) == 3
    rec = json.loads(lines[0])
    assert set(rec) == {"epoch", "l_mae", "l_load", "l_div", "l_svg", "total"}


def test_train_deterministic_outputs(sbm_dir, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = run_cli("train", "--data", sbm_dir, "--out", str(out),
                       "--epochs", "2", "--hidden", "8", "--d-s", "3",
                       "--edge-hidden", "8", "--n-exp", "2", "--top-k", "1",
                       "--seed", "5")
        assert code == 0
        outs.append((out / "metrics.jsonl").read_bytes())
    assert outs[0] == outs[1]


def test_embed_command(model_dir, tmp_path):
    out = tmp_path / "emb.tsv"
    assert run_cli("embed", "--model-dir", model_dir, "--out", str(out)) == 0
    rows = out.read_text().strip().splitlines()
    assert len(rows) == 24
    assert len(rows[0].split("\t")) == 16  # 2 * hidden


def test_eval_commands(model_dir, tmp_path):
    probe_out = tmp_path / "probe.json"
    assert run_cli("eval-probe", "--model-dir", model_dir, "--repeats", "2",
                   "--out", str(probe_out)) == 0
    report = json.loads(probe_out.read_text())
    assert 0.0 <= report["accuracy_mean"] <= 1.0

    cluster_out = tmp_path / "cluster.json"
    assert run_cli("eval-cluster", "--model-dir", model_dir,
                   "--out", str(cluster_out)) == 0
    report = json.loads(cluster_out.read_text())
    assert set(report) == {"acc", "nmi", "ari"}

    fewshot_out = tmp_path / "fewshot.json"
    assert run_cli("eval-fewshot", "--model-dir", model_dir, "--k", "1",
                   "--tasks", "5", "--out", str(fewshot_out)) == 0
    report = json.loads(fewshot_out.read_text())
    assert report["k"] == 1


def test_motivate_command(sbm_dir, tmp_path):
    out = tmp_path / "motivate"
    assert run_cli("motivate", "--data", sbm_dir, "--out", str(out)) == 0
    report = json.loads((out / "report.json").read_text())
    assert "homophily" in report and "clustering" in report


def test_exp_sensitivity_single_value(sbm_dir, tmp_path):
    out = tmp_path / "sweep"
    code = run_cli("exp-sensitivity", "--data", sbm_dir, "--out", str(out),
                   "--axis", "lambda_load", "--values", "0.1", "--seeds", "1",
                   "--epochs", "2", "--hidden", "8", "--d-s", "3",
                   "--edge-hidden", "8", "--n-exp", "2", "--top-k", "1")
    assert code == 0
    rows = json.loads((out / "report.json").read_text())
    assert len(rows) == 1
    assert (out / "report.csv").exists()


def test_print_config_lists_defaults(capsys):
    assert run_cli("print-config") == 0
    out = capsys.readouterr().out
    assert "lr = 3e-05  # trainer" in out
    assert "lambda_load = 0.1  # expert-moe" in out
    for f in ("epochs", "hidden", "tau", "top_k", "n_exp", "seed"):
        assert f in out


def test_unknown_subcommand_exits_one(capsys):
    assert run_cli("frobnicate") == 1


def test_unknown_flag_exits_one(sbm_dir):
    assert run_cli("gen-sbm", "--bogus", "1") == 1


def test_missing_data_exits_one(tmp_path):
    assert run_cli("train", "--data", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "out")) == 1


def test_config_file_precedence(sbm_dir, tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("epochs=2\nhidden=8\nd_s=3\nedge_hidden=8\n"
                        "n_exp=2\ntop_k=1\nseed=3\n")
    out = tmp_path / "run"
    # the flag overrides the file's seed
    code = run_cli("train", "--data", sbm_dir, "--out", str(out),
                   "--config", str(cfg_file), "--seed", "9")
    assert code == 0
    text = (out / "config.txt").read_text()
    assert "seed=9" in text and "epochs=2" in text


def test_config_file_rejects_unknown_key(sbm_dir, tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("warp_speed=11\n")
    assert run_cli("train", "--data", sbm_dir, "--out", str(tmp_path / "x"),
                   "--config", str(cfg_file)) == 1


def test_help_everywhere_exits_zero():
    for cmd in cli.COMMANDS:
        with pytest.raises(SystemExit) as exc:
            run_cli(cmd, "--help")
        assert exc.value.code == 0
