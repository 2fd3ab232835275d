import json
import subprocess
import sys
from pathlib import Path

import pytest

PKG_ROOT = Path(__file__).parent.parent


def run_cli(*args, **kw):
    return subprocess.run([sys.executable, "-m", "asymgraph", *args],
                          capture_output=True, text=True, cwd=PKG_ROOT, **kw)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small corpus generated through the CLI itself."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "synth.cfg"
    cfg.write_text("num_categories = 4\nproducts_per_category = 30\n"
                   "feature_dim = 8\nseed = 5\n")
    out = root / "corpus"
    proc = run_cli("synth", "--config", str(cfg), "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    return root, out


def test_help_exits_zero():
    proc = run_cli("--help")
    assert proc.returncode == 0
    assert "synth" in proc.stdout and "recommend" in proc.stdout


def test_missing_required_flag_exits_one():
    proc = run_cli("synth")
    assert proc.returncode == 1
    assert "--out" in proc.stderr


def test_unknown_subcommand_exits_one():
    proc = run_cli("frobnicate")
    assert proc.returncode == 1


def test_malformed_edge_line_exits_two(tmp_path, workspace):
    _root, out = workspace
    bad = tmp_path / "bad_edges.tsv"
    lines = (out / "edges.tsv").read_text().splitlines()
    lines.insert(3, "only_two\tfields")
    bad.write_text("\n".join(lines) + "\n")
    proc = run_cli("build-graph", "--edges", str(bad),
                   "--out", str(tmp_path / "g"))
    assert proc.returncode == 2
    assert "4" in proc.stderr  # offending line number


def test_synth_writes_manifest_and_files(workspace):
    _root, out = workspace
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["config"]["num_categories"] == 4
    assert manifest["seeds"] == {"seed": 5}
    for name in ("edges.tsv", "features.tsv", "ground_truth.tsv"):
        assert (out / name).exists()


def test_build_graph_stats(workspace, tmp_path):
    _root, out = workspace
    gdir = tmp_path / "graph"
    proc = run_cli("build-graph", "--edges", str(out / "edges.tsv"),
                   "--features", str(out / "features.tsv"),
                   "--out", str(gdir))
    assert proc.returncode == 0, proc.stderr
    stats = dict(line.split("\t") for line in
                 (gdir / "stats.tsv").read_text().splitlines())
    assert int(stats["num_nodes"]) == 120
    assert (gdir / "graph.tsv").exists()


@pytest.fixture(scope="module")
def trained(workspace, tmp_path_factory):
    root, out = workspace
    model_dir = tmp_path_factory.mktemp("model")
    cfg = root / "train.cfg"
    cfg.write_text("max_epochs = 2\nbatch_size = 256\nnum_layers = 2\n"
                   "embed_dim = 8\nfanouts = 10,10\nlr = 0.001\n"
                   "num_negatives = 2\n")
    proc = run_cli("train", "--graph", str(out / "edges.tsv"),
                   "--features", str(out / "features.tsv"),
                   "--config", str(cfg), "--out", str(model_dir),
                   "--split", "edge", "--split-seed", "0", "--threads", "1")
    assert proc.returncode == 0, proc.stderr
    return model_dir


def test_train_outputs(trained):
    for name in ("manifest.json", "model.ckpt", "train_state.ckpt",
                 "train_log.tsv", "config.txt", "graph.tsv"):
        assert (trained / name).exists(), name
    log_lines = (trained / "train_log.tsv").read_text().splitlines()
    assert len(log_lines) > 0
    assert len(log_lines[0].split("\t")) == 10


def test_embed_and_recommend(workspace, trained, tmp_path):
    _root, out = workspace
    emb_dir = tmp_path / "emb"
    proc = run_cli("embed", "--model", str(trained),
                   "--graph", str(trained / "graph.tsv"),
                   "--features", str(out / "features.tsv"),
                   "--out", str(emb_dir))
    assert proc.returncode == 0, proc.stderr
    assert (emb_dir / "graph.tsv").exists()  # self-contained index dir
    proc = run_cli("recommend", "--index", str(emb_dir),
                   "--query", "c00m000", "--k", "5", "--mode", "related")
    assert proc.returncode == 0, proc.stderr
    rows = [line.split("\t") for line in proc.stdout.strip().splitlines()]
    assert len(rows) <= 5
    assert all(r[0] == "c00m000" for r in rows)
    ranks = [int(r[1]) for r in rows]
    assert ranks == sorted(ranks)
    scores = [float(r[3]) for r in rows]
    assert scores == sorted(scores, reverse=True)


def test_recommend_unknown_key_exits_two(workspace, trained, tmp_path):
    _root, out = workspace
    emb_dir = tmp_path / "emb2"
    run_cli("embed", "--model", str(trained),
            "--graph", str(trained / "graph.tsv"),
            "--features", str(out / "features.tsv"), "--out", str(emb_dir))
    proc = run_cli("recommend", "--index", str(emb_dir),
                   "--query", "nonexistent-product")
    assert proc.returncode == 2
    assert "unknown" in proc.stderr.lower()


def test_coldstart_command(workspace, trained, tmp_path):
    _root, out = workspace
    cold = tmp_path / "cold.tsv"
    features = (out / "features.tsv").read_text().splitlines()
    header_dim = features[0].split("\t")[1]
    first_row = features[1].split("\t")[1]
    cold.write_text(f"1\t{header_dim}\nnewprod\t{first_row}\n")
    # --graph defaults to the training graph saved in the model directory
    proc = run_cli("coldstart", "--model", str(trained),
                   "--features", str(out / "features.tsv"),
                   "--cold", str(cold), "--k", "5")
    assert proc.returncode == 0, proc.stderr
    rows = [line.split("\t") for line in proc.stdout.strip().splitlines()]
    assert rows and all(r[0] == "newprod" for r in rows)


def test_eval_command_writes_reports(workspace, trained, tmp_path):
    _root, out = workspace
    eval_dir = tmp_path / "eval"
    proc = run_cli("eval", "--task", "node-rec", "--model", str(trained),
                   "--graph", str(out / "edges.tsv"),
                   "--features", str(out / "features.tsv"),
                   "--split-seed", "0", "--out", str(eval_dir),
                   "--threads", "1")
    assert proc.returncode == 0, proc.stderr
    metrics = (eval_dir / "metrics.tsv").read_text().splitlines()
    assert metrics[0] == "metric\tvalue"
    names = {line.split("\t")[0] for line in metrics[1:]}
    assert {"hitrate@5", "hitrate@10", "hitrate@20",
            "mrr@5", "mrr@10", "mrr@20"} <= names
    assert (eval_dir / "summary.txt").exists()
    assert (eval_dir / "manifest.json").exists()


def test_missing_input_file_exits_two(tmp_path):
    proc = run_cli("build-graph", "--edges", str(tmp_path / "ghost.tsv"),
                   "--out", str(tmp_path / "o"))
    assert proc.returncode == 2


def test_numerical_failure_exits_three(tmp_path):
    edges = tmp_path / "edges.tsv"
    edges.write_text("a\tb\tcp\nb\ta\tcp\n")
    features = tmp_path / "features.tsv"
    # values near the float64 ceiling overflow inside the aggregation
    features.write_text("2\t2\na\t1e308,1e308\nb\t1e308,1e308\n")
    cfg = tmp_path / "train.cfg"
    cfg.write_text("max_epochs = 1\nnum_layers = 1\nfanouts = 4\n"
                   "embed_dim = 4\nbatch_size = 8\nnum_negatives = 1\n")
    proc = run_cli("train", "--graph", str(edges), "--features", str(features),
                   "--config", str(cfg), "--out", str(tmp_path / "m"),
                   "--split", "none", "--threads", "1")
    assert proc.returncode == 3
    assert "non-finite" in proc.stderr


def test_log_level_env_var(workspace, tmp_path):
    _root, out = workspace
    proc = run_cli("build-graph", "--edges", str(out / "edges.tsv"),
                   "--out", str(tmp_path / "g1"),
                   env={"ASYMGRAPH_LOG": "debug", "PATH": "/usr/bin:/bin"})
    assert proc.returncode == 0
    assert "INFO" in proc.stderr
    proc = run_cli("build-graph", "--edges", str(out / "edges.tsv"),
                   "--out", str(tmp_path / "g2"),
                   env={"ASYMGRAPH_LOG": "error", "PATH": "/usr/bin:/bin"})
    assert proc.returncode == 0
    assert "INFO" not in proc.stderr
