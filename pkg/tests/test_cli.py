import subprocess
import sys

import numpy as np
import pytest

from cascadeim.bench import hamster_scale_graph
from cascadeim.cli import build_parser, main
from cascadeim.graph import load_edge_list, save_edge_list


@pytest.fixture()
def graph_file(tmp_path):
    g = hamster_scale_graph(40, m=2, seed=1)
    g = g.replace(labels=tuple(f"n{v}" for v in range(g.node_count)))
    path = tmp_path / "toy.txt"
    save_edge_list(g, path, weights=False)
    return path


def run(*argv):
    return main([str(a) for a in argv])


MINIMAL = {
    "degrade": ["--graph", "g"],
    "fit": ["--input", "x", "--gamma", "0.1"],
    "augment": ["--graph", "g", "--view", "sbv"],
    "evaluate": ["--graph", "g"],
    "viz": [],
    "spread": ["--graph", "g", "--seeds", "s"],
    "surrogate": ["predict", "--graph", "g", "--params", "p"],
    "gcl": ["train", "--graph", "g"],
    "policy": ["select", "--graph", "g", "--emb", "e", "--qparams", "q", "--budget", "1"],
}


@pytest.mark.parametrize("cmd", sorted(MINIMAL))
def test_every_subcommand_is_registered(cmd):
    args = build_parser().parse_args([cmd] + MINIMAL[cmd])
    assert args.command == cmd


def test_global_flags_after_subcommand(graph_file, tmp_path, capsys):
    seeds = tmp_path / "s.txt"
    seeds.write_text("n0\n")
    assert run("spread", "--graph", graph_file, "--seeds", seeds, "--rollouts", 20,
               "--seed", 3, "--out-dir", tmp_path / "o", "--out", "s.csv") == 0
    text = (tmp_path / "o" / "s.csv").read_text()
    assert text.startswith("mean,std_error\n") and capsys.readouterr().out == text


def test_config_file_sets_defaults(graph_file, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"out-dir={tmp_path / 'cfgout'}\nedge-drop=0.0\nfeature-mask=0.0\n")
    assert run("--config", cfg, "degrade", "--graph", graph_file, "--undirected") == 0
    kept = load_edge_list(tmp_path / "cfgout" / "degraded.txt", directed=False)
    assert kept.edge_count == load_edge_list(graph_file, directed=False).edge_count


def test_unknown_config_key(graph_file, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no-such-option=1\n")
    with pytest.raises(SystemExit, match="unknown config key"):
        run("--config", cfg, "degrade", "--graph", graph_file)


def test_missing_file_exits_with_code_2(tmp_path, capsys):
    assert run("spread", "--graph", tmp_path / "nope.txt", "--seeds", tmp_path / "s") == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_seed_label(graph_file, tmp_path):
    seeds = tmp_path / "s.txt"
    seeds.write_text("ghost\n")
    assert run("spread", "--graph", graph_file, "--seeds", seeds) == 2


def test_fit_reads_csv(tmp_path, capsys):
    x = np.arange(1, 11)
    y = 0.5 * x * 0.8 ** (x ** 1.1)
    data = tmp_path / "d.csv"
    data.write_text("x,beta\n" + "".join(f"{a},{float(b)!r}\n" for a, b in zip(x, y)))
    assert run("fit", "--input", data, "--gamma", 0.2) == 0
    out = dict(line.split("=") for line in capsys.readouterr().out.split())
    assert float(out["omega"]) == pytest.approx(1.1, rel=1e-6)


def test_evaluate_rejects_unknown_method(graph_file, tmp_path):
    assert run("evaluate", "--graph", graph_file, "--methods", "magic",
               "--out-dir", tmp_path) == 2


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "cascadeim.cli", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "spread" in res.stdout
