import json
from pathlib import Path

import pytest

from latentrem.cli import main, read_trajectories, write_trajectories

TOY = Path(__file__).resolve().parents[1] / "demos" / "data" / "toy_events.tsv"
FAST = ["--max-iters", "200", "--refit-iters", "60"]


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    assert main(["fit", "--input", str(TOY), "--out", str(out), "--seed", "3"] + FAST) == 0
    return out


def test_fit_outputs(fitted):
    for name in ("trajectories.csv", "clusters.csv", "elbo_trace.csv", "checkpoint.npz", "manifest.json"):
        assert (fitted / name).exists(), name
    header = (fitted / "trajectories.csv").read_text().splitlines()[0]
    assert header == "node,t,x1,x2"
    trace = (fitted / "elbo_trace.csv").read_text().splitlines()
    assert trace[0] == "iter,loglik,p_smooth,p_clust,elbo" and len(trace) > 200
    man = json.loads((fitted / "manifest.json").read_text())
    assert man["command"] == "fit" and man["args"]["seed"] == 3


def test_rerun_from_manifest_is_identical(fitted, tmp_path):
    assert main(["fit", "--config", str(fitted / "manifest.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "trajectories.csv").read_bytes() == (fitted / "trajectories.csv").read_bytes()


def test_contradictory_flags(tmp_path):
    assert main(["fit", "--input", str(TOY), "--out", str(tmp_path), "--format", "discrete",
                 "--mode", "cc-partial"]) == 2
    assert not any(tmp_path.iterdir())
    assert main(["fit", "--input", str(TOY), "--out", str(tmp_path), "--xi1", "1.0"]) == 2
    assert main(["fit", "--input", str(TOY), "--out", str(tmp_path), "--batch-size", "0"]) == 2


def test_module_errors_exit_1(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("a b 0.1\na b\n")
    assert main(["fit", "--input", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["fit", "--input", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "o")]) == 1


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["simulate", "nope", "--out", "x"])
    assert e.value.code == 2


def test_eval(fitted, tmp_path, capsys):
    tr = fitted / "trajectories.csv"
    assert main(["eval", "--truth", str(tr), "--estimate", str(tr)]) == 0
    assert float(capsys.readouterr().out.split()[1]) == pytest.approx(0.0, abs=1e-20)
    ids, grid, X = read_trajectories(tr)
    write_trajectories(tmp_path / "short.csv", ids[:-1], X[:-1], grid)
    assert main(["eval", "--truth", str(tr), "--estimate", str(tmp_path / "short.csv")]) == 2
    cl = (fitted / "clusters.csv").read_text().splitlines()
    perm = [cl[0]] + [",".join([r.split(",")[0], str(int(r.split(",")[1]) + 7), r.split(",")[2]]) for r in cl[1:]]
    (tmp_path / "perm.csv").write_text("\n".join(perm) + "\n")
    capsys.readouterr()
    assert main(["eval", "--truth-clusters", str(fitted / "clusters.csv"), "--clusters", str(tmp_path / "perm.csv")]) == 0
    assert capsys.readouterr().out.strip() == "accuracy\t1.0"


def test_cluster_and_export(fitted, tmp_path):
    out = tmp_path / "c"
    assert main(["cluster", "--checkpoint", str(fitted / "checkpoint.npz"), "--radius", "0",
                 "--radius", "1e9", "--out", str(out)]) == 0
    sweep = (out / "sweep.csv").read_text().splitlines()
    assert sweep[1].endswith(",16") and sweep[2].endswith(",1")
    assert main(["export-trajectories", "--checkpoint", str(fitted / "checkpoint.npz"),
                 "--out", str(tmp_path / "t.csv")]) == 0
    assert (tmp_path / "t.csv").read_bytes() == (fitted / "trajectories.csv").read_bytes()
    assert main(["cluster", "--checkpoint", str(fitted / "checkpoint.npz"), "--out", str(out)]) == 2


def test_simulate_dataset_and_summary(tmp_path):
    assert main(["simulate", "dataset", "--out", str(tmp_path / "d"), "--seed", "1"]) == 0
    assert (tmp_path / "d" / "events.tsv").exists()
    assert main(["simulate", "vary_p", "--scale", "tiny", "--replicates", "1", "--max-iters", "30",
                 "--threads", "1", "--out", str(tmp_path / "s")]) == 0
    rows = (tmp_path / "s" / "summary.csv").read_text().splitlines()
    assert len(rows) == 3
    assert rows[1].split(",")[3] == ""


def test_yaml_config(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"input: {TOY}\nmax_iters: 50\nrefit_iters: 20\nno_cluster: true\n")
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "clusters.csv").read_text().count("\n") == 17
    bad = tmp_path / "bad.yaml"
    bad.write_text("not_a_flag: 1\n")
    with pytest.raises(SystemExit) as e:
        main(["fit", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert e.value.code == 2


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit):
        main(["fit", "--help"])
    text = capsys.readouterr().out
    for flag in ("--input", "--format", "--delimiter", "--horizon", "--intervals", "--batch-size", "--mode",
                 "--seed", "--controls-per-case", "--lr", "--xi1", "--xi2", "--adam-variant", "--patience",
                 "--max-iters", "--threads", "--config", "--out"):
        assert flag in text
