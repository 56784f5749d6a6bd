import numpy as np
import pytest

from temdenoise import cli, experiments, simgen, tta


def test_usage_and_help(capsys):
    assert cli.main(["bogus"]) == 1
    assert cli.main(["gen", "--domain", "agn"]) == 1
    assert cli.main(["gen", "--domain", "xyz", "--n", "3", "--out", "x"]) == 1
    assert cli.main(["--help"]) == 0
    assert cli.main(["adapt", "--help"]) == 0


def test_data_errors(tmp_path):
    assert cli.main(["dict", "learn", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "d.bin")]) == 2
    (tmp_path / "bad.bin").write_bytes(b"junk")
    assert cli.main(["gen", "--domain", "agn", "--n", "3", "--out", str(tmp_path / "g")]) == 0
    assert cli.main(["adapt", "--ckpt", str(tmp_path / "bad.bin"), "--dict", str(tmp_path / "bad.bin"),
                     "--data", str(tmp_path / "g"), "--report", str(tmp_path / "r.csv")]) == 2


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    p = {k: str(root / k) for k in ("src", "agn", "imp", "dict.bin", "model.bin", "adapt.csv", "eval.csv",
                                     "k.csv", "loss.csv")}
    assert cli.main(["gen", "--domain", "source", "--n", "80", "--seed", "1", "--out", p["src"]]) == 0
    assert cli.main(["gen", "--domain", "agn", "--n", "6", "--seed", "2", "--out", p["agn"]]) == 0
    assert cli.main(["gen", "--domain", "imp", "--n", "6", "--seed", "3", "--out", p["imp"]]) == 0
    assert cli.main(["dict", "learn", "--data", p["src"], "--k", "64", "--epochs", "2", "--max-iters", "30",
                     "--out", p["dict.bin"]]) == 0
    assert cli.main(["train", "--data", p["src"], "--dict", p["dict.bin"], "--epochs", "1", "--max-iters", "30",
                     "--out", p["model.bin"]]) == 0
    return root, p


def test_pipeline_outputs(pipeline):
    root, p = pipeline
    assert (root / "train_log.csv").read_text().startswith("# schema: train_log v1\nepoch,L_regress")
    assert cli.main(["adapt", "--ckpt", p["model.bin"], "--dict", p["dict.bin"], "--data", p["agn"],
                     "--batch", "4", "--report", p["adapt.csv"]]) == 0
    rows = tta.read_report(p["adapt.csv"])
    assert len(rows) == 2 and all(r["fallback_flag"] == 0 for r in rows)

    assert cli.main(["eval", "--ckpt", p["model.bin"], "--dict", p["dict.bin"], "--data", p["agn"], p["imp"],
                     "--report", p["eval.csv"]]) == 0
    rows = experiments.read_metric_rows(p["eval.csv"])
    assert [(r.domain, r.method) for r in rows[:5]] == [("agn", m) for m in experiments.METHODS]
    assert {r.domain for r in rows} == {"agn", "imp"} and all(r.n == 6 for r in rows)


def test_pipeline_ablations(pipeline):
    root, p = pipeline
    assert cli.main(["ablate", "k", "--data", p["src"], "--ks", "2,4", "--epochs", "2", "--max-iters", "30",
                     "--report", p["k.csv"]]) == 0
    grid = experiments.AblationGrid.read_csv(p["k.csv"], "k")
    assert [c["K"] for c in grid.cells] == [2, 4] and all(c["monotone"] == 1 for c in grid.cells)
    assert cli.main(["ablate", "losses", "--data", p["agn"], "--report", p["loss.csv"]]) == 1
    assert cli.main(["ablate", "losses", "--data", p["agn"], "--ckpt", p["model.bin"], "--dict", p["dict.bin"],
                     "--report", p["loss.csv"]]) == 0
    grid = experiments.AblationGrid.read_csv(p["loss.csv"], "losses")
    assert [c["components"] for c in grid.cells] == [
        "den", "sparse", "oov", "den+sparse", "den+oov", "sparse+oov", "den+sparse+oov"]


def test_digest_mismatch_is_data_error(pipeline, tmp_path):
    _, p = pipeline
    assert cli.main(["dict", "learn", "--data", p["src"], "--k", "64", "--epochs", "1", "--max-iters", "10",
                     "--seed", "9", "--out", str(tmp_path / "other.bin")]) == 0
    assert cli.main(["adapt", "--ckpt", p["model.bin"], "--dict", str(tmp_path / "other.bin"), "--data", p["agn"],
                     "--report", str(tmp_path / "r.csv")]) == 2


def test_cli_runs_are_reproducible(pipeline, tmp_path):
    _, p = pipeline
    out = str(tmp_path / "again.csv")
    assert cli.main(["adapt", "--ckpt", p["model.bin"], "--dict", p["dict.bin"], "--data", p["agn"],
                     "--batch", "4", "--report", out]) == 0
    assert open(out).read() == open(p["adapt.csv"]).read()
    assert cli.main(["gen", "--domain", "source", "--n", "80", "--seed", "1", "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "noisy.f32").read_bytes() == open(p["src"] + "/noisy.f32", "rb").read()


def test_pooled_loss_ablation(pipeline, tmp_path):
    _, p = pipeline
    out = tmp_path / "pool.csv"
    assert cli.main(["ablate", "losses", "--data", p["agn"], p["imp"], "--ckpt", p["model.bin"],
                     "--dict", p["dict.bin"], "--report", str(out)]) == 0
    assert len(experiments.AblationGrid.read_csv(out, "losses").cells) == 7
    assert cli.main(["ablate", "k", "--data", p["agn"], p["imp"], "--report", str(out)]) == 1
