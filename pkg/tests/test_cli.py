import shutil

import numpy as np
import pytest

from msprop import ingest
from msprop.cli import main
from msprop.contact import read_edge_list
from msprop.node2vec import read_embeddings

TINY = ["walk_length=8", "walks_per_node=2", "emb_dim=8", "emb_epochs=1", "d2=8", "d3=16",
        "struct_epochs=2", "prop_epochs=5", "batch_size=8", "n_conv=1"]


def sets(*extra):
    out = []
    for kv in TINY + list(extra):
        out += ["--set", kv]
    return out


def run(cmd, data, work, *args):
    return main([cmd, "--data", str(data), "--work", str(work), *sets(), *args])


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["fixture", "--out", str(root), "--per-species", "30", "--labels", "12"]) == 0
    return root


@pytest.fixture(scope="module")
def done(data, tmp_path_factory):
    work = tmp_path_factory.mktemp("work")
    assert run("run", data, work) == 0
    return work


def files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_run_writes_every_artifact(data, done):
    contacts = sorted(p.stem for p in (done / "contacts").glob("*.edges"))
    assert len(contacts) == 60
    for name in ("struct.smp", "h_st.hse", "prop.prp", "train_log.csv", "predictions.tsv",
                 "metrics.tsv", "pr_curve.csv"):
        assert (done / "MFO" / name).exists(), name
    metrics = (done / "MFO" / "metrics.tsv").read_text().splitlines()
    assert metrics[0] == "metric\tbranch\tvalue"
    assert [l.split("\t")[0] for l in metrics[1:]] == ["Fmax", "Smin", "AUPR", "wFmax", "wAUPR"]
    log = (done / "MFO" / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,loss,valid_fmax" and len(log) == 1 + 5


def test_residue_feature_width(done):
    pid = "S0P000"
    g = read_edge_list((done / "contacts" / f"{pid}.edges").read_text())
    emb = read_embeddings((done / "embeddings" / f"{pid}.emb").read_text())
    assert emb.shape == (g.n, 8)
    h_st = ingest.load_feature_table((done / "MFO" / "h_st.hse").read_bytes())
    assert h_st.dim == 16 and len(h_st.ids) == 60


def test_rerun_is_byte_identical(data, done, tmp_path):
    assert run("run", data, tmp_path) == 0
    assert files(tmp_path) == files(done)
    assert run("contact", data, tmp_path) == 0
    assert files(tmp_path / "contacts") == files(done / "contacts")


def test_seed_changes_predictions(data, done, tmp_path):
    assert run("run", data, tmp_path, "--seed", "5") == 0
    assert (tmp_path / "MFO" / "predictions.tsv").read_bytes() != (done / "MFO" / "predictions.tsv").read_bytes()


def test_corrupt_coordinates_fail_with_file_named(data, tmp_path, capsys):
    bad = tmp_path / "data"
    shutil.copytree(data, bad)
    (bad / "structures" / "S0P004.ca").write_text("1 A 0.0 0.0\n")
    assert run("contact", bad, tmp_path / "work") == 1
    err = capsys.readouterr().err
    assert "S0P004.ca" in err and "error" in err


def test_missing_structure_is_flagged(data, tmp_path):
    partial = tmp_path / "data"
    shutil.copytree(data, partial)
    (partial / "structures" / "S1P002.ca").unlink()
    assert run("contact", partial, tmp_path / "w") == 0
    assert (tmp_path / "w" / "contacts" / "missing.txt").read_text() == "S1P002\n"


def test_resume_continues_training(data, done, tmp_path):
    shutil.copytree(done, tmp_path / "w")
    w = tmp_path / "w"
    assert main(["train-prop", "--data", str(data), "--work", str(w), *sets("prop_epochs=3")]) == 0
    assert main(["train-prop", "--data", str(data), "--work", str(w), *sets(), "--resume"]) == 0
    full = (done / "MFO" / "train_log.csv").read_text().splitlines()
    resumed = (w / "MFO" / "train_log.csv").read_text().splitlines()
    assert len(resumed) == len(full)
    for a, b in zip(full[1:], resumed[1:]):
        ea, la, _ = a.split(",")
        eb, lb, _ = b.split(",")
        assert ea == eb and float(la) == pytest.approx(float(lb), rel=1e-9)


@pytest.mark.parametrize("flag", ["--no-struct", "--no-struct-model", "--no-propagation", "--no-label-prop"])
def test_ablation_flags_run(data, tmp_path, flag):
    assert run("run", data, tmp_path, flag) == 0
    values = dict(l.split("\t")[::2] for l in (tmp_path / "MFO" / "metrics.tsv").read_text().splitlines()[1:])
    assert 0.0 <= float(values["Fmax"]) <= 1.0
    if flag == "--no-struct":
        assert not (tmp_path / "contacts").exists()


def test_config_file_and_flag_precedence(data, done, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tiny\n" + "".join(kv.replace("=", " = ") + "\n" for kv in TINY) + "seed = 9\n")
    assert main(["run", "--data", str(data), "--work", str(tmp_path / "w"), "--config", str(cfg),
                 "--seed", "0"]) == 0
    assert files(tmp_path / "w") == files(done)


def test_errors_exit_nonzero(data, tmp_path, capsys):
    assert run("predict", data, tmp_path) == 1
    assert "missing; run" in capsys.readouterr().err
    assert run("eval", data, tmp_path) == 1
    assert main(["run", "--data", str(data), "--work", str(tmp_path), "--set", "nonsense"]) == 1
    assert main(["run", "--data", str(data), "--work", str(tmp_path), "--set", "d3=-4"]) == 1
