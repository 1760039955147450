import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from pxcl import cli, report
from pxcl.config import ConfigError, parse_config
from pxcl.domains import canonical_size, load_canonical
from pxcl.metrics import avg_accuracy, avg_forgetting

SMOKE = """\
seed: 3
strategies: [Proposed, ER, FineTune, Joint]
dataset:
  synthetic:
    n_per_split: [80, 10, 40]
    seed: 1
domains:
  names: [Base, LowDose]
train:
  epochs_per_domain: 1
  buffer_capacity: 20
  num_runs: 2
"""


@pytest.fixture
def smoke_config(tmp_path):
    path = tmp_path / "smoke.yaml"
    path.write_text(SMOKE)
    return path


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def test_run_writes_declared_files(tmp_path, smoke_config):
    out = tmp_path / "out"
    assert run_cli("run", "--config", smoke_config, "--out", out, "--quiet") == 0
    for name in ("summary.csv", "comparison.svg", "provenance.json",
                 "accuracy_matrix_Proposed.csv", "accuracy_matrix_ER.csv",
                 "accuracy_matrix_FineTune.csv", "accuracy_matrix_Joint.csv"):
        assert (out / name).is_file(), name
    ET.parse(out / "comparison.svg")

    summary = report.read_csv_dicts(out / "summary.csv")
    for strategy in ("Proposed", "ER", "FineTune", "Joint"):
        matrices = report.read_matrix_csv(out / f"accuracy_matrix_{strategy}.csv")
        rows = {r["run"]: r for r in summary if r["strategy"] == strategy}
        assert set(rows) == {"0", "1", "mean", "std"}
        accs, fgts = [], []
        for run in ("0", "1"):
            m = matrices[run]
            assert abs(float(rows[run]["avg_accuracy"]) - avg_accuracy(m)) < 1e-9
            assert abs(float(rows[run]["avg_forgetting"]) - avg_forgetting(m)) < 1e-9
            accs.append(avg_accuracy(m))
            fgts.append(avg_forgetting(m))
        assert abs(float(rows["mean"]["avg_accuracy"]) - np.mean(accs)) < 1e-9
        assert abs(float(rows["std"]["avg_forgetting"]) - np.std(fgts, ddof=1)) < 1e-9


def test_matrix_csv_layout(tmp_path, smoke_config):
    out = tmp_path / "out"
    run_cli("run", "--config", smoke_config, "--out", out, "--quiet")
    with open(out / "accuracy_matrix_FineTune.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["run", "stage", "Base", "LowDose"]
    assert rows[1][0:2] == ["0", "Base"] and rows[1][3] == ""
    assert rows[2][0:2] == ["0", "LowDose"] and rows[2][3] != ""


def test_run_is_byte_reproducible(tmp_path, smoke_config):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli("run", "--config", smoke_config, "--out", a, "--quiet")
    run_cli("run", "--config", smoke_config, "--out", b, "--quiet")
    for f in sorted(a.glob("*.csv")) + [a / "comparison.svg"]:
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_seed_override_changes_results(tmp_path, smoke_config):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli("run", "--config", smoke_config, "--out", a, "--quiet")
    run_cli("run", "--config", smoke_config, "--out", b, "--seed", "99", "--quiet")
    assert (a / "summary.csv").read_bytes() != (b / "summary.csv").read_bytes()


def test_parallel_jobs_match_serial(tmp_path, smoke_config):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli("run", "--config", smoke_config, "--out", a, "--quiet")
    run_cli("run", "--config", smoke_config, "--out", b, "--jobs", "2", "--quiet")
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_malformed_key_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("seed: 1\ntrain:\n  epochs_per_domian: 3\n")
    assert run_cli("run", "--config", path, "--quiet") == 2
    err = capsys.readouterr().err
    assert "train.epochs_per_domian" in err
    assert ":3:" in err


@pytest.mark.parametrize(
    "text,needle",
    [
        ("strategies: [Proposed, Magic]\n", "Magic"),
        ("train:\n  batch_size: -1\n", "train"),
        ("train:\n  optimizer:\n    kind: RMSprop\n", "optimizer"),
        ("domains:\n  names: [LowDose, Base]\n", "curriculum"),
        ("sweep: [100, 0]\n", "sweep"),
        ("seed: [1\n", "YAML"),
        ("jobs: true\n", "jobs"),
    ],
)
def test_validation_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_default_training_setup():
    cfg = parse_config("")
    assert cfg.train.epochs_per_domain == 50
    assert cfg.train.batch_size == 32
    assert cfg.train.buffer_capacity == 1000
    assert cfg.train.num_runs == 3
    assert cfg.train.optimizer.kind == "Adam" and cfg.train.optimizer.learning_rate == 0.001
    assert [d.name for d in cfg.domains] == ["Base", "LowDose", "Portable", "Anatomical", "Institutional"]
    assert parse_config(_dump(cfg.echo())).echo() == cfg.echo()


def _dump(data):
    import yaml
    return yaml.safe_dump(data)


def test_sweep(tmp_path, smoke_config):
    text = smoke_config.read_text() + "sweep: [4, 10, 20]\n"
    smoke_config.write_text(text.replace("num_runs: 2", "num_runs: 1"))
    out = tmp_path / "sw"
    assert run_cli("sweep", "--config", smoke_config, "--out", out, "--quiet") == 0
    rows = report.read_csv_dicts(out / "sweep.csv")
    assert [r["capacity"] for r in rows] == ["4", "10", "20"]
    assert all(r["std_avg_accuracy"] == "" for r in rows)
    ET.parse(out / "sweep.svg")


def test_sweep_requires_capacities(tmp_path, smoke_config):
    assert run_cli("sweep", "--config", smoke_config, "--out", tmp_path / "x", "--quiet") == 2


def test_optimizer_comparison(tmp_path, smoke_config):
    text = smoke_config.read_text().replace("[Proposed, ER, FineTune, Joint]", "[FineTune]")
    smoke_config.write_text(text + "optimizers: [Adam, SGD]\n")
    out = tmp_path / "opt"
    assert run_cli("run", "--config", smoke_config, "--out", out, "--quiet") == 0
    rows = report.read_csv_dicts(out / "optimizers.csv")
    assert {r["optimizer"] for r in rows} == {"Adam", "SGD"}


def test_synth(tmp_path, smoke_config):
    a, b = tmp_path / "a.pxclds", tmp_path / "b.pxclds"
    assert run_cli("synth", "--config", smoke_config, "--out", a, "--quiet") == 0
    assert run_cli("synth", "--config", smoke_config, "--out", b, "--quiet") == 0
    assert a.read_bytes() == b.read_bytes()
    assert [len(s) for s in load_canonical(a)] == [80, 10, 40]


def test_run_from_canonical_file(tmp_path, smoke_config):
    data = tmp_path / "d.pxclds"
    run_cli("synth", "--config", smoke_config, "--out", data, "--quiet")
    cfg = tmp_path / "file.yaml"
    cfg.write_text(SMOKE.replace("  synthetic:\n    n_per_split: [80, 10, 40]\n    seed: 1\n",
                                 f"  path: {data}\n").replace("num_runs: 2", "num_runs: 1"))
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "o", "--quiet") == 0
    missing = tmp_path / "missing.yaml"
    missing.write_text(f"dataset:\n  path: {tmp_path / 'nope.pxclds'}\n")
    assert run_cli("run", "--config", missing, "--out", tmp_path / "o2", "--quiet") == 2


def _manifest(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "split", "label"])
        w.writerows(rows)


def test_convert_tensor(tmp_path):
    tensor = np.random.default_rng(0).integers(0, 256, (4, 28, 28)).astype(np.uint8)
    np.save(tmp_path / "x.npy", tensor)
    _manifest(tmp_path / "m.csv", [(0, "train", 1), (1, "train", 0), (2, "val", 0), (3, "test", 1)])
    out = tmp_path / "out.pxclds"
    assert run_cli("convert", "--tensor", tmp_path / "x.npy", "--manifest", tmp_path / "m.csv",
                   "--out", out, "--quiet") == 0
    splits = load_canonical(out)
    assert [len(s) for s in splits] == [2, 1, 1]
    assert out.stat().st_size == canonical_size([2, 1, 1])
    assert splits[0].images[1].tobytes() == tensor[1].tobytes()
    assert splits[2].labels.tolist() == [1]


def test_convert_images(tmp_path):
    from PIL import Image

    g = np.random.default_rng(1)
    rows = []
    for i, split in enumerate(["train", "val", "test"]):
        Image.fromarray(g.integers(0, 256, (28, 28)).astype(np.uint8)).save(tmp_path / f"{i}.png")
        rows.append((f"{i}.png", split, i % 2))
    _manifest(tmp_path / "m.csv", rows)
    out = tmp_path / "img.pxclds"
    assert run_cli("convert", "--images", tmp_path, "--manifest", tmp_path / "m.csv", "--out", out, "--quiet") == 0
    assert [len(s) for s in load_canonical(out)] == [1, 1, 1]


@pytest.mark.parametrize(
    "rows",
    [
        [(0, "train", 2), (1, "val", 0), (2, "test", 1)],
        [(0, "train", 1), (1, "valid", 0), (2, "test", 1)],
        [(0, "train", 1), (9, "val", 0), (2, "test", 1)],
        [(0, "train", 1), (1, "train", 0)],
    ],
)
def test_convert_rejects_bad_manifest(tmp_path, rows):
    np.save(tmp_path / "x.npy", np.zeros((4, 28, 28), dtype=np.uint8))
    _manifest(tmp_path / "m.csv", rows)
    assert run_cli("convert", "--tensor", tmp_path / "x.npy", "--manifest", tmp_path / "m.csv",
                   "--out", tmp_path / "o", "--quiet") == 2
