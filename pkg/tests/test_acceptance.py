"""End-to-end acceptance checks, one test (or group) per criterion.

The desk-scale experiments share one synthetic corpus: 3000 train / 1000 test
images split into five disjoint domain shards, i.e. 600 train / 200 test per
domain.  They take roughly a quarter of an hour on a single core.
"""

import numpy as np
import pytest

from pxcl import cli, report
from pxcl import numeric as nc
from pxcl.domains import DOMAIN_NAMES, SyntheticConfig, default_domains, generate_synthetic
from pxcl.metrics import AccuracyMatrix, avg_accuracy, avg_forgetting
from pxcl.model import build_model
from pxcl.numeric import OptimizerConfig
from pxcl.replay import ClassBalancedBuffer, ReservoirBuffer, Sample
from pxcl.trainer import TrainConfig, compute_class_weights, prepare_streams, run_single

REFERENCE_TRAJECTORIES = [
    [85.10, 86.86, 86.81, 92.10, 89.96],
    [84.78, 84.51, 85.31, 85.42],
    [85.95, 90.49, 90.81],
    [89.26, 87.45],
    [89.69],
]

DESK_CONFIG = """\
seed: 0
strategies: [Proposed, ER, FineTune]
dataset:
  synthetic:
    n_per_split: [3000, 100, 1000]
    seed: 0
train:
  epochs_per_domain: 3
  buffer_capacity: 1000
  num_runs: 3
"""

IMG = np.zeros((28, 28))


def criterion(number, title):
    return pytest.mark.criterion(number, title)


# ---------------------------------------------------------------- 1


@criterion(1, "reference trajectories give 88.67 avg accuracy and 0.99 avg forgetting")
def test_c1_metric_oracle():
    m = AccuracyMatrix.from_columns(REFERENCE_TRAJECTORIES, list(DOMAIN_NAMES))
    assert abs(avg_accuracy(m) - 88.67) <= 0.01
    assert abs(avg_forgetting(m) - 0.99) <= 0.01


# ---------------------------------------------------------------- 2


@criterion(2, "full-model gradient check, 200 coordinates, rel err < 1e-3")
def test_c2_gradient_fidelity():
    model = build_model(0)
    g = np.random.default_rng(2)
    x = g.random((4, 1, 28, 28))
    y = np.array([1, 0, 1, 1])
    w = compute_class_weights(y)

    def loss():
        model.zero_grad()
        logits = model.forward(x, keep_cache=True)
        value, dlogits = nc.weighted_softmax_ce(logits, y, w)
        model.backward(dlogits)
        return value

    assert nc.gradient_check(loss, model.parameters(), 200, seed=0, h=1e-4) < 1e-3


# ---------------------------------------------------------------- 3


@criterion(3, "90/10 stream into capacity 1000 ends at 500/500, never over 1000")
def test_c3_buffer_balance():
    g = np.random.default_rng(3)
    labels = (g.random(10_000) < 0.1).astype(int)
    assert labels.sum() >= 500
    buf = ClassBalancedBuffer(1000, 2, seed=3)
    for i, lab in enumerate(labels):
        buf.insert(Sample(IMG, int(lab), 0, i))
        assert len(buf) <= 1000
    assert [len(s) for s in buf.per_class] == [500, 500]


# ---------------------------------------------------------------- 4

K, T_TOTAL, TRIALS = 10, 200, 20_000


def _within_three_se(freq, p):
    se = np.sqrt(p * (1 - p) / TRIALS)
    return np.abs(freq - p) <= 3 * se + 1e-12


@criterion(4, "survival law and reservoir uniformity within 3 SE over 20,000 trials")
def test_c4_survival_law():
    gen = np.random.default_rng(4)
    hits = np.zeros(T_TOTAL)
    for _ in range(TRIALS):
        buf = ClassBalancedBuffer(2 * K, 2, seed=gen)
        for t in range(T_TOTAL):
            buf.insert(Sample(IMG, 0, 0, t))
        for smp in buf.per_class[0]:
            hits[smp.source_index] += 1
    t = np.arange(1, T_TOTAL + 1)
    # the first K inserts fill empty slots, so eviction pressure starts at K
    p = ((K - 1) / K) ** (T_TOTAL - np.maximum(t, K))
    ok = _within_three_se(hits / TRIALS, p)
    assert ok.all(), f"positions outside 3 SE: {t[~ok].tolist()}"


@criterion(4, "survival law and reservoir uniformity within 3 SE over 20,000 trials")
def test_c4_reservoir_uniform():
    gen = np.random.default_rng(40)
    hits = np.zeros(T_TOTAL)
    for _ in range(TRIALS):
        buf = ReservoirBuffer(K, seed=gen)
        for t in range(T_TOTAL):
            buf.insert(Sample(IMG, t % 2, 0, t))
        for smp in buf.slots:
            hits[smp.source_index] += 1
    ok = _within_three_se(hits / TRIALS, K / T_TOTAL)
    assert ok.all(), f"positions outside 3 SE: {np.flatnonzero(~ok).tolist()}"


# ---------------------------------------------------------------- 5


@criterion(5, "sum w_c n_c == B exactly over 1,000 random batches; {24,8} -> (0.6667, 2.0)")
def test_c5_class_weight_identity():
    g = np.random.default_rng(5)
    for _ in range(1000):
        b = int(g.integers(1, 257))
        labels = (g.random(b) < g.random()).astype(int)
        w = compute_class_weights(labels)
        n = np.bincount(labels, minlength=2)
        assert np.sum(w * n) == b, (b, n.tolist(), w.tolist())
    w = compute_class_weights([0] * 24 + [1] * 8)
    assert abs(w[0] - 2 / 3) <= 1e-9 and abs(w[1] - 2.0) <= 1e-9
    assert round(w[0], 4) == 0.6667


# ---------------------------------------------------------------- 6 and 8


@pytest.fixture(scope="module")
def desk_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "desk.yaml"
    path.write_text(DESK_CONFIG)
    return path


@pytest.fixture(scope="module")
def desk_run(desk_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_a")
    assert cli.main(["run", "--config", str(desk_config), "--out", str(out), "--quiet"]) == 0
    return out


def _summary(out):
    rows = report.read_csv_dicts(out / "summary.csv")
    return {(r["strategy"], r["run"]): r for r in rows}


@criterion(6, "desk-scale ordering: Proposed >= ER, Proposed > FineTune, forgetting FineTune > Proposed")
def test_c6_qualitative_ordering(desk_run):
    s = _summary(desk_run)
    acc = {k: float(s[(k, "mean")]["avg_accuracy"]) for k in ("Proposed", "ER", "FineTune")}
    fgt = {k: float(s[(k, "mean")]["avg_forgetting"]) for k in ("Proposed", "ER", "FineTune")}
    print(f"mean avg accuracy {acc}, mean avg forgetting {fgt}")
    matrix = report.read_matrix_csv(desk_run / "accuracy_matrix_Proposed.csv")["0"]
    assert matrix.entries() == 15
    assert acc["Proposed"] >= acc["ER"]
    assert acc["Proposed"] > acc["FineTune"]
    assert fgt["FineTune"] > fgt["Proposed"]


@criterion(8, "two identical cmd_run executions give byte-identical CSVs")
def test_c8_determinism(desk_config, desk_run, tmp_path):
    again = tmp_path / "desk_b"
    assert cli.main(["run", "--config", str(desk_config), "--out", str(again), "--quiet"]) == 0
    first = sorted(p.name for p in desk_run.glob("*.csv"))
    assert first == sorted(p.name for p in again.glob("*.csv"))
    assert len(first) == 4
    for name in first:
        assert (desk_run / name).read_bytes() == (again / name).read_bytes(), name


# ---------------------------------------------------------------- 7


@criterion(7, "Proposed at capacity 1000 beats capacity 100 by more than 1 std")
def test_c7_buffer_sweep(desk_config, desk_run, tmp_path):
    sweep_cfg = tmp_path / "sweep.yaml"
    sweep_cfg.write_text(DESK_CONFIG + "sweep: [100]\n")
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", str(sweep_cfg), "--out", str(out), "--quiet"]) == 0
    small = report.read_csv_dicts(out / "sweep.csv")[0]
    assert small["capacity"] == "100"
    large = _summary(desk_run)
    hi_mean = float(large[("Proposed", "mean")]["avg_accuracy"])
    hi_std = float(large[("Proposed", "std")]["avg_accuracy"])
    lo_mean, lo_std = float(small["mean_avg_accuracy"]), float(small["std_avg_accuracy"])
    print(f"capacity 100: {lo_mean:.2f} +- {lo_std:.2f}; capacity 1000: {hi_mean:.2f} +- {hi_std:.2f}")
    assert hi_mean - lo_mean > max(hi_std, lo_std)


# ---------------------------------------------------------------- 9


@criterion(9, "Adam and SGD both exceed 60% avg accuracy on the synthetic sequence")
def test_c9_optimizers(desk_run):
    adam = float(_summary(desk_run)[("Proposed", "mean")]["avg_accuracy"])
    data = generate_synthetic(SyntheticConfig(n_per_split=(3000, 100, 1000), seed=0))
    streams = prepare_streams(data, default_domains(0))
    sgd_cfg = TrainConfig(strategy="Proposed", epochs_per_domain=3, num_runs=3,
                          optimizer=OptimizerConfig(kind="SGD"))
    sgd = np.mean([run_single(sgd_cfg, streams, r).avg_accuracy for r in range(sgd_cfg.num_runs)])
    print(f"Adam {adam:.2f}, SGD {sgd:.2f}")
    assert adam > 60.0
    assert sgd > 60.0
