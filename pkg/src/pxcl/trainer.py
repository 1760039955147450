"""Domain-incremental training for the four strategies and the run protocol.

Strategies:

* ``Proposed`` - class-balanced replay buffer, balanced replay draws and a
  per-batch class-weighted loss.
* ``ER`` - reservoir buffer, uniform replay draws, unweighted loss.
* ``FineTune`` - sequential training with no replay.
* ``Joint`` - one offline phase over the pooled data of every domain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .domains import DatasetSplit, DomainSpec, make_domain_stream, partition
from .metrics import AccuracyMatrix, avg_accuracy, avg_forgetting
from .model import NUM_CLASSES, build_model
from .numeric import OptimizerConfig, optimizer_step, weighted_softmax_ce
from .replay import ClassBalancedBuffer, ReservoirBuffer, Sample

log = logging.getLogger(__name__)

STRATEGIES = ("Proposed", "ER", "FineTune", "Joint")


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "Proposed"
    epochs_per_domain: int = 50
    batch_size: int = 32
    replay_batch_size: Optional[int] = None  # None -> batch_size
    buffer_capacity: int = 1000
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    num_runs: int = 3
    buffer_policy: str = "replace"
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        for name in ("epochs_per_domain", "batch_size", "num_runs", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.replay_batch_size is not None and self.replay_batch_size < 1:
            raise ValueError("replay_batch_size must be positive")
        if self.buffer_capacity < 0:
            raise ValueError("buffer_capacity must be non-negative")
        if self.uses_buffer and self.buffer_capacity < NUM_CLASSES:
            raise ValueError(f"{self.strategy} needs buffer_capacity >= {NUM_CLASSES}")

    @property
    def uses_buffer(self) -> bool:
        return self.strategy in ("Proposed", "ER")

    @property
    def replay_size(self) -> int:
        return self.replay_batch_size or self.batch_size


@dataclass
class TrainStats:
    steps: int = 0
    loss_sum: float = 0.0

    @property
    def mean_loss(self) -> float:
        return self.loss_sum / self.steps if self.steps else float("nan")


def compute_class_weights(labels, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """``w_c = B / (M_present * n_c)`` for classes present in the batch, else 0."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("cannot weight an empty batch")
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    if counts.size > num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    present = counts > 0
    weights = np.zeros(num_classes)
    weights[present] = labels.size / (present.sum() * counts[present])
    return _settle_identity(weights, counts, labels.size)


def _settle_identity(weights, counts, total, max_ulps=8):
    """Nudge the last present weight by a few ulps so ``sum(w * n) == B`` holds exactly.

    Rounding in ``B / (M n_c)`` occasionally leaves the weighted count one ulp
    off ``B`` (e.g. B=100 with counts 22/78); the change is far below any
    effect on training.
    """
    if np.sum(weights * counts) == total:
        return weights
    last = int(np.flatnonzero(counts)[-1])
    base = weights[last]
    up = down = base
    for _ in range(max_ulps):
        up, down = np.nextafter(up, np.inf), np.nextafter(down, -np.inf)
        for cand in (up, down):
            weights[last] = cand
            if np.sum(weights * counts) == total:
                return weights
    weights[last] = base
    return weights


def make_buffer(config: TrainConfig, seed: int):
    if config.strategy == "Proposed":
        return ClassBalancedBuffer(config.buffer_capacity, NUM_CLASSES, seed, config.buffer_policy)
    if config.strategy == "ER":
        return ReservoirBuffer(config.buffer_capacity, seed)
    return None


def _stack(samples: Sequence[Sample]):
    images = np.stack([s.image for s in samples])[:, None, :, :]
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return images, labels


def _sgd_update(model, images, labels, weights, opt: OptimizerConfig) -> float:
    model.zero_grad()
    logits = model.forward(images, keep_cache=True)
    loss, dlogits = weighted_softmax_ce(logits, labels, weights)
    model.backward(dlogits)
    optimizer_step(model.parameters(), opt)
    return loss


def _check_buffer(strategy: str, buffer) -> None:
    expected = {"Proposed": ClassBalancedBuffer, "ER": ReservoirBuffer}.get(strategy)
    if expected is None:
        if buffer is not None:
            raise ValueError(f"{strategy} trains without a replay buffer")
    elif not isinstance(buffer, expected):
        raise ValueError(f"{strategy} needs a {expected.__name__}, got {type(buffer).__name__}")


def train_one_domain(model, stream: Sequence[Sample], buffer, config: TrainConfig,
                     rng: Optional[np.random.Generator] = None) -> TrainStats:
    """Train ``model`` (and fill ``buffer``) on one domain, in place.

    Each incoming batch is joined with a replay draw when the buffer holds
    anything; the incoming samples enter the buffer only after the update.
    """
    if config.strategy == "Joint":
        raise ValueError("Joint training goes through train_joint")
    _check_buffer(config.strategy, buffer)
    if len(stream) == 0:
        raise ValueError("empty training stream")
    if rng is None:
        rng = rngmod.substream(config.seed, rngmod.SHUFFLE)
    uniform = np.ones(NUM_CLASSES)
    stats = TrainStats()
    for epoch in range(config.epochs_per_domain):
        order = rng.permutation(len(stream))
        for start in range(0, len(order), config.batch_size):
            incoming = [stream[i] for i in order[start : start + config.batch_size]]
            batch = incoming
            if buffer is not None and len(buffer) > 0:
                batch = incoming + buffer.sample(config.replay_size)
            images, labels = _stack(batch)
            if config.strategy == "Proposed":
                weights = compute_class_weights(labels)
            else:
                weights = uniform
            stats.loss_sum += _sgd_update(model, images, labels, weights, config.optimizer)
            stats.steps += 1
            if buffer is not None:
                for s in incoming:
                    buffer.insert(s)
        log.debug("epoch %d: mean loss %.4f", epoch, stats.mean_loss)
    return stats


def train_joint(model, streams: Sequence[Sequence[Sample]], config: TrainConfig,
                rng: Optional[np.random.Generator] = None) -> TrainStats:
    """Offline training on the pooled streams of every domain, unweighted."""
    pooled = [s for stream in streams for s in stream]
    if not pooled:
        raise ValueError("empty training stream")
    if rng is None:
        rng = rngmod.substream(config.seed, rngmod.SHUFFLE)
    uniform = np.ones(NUM_CLASSES)
    stats = TrainStats()
    for _ in range(config.epochs_per_domain):
        order = rng.permutation(len(pooled))
        for start in range(0, len(order), config.batch_size):
            images, labels = _stack([pooled[i] for i in order[start : start + config.batch_size]])
            stats.loss_sum += _sgd_update(model, images, labels, uniform, config.optimizer)
            stats.steps += 1
    return stats


def evaluate(model, stream: Sequence[Sample], batch_size: int = 256) -> float:
    """Accuracy in percent."""
    if len(stream) == 0:
        raise ValueError("cannot evaluate on an empty stream")
    correct = 0
    for start in range(0, len(stream), batch_size):
        images, labels = _stack(stream[start : start + batch_size])
        correct += int(np.sum(model.predict(images) == labels))
    return 100.0 * correct / len(stream)


# ---------------------------------------------------------------------------
# run protocol
# ---------------------------------------------------------------------------


@dataclass
class DomainStreams:
    names: List[str]
    train: List[List[Sample]]
    test: List[List[Sample]]
    val: List[List[Sample]] = field(default_factory=list)


def prepare_streams(dataset, domain_specs: Sequence[DomainSpec],
                    split_mode: str = "disjoint") -> DomainStreams:
    """Transformed train/val/test streams for every domain.

    ``split_mode="disjoint"`` gives each domain its own contiguous shard of
    every split; ``"shared"`` transforms the full splits once per domain.
    """
    if split_mode not in ("disjoint", "shared"):
        raise ValueError(f"unknown split_mode {split_mode!r}")
    ids = [spec.domain_id for spec in domain_specs]
    if ids != sorted(ids):
        raise ValueError("domains must be given in curriculum order")
    train_split, val_split, test_split = dataset
    n = len(domain_specs)
    out = DomainStreams([spec.name for spec in domain_specs], [], [], [])
    for k, spec in enumerate(domain_specs):
        for split, target in ((train_split, out.train), (val_split, out.val), (test_split, out.test)):
            if split_mode == "disjoint":
                shard = partition(split, n, k)
                target.append(make_domain_stream(shard, spec, start_index=k * len(shard)))
            else:
                target.append(make_domain_stream(split, spec))
    return out


@dataclass
class RunResult:
    seed: int
    matrix: AccuracyMatrix
    avg_accuracy: float
    avg_forgetting: float


@dataclass
class RunSummary:
    strategy: str
    runs: List[RunResult]
    matrix: AccuracyMatrix  # element-wise mean over runs
    avg_accuracy: float
    avg_forgetting: float
    std_accuracy: Optional[float] = None
    std_forgetting: Optional[float] = None

    @classmethod
    def from_runs(cls, strategy: str, runs: Sequence[RunResult]) -> "RunSummary":
        runs = list(runs)
        names = runs[0].matrix.domain_names
        mean = AccuracyMatrix(names)
        mean.values = np.mean([r.matrix.values for r in runs], axis=0)
        accs = np.array([r.avg_accuracy for r in runs])
        fgts = np.array([r.avg_forgetting for r in runs])
        std_a = std_f = None
        if len(runs) > 1:
            std_a = float(accs.std(ddof=1))
            std_f = float(fgts.std(ddof=1))
        return cls(strategy, runs, mean, float(accs.mean()), float(fgts.mean()), std_a, std_f)


ModelFactory = Callable[[int], object]


def run_single(config: TrainConfig, streams: DomainStreams, run_index: int = 0,
               model_factory: ModelFactory = build_model) -> RunResult:
    """One seeded pass over the curriculum, filling the accuracy matrix."""
    seed = config.seed + run_index
    model = model_factory(seed)
    shuffle_rng = rngmod.substream(seed, rngmod.SHUFFLE)
    matrix = AccuracyMatrix(streams.names)
    n = len(streams.names)

    if config.strategy == "Joint":
        train_joint(model, streams.train, config, shuffle_rng)
        accs = [evaluate(model, streams.test[j], config.eval_batch_size) for j in range(n)]
        for t in range(n):
            for j in range(t + 1):
                matrix.set(t, j, accs[j])
    else:
        buffer = make_buffer(config, seed)
        for t in range(n):
            stats = train_one_domain(model, streams.train[t], buffer, config, shuffle_rng)
            for j in range(t + 1):
                matrix.set(t, j, evaluate(model, streams.test[j], config.eval_batch_size))
            if log.isEnabledFor(logging.INFO):
                val = ""
                if streams.val:
                    val = f", val acc {evaluate(model, streams.val[t], config.eval_batch_size):.2f}"
                log.info("%s run %d stage %s: %d steps, loss %.4f%s", config.strategy, run_index,
                         streams.names[t], stats.steps, stats.mean_loss, val)
    return RunResult(seed, matrix, avg_accuracy(matrix), avg_forgetting(matrix))


def run_sequence(config: TrainConfig, domain_specs: Sequence[DomainSpec], dataset,
                 model_factory: ModelFactory = build_model,
                 split_mode: str = "disjoint") -> RunSummary:
    """All ``num_runs`` seeded runs of one strategy, aggregated."""
    streams = prepare_streams(dataset, domain_specs, split_mode)
    runs = [run_single(config, streams, r, model_factory) for r in range(config.num_runs)]
    return RunSummary.from_runs(config.strategy, runs)
