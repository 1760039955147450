"""YAML experiment configuration with line-anchored validation errors.

Every hyperparameter has a key; unspecified keys take the defaults below
(Adam lr 0.001, batch 32, buffer 1000, 50 epochs per domain, 3 runs).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .domains import DOMAIN_NAMES, DomainParams, DomainSpec, SyntheticConfig
from .numeric import OptimizerConfig
from .trainer import STRATEGIES, TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


# Schema: nested dicts are sections; leaves are accepted python types.
_NUM = (int, float)
SCHEMA: Dict[str, Any] = {
    "seed": int,
    "output_dir": str,
    "jobs": int,
    "strategies": list,
    "split_mode": str,
    "sweep": list,
    "optimizers": list,
    "dataset": {
        "path": str,
        "synthetic": {
            "n_per_split": list,
            "class1_fraction": _NUM,
            "blob_intensity": _NUM,
            "noise_std": _NUM,
            "seed": int,
            "background_level": _NUM,
            "background_smoothness": _NUM,
            "blob_sigma": _NUM,
        },
    },
    "domains": {
        "names": list,
        "seed": int,
        "params": {
            "lowdose_contrast": _NUM,
            "lowdose_noise_std": _NUM,
            "portable_blur_sigma": _NUM,
            "anatomical_scale": list,
            "anatomical_max_shift": int,
            "institutional_gamma": list,
            "institutional_brightness": list,
        },
    },
    "train": {
        "epochs_per_domain": int,
        "batch_size": int,
        "replay_batch_size": (int, type(None)),
        "buffer_capacity": int,
        "num_runs": int,
        "buffer_policy": str,
        "eval_batch_size": int,
        "optimizer": {
            "kind": str,
            "learning_rate": _NUM,
            "beta1": _NUM,
            "beta2": _NUM,
            "epsilon": _NUM,
            "sgd_momentum": _NUM,
        },
    },
}


@dataclass
class ExperimentConfig:
    train: TrainConfig
    domains: List[DomainSpec]
    dataset_path: Optional[Path] = None
    synthetic: Optional[SyntheticConfig] = None
    strategies: List[str] = field(default_factory=lambda: list(STRATEGIES))
    split_mode: str = "disjoint"
    sweep: List[int] = field(default_factory=list)
    optimizers: List[str] = field(default_factory=list)
    output_dir: Path = Path("results")
    jobs: int = 1
    raw: Dict[str, Any] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.train.seed

    def echo(self) -> Dict[str, Any]:
        """Fully resolved configuration as plain data (re-loadable)."""
        out: Dict[str, Any] = {
            "seed": self.train.seed,
            "output_dir": str(self.output_dir),
            "jobs": self.jobs,
            "strategies": list(self.strategies),
            "split_mode": self.split_mode,
            "sweep": list(self.sweep),
            "optimizers": list(self.optimizers),
            "dataset": {},
            "domains": {
                "names": [d.name for d in self.domains],
                "seed": self.domains[0].seed if self.domains else 0,
                "params": _plain(dataclasses.asdict(self.domains[0].params)) if self.domains else {},
            },
            "train": {
                k: v for k, v in _plain(dataclasses.asdict(self.train)).items()
                if k not in ("strategy", "seed")
            },
        }
        if self.dataset_path is not None:
            out["dataset"]["path"] = str(self.dataset_path)
        if self.synthetic is not None:
            out["dataset"]["synthetic"] = _plain(dataclasses.asdict(self.synthetic))
        return out


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _line_map(node, path=(), lines=None) -> Dict[Tuple[str, ...], int]:
    """Map every key path to its 1-based line number."""
    if lines is None:
        lines = {(): node.start_mark.line + 1}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key_path = path + (str(key_node.value),)
            lines[key_path] = key_node.start_mark.line + 1
            _line_map(value_node, key_path, lines)
    return lines


def _check(data, schema, path, lines, source):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{'.'.join(path) or '<root>'}' must be a mapping",
                          lines.get(path), source)
    for key, value in data.items():
        key_path = path + (str(key),)
        dotted = ".".join(key_path)
        if key not in schema:
            raise ConfigError(f"unknown key '{dotted}'", lines.get(key_path), source)
        expected = schema[key]
        if isinstance(expected, dict):
            _check(value, expected, key_path, lines, source)
        else:
            ok = isinstance(value, expected) and not (isinstance(value, bool) and expected is not bool)
            if not ok:
                raise ConfigError(f"key '{dotted}' has invalid value {value!r}", lines.get(key_path), source)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    data = data or {}
    lines = _line_map(node) if node is not None else {(): 1}
    _check(data, SCHEMA, (), lines, source)

    def section(*keys):
        d = data
        for k in keys:
            d = d.get(k) or {}
        return d

    def build(cls, key_path, **kwargs):
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid '{'.'.join(key_path)}': {exc}", lines.get(key_path), source) from None

    opt = build(OptimizerConfig, ("train", "optimizer"), **section("train", "optimizer"))
    train_kw = {k: v for k, v in section("train").items() if k != "optimizer"}
    seed = data.get("seed", 0)
    strategies = data.get("strategies", list(STRATEGIES))
    if not strategies:
        raise ConfigError("at least one strategy is required", lines.get(("strategies",)), source)
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy '{s}' in 'strategies'", lines.get(("strategies",)), source)
    train = build(TrainConfig, ("train",), optimizer=opt, seed=seed, strategy=strategies[0], **train_kw)
    for s in strategies:
        build(lambda **kw: dataclasses.replace(train, **kw), ("train",), strategy=s)

    dom = section("domains")
    params_kw = dict(section("domains", "params"))
    for key in ("anatomical_scale", "institutional_gamma", "institutional_brightness"):
        if key in params_kw:
            if len(params_kw[key]) != 2:
                raise ConfigError(f"key 'domains.params.{key}' needs [low, high]",
                                  lines.get(("domains", "params", key)), source)
            params_kw[key] = tuple(float(v) for v in params_kw[key])
    params = build(DomainParams, ("domains", "params"), **params_kw)
    names = dom.get("names", list(DOMAIN_NAMES))
    for i, name in enumerate(names):
        if name not in DOMAIN_NAMES:
            raise ConfigError(f"unknown domain '{name}' in 'domains.names'",
                              lines.get(("domains", "names")), source)
    ids = [DOMAIN_NAMES.index(n) for n in names]
    if ids != sorted(ids) or len(set(ids)) != len(ids):
        raise ConfigError("'domains.names' must follow the curriculum order without repeats",
                          lines.get(("domains", "names")), source)
    dom_seed = dom.get("seed", 0)
    domains = [DomainSpec(n, DOMAIN_NAMES.index(n), params, dom_seed + DOMAIN_NAMES.index(n)) for n in names]

    ds = section("dataset")
    dataset_path = Path(ds["path"]) if "path" in ds else None
    synthetic = None
    if "synthetic" in ds:
        syn_kw = dict(ds["synthetic"] or {})
        if "n_per_split" in syn_kw:
            syn_kw["n_per_split"] = tuple(syn_kw["n_per_split"])
        synthetic = build(SyntheticConfig, ("dataset", "synthetic"), **syn_kw)
    if dataset_path is not None and synthetic is not None:
        raise ConfigError("give either 'dataset.path' or 'dataset.synthetic', not both",
                          lines.get(("dataset",)), source)

    sweep = data.get("sweep", [])
    for cap in sweep:
        if not isinstance(cap, int) or isinstance(cap, bool) or cap < 2:
            raise ConfigError(f"sweep capacity {cap!r} is invalid (the Proposed strategy needs a buffer of at least 2)",
                              lines.get(("sweep",)), source)

    optimizers = data.get("optimizers", [])
    for kind in optimizers:
        if kind not in ("Adam", "SGD"):
            raise ConfigError(f"unknown optimizer '{kind}' in 'optimizers'", lines.get(("optimizers",)), source)

    split_mode = data.get("split_mode", "disjoint")
    if split_mode not in ("disjoint", "shared"):
        raise ConfigError(f"'split_mode' must be 'disjoint' or 'shared', got {split_mode!r}",
                          lines.get(("split_mode",)), source)
    jobs = data.get("jobs", 1)
    if jobs < 1:
        raise ConfigError("'jobs' must be positive", lines.get(("jobs",)), source)

    return ExperimentConfig(
        train=train,
        domains=domains,
        dataset_path=dataset_path,
        synthetic=synthetic,
        strategies=list(strategies),
        split_mode=split_mode,
        sweep=list(sweep),
        optimizers=list(optimizers),
        output_dir=Path(data.get("output_dir", "results")),
        jobs=jobs,
        raw=data,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path))
