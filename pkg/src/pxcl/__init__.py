"""Domain-incremental continual learning with class-aware balanced replay."""

__version__ = "0.1.0"

from .domains import (DatasetSplit, DomainParams, DomainSpec, SyntheticConfig, apply_domain,
                      default_domains, generate_synthetic, load_canonical, make_domain_stream,
                      write_canonical)
from .metrics import AccuracyMatrix, avg_accuracy, avg_forgetting
from .model import PneumoCnn, build_model, load_checkpoint, save_checkpoint
from .numeric import OptimizerConfig, ParamState
from .replay import ClassBalancedBuffer, ReservoirBuffer, Sample
from .trainer import (RunSummary, TrainConfig, compute_class_weights, evaluate, run_sequence,
                      train_joint, train_one_domain)
