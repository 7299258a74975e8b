"""One-shot text-guided affordance grounding with mutual-information objectives."""
from .checkpoint import Checkpoint
from .config import ModelConfig, TrainConfig, load_config
from .metrics import MetricReport, kld, nss, sim
from .model import AffordanceModel, Encoders, build_encoders
from .trainer import evaluate_checkpoint, grid_sweep, run_ablation, train
from .types import Hyperparams, LabelSpace, Sample

__version__ = "0.1.0"
