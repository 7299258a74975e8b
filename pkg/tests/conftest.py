import numpy as np
import pytest
import torch

from affordmi.config import ModelConfig, TrainConfig
from affordmi.data import SyntheticSpec, synthetic_samples
from affordmi.losses import total_loss
from affordmi.model import build_encoders, encode_sample, new_model, object_features, sample_losses
from affordmi.types import Hyperparams


def grad_instance(seed=0, omi_projection="shared", ami_text_source="decoder"):
    """Seeded float64 instance: D_t 8, D_v 16, 4x4 patches, C 3, C_obj 2.

    Returns (loss_fn, named trainable parameters, model).
    """
    spec = SyntheticSpec(n_objects=2, n_affordances=3, image_size=32, patch_size=8, seed=seed,
                         affordances_per_object=2)
    labels = spec.labels()
    sample = synthetic_samples(spec)["trainset"][0]
    mcfg = ModelConfig(embed_dim=8, text_dim=8, vision_dim=16, vision_layers=2, context_len=4,
                       decoder_layers=2, omi_projection=omi_projection, ami_text_source=ami_text_source)
    cfg = TrainConfig(hyper=Hyperparams(tau1=0.01, tau2=0.01, lambda1=0.01, lambda2=1.0, seed=seed),
                      model=mcfg, dtype="float64")
    enc = build_encoders(mcfg, 8)
    model = new_model(cfg)
    es = encode_sample(sample, labels, enc, torch.float64)
    obj = object_features(enc, labels, torch.float64)

    def loss_fn():
        bce, ami, omi = sample_losses(model, enc, labels, es, obj, cfg)
        return total_loss(bce, ami, omi, cfg.hyper.lambda1, cfg.hyper.lambda2)

    return loss_fn, dict(model.named_parameters()), model


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec()


@pytest.fixture(scope="session")
def small_data(small_spec):
    return small_spec.labels(), synthetic_samples(small_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Call with (number, title, passed, detail); one line per criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number, title, passed, detail=""):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}" + (f" ({detail})" if detail else "")
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
