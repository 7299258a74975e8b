import numpy as np
import torch

from affordmi import trainer as tr
from affordmi.config import TrainConfig
from affordmi.gradcheck import check
from affordmi.model import build_encoders, encode_sample, new_model, object_features, run, sample_losses
from affordmi.types import GROUNDTRUTH_GRAY, AffordanceMask, Hyperparams, Sample

from conftest import grad_instance


def test_empty_region_skipped_not_fatal(small_data):
    labels, data = small_data
    cfg = TrainConfig()
    enc = build_encoders(cfg.model, 8)
    s = data["trainset"][0]
    blank = Sample(s.image, (AffordanceMask(np.zeros((32, 32)), GROUNDTRUTH_GRAY, 0),), s.object_class, "blank")
    es = encode_sample(blank, labels, enc)
    bce, ami, omi = sample_losses(new_model(cfg), enc, labels, es, object_features(enc, labels, torch.float32), cfg)
    assert ami.item() == 0.0 and np.isfinite(bce.item()) and np.isfinite(omi.item())


def test_disabled_terms_are_exact_zero(small_data):
    labels, data = small_data
    cfg = TrainConfig(enable_ami=False, enable_omi=False)
    enc = build_encoders(cfg.model, 8)
    es = encode_sample(data["trainset"][0], labels, enc)
    _, ami, omi = sample_losses(new_model(cfg), enc, labels, es, object_features(enc, labels, torch.float32), cfg)
    assert ami.item() == 0.0 and omi.item() == 0.0


def test_object_text_constant_across_training(small_data):
    labels, data = small_data
    cfg = TrainConfig(hyper=Hyperparams(iterations=10))
    enc = build_encoders(cfg.model, 8)
    before = object_features(enc, labels, torch.float32).numpy().tobytes()
    tr.train(cfg, data["trainset"], labels, enc)
    assert object_features(enc, labels, torch.float32).numpy().tobytes() == before


def test_forward_shapes_and_range(small_data):
    labels, data = small_data
    cfg = TrainConfig()
    enc = build_encoders(cfg.model, 8)
    out = run(new_model(cfg), enc, labels, encode_sample(data["trainset"][0], labels, enc))
    assert out.patches.shape == (4, 4, 16) and out.text_hat.shape == (4, 16)
    assert out.preds.shape == (4, 32, 32)
    assert bool(((out.preds > 0) & (out.preds < 1)).all())


def test_gradients_alternative_wirings():
    for kw in ({"omi_projection": "dedicated"}, {"ami_text_source": "encoder"}):
        loss_fn, params, _ = grad_instance(seed=0, **kw)
        err, errs = check(loss_fn, params)
        assert err < 1e-4, (kw, errs)


def test_separate_object_encoder():
    cfg = TrainConfig().with_overrides(separate_object_encoder=True)
    enc = build_encoders(cfg.model, 8)
    assert enc.object_encoder is not enc.text
