import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affordmi.checkpoint import MAGIC, Checkpoint, CheckpointError
from affordmi.config import TrainConfig, dump_config, from_flat, load_config, parse_config_text, save_config, to_flat
from affordmi.types import ValidationError


def test_config_roundtrip(tmp_path):
    cfg = TrainConfig().with_overrides(tau1=0.05, text_dim=8, enable_ami=False, data_root="/x y")
    save_config(cfg, tmp_path / "c.txt")
    assert load_config(tmp_path / "c.txt") == cfg
    assert from_flat(to_flat(cfg)) == cfg


def test_config_parsing_errors():
    with pytest.raises(ValidationError, match="duplicate"):
        parse_config_text("tau1 = 0.1\ntau1 = 0.2\n")
    with pytest.raises(ValidationError, match="unknown"):
        parse_config_text("nope = 1\n")
    with pytest.raises(ValidationError):
        parse_config_text("iterations = 0\n")
    with pytest.raises(ValidationError):
        parse_config_text("iterations = 2.5\n")
    with pytest.raises(ValidationError):
        parse_config_text("enable_ami = maybe\n")
    with pytest.raises(ValidationError):
        parse_config_text("just text\n")


def test_comments_and_blank_lines():
    cfg = parse_config_text("# header\n\nlr = 0.5  # inline\nsplit = unseen\n")
    assert cfg.hyper.lr == 0.5 and cfg.split == "unseen"


@settings(max_examples=30)
@given(st.floats(1e-4, 1.0), st.floats(0, 2), st.integers(1, 5000), st.booleans())
def test_dump_parse_roundtrip(tau, lam, iters, flag):
    cfg = TrainConfig().with_overrides(tau2=tau, lambda1=lam, iterations=iters, enable_omi=flag)
    assert parse_config_text(dump_config(cfg)) == cfg


def _ckpt():
    rng = np.random.default_rng(0)
    params = {"b.w": rng.standard_normal((3, 4)).astype(np.float32), "a": rng.standard_normal(5).astype(np.float32),
              "s": np.array(2.5, dtype=np.float32)}
    return Checkpoint(params, 42, to_flat(TrainConfig()), 0.75, {"affordances": ["hold"], "objects": ["cup"]})


def test_checkpoint_roundtrip(tmp_path):
    ck = _ckpt()
    path = ck.save(tmp_path / "x.ckpt")
    back = Checkpoint.load(path)
    assert back.iteration == 42 and back.best_val_kld == 0.75 and back.labels == ck.labels
    assert back.config == ck.config
    for k, v in ck.params.items():
        assert back.params[k].dtype == np.float32 and np.array_equal(back.params[k], v)
    assert path.read_bytes()[:8] == MAGIC
    assert back.to_bytes() == ck.to_bytes()


def test_checkpoint_payload_is_little_endian_float32():
    ck = _ckpt()
    raw = ck.to_bytes()
    # sorted order: a (5), b.w (12), s (1)
    payload = np.frombuffer(raw[-4 * 18:], dtype="<f4")
    assert np.array_equal(payload[5:17], ck.params["b.w"].ravel())
    assert payload[-1] == 2.5


def test_checkpoint_corruption_errors():
    raw = _ckpt().to_bytes()
    with pytest.raises(CheckpointError, match="magic"):
        Checkpoint.from_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        Checkpoint.from_bytes(raw[:8] + (9).to_bytes(4, "little") + raw[12:])
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(raw[:-4])
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(raw[:6])
