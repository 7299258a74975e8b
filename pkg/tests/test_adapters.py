import sys

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from affordmi import adapters as ad
from affordmi.text import build_affordance_prompt, stub_text_encoder
from affordmi.vision import stub_image_encoder


@settings(max_examples=40)
@given(st.lists(st.text(min_size=1, max_size=8), min_size=1, max_size=5), st.integers(0, 4), st.integers(1, 6))
def test_text_request_roundtrip(names, p, d):
    ctx = np.arange(p * d, dtype=np.float32).reshape(p, d) / 7
    got_names, got_ctx = ad.decode_text_request(ad.encode_text_request(names, ctx))
    assert got_names == names and np.array_equal(got_ctx, ctx)


def test_image_roundtrips():
    px = np.random.default_rng(0).uniform(size=(16, 8, 3)).astype(np.float32)
    assert np.array_equal(ad.decode_image_request(ad.encode_image_request(px)), px)
    layers = [np.full((2, 1, 3), i, dtype=np.float32) for i in range(4)]
    cls = np.array([1, 2, 3], dtype=np.float32)
    back, c = ad.decode_image_response(ad.encode_image_response(layers, cls))
    assert len(back) == 4 and all(np.array_equal(a, b) for a, b in zip(back, layers))
    assert np.array_equal(c, cls)


def test_malformed_messages():
    body = ad.encode_rows(np.ones((2, 3)))
    with pytest.raises(ad.ProtocolError):
        ad.decode_rows(body[:-1])
    with pytest.raises(ad.ProtocolError):
        ad.decode_rows(body + b"\0")
    with pytest.raises(ad.ProtocolError, match="remote"):
        ad.decode_rows(ad.encode_error("boom"))
    with pytest.raises(ad.ProtocolError):
        ad.decode_text_request(b"AFIM" + body)


def test_subprocess_stub_server_matches_in_process():
    argv = [sys.executable, "-m", "affordmi.adapters"]
    with ad.EncoderProcess(argv) as proc:
        text, image = ad.ExternalTextEncoder(proc), ad.ExternalImageEncoder(proc)
        ctx = np.random.default_rng(1).standard_normal((4, 16)).astype(np.float32)
        rows = text.encode(["hold", "cut"], ctx)
        px = np.random.default_rng(2).uniform(size=(32, 32, 3)).astype(np.float32)
        layers, cls = image.encode(px)
        with pytest.raises(ad.ProtocolError, match="unknown request"):
            ad.decode_rows(proc.request(b"ZZZZ"))
    enc = stub_text_encoder(0, 16, 16)
    ctx_t = torch.from_numpy(ctx.astype(np.float64))
    for i, name in enumerate(["hold", "cut"]):
        ref = enc(build_affordance_prompt(ctx_t, enc.embed(name))).numpy().astype(np.float32)
        assert np.array_equal(rows[i], ref)
    ref_layers, ref_cls = stub_image_encoder(0)(torch.from_numpy(px.astype(np.float64)))
    assert len(layers) == 4 and layers[0].shape == (4, 4, 16)
    assert np.array_equal(layers[2], ref_layers[2].numpy().astype(np.float32))
    assert np.array_equal(cls, ref_cls.numpy().astype(np.float32))
