import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from affordmi.types import ImageTensor, ValidationError
from affordmi.vision import encode_image, stub_image_encoder


def _rand_img(seed, h=32, w=32):
    return ImageTensor(np.random.default_rng(seed).uniform(0, 1, (h, w, 3)))


def test_grid_shape_and_layer_count():
    enc = stub_image_encoder(0, 8, 16, 4)
    layers, cls = encode_image(_rand_img(0), enc)
    assert len(layers) == 4
    assert all(l.shape == (4, 4, 16) for l in layers)
    assert cls.shape == (16,)


def test_deterministic():
    enc = stub_image_encoder(0)
    img = _rand_img(1)
    a, b = encode_image(img, enc), encode_image(img, enc)
    assert all(torch.equal(x, y) for x, y in zip(a[0], b[0])) and torch.equal(a[1], b[1])


def test_black_and_white_cls_differ():
    enc = stub_image_encoder(0)
    _, black = encode_image(ImageTensor(np.zeros((32, 32, 3))), enc)
    _, white = encode_image(ImageTensor(np.ones((32, 32, 3))), enc)
    assert not torch.equal(black, white)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 2 ** 16))
def test_patch_locality(pr, pc, seed):
    enc = stub_image_encoder(0)
    px = np.random.default_rng(seed).uniform(0.1, 0.9, (32, 32, 3))
    px2 = px.copy()
    px2[pr * 8:(pr + 1) * 8, pc * 8:(pc + 1) * 8] += 0.05
    a, _ = encode_image(ImageTensor(px), enc)
    b, _ = encode_image(ImageTensor(px2), enc)
    for la, lb in zip(a, b):
        diff = (la != lb).any(dim=-1)
        expected = torch.zeros(4, 4, dtype=torch.bool)
        expected[pr, pc] = True
        assert torch.equal(diff, expected)


def test_seed_changes_features():
    img = _rand_img(2)
    a, _ = encode_image(img, stub_image_encoder(0))
    b, _ = encode_image(img, stub_image_encoder(1))
    assert not torch.equal(a[0], b[0])


def test_indivisible_image_rejected():
    with pytest.raises(ValidationError):
        encode_image(_rand_img(0, 30, 32), stub_image_encoder(0))


def test_encoder_has_no_trainable_parameters():
    enc = stub_image_encoder(0)
    assert list(enc.parameters()) == []
    assert all(not b.requires_grad for b in enc.buffers())
