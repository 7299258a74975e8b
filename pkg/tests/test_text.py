import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from affordmi.gradcheck import check
from affordmi.text import (build_affordance_prompt, build_object_prompt, embed_words, encode_affordance_texts,
                           encode_object_texts, stub_text_encoder, tokenize)
from affordmi.types import LabelSpace

LABELS = LabelSpace(("hold", "cut", "pour"), ("knife", "cup"))


def test_object_prompt_template():
    assert build_object_prompt("knife") == "A good image of a knife"
    assert build_object_prompt("tennis racket") == "A good image of a tennis racket"
    with pytest.raises(ValueError):
        build_object_prompt("")


def test_prompt_concatenation():
    cls_emb = torch.randn(1, 8, dtype=torch.float64)
    empty = torch.zeros(0, 8, dtype=torch.float64)
    assert torch.equal(build_affordance_prompt(empty, cls_emb), cls_emb)
    ctx = torch.randn(4, 8, dtype=torch.float64)
    seq = build_affordance_prompt(ctx, cls_emb)
    assert seq.shape == (5, 8)
    assert torch.equal(seq[:4], ctx)


def test_two_classes_share_prefix():
    ctx = torch.randn(3, 8, dtype=torch.float64)
    a = build_affordance_prompt(ctx, embed_t("hold"))
    b = build_affordance_prompt(ctx, embed_t("cut"))
    assert torch.equal(a[:3], b[:3]) and not torch.equal(a[3:], b[3:])


def embed_t(word, dim=8):
    return torch.from_numpy(embed_words(word, dim))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 6), st.integers(1, 3))
def test_prefix_preserved_bit_exact(p, n_tokens):
    gen = torch.Generator().manual_seed(p * 7 + n_tokens)
    ctx = torch.randn(p, 8, generator=gen, dtype=torch.float64)
    cls_emb = torch.randn(n_tokens, 8, generator=gen, dtype=torch.float64)
    seq = build_affordance_prompt(ctx, cls_emb)
    assert seq.shape[0] == p + n_tokens
    assert torch.equal(seq[:p], ctx)


def test_tokenize_splits_underscores():
    assert tokenize("Sit_on a  chair") == ["sit", "on", "a", "chair"]


def test_single_class_unit_norm():
    enc = stub_text_encoder(0, 8, 8)
    ctx = torch.randn(4, 8, dtype=torch.float64)
    out = encode_affordance_texts(ctx, LabelSpace(("hold",), ("knife",)), enc)
    assert out.shape == (1, 8)
    assert abs(out.norm().item() - 1) < 1e-12


def test_identical_embeddings_identical_rows():
    enc = stub_text_encoder(0, 8, 8)
    ctx = torch.randn(4, 8, dtype=torch.float64)
    # "Hold" and "hold" tokenize identically
    out = encode_affordance_texts(ctx, LabelSpace(("hold", "Hold"), ("knife",)), enc)
    assert torch.equal(out[0], out[1])


def test_ctx_jacobian_matches_finite_differences():
    enc = stub_text_encoder(0, 8, 8)
    ctx = torch.randn(4, 8, dtype=torch.float64, requires_grad=True)
    w = torch.randn(3, 8, dtype=torch.float64)
    for row in range(3):
        def f():
            return (encode_affordance_texts(ctx, LABELS, enc)[row] * w[row]).sum()
        err, _ = check(f, {"ctx": ctx})
        assert err < 1e-4
    # every row depends on ctx
    jac = torch.autograd.functional.jacobian(lambda c: encode_affordance_texts(c, LABELS, enc), ctx.detach())
    assert all(jac[r].abs().sum() > 0 for r in range(3))


def test_object_texts():
    enc = stub_text_encoder(0, 8, 8)
    one = encode_object_texts(LabelSpace(("hold",), ("knife",)), enc)
    assert one.shape == (1, 8) and abs(one.norm().item() - 1) < 1e-12
    assert torch.equal(encode_object_texts(LABELS, enc), encode_object_texts(LABELS, enc))
    fifty = LabelSpace(("hold",), tuple(f"object {i}" for i in range(50)))
    assert encode_object_texts(fifty, enc).shape == (50, 8)
    assert not encode_object_texts(LABELS, enc).requires_grad


def test_stub_encoder_properties():
    a, b = stub_text_encoder(3, 8, 8), stub_text_encoder(3, 8, 8)
    toks = torch.randn(5, 8, dtype=torch.float64)
    assert torch.equal(a(toks), b(toks))
    assert torch.equal(a(torch.zeros(1, 8, dtype=torch.float64)), a.bias)
    perm = toks[torch.tensor([4, 2, 0, 1, 3])]
    assert torch.allclose(a(perm), a(toks), rtol=0, atol=1e-14)
    assert all(not p.requires_grad for p in a.buffers())


def test_word_vectors_deterministic_and_distinct():
    assert np.array_equal(embed_words("cut", 8), embed_words("cut", 8))
    assert not np.array_equal(embed_words("cut", 8), embed_words("pour", 8))
