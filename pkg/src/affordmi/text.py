"""Text branch: learnable-context affordance prompts and fixed object prompts."""
from __future__ import annotations

import hashlib
import re
from typing import List, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .types import LabelSpace

OBJECT_TEMPLATE = "A good image of a {}"


def build_object_prompt(object_name: str) -> str:
    if not object_name:
        raise ValueError("object name must be nonempty")
    return OBJECT_TEMPLATE.format(object_name)


def tokenize(text: str) -> List[str]:
    """Lower-cased words; underscores count as separators (``pick_up``)."""
    return [w for w in re.split(r"[\s_]+", text.lower()) if w]


def word_vector(word: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic N(0, 1) embedding for a word, keyed on a hash of (seed, word)."""
    digest = hashlib.sha256(f"{seed}:{word}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.standard_normal(dim)


def embed_words(text: str, dim: int, seed: int = 0) -> np.ndarray:
    words = tokenize(text)
    if not words:
        raise ValueError(f"no tokens in {text!r}")
    return np.stack([word_vector(w, dim, seed) for w in words])


def build_affordance_prompt(ctx: torch.Tensor, class_embedding: torch.Tensor) -> torch.Tensor:
    """Concatenate context rows ahead of the class-name token rows."""
    if ctx.ndim != 2 or class_embedding.ndim != 2:
        raise ValueError("context and class embedding must both be 2-D")
    if ctx.shape[1] != class_embedding.shape[1]:
        raise ValueError(
            f"context dim {ctx.shape[1]} != class embedding dim {class_embedding.shape[1]}"
        )
    return torch.cat([ctx, class_embedding.to(ctx.dtype)], dim=0)


class StubTextEncoder(nn.Module):
    """Frozen stand-in for a pretrained text tower.

    Mean-pools token embeddings and applies a fixed seeded affine map to
    ``text_dim``. Output is *not* normalized; callers normalize.
    """

    def __init__(self, seed: int = 0, embed_dim: int = 16, text_dim: int = 16):
        super().__init__()
        self.seed = seed
        self.embed_dim = embed_dim
        self.text_dim = text_dim
        rng = np.random.default_rng([seed, 101])
        weight = rng.standard_normal((embed_dim, text_dim)) / np.sqrt(embed_dim)
        bias = 0.01 * rng.standard_normal(text_dim)
        self.register_buffer("weight", torch.from_numpy(weight))
        self.register_buffer("bias", torch.from_numpy(bias))
        self.requires_grad_(False)

    @property
    def frozen(self) -> bool:
        return True

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.ndim != 2 or tokens.shape[0] < 1 or tokens.shape[1] != self.embed_dim:
            raise ValueError(f"expected T x {self.embed_dim} tokens, got {tuple(tokens.shape)}")
        pooled = tokens.mean(dim=0)
        return pooled @ self.weight.to(tokens.dtype) + self.bias.to(tokens.dtype)

    encode = forward

    def embed(self, text: str, dtype=torch.float64) -> torch.Tensor:
        return torch.from_numpy(embed_words(text, self.embed_dim, self.seed)).to(dtype)


def stub_text_encoder(seed: int = 0, embed_dim: int = 16, text_dim: int = 16) -> StubTextEncoder:
    return StubTextEncoder(seed, embed_dim, text_dim)


def encode_affordance_texts(ctx: torch.Tensor, labels: LabelSpace, enc: StubTextEncoder) -> torch.Tensor:
    """Unit-norm (C, D_t) features; gradients flow back into ``ctx``."""
    rows = []
    for name in labels.affordance_names:
        seq = build_affordance_prompt(ctx, enc.embed(name, ctx.dtype))
        rows.append(enc(seq))
    return F.normalize(torch.stack(rows), dim=-1)


def encode_object_texts(labels: LabelSpace, enc: StubTextEncoder, dtype=torch.float64) -> torch.Tensor:
    """Unit-norm (C_obj, D_t) features from the fixed object template."""
    with torch.no_grad():
        rows = [enc(enc.embed(build_object_prompt(n), dtype)) for n in labels.object_names]
        return F.normalize(torch.stack(rows), dim=-1)

