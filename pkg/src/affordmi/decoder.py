"""CLS-guided cross-attention decoder and the sigmoid mask head."""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

# Initial gain on each sublayer's output projection. Keeps the decoder close
# to the identity at start so class text directions stay distinct.
OUT_GAIN = 0.1


def _xavier(fan_in, fan_out, gen, dtype, gain=1.0):
    a = gain * math.sqrt(6.0 / (fan_in + fan_out))
    w = (torch.rand(fan_in, fan_out, generator=gen, dtype=torch.float64) * 2 - 1) * a
    return nn.Parameter(w.to(dtype))


def _zeros(*shape, dtype):
    return nn.Parameter(torch.zeros(*shape, dtype=dtype))


class DecoderLayer(nn.Module):
    """Text queries attend over [patches; cls], then a GELU feed-forward block.

    Both sublayers are residual and there is no normalization in between.
    """

    def __init__(self, dim: int, n_heads: int, ffn_mult: int, gen: torch.Generator, dtype):
        super().__init__()
        if dim % n_heads:
            raise ValueError(f"text dim {dim} not divisible by {n_heads} heads")
        self.dim = dim
        self.n_heads = n_heads
        self.w_q = _xavier(dim, dim, gen, dtype)
        self.w_k = _xavier(dim, dim, gen, dtype)
        self.w_v = _xavier(dim, dim, gen, dtype)
        self.w_o = _xavier(dim, dim, gen, dtype, OUT_GAIN)
        self.b_o = _zeros(dim, dtype=dtype)
        hidden = ffn_mult * dim
        self.w_1 = _xavier(dim, hidden, gen, dtype)
        self.b_1 = _zeros(hidden, dtype=dtype)
        self.w_2 = _xavier(hidden, dim, gen, dtype, OUT_GAIN)
        self.b_2 = _zeros(dim, dtype=dtype)

    def attention(self, queries: torch.Tensor, memory: torch.Tensor):
        k_rows, n_mem = queries.shape[0], memory.shape[0]
        hd = self.dim // self.n_heads
        q = (queries @ self.w_q).view(k_rows, self.n_heads, hd).transpose(0, 1)
        k = (memory @ self.w_k).view(n_mem, self.n_heads, hd).transpose(0, 1)
        v = (memory @ self.w_v).view(n_mem, self.n_heads, hd).transpose(0, 1)
        weights = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(hd), dim=-1)
        out = (weights @ v).transpose(0, 1).reshape(k_rows, self.dim)
        return out @ self.w_o + self.b_o, weights

    def forward(self, queries: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        attended, _ = self.attention(queries, memory)
        x = queries + attended
        return x + F.gelu(x @ self.w_1 + self.b_1) @ self.w_2 + self.b_2


class ClsGuidedDecoder(nn.Module):
    def __init__(self, text_dim: int, vision_dim: int, n_layers: int = 2, n_heads: int = 1,
                 ffn_mult: int = 2, generator: torch.Generator = None, dtype=torch.float32):
        super().__init__()
        self.text_dim = text_dim
        self.vision_dim = vision_dim
        self.layers = nn.ModuleList(
            DecoderLayer(text_dim, n_heads, ffn_mult, generator, dtype) for _ in range(n_layers)
        )
        self.cls_proj = _xavier(vision_dim, text_dim, generator, dtype)
        self.cls_bias = _zeros(text_dim, dtype=dtype)

    def project_cls(self, cls: torch.Tensor) -> torch.Tensor:
        return cls.to(self.cls_proj.dtype) @ self.cls_proj + self.cls_bias

    def forward(self, text: torch.Tensor, patches: torch.Tensor, cls: torch.Tensor) -> torch.Tensor:
        """``text`` (C, D_t), ``patches`` (Hp, Wp, D_t), ``cls`` (D_v,) -> unit-norm (C, D_t)."""
        if text.shape[-1] != self.text_dim or patches.shape[-1] != self.text_dim:
            raise ValueError("text and patch features must have the decoder's text dimension")
        if cls.shape[-1] != self.vision_dim:
            raise ValueError(f"cls vector must have dimension {self.vision_dim}")
        memory = torch.cat([patches.reshape(-1, self.text_dim), self.project_cls(cls)[None]], dim=0)
        x = text
        for layer in self.layers:
            x = layer(x, memory)
        return F.normalize(x, dim=-1)


def init_decoder(seed: int, text_dim: int, vision_dim: int, n_layers: int = 2, n_heads: int = 1,
                 ffn_mult: int = 2, dtype=torch.float32) -> ClsGuidedDecoder:
    gen = torch.Generator().manual_seed(seed)
    return ClsGuidedDecoder(text_dim, vision_dim, n_layers, n_heads, ffn_mult, gen, dtype)


def decode(text, patches, cls, params: ClsGuidedDecoder) -> torch.Tensor:
    return params(text, patches, cls)


def upsample(grid: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Bilinear resize of a (C, Hp, Wp) stack, half-pixel centres (no corner alignment)."""
    return F.interpolate(grid[None], size=(height, width), mode="bilinear", align_corners=False)[0]


def predict_masks(patches: torch.Tensor, text: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Per-class probability maps (C, H, W) from patch/text dot products."""
    if patches.shape[-1] != text.shape[-1]:
        raise ValueError(f"patch dim {patches.shape[-1]} != text dim {text.shape[-1]}")
    logits = torch.einsum("hwd,cd->chw", patches, text.to(patches.dtype))
    return upsample(torch.sigmoid(logits), height, width)
