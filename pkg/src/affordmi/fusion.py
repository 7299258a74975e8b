"""Trainable multi-layer feature fusion.

A softmax-weighted sum over encoder layers followed by one linear map into
the text feature dimension.
"""
from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn as nn


class LayerFusion(nn.Module):
    def __init__(self, vision_dim: int, text_dim: int, n_layers: int, generator: torch.Generator = None,
                 dtype=torch.float32):
        super().__init__()
        self.n_layers = n_layers
        a = math.sqrt(6.0 / (vision_dim + text_dim))
        proj = (torch.rand(vision_dim, text_dim, generator=generator, dtype=torch.float64) * 2 - 1) * a
        self.mix_logits = nn.Parameter(torch.zeros(n_layers, dtype=dtype))
        self.proj = nn.Parameter(proj.to(dtype))
        self.bias = nn.Parameter(torch.zeros(text_dim, dtype=dtype))

    @property
    def layer_weights(self) -> torch.Tensor:
        return torch.softmax(self.mix_logits, dim=0)

    def forward(self, layer_stack: Sequence[torch.Tensor]) -> torch.Tensor:
        """Fuse L grids of shape (Hp, Wp, D_v) into one (Hp, Wp, D_t) grid."""
        if len(layer_stack) != self.n_layers:
            raise ValueError(f"expected {self.n_layers} layers, got {len(layer_stack)}")
        shape = layer_stack[0].shape
        if any(l.shape != shape for l in layer_stack):
            raise ValueError("all layer grids must share one shape")
        stacked = torch.stack([l.to(self.proj.dtype) for l in layer_stack])
        mixed = torch.einsum("l,lhwd->hwd", self.layer_weights, stacked)
        return mixed @ self.proj + self.bias


def init_fusion(seed: int, vision_dim: int, text_dim: int, n_layers: int, dtype=torch.float32) -> LayerFusion:
    gen = torch.Generator().manual_seed(seed)
    return LayerFusion(vision_dim, text_dim, n_layers, gen, dtype)


def fuse(layer_stack, params: LayerFusion) -> torch.Tensor:
    return params(layer_stack)
