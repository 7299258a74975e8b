"""Frozen image encoder producing multi-layer patch features and a [CLS] vector."""
from __future__ import annotations

from typing import List, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .types import ImageTensor


class StubImageEncoder(nn.Module):
    """Deterministic stand-in for a ViT backbone.

    Layer ``l`` maps each patch's mean RGB and its normalized (row, col)
    centre through a seeded affine map of its own. The [CLS] vector is a
    separate seeded affine map of the global mean RGB. Patch features only
    depend on the pixels inside that patch.
    """

    def __init__(self, seed: int = 0, patch_size: int = 8, vision_dim: int = 16, n_layers: int = 4,
                 scale: float = 16.0):
        super().__init__()
        if n_layers < 1:
            raise ValueError("need at least one layer")
        self.seed = seed
        self.patch_size = patch_size
        self.vision_dim = vision_dim
        self.n_layers = n_layers
        rng = np.random.default_rng([seed, 202])
        # rows: r, g, b, row, col, layer index
        color = scale * rng.standard_normal((n_layers, 3, vision_dim))
        coord = 0.25 * rng.standard_normal((n_layers, 2, vision_dim))
        depth = rng.standard_normal(vision_dim)
        bias = 0.1 * rng.standard_normal((n_layers, vision_dim))
        cls_w = scale * rng.standard_normal((3, vision_dim))
        cls_b = 0.1 * rng.standard_normal(vision_dim)
        self.register_buffer("color_w", torch.from_numpy(color))
        self.register_buffer("coord_w", torch.from_numpy(coord))
        self.register_buffer("depth_w", torch.from_numpy(depth))
        self.register_buffer("layer_b", torch.from_numpy(bias))
        self.register_buffer("cls_w", torch.from_numpy(cls_w))
        self.register_buffer("cls_b", torch.from_numpy(cls_b))
        self.requires_grad_(False)

    @property
    def frozen(self) -> bool:
        return True

    def forward(self, pixels: torch.Tensor) -> Tuple[List[torch.Tensor], torch.Tensor]:
        """``pixels`` is (H, W, 3). Returns ([L x (Hp, Wp, D_v)], (D_v,))."""
        h, w, _ = pixels.shape
        ps = self.patch_size
        if h % ps or w % ps:
            raise ValueError(f"image {h}x{w} not divisible by patch size {ps}")
        x = pixels.to(torch.float64)
        rgb = F.avg_pool2d(x.permute(2, 0, 1)[None], ps)[0].permute(1, 2, 0) - 0.5
        hp, wp = h // ps, w // ps
        rows = (torch.arange(hp, dtype=torch.float64) + 0.5) / hp - 0.5
        cols = (torch.arange(wp, dtype=torch.float64) + 0.5) / wp - 0.5
        coords = torch.stack(torch.meshgrid(rows, cols, indexing="ij"), dim=-1)
        layers = []
        for l in range(self.n_layers):
            depth = (l + 1) / self.n_layers
            feat = rgb @ self.color_w[l] + coords @ self.coord_w[l] + depth * self.depth_w + self.layer_b[l]
            layers.append(feat)
        cls = (x.mean(dim=(0, 1)) - 0.5) @ self.cls_w + self.cls_b
        return layers, cls


def stub_image_encoder(seed: int = 0, patch_size: int = 8, vision_dim: int = 16,
                       n_layers: int = 4, scale: float = 16.0) -> StubImageEncoder:
    return StubImageEncoder(seed, patch_size, vision_dim, n_layers, scale)


def encode_image(img: ImageTensor, enc) -> Tuple[List[torch.Tensor], torch.Tensor]:
    """Run a frozen encoder on a validated image; outputs are float64 and finite."""
    img.check_patch_size(enc.patch_size)
    with torch.no_grad():
        layers, cls = enc(torch.tensor(img.pixels))
    if not all(torch.isfinite(l).all() for l in layers) or not torch.isfinite(cls).all():
        raise FloatingPointError("image encoder produced non-finite features")
    return [l.to(torch.float64) for l in layers], cls.to(torch.float64)
