"""Pixel BCE, the two InfoNCE alignment terms and the joint objective."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

BCE_EPS = 1e-7


class EmptyRegionError(ValueError):
    """The downsampled mask has no active patch, so there is nothing to pool."""


@dataclass(frozen=True)
class LossReport:
    bce: float
    ami: float
    omi: float
    total: float


@dataclass
class RegionFeature:
    vector: torch.Tensor
    source_class: int
    patch_count: int


def cosine_sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last axis; broadcasts like a dot product."""
    na = torch.linalg.vector_norm(a, dim=-1)
    nb = torch.linalg.vector_norm(b, dim=-1)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise ValueError("cosine similarity of a zero vector is undefined")
    return (a * b).sum(-1) / (na * nb)


def bce_loss(preds: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over classes of the per-pixel mean BCE; ``preds`` and ``targets`` are (C, H, W)."""
    if preds.shape != targets.shape:
        raise ValueError(f"prediction shape {tuple(preds.shape)} != target shape {tuple(targets.shape)}")
    p = preds.clamp(BCE_EPS, 1 - BCE_EPS)
    y = targets.to(p.dtype)
    per_pixel = y * torch.log(p) + (1 - y) * torch.log(1 - p)
    return -per_pixel.flatten(1).mean(dim=1).mean()


def downsample_mask(mask: torch.Tensor, patch_size: int) -> torch.Tensor:
    """Max over non-overlapping patch windows: (H, W) -> (H/ps, W/ps)."""
    h, w = mask.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"mask {h}x{w} not divisible by patch size {patch_size}")
    return F.max_pool2d(mask[None, None].to(torch.float64), patch_size)[0, 0]


def binarize(grid: torch.Tensor) -> torch.Tensor:
    return (grid > 0).to(grid.dtype)


def masked_average_pool(patches: torch.Tensor, indicator: torch.Tensor, source_class: int = -1) -> RegionFeature:
    """Mean of the (Hp, Wp, D) patch features where ``indicator`` is 1."""
    if indicator.shape != patches.shape[:2]:
        raise ValueError("indicator must match the patch grid")
    ind = indicator.to(patches.dtype)
    count = int(ind.sum().item())
    if count < 1:
        raise EmptyRegionError(f"class {source_class}: no active patch in the region mask")
    vec = (patches * ind[..., None]).sum(dim=(0, 1)) / ind.sum()
    return RegionFeature(vec, source_class, count)


def infonce(sims: torch.Tensor, positive_index: int, tau: float) -> torch.Tensor:
    """-log softmax(sims / tau)[positive_index].

    Evaluated as log(sum_k exp(d_k)) with d = (sims - sims[pos]) / tau, so a
    dominant positive gives log1p of the tiny negative mass instead of 0.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if sims.ndim != 1 or sims.numel() < 1:
        raise ValueError("need a 1-D vector of at least one similarity")
    if not bool(torch.isfinite(sims).all()):
        raise FloatingPointError("non-finite similarity passed to infonce")
    logits = sims / tau
    d = logits - logits[positive_index]
    keep = torch.ones_like(d, dtype=torch.bool)
    keep[positive_index] = False
    rest = d[keep]
    if rest.numel() == 0:
        return d.sum() * 0
    shift = rest.max().detach()
    if shift <= 0:
        return torch.log1p(torch.exp(rest).sum())
    return shift + torch.log(torch.exp(-shift) + torch.exp(rest - shift).sum())


def ami_loss(text: torch.Tensor, patches: torch.Tensor, gt_mask: torch.Tensor, class_id: int,
             tau1: float, patch_size: int) -> torch.Tensor:
    """Affordance-level alignment for one class.

    ``text`` holds all C class rows, ``gt_mask`` is that class's (H, W) mask.
    """
    indicator = binarize(downsample_mask(gt_mask, patch_size))
    region = masked_average_pool(patches, indicator, class_id)
    sims = cosine_sim(text, region.vector.to(text.dtype)[None])
    return infonce(sims, class_id, tau1)


def omi_loss(object_text: torch.Tensor, projected_cls: torch.Tensor, object_class: int, tau2: float) -> torch.Tensor:
    """Object-level alignment of the projected [CLS] vector against all object prototypes."""
    if not 0 <= object_class < object_text.shape[0]:
        raise ValueError(f"object class {object_class} outside [0, {object_text.shape[0]})")
    sims = cosine_sim(object_text.to(projected_cls.dtype), projected_cls[None])
    return infonce(sims, object_class, tau2)


def total_loss(bce, ami, omi, lambda1: float, lambda2: float):
    """Weighted sum ``bce + lambda1*ami + lambda2*omi``.

    Works on floats or tensors; the summation order is fixed.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be nonnegative")
    return bce + lambda1 * ami + lambda2 * omi


def loss_report(bce, ami, omi, lambda1: float, lambda2: float) -> LossReport:
    vals = [float(v) for v in (bce, ami, omi)]
    return LossReport(*vals, total=total_loss(*vals, lambda1, lambda2))
