"""Central finite differences against autograd, entry by entry."""
from __future__ import annotations

from typing import Callable, Dict, Iterable, Tuple

import torch


def analytic_grads(loss_fn: Callable[[], torch.Tensor], params: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    return {k: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for k, p in params.items()}


def numeric_grads(loss_fn: Callable[[], torch.Tensor], params: Dict[str, torch.Tensor],
                  step: float = 1e-5) -> Dict[str, torch.Tensor]:
    """(f(x + h e_i) - f(x - h e_i)) / 2h for every entry of every parameter."""
    out = {}
    with torch.no_grad():
        for name, p in params.items():
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * step)
            out[name] = g
    return out


def relative_errors(analytic: Dict[str, torch.Tensor], numeric: Dict[str, torch.Tensor],
                    floor: float = 1e-6) -> Dict[str, float]:
    """Max over entries of |a - n| / max(|a|, |n|, floor), per parameter.

    ``floor`` keeps entries whose true gradient is ~0 from dividing noise by noise.
    """
    errs = {}
    for k in analytic:
        a, n = analytic[k], numeric[k]
        denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.full_like(a, floor))
        errs[k] = float(((a - n).abs() / denom).max()) if a.numel() else 0.0
    return errs


def check(loss_fn, params: Dict[str, torch.Tensor], step: float = 1e-5,
          floor: float = 1e-6) -> Tuple[float, Dict[str, float]]:
    errs = relative_errors(analytic_grads(loss_fn, params), numeric_grads(loss_fn, params, step), floor)
    return max(errs.values()), errs
