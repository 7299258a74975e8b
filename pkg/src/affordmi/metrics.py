"""Saliency metrics for affordance heatmaps: KLD, SIM and NSS."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Tuple

import numpy as np

EPS = 1e-12


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    kld: float
    sim: float
    nss: float
    n_samples: int
    skipped: Dict[str, int] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"{k}\t{getattr(self, k):.6f}" for k in ("kld", "sim", "nss")]
        lines.append(f"n_samples\t{self.n_samples}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(float(d["kld"]), float(d["sim"]), float(d["nss"]), int(d["n_samples"]),
                   dict(d.get("skipped", {})))

    def save(self, path) -> Tuple[Path, Path]:
        """Write ``<path>.txt`` (flat key/value) and ``<path>.json``."""
        path = Path(path)
        txt, js = path.with_suffix(".txt"), path.with_suffix(".json")
        txt.write_text(self.to_text())
        js.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return txt, js


def _as_map(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise MetricError("maps must be finite and nonnegative")
    return a


def _normalize(a: np.ndarray, what: str) -> np.ndarray:
    s = a.sum()
    if s <= 0:
        raise MetricError(f"{what} map is all zero")
    return a / s


def kld(pred, gt) -> float:
    q = _normalize(_as_map(gt), "ground-truth")
    p = _as_map(pred)
    s = p.sum()
    p = p / s if s > 0 else p
    return float(np.sum(q * np.log(q / (p + EPS) + EPS)))


def sim(pred, gt) -> float:
    p = _normalize(_as_map(pred), "predicted")
    q = _normalize(_as_map(gt), "ground-truth")
    return float(np.minimum(p, q).sum())


def nss(pred, gt) -> float:
    g = np.asarray(gt, dtype=np.float64) > 0
    if not g.any():
        raise MetricError("ground-truth map has no positive pixel")
    p = np.asarray(pred, dtype=np.float64)
    std = p.std()
    # a constant map can pick up ~1e-18 of rounding spread; treat it as constant
    if std <= 1e-12 * np.abs(p).max():
        return 0.0
    z = (p - p.mean()) / std
    return float(z[g].mean())


_METRICS = {"kld": kld, "sim": sim, "nss": nss}


def evaluate_set(pairs: Iterable[Tuple[np.ndarray, np.ndarray]]) -> MetricReport:
    """Average each metric over (pred, gt) pairs, skipping pairs it cannot score."""
    sums = {k: 0.0 for k in _METRICS}
    counts = {k: 0 for k in _METRICS}
    n = 0
    for pred, gt in pairs:
        n += 1
        for name, fn in _METRICS.items():
            try:
                sums[name] += fn(pred, gt)
                counts[name] += 1
            except MetricError:
                pass
    if n == 0:
        raise MetricError("no pairs to evaluate")
    means = {k: (sums[k] / counts[k] if counts[k] else float("nan")) for k in _METRICS}
    skipped = {k: n - counts[k] for k in _METRICS if counts[k] != n}
    return MetricReport(means["kld"], means["sim"], means["nss"], n, skipped)
