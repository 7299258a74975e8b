"""One-shot training loop, checkpoint evaluation, ablations and grid sweeps."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .checkpoint import Checkpoint, CheckpointError
from .config import TrainConfig, from_flat, to_flat
from .losses import LossReport, bce_loss, total_loss
from .metrics import MetricReport, evaluate_set
from .model import (AffordanceModel, EncodedSample, Encoders, _DTYPES, encode_sample, new_model,
                    object_features, run, sample_losses)
from .types import LabelSpace, Sample

log = logging.getLogger(__name__)

ABLATION_ROWS = (
    ("L_bce", False, False),
    ("+ L_AMI", True, False),
    ("+ L_OMI", False, True),
    ("+ L_AMI + L_OMI", True, True),
)

# Full-scale reference numbers (AGD20K one-shot, pretrained backbones, 20k
# iterations). Not reachable with the stub encoders; kept for reports.
REFERENCE_ABLATION = {
    "L_bce": (0.740, 0.577, 1.745),
    "+ L_AMI": (0.730, 0.575, 1.772),
    "+ L_OMI": (0.735, 0.581, 1.755),
    "+ L_AMI + L_OMI": (0.719, 0.581, 1.787),
}
REFERENCE_SEEN = (0.719, 0.581, 1.787)
REFERENCE_UNSEEN = (1.023, 0.482, 1.535)

TAU_GRID = (0.01, 0.025, 0.05, 0.075, 0.1)
LAMBDA_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)


class TrainingError(RuntimeError):
    pass


class CheckpointMismatch(CheckpointError):
    """Checkpoint parameters or config do not fit the model/encoders in use."""


def prepare(samples: Sequence[Sample], labels: LabelSpace, enc: Encoders, dtype) -> List[EncodedSample]:
    return [encode_sample(s, labels, enc, dtype) for s in samples]


def state_arrays(model: AffordanceModel) -> Dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().astype(np.float32) for k, v in model.state_dict().items()}


def load_state(model: AffordanceModel, params: Dict[str, np.ndarray]) -> AffordanceModel:
    own = model.state_dict()
    if set(own) != set(params):
        missing, extra = sorted(set(own) - set(params)), sorted(set(params) - set(own))
        raise CheckpointMismatch(f"parameter names differ (missing {missing}, unexpected {extra})")
    for k, v in own.items():
        if tuple(v.shape) != tuple(params[k].shape):
            raise CheckpointMismatch(f"{k}: checkpoint shape {tuple(params[k].shape)} != model {tuple(v.shape)}")
    model.load_state_dict({k: torch.from_numpy(np.array(params[k])).to(own[k].dtype) for k in own})
    return model


def predictions(model, enc: Encoders, labels: LabelSpace, data: Sequence[EncodedSample]) -> List[np.ndarray]:
    """(C, H, W) probability maps per sample, float64."""
    out = []
    with torch.no_grad():
        text = model.affordance_text(enc.text, labels)
        for s in data:
            out.append(run(model, enc, labels, s, text).preds.to(torch.float64).numpy())
    return out


def evaluate_model(model, enc: Encoders, labels: LabelSpace, data: Sequence[EncodedSample]) -> MetricReport:
    """Metrics over every annotated (image, affordance) pair."""
    pairs = []
    for s, pred in zip(data, predictions(model, enc, labels, data)):
        tgt = s.targets.to(torch.float64).numpy()
        pairs.extend((pred[c], tgt[c]) for c in s.present)
    return evaluate_set(pairs)


def mean_bce(model, enc: Encoders, labels: LabelSpace, data: Sequence[EncodedSample]) -> float:
    with torch.no_grad():
        text = model.affordance_text(enc.text, labels)
        vals = [float(bce_loss(run(model, enc, labels, s, text).preds, s.targets)) for s in data]
    return float(np.mean(vals))


def _check_finite(bce, ami, omi, iteration):
    for name, v in (("bce", bce), ("ami", ami), ("omi", omi)):
        v = v.item()
        if not math.isfinite(v):
            raise TrainingError(f"non-finite {name} loss ({v}) at iteration {iteration}")


def train(config: TrainConfig, data: Sequence[Sample], labels: LabelSpace, encoders: Encoders,
          val: Optional[Sequence[Sample]] = None) -> Checkpoint:
    """SGD over the trainable modules, one sample per step, cycling a seeded permutation.

    The returned checkpoint holds the parameters with the lowest validation
    KLD seen at the evaluation points; with no ``val`` the training set
    stands in. ``checkpoint.history`` lists one LossReport per iteration and
    ``checkpoint.summary`` records the final-iterate training BCE.
    """
    if not data:
        raise TrainingError("empty training set")
    hp = config.hyper
    dtype = _DTYPES[config.dtype]
    if encoders.image.patch_size != hp.patch_size:
        raise TrainingError("image encoder patch size differs from config patch_size")
    train_set = prepare(data, labels, encoders, dtype)
    val_set = prepare(val, labels, encoders, dtype) if val else train_set
    model = new_model(config)
    obj_text = object_features(encoders, labels, dtype)
    opt = torch.optim.SGD(model.parameters(), lr=hp.lr, momentum=config.momentum)
    order = np.random.default_rng(hp.seed).permutation(len(train_set))
    lam1 = hp.lambda1
    lam2 = hp.lambda2

    best_kld, best_it, best_params = math.inf, 0, state_arrays(model)
    history: List[LossReport] = []
    cursor = 0
    for it in range(1, hp.iterations + 1):
        opt.zero_grad(set_to_none=True)
        parts = []
        for _ in range(config.grad_accum):
            s = train_set[order[cursor % len(order)]]
            cursor += 1
            bce, ami, omi = sample_losses(model, encoders, labels, s, obj_text, config)
            _check_finite(bce, ami, omi, it)
            # a zero-weighted term still adds an all-zero gradient branch, which
            # can reorder float reductions; detach it so weight 0 == disabled
            loss = total_loss(bce, ami if lam1 else ami.detach(), omi if lam2 else omi.detach(), lam1, lam2)
            if config.grad_accum > 1:
                loss = loss / config.grad_accum
            loss.backward()
            parts.append((bce.item(), ami.item(), omi.item()))
        b, a, o = (float(np.mean(col)) for col in zip(*parts))
        history.append(LossReport(b, a, o, total_loss(b, a, o, lam1, lam2)))
        opt.step()

        if it % config.eval_interval == 0 or it == hp.iterations:
            report = evaluate_model(model, encoders, labels, val_set)
            log.info("iter %d  bce %.4f ami %.4f omi %.4f  val kld %.4f", it, b, a, o, report.kld)
            if report.kld < best_kld:
                best_kld, best_it, best_params = report.kld, it, state_arrays(model)

    ckpt = Checkpoint(best_params, best_it, to_flat(config), best_kld,
                      {"affordances": list(labels.affordance_names), "objects": list(labels.object_names)})
    ckpt.history = history
    ckpt.summary = {"final_train_bce": mean_bce(model, encoders, labels, train_set),
                    "final_iteration": hp.iterations}
    return ckpt


def model_from_checkpoint(ckpt: Checkpoint, encoders: Optional[Encoders] = None) -> Tuple[TrainConfig, AffordanceModel]:
    cfg = from_flat(ckpt.config)
    if encoders is not None:
        m = cfg.model
        if encoders.text.text_dim != m.text_dim:
            raise CheckpointMismatch(f"text dimension: checkpoint {m.text_dim}, encoder {encoders.text.text_dim}")
        if encoders.text.embed_dim != m.embed_dim:
            raise CheckpointMismatch(f"embedding dimension: checkpoint {m.embed_dim}, encoder {encoders.text.embed_dim}")
        if encoders.image.vision_dim != m.vision_dim or encoders.image.n_layers != m.vision_layers:
            raise CheckpointMismatch("image encoder dimension or layer count differs from checkpoint")
        if encoders.image.patch_size != cfg.hyper.patch_size:
            raise CheckpointMismatch("image encoder patch size differs from checkpoint")
    model = load_state(new_model(cfg), ckpt.params)
    return cfg, model


def labels_from_checkpoint(ckpt: Checkpoint) -> LabelSpace:
    if not ckpt.labels:
        raise CheckpointMismatch("checkpoint carries no label space")
    return LabelSpace(tuple(ckpt.labels["affordances"]), tuple(ckpt.labels["objects"]))


def evaluate_checkpoint(ckpt: Checkpoint, test: Sequence[Sample], encoders: Encoders,
                        labels: Optional[LabelSpace] = None) -> MetricReport:
    labels = labels or labels_from_checkpoint(ckpt)
    cfg, model = model_from_checkpoint(ckpt, encoders)
    if ckpt.labels and tuple(ckpt.labels["affordances"]) != labels.affordance_names:
        raise CheckpointMismatch("affordance vocabulary differs from checkpoint")
    data = prepare(test, labels, encoders, _DTYPES[cfg.dtype])
    return evaluate_model(model, encoders, labels, data)


def initial_checkpoint(config: TrainConfig, labels: LabelSpace) -> Checkpoint:
    """Checkpoint of the untrained model, for baseline comparisons."""
    model = new_model(config)
    return Checkpoint(state_arrays(model), 0, to_flat(config), math.inf,
                      {"affordances": list(labels.affordance_names), "objects": list(labels.object_names)})


@dataclass
class AblationRow:
    name: str
    enable_ami: bool
    enable_omi: bool
    report: MetricReport
    checkpoint: Checkpoint = field(repr=False)


def run_ablation(config: TrainConfig, data, labels, encoders, val=None, test=None) -> List[AblationRow]:
    """Four runs sharing one seed, in table order: bce, +AMI, +OMI, +AMI+OMI."""
    rows = []
    for name, ami, omi in ABLATION_ROWS:
        cfg = config.with_overrides(enable_ami=ami, enable_omi=omi)
        ckpt = train(cfg, data, labels, encoders, val)
        report = evaluate_checkpoint(ckpt, test if test is not None else data, encoders, labels)
        rows.append(AblationRow(name, ami, omi, report, ckpt))
    return rows


@dataclass
class SweepResult:
    keys: Tuple[str, str]
    rows: Tuple[float, ...]
    cols: Tuple[float, ...]
    reports: List[List[MetricReport]]

    def matrix(self, metric: str) -> np.ndarray:
        return np.array([[getattr(r, metric) for r in row] for row in self.reports])


def grid_sweep(config: TrainConfig, keys: Tuple[str, str], rows: Sequence[float], cols: Sequence[float],
               data, labels, encoders, val=None, test=None) -> SweepResult:
    """Train and evaluate once per (rows[i], cols[j]) assignment of ``keys``."""
    if not rows or not cols:
        raise ValueError("sweep grids must be nonempty")
    reports = []
    for r in rows:
        line = []
        for c in cols:
            cfg = config.with_overrides(**{keys[0]: float(r), keys[1]: float(c)})
            ckpt = train(cfg, data, labels, encoders, val)
            line.append(evaluate_checkpoint(ckpt, test if test is not None else data, encoders, labels))
            log.info("%s=%g %s=%g  kld %.4f", keys[0], r, keys[1], c, line[-1].kld)
        reports.append(line)
    return SweepResult(tuple(keys), tuple(rows), tuple(cols), reports)
