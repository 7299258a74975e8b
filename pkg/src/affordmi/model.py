"""Assembly of the trainable pieces around the two frozen encoders.

Trainable: prompt context, layer fusion, decoder (including its [CLS]
projection) and, when configured, a dedicated [CLS] projection for the
object-level term. The encoders never receive gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig, TrainConfig
from .decoder import ClsGuidedDecoder, predict_masks
from .fusion import LayerFusion
from .losses import EmptyRegionError, ami_loss, bce_loss, omi_loss
from .text import StubTextEncoder, encode_affordance_texts, encode_object_texts, stub_text_encoder
from .types import LabelSpace, Sample, stack_masks, validate
from .vision import StubImageEncoder, encode_image, stub_image_encoder

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class Encoders:
    text: StubTextEncoder
    image: StubImageEncoder
    object_text: Optional[StubTextEncoder] = None

    @property
    def object_encoder(self) -> StubTextEncoder:
        return self.object_text if self.object_text is not None else self.text


def build_encoders(mcfg: ModelConfig, patch_size: int) -> Encoders:
    text = stub_text_encoder(mcfg.text_seed, mcfg.embed_dim, mcfg.text_dim)
    image = stub_image_encoder(mcfg.image_seed, patch_size, mcfg.vision_dim, mcfg.vision_layers,
                               mcfg.image_feature_scale)
    obj = None
    if mcfg.separate_object_encoder:
        obj = stub_text_encoder(mcfg.text_seed + 1, mcfg.embed_dim, mcfg.text_dim)
    return Encoders(text, image, obj)


class AffordanceModel(nn.Module):
    def __init__(self, mcfg: ModelConfig, seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.cfg = mcfg
        gen = torch.Generator().manual_seed(seed)
        ctx = 0.02 * torch.randn(mcfg.context_len, mcfg.embed_dim, generator=gen, dtype=torch.float64)
        self.context = nn.Parameter(ctx.to(dtype))
        self.fusion = LayerFusion(mcfg.vision_dim, mcfg.text_dim, mcfg.vision_layers, gen, dtype)
        self.decoder = ClsGuidedDecoder(mcfg.text_dim, mcfg.vision_dim, mcfg.decoder_layers,
                                        mcfg.decoder_heads, mcfg.ffn_mult, gen, dtype)
        if mcfg.omi_projection == "dedicated":
            a = (6.0 / (mcfg.vision_dim + mcfg.text_dim)) ** 0.5
            w = (torch.rand(mcfg.vision_dim, mcfg.text_dim, generator=gen, dtype=torch.float64) * 2 - 1) * a
            self.omi_proj = nn.Parameter(w.to(dtype))
            self.omi_bias = nn.Parameter(torch.zeros(mcfg.text_dim, dtype=dtype))

    @property
    def dtype(self):
        return self.context.dtype

    def affordance_text(self, enc: StubTextEncoder, labels: LabelSpace) -> torch.Tensor:
        return encode_affordance_texts(self.context, labels, enc)

    def project_cls_for_objects(self, cls: torch.Tensor) -> torch.Tensor:
        if self.cfg.omi_projection == "dedicated":
            return cls.to(self.dtype) @ self.omi_proj + self.omi_bias
        return self.decoder.project_cls(cls)

    def forward(self, layers: List[torch.Tensor], cls: torch.Tensor, text: torch.Tensor):
        patches = self.fusion(layers)
        return patches, self.decoder(text, patches, cls)


def new_model(cfg: TrainConfig) -> AffordanceModel:
    return AffordanceModel(cfg.model, cfg.hyper.seed, _DTYPES[cfg.dtype])


@dataclass
class EncodedSample:
    """Frozen-encoder outputs and dense targets for one sample, cached once."""

    layers: List[torch.Tensor]
    cls: torch.Tensor
    targets: torch.Tensor
    present: List[int]
    object_class: int
    sample_id: str
    image: np.ndarray

    @property
    def size(self):
        return self.targets.shape[1:]


def encode_sample(sample: Sample, labels: LabelSpace, enc: Encoders, dtype=torch.float32) -> EncodedSample:
    validate(sample, labels, enc.image.patch_size)
    layers, cls = encode_image(sample.image, enc.image)
    img = sample.image
    targets = stack_masks(sample.masks, labels.n_affordances, (img.height, img.width))
    return EncodedSample([l.to(dtype) for l in layers], cls.to(dtype), torch.from_numpy(targets).to(dtype),
                         sample.present_classes, sample.object_class, sample.sample_id,
                         np.asarray(img.pixels))


@dataclass
class ForwardOut:
    patches: torch.Tensor
    text: torch.Tensor
    text_hat: torch.Tensor
    preds: torch.Tensor


def run(model: AffordanceModel, enc: Encoders, labels: LabelSpace, s: EncodedSample,
        text: Optional[torch.Tensor] = None) -> ForwardOut:
    if text is None:
        text = model.affordance_text(enc.text, labels)
    patches, text_hat = model(s.layers, s.cls, text)
    h, w = s.size
    return ForwardOut(patches, text, text_hat, predict_masks(patches, text_hat, h, w))


def sample_losses(model: AffordanceModel, enc: Encoders, labels: LabelSpace, s: EncodedSample,
                  object_text: torch.Tensor, cfg: TrainConfig):
    """Return (bce, ami, omi) tensors for one sample.

    AMI is averaged over the sample's classes with a nonempty region; a
    disabled term is an exact zero and is never evaluated.
    """
    hp, mcfg = cfg.hyper, cfg.model
    out = run(model, enc, labels, s)
    bce = bce_loss(out.preds, s.targets)
    zero = bce.new_zeros(())
    ami = zero
    if cfg.enable_ami:
        text = out.text_hat if mcfg.ami_text_source == "decoder" else out.text
        terms = []
        for c in s.present:
            try:
                terms.append(ami_loss(text, out.patches, s.targets[c], c, hp.tau1, hp.patch_size))
            except EmptyRegionError:
                continue
        if terms:
            ami = torch.stack(terms).mean()
    omi = zero
    if cfg.enable_omi:
        omi = omi_loss(object_text, model.project_cls_for_objects(s.cls), s.object_class, hp.tau2)
    return bce, ami, omi


def object_features(enc: Encoders, labels: LabelSpace, dtype) -> torch.Tensor:
    return encode_object_texts(labels, enc.object_encoder, torch.float64).to(dtype)
