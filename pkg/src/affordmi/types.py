"""Typed containers for images, affordance masks, features and hyperparameters.

Everything here is validation only. Arrays are numpy and are treated as
read-only once a value is constructed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

GROUNDTRUTH_GRAY = "groundtruth_gray"
SCALED = "scaled"
PREDICTION = "prediction"

_MODE_RANGE = {
    GROUNDTRUTH_GRAY: (0.0, 255.0),
    SCALED: (0.0, 1.0),
    PREDICTION: (0.0, 1.0),
}


class ValidationError(ValueError):
    """Raised when a value violates one of its invariants."""


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageTensor:
    """An RGB image with values in [0, 1], shape (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = _frozen(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValidationError(f"image must be H x W x 3, got shape {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ValidationError("image must be non-empty")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError("image pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def check_patch_size(self, patch_size: int) -> None:
        if self.height % patch_size or self.width % patch_size:
            raise ValidationError(
                f"image {self.height}x{self.width} is not divisible by patch size {patch_size}"
            )


@dataclass(frozen=True)
class AffordanceMask:
    """Per-class intensity map.

    ``mode`` is one of ``groundtruth_gray`` (values in [0, 255]), ``scaled``
    or ``prediction`` (both in [0, 1]). ``class_id`` is a 0-based affordance
    index.
    """

    values: np.ndarray
    mode: str
    class_id: int

    def __post_init__(self):
        if self.mode not in _MODE_RANGE:
            raise ValidationError(f"unknown mask mode {self.mode!r}")
        vals = _frozen(self.values)
        if vals.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {vals.shape}")
        lo, hi = _MODE_RANGE[self.mode]
        if vals.size and (not np.all(np.isfinite(vals)) or vals.min() < lo or vals.max() > hi):
            raise ValidationError(f"mask values outside [{lo:g}, {hi:g}] for mode {self.mode}")
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise ValidationError(f"invalid class id {self.class_id!r}")
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


def scale_mask(m: AffordanceMask) -> AffordanceMask:
    """Map a 0..255 ground-truth mask to [0, 1] by dividing by 255."""
    if m.mode != GROUNDTRUTH_GRAY:
        raise ValidationError(f"scale_mask expects mode {GROUNDTRUTH_GRAY}, got {m.mode}")
    return AffordanceMask(m.values / 255.0, SCALED, m.class_id)


@dataclass(frozen=True)
class PatchFeatureMap:
    """Fused patch grid (Hp, Wp, D), the [CLS] vector and the pre-fusion layers."""

    grid: np.ndarray
    cls: np.ndarray
    layer_stack: Tuple[np.ndarray, ...]

    def __post_init__(self):
        grid = _frozen(self.grid)
        cls = _frozen(self.cls)
        layers = tuple(_frozen(l) for l in self.layer_stack)
        if grid.ndim != 3:
            raise ValidationError("grid must be Hp x Wp x D")
        if cls.ndim != 1:
            raise ValidationError("cls must be a vector")
        if len(layers) < 1:
            raise ValidationError("layer_stack needs at least one layer")
        for l in layers:
            if l.shape[:2] != grid.shape[:2] or l.shape[2] != cls.shape[0]:
                raise ValidationError("layer grids must be Hp x Wp x D_v with D_v = len(cls)")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "cls", cls)
        object.__setattr__(self, "layer_stack", layers)

    def check_against(self, image: ImageTensor, patch_size: int, text_dim: int) -> None:
        hp, wp, d = self.grid.shape
        if (hp, wp) != (image.height // patch_size, image.width // patch_size):
            raise ValidationError("grid size does not match image size / patch size")
        if d != text_dim:
            raise ValidationError(f"fused dimension {d} != text dimension {text_dim}")


@dataclass(frozen=True)
class PromptContext:
    """The p learnable context vectors, shape (p, D_e)."""

    vectors: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        v = _frozen(self.vectors)
        if v.ndim != 2:
            raise ValidationError("context must be p x D_e")
        object.__setattr__(self, "vectors", v)

    @property
    def length(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class TextFeatureSet:
    features: np.ndarray
    kind: str
    class_names: Tuple[str, ...]

    def __post_init__(self):
        f = _frozen(self.features)
        if self.kind not in ("affordance", "object"):
            raise ValidationError(f"unknown text feature kind {self.kind!r}")
        if f.ndim != 2 or f.shape[0] < 1:
            raise ValidationError("text features must be K x D_t with K >= 1")
        if f.shape[0] != len(self.class_names):
            raise ValidationError("one class name per feature row")
        if not np.all(np.isfinite(f)):
            raise ValidationError("text features must be finite")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "class_names", tuple(self.class_names))


@dataclass(frozen=True)
class LabelSpace:
    """Affordance and object vocabularies plus the sample -> object map."""

    affordance_names: Tuple[str, ...]
    object_names: Tuple[str, ...]
    object_of_image: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for kind, names in (("affordance", self.affordance_names), ("object", self.object_names)):
            if len(names) < 1:
                raise ValidationError(f"need at least one {kind} name")
            if any(not n for n in names):
                raise ValidationError(f"{kind} names must be nonempty")
            if len(set(names)) != len(names):
                raise ValidationError(f"{kind} names must be unique")
        for sid, obj in self.object_of_image.items():
            if not 0 <= obj < len(self.object_names):
                raise ValidationError(f"sample {sid!r} maps to unknown object {obj}")
        object.__setattr__(self, "affordance_names", tuple(self.affordance_names))
        object.__setattr__(self, "object_names", tuple(self.object_names))

    @property
    def n_affordances(self) -> int:
        return len(self.affordance_names)

    @property
    def n_objects(self) -> int:
        return len(self.object_names)


@dataclass(frozen=True)
class Hyperparams:
    tau1: float = 0.01
    tau2: float = 0.01
    lambda1: float = 0.01
    lambda2: float = 1.0
    lr: float = 0.01
    iterations: int = 500
    patch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise ValidationError("temperatures must be positive")
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise ValidationError("loss weights must be nonnegative")
        if not self.lr >= 0:
            raise ValidationError("learning rate must be nonnegative")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValidationError("iterations must be a positive integer")
        if int(self.patch_size) != self.patch_size or self.patch_size < 1:
            raise ValidationError("patch_size must be a positive integer")


@dataclass(frozen=True)
class Sample:
    """One annotated image: masks are keyed by their class id."""

    image: ImageTensor
    masks: Tuple[AffordanceMask, ...]
    object_class: int
    sample_id: str = ""

    def mask_for(self, class_id: int) -> Optional[AffordanceMask]:
        for m in self.masks:
            if m.class_id == class_id:
                return m
        return None

    @property
    def present_classes(self) -> List[int]:
        return sorted(m.class_id for m in self.masks)


def validate(sample: Sample, labels: LabelSpace, patch_size: int) -> Sample:
    """Check a sample against the label space and patch grid; return it unchanged."""
    sample.image.check_patch_size(patch_size)
    if not 0 <= sample.object_class < labels.n_objects:
        raise ValidationError(f"unknown object class {sample.object_class}")
    seen = set()
    for m in sample.masks:
        if m.shape != (sample.image.height, sample.image.width):
            raise ValidationError(
                f"mask shape {m.shape} does not match image "
                f"{sample.image.height}x{sample.image.width}"
            )
        if m.class_id >= labels.n_affordances:
            raise ValidationError(f"unknown affordance class {m.class_id}")
        if m.class_id in seen:
            raise ValidationError(f"duplicate mask for class {m.class_id}")
        seen.add(m.class_id)
    return sample


def stack_masks(masks: Sequence[AffordanceMask], n_classes: int, shape) -> np.ndarray:
    """Dense (C, H, W) array of scaled targets; absent classes are all zero."""
    out = np.zeros((n_classes,) + tuple(shape))
    for m in masks:
        vals = m.values / 255.0 if m.mode == GROUNDTRUTH_GRAY else m.values
        out[m.class_id] = vals
    return out
