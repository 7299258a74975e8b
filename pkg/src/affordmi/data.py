"""Dataset layout, synthetic data, and heatmap export.

On-disk layout (AGD20K style)::

    <root>/labels.json
    <root>/<Seen|Unseen>/<trainset|valset|testset>/egocentric/<affordance>/<object>/<stem>.png
    <root>/<Seen|Unseen>/<trainset|valset|testset>/GT/<affordance>/<object>/<stem>.png

An image annotated with several affordances appears once under each
affordance directory. Masks are 8-bit single channel; images 8-bit RGB.
"""
from __future__ import annotations

import colorsys
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .types import GROUNDTRUTH_GRAY, AffordanceMask, ImageTensor, LabelSpace, Sample

log = logging.getLogger(__name__)

SPLITS = {"seen": "Seen", "unseen": "Unseen"}
SUBSETS = ("trainset", "valset", "testset")
IMAGE_DIR, MASK_DIR = "egocentric", "GT"
IMAGE_EXTS = (".png", ".jpg", ".jpeg")


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    object_class: int
    masks: Tuple[Tuple[int, str], ...]

    @property
    def sample_id(self) -> str:
        return Path(self.image_path).parent.name + "/" + Path(self.image_path).stem


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    split: str
    subset: str
    entries: Tuple[ManifestEntry, ...]
    labels: LabelSpace
    one_shot: bool = False

    def __len__(self):
        return len(self.entries)

    def load_samples(self) -> List[Sample]:
        root = Path(self.root)
        out = []
        for e in self.entries:
            img = read_image(root / e.image_path)
            masks = tuple(AffordanceMask(read_mask(root / p), GROUNDTRUTH_GRAY, c) for c, p in e.masks)
            out.append(Sample(img, masks, e.object_class, e.sample_id))
        return out

    def to_json(self) -> str:
        return json.dumps({
            "root": self.root, "split": self.split, "subset": self.subset, "one_shot": self.one_shot,
            "entries": [{"image": e.image_path, "object": self.labels.object_names[e.object_class],
                         "masks": {self.labels.affordance_names[c]: p for c, p in e.masks}}
                        for e in self.entries],
        }, indent=2)


def read_image(path) -> ImageTensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageTensor(arr)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64)


def write_labels(root, labels: LabelSpace) -> None:
    payload = {"affordances": list(labels.affordance_names), "objects": list(labels.object_names)}
    (Path(root) / "labels.json").write_text(json.dumps(payload, indent=2) + "\n")


def load_labels(root) -> LabelSpace:
    path = Path(root) / "labels.json"
    if not path.is_file():
        raise DatasetError(f"missing {path}")
    d = json.loads(path.read_text())
    return LabelSpace(tuple(d["affordances"]), tuple(d["objects"]))


def load_manifest(root, split: str = "seen", one_shot: bool = False, subset: str = "trainset",
                  labels: Optional[LabelSpace] = None) -> DatasetManifest:
    """Enumerate one subset of a split in sorted (affordance, object, stem) order."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}")
    labels = labels or load_labels(root)
    base = root / SPLITS[split] / subset
    img_root, gt_root = base / IMAGE_DIR, base / MASK_DIR
    if not img_root.is_dir():
        raise DatasetError(f"no images under {img_root}")
    aff_index = {n: i for i, n in enumerate(labels.affordance_names)}
    obj_index = {n: i for i, n in enumerate(labels.object_names)}

    found: Dict[Tuple[str, str], dict] = {}
    for aff_dir in sorted(p for p in img_root.iterdir() if p.is_dir()):
        if aff_dir.name not in aff_index:
            raise DatasetError(f"unknown affordance directory {aff_dir.name!r}")
        for obj_dir in sorted(p for p in aff_dir.iterdir() if p.is_dir()):
            if obj_dir.name not in obj_index:
                raise DatasetError(f"unknown object directory {obj_dir.name!r}")
            for img in sorted(obj_dir.iterdir()):
                if img.suffix.lower() not in IMAGE_EXTS:
                    continue
                mask = gt_root / aff_dir.name / obj_dir.name / (img.stem + ".png")
                if not mask.is_file():
                    raise DatasetError(f"missing mask {mask}")
                key = (obj_dir.name, img.stem)
                rec = found.setdefault(key, {"image": img.relative_to(root).as_posix(), "masks": []})
                rec["masks"].append((aff_index[aff_dir.name], mask.relative_to(root).as_posix()))

    if not found:
        raise DatasetError(f"empty manifest for {base}")
    entries = []
    for (obj, _stem), rec in sorted(found.items()):
        entries.append(ManifestEntry(rec["image"], obj_index[obj], tuple(sorted(rec["masks"]))))
    if one_shot:
        per_obj: Dict[int, int] = {}
        for e in entries:
            per_obj[e.object_class] = per_obj.get(e.object_class, 0) + 1
        dup = [labels.object_names[o] for o, n in per_obj.items() if n > 1]
        if dup:
            raise DatasetError(f"one-shot manifest has several images for {dup}")
    return DatasetManifest(str(root), split, subset, tuple(entries), labels, one_shot)


# ---------------------------------------------------------------- synthetic data

AFFORDANCE_NAMES = ["hold", "cut", "pour", "ride", "open", "drink", "sit_on", "swing",
                    "pick_up", "throw", "push", "type_on"]
OBJECT_NAMES = ["knife", "cup", "bicycle", "suitcase", "bottle", "scissors", "chair", "tennis racket",
                "skateboard", "frisbee", "laptop", "toothbrush"]


@dataclass(frozen=True)
class SyntheticSpec:
    """Objects are muted rectangles on a dark background; each affordance
    region is a saturated rectangle whose hue is set by the affordance and
    nudged per object. Regions are aligned to the patch grid."""

    n_objects: int = 6
    n_affordances: int = 4
    image_size: int = 32
    patch_size: int = 8
    seed: int = 7
    n_test_variants: int = 2
    n_val_variants: int = 1
    affordances_per_object: int = 2
    noise: float = 0.02

    def __post_init__(self):
        if self.n_objects < 1 or self.n_affordances < 1:
            raise ValueError("need at least one object and one affordance")
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be a multiple of patch_size")
        if self.image_size // self.patch_size < 2:
            raise ValueError("need a patch grid of at least 2x2")
        if self.n_test_variants < 1:
            raise ValueError("need at least one test variant")

    def labels(self) -> LabelSpace:
        return LabelSpace(_names(AFFORDANCE_NAMES, "affordance", self.n_affordances),
                          _names(OBJECT_NAMES, "object", self.n_objects))

    def affordances_of(self, obj: int) -> List[int]:
        k = min(self.affordances_per_object, self.n_affordances)
        out: List[int] = []
        step = 1 + obj // self.n_affordances
        a = obj % self.n_affordances
        while len(out) < k:
            if a not in out:
                out.append(a)
            a = (a + step) % self.n_affordances
            if a in out:
                a = (a + 1) % self.n_affordances
        return out

    def affordance_color(self, obj: int, aff: int) -> np.ndarray:
        hue = aff / self.n_affordances
        base = np.array(colorsys.hsv_to_rgb(hue, 0.9, 0.95))
        rng = np.random.default_rng([self.seed, 11, obj, aff])
        return np.clip(base + rng.uniform(-0.06, 0.06, 3), 0.0, 1.0)

    def body_color(self, obj: int) -> np.ndarray:
        hue = (obj + 0.5) / self.n_objects
        return np.array(colorsys.hsv_to_rgb(hue, 0.3, 0.5))


BACKGROUND = np.array([0.08, 0.08, 0.08])


def _names(pool, prefix, n):
    return tuple(pool[i] if i < len(pool) else f"{prefix}{i}" for i in range(n))


def _layout(spec: SyntheticSpec, rng: np.random.Generator, n_regions: int):
    """Body rectangle and non-overlapping region rectangles, in patch units."""
    g = spec.image_size // spec.patch_size
    for _ in range(1000):
        bh, bw = rng.integers(2, g + 1, size=2)
        if bh * bw < n_regions + 1:
            continue
        r0, c0 = rng.integers(0, g - bh + 1), rng.integers(0, g - bw + 1)
        taken = np.zeros((g, g), bool)
        regions = []
        for _k in range(n_regions):
            placed = False
            for _t in range(50):
                h, w = (1, 2) if rng.random() < 0.5 else (1, 1)
                if rng.random() < 0.5:
                    h, w = w, h
                if h > bh or w > bw:
                    continue
                rr, cc = r0 + rng.integers(0, bh - h + 1), c0 + rng.integers(0, bw - w + 1)
                if taken[rr:rr + h, cc:cc + w].any():
                    continue
                taken[rr:rr + h, cc:cc + w] = True
                regions.append((rr, cc, h, w))
                placed = True
                break
            if not placed:
                break
        if len(regions) == n_regions and taken[r0:r0 + bh, c0:c0 + bw].sum() < bh * bw:
            return (r0, c0, bh, bw), regions
    raise RuntimeError("could not place synthetic regions")


def render_sample(spec: SyntheticSpec, obj: int, variant_seed: Sequence[int]):
    """Return (rgb uint8 image, {affordance: uint8 mask})."""
    rng = np.random.default_rng(list(variant_seed))
    affs = spec.affordances_of(obj)
    (r0, c0, bh, bw), regions = _layout(spec, rng, len(affs))
    ps, n = spec.patch_size, spec.image_size
    img = np.tile(BACKGROUND, (n, n, 1))
    img[r0 * ps:(r0 + bh) * ps, c0 * ps:(c0 + bw) * ps] = spec.body_color(obj)
    masks = {}
    for aff, (rr, cc, h, w) in zip(affs, regions):
        sl = (slice(rr * ps, (rr + h) * ps), slice(cc * ps, (cc + w) * ps))
        img[sl] = spec.affordance_color(obj, aff)
        m = np.zeros((n, n), np.uint8)
        m[sl] = 255
        masks[aff] = m
    img = img + rng.uniform(-spec.noise, spec.noise, img.shape)
    img = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return img, masks


def synthesize(spec: SyntheticSpec) -> Dict[str, List[Tuple[str, int, np.ndarray, Dict[int, np.ndarray]]]]:
    """In-memory splits: train has one image per object; val/test are re-laid-out variants."""
    labels = spec.labels()
    counts = {"trainset": 1, "valset": spec.n_val_variants, "testset": spec.n_test_variants}
    out = {}
    for si, (subset, k) in enumerate(counts.items()):
        rows = []
        for obj in range(spec.n_objects):
            for v in range(k):
                img, masks = render_sample(spec, obj, (spec.seed, si, obj, v))
                stem = f"{labels.object_names[obj].replace(' ', '_')}_{subset[:-3]}{v:03d}"
                rows.append((stem, obj, img, masks))
        out[subset] = rows
    return out


def generate_synthetic(spec: SyntheticSpec, root) -> Tuple[DatasetManifest, DatasetManifest]:
    """Write the synthetic dataset under ``root`` (Seen split); return (train, test) manifests."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    labels = spec.labels()
    write_labels(root, labels)
    for subset, rows in synthesize(spec).items():
        if not rows:
            continue
        base = root / SPLITS["seen"] / subset
        for stem, obj, img, masks in rows:
            oname = labels.object_names[obj]
            for aff, m in masks.items():
                aname = labels.affordance_names[aff]
                for sub, arr, mode in ((IMAGE_DIR, img, "RGB"), (MASK_DIR, m, "L")):
                    d = base / sub / aname / oname
                    d.mkdir(parents=True, exist_ok=True)
                    Image.fromarray(arr, mode).save(d / f"{stem}.png", optimize=False)
    train = load_manifest(root, "seen", one_shot=True, subset="trainset", labels=labels)
    test = load_manifest(root, "seen", one_shot=False, subset="testset", labels=labels)
    return train, test


def synthetic_samples(spec: SyntheticSpec) -> Dict[str, List[Sample]]:
    """Same data as :func:`generate_synthetic` without touching disk."""
    out = {}
    for subset, rows in synthesize(spec).items():
        out[subset] = [
            Sample(ImageTensor(img / 255.0),
                   tuple(AffordanceMask(m.astype(np.float64), GROUNDTRUTH_GRAY, a) for a, m in sorted(masks.items())),
                   obj, f"{spec.labels().object_names[obj]}/{stem}")
            for stem, obj, img, masks in rows
        ]
    return out


# ---------------------------------------------------------------- heatmaps

def to_gray8(pred: np.ndarray) -> np.ndarray:
    """round(255 * p) with halves rounded up."""
    p = np.asarray(pred, dtype=np.float64)
    if p.min() < 0 or p.max() > 1:
        raise ValueError("prediction must lie in [0, 1]")
    return np.floor(255.0 * p + 0.5).astype(np.uint8)


def export_heatmap(pred: np.ndarray, image: np.ndarray, out_path, alpha: float = 0.5,
                   cmap: str = "jet") -> Tuple[Path, Path]:
    """Write ``out_path`` (grayscale) and ``<stem>_overlay.png`` (colormap blended over the image)."""
    from matplotlib import colormaps

    pred = np.asarray(pred, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if image.shape[:2] != pred.shape:
        raise ValueError(f"prediction {pred.shape} and image {image.shape[:2]} differ in size")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    gray = to_gray8(pred)
    Image.fromarray(gray, "L").save(out_path)
    heat = colormaps[cmap](pred)[..., :3]
    blend = (1 - alpha) * image + alpha * heat
    overlay = out_path.with_name(out_path.stem + "_overlay.png")
    Image.fromarray(np.floor(np.clip(blend, 0, 1) * 255 + 0.5).astype(np.uint8), "RGB").save(overlay)
    return out_path, overlay
