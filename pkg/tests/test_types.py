import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from affordmi.types import (GROUNDTRUTH_GRAY, SCALED, AffordanceMask, Hyperparams, ImageTensor, LabelSpace,
                            PatchFeatureMap, PromptContext, Sample, ValidationError, scale_mask, stack_masks,
                            validate)

LABELS = LabelSpace(("hold", "cut"), ("knife", "cup"))


def _img(h=32, w=32):
    return ImageTensor(np.full((h, w, 3), 0.5))


def test_validate_accepts_all_zero_mask():
    s = Sample(_img(), (AffordanceMask(np.zeros((32, 32)), GROUNDTRUTH_GRAY, 0),), 0, "a")
    assert validate(s, LABELS, 8) is s


def test_validate_rejects_shape_mismatch():
    s = Sample(_img(), (AffordanceMask(np.zeros((16, 32)), GROUNDTRUTH_GRAY, 0),), 0, "a")
    with pytest.raises(ValidationError, match="mask"):
        validate(s, LABELS, 8)


def test_mask_range_error():
    m = np.zeros((32, 32))
    m[0, 0] = 300
    with pytest.raises(ValidationError):
        AffordanceMask(m, GROUNDTRUTH_GRAY, 0)


def test_validate_rejects_unknown_class_and_object():
    bad_cls = Sample(_img(), (AffordanceMask(np.zeros((32, 32)), GROUNDTRUTH_GRAY, 5),), 0, "a")
    with pytest.raises(ValidationError):
        validate(bad_cls, LABELS, 8)
    bad_obj = Sample(_img(), (), 7, "a")
    with pytest.raises(ValidationError):
        validate(bad_obj, LABELS, 8)


def test_validate_rejects_indivisible_image():
    s = Sample(_img(30, 32), (), 0, "a")
    with pytest.raises(ValidationError):
        validate(s, LABELS, 8)


def test_validate_idempotent():
    s = Sample(_img(), (AffordanceMask(np.zeros((32, 32)), GROUNDTRUTH_GRAY, 1),), 1, "a")
    assert validate(validate(s, LABELS, 8), LABELS, 8) is s


def test_image_range_and_shape():
    with pytest.raises(ValidationError):
        ImageTensor(np.full((4, 4, 3), 1.5))
    with pytest.raises(ValidationError):
        ImageTensor(np.zeros((4, 4)))


def test_scale_mask_examples():
    assert np.all(scale_mask(AffordanceMask(np.zeros((4, 4)), GROUNDTRUTH_GRAY, 0)).values == 0)
    assert np.all(scale_mask(AffordanceMask(np.full((4, 4), 255.0), GROUNDTRUTH_GRAY, 0)).values == 1)
    m = np.zeros((4, 4))
    m[1, 2] = 51
    out = scale_mask(AffordanceMask(m, GROUNDTRUTH_GRAY, 0))
    assert out.mode == SCALED
    assert out.values[1, 2] == 51 / 255 and abs(out.values[1, 2] - 0.2) < 1e-15
    assert out.values.sum() == out.values[1, 2]


@given(arrays(np.uint8, (5, 7)))
def test_scale_then_multiply_reproduces_gray(gray):
    out = scale_mask(AffordanceMask(gray.astype(np.float64), GROUNDTRUTH_GRAY, 0))
    assert np.array_equal(np.rint(out.values * 255), gray.astype(np.float64))
    assert np.array_equal(out.values * 255, gray.astype(np.float64))


def test_stack_masks_fills_absent_classes_with_zero():
    m = AffordanceMask(np.full((2, 2), 255.0), GROUNDTRUTH_GRAY, 1)
    out = stack_masks([m], 3, (2, 2))
    assert out.shape == (3, 2, 2)
    assert np.all(out[1] == 1) and np.all(out[0] == 0) and np.all(out[2] == 0)


def test_hyperparams_invariants():
    with pytest.raises(ValidationError):
        Hyperparams(iterations=0)
    with pytest.raises(ValidationError):
        Hyperparams(tau1=0.0)
    with pytest.raises(ValidationError):
        Hyperparams(lambda2=-1.0)
    h = Hyperparams()
    assert (h.tau1, h.tau2, h.lambda1, h.lambda2, h.lr) == (0.01, 0.01, 0.01, 1.0, 0.01)


def test_duplicate_mask_class_rejected():
    m = AffordanceMask(np.zeros((32, 32)), GROUNDTRUTH_GRAY, 0)
    with pytest.raises(ValidationError):
        validate(Sample(_img(), (m, m), 0, "a"), LABELS, 8)


def test_prompt_context_and_feature_map_shapes():
    ctx = PromptContext(np.zeros((4, 8)))
    assert ctx.length == 4
    with pytest.raises(ValidationError):
        PatchFeatureMap(np.zeros((4, 4)), np.zeros(16), (np.zeros((4, 4, 16)),))


@settings(max_examples=30)
@given(st.lists(st.text(min_size=1, max_size=5), min_size=1, max_size=4, unique=True))
def test_label_space_counts(names):
    ls = LabelSpace(tuple(names), ("obj",))
    assert ls.n_affordances == len(names) and ls.n_objects == 1
