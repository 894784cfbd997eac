import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from flowseg.core import (
    IGNORE_VALUE,
    ClassSpace,
    FlowField,
    LabelMap,
    LogitVolume,
    ScalarPlane,
    ValidityMask,
    apply_mask,
    make_label_map,
)
from flowseg.errors import (
    DataError,
    InvalidLabelError,
    ParameterError,
    ShapeError,
)


class TestClassSpace:
    def test_bounds(self):
        assert ClassSpace(1).num_classes == 1
        assert ClassSpace(254).num_classes == 254
        with pytest.raises(ParameterError):
            ClassSpace(0)
        with pytest.raises(ParameterError):
            ClassSpace(255)

    def test_ignore_value_is_fixed(self):
        with pytest.raises(ParameterError):
            ClassSpace(10, ignore_value=254)


class TestMakeLabelMap:
    def test_constant_fill(self):
        lm = make_label_map(2, 2, 0, ClassSpace(3))
        assert lm.shape == (2, 2)
        assert np.all(lm.data == 0)

    def test_ignore_fill(self):
        lm = make_label_map(1, 1, IGNORE_VALUE, ClassSpace(3))
        assert lm.data[0, 0] == IGNORE_VALUE

    def test_out_of_range_fill(self):
        with pytest.raises(InvalidLabelError):
            make_label_map(2, 2, 7, ClassSpace(3))

    def test_bad_dimensions(self):
        with pytest.raises(ShapeError):
            make_label_map(0, 2, 0, ClassSpace(3))


class TestLabelMap:
    def test_rejects_out_of_range_labels(self):
        with pytest.raises(InvalidLabelError):
            LabelMap(np.array([[0, 5]], dtype=np.uint8), ClassSpace(3))

    def test_rejects_wrapping_values(self):
        with pytest.raises(InvalidLabelError):
            LabelMap(np.array([[300]]), ClassSpace(3))
        with pytest.raises(InvalidLabelError):
            LabelMap(np.array([[-1]]), ClassSpace(3))

    def test_rejects_float_labels(self):
        with pytest.raises(InvalidLabelError):
            LabelMap(np.array([[1.5]]), ClassSpace(3))

    def test_immutable(self):
        lm = make_label_map(2, 2, 1, ClassSpace(3))
        with pytest.raises(ValueError):
            lm.data[0, 0] = 2


class TestFiniteness:
    def test_flow_rejects_nan(self):
        with pytest.raises(DataError):
            FlowField(np.array([[np.nan]]), np.array([[0.0]]))

    def test_flow_rejects_inf(self):
        with pytest.raises(DataError):
            FlowField(np.array([[0.0]]), np.array([[np.inf]]))

    def test_plane_rejects_nan(self):
        with pytest.raises(DataError):
            ScalarPlane(np.array([[np.nan]]))

    def test_logits_reject_nan(self):
        with pytest.raises(DataError):
            LogitVolume(np.full((1, 1, 2), np.nan), ClassSpace(2))

    def test_logit_channels_must_match_class_space(self):
        with pytest.raises(ShapeError):
            LogitVolume(np.zeros((2, 2, 3)), ClassSpace(2))


class TestApplyMask:
    def test_identity_mask(self):
        lm = LabelMap(np.array([[0, 1]], dtype=np.uint8), ClassSpace(3))
        out = apply_mask(lm, ValidityMask(np.array([[True, True]])))
        assert np.array_equal(out.data, [[0, 1]])

    def test_all_invalid(self):
        lm = LabelMap(np.array([[0, 1]], dtype=np.uint8), ClassSpace(3))
        out = apply_mask(lm, ValidityMask(np.array([[False, False]])))
        assert np.array_equal(out.data, [[255, 255]])

    def test_per_pixel_select(self):
        lm = LabelMap(np.array([[0, 1, 2]], dtype=np.uint8), ClassSpace(3))
        out = apply_mask(lm, ValidityMask(np.array([[True, False, True]])))
        assert np.array_equal(out.data, [[0, 255, 2]])

    def test_shape_mismatch(self):
        lm = make_label_map(2, 2, 0, ClassSpace(3))
        with pytest.raises(ShapeError):
            apply_mask(lm, ValidityMask.full(3, 2))

    @given(
        labels=hnp.arrays(
            np.uint8, (4, 5), elements=st.sampled_from([0, 1, 2, 3, 255])
        ),
        mask=hnp.arrays(bool, (4, 5)),
    )
    def test_idempotent(self, labels, mask):
        lm = LabelMap(labels, ClassSpace(4))
        vm = ValidityMask(mask)
        once = apply_mask(lm, vm)
        twice = apply_mask(once, vm)
        assert np.array_equal(once.data, twice.data)
