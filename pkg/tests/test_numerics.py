import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xmodal.errors import ArtifactError
from xmodal.numerics import (
    DimensionError,
    RngStream,
    ScaleMask,
    WaveletPyramid,
    apply_scale_mask,
    check_image,
    haar_dwt2,
    haar_idwt2,
    project_l2,
    project_linf,
    read_mmt,
    write_mmt,
)

finite = st.floats(-10, 10, allow_nan=False, width=64)


def block_mean_oracle(x, block):
    """Explicit per-block averaging, written with loops on purpose."""
    out = np.empty_like(x)
    h, w, _ = x.shape
    for r in range(0, h, block):
        for c in range(0, w, block):
            out[r:r + block, c:c + block] = x[r:r + block, c:c + block].mean(axis=(0, 1))
    return out


# -- Haar ------------------------------------------------------------------


def test_hand_computed_block():
    pyr = haar_dwt2(np.array([[1.0, 0.0], [0.0, 0.0]]), levels=1)
    assert pyr.approx.item() == 0.5
    lh, hl, hh = pyr.details[0]
    assert (lh.item(), hl.item(), hh.item()) == (0.5, 0.5, 0.5)


def test_hand_computed_block_signs():
    # a b / c d = 1 2 / 3 4
    pyr = haar_dwt2(np.array([[1.0, 2.0], [3.0, 4.0]]), levels=1)
    lh, hl, hh = (b.item() for b in pyr.details[0])
    assert pyr.approx.item() == 5.0
    assert (lh, hl, hh) == (-2.0, -1.0, 0.0)


def test_constant_image_has_no_detail():
    pyr = haar_dwt2(np.full((64, 64, 3), 0.5), levels=3)
    for bands in pyr.details:
        for b in bands:
            assert np.all(b == 0.0)
    assert np.all(pyr.approx == pyr.approx.flat[0])
    assert pyr.approx.shape == (8, 8, 3)


def test_round_trip_random():
    x = np.random.default_rng(0).random((64, 64, 3))
    assert np.max(np.abs(haar_idwt2(haar_dwt2(x)) - x)) <= 1e-5


def test_zero_pyramid_synthesises_zero():
    pyr = haar_dwt2(np.zeros((16, 16, 1)), levels=2)
    assert np.all(haar_idwt2(pyr) == 0.0)


@pytest.mark.parametrize("levels", [1, 2, 3])
def test_detail_free_synthesis_is_block_mean(levels):
    x = np.random.default_rng(levels).random((32, 32, 3))
    pyr = apply_scale_mask(haar_dwt2(x, levels), ScaleMask(True, (False,) * levels))
    np.testing.assert_allclose(haar_idwt2(pyr), block_mean_oracle(x, 2 ** levels), atol=1e-12)


def test_indivisible_dims_name_axis():
    with pytest.raises(DimensionError, match="width"):
        haar_dwt2(np.zeros((16, 18, 1)), levels=2)


def test_idwt_shape_mismatch():
    pyr = haar_dwt2(np.zeros((16, 16, 1)), levels=2)
    pyr.details[1] = tuple(np.zeros((3, 3, 1)) for _ in range(3))
    with pytest.raises(DimensionError):
        haar_idwt2(pyr)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (16, 16, 3), elements=finite), st.integers(1, 4))
def test_round_trip_and_energy_property(x, levels):
    pyr = haar_dwt2(x, levels)
    assert np.max(np.abs(haar_idwt2(pyr) - x), initial=0.0) <= 1e-5
    energy = sum(float(np.sum(c ** 2)) for c in pyr.coefficients())
    assert energy == pytest.approx(float(np.sum(x ** 2)), rel=1e-4, abs=1e-9)


def test_check_image_rejects():
    with pytest.raises(DimensionError):
        check_image(np.zeros((12, 16, 3)))
    with pytest.raises(DimensionError):
        check_image(np.zeros((16, 16, 2)))
    with pytest.raises(ValueError):
        check_image(np.full((8, 8, 1), np.nan))
    with pytest.raises(ValueError):
        check_image(np.full((8, 8, 1), 2.0), bounded=True)


# -- ScaleMask ---------------------------------------------------------------


def test_keep_all_mask_is_identity():
    pyr = haar_dwt2(np.random.default_rng(1).random((32, 32, 3)))
    masked = apply_scale_mask(pyr, ScaleMask.keep_all(3))
    for a, b in zip(pyr.coefficients(), masked.coefficients()):
        assert np.array_equal(a, b)


def test_dropping_approx_annihilates_constant():
    pyr = haar_dwt2(np.full((32, 32, 3), 0.7))
    assert np.all(haar_idwt2(apply_scale_mask(pyr, ScaleMask())) == 0.0)


def test_level_weights_scale_details():
    pyr = haar_dwt2(np.random.default_rng(2).random((16, 16, 1)), levels=2)
    masked = apply_scale_mask(pyr, ScaleMask(True, (True, True), (2.0, 0.5)))
    np.testing.assert_array_equal(masked.details[0][0], 2.0 * pyr.details[0][0])
    np.testing.assert_array_equal(masked.details[1][2], 0.5 * pyr.details[1][2])
    np.testing.assert_array_equal(masked.approx, pyr.approx)


def test_mask_rejects_empty_and_mismatch():
    with pytest.raises(ValueError):
        ScaleMask(False, (False, False, False))
    with pytest.raises(ValueError):
        apply_scale_mask(haar_dwt2(np.zeros((16, 16, 1)), levels=2), ScaleMask())


# -- projections -------------------------------------------------------------


def test_linf_examples():
    assert project_linf(np.array([0.9]), 8 / 255)[0] == pytest.approx(0.03137, abs=1e-5)
    assert project_linf(np.array([-1.0]), 0.1)[0] == -0.1
    x = np.full(5, 0.05)
    assert np.array_equal(project_linf(x, 0.1), x)


def test_l2_examples():
    assert np.all(project_l2(np.zeros(4), 0.5) == 0.0)
    v = np.array([0.6, 0.8])
    out = project_l2(v, 0.5)
    assert np.linalg.norm(out) == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(out / np.linalg.norm(out), v)
    assert np.array_equal(project_l2(v, 2.0), v)


def test_projection_rejects_bad_eps():
    with pytest.raises(ValueError):
        project_linf(np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        project_l2(np.zeros(2), -1.0)


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.float64, st.integers(1, 40), elements=finite),
    st.floats(1e-3, 5.0),
    st.sampled_from([np.float32, np.float64]),
)
def test_projection_properties(x, eps, dtype):
    x = x.astype(dtype)
    p = project_linf(x, eps)
    assert p.dtype == x.dtype
    assert np.max(np.abs(p), initial=0.0) <= eps
    assert np.array_equal(project_linf(p, eps), p)
    q = project_l2(x, eps)
    assert np.linalg.norm(q) <= eps
    assert np.array_equal(project_l2(q, eps), q)
    if np.linalg.norm(x) > 0 and np.linalg.norm(q) > 0:
        cos = float(np.dot(x.astype(np.float64), q) / (np.linalg.norm(x.astype(np.float64)) * np.linalg.norm(q.astype(np.float64))))
        assert cos == pytest.approx(1.0, abs=1e-6)


# -- RngStream ---------------------------------------------------------------


def test_rng_stream_frozen_values():
    # Philox keyed by a blake2b hash, so these are platform independent
    assert RngStream(0, "x").generator().integers(0, 2 ** 31, 4).tolist() == [
        347577292, 1673537972, 8779020, 2102226983,
    ]
    assert RngStream(7, "probe").child("a").generator().uniform() == 0.45157435226230425


def test_rng_stream_labels_independent():
    a = RngStream(1, "a").generator().random(8)
    b = RngStream(1, "b").generator().random(8)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, RngStream(1, "a").generator().random(8))


# -- MMT1 --------------------------------------------------------------------


def test_mmt_round_trip(tmp_path):
    x = np.random.default_rng(3).normal(size=(8, 4, 3)).astype(np.float32)
    write_mmt(tmp_path / "t.mmt", x)
    y = read_mmt(tmp_path / "t.mmt")
    assert y.dtype == np.float32
    assert np.array_equal(x, y)
    raw = (tmp_path / "t.mmt").read_bytes()
    assert raw[:4] == b"MMT1"
    assert int.from_bytes(raw[4:8], "little") == 8


def test_mmt_corruption(tmp_path):
    path = tmp_path / "t.mmt"
    write_mmt(path, np.zeros((2, 2, 1)))
    raw = path.read_bytes()
    path.write_bytes(b"X" + raw[1:])
    with pytest.raises(ArtifactError, match="magic"):
        read_mmt(path)
    path.write_bytes(raw[:-1])
    with pytest.raises(ArtifactError):
        read_mmt(path)
    path.write_bytes(raw[:6])
    with pytest.raises(ArtifactError, match="truncated"):
        read_mmt(path)


def test_pyramid_copy_is_deep():
    pyr = haar_dwt2(np.ones((8, 8, 1)), levels=1)
    cp = pyr.copy()
    cp.approx[:] = 0
    assert isinstance(cp, WaveletPyramid)
    assert np.all(pyr.approx != 0)
