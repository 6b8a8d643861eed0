import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from marc.metrics import bland_altman, contrast_ratio, roi_mean, ssim
from oracles import mean_sd, ssim_direct


def test_ssim_identity():
    x = np.random.default_rng(0).random((48, 48))
    assert abs(ssim(x, x) - 1.0) < 1e-12


def test_ssim_constant_images():
    # means 1 and 0, no variance: (c1 * c2) / ((1 + c1) * c2)
    assert ssim(np.ones((8, 8)), np.zeros((8, 8))) == pytest.approx(1e-4 / 1.0001, rel=1e-12)


def test_ssim_matches_direct_summation():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.random((48, 48)), rng.random((48, 48))
        assert abs(ssim(a, b) - ssim_direct(a, b)) < 1e-10


def test_ssim_data_range():
    rng = np.random.default_rng(2)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert ssim(255 * a, 255 * b, data_range=255) == pytest.approx(ssim(a, b), rel=1e-12)
    with pytest.raises(ValueError):
        ssim(a, b[:8])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 5), elements=st.floats(0, 1)), arrays(np.float64, (6, 5), elements=st.floats(0, 1)))
def test_ssim_symmetric_and_bounded(a, b):
    s = ssim(a, b)
    assert s == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1 - 1e-12 <= s <= 1 + 1e-12


def test_bland_altman_hand_case():
    rep = bland_altman([1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
    assert rep.diffs.tolist() == [0.0, 1.0, 2.0]
    assert rep.means.tolist() == [1.0, 1.5, 2.0]
    assert rep.mean_diff == 1.0 and rep.sd_diff == 1.0
    assert rep.limits == pytest.approx((1 - 1.96, 1 + 1.96))


def test_bland_altman_single_pair_and_errors():
    rep = bland_altman([2.0], [1.5])
    assert rep.sd_diff == 0.0 and rep.limits == (0.5, 0.5)
    with pytest.raises(ValueError):
        bland_altman([], [])
    with pytest.raises(ValueError):
        bland_altman([1, 2], [1])


def test_bland_altman_matches_oracle():
    rng = np.random.default_rng(3)
    x, y = rng.random(1000), rng.random(1000)
    rep = bland_altman(x, y)
    mu, sd = mean_sd([a - b for a, b in zip(x, y)])
    assert rep.mean_diff == pytest.approx(mu, abs=1e-14)
    assert rep.sd_diff == pytest.approx(sd, rel=1e-12)
    assert rep.limits[1] - rep.limits[0] == pytest.approx(2 * 1.96 * sd, rel=1e-12)


def test_bland_altman_subgroups():
    x = np.array([0.1, 0.2, 0.8, 0.9])
    y = np.array([0.1, 0.3, 0.7, 0.9])
    rep = bland_altman(x, y, subgroup_threshold=0.46)
    assert rep.subgroups["low"].n == 2 and rep.subgroups["high"].n == 2
    assert rep.subgroups["low"].mean_diff == pytest.approx(-0.05)
    assert rep.subgroups["high"].mean_diff == pytest.approx(0.05)
    rep = bland_altman(x, y, subgroup_threshold=5.0)
    assert rep.subgroups["high"] is None and rep.subgroups["low"].n == 4


def test_bland_altman_identical_inputs():
    x = np.random.default_rng(4).random(50)
    rep = bland_altman(x, x)
    assert rep.mean_diff == 0 and rep.sd_diff == 0


def test_roi_mean_and_contrast():
    img = np.array([[1.0, 2.0], [4.0, 8.0]])
    liver = np.array([[True, True], [False, False]])
    aorta = np.array([[False, False], [False, True]])
    assert roi_mean(img, liver) == 1.5
    assert contrast_ratio(img, liver, aorta) == 1.5 / 8.0
    assert contrast_ratio(3.7 * img, liver, aorta) == pytest.approx(1.5 / 8.0, rel=1e-15)


def test_roi_errors():
    img = np.ones((2, 2))
    none = np.zeros((2, 2), bool)
    some = np.eye(2, dtype=bool)
    with pytest.raises(ValueError):
        roi_mean(img, none)
    with pytest.raises(ValueError):
        roi_mean(img, np.ones((3, 3), bool))
    with pytest.raises(ValueError):
        contrast_ratio(img, some, some)
    with pytest.raises(ValueError):
        contrast_ratio(np.zeros((2, 2)), some, ~some)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_contrast_scale_invariance(k, seed):
    img = np.random.default_rng(seed).random((6, 6)) + 0.1
    liver = np.zeros((6, 6), bool)
    liver[:3] = True
    assert contrast_ratio(k * img, liver, ~liver) == pytest.approx(contrast_ratio(img, liver, ~liver), rel=1e-12)
