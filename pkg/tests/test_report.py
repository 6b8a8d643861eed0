import numpy as np
import pytest

from marc.phantom import PhantomSpec, gen_phantom
from marc.report import evaluate_volumes, render_points_csv, render_report, slice_ssim


@pytest.fixture(scope="module")
def phantom():
    return gen_phantom(PhantomSpec(n_slices=3, seed=8))


def test_empty_report_is_header_only():
    assert render_report(None) == "# MARC evaluation report\nthreshold = 0.46\n"


def test_threshold_echoed():
    assert "threshold = 0.3\n" in render_report(None, threshold=0.3)


def test_identical_volume_gives_zero_differences(phantom):
    ref, lab = phantom
    res = evaluate_volumes(ref, {"denoised": ref.copy()}, lab)
    assert np.allclose(res.ssim["denoised"], 1.0)
    assert res.intensity["denoised"].mean_diff == 0 and res.contrast["denoised"].sd_diff == 0
    text = render_report(res)
    assert text.startswith("# MARC evaluation report\nthreshold = 0.46\n")
    assert "[bland-altman contrast]" in text
    assert text == render_report(evaluate_volumes(ref, {"denoised": ref.copy()}, lab))


def test_report_sections_and_points(phantom):
    ref, lab = phantom
    noisy = np.clip(ref + np.random.default_rng(0).normal(0, 0.05, ref.shape), 0, 1).astype(np.float32)
    res = evaluate_volumes(ref, {"artifact": noisy, "denoised": ref * 0.99}, lab)
    text = render_report(res)
    for section in ("[ssim]", "[bland-altman intensity]", "[bland-altman contrast]", "[contrast ratio]"):
        assert section in text
    assert "improved_slices = 3/3" in text
    assert len(res.ratios["reference"]) == 3 * 7
    rows = render_points_csv(res).splitlines()
    assert rows[0].startswith("analysis,image,slice,phase")
    assert len(rows) == 1 + 2 * (3 * 7 * 2) + 2 * (3 * 7)


def test_slice_ssim_shape(phantom):
    ref, _ = phantom
    assert slice_ssim(ref, ref).shape == (3,)


def test_label_shape_checked(phantom):
    ref, lab = phantom
    with pytest.raises(ValueError):
        evaluate_volumes(ref, {"x": ref}, lab[:2])
