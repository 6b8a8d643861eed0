"""Volume-level evaluation and its plain-text report."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import BlandAltmanReport, bland_altman, contrast_ratio, roi_mean, ssim
from .phantom import AORTA, LIVER

DEFAULT_THRESHOLD = 0.46


@dataclass
class RoiPoint:
    slice: int
    phase: int
    region: str
    reference: float
    value: float


@dataclass
class EvaluationResults:
    threshold: float = DEFAULT_THRESHOLD
    n_slices: int = 0
    ssim: dict[str, np.ndarray] = field(default_factory=dict)
    intensity: dict[str, BlandAltmanReport] = field(default_factory=dict)
    contrast: dict[str, BlandAltmanReport] = field(default_factory=dict)
    ratios: dict[str, np.ndarray] = field(default_factory=dict)
    points: dict[str, list[RoiPoint]] = field(default_factory=dict)
    ratio_index: list[tuple[int, int]] = field(default_factory=list)  # (slice, phase) of each ratio


def slice_ssim(reference: np.ndarray, image: np.ndarray) -> np.ndarray:
    """Per-slice SSIM averaged over phases, for ``(phase, slice, H, W)`` volumes."""
    n_p, n_s = reference.shape[:2]
    return np.array([np.mean([ssim(reference[p, s], image[p, s]) for p in range(n_p)]) for s in range(n_s)])


def evaluate_volumes(
    reference: np.ndarray,
    images: dict[str, np.ndarray],
    labels: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
) -> EvaluationResults:
    """Compare each named volume against the reference.

    Intensities are liver and aorta ROI means of every (slice, phase);
    contrast is their ratio. Bland-Altman differences are reference minus
    image.
    """
    n_p, n_s = reference.shape[:2]
    if labels.shape != (n_s,) + reference.shape[2:]:
        raise ValueError(f"label volume {labels.shape} does not match reference {reference.shape}")
    res = EvaluationResults(threshold=threshold, n_slices=n_s)
    vols = {"reference": reference, **images}
    ratios: dict[str, list[float]] = {k: [] for k in vols}
    points: dict[str, list[RoiPoint]] = {k: [] for k in images}
    for s in range(n_s):
        liver, aorta = labels[s] == LIVER, labels[s] == AORTA
        if not liver.any() or not aorta.any():
            continue
        for p in range(n_p):
            res.ratio_index.append((s, p))
            for name, vol in vols.items():
                ratios[name].append(contrast_ratio(vol[p, s], liver, aorta))
            for name, vol in images.items():
                for region, mask in (("liver", liver), ("aorta", aorta)):
                    points[name].append(RoiPoint(s, p, region, roi_mean(reference[p, s], mask), roi_mean(vol[p, s], mask)))
    res.ratios = {k: np.array(v) for k, v in ratios.items()}
    res.points = points
    for name, vol in images.items():
        res.ssim[name] = slice_ssim(reference, vol)
        if points[name]:
            ref_i = [pt.reference for pt in points[name]]
            val_i = [pt.value for pt in points[name]]
            res.intensity[name] = bland_altman(ref_i, val_i, threshold)
            res.contrast[name] = bland_altman(res.ratios["reference"], res.ratios[name])
    return res


def _f(x: float | None) -> str:
    return "nan" if x is None else f"{x:.6f}"


def render_report(results: EvaluationResults | None, threshold: float = DEFAULT_THRESHOLD) -> str:
    """Deterministic text rendering; an empty result set yields the header alone."""
    if results is None:
        results = EvaluationResults(threshold=threshold)
    out = ["# MARC evaluation report", f"threshold = {results.threshold:g}"]
    if results.ssim:
        out += ["", f"[ssim] reference vs image, per-slice mean over phases, slices = {results.n_slices}"]
        out.append(f"{'image':<10} {'mean':>10} {'sd':>10} {'min':>10} {'max':>10}")
        for name, vals in results.ssim.items():
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            out.append(f"{name:<10} {_f(vals.mean()):>10} {_f(sd):>10} {_f(vals.min()):>10} {_f(vals.max()):>10}")
        if "artifact" in results.ssim and "denoised" in results.ssim:
            better = int(np.sum(results.ssim["denoised"] > results.ssim["artifact"]))
            out.append(f"improved_slices = {better}/{results.ssim['denoised'].size}")
    for title, table in (("intensity", results.intensity), ("contrast", results.contrast)):
        if not table:
            continue
        what = "liver and aorta ROI means" if title == "intensity" else "liver/aorta ratio"
        out += ["", f"[bland-altman {title}] reference - image, {what}"]
        out.append(f"{'image':<10} {'group':<8} {'n':>5} {'mean_diff':>10} {'sd':>10} {'lower':>10} {'upper':>10}")
        for name, rep in table.items():
            groups = [("all", rep.overall)]
            if rep.threshold is not None:
                groups += [("low", rep.subgroups["low"]), ("high", rep.subgroups["high"])]
            for group, st in groups:
                if st is None:
                    out.append(f"{name:<10} {group:<8} {0:>5} {'nan':>10} {'nan':>10} {'nan':>10} {'nan':>10}")
                    continue
                out.append(
                    f"{name:<10} {group:<8} {st.n:>5} {_f(st.mean_diff):>10} {_f(st.sd_diff):>10} "
                    f"{_f(st.lower):>10} {_f(st.upper):>10}"
                )
    if results.ratios:
        out += ["", "[contrast ratio] liver/aorta"]
        out.append(f"{'image':<10} {'mean':>10} {'sd':>10}")
        for name, vals in results.ratios.items():
            if vals.size == 0:
                continue
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            out.append(f"{name:<10} {_f(vals.mean()):>10} {_f(sd):>10}")
    return "\n".join(out) + "\n"


def render_points_csv(results: EvaluationResults) -> str:
    """Bland-Altman points for external plotting."""
    lines = ["analysis,image,slice,phase,region,reference,value,mean,diff"]
    for name, pts in results.points.items():
        for pt in pts:
            lines.append(
                f"intensity,{name},{pt.slice},{pt.phase},{pt.region},{pt.reference!r},{pt.value!r},"
                f"{(pt.reference + pt.value) / 2!r},{pt.reference - pt.value!r}"
            )
    for name, rep in results.contrast.items():
        ref = results.ratios["reference"]
        val = results.ratios[name]
        for i, ((sl, ph), r, v) in enumerate(zip(results.ratio_index, ref, val)):
            lines.append(f"contrast,{name},{sl},{ph},liver/aorta,{float(r)!r},{float(v)!r},{float(rep.means[i])!r},{float(rep.diffs[i])!r}")
    return "\n".join(lines) + "\n"
