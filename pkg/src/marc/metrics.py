"""Image agreement statistics: global SSIM, Bland-Altman, ROI contrast."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOA_FACTOR = 1.96


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Structural similarity from whole-array statistics.

    Uses population (1/N) moments and the usual constants
    ``c1 = (0.01 L)**2``, ``c2 = (0.03 L)**2``. No sliding window.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    da, db = a - mu_a, b - mu_b
    var_a, var_b = np.mean(da * da), np.mean(db * db)
    cov = np.mean(da * db)
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(num / den)


@dataclass
class AgreementStats:
    n: int
    mean_diff: float
    sd_diff: float

    @property
    def lower(self) -> float:
        return self.mean_diff - LOA_FACTOR * self.sd_diff

    @property
    def upper(self) -> float:
        return self.mean_diff + LOA_FACTOR * self.sd_diff


def _stats(d: np.ndarray) -> AgreementStats | None:
    if d.size == 0:
        return None
    sd = float(np.std(d, ddof=1)) if d.size > 1 else 0.0
    return AgreementStats(int(d.size), float(np.mean(d)), sd)


@dataclass
class BlandAltmanReport:
    """Differences ``x - y`` against means ``(x + y) / 2``.

    Limits of agreement are ``mean_diff +- 1.96 * sd_diff`` with the sample
    (n - 1) standard deviation. With a threshold, points whose mean is below
    it form the ``low`` subgroup and the rest ``high``.
    """

    means: np.ndarray
    diffs: np.ndarray
    overall: AgreementStats
    threshold: float | None = None
    subgroups: dict[str, AgreementStats | None] = field(default_factory=dict)

    @property
    def mean_diff(self) -> float:
        return self.overall.mean_diff

    @property
    def sd_diff(self) -> float:
        return self.overall.sd_diff

    @property
    def limits(self) -> tuple[float, float]:
        return self.overall.lower, self.overall.upper


def bland_altman(x, y, subgroup_threshold: float | None = None) -> BlandAltmanReport:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size == 0:
        raise ValueError("Bland-Altman analysis needs at least one pair")
    d = x - y
    m = (x + y) / 2
    rep = BlandAltmanReport(m, d, _stats(d), subgroup_threshold)
    if subgroup_threshold is not None:
        low = m < subgroup_threshold
        rep.subgroups = {"low": _stats(d[low]), "high": _stats(d[~low])}
    return rep


def roi_mean(image: np.ndarray, mask: np.ndarray) -> float:
    image = np.asarray(image)
    mask = np.asarray(mask, dtype=bool)
    if image.shape != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {image.shape}")
    if not mask.any():
        raise ValueError("ROI mask is empty")
    return float(image[mask].astype(np.float64).mean())


def contrast_ratio(image: np.ndarray, liver: np.ndarray, aorta: np.ndarray) -> float:
    """Liver-to-aorta ratio of ROI means."""
    if np.any(np.asarray(liver, bool) & np.asarray(aorta, bool)):
        raise ValueError("liver and aorta ROIs overlap")
    a = roi_mean(image, aorta)
    if a == 0:
        raise ValueError("aorta ROI mean is zero")
    return roi_mean(image, liver) / a
