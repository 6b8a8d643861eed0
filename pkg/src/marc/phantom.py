"""Multi-phase abdominal phantoms standing in for breath-hold reference scans.

Each axial slice holds an elliptical body with a bright subcutaneous fat
ring, a textured liver on the image left, a small aorta disc anterior to the
spine and optional hypervascular lesions. Region intensities follow
per-phase enhancement curves (pre-contrast, arterial, portal-venous, late).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .numerics import Rng

BACKGROUND, BODY, FAT, LIVER, AORTA, LESION = range(6)
LABELS = {
    "background": BACKGROUND,
    "body": BODY,
    "fat": FAT,
    "liver": LIVER,
    "aorta": AORTA,
    "lesion": LESION,
}


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 128
    width: int = 112
    n_phases: int = 7
    n_slices: int = 8
    seed: int = 0
    aorta_curve: tuple[float, ...] = (0.20, 0.55, 0.95, 0.85, 0.70, 0.60, 0.50)
    liver_curve: tuple[float, ...] = (0.30, 0.33, 0.40, 0.50, 0.56, 0.58, 0.58)
    lesion_curve: tuple[float, ...] = (0.25, 0.45, 0.75, 0.60, 0.45, 0.38, 0.32)
    body_curve: tuple[float, ...] = (0.25, 0.26, 0.28, 0.30, 0.31, 0.31, 0.31)
    fat_level: float = 0.85
    texture: float = 0.06
    n_lesions: int = 2

    def __post_init__(self):
        if self.height < 64 or self.width < 64:
            raise ValueError(f"phantom must be at least 64x64, got {self.height}x{self.width}")
        if self.n_phases < 1 or self.n_slices < 1:
            raise ValueError("n_phases and n_slices must be positive")
        for name in ("aorta_curve", "liver_curve", "lesion_curve", "body_curve"):
            curve = getattr(self, name)
            if len(curve) != self.n_phases:
                raise ValueError(f"{name} has {len(curve)} entries, expected {self.n_phases}")
            if min(curve) < 0 or max(curve) > 1:
                raise ValueError(f"{name} values must lie in [0, 1]")


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _slice_labels(spec: PhantomSpec, z: float, rng: Rng) -> np.ndarray:
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    jit = lambda s: rng.uniform(-s, s)  # noqa: E731
    taper = 1.0 - 0.25 * z * z

    cy, cx = h * (0.5 + jit(0.01)), w * (0.5 + jit(0.01))
    ry, rx = h * 0.30 * taper * (1 + jit(0.03)), w * 0.44 * taper * (1 + jit(0.03))
    thick = max(3.0, 0.05 * min(h, w))

    labels = np.zeros((h, w), dtype=np.int64)
    body = _ellipse(yy, xx, cy, cx, ry, rx)
    labels[body] = FAT
    labels[_ellipse(yy, xx, cy, cx, ry - thick, rx - thick)] = BODY

    # liver on the image left (patient right), shrinking toward the caudal end
    l_scale = max(0.35, 1.0 - 0.6 * max(z, 0.0))
    ly, lx = cy - 0.10 * ry + jit(1.0), cx - 0.42 * rx + jit(1.0)
    lry, lrx = 0.62 * (ry - thick) * l_scale, 0.50 * (rx - thick) * l_scale
    liver = _ellipse(yy, xx, ly, lx, lry, lrx) & (labels == BODY)
    labels[liver] = LIVER

    for _ in range(spec.n_lesions):
        r = rng.uniform(0.06, 0.12) * min(lry, lrx)
        oy, ox = rng.uniform(-0.5, 0.5) * lry, rng.uniform(-0.5, 0.5) * lrx
        lesion = _ellipse(yy, xx, ly + oy, lx + ox, r, r) & liver
        labels[lesion] = LESION

    ar = max(2.5, 0.045 * min(h, w))
    ay, ax = cy + 0.35 * ry + jit(0.5), cx + 0.08 * rx + jit(0.5)
    labels[_ellipse(yy, xx, ay, ax, ar, ar) & (labels == BODY)] = AORTA
    return labels


def gen_phantom(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Build a ``(phase, slice, H, W)`` float32 volume and ``(slice, H, W)`` labels.

    Label values are the module constants ``BACKGROUND`` ... ``LESION``.
    """
    n_p, n_s, h, w = spec.n_phases, spec.n_slices, spec.height, spec.width
    volume = np.zeros((n_p, n_s, h, w), dtype=np.float64)
    labels = np.zeros((n_s, h, w), dtype=np.int64)
    curves = {
        BODY: spec.body_curve,
        LIVER: spec.liver_curve,
        AORTA: spec.aorta_curve,
        LESION: spec.lesion_curve,
    }
    for s in range(n_s):
        rng = Rng.derive(spec.seed, s)
        z = 0.0 if n_s == 1 else (s / (n_s - 1)) - 0.5
        lab = _slice_labels(spec, z, rng)
        labels[s] = lab
        if spec.texture > 0:
            noise = gaussian_filter(rng.normal(size=(h, w)), sigma=2.0)
            noise *= spec.texture / max(noise.std(), 1e-12)
        else:
            noise = np.zeros((h, w))
        tex = np.where((lab == LIVER) | (lab == BODY), 1.0 + noise, 1.0)
        for p in range(n_p):
            img = np.zeros((h, w))
            img[lab == FAT] = spec.fat_level
            for region, curve in curves.items():
                img[lab == region] = curve[p]
            volume[p, s] = img * tex
    return np.clip(volume, 0.0, 1.0).astype(np.float32), labels


def region_mask(labels: np.ndarray, region: str | int) -> np.ndarray:
    code = LABELS[region] if isinstance(region, str) else int(region)
    return labels == code
