"""Patch-pair extraction, normalization and K-fold splits.

Volumes are ``(phase, slice, H, W)``; patches are channel-first
``(phase, 48, 48)`` so that a stack of them is the ``N x 7 x 48 x 48``
layout the network consumes.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mrt import read_mrt, write_mrt
from .numerics import Rng

PATCH_SIZE = 48
BACKGROUND_LEVEL = 0.05
BACKGROUND_FRACTION = 0.95
DRAW_BUDGET = 100


@dataclass
class PatchPair:
    artifact: np.ndarray
    residual: np.ndarray
    location: tuple[int, int, int]  # (slice, row, col) of the top-left corner

    @property
    def reference(self) -> np.ndarray:
        return self.artifact - self.residual


@dataclass
class PatchSet:
    """Stacked patch pairs, ``artifact`` and ``residual`` of shape (N, C, h, w)."""

    artifact: np.ndarray
    residual: np.ndarray

    def __post_init__(self):
        if self.artifact.shape != self.residual.shape:
            raise ValueError(f"shape mismatch {self.artifact.shape} vs {self.residual.shape}")
        if self.artifact.ndim != 4:
            raise ValueError(f"expected (N, C, h, w) stacks, got {self.artifact.shape}")

    def __len__(self) -> int:
        return self.artifact.shape[0]

    @property
    def reference(self) -> np.ndarray:
        return self.artifact - self.residual

    def subset(self, idx) -> "PatchSet":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)
        return PatchSet(self.artifact[idx], self.residual[idx])

    @classmethod
    def from_pairs(cls, pairs: list[PatchPair]) -> "PatchSet":
        return cls(
            np.stack([p.artifact for p in pairs]),
            np.stack([p.residual for p in pairs]),
        )


def normalize_volume(artifact: np.ndarray, reference: np.ndarray):
    """Divide both volumes by the artifact maximum; returns ``(art, ref, scale)``."""
    scale = float(np.max(artifact))
    if not scale > 0:
        raise ValueError("artifact volume has no positive values")
    s = np.asarray(scale, dtype=artifact.dtype)
    return artifact / s, reference / s, scale


def denormalize(volume: np.ndarray, scale: float) -> np.ndarray:
    return volume * np.asarray(scale, dtype=volume.dtype)


def is_background(patch: np.ndarray, level: float = BACKGROUND_LEVEL, fraction: float = BACKGROUND_FRACTION) -> bool:
    """True when at least ``fraction`` of the voxels fall below ``level``."""
    return bool(np.mean(patch < level) >= fraction)


def extract_patches(
    reference: np.ndarray,
    artifact: np.ndarray,
    count: int,
    seed: int,
    size: int = PATCH_SIZE,
    n_phases: int = 7,
) -> list[PatchPair]:
    """Randomly crop ``count`` aligned (artifact, residual) patch pairs.

    Corners come from one seeded stream: a slice, then a row and column
    uniform over valid positions. Candidates whose artifact patch is
    background are skipped. At most ``DRAW_BUDGET * count`` candidates are
    drawn before giving up.
    """
    reference = np.asarray(reference)
    artifact = np.asarray(artifact)
    if reference.shape != artifact.shape:
        raise ValueError(f"shape mismatch {reference.shape} vs {artifact.shape}")
    if reference.ndim != 4:
        raise ValueError(f"expected (phase, slice, H, W) volumes, got {reference.shape}")
    n_p, n_s, h, w = reference.shape
    if n_p != n_phases:
        raise ValueError(f"expected {n_phases} phases, got {n_p}")
    if h < size or w < size:
        raise ValueError(f"volume {h}x{w} is smaller than the {size}x{size} patch")
    if count < 1:
        raise ValueError("count must be positive")
    rng = Rng(seed)
    budget = DRAW_BUDGET * count
    pairs: list[PatchPair] = []
    drawn = 0
    while len(pairs) < count:
        if drawn >= budget:
            raise RuntimeError(
                f"background rejection exhausted {budget} draws with only {len(pairs)} of {count} patches"
            )
        block = min(count, budget - drawn)
        cs = rng.integers(0, n_s, size=block)
        rows = rng.integers(0, h - size + 1, size=block)
        cols = rng.integers(0, w - size + 1, size=block)
        drawn += block
        for s, r, c in zip(cs, rows, cols):
            art = artifact[:, s, r : r + size, c : c + size]
            if is_background(art):
                continue
            ref = reference[:, s, r : r + size, c : c + size]
            pairs.append(PatchPair(art.copy(), art - ref, (int(s), int(r), int(c))))
            if len(pairs) == count:
                break
    return pairs


@dataclass
class FoldAssignment:
    k: int
    folds: np.ndarray  # fold index of each sample

    def validation(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.folds == i)

    def training(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.folds != i)

    def sizes(self) -> list[int]:
        return np.bincount(self.folds, minlength=self.k).tolist()


def kfold_split(n: int, k: int, seed: int) -> FoldAssignment:
    """Seeded permutation cut into k folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError(f"K must be at least 2, got {k}")
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    perm = Rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    start = 0
    for i, sz in enumerate(sizes):
        folds[perm[start : start + sz]] = i
        start += sz
    return FoldAssignment(k, folds)


# --- on-disk bundle -------------------------------------------------------

ARTIFACT_FILE = "patches_artifact.mrt"
RESIDUAL_FILE = "patches_residual.mrt"
META_FILE = "meta.txt"


def file_sha256(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class DatasetBundle:
    patches: PatchSet
    meta: dict[str, str] = field(default_factory=dict)


def write_bundle(directory: str | os.PathLike, patches: PatchSet, meta: dict) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_mrt(d / ARTIFACT_FILE, np.ascontiguousarray(patches.artifact, dtype=np.float32))
    write_mrt(d / RESIDUAL_FILE, np.ascontiguousarray(patches.residual, dtype=np.float32))
    lines = [f"count = {len(patches)}"]
    lines += [f"{k} = {v}" for k, v in meta.items() if k != "count"]
    (d / META_FILE).write_text("\n".join(lines) + "\n")


def read_meta(path: str | os.PathLike) -> dict[str, str]:
    meta = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"malformed meta line: {line!r}")
        meta[key.strip()] = value.strip()
    return meta


def read_bundle(directory: str | os.PathLike) -> DatasetBundle:
    d = Path(directory)
    for name in (ARTIFACT_FILE, RESIDUAL_FILE, META_FILE):
        if not (d / name).exists():
            raise FileNotFoundError(f"dataset bundle is missing {d / name}")
    patches = PatchSet(read_mrt(d / ARTIFACT_FILE), read_mrt(d / RESIDUAL_FILE))
    meta = read_meta(d / META_FILE)
    if "count" in meta and int(meta["count"]) != len(patches):
        raise ValueError(f"meta count {meta['count']} disagrees with {len(patches)} stored patches")
    return DatasetBundle(patches, meta)
