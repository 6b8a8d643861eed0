"""Respiratory ghosting simulation in Cartesian k-space.

A magnitude image is given a smooth background B0 phase, transformed to
k-space, and every phase-encoding (PE) line ``m`` is multiplied by
``exp(-1j * phi[m])``. Rigid anterior-posterior motion of ``d`` pixels
during line ``m`` corresponds to ``phi[m] = 2*pi*m*d / n_pe``, the Fourier
shift factor, so constant ``d`` on every line reproduces an exact circular
shift of the image.

Arrays are indexed ``(PE, RO)``: rows are phase-encoding, columns readout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, centered_index, fft2c, ifft2c

PERIODIC = "periodic"
RANDOM = "random"

# Parameter ranges of the randomly drawn corruption realizations.
DELTA_MAX = 20.0
ALPHA_RANGE = (0.1, 5.0)
BETA_RANGE = (0.0, math.pi / 4)
KY0_RANGE = (math.pi / 10, math.pi / 2)
LINE_FRACTION_RANGE = (0.10, 0.50)
B0_PEAK_TO_PEAK = 8.8


@dataclass(frozen=True)
class PhaseErrorSpec:
    """One realization of the per-line phase error.

    ``delta_max`` is the motion amplitude in pixels. For the periodic kind it
    scales the sine directly; for the random kind each corrupted line draws
    its own displacement uniformly in ``[0, delta_max]``.
    """

    kind: str = PERIODIC
    delta_max: float = 0.0
    alpha: float = 0.3
    beta: float = 0.0
    ky0: float = math.pi / 4
    line_fraction: float = 0.3
    scan_seconds: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (PERIODIC, RANDOM):
            raise ValueError(f"kind must be 'periodic' or 'random', got {self.kind!r}")
        if not 0.0 <= self.delta_max <= DELTA_MAX:
            raise ValueError(f"delta_max must be in [0, {DELTA_MAX}], got {self.delta_max}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not 0.0 <= self.ky0 <= math.pi:
            raise ValueError(f"ky0 must be in [0, pi], got {self.ky0}")
        lo, hi = LINE_FRACTION_RANGE
        if not lo <= self.line_fraction <= hi:
            raise ValueError(f"line_fraction must be in [{lo}, {hi}], got {self.line_fraction}")
        if self.scan_seconds <= 0:
            raise ValueError("scan_seconds must be positive")


@dataclass(frozen=True)
class B0FieldSpec:
    max_order: int = 3
    peak_to_peak_rad: float = B0_PEAK_TO_PEAK
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.max_order <= 3:
            raise ValueError(f"max_order must be in [0, 3], got {self.max_order}")
        if not 0.0 <= self.peak_to_peak_rad <= B0_PEAK_TO_PEAK:
            raise ValueError(
                f"peak_to_peak_rad must be in [0, {B0_PEAK_TO_PEAK}], got {self.peak_to_peak_rad}"
            )


def gen_b0_field(spec: B0FieldSpec, shape: tuple[int, int]) -> np.ndarray:
    """Random polynomial phase map (radians), zero mean.

    Coefficients of every monomial ``x**i * y**j`` with ``i + j <= max_order``
    are uniform in [-1, 1] on coordinates normalized to [-1, 1]; the result is
    then rescaled to a peak-to-peak value drawn uniformly in
    ``[0, peak_to_peak_rad]``.
    """
    if len(shape) != 2:
        raise ValueError(f"shape must be 2-D, got {shape}")
    ny, nx = shape
    rng = Rng(spec.seed)
    y = np.linspace(-1.0, 1.0, ny)[:, None]
    x = np.linspace(-1.0, 1.0, nx)[None, :]
    field = np.zeros((ny, nx))
    for i in range(spec.max_order + 1):
        for j in range(spec.max_order + 1 - i):
            field = field + rng.uniform(-1.0, 1.0) * x**i * y**j
    target = rng.uniform(0.0, spec.peak_to_peak_rad)
    field -= field.mean()
    ptp = field.max() - field.min()
    if ptp > 0:
        field *= target / ptp
    return field


def periodic_phase_error(n_pe: int, spec: PhaseErrorSpec) -> np.ndarray:
    """Sinusoidal phase train, zero inside the delay region ``|m| < m0``.

    Line ``m`` is acquired at ``t = |m| / (n_pe/2) * scan_seconds`` (centric
    order), so ``alpha`` is a frequency in Hz.
    """
    if spec.kind != PERIODIC:
        raise ValueError(f"spec kind is {spec.kind!r}, expected 'periodic'")
    if n_pe < 2:
        raise ValueError(f"need at least 2 phase-encoding lines, got {n_pe}")
    m = centered_index(n_pe).astype(np.float64)
    half = n_pe / 2
    m0 = spec.ky0 / math.pi * half
    t = np.abs(m) / half * spec.scan_seconds
    phi = 2 * math.pi * m / n_pe * spec.delta_max * np.sin(2 * math.pi * spec.alpha * t + spec.beta)
    phi[np.abs(m) < m0] = 0.0
    return phi


def random_phase_error(n_pe: int, spec: PhaseErrorSpec) -> np.ndarray:
    """Line-by-line random displacements on a random subset of outer lines.

    Lines with ``|m| < n_pe / 20`` (``|k_y| < pi/10``) are never touched. Of
    the remaining lines, ``round(line_fraction * eligible)`` are picked
    without replacement, each with displacement uniform in ``[0, delta_max]``.
    """
    if spec.kind != RANDOM:
        raise ValueError(f"spec kind is {spec.kind!r}, expected 'random'")
    if n_pe < 20:
        raise ValueError(f"random pattern needs at least 20 phase-encoding lines, got {n_pe}")
    m = centered_index(n_pe)
    eligible = np.flatnonzero(np.abs(m) >= n_pe / 20)
    n_el = eligible.size
    lo, hi = LINE_FRACTION_RANGE
    k = int(round(spec.line_fraction * n_el))
    k = min(max(k, math.ceil(lo * n_el)), math.floor(hi * n_el))
    rng = Rng(spec.seed)
    picked = np.sort(eligible[rng.choice(n_el, k)])
    shift = rng.uniform(0.0, spec.delta_max, size=k)
    phi = np.zeros(n_pe)
    phi[picked] = 2 * math.pi * m[picked] / n_pe * shift
    return phi


def phase_error(n_pe: int, spec: PhaseErrorSpec) -> np.ndarray:
    if spec.kind == PERIODIC:
        return periodic_phase_error(n_pe, spec)
    return random_phase_error(n_pe, spec)


def corrupt_kspace(kspace: np.ndarray, phase_train: np.ndarray, axis: int = 0) -> np.ndarray:
    """Multiply every sample on PE line ``m`` by ``exp(-1j * phase_train[m])``."""
    kspace = np.asarray(kspace)
    phase_train = np.asarray(phase_train, dtype=np.float64)
    if phase_train.ndim != 1 or phase_train.size != kspace.shape[axis]:
        raise ValueError(
            f"phase train length {phase_train.size} does not match PE dimension {kspace.shape[axis]}"
        )
    factor = np.exp(-1j * phase_train).astype(kspace.dtype if np.iscomplexobj(kspace) else np.complex128)
    shape = [1] * kspace.ndim
    shape[axis] = -1
    return kspace * factor.reshape(shape)


def dixon_combine(s_in: np.ndarray, s_out: np.ndarray) -> np.ndarray:
    """Water signal from in-phase and out-of-phase signals: their average."""
    s_in = np.asarray(s_in)
    s_out = np.asarray(s_out)
    if s_in.shape != s_out.shape:
        raise ValueError(f"shape mismatch: {s_in.shape} vs {s_out.shape}")
    return (s_in + s_out) / 2


def corrupted_kspace(
    reference: np.ndarray,
    b0: B0FieldSpec | None,
    err: PhaseErrorSpec,
    axis: int = 0,
) -> np.ndarray:
    """k-space of ``reference * exp(1j * b0)`` with the phase-error train applied."""
    reference = np.asarray(reference)
    if reference.ndim != 2:
        raise ValueError(f"reference must be 2-D, got shape {reference.shape}")
    if reference.size and (reference.min() < 0 or reference.max() > 1):
        raise ValueError("reference values must lie in [0, 1]")
    ctype = np.complex128 if reference.dtype == np.float64 else np.complex64
    img = reference.astype(ctype)
    if b0 is not None:
        img = img * np.exp(1j * gen_b0_field(b0, reference.shape)).astype(ctype)
    return corrupt_kspace(fft2c(img), phase_error(reference.shape[axis], err), axis=axis)


def simulate_artifact(
    reference: np.ndarray,
    b0: B0FieldSpec | None,
    err: PhaseErrorSpec,
    axis: int = 0,
) -> np.ndarray:
    """Magnitude image with motion ghosting along ``axis`` (PE)."""
    k = corrupted_kspace(reference, b0, err, axis)
    out = np.abs(ifft2c(k))
    return out.astype(np.float64 if k.dtype == np.complex128 else np.float32)


def sample_phase_error_spec(
    rng: Rng,
    pattern: str = "mixed",
    delta_max: float = DELTA_MAX,
    alpha_range: tuple[float, float] = ALPHA_RANGE,
    beta_range: tuple[float, float] = BETA_RANGE,
    ky0_range: tuple[float, float] = KY0_RANGE,
    line_fraction_range: tuple[float, float] = LINE_FRACTION_RANGE,
    scan_seconds: float = 10.0,
) -> PhaseErrorSpec:
    """Draw one corruption realization; ``pattern='mixed'`` picks either kind with p = 1/2."""
    if pattern == "mixed":
        kind = PERIODIC if rng.uniform() < 0.5 else RANDOM
    elif pattern in (PERIODIC, RANDOM):
        kind = pattern
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return PhaseErrorSpec(
        kind=kind,
        delta_max=rng.uniform(0.0, delta_max),
        alpha=rng.uniform(*alpha_range),
        beta=rng.uniform(*beta_range),
        ky0=rng.uniform(*ky0_range),
        line_fraction=rng.uniform(*line_fraction_range),
        scan_seconds=scan_seconds,
        seed=rng.seed_value(),
    )


def simulate_volume(
    reference: np.ndarray,
    seed: int,
    pattern: str = "mixed",
    b0_order: int = 3,
    b0_peak_to_peak: float = B0_PEAK_TO_PEAK,
    keep_kspace: bool = False,
    **ranges,
):
    """Corrupt every (phase, slice) image of a ``(P, S, PE, RO)`` volume.

    Each image gets an independent phase-error realization drawn from a
    stream keyed on ``(seed, phase, slice)``; each slice gets one B0 field
    shared by its phases. Returns ``(artifact, realizations)``, plus the
    corrupted k-space volume when ``keep_kspace`` is set.
    """
    reference = np.asarray(reference)
    if reference.ndim != 4:
        raise ValueError(f"expected a (phase, slice, PE, RO) volume, got shape {reference.shape}")
    n_p, n_s = reference.shape[:2]
    out = np.empty_like(reference)
    kspace = np.empty(reference.shape, dtype=np.complex64) if keep_kspace else None
    specs = []
    for s in range(n_s):
        b0 = B0FieldSpec(b0_order, b0_peak_to_peak, seed=Rng.derive(seed, 0, s).seed_value())
        for p in range(n_p):
            err = sample_phase_error_spec(Rng.derive(seed, 1, p, s), pattern, **ranges)
            k = corrupted_kspace(reference[p, s], b0, err)
            out[p, s] = np.abs(ifft2c(k))
            if keep_kspace:
                kspace[p, s] = k
            specs.append((p, s, err))
    if keep_kspace:
        return out, specs, kspace
    return out, specs
