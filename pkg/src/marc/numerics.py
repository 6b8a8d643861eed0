"""Centered unitary FFTs and seeded random streams.

Images and k-space are plain numpy arrays. Real data defaults to float32
(complex64 for k-space); float64/complex128 inputs are kept at double
precision so that oracle and gradient tests can run at 64 bits.

The transforms place the DC term at index ``n // 2`` along each axis, so the
phase-encoding line with spatial frequency ``m`` sits at row ``m + n // 2``
for ``m`` in ``[-n // 2, n - n // 2)``.
"""

from __future__ import annotations

import numpy as np

DEFAULT_REAL = np.float32
DEFAULT_COMPLEX = np.complex64


def _as_complex(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"both dimensions must be >= 1, got {x.shape}")
    if x.dtype in (np.float64, np.complex128):
        return x.astype(np.complex128, copy=False)
    return x.astype(DEFAULT_COMPLEX, copy=False)


def fft2c(image: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DFT with the zero frequency at the array center."""
    x = _as_complex(image)
    k = np.fft.fft2(np.fft.ifftshift(x), norm="ortho")
    return np.fft.fftshift(k).astype(x.dtype, copy=False)


def ifft2c(kspace: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2c`."""
    k = _as_complex(kspace)
    x = np.fft.ifft2(np.fft.ifftshift(k), norm="ortho")
    return np.fft.fftshift(x).astype(k.dtype, copy=False)


def centered_index(n: int) -> np.ndarray:
    """Signed frequency index of each row of a centered transform of length n."""
    return np.arange(n) - n // 2


class Rng:
    """Seeded random stream backed by numpy's PCG64 bit generator.

    ``Rng(seed)`` always yields the same sequence. Independent child streams
    for parallel tasks are derived with :meth:`derive`, which hashes the
    parent seed together with integer keys through ``SeedSequence`` so the
    child does not depend on how much of the parent stream was consumed.
    """

    def __init__(self, seed: int = 0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._keys: tuple[int, ...] = ()
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    @classmethod
    def derive(cls, seed: int, *keys: int) -> "Rng":
        rng = cls.__new__(cls)
        rng.seed = int(seed)
        rng._keys = tuple(int(k) for k in keys)
        entropy = [rng.seed, *rng._keys]
        rng.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
        return rng

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None):
        return rng_uniform(self, lo, hi, size)

    def integers(self, lo: int, hi: int, size=None):
        """Integers in ``[lo, hi)``."""
        return self.generator.integers(lo, hi, size=size)

    def normal(self, size=None, scale: float = 1.0):
        return self.generator.normal(0.0, scale, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n)."""
        return self.generator.choice(n, size=k, replace=False)

    def seed_value(self) -> int:
        """Draw a fresh 63-bit seed for a sub-task."""
        return int(self.generator.integers(0, 2**63))


def rng_uniform(rng: Rng, lo: float, hi: float, size=None):
    """Uniform draw(s) in ``[lo, hi)``; ``lo == hi`` returns ``lo``."""
    if lo > hi:
        raise ValueError(f"lo ({lo}) must not exceed hi ({hi})")
    if lo == hi:
        if size is None:
            return float(lo)
        return np.full(size, float(lo))
    u = rng.generator.random(size)
    vals = lo + (hi - lo) * u
    # lo + (hi - lo) * u can round up to hi for u just below 1
    vals = np.minimum(vals, np.nextafter(hi, lo))
    return float(vals) if size is None else vals
