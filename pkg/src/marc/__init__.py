"""Respiratory motion-artifact simulation and multi-channel residual CNN denoising."""

from .dataset import PatchPair, PatchSet, extract_patches, kfold_split, normalize_volume
from .metrics import bland_altman, contrast_ratio, roi_mean, ssim
from .network import build_marc, denoise, extract_features, forward, backward, param_count
from .numerics import Rng, fft2c, ifft2c, rng_uniform
from .phantom import PhantomSpec, gen_phantom
from .simulate import (
    B0FieldSpec,
    PhaseErrorSpec,
    corrupt_kspace,
    dixon_combine,
    gen_b0_field,
    periodic_phase_error,
    random_phase_error,
    simulate_artifact,
)
from .training import TrainConfig, TrainReport, adam_step, l1_loss, train

__version__ = "0.1.0"
