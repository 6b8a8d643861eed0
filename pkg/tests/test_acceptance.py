"""Acceptance gate: one PASS/FAIL line per criterion in the terminal summary."""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from marc.cli import main
from marc.dataset import PatchSet, kfold_split
from marc.metrics import ssim
from marc.mrt import read_mrt
from marc.network import build_marc, param_count
from marc.numerics import Rng, fft2c, ifft2c
from marc.phantom import AORTA, LIVER, PhantomSpec, gen_phantom
from marc.report import evaluate_volumes, slice_ssim
from marc.simulate import PhaseErrorSpec, corrupt_kspace, dixon_combine, periodic_phase_error, simulate_volume
from marc.training import TrainConfig, kfold_validate, train, validation_loss
from oracles import dft2c_matrix, model_gradient_errors, ssim_direct

# reduced network and data budget used for the end-to-end runs
PIPELINE_EPOCHS = 25
PIPELINE_LIMIT_S = 600.0


def run_pipeline(d: Path) -> float:
    t0 = time.perf_counter()
    steps = [
        ["phantom", "--out", d / "train_ref.mrt", "--shape", "16x128x112", "--seed", "1"],
        ["simulate", "--ref", d / "train_ref.mrt", "--out", d / "train_art.mrt", "--seed", "2"],
        ["dataset", "--ref", d / "train_ref.mrt", "--art", d / "train_art.mrt", "--out", d / "data",
         "--patches", "2000", "--seed", "3"],
        ["train", "--data", d / "data", "--out", d / "model", "--nconv", "3", "--filters", "16",
         "--epochs", PIPELINE_EPOCHS, "--patience", "10", "--seed", "4"],
        ["phantom", "--out", d / "test_ref.mrt", "--shape", "10x128x112", "--seed", "11"],
        ["simulate", "--ref", d / "test_ref.mrt", "--out", d / "test_art.mrt", "--seed", "12"],
        ["denoise", "--model", d / "model", "--in", d / "test_art.mrt", "--out", d / "test_den.mrt"],
        ["evaluate", "--ref", d / "test_ref.mrt", "--den", d / "test_den.mrt", "--art", d / "test_art.mrt",
         "--masks", d / "test_ref_masks.mrt", "--out", d / "evaluation.txt", "--csv", d / "points.csv"],
    ]
    for argv in steps:
        code = main(["--deterministic"] + [str(a) for a in argv])
        if code != 0:
            raise RuntimeError(f"pipeline step {argv[0]} exited with {code}")
    return time.perf_counter() - t0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipeline_a")
    return d, run_pipeline(d)


def test_c01_parameter_count(criterion):
    full, small = param_count(build_marc(7, 64, 7)), param_count(build_marc(1, 64, 7))
    ok = full == 268_423 and small == 45_319 and criterion.elapsed() < 1.0
    criterion.check(1, "parameter count", ok, f"n_conv=7: {full}, n_conv=1: {small}")


def test_c02_simulation_identity(criterion):
    ref, _ = gen_phantom(PhantomSpec(height=128, width=112, n_phases=7, n_slices=8, seed=21))
    out, _ = simulate_volume(ref, seed=22, b0_order=3, delta_max=0.0)
    err = float(np.max(np.abs(out - ref)))
    ok = out.dtype == np.float32 and err < 1e-5 and criterion.elapsed() < 5.0
    criterion.check(2, "simulation identity", ok, f"max abs err {err:.2e} over {ref.shape[0] * ref.shape[1]} images")


def test_c03_shift_theorem(criterion):
    img = np.random.default_rng(3).random((32, 32)).astype(np.float32)
    m = np.arange(32) - 16
    worst = 0.0
    for delta in (1, 3, 5):
        spec = PhaseErrorSpec("periodic", delta_max=delta, alpha=0.0, beta=math.pi / 2, ky0=0.0)
        got = np.abs(ifft2c(corrupt_kspace(fft2c(img), periodic_phase_error(32, spec))))
        ramp = np.exp(-2j * np.pi * m * delta / 32)[:, None]
        oracle = dft2c_matrix(ramp * dft2c_matrix(img.astype(np.float64)), inverse=True)
        worst = max(worst, float(np.max(np.abs(got - oracle.real))), float(np.max(np.abs(got - np.roll(img, delta, 0)))))
    ok = worst < 1e-4 and criterion.elapsed() < 5.0
    criterion.check(3, "shift theorem", ok, f"max abs err {worst:.2e} for delta in 1,3,5")


def test_c04_dixon_commutation(criterion):
    rng = np.random.default_rng(4)
    worst = 0.0
    for trial in range(20):
        a = (rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))).astype(np.complex64)
        b = (rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))).astype(np.complex64)
        phi = periodic_phase_error(16, PhaseErrorSpec(delta_max=rng.uniform(0, 20), alpha=rng.uniform(0.1, 5), ky0=0.4))
        lhs = dixon_combine(corrupt_kspace(a, phi), corrupt_kspace(b, phi))
        rhs = corrupt_kspace(dixon_combine(a, b), phi)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    ok = worst < 1e-6 and criterion.elapsed() < 1.0
    criterion.check(4, "dixon commutation", ok, f"max abs err {worst:.2e}")


def test_c05_gradient_fidelity(criterion):
    model = build_marc(1, 4, 7, seed=5, dtype=np.float64)
    rng = np.random.default_rng(5)
    x = rng.random((1, 7, 8, 8))
    errors = model_gradient_errors(model, x, rng.normal(size=x.shape), h=1e-5)
    worst = max(errors.values())
    by_kind = {k: max(v for n, v in errors.items() if n.endswith(k)) for k in ("kernel", "bias", "gamma", "beta")}
    ok = worst < 1e-4 and len(errors) == 8 and criterion.elapsed() < 60.0
    criterion.check(5, "gradient fidelity", ok, ", ".join(f"{k} {v:.1e}" for k, v in by_kind.items()))


def test_c06_ssim_oracle(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        a, b = rng.random((48, 48)), rng.random((48, 48))
        worst = max(worst, abs(ssim(a, b) - ssim_direct(a, b)))
    self_err = max(abs(ssim(x, x) - 1.0) for x in rng.random((10, 48, 48)))
    ok = worst < 1e-10 and self_err < 1e-12 and criterion.elapsed() < 5.0
    criterion.check(6, "ssim oracle", ok, f"max err {worst:.1e}, self err {self_err:.1e}")


@pytest.mark.slow
def test_c07_end_to_end_learning(criterion, pipeline):
    d, elapsed = pipeline
    rows = [line.split(",") for line in (d / "model" / "report.txt").read_text().splitlines()[1:] if not line.startswith("#")]
    val = [float(r[2]) for r in rows]
    final = min(val)  # restored best-epoch weights are the returned model
    ok_a = final < 0.5 * val[0]
    ref = read_mrt(d / "test_ref.mrt")
    art = read_mrt(d / "test_art.mrt")
    den = read_mrt(d / "test_den.mrt")
    labels = np.rint(read_mrt(d / "test_ref_masks.mrt")).astype(np.int64)
    s_art, s_den = slice_ssim(ref, art), slice_ssim(ref, den)
    frac = float(np.mean(s_den > s_art))
    ok_b = frac >= 0.9
    res = evaluate_volumes(ref, {"denoised": den}, labels)
    bias = res.contrast["denoised"].mean_diff
    ok_c = abs(bias) <= 0.05
    n_patches = int((d / "data" / "meta.txt").read_text().split("\n")[0].split("=")[1])
    ok = ok_a and ok_b and ok_c and n_patches >= 2000 and len(val) <= 100 and elapsed < PIPELINE_LIMIT_S
    detail = (
        f"(a) val L1 {val[0]:.4f} -> {final:.4f}; (b) {frac:.0%} of {len(s_den)} slices improved, "
        f"SSIM {s_art.mean():.3f} -> {s_den.mean():.3f}; (c) contrast bias {bias:+.4f}; "
        f"{len(val)} epochs, {n_patches} pairs, pipeline {elapsed:.0f} s"
    )
    criterion.check(7, "end-to-end learning", ok, detail)


def test_c08_early_stopping(criterion):
    rng = np.random.default_rng(8)
    art = rng.random((32, 7, 12, 12)).astype(np.float32)
    data, val = PatchSet(art[:24], 0.1 * art[:24]), PatchSet(art[24:], 0.1 * art[24:])
    real = []

    def stub(model, epoch):
        real.append(validation_loss(model, val, 8))
        return 1.0 - 0.1 * epoch if epoch <= 4 else 0.9  # improves for 4 epochs, then never again

    cfg = TrainConfig(learning_rate=3e-3, batch_size=8, max_epochs=100, patience=10)
    model, rep = train(build_marc(1, 4), data, val, cfg, stub)
    restored = validation_loss(model, val, 8)
    ok = (
        rep.best_epoch == 4
        and rep.stopped_epoch == rep.best_epoch + cfg.patience
        and rep.best_val_loss == min(rep.val_loss)
        and restored == real[rep.best_epoch - 1]
        and criterion.elapsed() < 5.0
    )
    criterion.check(8, "early stopping", ok, f"best {rep.best_epoch}, stopped {rep.stopped_epoch}, restored loss matches: {restored == real[3]}")


@pytest.mark.slow
def test_c09_determinism(criterion, pipeline, tmp_path_factory):
    first, first_s = pipeline
    second = tmp_path_factory.mktemp("pipeline_b")
    second_s = run_pipeline(second)
    files_a = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
    differing = [str(p) for p in files_a if p not in files_b or (first / p).read_bytes() != (second / p).read_bytes()]
    groups = {
        "dataset": any(str(p).startswith("data") for p in files_a),
        "model": any(str(p).startswith("model") for p in files_a),
        "reports": (first / "evaluation.txt").exists() and (first / "model" / "report.txt").exists(),
    }
    ok = files_a == files_b and not differing and all(groups.values()) and second_s < 2 * PIPELINE_LIMIT_S
    criterion.check(9, "determinism", ok, f"{len(files_a)} files compared, {len(differing)} differ; runs {first_s:.0f} s / {second_s:.0f} s")


def test_c10_kfold_contract(criterion):
    rng = Rng(10)
    bad = 0
    for _ in range(100):
        n = int(rng.integers(5, 5000))
        f = kfold_split(n, 5, int(rng.integers(0, 2**31)))
        vals = [f.validation(i) for i in range(5)]
        sizes = [v.size for v in vals]
        if not (np.array_equal(np.sort(np.concatenate(vals)), np.arange(n)) and max(sizes) - min(sizes) <= 1):
            bad += 1
    art = np.random.default_rng(10).random((20, 7, 8, 8)).astype(np.float32)
    rep = kfold_validate(PatchSet(art, 0.1 * art), 5, TrainConfig(batch_size=4, max_epochs=1, patience=1),
                         model_factory=lambda i: build_marc(1, 2, seed=i))
    ok = bad == 0 and len(rep.fold_losses) == 5 and criterion.elapsed() < 5.0
    criterion.check(10, "k-fold contract", ok, f"{100 - bad}/100 splits valid, {len(rep.fold_losses)} fold losses")
