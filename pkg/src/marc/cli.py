"""``marc`` command line: phantom -> simulate -> dataset -> train -> denoise -> evaluate.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure (non-finite loss or gradient).
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    PATCH_SIZE,
    PatchSet,
    extract_patches,
    file_sha256,
    kfold_split,
    normalize_volume,
    read_bundle,
    write_bundle,
)
from .mrt import MrtError, read_mrt, write_mrt
from .network import build_marc, denoise, extract_features, load_model, save_model
from .numerics import fft2c
from .pgm import write_pgm
from .phantom import PhantomSpec, gen_phantom
from .report import DEFAULT_THRESHOLD, evaluate_volumes, render_points_csv, render_report
from .simulate import ALPHA_RANGE, B0_PEAK_TO_PEAK, BETA_RANGE, DELTA_MAX, KY0_RANGE, simulate_volume
from .training import NonFiniteLossError, TrainConfig, kfold_validate, sweep_nconv, train

log = logging.getLogger("marc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected SxHxW, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers in {text!r}") from exc
    if min(dims) < 1:
        raise argparse.ArgumentTypeError("dimensions must be positive")
    return dims


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected lo,hi got {text!r}") from exc
    if lo > hi:
        raise argparse.ArgumentTypeError(f"lo exceeds hi in {text!r}")
    return lo, hi


def _int_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file or directory: {p}")
    return p


def masks_path(out: Path) -> Path:
    return out.with_name(out.stem + "_masks" + out.suffix)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# --- subcommands ------------------------------------------------------------


def cmd_phantom(args) -> int:
    n_s, h, w = args.shape
    n_p = args.phases
    base = PhantomSpec()
    curves = {}
    if n_p != base.n_phases:
        curves = {
            name: tuple(np.interp(np.linspace(0, 6, n_p), np.arange(7), getattr(base, name)))
            for name in ("aorta_curve", "liver_curve", "lesion_curve", "body_curve")
        }
    spec = PhantomSpec(
        height=h, width=w, n_phases=n_p, n_slices=n_s, seed=args.seed,
        texture=args.texture, n_lesions=args.lesions, **curves,
    )
    volume, labels = gen_phantom(spec)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_mrt(args.out, volume)
    write_mrt(masks_path(args.out), labels.astype(np.float32))
    log.info("phantom %s -> %s (+ masks)", volume.shape, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    ref = read_mrt(_existing(args.ref))
    if ref.ndim != 4 or np.iscomplexobj(ref):
        raise ValueError(f"reference must be a real (phase, slice, PE, RO) volume, got {ref.shape}")
    result = simulate_volume(
        ref.astype(np.float32),
        seed=args.seed,
        pattern=args.pattern,
        b0_order=args.b0_order,
        b0_peak_to_peak=args.b0_pp,
        keep_kspace=args.kspace_out is not None,
        delta_max=args.delta_max,
        alpha_range=args.alpha_range,
        beta_range=args.beta_range,
        ky0_range=args.ky0_range,
        scan_seconds=args.scan_seconds,
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_mrt(args.out, result[0])
    if args.kspace_out is not None:
        write_mrt(args.kspace_out, result[2])
    log.info("simulated %d corrupted images -> %s", len(result[1]), args.out)
    return EXIT_OK


def cmd_dataset(args) -> int:
    ref = read_mrt(_existing(args.ref))
    art = read_mrt(_existing(args.art))
    art_n, ref_n, scale = normalize_volume(art, ref)
    pairs = extract_patches(ref_n, art_n, args.patches, args.seed, size=args.patch_size, n_phases=art.shape[0])
    meta = {
        "seed": args.seed,
        "scale": repr(scale),
        "patch_size": args.patch_size,
        "n_phases": art.shape[0],
        "reference_sha256": file_sha256(args.ref),
        "artifact_sha256": file_sha256(args.art),
    }
    write_bundle(args.out, PatchSet.from_pairs(pairs), meta)
    log.info("%d patch pairs -> %s", len(pairs), args.out)
    return EXIT_OK


def _config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        max_epochs=args.epochs,
        patience=min(args.patience, args.epochs),
        seed=args.seed,
        deterministic=args.deterministic,
        subset_fraction=args.subset_fraction,
    )


def _holdout(patches: PatchSet, k: int, seed: int) -> tuple[PatchSet, PatchSet]:
    folds = kfold_split(len(patches), k, seed)
    return patches.subset(folds.training(0)), patches.subset(folds.validation(0))


def cmd_train(args) -> int:
    bundle = read_bundle(_existing(args.data))
    patches = bundle.patches
    config = _config(args)
    n_ch = patches.artifact.shape[1]
    t0 = time.perf_counter()
    if args.all_folds:
        kf = kfold_validate(
            patches, args.kfold, config,
            model_factory=lambda i: build_marc(args.nconv, args.filters, n_ch, seed=args.seed),
        )
        best = int(np.argmin(kf.fold_losses))
        model = kf.models[best]
        text = kf.epoch_summary().to_csv()
        text += "".join(f"# fold {i + 1} best_val_loss={v!r}\n" for i, v in enumerate(kf.fold_losses))
        text += f"# kfold mean={kf.mean!r} sd={kf.sd!r} saved_fold={best + 1}\n"
    else:
        tr, va = _holdout(patches, args.kfold, args.seed)
        model = build_marc(args.nconv, args.filters, n_ch, seed=args.seed)
        model, rep = train(model, tr, va, config)
        text = rep.to_csv()
    save_model(model, args.out)
    report = args.report if args.report is not None else args.out / "report.txt"
    _write_text(report, text)
    log.info("trained in %.1f s -> %s", time.perf_counter() - t0, args.out)
    return EXIT_OK


def cmd_denoise(args) -> int:
    model = load_model(_existing(args.model))
    vol = read_mrt(_existing(args.input))
    scale = float(vol.max())
    if not scale > 0:
        raise ValueError("input volume has no positive values")
    norm = vol / np.float32(scale)
    den, res = denoise(model, norm, batch_size=args.batch)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_mrt(args.out, (den * np.float32(scale)).astype(np.float32))
    if args.residual_out is not None:
        write_mrt(args.residual_out, (res * np.float32(scale)).astype(np.float32))
    if args.features:
        if args.features_out is None:
            raise UsageError("--features requires --features-out")
        s = vol.shape[1] // 2 if args.features_slice is None else args.features_slice
        maps = extract_features(model, norm[:, s][None], args.features)
        args.features_out.mkdir(parents=True, exist_ok=True)
        for idx, fmap in zip(args.features, maps):
            write_mrt(args.features_out / f"layer{idx}.mrt", fmap[0].astype(np.float32))
    log.info("denoised %s -> %s", vol.shape, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ref = read_mrt(_existing(args.ref))
    labels = np.rint(read_mrt(_existing(args.masks))).astype(np.int64)
    images = {}
    if args.art is not None:
        images["artifact"] = read_mrt(_existing(args.art))
    images["denoised"] = read_mrt(_existing(args.den))
    for name, vol in images.items():
        if vol.shape != ref.shape:
            raise ValueError(f"{name} volume {vol.shape} does not match reference {ref.shape}")
    results = evaluate_volumes(ref, images, labels, args.threshold)
    text = render_report(results)
    if args.out is None:
        sys.stdout.write(text)
    else:
        _write_text(args.out, text)
    if args.csv is not None:
        _write_text(args.csv, render_points_csv(results))
    return EXIT_OK


def cmd_sweep(args) -> int:
    bundle = read_bundle(_existing(args.data))
    config = _config(args)
    tr, va = _holdout(bundle.patches, args.kfold, args.seed)
    rows, selected = sweep_nconv(args.nconv_list, tr, va, config, n_filters=args.filters)
    lines = ["n_conv,mean_ssim,sd_ssim,artifact_ssim,best_val_loss"]
    lines += [f"{r.n_conv},{r.mean_ssim!r},{r.sd_ssim!r},{r.artifact_ssim!r},{r.best_val_loss!r}" for r in rows]
    lines.append(f"# selected n_conv = {selected}")
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        _write_text(args.out, text)
    return EXIT_OK


def cmd_export_pgm(args) -> int:
    arr = read_mrt(_existing(args.input))
    idx = tuple(args.index or [])
    lead = arr.ndim - 2
    if lead < 0:
        raise ValueError("tensor must have at least 2 dimensions")
    if len(idx) > lead:
        raise UsageError(f"--index has {len(idx)} entries, tensor has {lead} leading axes")
    idx = idx + (0,) * (lead - len(idx))
    img = arr[idx]
    lo, hi = args.lo, args.hi
    if args.mode == "magnitude":
        img = np.abs(img)
    elif args.mode == "kspace":
        k = img if np.iscomplexobj(img) else fft2c(img)
        img = np.log1p(np.abs(k))
        lo, hi = 0.0, max(float(img.max()), 1e-12)
    elif args.mode == "phase":
        k = img if np.iscomplexobj(img) else fft2c(img)
        img = np.angle(k)
        lo, hi = -math.pi, math.pi
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(args.out, img, lo, hi)
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="marc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=None, help="BLAS threads (default: library default)")
    parser.add_argument("--deterministic", action="store_true", help="single-threaded, fixed reduction order")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("phantom", help="synthesize a multi-phase abdominal phantom")
    p.add_argument("--out", type=Path, required=True, help="volume .mrt; masks go to <stem>_masks.mrt")
    p.add_argument("--shape", type=_shape, default=(8, 128, 112), help="SxHxW (default 8x128x112)")
    p.add_argument("--phases", type=int, default=7)
    p.add_argument("--texture", type=float, default=0.06)
    p.add_argument("--lesions", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="add respiratory ghosting in k-space")
    p.add_argument("--ref", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--kspace-out", type=Path, default=None, help="also write corrupted k-space (complex64)")
    p.add_argument("--pattern", choices=("periodic", "random", "mixed"), default="mixed")
    p.add_argument("--delta-max", type=float, default=DELTA_MAX, help="pixels")
    p.add_argument("--alpha-range", type=_range, default=ALPHA_RANGE, help="Hz, lo,hi")
    p.add_argument("--beta-range", type=_range, default=BETA_RANGE, help="radians, lo,hi")
    p.add_argument("--ky0-range", type=_range, default=KY0_RANGE, help="radians, lo,hi")
    p.add_argument("--scan-seconds", type=float, default=10.0)
    p.add_argument("--b0-order", type=int, default=3)
    p.add_argument("--b0-pp", type=float, default=B0_PEAK_TO_PEAK, help="max B0 peak-to-peak, radians")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="extract normalized patch pairs")
    p.add_argument("--ref", required=True)
    p.add_argument("--art", required=True)
    p.add_argument("--out", type=Path, required=True, help="bundle directory")
    p.add_argument("--patches", type=int, default=2000)
    p.add_argument("--patch-size", type=int, default=PATCH_SIZE)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset)

    def training_flags(p):
        p.add_argument("--data", required=True, help="dataset bundle directory")
        p.add_argument("--filters", type=int, default=64)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--batch", type=int, default=64)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--patience", type=int, default=10)
        p.add_argument("--kfold", type=int, default=5, help="folds; fold 1 is the validation split")
        p.add_argument("--subset-fraction", type=float, default=1.0)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train the residual network")
    training_flags(p)
    p.add_argument("--out", type=Path, required=True, help="model bundle directory")
    p.add_argument("--nconv", type=int, default=7)
    p.add_argument("--all-folds", action="store_true", help="run full K-fold cross-validation")
    p.add_argument("--report", type=Path, default=None, help="default <out>/report.txt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="select the interior block count by validation SSIM")
    training_flags(p)
    p.add_argument("--nconv-list", type=_int_list, default=[1, 3, 5, 7])
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("denoise", help="remove predicted artifacts from a volume")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--residual-out", type=Path, default=None)
    p.add_argument("--features", type=_int_list, default=None, help="1-based layer indices, e.g. 1,4,8")
    p.add_argument("--features-out", type=Path, default=None, help="directory for layer{i}.mrt maps")
    p.add_argument("--features-slice", type=int, default=None, help="default: central slice")
    p.add_argument("--batch", type=int, default=4, help="slices per inference batch")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; inference is deterministic")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("evaluate", help="SSIM, Bland-Altman and contrast-ratio report")
    p.add_argument("--ref", required=True)
    p.add_argument("--den", required=True)
    p.add_argument("--art", default=None)
    p.add_argument("--masks", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out", type=Path, default=None, help="report path (default stdout)")
    p.add_argument("--csv", type=Path, default=None, help="Bland-Altman points")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-pgm", help="write one 2-D image as 16-bit PGM")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--index", type=_int_list, default=None, help="leading indices, e.g. phase,slice")
    p.add_argument("--mode", choices=("image", "magnitude", "kspace", "phase"), default="image")
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.set_defaults(func=cmd_export_pgm)
    return parser


def _thread_limit(args):
    n = 1 if args.deterministic else args.threads
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with _thread_limit(args):
            return args.func(args)
    except UsageError as exc:
        print(f"marc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"marc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, MrtError, ValueError, IndexError, RuntimeError, OSError) as exc:
        print(f"marc {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv: list[str] | None = None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
