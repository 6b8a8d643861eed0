"""L1 residual regression with Adam, early stopping and K-fold validation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import PatchSet, kfold_split
from .metrics import ssim
from .network import MarcModel, backward, build_marc, forward, predict
from .numerics import Rng

log = logging.getLogger(__name__)


class NonFiniteLossError(ArithmeticError):
    """Training produced a NaN/Inf loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    deterministic: bool = True
    subset_fraction: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if not 0 < self.subset_fraction <= 1:
            raise ValueError("subset_fraction must be in (0, 1]")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_sd: list[float] | None = None
    best_epoch: int = 0
    stopped_epoch: int = 0
    wall_clock: float = 0.0

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1]

    def to_csv(self) -> str:
        """Per-epoch ``epoch,train_loss,val_loss`` lines (plus ``val_sd`` for K-fold means)."""
        if self.val_sd is None:
            lines = ["epoch,train_loss,val_loss"]
            lines += [f"{i + 1},{t!r},{v!r}" for i, (t, v) in enumerate(zip(self.train_loss, self.val_loss))]
        else:
            lines = ["epoch,train_loss,val_loss,val_sd"]
            lines += [
                f"{i + 1},{t!r},{v!r},{s!r}"
                for i, (t, v, s) in enumerate(zip(self.train_loss, self.val_loss, self.val_sd))
            ]
        lines.append(f"# best_epoch={self.best_epoch} stopped_epoch={self.stopped_epoch}")
        return "\n".join(lines) + "\n"


def l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred.astype(np.float64) - target)))


def l1_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Subgradient of :func:`l1_loss`: sign(pred - target) / N, zero at ties."""
    return np.sign(pred - target) / pred.size


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteLossError(f"non-finite gradient for {name}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.eps)


def validation_loss(model: MarcModel, data: PatchSet, batch_size: int = 64) -> float:
    pred = predict(model, data.artifact, batch_size)
    return l1_loss(pred, data.residual)


def train(
    model: MarcModel,
    data: PatchSet,
    val: PatchSet,
    config: TrainConfig = TrainConfig(),
    evaluator: Callable[[MarcModel, int], float] | None = None,
) -> tuple[MarcModel, TrainReport]:
    """Fit ``model`` to predict ``data.residual`` from ``data.artifact``.

    After every epoch the validation loss is computed (``evaluator(model,
    epoch)`` overrides the default L1 on ``val``). Training stops once
    ``patience`` epochs pass without a strict improvement, or at
    ``max_epochs``; the weights of the best epoch are restored.
    """
    if len(val) == 0:
        raise ValueError("validation split is empty")
    rng = Rng.derive(config.seed, 7)
    n_train = len(data)
    if config.subset_fraction < 1:
        keep = max(1, math.ceil(config.subset_fraction * n_train))
        data = data.subset(np.sort(rng.permutation(n_train)[:keep]))
        n_train = keep
    if n_train < config.batch_size:
        raise ValueError(f"{n_train} training pairs is fewer than one batch of {config.batch_size}")
    if evaluator is None:
        evaluator = lambda m, epoch: validation_loss(m, val, config.batch_size)  # noqa: E731

    params = model.trainable()
    state = AdamState()
    report = TrainReport()
    best = math.inf
    best_state = model.state()
    t0 = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, config.batch_size):
            idx = np.sort(order[start : start + config.batch_size])
            x = data.artifact[idx]
            y = data.residual[idx]
            pred = forward(model, x, "train")
            loss = l1_loss(pred, y)
            if not math.isfinite(loss):
                raise NonFiniteLossError(f"non-finite training loss at epoch {epoch}")
            grads = backward(model, x, l1_grad(pred, y).astype(model.dtype))
            adam_step(params, grads, state, config)
            total += loss * len(idx)
        model._cache = None
        vloss = float(evaluator(model, epoch))
        if not math.isfinite(vloss):
            raise NonFiniteLossError(f"non-finite validation loss at epoch {epoch}")
        report.train_loss.append(total / n_train)
        report.val_loss.append(vloss)
        report.stopped_epoch = epoch
        log.info("epoch %d train %.6f val %.6f", epoch, total / n_train, vloss)
        if vloss < best:
            best = vloss
            report.best_epoch = epoch
            best_state = model.state()
        elif epoch - report.best_epoch >= config.patience:
            break
    model.load_state(best_state)
    report.wall_clock = time.perf_counter() - t0
    return model, report


@dataclass
class KFoldReport:
    fold_losses: list[float]
    reports: list[TrainReport]
    models: list[MarcModel] = field(default_factory=list, repr=False)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_losses))

    @property
    def sd(self) -> float:
        return float(np.std(self.fold_losses, ddof=1)) if len(self.fold_losses) > 1 else 0.0

    def epoch_summary(self) -> TrainReport:
        """Per-epoch losses averaged over folds, out to the shortest fold run."""
        n = min(len(r.val_loss) for r in self.reports)
        vals = np.array([r.val_loss[:n] for r in self.reports])
        trains = np.array([r.train_loss[:n] for r in self.reports])
        best = min(self.reports, key=lambda r: r.best_val_loss)
        return TrainReport(
            train_loss=trains.mean(axis=0).tolist(),
            val_loss=vals.mean(axis=0).tolist(),
            val_sd=vals.std(axis=0, ddof=1).tolist() if len(self.reports) > 1 else [0.0] * n,
            best_epoch=best.best_epoch,
            stopped_epoch=max(r.stopped_epoch for r in self.reports),
            wall_clock=sum(r.wall_clock for r in self.reports),
        )


def kfold_validate(
    data: PatchSet,
    k: int = 5,
    config: TrainConfig = TrainConfig(),
    model_factory: Callable[[int], MarcModel] | None = None,
) -> KFoldReport:
    """Train ``k`` models, fold ``i`` held out as validation for the i-th."""
    if model_factory is None:
        model_factory = lambda i: build_marc(7, seed=config.seed)  # noqa: E731
    folds = kfold_split(len(data), k, config.seed)
    losses, reports, models = [], [], []
    for i in range(k):
        model, rep = train(model_factory(i), data.subset(folds.training(i)), data.subset(folds.validation(i)), config)
        losses.append(rep.best_val_loss)
        reports.append(rep)
        models.append(model)
    return KFoldReport(losses, reports, models)


def patch_ssims(model: MarcModel, data: PatchSet, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """SSIM of each reference patch against its artifact and its denoised version."""
    ref = data.reference
    den = np.maximum(data.artifact - predict(model, data.artifact, batch_size), 0)
    art_s = np.array([ssim(r, a) for r, a in zip(ref, data.artifact)])
    den_s = np.array([ssim(r, d) for r, d in zip(ref, den)])
    return art_s, den_s


@dataclass
class SweepRow:
    n_conv: int
    mean_ssim: float
    sd_ssim: float
    artifact_ssim: float
    best_val_loss: float


def sweep_nconv(
    candidates,
    data: PatchSet,
    val: PatchSet,
    config: TrainConfig = TrainConfig(),
    n_filters: int = 64,
) -> tuple[list[SweepRow], int]:
    """Train one model per interior-block count; pick the highest mean validation SSIM.

    Ties go to the smaller block count.
    """
    candidates = [int(c) for c in candidates]
    if not candidates:
        raise ValueError("candidate list is empty")
    rows = []
    for n_conv in candidates:
        model = build_marc(n_conv, n_filters, data.artifact.shape[1], seed=config.seed)
        model, rep = train(model, data, val, config)
        art_s, den_s = patch_ssims(model, val, config.batch_size)
        rows.append(SweepRow(n_conv, float(den_s.mean()), float(den_s.std()), float(art_s.mean()), rep.best_val_loss))
    best = max(rows, key=lambda r: (r.mean_ssim, -r.n_conv))
    return rows, best.n_conv
