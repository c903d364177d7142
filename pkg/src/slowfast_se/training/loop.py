"""Desk-scale training: Adam, two-stage learning-rate schedule, CSV log.

Stage 1 optimizes the spectral MSE alone with the learning rate starting at
1e-3 and cut by 10% whenever the epoch loss fails to improve for two
consecutive epochs. Stage 2 switches to the combined objective (weights 10
and 0.5), resets the rate to 1e-4, and cuts by 25% after a single flat
epoch. Everything is a deterministic function of the schedule seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..engine import ModelWeights, SlowFastConfig, init_model_weights, named_arrays
from .backprop import GradientSet, backward, forward_batch
from .data import EVAL_SNRS_DB, TRAIN_SNRS_DB, make_batch
from .losses import LossWeights, StftParams, sisnr_grad


@dataclass
class TrainSchedule:
    stage1_epochs: int = 16
    stage2_epochs: int = 4
    lr_stage1: float = 1e-3
    lr_stage2: float = 1e-4
    drop_stage1: float = 0.9
    patience_stage1: int = 2
    drop_stage2: float = 0.75
    patience_stage2: int = 1
    batch_size: int = 16
    train_pairs: int = 200
    eval_pairs: int = 16
    seed: int = 0
    grad_clip: float = 5.0
    stage1_weights: LossWeights = field(default_factory=lambda: LossWeights(1.0, 0.0))
    stage2_weights: LossWeights = field(default_factory=lambda: LossWeights(10.0, 0.5))
    stft: StftParams = field(default_factory=lambda: StftParams(256, 128))
    train_snrs: tuple = TRAIN_SNRS_DB
    eval_snrs: tuple = EVAL_SNRS_DB

    @property
    def total_epochs(self) -> int:
        return self.stage1_epochs + self.stage2_epochs


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    eval_sisnr: float
    lr: float
    stage: int


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; message carries the state dump."""


class AdamOptimizer:
    """Adam with bias correction; moments keyed by canonical array names."""

    def __init__(self, weights: ModelWeights, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(a) for name, a in named_arrays(weights)}
        self.v = {name: np.zeros_like(a) for name, a in named_arrays(weights)}

    def step(self, weights: ModelWeights, grads: GradientSet, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, arr in named_arrays(weights):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_gradients(grads: GradientSet, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def evaluate_sisnr(
    weights: ModelWeights, config: SlowFastConfig, noisy: np.ndarray, clean: np.ndarray
) -> float:
    """Mean SI-SNR of the batched forward pass over an evaluation set."""
    enhanced, _ = forward_batch(noisy, weights, config)
    vals, _ = sisnr_grad(enhanced, clean)
    return float(vals.mean())


def _lr_controller(lr: float, best: float, bad: int, loss: float, patience: int, drop: float):
    if loss < best - 1e-12:
        return lr, loss, 0
    bad += 1
    if bad >= patience:
        return lr * drop, best, 0
    return lr, best, bad


def train(
    config: SlowFastConfig,
    schedule: TrainSchedule | None = None,
    progress=None,
    init_weights: ModelWeights | None = None,
) -> tuple[ModelWeights, list[EpochRecord]]:
    """Train from scratch on the synthetic corpus; returns weights and log.

    ``progress`` may be a callable taking each EpochRecord as it is produced.
    ``init_weights`` overrides the default initialization (mutated in place).
    """
    sched = schedule or TrainSchedule()
    rng = np.random.default_rng(sched.seed)

    train_seeds = [int(sched.seed * 1_000_003 + 2 * i) for i in range(sched.train_pairs)]
    train_snrs = [sched.train_snrs[i % len(sched.train_snrs)] for i in range(sched.train_pairs)]
    eval_seeds = [
        int(sched.seed * 1_000_003 + 1_000_001 + 2 * i) for i in range(sched.eval_pairs)
    ]
    eval_snrs = [sched.eval_snrs[i % len(sched.eval_snrs)] for i in range(sched.eval_pairs)]

    noisy_all, clean_all = make_batch(train_seeds, train_snrs)
    eval_noisy, eval_clean = make_batch(eval_seeds, eval_snrs)

    weights = init_weights if init_weights is not None else init_model_weights(
        config, seed=sched.seed
    )
    optimizer = AdamOptimizer(weights)
    log: list[EpochRecord] = []

    stages = [
        (1, sched.stage1_epochs, sched.lr_stage1, sched.stage1_weights,
         sched.patience_stage1, sched.drop_stage1),
        (2, sched.stage2_epochs, sched.lr_stage2, sched.stage2_weights,
         sched.patience_stage2, sched.drop_stage2),
    ]

    epoch = 0
    for stage, n_epochs, lr, lw, patience, drop in stages:
        best = np.inf
        bad = 0
        for _ in range(n_epochs):
            epoch += 1
            perm = rng.permutation(sched.train_pairs)
            epoch_loss = 0.0
            for start in range(0, sched.train_pairs, sched.batch_size):
                idx = perm[start : start + sched.batch_size]
                batch = (noisy_all[idx], clean_all[idx])
                try:
                    loss, grads = backward(batch, weights, config, lw, sched.stft)
                except ValueError as exc:
                    raise TrainingDivergedError(
                        f"training diverged at epoch {epoch} (lr={lr:.3e}, "
                        f"stage {stage}): {exc}"
                    ) from exc
                clip_gradients(grads, sched.grad_clip)
                optimizer.step(weights, grads, lr)
                epoch_loss += loss * len(idx)
            epoch_loss /= sched.train_pairs
            if not np.isfinite(epoch_loss):
                raise TrainingDivergedError(
                    f"non-finite epoch loss {epoch_loss} at epoch {epoch} (lr={lr:.3e})"
                )
            eval_score = evaluate_sisnr(weights, config, eval_noisy, eval_clean)
            record = EpochRecord(epoch=epoch, loss=epoch_loss, eval_sisnr=eval_score,
                                 lr=lr, stage=stage)
            log.append(record)
            if progress is not None:
                progress(record)
            lr, best, bad = _lr_controller(lr, best, bad, epoch_loss, patience, drop)

    return weights, log


def write_log_csv(log: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "eval_sisnr", "lr"])
        for rec in log:
            writer.writerow([rec.epoch, f"{rec.loss:.10g}", f"{rec.eval_sisnr:.10g}",
                             f"{rec.lr:.10g}"])
