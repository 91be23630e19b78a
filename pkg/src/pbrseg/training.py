"""Dice-loss training loops for the view nets and the refinement net."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, DataError, NumericalError
from .hybrid import build_hybrid
from .optim import init_optimizer, optimizer_step
from .preprocess import augment
from .pvol import ProbVolume
from .unet import UNet, UNetConfig, build_unet
from .views import VIEWS, _sym_pad, estimate_initial, orient


@dataclass(frozen=True)
class Phase:
    optimizer: str
    lr: float
    epochs: int


@dataclass(frozen=True)
class TrainSchedule:
    phases: tuple
    val_fraction: float = 0.01
    patience: int = 20
    anneal: float = 0.5
    augment: bool = False


def paper_initial_schedule() -> TrainSchedule:
    """Published two-phase recipe for the view nets."""
    return TrainSchedule((Phase("sgd", 1e-4, 300), Phase("adam", 1e-5, 400)))


def paper_primary_schedule() -> TrainSchedule:
    """Published single-phase recipe for the refinement net."""
    return TrainSchedule((Phase("adam", 1e-5, 300),))


def desk_initial_schedule(sgd_epochs=3, adam_epochs=5, sgd_lr=5e-3, adam_lr=1e-4) -> TrainSchedule:
    """Minutes-scale recipe for small phantom runs; higher rates make up
    for the tiny epoch budget."""
    return TrainSchedule((Phase("sgd", sgd_lr, sgd_epochs), Phase("adam", adam_lr, adam_epochs)))


def desk_primary_schedule(epochs=6, lr=5e-4) -> TrainSchedule:
    return TrainSchedule((Phase("adam", lr, epochs),))


@dataclass
class EpochLog:
    epoch: int
    phase: str
    lr: float
    train_loss: float
    val_dice: float = None


def write_train_log(logs, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("epoch", "phase", "lr", "train_loss", "val_dice"))
        for r in logs:
            w.writerow((r.epoch, r.phase, f"{r.lr:.8f}", f"{r.train_loss:.6f}",
                        "" if r.val_dice is None else f"{r.val_dice:.6f}"))


def _subseed(*entropy) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _hard_dice(prob2d: np.ndarray, mask2d: np.ndarray, threshold: float = 0.5) -> float:
    pred = prob2d > threshold
    gt = mask2d > 0.5
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((pred & gt).sum()) / total


def fit(net: UNet, samples, targets, schedule: TrainSchedule, seed: int) -> list:
    """Train in place with batch size 1; returns the per-epoch log.

    A held-out fraction of samples is scored with hard Dice after each
    epoch; the learning rate halves when the monitored quantity (val Dice,
    or negative train loss when the split is empty) stops improving for
    `patience` epochs. The weights from the best-monitored epoch are
    restored before returning, so a late-phase divergence cannot erase
    earlier progress.
    """
    n = len(samples)
    if n == 0:
        raise DataError("empty training set")
    if len(targets) != n:
        raise ConfigError(f"{n} samples but {len(targets)} targets")
    n_val = int(round(schedule.val_fraction * n))
    n_val = min(n_val, n - 1)
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0])).permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    logs = []
    epoch = 0
    best = -np.inf
    best_params = None
    for phase in schedule.phases:
        state = init_optimizer(phase.optimizer, net.params, phase.lr)
        since = 0
        for _ in range(phase.epochs):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 1, epoch]))
            losses = []
            for j in train_idx[rng.permutation(len(train_idx))]:
                x, t = samples[j], targets[j]
                if schedule.augment:
                    x, t = augment(x, t, _subseed(seed, 2, epoch, int(j)))
                y = net.forward(x[None], train=True)
                loss, gy = ops.dice_loss_grad(y, t[None, None].astype(y.dtype))
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite training loss at epoch {epoch}")
                grads, _ = net.backward(gy)
                net.params, state = optimizer_step(net.params, grads, state)
                losses.append(loss)
            val_dice = None
            if n_val:
                scores = []
                for j in val_idx:
                    y = net.forward(samples[j][None])
                    scores.append(_hard_dice(y[0, 0], targets[j]))
                val_dice = float(np.mean(scores))
            train_loss = float(np.mean(losses))
            logs.append(EpochLog(epoch, phase.optimizer, state.lr, train_loss, val_dice))
            monitor = val_dice if n_val else -train_loss
            if monitor > best + 1e-12:
                best = monitor
                best_params = {k: p.copy() for k, p in net.params.items()}
                since = 0
            else:
                since += 1
                if since >= schedule.patience:
                    state.lr *= schedule.anneal
                    since = 0
            epoch += 1
    if best_params is not None:
        net.params = best_params
    return logs


def _view_samples(dataset, view: str):
    """Oriented, zero-padded (1,H,W) slices with matching mask targets."""
    samples, targets = [], []
    for v, m in dataset:
        img = orient(v.data, view)
        msk = orient(m.data, view)
        pad_h = _sym_pad(img.shape[1])
        pad_w = _sym_pad(img.shape[2])
        img = np.pad(img, ((0, 0), pad_h, pad_w)).astype(np.float32)
        msk = np.pad(msk, ((0, 0), pad_h, pad_w)).astype(np.float32)
        for t in range(img.shape[0]):
            samples.append(img[t][None])
            targets.append(msk[t])
    return samples, targets


def train_initial(dataset, view: str, schedule: TrainSchedule, seed: int,
                  base_width: int = 8):
    """Train one single-channel view net on preprocessed (volume, mask)
    pairs; returns (net, epoch logs)."""
    if not dataset:
        raise DataError("empty dataset")
    if view not in VIEWS:
        raise ConfigError(f"unknown view {view!r}")
    vi = VIEWS.index(view)
    samples, targets = _view_samples(dataset, view)
    net = build_unet(UNetConfig(in_channels=1, base_width=base_width),
                     seed=_subseed(seed, 10, vi))
    logs = fit(net, samples, targets, schedule, _subseed(seed, 11, vi))
    return net, logs


def train_primary(dataset, init_nets: dict, depth: int, schedule: TrainSchedule,
                  seed: int, teacher_forced: bool = False, base_width: int = 8):
    """Train the (2d+1)-channel refinement net; returns (net, epoch logs).

    Hybrid samples are built once from the fused initial maps and never
    updated during training; the recurrent propagation happens only at
    inference. With `teacher_forced` the neighbor channels carry ground
    truth instead of estimated maps (ablation mode).
    """
    if not dataset:
        raise DataError("empty dataset")
    samples, targets = [], []
    for v, m in dataset:
        if teacher_forced:
            p = ProbVolume(m.data.astype(np.float32), m.spacing)
        else:
            p = estimate_initial(init_nets, v)
        stack = build_hybrid(v, p, depth)
        for t in range(len(stack)):
            samples.append(stack.sample(t))
            targets.append(m.data[t].astype(np.float32))
    net = build_unet(UNetConfig(in_channels=2 * depth + 1, base_width=base_width),
                     seed=_subseed(seed, 20))
    logs = fit(net, samples, targets, schedule, _subseed(seed, 21))
    return net, logs
