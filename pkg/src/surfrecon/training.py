"""Adam training loop with validation tracking and periodic checkpoints."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import PartInputs
from .network import NetworkState, backward, predict_labels, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainOptions:
    lr: float = 1e-3
    steps: int = 10_000
    seed: int = 0
    val_split: float = 0.0
    eval_every: int = 100
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    checkpoint_dir: str | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainResult:
    final: NetworkState
    best: NetworkState
    curve: list = field(default_factory=list)  # (step, loss, val_accuracy)
    best_val_accuracy: float = float("nan")

    def write_curve(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss", "val_accuracy"])
            for step, loss, acc in self.curve:
                w.writerow([step, repr(float(loss)), "" if np.isnan(acc) else repr(float(acc))])


def accuracy(parts: list[PartInputs], state: NetworkState) -> float:
    hits = total = 0
    for part in parts:
        pred = predict_labels(part, state)
        hits += int((pred == part.labels).sum())
        total += len(pred)
    return hits / total if total else float("nan")


def split_dataset(dataset: list[PartInputs], val_split: float, seed: int):
    if val_split <= 0 or len(dataset) < 2:
        return list(dataset), []
    rng = np.random.default_rng(seed + 1)
    order = rng.permutation(len(dataset))
    n_val = min(len(dataset) - 1, max(1, int(round(val_split * len(dataset)))))
    val = [dataset[i] for i in sorted(order[:n_val])]
    train = [dataset[i] for i in sorted(order[n_val:])]
    return train, val


def train(dataset: list[PartInputs], state0: NetworkState, opts: TrainOptions = TrainOptions()
          ) -> TrainResult:
    if not dataset:
        raise ValueError("empty training set")
    state = state0.copy()
    if opts.steps <= 0:
        return TrainResult(state, state.copy())
    train_set, val_set = split_dataset(dataset, opts.val_split, opts.seed)
    rng = np.random.default_rng(opts.seed)
    m = {k: np.zeros_like(v) for k, v in state.params.items()}
    v = {k: np.zeros_like(p) for k, p in state.params.items()}
    b1, b2 = np.float32(opts.beta1), np.float32(opts.beta2)
    best, best_acc = state.copy(), -1.0
    curve = []
    ckdir = Path(opts.checkpoint_dir) if opts.checkpoint_dir else None
    if ckdir:
        ckdir.mkdir(parents=True, exist_ok=True)
    for step in range(1, opts.steps + 1):
        part = train_set[int(rng.integers(len(train_set)))]
        loss, grads = backward(part, state)
        lr_t = opts.lr * np.sqrt(1 - opts.beta2 ** step) / (1 - opts.beta1 ** step)
        for k, g in grads.items():
            g = g.astype(np.float32)
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            state.params[k] = (state.params[k]
                               - np.float32(lr_t) * m[k] / (np.sqrt(v[k]) + np.float32(opts.eps))
                               ).astype(np.float32)
        acc = float("nan")
        if val_set and (step % opts.eval_every == 0 or step == opts.steps):
            acc = accuracy(val_set, state)
            if acc > best_acc:
                best_acc, best = acc, state.copy()
            log.info("step %d loss %.4f val_acc %.4f", step, loss, acc)
        curve.append((step, loss, acc))
        if ckdir and opts.checkpoint_every and step % opts.checkpoint_every == 0:
            save_checkpoint(state, ckdir / f"step_{step:06d}.ckpt")
    if not val_set:
        best = state.copy()
    return TrainResult(state, best, curve, best_acc if val_set else float("nan"))
