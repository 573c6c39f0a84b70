"""Per-example training loop with resumable, seed-derived randomness."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..data import ProtocolSplit, VideoRecord
from ..errors import ConfigError
from ..losses import LossConfig
from ..nn import Adam, Module, init_params
from .baselines import RandomForecaster
from .samples import TrainExample, augment_sequences, protocol_examples
from .seqforecast import train_step
from .weak import WeakForecaster

# substream ids; np.random.default_rng([seed, stream, epoch]) keeps them independent
INIT, FORCING, ORDER, EVAL = 1, 2, 3, 4

FRAME_KINDS = ("weak", "supervised")
SEQUENCE_KINDS = ("seqforecast", "mlp", "lstm", "random")
DEFAULT_TRAIN_PROTOCOLS = tuple(ProtocolSplit(p, q) for p in (20, 30) for q in (10, 20, 30, 50))


def substream(seed: int, stream: int, epoch: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, epoch])


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    forcing_prob: float = 0.5
    gamma: float = 2.0
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not 0.0 <= self.forcing_prob <= 1.0:
            raise ConfigError("teacher-forcing probability must lie in [0, 1]")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


def training_examples(kind: str, records: Sequence[VideoRecord], protocols=None) -> list[TrainExample]:
    """Augmented prefixes for sequence models, protocol windows for frame models."""
    if kind in FRAME_KINDS:
        protocols = DEFAULT_TRAIN_PROTOCOLS if not protocols else protocols
        return [ex for r in records for ex in protocol_examples(r, protocols)]
    if protocols:
        raise ConfigError(f"{kind} trains on augmented action prefixes; a p:q protocol does not apply to it")
    return [ex for r in records for ex in augment_sequences(r)]


def initialize(model: Module, seed: int) -> Module:
    return init_params(model, substream(seed, INIT))


def fit(model: Module, examples: Sequence[TrainExample], cfg: TrainConfig, optimizer: Adam | None = None,
        start_epoch: int = 0, log_path: str | Path | None = None,
        on_epoch: Callable[[int, float], None] | None = None) -> tuple[Adam, list[tuple[int, float]]]:
    """Train from ``start_epoch`` up to ``cfg.epochs``; returns the optimizer and (epoch, mean loss) rows.

    Epoch e shuffles with substream (seed, ORDER, e) and draws teacher-forcing
    coins from (seed, FORCING, e), so a run resumed at epoch e from a
    checkpoint repeats exactly what the uninterrupted run would have done.
    """
    optimizer = optimizer or Adam(model.named_parameters(), lr=cfg.lr)
    history = []
    if log_path is not None and start_epoch == 0:
        Path(log_path).write_text("epoch,mean_loss\n")
    if isinstance(model, RandomForecaster) or not examples:
        return optimizer, history
    extra = {"gamma": cfg.gamma} if isinstance(model, WeakForecaster) else {}
    for epoch in range(start_epoch, cfg.epochs):
        order = substream(cfg.seed, ORDER, epoch).permutation(len(examples))
        coins = substream(cfg.seed, FORCING, epoch)
        losses = [train_step(model, optimizer, examples[i], cfg.loss, coins, cfg.forcing_prob, **extra)
                  for i in order]
        mean = float(np.mean(losses))
        history.append((epoch + 1, mean))
        if log_path is not None:
            with open(log_path, "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow([epoch + 1, repr(mean)])
        if on_epoch is not None:
            on_epoch(epoch + 1, mean)
    return optimizer, history
