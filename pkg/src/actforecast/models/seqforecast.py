"""Action-sequence forecaster: bidirectional GRU encoder, attention GRU decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..losses import LossConfig, sequence_loss
from ..nn import Adam, BiEncoder, Module
from ..tensor import Tensor, no_grad
from .decoder import AttnDecoder
from .samples import TrainExample
from .vocab import ActionVocabulary


@dataclass
class Forecast:
    symbols: list[str]
    step_probs: np.ndarray  # steps × K, class probabilities of every decoded step


def _features(x) -> Tensor:
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ContractError(f"observed features must be a non-empty p×d array, got shape {arr.shape}")
    return Tensor(arr)


def class_probs(scores: Tensor, num_classes: int) -> np.ndarray:
    """Softmax over all outputs, restricted to the real-class columns."""
    z = scores.data - scores.data.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p[:, :num_classes]


class SeqForecaster(Module):
    kind = "seqforecast"

    def __init__(self, vocab: ActionVocabulary, feature_dim: int, hidden_dim: int = 512, max_decode_len: int = 20):
        self.vocab = vocab
        self.feature_dim, self.hidden_dim = feature_dim, hidden_dim
        self.max_decode_len = max_decode_len
        self.encoder = BiEncoder(feature_dim, hidden_dim)
        self.decoder = AttnDecoder(hidden_dim, vocab)

    def config(self) -> dict:
        return {"kind": self.kind, "classes": list(self.vocab.classes), "feature_dim": self.feature_dim,
                "hidden_dim": self.hidden_dim, "max_decode_len": self.max_decode_len}

    def encode(self, x) -> Tensor:
        return self.encoder(_features(x))

    def targets(self, ex: TrainExample) -> list[int]:
        if not ex.future:
            raise ContractError(f"example {ex.video_id!r} has an empty future sequence")
        return self.vocab.encode(ex.future) + [self.vocab.eos]

    def loss(self, ex: TrainExample, config: LossConfig, rng=None, forcing_prob: float = 0.5) -> Tensor:
        targets = self.targets(ex)
        memory = self.encode(ex.features)
        res = self.decoder.decode(memory, memory[-1:], len(targets), targets, forcing_prob, rng)
        return sequence_loss(res.score_matrix(), targets, len(ex.observed), config)

    def forecast(self, x, max_len: int | None = None) -> Forecast:
        cap = self.max_decode_len if max_len is None else max_len
        with no_grad():
            if cap <= 0:
                return Forecast([], np.zeros((0, self.vocab.num_classes)))
            memory = self.encode(x)
            res = self.decoder.decode(memory, memory[-1:], cap)
        symbols = [s for s in res.symbols if s != self.vocab.eos]
        # decoding stops at the first EOS, so every symbol before it is a class
        return Forecast(self.vocab.decode(symbols), class_probs(res.score_matrix(), self.vocab.num_classes))


def forecast_sequence(model: SeqForecaster, x, max_len: int | None = None) -> list[str]:
    return model.forecast(x, max_len).symbols


def train_step(model: Module, optimizer: Adam, ex: TrainExample, config: LossConfig,
               rng: np.random.Generator | None, forcing_prob: float = 0.5, **kwargs) -> float:
    """One optimizer update on one example; returns the loss before the update."""
    optimizer.zero_grad()
    loss = model.loss(ex, config, rng=rng, forcing_prob=forcing_prob, **kwargs)
    loss.backward()
    optimizer.step()
    return loss.item()


def evaluate_loss(model: Module, ex: TrainExample, config: LossConfig, forcing_prob: float = 0.0, **kwargs) -> float:
    with no_grad():
        return model.loss(ex, config, rng=np.random.default_rng(0), forcing_prob=forcing_prob, **kwargs).item()


__all__ = ["SeqForecaster", "Forecast", "forecast_sequence", "train_step", "evaluate_loss", "class_probs"]
