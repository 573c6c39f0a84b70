"""Reference forecasters: mean-pooled MLP, LSTM and a random scorer.

MLP and LSTM predict only the next action, so their forecast is a one-symbol
sequence. The random baseline draws uniform score vectors step by step.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..errors import ContractError
from ..losses import LossConfig, step_cross_entropy
from ..nn import Linear, LstmCell, Module
from ..tensor import Tensor, no_grad
from .samples import TrainExample
from .seqforecast import Forecast, _features, class_probs
from .vocab import ActionVocabulary


class _NextAction(Module):
    kind = ""

    def __init__(self, vocab: ActionVocabulary, feature_dim: int, hidden_dim: int = 512):
        self.vocab = vocab
        self.feature_dim, self.hidden_dim = feature_dim, hidden_dim

    def config(self) -> dict:
        return {"kind": self.kind, "classes": list(self.vocab.classes), "feature_dim": self.feature_dim,
                "hidden_dim": self.hidden_dim}

    def scores(self, x) -> Tensor:
        raise NotImplementedError

    def loss(self, ex: TrainExample, config: LossConfig | None = None, rng=None, forcing_prob: float = 0.0) -> Tensor:
        if not ex.future:
            raise ContractError(f"example {ex.video_id!r} has no next action")
        return step_cross_entropy(self.scores(ex.features), [self.vocab.index(ex.future[0])]).sum()

    def forecast(self, x, max_len: int | None = None) -> Forecast:
        if max_len is not None and max_len <= 0:
            return Forecast([], np.zeros((0, self.vocab.num_classes)))
        with no_grad():
            probs = class_probs(self.scores(x), self.vocab.num_classes)
        return Forecast([self.vocab.classes[int(np.argmax(probs[0]))]], probs)


class MlpForecaster(_NextAction):
    """mean-pool over frames, then two tanh layers and a class projection."""

    kind = "mlp"

    def __init__(self, vocab: ActionVocabulary, feature_dim: int, hidden_dim: int = 512):
        super().__init__(vocab, feature_dim, hidden_dim)
        self.layer1 = Linear(feature_dim, hidden_dim)
        self.layer2 = Linear(hidden_dim, hidden_dim)
        self.output = Linear(hidden_dim, vocab.num_classes)

    def scores(self, x) -> Tensor:
        pooled = T.mean(_features(x), axis=0).reshape(1, self.feature_dim)
        return self.output(T.tanh(self.layer2(T.tanh(self.layer1(pooled)))))


class LstmForecaster(_NextAction):
    kind = "lstm"

    def __init__(self, vocab: ActionVocabulary, feature_dim: int, hidden_dim: int = 512):
        super().__init__(vocab, feature_dim, hidden_dim)
        self.cell = LstmCell(feature_dim, hidden_dim)
        self.output = Linear(hidden_dim, vocab.num_classes)

    def scores(self, x) -> Tensor:
        h, _ = self.cell.run(_features(x))
        return self.output(h)


class RandomForecaster(Module):
    """Uniform random score vectors, one per step.

    The number of steps is the reference length when the caller supplies it,
    otherwise a uniform draw from 1..max_decode_len.
    """

    kind = "random"

    def __init__(self, vocab: ActionVocabulary, max_decode_len: int = 20, seed: int = 0):
        self.vocab = vocab
        self.max_decode_len = max_decode_len
        self.seed = seed

    def config(self) -> dict:
        return {"kind": self.kind, "classes": list(self.vocab.classes), "max_decode_len": self.max_decode_len,
                "seed": self.seed}

    def forecast(self, x, max_len: int | None = None, rng: np.random.Generator | None = None,
                 length: int | None = None) -> Forecast:
        if _features(x).shape[0] < 1:
            raise ContractError("empty input")
        rng = np.random.default_rng(self.seed) if rng is None else rng
        cap = self.max_decode_len if max_len is None else max_len
        steps = min(length, cap) if length is not None else int(rng.integers(1, cap + 1)) if cap > 0 else 0
        scores = rng.random((steps, self.vocab.num_classes))
        probs = scores / scores.sum(axis=1, keepdims=True) if steps else scores
        return Forecast([self.vocab.classes[int(i)] for i in np.argmax(scores, axis=1)], probs)


def mlp_next_action(model: MlpForecaster, x) -> str:
    return model.forecast(x).symbols[0]


def lstm_next_action(model: LstmForecaster, x) -> str:
    return model.forecast(x).symbols[0]


def random_forecast(vocab: ActionVocabulary, rng: np.random.Generator, length: int | None = None,
                    max_decode_len: int = 20) -> list[str]:
    return RandomForecaster(vocab, max_decode_len).forecast(np.zeros((1, 1)), rng=rng, length=length).symbols
