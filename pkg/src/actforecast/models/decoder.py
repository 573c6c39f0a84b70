"""GRU decoder with attention over a memory of hidden states."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..nn import Attention, GruCell, Linear, Module
from ..tensor import Tensor
from .vocab import ActionVocabulary


@dataclass
class DecodeResult:
    scores: list[Tensor] = field(default_factory=list)  # 1×(K+1) per step
    weights: list[Tensor] = field(default_factory=list)  # 1×p attention over the memory per step
    inputs: list[np.ndarray] = field(default_factory=list)  # feedback vectors fed at each step

    def score_matrix(self) -> Tensor:
        return T.concat(self.scores, axis=0)

    @property
    def symbols(self) -> list[int]:
        return [int(np.argmax(s.data[0])) for s in self.scores]


class AttnDecoder(Module):
    """g_q = GRU([c_{q-1}; E f_{q-1}], g_{q-1}),  ŷ_q = g_q U + b,  c_q = attend(memory, g_q).

    ``f`` is the feedback vector: the SOS one-hot at the first step, then
    either the one-hot of the ground-truth previous symbol (teacher forcing) or
    softmax(ŷ_{q-1}). ``E`` embeds the feedback into D dimensions; c_0 = 0.
    """

    def __init__(self, hidden_dim: int, vocab: ActionVocabulary):
        self.hidden_dim = hidden_dim
        self.vocab = vocab
        self.embed = Linear(vocab.input_size, hidden_dim)
        self.cell = GruCell(2 * hidden_dim, hidden_dim)
        self.attention = Attention(hidden_dim)
        self.output = Linear(hidden_dim, vocab.output_size)

    def decode(self, memory: Tensor, g0: Tensor, max_steps: int, targets=None, forcing_prob: float = 0.0,
               rng: np.random.Generator | None = None, stop_at_eos: bool = True,
               record_inputs: bool = False) -> DecodeResult:
        """Unroll up to ``max_steps`` steps.

        With ``targets`` the decoder runs exactly ``len(targets)`` steps and
        each next input is teacher-forced with probability ``forcing_prob``.
        Without targets it decodes greedily and stops after emitting EOS when
        ``stop_at_eos`` is set.
        """
        vocab = self.vocab
        out = DecodeResult()
        if targets is not None:
            max_steps = len(targets)
            if forcing_prob > 0 and rng is None:
                raise ValueError("teacher forcing needs an rng")
        if max_steps <= 0:
            return out
        att = self.attention.prepare(memory)
        ug, uc = self.cell.hidden_weights()
        context = Tensor(np.zeros((1, self.hidden_dim)))
        feedback: Tensor = Tensor(vocab.onehot_input(vocab.sos))
        pad = np.zeros((1, 1))
        g = g0
        for q in range(max_steps):
            if record_inputs:
                out.inputs.append(feedback.data.copy())
            xg, xc = self.cell.project_inputs(T.concat([context, self.embed(feedback)], axis=1))
            g = self.cell._step(xg, xc, g, ug, uc)
            y = self.output(g)
            context, w = att(g)
            out.scores.append(y)
            out.weights.append(w)
            if targets is None:
                if stop_at_eos and int(np.argmax(y.data[0])) == vocab.eos:
                    break
                feedback = T.concat([T.softmax(y, axis=1), pad], axis=1)
            else:
                forced = rng.random() < forcing_prob if rng is not None else False
                if forced:
                    feedback = Tensor(vocab.onehot_input(targets[q]))
                else:
                    feedback = T.concat([T.softmax(y, axis=1), pad], axis=1)
        return out
