"""Frame-level future forecasting from coarse (weak) or per-frame (supervised) labels.

The encoder reads the observed frames into H^o. A plain GRU, started from the
last encoder state and fed its own projected output, produces Z sudo states
H^u standing in for the unseen frames. Two attention decoders turn H^o and
H^u into the observed and future action sequences; attention from the future
decoder onto H^u is what assigns actions to individual future frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..errors import ContractError
from ..losses import LossConfig, weak_joint_loss
from ..nn import BiEncoder, GruCell, Linear, Module
from ..tensor import Tensor, no_grad
from .decoder import AttnDecoder
from .samples import TrainExample
from .seqforecast import _features, class_probs
from .vocab import ActionVocabulary

MODES = ("weak", "supervised")


class StateDecoder(Module):
    """h^u_t = GRU(W h^u_{t-1}, h^u_{t-1}) with h^u_0 = h^o_p; no attention."""

    def __init__(self, hidden_dim: int):
        self.cell = GruCell(hidden_dim, hidden_dim)
        self.state_feed = Linear(hidden_dim, hidden_dim)

    def __call__(self, h0: Tensor, steps: int) -> Tensor:
        ug, uc = self.cell.hidden_weights()
        h, states = h0, []
        for _ in range(steps):
            xg, xc = self.cell.project_inputs(self.state_feed(h))
            h = self.cell._step(xg, xc, h, ug, uc)
            states.append(h)
        return T.concat(states, axis=0)


@dataclass
class FrameForecast:
    labels: list[str]  # one per future frame
    scores: np.ndarray  # Z × K frame scores
    sequence: list[str]  # decoded Ŷ^u (empty in supervised mode)
    empty_decode: bool = False


class WeakForecaster(Module):
    kind = "weak"

    def __init__(self, vocab: ActionVocabulary, feature_dim: int, hidden_dim: int | None = None,
                 mode: str = "weak", max_decode_len: int = 20):
        if mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
        hidden_dim = feature_dim if hidden_dim is None else hidden_dim
        if hidden_dim != feature_dim:
            # X, H^o and H^u share one dimension in this architecture
            raise ContractError(f"hidden dim {hidden_dim} must equal feature dim {feature_dim}")
        self.vocab, self.mode = vocab, mode
        self.feature_dim = self.hidden_dim = feature_dim
        self.max_decode_len = max_decode_len
        self.encoder = BiEncoder(feature_dim, feature_dim)
        self.dec_obs = AttnDecoder(feature_dim, vocab)
        self.dec_state = StateDecoder(feature_dim)
        self.dec_future = AttnDecoder(feature_dim, vocab)

    def config(self) -> dict:
        return {"kind": self.mode, "classes": list(self.vocab.classes), "feature_dim": self.feature_dim,
                "hidden_dim": self.hidden_dim, "max_decode_len": self.max_decode_len}

    def sudo_states(self, x, num_future: int) -> tuple[Tensor, Tensor]:
        """(H^o, H^u) for observed features ``x`` and ``num_future`` future frames."""
        if num_future <= 0:
            raise ContractError(f"number of future frames must be positive, got {num_future}")
        h_obs = self.encoder(_features(x))
        return h_obs, self.dec_state(h_obs[-1:], num_future)

    def _targets(self, ex: TrainExample) -> tuple[list[int], list[int]]:
        v = self.vocab
        if self.mode == "weak":
            if not ex.observed or not ex.future:
                raise ContractError(f"example {ex.video_id!r} needs both observed and future actions")
            return v.encode(ex.observed) + [v.eos], v.encode(ex.future) + [v.eos]
        if not ex.observed_frames or not ex.future_frames:
            raise ContractError(f"supervised example {ex.video_id!r} needs per-frame labels")
        return v.encode(ex.observed_frames), v.encode(ex.future_frames)

    def loss(self, ex: TrainExample, config: LossConfig, rng=None, forcing_prob: float = 0.5,
             gamma: float = 2.0) -> Tensor:
        obs_t, fut_t = self._targets(ex)
        if ex.num_future_frames <= 0:
            raise ContractError(f"example {ex.video_id!r} has no future frames")
        h_obs, h_fut = self.sudo_states(ex.features, ex.num_future_frames)
        obs = self.dec_obs.decode(h_obs, h_obs[-1:], len(obs_t), obs_t, forcing_prob, rng)
        fut = self.dec_future.decode(h_fut, h_fut[-1:], len(fut_t), fut_t, forcing_prob, rng)
        p = len(ex.observed) if self.mode == "weak" else len(obs_t)
        return weak_joint_loss(obs.score_matrix(), obs_t, fut.score_matrix(), fut_t, gamma, config, p)

    def forecast_frames(self, x, num_future: int, raw: bool = False) -> FrameForecast:
        if self.mode == "weak":
            return forecast_frames_weak(self, x, num_future, raw)
        probs = _supervised_probs(self, x, num_future)
        return FrameForecast([self.vocab.classes[i] for i in np.argmax(probs, axis=1)], probs, [])


def frame_scores(weights: np.ndarray, probs: np.ndarray, raw: bool = False) -> np.ndarray:
    """s_t = Σ_q α_t^q p_q for a Q×Z attention matrix and Q×K step scores.

    Unless ``raw``, each frame's column of weights is renormalized over q so
    s_t is a convex combination of the step score vectors.
    """
    if raw:
        return weights.T @ probs
    mix = weights / weights.sum(axis=0, keepdims=True)
    return mix.T @ probs


def forecast_frames_weak(model: WeakForecaster, x, num_future: int, raw: bool = False) -> FrameForecast:
    v = model.vocab
    with no_grad():
        _, h_fut = model.sudo_states(x, num_future)
        res = model.dec_future.decode(h_fut, h_fut[-1:], model.max_decode_len)
    symbols = res.symbols
    probs = class_probs(res.score_matrix(), v.num_classes)
    weights = np.concatenate([w.data for w in res.weights], axis=0)
    keep = [q for q, s in enumerate(symbols) if s != v.eos]
    empty = not keep
    if empty:
        # nothing decoded before EOS: every frame takes the EOS-step class scores
        scores = np.repeat(probs[:1], num_future, axis=0)
    else:
        scores = frame_scores(weights[keep], probs[keep], raw)
    labels = [v.classes[i] for i in np.argmax(scores, axis=1)]
    return FrameForecast(labels, scores, v.decode([symbols[q] for q in keep]), empty)


def _supervised_probs(model: WeakForecaster, x, num_future: int) -> np.ndarray:
    if model.mode != "supervised":
        raise ContractError("per-frame decoding needs a model trained with frame-level targets")
    with no_grad():
        _, h_fut = model.sudo_states(x, num_future)
        res = model.dec_future.decode(h_fut, h_fut[-1:], num_future, stop_at_eos=False)
    # EOS is never a training target here, so only real classes compete
    return class_probs(res.score_matrix(), model.vocab.num_classes)


def forecast_frames_supervised(model: WeakForecaster, x, num_future: int) -> list[str]:
    """Exactly ``num_future`` labels, one per sudo state."""
    probs = _supervised_probs(model, x, num_future)
    return [model.vocab.classes[i] for i in np.argmax(probs, axis=1)]


def train_step_weak(model: WeakForecaster, optimizer, ex: TrainExample, gamma: float, config: LossConfig,
                    rng, forcing_prob: float = 0.5) -> float:
    optimizer.zero_grad()
    loss = model.loss(ex, config, rng=rng, forcing_prob=forcing_prob, gamma=gamma)
    loss.backward()
    optimizer.step()
    return loss.item()
