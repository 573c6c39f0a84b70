"""Recurrent and attention layers built on :mod:`actforecast.tensor`.

Vectors are carried as 1×n row matrices so every projection is a plain
``x @ W`` product.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor


def parameter(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Parameter container; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise ContractError(f"state is missing parameters: {missing}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter {name}: expected shape {p.shape}, got {arr.shape}")
            p.data[...] = arr


def init_params(module: Module, seed: int | np.random.Generator) -> Module:
    """Draw every weight matrix from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.

    Matrices are stored as (fan_in, fan_out); bias attributes are the ones whose
    name starts with ``b``. Parameters are visited in a fixed order, so the same
    seed always reproduces the same bundle.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for name, p in module.named_parameters():
        if name.rsplit(".", 1)[-1].startswith("b"):
            p.data[...] = 0.0
        else:
            bound = 1.0 / np.sqrt(p.data.shape[0])
            p.data[...] = rng.uniform(-bound, bound, size=p.data.shape)
    return module


def _row(x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 1:
        return x.reshape(1, x.shape[0])
    return x


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, bias: bool = True):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = parameter(in_dim, out_dim)
        self.bias = parameter(1, out_dim) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        x = _row(x)
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"Linear({self.in_dim}->{self.out_dim}) got input of shape {x.shape}")
        y = x @ self.weight
        if self.bias is None:
            return y
        b = self.bias if x.shape[0] == 1 else self.bias.broadcast_to((x.shape[0], self.out_dim))
        return y + b


class GruCell(Module):
    """Single-layer GRU; gate columns are packed as [update z | reset r | candidate n].

        z = σ(x Wz + h Uz + bz),  r = σ(x Wr + h Ur + br)
        n = tanh(x Wn + (r ⊙ h) Un + bn)
        h' = (1 - z) ⊙ h + z ⊙ n
    """

    def __init__(self, input_dim: int, hidden_dim: int):
        if input_dim < 1 or hidden_dim < 1:
            raise ContractError("GruCell dimensions must be positive")
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        self.w_input = parameter(input_dim, 3 * hidden_dim)
        self.w_hidden = parameter(hidden_dim, 3 * hidden_dim)
        self.bias = parameter(1, 3 * hidden_dim)

    def project_inputs(self, xs: Tensor) -> tuple[Tensor, Tensor]:
        """Input-side gate pre-activations for a whole sequence (p×in → p×2D, p×D)."""
        xs = _row(xs)
        if xs.shape[1] != self.input_dim:
            raise ShapeError(f"GruCell expects inputs of width {self.input_dim}, got {xs.shape}")
        b = self.bias if xs.shape[0] == 1 else self.bias.broadcast_to((xs.shape[0], 3 * self.hidden_dim))
        pre = xs @ self.w_input + b
        d = self.hidden_dim
        return pre[:, : 2 * d], pre[:, 2 * d:]

    def hidden_weights(self) -> tuple[Tensor, Tensor]:
        d = self.hidden_dim
        return self.w_hidden[:, : 2 * d], self.w_hidden[:, 2 * d:]

    def _step(self, x_gates: Tensor, x_cand: Tensor, h: Tensor, u_gates: Tensor, u_cand: Tensor) -> Tensor:
        d = self.hidden_dim
        zr = T.sigmoid(x_gates + h @ u_gates)
        z, r = zr[:, :d], zr[:, d:]
        n = T.tanh(x_cand + (r * h) @ u_cand)
        return h + z * (n - h)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        x, h = _row(x), _row(h)
        if h.shape != (1, self.hidden_dim):
            raise ShapeError(f"GruCell expects hidden state (1, {self.hidden_dim}), got {h.shape}")
        xg, xc = self.project_inputs(x)
        ug, uc = self.hidden_weights()
        return self._step(xg, xc, h, ug, uc)

    def run(self, xs: Tensor, h0: Tensor | None = None, reverse: bool = False) -> list[Tensor]:
        """Unroll over the rows of ``xs``; returns states in input-position order."""
        xs = _row(xs)
        p = xs.shape[0]
        h = _row(h0) if h0 is not None else Tensor(np.zeros((1, self.hidden_dim)))
        xg, xc = self.project_inputs(xs)
        ug, uc = self.hidden_weights()
        states: list[Tensor | None] = [None] * p
        order = range(p - 1, -1, -1) if reverse else range(p)
        for t in order:
            h = self._step(xg[t:t + 1], xc[t:t + 1], h, ug, uc)
            states[t] = h
        return states  # type: ignore[return-value]


def gru_step(cell: GruCell, x: Tensor, h: Tensor) -> Tensor:
    return cell(x, h)


class LstmCell(Module):
    """LSTM with gate columns [input i | forget f | candidate g | output o]."""

    def __init__(self, input_dim: int, hidden_dim: int):
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        self.w_input = parameter(input_dim, 4 * hidden_dim)
        self.w_hidden = parameter(hidden_dim, 4 * hidden_dim)
        self.bias = parameter(1, 4 * hidden_dim)

    def run(self, xs: Tensor) -> tuple[Tensor, Tensor]:
        xs = _row(xs)
        d = self.hidden_dim
        b = self.bias if xs.shape[0] == 1 else self.bias.broadcast_to((xs.shape[0], 4 * d))
        pre = xs @ self.w_input + b
        h = Tensor(np.zeros((1, d)))
        c = Tensor(np.zeros((1, d)))
        for t in range(xs.shape[0]):
            a = pre[t:t + 1] + h @ self.w_hidden
            i, f = T.sigmoid(a[:, :d]), T.sigmoid(a[:, d:2 * d])
            g, o = T.tanh(a[:, 2 * d:3 * d]), T.sigmoid(a[:, 3 * d:])
            c = f * c + i * g
            h = o * T.tanh(c)
        return h, c


class BiEncoder(Module):
    """Bidirectional GRU whose per-position [forward; backward] states are merged by a linear map."""

    def __init__(self, input_dim: int, hidden_dim: int):
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        self.forward_cell = GruCell(input_dim, hidden_dim)
        self.backward_cell = GruCell(input_dim, hidden_dim)
        self.merge = Linear(2 * hidden_dim, hidden_dim)

    def directional_states(self, xs) -> tuple[Tensor, Tensor]:
        xs = _row(xs)
        if xs.shape[0] < 1:
            raise ContractError("cannot encode an empty sequence")
        fwd = self.forward_cell.run(xs)
        bwd = self.backward_cell.run(xs, reverse=True)
        return T.concat(fwd, axis=0), T.concat(bwd, axis=0)

    def __call__(self, xs) -> Tensor:
        fwd, bwd = self.directional_states(xs)
        return self.merge(T.concat([fwd, bwd], axis=1))


def encode(enc: BiEncoder, xs) -> Tensor:
    """Merged per-position states H (p×D) of the observed frames."""
    return enc(xs)


class Attention(Module):
    """Additive attention: score_i = tanh([h_i; g] W_att + b) V, softmax-normalized over i.

    ``W_att`` is stored as one (2D×D) matrix; its top half multiplies the
    memory rows and is applied once per memory via :meth:`prepare`.
    """

    def __init__(self, hidden_dim: int):
        self.hidden_dim = hidden_dim
        self.w_att = parameter(2 * hidden_dim, hidden_dim)
        self.b_att = parameter(1, hidden_dim)
        self.v = parameter(hidden_dim, 1)

    def prepare(self, memory: Tensor) -> "PreparedAttention":
        return PreparedAttention(self, memory)

    def __call__(self, memory: Tensor, g: Tensor) -> tuple[Tensor, Tensor]:
        return self.prepare(memory)(g)


class PreparedAttention:
    """Attention bound to a fixed memory, reusing the memory-side projection across decoder steps."""

    def __init__(self, att: Attention, memory: Tensor):
        d = att.hidden_dim
        if memory.ndim != 2 or memory.shape[1] != d or memory.shape[0] < 1:
            raise ShapeError(f"attention memory must be p×{d} with p ≥ 1, got {memory.shape}")
        self.memory = memory
        self.p = memory.shape[0]
        self.v = att.v
        bias = att.b_att if self.p == 1 else att.b_att.broadcast_to((self.p, d))
        self.keys = memory @ att.w_att[:d] + bias
        self.w_query = att.w_att[d:]

    def __call__(self, g: Tensor) -> tuple[Tensor, Tensor]:
        q = _row(g) @ self.w_query
        if self.p > 1:
            q = q.broadcast_to((self.p, q.shape[1]))
        scores = T.tanh(self.keys + q) @ self.v
        weights = T.softmax(scores.reshape(1, self.p), axis=1)
        return weights @ self.memory, weights


def attend(att: Attention, memory: Tensor, g: Tensor) -> tuple[Tensor, Tensor]:
    """Context vector (1×D) and attention weights (1×p) of decoder state ``g`` over ``memory``."""
    return att(memory, g)


class Adam:
    """Adaptive-moment optimizer over a fixed, ordered list of named parameters."""

    def __init__(self, named_params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        arrays = {}
        for name in self.m:
            arrays[f"m/{name}"] = self.m[name].copy()
            arrays[f"v/{name}"] = self.v[name].copy()
        return {"t": self.t, "arrays": arrays}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for name in self.m:
            self.m[name][...] = state["arrays"][f"m/{name}"]
            self.v[name][...] = state["arrays"][f"v/{name}"]
