"""Training objectives: cross-entropy, the horizon/observation weighted sequence
loss, the debiased Sinkhorn divergence between action distributions, and the
combinations used by the forecasting models.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import ContractError, ConvergenceWarning, ShapeError
from .tensor import Tensor

LOSS_BASES = ("ce", "un-past", "un-future", "un-both")
LOSS_VARIANTS = LOSS_BASES + ("ot",) + tuple(f"{b}+ot" for b in LOSS_BASES)


@dataclass(frozen=True)
class UncertaintyParams:
    observed: int  # number of observed actions
    future: int  # number of predicted symbols (decoder steps)

    def __post_init__(self):
        if self.observed < 1 or self.future < 1:
            raise ContractError(f"uncertainty counts must be ≥ 1, got P={self.observed}, N={self.future}")

    @property
    def observation_factor(self) -> float:
        return 1.0 - math.exp(-self.observed / self.future)


@dataclass(frozen=True)
class OtParams:
    epsilon: float = 0.05
    max_iters: int = 200
    tol: float = 1e-6
    beta: float = 0.001
    debiased: bool = True
    scaling: float = 0.5  # geometric factor of the epsilon-annealing schedule
    unroll: bool = True  # differentiate through every iteration; False uses the converged plan

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ContractError("epsilon must be positive")
        if self.max_iters < 1:
            raise ContractError("max_iters must be ≥ 1")
        if self.beta < 0:
            raise ContractError("beta must be non-negative")
        if not 0.0 < self.scaling < 1.0:
            raise ContractError("scaling must lie in (0, 1)")


@dataclass
class DiscreteMeasure:
    """Σ_i w_i δ_{x_i}; ``points`` is n×d (Tensor or array), ``weights`` sum to one."""

    points: Tensor
    weights: np.ndarray

    def __post_init__(self):
        if not isinstance(self.points, Tensor):
            self.points = Tensor(self.points)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ShapeError(f"measure support must be a non-empty n×d array, got {self.points.shape}")
        if self.weights.shape != (self.points.shape[0],):
            raise ShapeError(f"{self.points.shape[0]} points but weights of shape {self.weights.shape}")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ContractError("measure weights must be non-negative and sum to 1")

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))


@dataclass
class TransportPlan:
    plan: np.ndarray
    cost_matrix: np.ndarray

    @property
    def cost(self) -> float:
        return float((self.plan * self.cost_matrix).sum())


@dataclass
class OtResult:
    value: Tensor
    converged: bool
    iterations: int
    transport: TransportPlan
    terms: dict = field(default_factory=dict)


# ------------------------------------------------------------------ basics


def cross_entropy(scores, target: int) -> Tensor:
    """-log softmax(scores)[target] for a single score vector."""
    scores = scores if isinstance(scores, Tensor) else Tensor(scores)
    row = scores.reshape(1, scores.size)
    return step_cross_entropy(row, [target]).reshape(())


def step_cross_entropy(scores: Tensor, targets) -> Tensor:
    """Per-row cross-entropy of an N×C score matrix against N class indices → Tensor[N]."""
    n, c = scores.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise ContractError(f"{n} score rows but {targets.size} targets")
    if np.any(targets < 0) or np.any(targets >= c):
        raise ContractError(f"target index out of range [0, {c})")
    logp = T.log_softmax(scores, axis=1)
    return -logp[np.arange(n), targets]


def horizon_weights(n: int) -> np.ndarray:
    """exp(-q) for q = 1..n."""
    return np.exp(-np.arange(1, n + 1, dtype=np.float64))


def uncertainty_loss(step_losses: Tensor, params: UncertaintyParams, normalized: bool = False) -> Tensor:
    """(1 - exp(-P/N)) Σ_q exp(-q) L_q, optionally divided by N."""
    if step_losses.shape != (params.future,):
        raise ContractError(f"expected {params.future} step losses, got shape {step_losses.shape}")
    total = (step_losses * horizon_weights(params.future)).sum() * params.observation_factor
    return total * (1.0 / params.future) if normalized else total


# --------------------------------------------------------------- Sinkhorn


def _annealing_schedule(diameter: float, eps: float, scaling: float) -> list[float]:
    sched, e = [], max(diameter, eps)
    while e > eps:
        sched.append(e)
        e *= scaling
    sched.append(eps)
    return sched


def _log_weights(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(w)


def _softmin(eps: float, cost: np.ndarray, log_w: np.ndarray, h: np.ndarray) -> np.ndarray:
    # -eps * log Σ_j w_j exp((h_j - C_ij)/eps), row-wise
    z = log_w[None, :] + (h[None, :] - cost) / eps
    m = z.max(axis=1, keepdims=True)
    return -eps * (np.log(np.exp(z - m).sum(axis=1)) + m[:, 0])


def _softmin_tensor(eps: float, cost: Tensor, log_w: np.ndarray, h: Tensor) -> Tensor:
    n, m = cost.shape
    z = (h.reshape(1, m).broadcast_to((n, m)) - cost) * (1.0 / eps) + np.broadcast_to(log_w, (n, m))
    return T.logsumexp(z, axis=1) * (-eps)


def _row_violation(cost, log_a, log_b, f, g, eps) -> float:
    log_plan = log_a[:, None] + log_b[None, :] + (f[:, None] + g[None, :] - cost) / eps
    return float(np.abs(np.exp(log_plan).sum(axis=1) - np.exp(log_a)).sum())


def _plan(cost, log_a, log_b, f, g, eps) -> np.ndarray:
    return np.exp(log_a[:, None] + log_b[None, :] + (f[:, None] + g[None, :] - cost) / eps)


def entropic_ot(x: Tensor, y: Tensor, a: np.ndarray, b: np.ndarray, params: OtParams):
    """Entropic OT cost <a, f> + <b, g> with cost ‖x_i - y_j‖₂, via annealed log-domain Sinkhorn.

    Returns (value, plan, iterations, converged). With ``params.unroll`` the
    value carries a graph through every Sinkhorn update; otherwise the
    potentials are iterated outside the graph and the value is attached as
    <P*, C> plus a constant, whose gradient is the converged plan.
    """
    eps = params.epsilon
    cost_t = T.cdist(x, y)
    cost = cost_t.data
    log_a, log_b = _log_weights(a), _log_weights(b)
    sched = _annealing_schedule(float(cost.max()), eps, params.scaling)

    if params.unroll and cost_t.requires_grad:
        g = Tensor(np.zeros(len(b)))
        for e in sched[:-1]:
            f = _softmin_tensor(e, cost_t, log_b, g)
            g = _softmin_tensor(e, cost_t.T, log_a, f)
        iters, converged = 0, False
        while iters < params.max_iters:
            f = _softmin_tensor(eps, cost_t, log_b, g)
            g = _softmin_tensor(eps, cost_t.T, log_a, f)
            iters += 1
            if _row_violation(cost, log_a, log_b, f.data, g.data, eps) < params.tol:
                converged = True
                break
        value = (f * a).sum() + (g * b).sum()
        return value, _plan(cost, log_a, log_b, f.data, g.data, eps), iters, converged

    g = np.zeros(len(b))
    for e in sched[:-1]:
        f = _softmin(e, cost, log_b, g)
        g = _softmin(e, cost.T, log_a, f)
    iters, converged = 0, False
    while iters < params.max_iters:
        f = _softmin(eps, cost, log_b, g)
        g = _softmin(eps, cost.T, log_a, f)
        iters += 1
        if _row_violation(cost, log_a, log_b, f, g, eps) < params.tol:
            converged = True
            break
    plan = _plan(cost, log_a, log_b, f, g, eps)
    return _attach(cost_t, float(a @ f + b @ g), plan), plan, iters, converged


def _attach(cost_t: Tensor, dual: float, plan: np.ndarray) -> Tensor:
    """Value ``dual`` whose gradient w.r.t. the cost matrix is ``plan`` (envelope theorem)."""
    if not cost_t.requires_grad:
        return Tensor(dual)
    linear = (cost_t * plan).sum()
    return linear + (dual - float(linear.data))


def _symmetric_ot(x: Tensor, a: np.ndarray, params: OtParams):
    """OT_ε(μ, μ) with the averaged update f <- (f + softmin(f)) / 2.

    Both potentials coincide for a measure against itself; the plain
    alternating scheme can drift along f - g for a long time when points are
    far apart relative to ε, while the averaged iteration settles quickly.
    """
    eps = params.epsilon
    cost_t = T.cdist(x, x)
    cost = cost_t.data
    log_a = _log_weights(a)
    sched = _annealing_schedule(float(cost.max()), eps, params.scaling)
    unroll = params.unroll and cost_t.requires_grad
    f = Tensor(np.zeros(len(a))) if unroll else np.zeros(len(a))
    soft = _softmin_tensor if unroll else _softmin
    for e in sched[:-1]:
        f = (f + soft(e, cost_t if unroll else cost, log_a, f)) * 0.5
    iters, converged = 0, False
    while iters < params.max_iters:
        f = (f + soft(eps, cost_t if unroll else cost, log_a, f)) * 0.5
        iters += 1
        fd = f.data if unroll else f
        if _row_violation(cost, log_a, log_a, fd, fd, eps) < params.tol:
            converged = True
            break
    fd = f.data if unroll else f
    plan = _plan(cost, log_a, log_a, fd, fd, eps)
    value = (f * a).sum() * 2.0 if unroll else _attach(cost_t, float(2.0 * a @ fd), plan)
    return value, plan, iters, converged


def sinkhorn_divergence(mu: DiscreteMeasure, nu: DiscreteMeasure, params: OtParams = OtParams()) -> OtResult:
    """OT_ε(μ, ν), or S_ε = OT_ε(μ,ν) - ½OT_ε(μ,μ) - ½OT_ε(ν,ν) when ``params.debiased``."""
    x, y = mu.points, nu.points
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"measures live in different dimensions: {x.shape[1]} vs {y.shape[1]}")
    cross, plan, iters, ok = entropic_ot(x, y, mu.weights, nu.weights, params)
    terms = {"cross": float(cross.data)}
    value = cross
    if params.debiased:
        self_x, _, ix, okx = _symmetric_ot(x, mu.weights, params)
        self_y, _, iy, oky = _symmetric_ot(y, nu.weights, params)
        terms.update(self_mu=float(self_x.data), self_nu=float(self_y.data))
        value = cross - self_x * 0.5 - self_y * 0.5
        iters, ok = max(iters, ix, iy), ok and okx and oky
    if not ok:
        warnings.warn(f"Sinkhorn did not reach tol={params.tol} in {params.max_iters} iterations",
                      ConvergenceWarning, stacklevel=2)
    transport = TransportPlan(plan, T.cdist(x.data, y.data).data)
    return OtResult(value.reshape(()), ok, iters, transport, terms)


def sequence_ot_loss(pred_probs: Tensor, targets, params: OtParams = OtParams()) -> Tensor:
    """Sinkhorn divergence between predicted rows (uniform weights) and one-hot target rows."""
    if pred_probs.ndim != 2 or pred_probs.shape[0] < 1:
        raise ContractError("prediction must be a non-empty N×C matrix")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size < 1:
        raise ContractError("target sequence is empty")
    n_classes = pred_probs.shape[1]
    if np.any(targets < 0) or np.any(targets >= n_classes):
        raise ContractError(f"target index out of range [0, {n_classes})")
    onehot = np.eye(n_classes)[targets]
    mu = DiscreteMeasure.uniform(pred_probs)
    nu = DiscreteMeasure.uniform(Tensor(onehot))
    return sinkhorn_divergence(mu, nu, params).value


# ------------------------------------------------------------ combinations


@dataclass(frozen=True)
class LossConfig:
    variant: str = "ce"
    ot: OtParams = OtParams(unroll=False)
    normalized: bool = False

    def __post_init__(self):
        if self.variant not in LOSS_VARIANTS:
            raise ContractError(f"unknown loss variant {self.variant!r}; choose from {', '.join(LOSS_VARIANTS)}")

    @property
    def beta(self) -> float:
        return self.ot.beta

    def with_beta(self, beta: float) -> "LossConfig":
        return replace(self, ot=replace(self.ot, beta=beta))


def _base_loss(step_losses: Tensor, base: str, un: UncertaintyParams, normalized: bool) -> Tensor:
    n = un.future
    if base == "ce":
        out = step_losses.sum()
    elif base == "un-past":
        out = step_losses.sum() * un.observation_factor
    elif base == "un-future":
        out = (step_losses * horizon_weights(n)).sum()
    elif base == "un-both":
        return uncertainty_loss(step_losses, un, normalized)
    else:
        raise ContractError(f"unknown loss base {base!r}")
    return out * (1.0 / n) if normalized else out


def combined_loss(scores: Tensor, targets, un: UncertaintyParams, ot: OtParams, variant: str,
                  normalized: bool = False) -> Tensor:
    """Loss of an N×C decoder score matrix under one of :data:`LOSS_VARIANTS`.

    Bases are summed cross-entropy, its observation-scaled and horizon-weighted
    forms, or both; ``ot`` is the Sinkhorn term alone and ``<base>+ot`` adds
    ``beta`` times the Sinkhorn term to a base.
    """
    if variant not in LOSS_VARIANTS:
        raise ContractError(f"unknown loss variant {variant!r}; choose from {', '.join(LOSS_VARIANTS)}")
    if scores.shape[0] != un.future:
        raise ContractError(f"{scores.shape[0]} decoder steps but N={un.future}")
    if variant == "ot":
        return sequence_ot_loss(T.softmax(scores, axis=1), targets, ot)
    base, _, with_ot = variant.partition("+")
    loss = _base_loss(step_cross_entropy(scores, targets), base, un, normalized)
    if with_ot and ot.beta > 0:
        loss = loss + sequence_ot_loss(T.softmax(scores, axis=1), targets, ot) * ot.beta
    return loss


def sequence_loss(scores: Tensor, targets, observed_count: int, config: LossConfig) -> Tensor:
    un = UncertaintyParams(max(1, observed_count), len(targets))
    return combined_loss(scores, targets, un, config.ot, config.variant, config.normalized)


def mix_joint(obs_loss, fut_loss, gamma: float):
    """Observed-branch loss plus gamma times the future-branch loss."""
    if gamma < 0:
        raise ContractError("gamma must be non-negative")
    return obs_loss + fut_loss * gamma


def weak_joint_loss(obs_scores: Tensor, obs_targets, fut_scores: Tensor, fut_targets, gamma: float,
                    config: LossConfig = LossConfig(), observed_count: int | None = None) -> Tensor:
    """L(Y^o, Ŷ^o) + γ L(Y^u, Ŷ^u), each term the configured sequence loss."""
    p = observed_count if observed_count is not None else len(obs_targets)
    obs = sequence_loss(obs_scores, obs_targets, p, config)
    fut = sequence_loss(fut_scores, fut_targets, p, config)
    return mix_joint(obs, fut, gamma)
