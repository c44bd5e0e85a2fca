"""Toy velocity-field policy: a two-layer tanh perceptron plus its optimizer.

The network maps (state x, time t, conditioning c) to a velocity of the same
dimension as x. Forward passes cache activations so the PPO objective can
backpropagate through them by hand; there is deliberately no autograd
framework here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import substream
from .scene import COND_DIM

DEFAULT_HIDDEN = 64

GradDict = dict[str, np.ndarray]
PARAM_FIELDS = ("w1", "b1", "w2", "b2")


@dataclass
class PolicyParams:
    w1: np.ndarray  # (hidden, dim + 1 + cond)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (dim, hidden)
    b2: np.ndarray  # (dim,)

    @property
    def dim(self) -> int:
        return self.w2.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def cond_dim(self) -> int:
        return self.w1.shape[1] - self.dim - 1

    def copy(self) -> "PolicyParams":
        return PolicyParams(*(getattr(self, f).copy() for f in PARAM_FIELDS))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, f))) for f in PARAM_FIELDS)


def init_params(
    dim: int,
    hidden: int = DEFAULT_HIDDEN,
    cond_dim: int = COND_DIM,
    seed: int = 0,
) -> PolicyParams:
    """Deterministic scaled-uniform initialization (scale 1/sqrt(fan_in))."""
    rng = substream(seed, "policy-init")
    in_dim = dim + 1 + cond_dim
    s1 = 1.0 / math.sqrt(in_dim)
    s2 = 1.0 / math.sqrt(hidden)
    return PolicyParams(
        w1=rng.uniform(-s1, s1, size=(hidden, in_dim)),
        b1=rng.uniform(-s1, s1, size=hidden),
        w2=rng.uniform(-s2, s2, size=(dim, hidden)),
        b2=rng.uniform(-s2, s2, size=dim),
    )


def forward_batch(
    params: PolicyParams, x: np.ndarray, t: float, cond: np.ndarray
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Velocity for a batch of states at a shared time.

    Returns (v, cache) where cache holds the input and hidden activations
    needed by ``backprop_velocity``.
    """
    x = np.asarray(x, dtype=float)
    cond = np.asarray(cond, dtype=float)
    if not (np.all(np.isfinite(x)) and np.isfinite(t) and np.all(np.isfinite(cond))):
        raise ValueError("non-finite input to velocity network")
    n = x.shape[0]
    inp = np.concatenate([x, np.full((n, 1), float(t)), cond], axis=1)
    h = np.tanh(inp @ params.w1.T + params.b1)
    v = h @ params.w2.T + params.b2
    return v, (inp, h)


def velocity(params: PolicyParams, x: np.ndarray, t: float, cond: np.ndarray) -> np.ndarray:
    """Single-state convenience wrapper around ``forward_batch``."""
    v, _ = forward_batch(params, np.asarray(x, float)[None, :], t, np.asarray(cond, float)[None, :])
    return v[0]


def backprop_velocity(
    params: PolicyParams,
    cache: tuple[np.ndarray, np.ndarray],
    dv: np.ndarray,
    grads: GradDict,
) -> None:
    """Accumulate parameter gradients for a batch of output gradients dv."""
    inp, h = cache
    grads["w2"] += dv.T @ h
    grads["b2"] += dv.sum(axis=0)
    dpre = (dv @ params.w2) * (1.0 - h * h)
    grads["w1"] += dpre.T @ inp
    grads["b1"] += dpre.sum(axis=0)


def zero_grads(params: PolicyParams) -> GradDict:
    return {f: np.zeros_like(getattr(params, f)) for f in PARAM_FIELDS}


def score_from_velocity(x: np.ndarray, t: float, v: np.ndarray) -> np.ndarray:
    """Score estimate under the linear interpolation path x_t = t*x1 + (1-t)*x0.

    Singular as t -> 1; callers must stay below 1 - 1e-3 (the stochastic
    window sits at early times, so this never triggers in training).
    """
    if t >= 1.0 - 1e-3:
        raise ValueError(f"score conversion undefined at t = {t}")
    return -(np.asarray(x, float) - t * np.asarray(v, float)) / (1.0 - t)


# --- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    m: GradDict
    v: GradDict
    step: int = 0

    @classmethod
    def zeros(cls, params: PolicyParams) -> "AdamState":
        return cls(m=zero_grads(params), v=zero_grads(params), step=0)

    def copy(self) -> "AdamState":
        return AdamState(
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            step=self.step,
        )


def apply_update(
    params: PolicyParams,
    grads: GradDict,
    lr: float,
    state: AdamState,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[PolicyParams, AdamState, bool]:
    """One decoupled-weight-decay Adam step in the ascent direction.

    A non-finite gradient skips the update (flag False in the result)
    rather than corrupting the parameters.
    """
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        return params, state, False
    new = params.copy()
    st = state.copy()
    st.step += 1
    bc1 = 1.0 - beta1 ** st.step
    bc2 = 1.0 - beta2 ** st.step
    for f in PARAM_FIELDS:
        g = grads[f]
        st.m[f] = beta1 * st.m[f] + (1.0 - beta1) * g
        st.v[f] = beta2 * st.v[f] + (1.0 - beta2) * g * g
        step = (st.m[f] / bc1) / (np.sqrt(st.v[f] / bc2) + eps)
        value = getattr(new, f) + lr * step
        if weight_decay > 0.0:
            value -= lr * weight_decay * getattr(new, f)
        setattr(new, f, value)
    return new, st, True


# --- flat views (finite-difference checks, checkpoints) ------------------------


def params_to_vector(params: PolicyParams) -> np.ndarray:
    return np.concatenate([getattr(params, f).ravel() for f in PARAM_FIELDS])


def vector_to_params(vec: np.ndarray, like: PolicyParams) -> PolicyParams:
    out = {}
    offset = 0
    for f in PARAM_FIELDS:
        arr = getattr(like, f)
        out[f] = vec[offset:offset + arr.size].reshape(arr.shape).copy()
        offset += arr.size
    return PolicyParams(**out)


def grads_to_vector(grads: GradDict) -> np.ndarray:
    return np.concatenate([grads[f].ravel() for f in PARAM_FIELDS])
