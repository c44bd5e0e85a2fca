"""Clipped policy-gradient objective with a KL penalty on transition means.

The surrogate is recomputed from recorded (x_t, x_{t+dt}) pairs: the current
parameters re-run the forward pass, giving fresh transition means and thus
fresh Gaussian log-probabilities, while the old parameters supply the ratio
denominator and the KL anchor. Gradients flow by hand through the Gaussian
log-density, the score conversion and the two-layer network.
"""

from __future__ import annotations

import math

import numpy as np

from .policy import (
    GradDict,
    PolicyParams,
    backprop_velocity,
    forward_batch,
    score_from_velocity,
    zero_grads,
)
from .sampler import TrajectoryBatch, transition_logprob, transition_mean


def kl_penalty(mean_new: np.ndarray, mean_old: np.ndarray, sigma: float, dt: float):
    """Squared distance between transition means over 2 * sigma^2 * dt."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    diff = np.asarray(mean_new, float) - np.asarray(mean_old, float)
    out = np.sum(diff * diff, axis=-1) / (2.0 * sigma * sigma * dt)
    return float(out) if np.ndim(out) == 0 else out


def _check_batch(batch: TrajectoryBatch, advantages: np.ndarray) -> np.ndarray:
    adv = np.asarray(advantages, dtype=float)
    if adv.shape != (batch.n,):
        raise ValueError(f"advantage count {adv.shape} does not match batch size {batch.n}")
    if not np.all(np.isfinite(adv)):
        raise ValueError("advantages must be finite")
    if len(batch.sde_steps) == 0:
        raise ValueError("policy gradient needs at least one stochastic step")
    if np.any(batch.stds <= 0):
        raise ValueError("stochastic steps must have positive std")
    return adv


def _step_terms(
    params: PolicyParams,
    old_params: PolicyParams,
    batch: TrajectoryBatch,
    w: int,
):
    """Forward quantities for window position w under new and old params."""
    m = batch.sde_steps[w]
    T = batch.total_steps
    t = m / T
    dt = 1.0 / T
    std = float(batch.stds[w])
    g = std / math.sqrt(dt)
    x_t = batch.states[:, m, :]
    x_next = batch.states[:, m + 1, :]

    v_new, cache = forward_batch(params, x_t, t, batch.cond)
    mean_new = transition_mean(x_t, t, dt, v_new, score_from_velocity(x_t, t, v_new), g)
    v_old, _ = forward_batch(old_params, x_t, t, batch.cond)
    mean_old = transition_mean(x_t, t, dt, v_old, score_from_velocity(x_t, t, v_old), g)

    logq_new = transition_logprob(mean_new, std, x_next)
    logq_old = transition_logprob(mean_old, std, x_next)
    ratio = np.exp(logq_new - logq_old)
    kl = kl_penalty(mean_new, mean_old, std, dt)
    return mean_new, mean_old, cache, x_next, ratio, kl, t, dt, std, g


def ppo_objective(
    params: PolicyParams,
    old_params: PolicyParams,
    batch: TrajectoryBatch,
    advantages: np.ndarray,
    clip_eps: float = 0.1,
    kl_beta: float = 0.015,
) -> float:
    """Value of the clipped surrogate minus the KL penalty (to be ascended)."""
    adv = _check_batch(batch, advantages)
    n_steps = len(batch.sde_steps)
    total = 0.0
    for w in range(n_steps):
        _, _, _, _, ratio, kl, *_ = _step_terms(params, old_params, batch, w)
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
        total += float(np.sum(np.minimum(unclipped, clipped) - kl_beta * kl))
    return total / (batch.n * n_steps)


def ppo_gradient(
    params: PolicyParams,
    old_params: PolicyParams,
    batch: TrajectoryBatch,
    advantages: np.ndarray,
    clip_eps: float = 0.1,
    kl_beta: float = 0.015,
) -> tuple[GradDict, dict]:
    """Ascent gradient of ``ppo_objective`` with respect to ``params``.

    Also returns diagnostics: mean ratio, fraction of samples on the
    clipped (zero-gradient) branch, and the mean KL penalty.
    """
    adv = _check_batch(batch, advantages)
    n_steps = len(batch.sde_steps)
    scale = 1.0 / (batch.n * n_steps)
    grads = zero_grads(params)
    ratio_sum = 0.0
    clip_count = 0
    kl_sum = 0.0

    for w in range(n_steps):
        mean_new, mean_old, cache, x_next, ratio, kl, t, dt, std, g = _step_terms(
            params, old_params, batch, w
        )
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
        # min() takes the unclipped branch on ties; the clipped branch is
        # saturated whenever it is strictly smaller, so its gradient is zero.
        use_unclipped = unclipped <= clipped
        dsurr_dr = np.where(use_unclipped, adv, 0.0)

        dJ_dlogq = dsurr_dr * ratio
        var = std * std
        dJ_dmean = dJ_dlogq[:, None] * (x_next - mean_new) / var
        dJ_dmean -= kl_beta * (mean_new - mean_old) / (var * dt)
        coeff = dt * (1.0 + 0.5 * g * g * t / (1.0 - t))
        backprop_velocity(params, cache, scale * coeff * dJ_dmean, grads)

        ratio_sum += float(ratio.sum())
        clip_count += int((~use_unclipped).sum())
        kl_sum += float(np.sum(kl))

    total = batch.n * n_steps
    diagnostics = {
        "mean_ratio": ratio_sum / total,
        "clip_fraction": clip_count / total,
        "mean_kl": kl_sum / total,
    }
    return grads, diagnostics
