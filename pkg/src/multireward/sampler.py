"""Mixed ODE-SDE sampler over a stochastic window of early denoising steps.

Steps inside the window are Euler-Maruyama transitions whose Gaussian
log-probabilities drive the policy gradient; all other steps are plain
Euler ODE updates. With an exact score the SDE leaves the ODE marginals
unchanged for any noise level, which anchors the sampler's acceptance test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .policy import PolicyParams, forward_batch, score_from_velocity
from .scene import Scene

VelocityFn = Callable[[np.ndarray, float], np.ndarray]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SamplerConfig:
    total_steps: int = 10
    window_size: int = 3
    window_start: int = 0
    noise_level: float = 0.8

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 0 <= self.window_size <= self.total_steps:
            raise ValueError("window_size must lie in [0, total_steps]")
        if self.window_start < 0 or self.window_start + self.window_size > self.total_steps:
            raise ValueError("window must fit inside [0, total_steps)")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if self.window_size > 0:
            t_last = (self.window_start + self.window_size - 1) / self.total_steps
            if t_last >= 1.0 - 1e-3:
                raise ValueError("stochastic window reaches the score singularity at t -> 1")

    @property
    def dt(self) -> float:
        return 1.0 / self.total_steps

    @property
    def window(self) -> tuple[int, ...]:
        return tuple(range(self.window_start, self.window_start + self.window_size))


def ode_step(x: np.ndarray, t: float, dt: float, v: np.ndarray) -> np.ndarray:
    """Plain Euler update x + v*dt."""
    return np.asarray(x, float) + np.asarray(v, float) * dt


def transition_mean(x: np.ndarray, t: float, dt: float, v: np.ndarray, score: np.ndarray, g: float) -> np.ndarray:
    """Mean of the stochastic transition: x + (v + g^2/2 * score) * dt."""
    return np.asarray(x, float) + (np.asarray(v, float) + 0.5 * g * g * np.asarray(score, float)) * dt


def sde_step(
    x: np.ndarray,
    t: float,
    dt: float,
    v: np.ndarray,
    score: np.ndarray,
    g: float,
    noise: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Euler-Maruyama transition; returns (next state, mean, std).

    With g = 0 this degenerates exactly to ``ode_step``.
    """
    if g < 0:
        raise ValueError("diffusion level must be >= 0")
    mean = transition_mean(x, t, dt, v, score, g)
    std = g * math.sqrt(dt)
    return mean + std * np.asarray(noise, float), mean, std


def transition_logprob(mean: np.ndarray, std: float, x_next: np.ndarray) -> np.ndarray | float:
    """Diagonal Gaussian log-density of x_next, summed over the last axis."""
    if std <= 0:
        raise ValueError("transition std must be positive")
    mean = np.asarray(mean, float)
    x_next = np.asarray(x_next, float)
    d = mean.shape[-1]
    sq = np.sum((x_next - mean) ** 2, axis=-1)
    out = -0.5 * d * LOG_2PI - d * math.log(std) - sq / (2.0 * std * std)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class TrajectoryBatch:
    """A batch of trajectories sampled under one parameter snapshot.

    ``states`` is (n, T+1, d); the stochastic records are aligned with
    ``sde_steps`` (window step indices, ascending). ``logprobs`` holds NaN
    where the noise level is zero (deterministic pseudo-SDE steps).
    """

    states: np.ndarray          # (n, T+1, d)
    cond: np.ndarray            # (n, cond_dim)
    sde_steps: tuple[int, ...]
    means: np.ndarray           # (n, |S|, d)
    stds: np.ndarray            # (|S|,)
    noises: np.ndarray          # (n, |S|, d)
    logprobs: np.ndarray        # (n, |S|)
    total_steps: int

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1, :]


def concat_batches(batches: Sequence[TrajectoryBatch]) -> TrajectoryBatch:
    """Concatenate batches with identical step structure along the sample axis."""
    first = batches[0]
    for b in batches[1:]:
        if b.sde_steps != first.sde_steps or b.total_steps != first.total_steps:
            raise ValueError("cannot concatenate batches with different step layouts")
    return TrajectoryBatch(
        states=np.concatenate([b.states for b in batches]),
        cond=np.concatenate([b.cond for b in batches]),
        sde_steps=first.sde_steps,
        means=np.concatenate([b.means for b in batches]),
        stds=first.stds,
        noises=np.concatenate([b.noises for b in batches]),
        logprobs=np.concatenate([b.logprobs for b in batches]),
        total_steps=first.total_steps,
    )


def sample_trajectories(
    velocity_fn: VelocityFn,
    n: int,
    dim: int,
    cond: np.ndarray,
    config: SamplerConfig,
    rngs: Sequence[np.random.Generator],
    score_fn: VelocityFn | None = None,
) -> TrajectoryBatch:
    """Sample ``n`` trajectories from x0 ~ N(0, I).

    Each sample draws from its own generator (x0 first, then window noise in
    step order), so a trajectory is bit-identical whether sampled alone or
    inside a batch. ``score_fn`` overrides the velocity-derived score; the
    policy path always derives it.
    """
    if len(rngs) != n:
        raise ValueError("need one generator per sample")
    T, dt, g = config.total_steps, config.dt, config.noise_level
    window = set(config.window)
    x = np.stack([rng.standard_normal(dim) for rng in rngs])
    states = np.empty((n, T + 1, dim))
    states[:, 0] = x
    means = np.zeros((n, config.window_size, dim))
    noises = np.zeros_like(means)
    stds = np.zeros(config.window_size)
    logprobs = np.full((n, config.window_size), np.nan)

    w = 0
    for m in range(T):
        t = m / T
        v = velocity_fn(x, t)
        if m in window:
            s = score_fn(x, t) if score_fn is not None else score_from_velocity(x, t, v)
            noise = np.stack([rng.standard_normal(dim) for rng in rngs])
            x, mean, std = sde_step(x, t, dt, v, s, g, noise)
            means[:, w] = mean
            noises[:, w] = noise
            stds[w] = std
            if std > 0:
                logprobs[:, w] = transition_logprob(mean, std, x)
            w += 1
        else:
            x = ode_step(x, t, dt, v)
        states[:, m + 1] = x

    return TrajectoryBatch(
        states=states,
        cond=np.asarray(cond, float),
        sde_steps=config.window,
        means=means,
        stds=stds,
        noises=noises,
        logprobs=logprobs,
        total_steps=T,
    )


def policy_velocity_fn(params: PolicyParams, cond: np.ndarray) -> VelocityFn:
    """Batched velocity closure for a fixed conditioning matrix."""
    cond = np.asarray(cond, float)

    def fn(x: np.ndarray, t: float) -> np.ndarray:
        v, _ = forward_batch(params, x, t, cond)
        return v

    return fn


@dataclass
class Trajectory:
    """Single-sample view used by the scalar sampling API."""

    states: np.ndarray          # (T+1, d)
    cond: np.ndarray
    sde_steps: tuple[int, ...]
    means: np.ndarray           # (|S|, d)
    stds: np.ndarray
    noises: np.ndarray
    logprobs: np.ndarray
    total_steps: int
    scene: Scene | None = field(default=None)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


def sample_trajectory(
    params: PolicyParams,
    cond: np.ndarray,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> Trajectory:
    """Sample one trajectory under the policy."""
    cond = np.asarray(cond, float)
    batch = sample_trajectories(
        policy_velocity_fn(params, cond[None, :]),
        n=1,
        dim=params.dim,
        cond=cond[None, :],
        config=config,
        rngs=[rng],
    )
    return Trajectory(
        states=batch.states[0],
        cond=cond,
        sde_steps=batch.sde_steps,
        means=batch.means[0],
        stds=batch.stds,
        noises=batch.noises[0],
        logprobs=batch.logprobs[0],
        total_steps=batch.total_steps,
    )
