"""Training orchestration: group sampling, reward scoring, weighting,
advantages, and clipped policy updates, one iteration at a time.

Three aggregation modes are selectable so the baselines the weighting
mechanism improves on stay runnable side by side:

- ``naive_sum``: concept rewards are summed per sample and the sum is
  group-normalized once (single-reward style).
- ``uniform``: per-concept group normalization with equal weights.
- ``correlation``: per-concept group normalization with difficulty-based
  softmax weights.
"""

from __future__ import annotations

import os
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .advantage import group_normalize, weighted_total_advantage
from .bench import gen_prompt, neg_corr_ratio
from .io import MetricsWriter, save_checkpoint, load_checkpoint, config_fingerprint
from .objective import ppo_gradient
from .policy import AdamState, PolicyParams, apply_update, init_params
from .rewards import RewardConfig, RewardVector, score_concepts
from .rng import substream
from .sampler import (
    SamplerConfig,
    TrajectoryBatch,
    concat_batches,
    policy_velocity_fn,
    sample_trajectories,
)
from .scene import Codebook, Prompt, decode_scene
from .weighting import concept_weights, difficulty_scores

AGGREGATION_MODES = ("correlation", "uniform", "naive_sum")

METRIC_COLUMNS = (
    "iteration", "mean_reward",
    "reward_exist", "reward_attr", "reward_count",
    "reward_size", "reward_rel2d", "reward_rel3d",
    "mean_abs_advantage", "mean_alpha", "min_alpha", "max_weight",
    "neg_corr_ratio", "neg_corr_pairs",
    "mean_ratio", "clip_fraction", "mean_kl",
)


class TrainingDiverged(RuntimeError):
    """Raised when parameters stop being finite; a diagnostic checkpoint is kept."""


@dataclass
class TrainConfig:
    iterations: int = 100
    batch_prompts: int = 8
    group_size: int = 16
    tau: float = 0.5
    kl_beta: float = 0.015
    clip_eps: float = 0.1
    lr: float = 1e-3
    weight_decay: float = 0.0
    aggregation: str = "correlation"
    seed: int = 0
    checkpoint_interval: int = 50
    single_prompt_fraction: float = 0.5
    multi_k_min: int = 2
    multi_k_max: int = 5
    prompt_pool_size: int = 64
    hidden: int = 64
    n_slots: int = 6
    window_shift_interval: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_prompts < 1:
            raise ValueError("batch_prompts must be >= 1")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.group_size < 8:
            warnings.warn(
                f"group_size={self.group_size} is collapse-prone; "
                "group statistics are unreliable below 8",
                stacklevel=2,
            )
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.aggregation not in AGGREGATION_MODES:
            raise ValueError(f"unknown aggregation mode: {self.aggregation}")
        if not 0.0 <= self.single_prompt_fraction <= 1.0:
            raise ValueError("single_prompt_fraction must lie in [0, 1]")
        if not 1 <= self.multi_k_min <= self.multi_k_max <= 7:
            raise ValueError("need 1 <= multi_k_min <= multi_k_max <= 7")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")
        if self.n_slots < 1 or self.hidden < 1:
            raise ValueError("n_slots and hidden must be >= 1")

    @property
    def latent_dim(self) -> int:
        return self.n_slots * 10


@dataclass
class IterationLog:
    iteration: int
    mean_reward: float
    reward_by_type: dict[str, float]
    mean_abs_advantage: float
    mean_alpha: float
    min_alpha: float
    max_weight: float
    neg_corr_ratio: float
    neg_corr_pairs: int
    mean_ratio: float
    clip_fraction: float
    mean_kl: float
    wall_clock: float

    def csv_row(self) -> dict:
        row = {
            "iteration": self.iteration,
            "mean_reward": self.mean_reward,
            "mean_abs_advantage": self.mean_abs_advantage,
            "mean_alpha": self.mean_alpha,
            "min_alpha": self.min_alpha,
            "max_weight": self.max_weight,
            "neg_corr_ratio": self.neg_corr_ratio,
            "neg_corr_pairs": self.neg_corr_pairs,
            "mean_ratio": self.mean_ratio,
            "clip_fraction": self.clip_fraction,
            "mean_kl": self.mean_kl,
        }
        for kind in ("exist", "attr", "count", "size", "rel2d", "rel3d"):
            row[f"reward_{kind}"] = self.reward_by_type.get(kind)
        return row


class PromptSource:
    """Finite prompt pool mixing single-attribute (k=1) and multi-concept sets.

    With ``pool_size`` 0 every batch generates fresh prompts instead of
    resampling a fixed pool. Batches are keyed by iteration index, so
    resumed runs see exactly the prompts an uninterrupted run would.
    """

    def __init__(
        self,
        codebook: Codebook,
        seed: int = 0,
        pool_size: int = 64,
        single_fraction: float = 0.5,
        multi_k_min: int = 2,
        multi_k_max: int = 5,
        n_slots: int = 6,
    ):
        self.codebook = codebook
        self.seed = seed
        self.single_fraction = single_fraction
        self.multi_k_min = multi_k_min
        self.multi_k_max = multi_k_max
        self.n_slots = n_slots
        self.pool: list[Prompt] = [
            self._generate(substream(seed, "pool", idx)) for idx in range(pool_size)
        ]

    @classmethod
    def from_config(cls, codebook: Codebook, cfg: TrainConfig) -> "PromptSource":
        return cls(
            codebook,
            seed=cfg.seed,
            pool_size=cfg.prompt_pool_size,
            single_fraction=cfg.single_prompt_fraction,
            multi_k_min=cfg.multi_k_min,
            multi_k_max=cfg.multi_k_max,
            n_slots=cfg.n_slots,
        )

    @classmethod
    def from_prompts(cls, prompts, codebook: Codebook, seed: int = 0) -> "PromptSource":
        src = cls(codebook, seed=seed, pool_size=0)
        src.pool = list(prompts)
        return src

    def _generate(self, rng: np.random.Generator) -> Prompt:
        if rng.random() < self.single_fraction:
            k = 1
        else:
            k = int(rng.integers(self.multi_k_min, self.multi_k_max + 1))
        return gen_prompt(k, rng, self.codebook, self.n_slots)

    def batch(self, iteration: int, count: int) -> list[Prompt]:
        rng = substream(self.seed, "batch", iteration)
        if self.pool:
            picks = rng.integers(0, len(self.pool), size=count)
            return [self.pool[int(i)] for i in picks]
        return [
            self._generate(substream(self.seed, "fresh", iteration, b)) for b in range(count)
        ]


def _sampler_for_iteration(cfg: TrainConfig, iteration: int) -> SamplerConfig:
    # Experimental sliding window; default keeps the window fixed at the start.
    if cfg.window_shift_interval <= 0 or cfg.sampler.window_size == 0:
        return cfg.sampler
    max_start = cfg.sampler.total_steps - cfg.sampler.window_size
    shift = (cfg.sampler.window_start + iteration // cfg.window_shift_interval) % (max_start + 1)
    return replace(cfg.sampler, window_start=shift)


def _failed_vector(k: int) -> RewardVector:
    return RewardVector(
        values=np.zeros(k), valid=np.zeros(k, dtype=bool), details=(None,) * k
    )


def train_iteration(
    params: PolicyParams,
    opt_state: AdamState,
    prompts: list[Prompt],
    cfg: TrainConfig,
    codebook: Codebook,
    reward_cfg: RewardConfig,
    iteration: int,
    old_params: PolicyParams | None = None,
) -> tuple[PolicyParams, AdamState, IterationLog]:
    """One full optimization iteration over a batch of prompt groups.

    Trajectories are sampled under the snapshot ``old_params`` (defaults to
    the incoming parameters); the policy then takes one gradient step per
    stochastic window position against the snapshot.
    """
    t_start = time.perf_counter()
    if old_params is None:
        old_params = params
    sampler_cfg = _sampler_for_iteration(cfg, iteration)
    N = cfg.group_size

    batches: list[TrajectoryBatch] = []
    groups: list[tuple[np.ndarray, np.ndarray]] = []
    matrices: list[np.ndarray] = []
    alphas: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    kind_values: dict[str, list[float]] = {}

    for i, prompt in enumerate(prompts):
        cond = np.tile(prompt.conditioning, (N, 1))
        rngs = [substream(cfg.seed, "traj", iteration, i, j) for j in range(N)]
        batch = sample_trajectories(
            policy_velocity_fn(old_params, cond),
            N,
            cfg.latent_dim,
            cond,
            sampler_cfg,
            rngs,
        )
        vectors = []
        for j in range(N):
            try:
                scene = decode_scene(batch.terminal[j], codebook, vocab=prompt.categories)
                vectors.append(score_concepts(scene, prompt, codebook, reward_cfg))
            except Exception:
                # A failed sample invalidates its row, which bypasses the
                # group's correlation estimate; the iteration continues.
                vectors.append(_failed_vector(prompt.k))
        values = np.stack([v.values for v in vectors])
        valid = np.stack([v.valid for v in vectors])
        R = np.where(valid, values, 0.0)

        alpha = difficulty_scores(R, valid)
        if cfg.aggregation == "naive_sum":
            A = group_normalize(R.sum(axis=1, keepdims=True))
            w = np.ones(1)
        else:
            A = group_normalize(R)
            if cfg.aggregation == "uniform":
                w = np.full(prompt.k, 1.0 / prompt.k)
            else:
                w = concept_weights(alpha, cfg.tau)

        batches.append(batch)
        groups.append((A, w))
        matrices.append(R)
        alphas.append(alpha)
        weights.append(w)
        for spec, col in zip(prompt.concepts, R.T):
            kind_values.setdefault(spec.kind, []).extend(col.tolist())

    advantages = weighted_total_advantage(groups)
    combined = concat_batches(batches)
    adv_flat = np.concatenate(advantages)

    new_params, new_opt = params, opt_state
    diag_acc: dict[str, float] = {"mean_ratio": 0.0, "clip_fraction": 0.0, "mean_kl": 0.0}
    n_updates = sampler_cfg.window_size
    for _ in range(n_updates):
        grads, diag = ppo_gradient(
            new_params, old_params, combined, adv_flat, cfg.clip_eps, cfg.kl_beta
        )
        new_params, new_opt, applied = apply_update(
            new_params, grads, cfg.lr, new_opt, weight_decay=cfg.weight_decay
        )
        if not applied:
            warnings.warn(f"skipped non-finite gradient at iteration {iteration}", stacklevel=2)
        for key in diag_acc:
            diag_acc[key] += diag[key] / n_updates

    ratio, pairs = neg_corr_ratio(matrices)
    all_alpha = np.concatenate(alphas)
    log = IterationLog(
        iteration=iteration,
        mean_reward=float(np.mean(np.concatenate([m.ravel() for m in matrices]))),
        reward_by_type={k: float(np.mean(v)) for k, v in sorted(kind_values.items())},
        mean_abs_advantage=float(np.mean(np.abs(adv_flat))),
        mean_alpha=float(all_alpha.mean()),
        min_alpha=float(all_alpha.min()),
        max_weight=float(max(w.max() for w in weights)),
        neg_corr_ratio=ratio,
        neg_corr_pairs=pairs,
        mean_ratio=diag_acc["mean_ratio"] if n_updates else 1.0,
        clip_fraction=diag_acc["clip_fraction"] if n_updates else 0.0,
        mean_kl=diag_acc["mean_kl"] if n_updates else 0.0,
        wall_clock=time.perf_counter() - t_start,
    )
    return new_params, new_opt, log


@dataclass
class TrainResult:
    params: PolicyParams
    opt_state: AdamState
    iterations_run: int
    metrics_path: str
    checkpoint_paths: list[str]
    logs: list[IterationLog]


def train(
    cfg: TrainConfig,
    prompt_source: PromptSource,
    out_dir: str,
    codebook: Codebook,
    reward_cfg: RewardConfig = RewardConfig(),
    resume: str | None = None,
    config_blob: dict | None = None,
    progress_every: int = 0,
) -> TrainResult:
    """Run the training loop, writing metrics.csv and periodic checkpoints.

    ``config_blob`` (when given) is embedded into checkpoints and guards
    resumption: resuming under a different configuration is an error.
    """
    blob = config_blob if config_blob is not None else {"train": _cfg_dict(cfg)}
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    checkpoint_paths: list[str] = []

    if resume is not None:
        params, opt_state, start_iter, stored_cfg = load_checkpoint(resume)
        if config_fingerprint(stored_cfg) != config_fingerprint(blob):
            raise ValueError("checkpoint was produced under a different configuration")
    else:
        params = init_params(cfg.latent_dim, cfg.hidden, seed=cfg.seed)
        opt_state = AdamState.zeros(params)
        start_iter = 0
        path = os.path.join(ckpt_dir, "ckpt_000000.npz")
        save_checkpoint(path, params, opt_state, 0, blob)
        checkpoint_paths.append(path)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    writer = MetricsWriter(metrics_path, METRIC_COLUMNS, cfg.aggregation)
    logs: list[IterationLog] = []

    for it in range(start_iter, cfg.iterations):
        prompts = prompt_source.batch(it, cfg.batch_prompts)
        params, opt_state, log = train_iteration(
            params, opt_state, prompts, cfg, codebook, reward_cfg, it
        )
        logs.append(log)
        writer.append(log.csv_row())
        if progress_every and (it + 1) % progress_every == 0:
            print(
                f"iter {it + 1}/{cfg.iterations} "
                f"reward={log.mean_reward:.4f} neg_corr={log.neg_corr_ratio:.3f}"
            )
        if not params.all_finite():
            path = os.path.join(ckpt_dir, f"ckpt_diverged_{it + 1:06d}.npz")
            save_checkpoint(path, params, opt_state, it + 1, blob)
            raise TrainingDiverged(
                f"non-finite parameters after iteration {it}; diagnostic checkpoint at {path}"
            )
        if (it + 1) % cfg.checkpoint_interval == 0 or (it + 1) == cfg.iterations:
            path = os.path.join(ckpt_dir, f"ckpt_{it + 1:06d}.npz")
            save_checkpoint(path, params, opt_state, it + 1, blob)
            checkpoint_paths.append(path)

    return TrainResult(
        params=params,
        opt_state=opt_state,
        iterations_run=cfg.iterations - start_iter,
        metrics_path=metrics_path,
        checkpoint_paths=checkpoint_paths,
        logs=logs,
    )


def _cfg_dict(cfg: TrainConfig) -> dict:
    d = {k: v for k, v in cfg.__dict__.items() if k != "sampler"}
    d["sampler"] = dict(cfg.sampler.__dict__)
    return d
