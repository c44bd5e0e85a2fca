"""Decoupled group normalization and batch-normalized total advantage."""

from __future__ import annotations

from typing import Sequence

import numpy as np

GROUP_EPS = 1e-8
BATCH_EPS = 1e-8


def group_normalize(rewards: np.ndarray, eps: float = GROUP_EPS) -> np.ndarray:
    """Standardize each concept column within its group (population std).

    Columns with std below ``eps`` carry no comparative signal and map to
    all-zero advantages instead of dividing by a vanishing scale.
    """
    R = np.asarray(rewards, dtype=float)
    if R.ndim != 2 or R.shape[0] < 2:
        raise ValueError("group normalization needs a 2-d matrix with G >= 2")
    mu = R.mean(axis=0)
    sd = R.std(axis=0)
    A = np.zeros_like(R)
    live = sd >= eps
    A[:, live] = (R[:, live] - mu[live]) / sd[live]
    return A


def weighted_total_advantage(
    groups: Sequence[tuple[np.ndarray, np.ndarray]],
    eps: float = BATCH_EPS,
) -> list[np.ndarray]:
    """Weighted per-concept advantages, renormalized over the whole batch.

    ``groups`` holds (A_i, w_i) per prompt, where A_i is (G_i, K_i) and w_i
    is that prompt's weight vector (K_i may vary across prompts). The
    weighted sums are standardized with population statistics pooled over
    every sample in the batch, in input order.
    """
    if not groups:
        raise ValueError("empty batch")
    sums = [np.asarray(A, dtype=float) @ np.asarray(w, dtype=float) for A, w in groups]
    flat = np.concatenate(sums)
    mu = flat.mean()
    sd = flat.std()
    return [(s - mu) / (sd + eps) for s in sums]
