"""Correlation-based concept difficulty and softmax weighting.

Within a group of samples from one prompt, concepts whose rewards correlate
negatively with their peers are the hard ones: succeeding on them tends to
break the others. They receive low difficulty scores and, through the
softmax, high optimization weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_STD = 1e-6


@dataclass
class RewardMatrix:
    """G x K concept rewards for one group (rows = samples, cols = concepts)."""

    values: np.ndarray
    valid: np.ndarray

    @classmethod
    def from_vectors(cls, vectors) -> "RewardMatrix":
        return cls(
            values=np.stack([v.values for v in vectors]),
            valid=np.stack([v.valid for v in vectors]),
        )

    @property
    def group_size(self) -> int:
        return self.values.shape[0]

    @property
    def n_concepts(self) -> int:
        return self.values.shape[1]


def pearson_corr_matrix(rewards: np.ndarray, eps_std: float = EPS_STD) -> np.ndarray:
    """Pairwise Pearson correlation across concept columns.

    Uses population (1/G) moments. Columns with standard deviation below
    ``eps_std`` have no defined correlation: their rows and columns are NaN
    and must be resolved by the caller (see ``difficulty_scores``).
    """
    R = np.asarray(rewards, dtype=float)
    if R.ndim != 2:
        raise ValueError("reward matrix must be 2-dimensional")
    G, K = R.shape
    if G < 2:
        raise ValueError("correlation needs at least 2 samples")
    sd = R.std(axis=0)
    defined = sd >= eps_std
    Z = np.zeros_like(R)
    Z[:, defined] = (R[:, defined] - R.mean(axis=0)[defined]) / sd[defined]
    C = Z.T @ Z / G
    C = np.clip((C + C.T) / 2.0, -1.0, 1.0)
    C[~defined, :] = np.nan
    C[:, ~defined] = np.nan
    idx = np.where(defined)[0]
    C[idx, idx] = 1.0
    return C


def difficulty_scores(
    rewards: np.ndarray,
    valid: np.ndarray | None = None,
    eps_std: float = EPS_STD,
) -> np.ndarray:
    """Per-concept difficulty: average correlation with the other concepts.

    Zero-variance columns take the default maximum score 1.0, and undefined
    pairwise entries contribute 1.0 to their peers' averages. If the group
    carries any invalid (padding) entry, or is too small to correlate, the
    whole estimation is bypassed and every concept scores 1.0.
    """
    R = np.asarray(rewards, dtype=float)
    if R.ndim != 2:
        raise ValueError("reward matrix must be 2-dimensional")
    G, K = R.shape
    if valid is not None and not np.asarray(valid, dtype=bool).all():
        return np.ones(K)
    if G < 2 or K == 1:
        return np.ones(K)
    C = pearson_corr_matrix(R, eps_std=eps_std)
    filled = np.where(np.isnan(C), 1.0, C)
    alpha = (filled.sum(axis=1) - np.diag(filled)) / (K - 1)
    alpha[R.std(axis=0) < eps_std] = 1.0
    return np.clip(alpha, -1.0, 1.0)


def concept_weights(alpha: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Softmax weights over difficulty: w_k proportional to exp((1 - a_k) / tau)."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    logits = (1.0 - np.asarray(alpha, dtype=float)) / tau
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()
