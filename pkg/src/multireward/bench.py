"""Compositional benchmark: prompt generation, strict grading, and the
negative-correlation diagnostic.

A level-k prompt carries k+1 concepts: a base object-existence concept plus
k extra constraints drawn so that no pair of constraints contradicts
another (no opposing relations on the same pair, no double attribute for
one family, object counts that fit on the canvas).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .policy import PolicyParams
from .rewards import RewardConfig, score_concepts
from .rng import substream
from .sampler import SamplerConfig, policy_velocity_fn, sample_trajectories
from .scene import (
    DEFAULT_N_SLOTS,
    REL2D_RELATIONS,
    REL3D_RELATIONS,
    SIZE_DIRECTIONS,
    Attr,
    Codebook,
    ConceptSpec,
    Count,
    Exist,
    Prompt,
    Rel2D,
    Rel3D,
    Size,
    decode_scene,
)
from .weighting import EPS_STD, pearson_corr_matrix

CONCEPT_KINDS = ("exist", "attr", "count", "size", "rel2d", "rel3d")
MAX_COUNT_TARGET = 3
_EXTRA_KINDS = ("attr", "count", "size", "rel2d", "rel3d", "exist")


def concepts_consistent(concepts: Sequence[ConceptSpec], n_slots: int = DEFAULT_N_SLOTS) -> bool:
    """Structural consistency: no duplicate or opposing constraints, relations
    only between previously introduced categories, and the implied object
    count fits into ``n_slots``."""
    introduced: set[int] = set()
    seen: set[ConceptSpec] = set()
    attr_slots: set[tuple[int, str]] = set()
    counted: dict[int, int] = {}
    sized: set[int] = set()
    size_direction_used: set[str] = set()
    rel2d_pairs: set[frozenset[int]] = set()
    rel3d_pairs: set[frozenset[int]] = set()

    for spec in concepts:
        if spec in seen:
            return False
        seen.add(spec)
        if isinstance(spec, Exist):
            if spec.category in introduced:
                return False
            introduced.add(spec.category)
            continue
        if isinstance(spec, (Rel2D, Rel3D)):
            if spec.category_i not in introduced or spec.category_j not in introduced:
                return False
            pair = frozenset((spec.category_i, spec.category_j))
            pairs = rel2d_pairs if isinstance(spec, Rel2D) else rel3d_pairs
            if pair in pairs:
                return False
            pairs.add(pair)
            continue
        if spec.category not in introduced:
            return False
        if isinstance(spec, Attr):
            key = (spec.category, spec.attr_category)
            if key in attr_slots:
                return False
            attr_slots.add(key)
        elif isinstance(spec, Count):
            if spec.category in counted:
                return False
            counted[spec.category] = spec.count
        elif isinstance(spec, Size):
            if spec.category in sized or spec.direction in size_direction_used:
                return False
            sized.add(spec.category)
            size_direction_used.add(spec.direction)

    required = sum(max(1, counted.get(cat, 1)) for cat in introduced)
    return required <= n_slots


def _draw_candidate(
    rng: np.random.Generator, codebook: Codebook, introduced: list[int]
) -> ConceptSpec | None:
    kind = _EXTRA_KINDS[int(rng.integers(len(_EXTRA_KINDS)))]
    if kind == "exist":
        remaining = [c for c in range(codebook.n_categories) if c not in introduced]
        if not remaining:
            return None
        return Exist(category=remaining[int(rng.integers(len(remaining)))])
    if kind in ("rel2d", "rel3d") and len(introduced) < 2:
        return None
    cat = introduced[int(rng.integers(len(introduced)))]
    if kind == "attr":
        families = sorted(codebook.attributes)
        family = families[int(rng.integers(len(families)))]
        idx = int(rng.integers(codebook.attributes[family].shape[0]))
        return Attr(category=cat, attr_category=family, target_value_index=idx)
    if kind == "count":
        return Count(category=cat, count=int(rng.integers(1, MAX_COUNT_TARGET + 1)))
    if kind == "size":
        return Size(category=cat, direction=SIZE_DIRECTIONS[int(rng.integers(2))])
    other = [c for c in introduced if c != cat]
    partner = other[int(rng.integers(len(other)))]
    if kind == "rel2d":
        return Rel2D(cat, partner, REL2D_RELATIONS[int(rng.integers(len(REL2D_RELATIONS)))])
    return Rel3D(cat, partner, REL3D_RELATIONS[int(rng.integers(len(REL3D_RELATIONS)))])


def gen_prompt(
    k: int,
    rng: np.random.Generator,
    codebook: Codebook,
    n_slots: int = DEFAULT_N_SLOTS,
) -> Prompt:
    """Generate a consistent prompt with k+1 concepts (base existence plus k).

    Rejection-samples candidate concepts; raises if no consistent prompt is
    found within 100 attempts (unreachable for k <= 7 with 8 categories).
    """
    if not 0 <= k <= 7:
        raise ValueError("complexity level must lie in [0, 7]")
    for _attempt in range(100):
        cat0 = int(rng.integers(codebook.n_categories))
        concepts: list[ConceptSpec] = [Exist(category=cat0)]
        introduced = [cat0]
        ok = True
        for _ in range(k):
            for _try in range(100):
                spec = _draw_candidate(rng, codebook, introduced)
                if spec is None:
                    continue
                if concepts_consistent(concepts + [spec], n_slots):
                    concepts.append(spec)
                    if isinstance(spec, Exist):
                        introduced.append(spec.category)
                    break
            else:
                ok = False
                break
        if ok:
            return Prompt.from_concepts(concepts)
    raise RuntimeError(f"could not generate a consistent prompt at k={k}")


def pass_concept(spec: ConceptSpec, reward: float, detail: dict | None = None) -> bool:
    """Strict per-concept grading.

    Attribute concepts pass when the nearest prototype in their family is
    the requested one; everything else passes only on the full-reward
    branch (partial 0.5 credit does not pass).
    """
    if isinstance(spec, Attr):
        return detail is not None and detail.get("argmax_index") == spec.target_value_index
    return reward == 1.0


def full_mark_and_fraction(passes: Sequence[bool]) -> tuple[int, float]:
    """(all-concepts indicator, fraction of passing concepts)."""
    if not passes:
        raise ValueError("need at least one concept verdict")
    n_pass = sum(bool(p) for p in passes)
    return int(n_pass == len(passes)), n_pass / len(passes)


def neg_corr_ratio(
    matrices: Sequence[np.ndarray], eps_std: float = EPS_STD
) -> tuple[float, int]:
    """Fraction of defined concept pairs with negative reward correlation.

    Returns (ratio, number of defined pairs); zero-variance pairs are
    excluded from both numerator and denominator, and a pair count of 0
    flags an undefined ratio (reported as 0.0).
    """
    neg = 0
    total = 0
    for R in matrices:
        R = np.asarray(R, dtype=float)
        if R.ndim != 2 or R.shape[0] < 2 or R.shape[1] < 2:
            continue
        C = pearson_corr_matrix(R, eps_std=eps_std)
        iu = np.triu_indices(R.shape[1], k=1)
        vals = C[iu]
        defined = ~np.isnan(vals)
        total += int(defined.sum())
        neg += int((vals[defined] < 0).sum())
    return (neg / total if total else 0.0), total


@dataclass(frozen=True)
class BenchmarkSuite:
    prompts_by_k: dict[int, tuple[Prompt, ...]]
    seed: int

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(sorted(self.prompts_by_k))


def build_suite(
    k_max: int,
    per_k: int,
    codebook: Codebook,
    seed: int = 0,
    n_slots: int = DEFAULT_N_SLOTS,
    k_min: int = 1,
) -> BenchmarkSuite:
    """Reproducible suite: ``per_k`` prompts for each level k in [k_min, k_max]."""
    prompts = {
        k: tuple(
            gen_prompt(k, substream(seed, "suite", k, i), codebook, n_slots)
            for i in range(per_k)
        )
        for k in range(k_min, k_max + 1)
    }
    return BenchmarkSuite(prompts_by_k=prompts, seed=seed)


@dataclass
class BenchRow:
    k: int
    prompts: int
    samples: int
    full_mark: float
    fraction: float
    neg_corr_ratio: float
    neg_corr_pairs: int
    pass_rates: dict[str, float]


@dataclass
class BenchReport:
    rows: list[BenchRow]

    def row_for(self, k: int) -> BenchRow:
        for row in self.rows:
            if row.k == k:
                return row
        raise KeyError(f"no benchmark row for k={k}")

    def to_csv(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        cols = ["k", "prompts", "samples", "full_mark", "fraction",
                "neg_corr_ratio", "neg_corr_pairs"]
        cols += [f"pass_{kind}" for kind in CONCEPT_KINDS]
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(cols)
            for row in self.rows:
                rates = [row.pass_rates.get(kind, float("nan")) for kind in CONCEPT_KINDS]
                writer.writerow(
                    [row.k, row.prompts, row.samples,
                     f"{row.full_mark:.10g}", f"{row.fraction:.10g}",
                     f"{row.neg_corr_ratio:.10g}", row.neg_corr_pairs]
                    + [f"{r:.10g}" for r in rates]
                )


def run_benchmark(
    params: PolicyParams,
    suite: BenchmarkSuite,
    codebook: Codebook,
    sampler_config: SamplerConfig,
    reward_config: RewardConfig = RewardConfig(),
    images_per_prompt: int = 10,
    seed: int = 0,
    deterministic: bool = False,
) -> BenchReport:
    """Score the policy over the suite with ``images_per_prompt`` samples each.

    Sampling is stochastic by default to match the training distribution;
    ``deterministic`` switches the window off and follows the ODE path.
    """
    if images_per_prompt < 1:
        raise ValueError("need at least one image per prompt")
    cfg = replace(sampler_config, window_size=0) if deterministic else sampler_config
    rows = []
    for k in sorted(suite.prompts_by_k):
        prompts = suite.prompts_by_k[k]
        full_marks: list[int] = []
        fractions: list[float] = []
        matrices: list[np.ndarray] = []
        kind_pass: dict[str, list[bool]] = {kind: [] for kind in CONCEPT_KINDS}
        for p_idx, prompt in enumerate(prompts):
            cond = np.tile(prompt.conditioning, (images_per_prompt, 1))
            rngs = [
                substream(seed, "bench", k, p_idx, j) for j in range(images_per_prompt)
            ]
            batch = sample_trajectories(
                policy_velocity_fn(params, cond),
                images_per_prompt,
                params.dim,
                cond,
                cfg,
                rngs,
            )
            rewards = []
            for j in range(images_per_prompt):
                scene = decode_scene(batch.terminal[j], codebook, vocab=prompt.categories)
                rv = score_concepts(scene, prompt, codebook, reward_config)
                rewards.append(rv.values)
                passes = [
                    pass_concept(spec, rv.values[c], rv.details[c])
                    for c, spec in enumerate(prompt.concepts)
                ]
                full, frac = full_mark_and_fraction(passes)
                full_marks.append(full)
                fractions.append(frac)
                for spec, ok in zip(prompt.concepts, passes):
                    kind_pass[spec.kind].append(ok)
            matrices.append(np.stack(rewards))
        ratio, pairs = neg_corr_ratio(matrices)
        rows.append(
            BenchRow(
                k=k,
                prompts=len(prompts),
                samples=len(full_marks),
                full_mark=float(np.mean(full_marks)),
                fraction=float(np.mean(fractions)),
                neg_corr_ratio=ratio,
                neg_corr_pairs=pairs,
                pass_rates={
                    kind: float(np.mean(v)) for kind, v in kind_pass.items() if v
                },
            )
        )
    return BenchReport(rows=rows)
