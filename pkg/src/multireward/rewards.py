"""Concept reward kernels and the (Scene, Prompt) -> reward-vector dispatcher.

Every kernel returns a value in [0, 1]. Relation and size rewards are exact
geometric predicates with partial credit; attribute rewards are cosine or
softmax classifiers over the codebook prototypes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import (
    Attr,
    BBox,
    Codebook,
    ConceptSpec,
    Count,
    Exist,
    Prompt,
    Rel2D,
    Rel3D,
    Scene,
    SceneObject,
    Size,
    bbox_geometry,
    validate_concept,
)


@dataclass(frozen=True)
class RewardConfig:
    """Constants of the reward kernels, exposed for configuration."""

    depth_margin: float = 0.02          # tolerance on depth comparisons
    spatial_margin_ratio: float = 0.1   # fraction of the smaller extent
    inside_threshold: float = 0.95      # min contained-area fraction
    outside_threshold: float = 0.1      # max overlap fraction of smaller box
    logit_scale: float = 1.0            # contrastive softmax sharpness


@dataclass
class RewardVector:
    """Per-concept rewards for one scene, aligned with the prompt order."""

    values: np.ndarray                       # (K,), each valid entry in [0, 1]
    valid: np.ndarray                        # (K,) bool
    details: tuple[dict | None, ...] = ()    # per-concept extras (e.g. attr argmax)


def existence_reward(scene: Scene, category: int) -> float:
    """1 if at least one object of the category is present, else 0."""
    return 1.0 if scene.of_category(category) else 0.0


def attribute_reward_cosine(f_img: np.ndarray, f_text: np.ndarray) -> float:
    """Clamped cosine similarity between two unit vectors."""
    f_img = np.asarray(f_img, dtype=float)
    f_text = np.asarray(f_text, dtype=float)
    for v in (f_img, f_text):
        n = np.linalg.norm(v)
        if n < 1e-12:
            raise ValueError("zero-norm feature; caller must normalize")
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"feature not unit-norm: |v| = {n}")
    return max(0.0, float(f_img @ f_text))


def attribute_reward_contrastive(
    f_img: np.ndarray,
    candidates: np.ndarray,
    target_index: int,
    logit_scale: float = 1.0,
) -> float:
    """Softmax probability of the target prototype over the candidate set."""
    cands = np.asarray(candidates, dtype=float)
    if cands.shape[0] < 2:
        raise ValueError("contrastive reward needs at least 2 candidates")
    if not 0 <= target_index < cands.shape[0]:
        raise ValueError(f"target index out of range: {target_index}")
    if logit_scale <= 0:
        raise ValueError("logit scale must be positive")
    logits = logit_scale * (cands @ np.asarray(f_img, dtype=float))
    logits -= logits.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    return float(probs[target_index])


def numeracy_reward(count: int, target: int) -> float:
    """Inverse squared decay in the count deviation: 1 / (|c - c*| + 1)^2."""
    if count < 0 or target < 1:
        raise ValueError("count must be >= 0 and target >= 1")
    return 1.0 / (abs(count - target) + 1) ** 2


def size_reward(areas: list[float], target_index: int, direction: str) -> float:
    """Inverse squared rank of the target area among all object areas.

    Rank is 1-based, descending for "huge" and ascending for "tiny"; tied
    areas share the best rank.
    """
    if not areas:
        raise ValueError("size reward needs at least one object")
    if not 0 <= target_index < len(areas):
        raise ValueError(f"target index out of range: {target_index}")
    target = areas[target_index]
    if direction == "huge":
        better = sum(1 for a in areas if a > target)
    elif direction == "tiny":
        better = sum(1 for a in areas if a < target)
    else:
        raise ValueError(f"unknown size direction: {direction}")
    return 1.0 / (1 + better) ** 2


def spatial2d_reward(
    box_i: BBox, box_j: BBox, relation: str, margin_ratio: float = 0.1
) -> float:
    """Directional relation score: 1.0 on the strict boundary check (with a
    margin of ``margin_ratio`` times the smaller extent and overlap on the
    perpendicular axis), 0.5 on the center-order fallback, else 0.0."""
    geo = bbox_geometry(box_i, box_j)
    tau_x = margin_ratio * min(geo.width_i, geo.width_j)
    tau_y = margin_ratio * min(geo.height_i, geo.height_j)
    (cx_i, cy_i), (cx_j, cy_j) = geo.center_i, geo.center_j
    if relation == "left":
        if box_i.x_max < box_j.x_min + tau_x and geo.overlap_y:
            return 1.0
        return 0.5 if cx_i < cx_j else 0.0
    if relation == "right":
        if box_i.x_min > box_j.x_max - tau_x and geo.overlap_y:
            return 1.0
        return 0.5 if cx_i > cx_j else 0.0
    if relation == "above":
        if box_i.y_max < box_j.y_min + tau_y and geo.overlap_x:
            return 1.0
        return 0.5 if cy_i < cy_j else 0.0
    if relation == "below":
        if box_i.y_min > box_j.y_max - tau_y and geo.overlap_x:
            return 1.0
        return 0.5 if cy_i > cy_j else 0.0
    raise ValueError(f"unknown directional relation: {relation}")


def inclusion_reward(
    box_i: BBox,
    box_j: BBox,
    relation: str,
    inside_threshold: float = 0.95,
    outside_threshold: float = 0.1,
) -> float:
    """Containment predicates on intersection-area ratios.

    Zero-area degenerate boxes: an empty box is vacuously inside anything;
    a zero-area participant makes the outside overlap ratio zero.
    """
    geo = bbox_geometry(box_i, box_j)
    if relation == "inside":
        ratio = geo.inter_area / geo.area_i if geo.area_i > 0 else 1.0
        return 1.0 if ratio >= inside_threshold else 0.0
    if relation == "outside":
        smaller = min(geo.area_i, geo.area_j)
        ratio = geo.inter_area / smaller if smaller > 0 else 0.0
        return 1.0 if ratio < outside_threshold else 0.0
    raise ValueError(f"unknown inclusion relation: {relation}")


def depth_relation_reward(
    depth_i: float, depth_j: float, relation: str, margin: float = 0.02
) -> float:
    """Depth-order score with a tolerance margin (0 = nearest the camera)."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if relation == "in_front_of":
        if depth_i < depth_j - margin:
            return 1.0
        return 0.5 if depth_i < depth_j else 0.0
    if relation == "behind":
        if depth_i > depth_j + margin:
            return 1.0
        return 0.5 if depth_i > depth_j else 0.0
    raise ValueError(f"unknown depth relation: {relation}")


def _best_attr(
    objs: list[SceneObject], candidates: np.ndarray, target: int, logit_scale: float
) -> tuple[float, dict]:
    best_r, best_argmax = -1.0, -1
    for obj in objs:
        r = attribute_reward_contrastive(obj.attr_embedding, candidates, target, logit_scale)
        if r > best_r:
            best_r = r
            best_argmax = int(np.argmax(candidates @ obj.attr_embedding))
    return best_r, {"argmax_index": best_argmax}


def _score_one(
    spec: ConceptSpec, scene: Scene, codebook: Codebook, cfg: RewardConfig
) -> tuple[float, dict | None]:
    if isinstance(spec, Exist):
        return existence_reward(scene, spec.category), None

    if isinstance(spec, Count):
        return numeracy_reward(len(scene.of_category(spec.category)), spec.count), None

    if isinstance(spec, Attr):
        objs = scene.of_category(spec.category)
        if not objs:
            return 0.0, None
        return _best_attr(
            objs, codebook.attributes[spec.attr_category], spec.target_value_index, cfg.logit_scale
        )

    if isinstance(spec, Size):
        objs = scene.of_category(spec.category)
        if not objs:
            return 0.0, None
        areas = [o.bbox.area for o in scene.objects]
        cat_areas = [o.bbox.area for o in objs]
        pick = max(cat_areas) if spec.direction == "huge" else min(cat_areas)
        return size_reward(areas, areas.index(pick), spec.direction), None

    if isinstance(spec, (Rel2D, Rel3D)):
        objs_i = scene.of_category(spec.category_i)
        objs_j = scene.of_category(spec.category_j)
        if not objs_i or not objs_j:
            return 0.0, None
        best = 0.0
        for oi in objs_i:
            for oj in objs_j:
                if isinstance(spec, Rel3D):
                    r = depth_relation_reward(oi.depth, oj.depth, spec.relation, cfg.depth_margin)
                elif spec.relation in ("inside", "outside"):
                    r = inclusion_reward(
                        oi.bbox, oj.bbox, spec.relation,
                        cfg.inside_threshold, cfg.outside_threshold,
                    )
                else:
                    r = spatial2d_reward(oi.bbox, oj.bbox, spec.relation, cfg.spatial_margin_ratio)
                best = max(best, r)
        return best, None

    raise TypeError(f"not a concept spec: {spec!r}")


def score_concepts(
    scene: Scene,
    prompt: Prompt,
    codebook: Codebook,
    config: RewardConfig = RewardConfig(),
) -> RewardVector:
    """Score every prompt concept against the scene, preserving order.

    Concepts referencing an absent object score 0; concepts that fail
    codebook validation are marked invalid (value 0, valid=False). Over
    multiple matching instances the dispatcher is optimistic: attributes
    use the best instance, relations the best pair, size the best-ranked
    instance for its direction.
    """
    values, valid, details = [], [], []
    for spec in prompt.concepts:
        try:
            validate_concept(spec, codebook)
        except ValueError:
            values.append(0.0)
            valid.append(False)
            details.append(None)
            continue
        r, detail = _score_one(spec, scene, codebook, config)
        values.append(r)
        valid.append(True)
        details.append(detail)
    return RewardVector(
        values=np.asarray(values, dtype=float),
        valid=np.asarray(valid, dtype=bool),
        details=tuple(details),
    )
