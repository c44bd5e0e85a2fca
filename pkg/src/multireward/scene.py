"""Synthetic scene universe: codebooks, geometry, concepts, and the latent decoder.

A Scene is a small set of objects on the unit canvas, each carrying a
category, a bounding box, a depth scalar and a unit attribute embedding.
Scenes are decoded deterministically from a flat latent vector, standing in
for an image generator plus a perception stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Iterable, Sequence, Union

import numpy as np

from .rng import stable_digest

COND_DIM = 32
SLOT_WIDTH = 10
DEFAULT_N_SLOTS = 6
DEFAULT_N_CATEGORIES = 8
DEFAULT_ATTRIBUTE_SIZES = {"color": 6, "texture": 5, "shape": 4}

REL2D_RELATIONS = ("left", "right", "above", "below", "inside", "outside")
REL3D_RELATIONS = ("in_front_of", "behind")
SIZE_DIRECTIONS = ("huge", "tiny")

_DEGENERATE_NORM = 1e-9


def logistic(x):
    """Numerically stable logistic sigmoid, elementwise."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized canvas coordinates (y grows downward)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (0.0 <= self.x_min <= self.x_max <= 1.0):
            raise ValueError(f"invalid x extent: [{self.x_min}, {self.x_max}]")
        if not (0.0 <= self.y_min <= self.y_max <= 1.0):
            raise ValueError(f"invalid y extent: [{self.y_min}, {self.y_max}]")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def cx(self) -> float:
        return 0.5 * (self.x_min + self.x_max)

    @property
    def cy(self) -> float:
        return 0.5 * (self.y_min + self.y_max)


@dataclass(frozen=True)
class BoxPairGeometry:
    """Derived quantities for a pair of boxes used by the relation rewards."""

    area_i: float
    area_j: float
    inter_area: float
    overlap_x: bool
    overlap_y: bool
    center_i: tuple[float, float]
    center_j: tuple[float, float]
    width_i: float
    height_i: float
    width_j: float
    height_j: float


def bbox_geometry(box_i: BBox, box_j: BBox) -> BoxPairGeometry:
    """Areas, intersection and axis-overlap indicators for a box pair.

    Axis overlap uses closed intervals, so boxes touching along an edge
    count as overlapping on that axis.
    """
    inter_w = min(box_i.x_max, box_j.x_max) - max(box_i.x_min, box_j.x_min)
    inter_h = min(box_i.y_max, box_j.y_max) - max(box_i.y_min, box_j.y_min)
    return BoxPairGeometry(
        area_i=box_i.area,
        area_j=box_j.area,
        inter_area=max(0.0, inter_w) * max(0.0, inter_h),
        overlap_x=inter_w >= 0.0,
        overlap_y=inter_h >= 0.0,
        center_i=(box_i.cx, box_i.cy),
        center_j=(box_j.cx, box_j.cy),
        width_i=box_i.width,
        height_i=box_i.height,
        width_j=box_j.width,
        height_j=box_j.height,
    )


def _circle_points(n: int, phase: float) -> np.ndarray:
    angles = phase + 2.0 * math.pi * np.arange(n) / n
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


@dataclass(frozen=True)
class Codebook:
    """Unit-vector prototypes for categories and attribute values.

    Prototypes are evenly spaced on the unit circle, which makes every
    cosine-based reward exactly computable by hand.
    """

    categories: np.ndarray                  # (n_categories, 2), unit rows
    attributes: dict[str, np.ndarray]       # family -> (n_values, 2), unit rows

    @property
    def n_categories(self) -> int:
        return self.categories.shape[0]

    @classmethod
    def build(
        cls,
        n_categories: int = DEFAULT_N_CATEGORIES,
        attribute_sizes: dict[str, int] | None = None,
        seed: int = 0,
    ) -> "Codebook":
        if n_categories < 1:
            raise ValueError("need at least one category")
        sizes = dict(attribute_sizes or DEFAULT_ATTRIBUTE_SIZES)

        def phase(name: str) -> float:
            h = stable_digest(f"{seed}:{name}".encode("utf-8"), size=4)
            return 2.0 * math.pi * (h % 4096) / 4096.0

        cats = _circle_points(n_categories, phase("categories"))
        attrs = {
            name: _circle_points(n, phase(f"attr:{name}")) for name, n in sorted(sizes.items())
        }
        return cls(categories=cats, attributes=attrs)


@dataclass(frozen=True)
class SceneObject:
    category_id: int
    bbox: BBox
    depth: float
    attr_embedding: np.ndarray  # unit 2-vector

    def __post_init__(self):
        if not 0.0 <= self.depth <= 1.0:
            raise ValueError(f"depth out of range: {self.depth}")
        v = np.asarray(self.attr_embedding, dtype=float)
        if v.shape != (2,) or abs(float(np.linalg.norm(v)) - 1.0) > 1e-9:
            raise ValueError("attr_embedding must be a unit 2-vector")
        object.__setattr__(self, "attr_embedding", v)


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...] = ()

    def of_category(self, category_id: int) -> list[SceneObject]:
        return [o for o in self.objects if o.category_id == category_id]


# --- concept specifications -------------------------------------------------


@dataclass(frozen=True)
class Exist:
    kind: ClassVar[str] = "exist"
    category: int


@dataclass(frozen=True)
class Attr:
    kind: ClassVar[str] = "attr"
    category: int
    attr_category: str
    target_value_index: int


@dataclass(frozen=True)
class Count:
    kind: ClassVar[str] = "count"
    category: int
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("target count must be >= 1")


@dataclass(frozen=True)
class Size:
    kind: ClassVar[str] = "size"
    category: int
    direction: str

    def __post_init__(self):
        if self.direction not in SIZE_DIRECTIONS:
            raise ValueError(f"unknown size direction: {self.direction}")


@dataclass(frozen=True)
class Rel2D:
    kind: ClassVar[str] = "rel2d"
    category_i: int
    category_j: int
    relation: str

    def __post_init__(self):
        if self.relation not in REL2D_RELATIONS:
            raise ValueError(f"unknown 2d relation: {self.relation}")
        if self.category_i == self.category_j:
            raise ValueError("relations require two distinct categories")


@dataclass(frozen=True)
class Rel3D:
    kind: ClassVar[str] = "rel3d"
    category_i: int
    category_j: int
    relation: str

    def __post_init__(self):
        if self.relation not in REL3D_RELATIONS:
            raise ValueError(f"unknown 3d relation: {self.relation}")
        if self.category_i == self.category_j:
            raise ValueError("relations require two distinct categories")


ConceptSpec = Union[Exist, Attr, Count, Size, Rel2D, Rel3D]


def concept_categories(spec: ConceptSpec) -> tuple[int, ...]:
    if isinstance(spec, (Rel2D, Rel3D)):
        return (spec.category_i, spec.category_j)
    return (spec.category,)


def validate_concept(spec: ConceptSpec, codebook: Codebook) -> None:
    """Raise ValueError if the concept references anything outside the codebook."""
    for cat in concept_categories(spec):
        if not 0 <= cat < codebook.n_categories:
            raise ValueError(f"unknown category id: {cat}")
    if isinstance(spec, Attr):
        values = codebook.attributes.get(spec.attr_category)
        if values is None:
            raise ValueError(f"unknown attribute family: {spec.attr_category}")
        if not 0 <= spec.target_value_index < values.shape[0]:
            raise ValueError(f"attribute value index out of range: {spec.target_value_index}")


def _concept_key(spec: ConceptSpec) -> bytes:
    if isinstance(spec, Exist):
        parts = ("exist", spec.category)
    elif isinstance(spec, Attr):
        parts = ("attr", spec.category, spec.attr_category, spec.target_value_index)
    elif isinstance(spec, Count):
        parts = ("count", spec.category, spec.count)
    elif isinstance(spec, Size):
        parts = ("size", spec.category, spec.direction)
    elif isinstance(spec, Rel2D):
        parts = ("rel2d", spec.category_i, spec.category_j, spec.relation)
    elif isinstance(spec, Rel3D):
        parts = ("rel3d", spec.category_i, spec.category_j, spec.relation)
    else:
        raise TypeError(f"not a concept spec: {spec!r}")
    return "|".join(str(p) for p in parts).encode("utf-8")


def prompt_embed(concepts: Sequence[ConceptSpec]) -> np.ndarray:
    """Deterministic conditioning vector for a concept list.

    Each concept maps to a fixed unit vector (seeded by a stable digest of
    its fields); the sum is scaled by 1/sqrt(K), so the result is invariant
    under permutation of the concept list.
    """
    if not concepts:
        raise ValueError("prompt needs at least one concept")
    total = np.zeros(COND_DIM)
    for spec in concepts:
        seed = stable_digest(_concept_key(spec))
        g = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        vec = g.standard_normal(COND_DIM)
        total += vec / np.linalg.norm(vec)
    return total / math.sqrt(len(concepts))


@dataclass(frozen=True)
class Prompt:
    concepts: tuple[ConceptSpec, ...]
    conditioning: np.ndarray = field(repr=False)

    @classmethod
    def from_concepts(cls, concepts: Iterable[ConceptSpec]) -> "Prompt":
        concepts = tuple(concepts)
        return cls(concepts=concepts, conditioning=prompt_embed(concepts))

    @property
    def k(self) -> int:
        return len(self.concepts)

    @property
    def categories(self) -> tuple[int, ...]:
        seen: set[int] = set()
        for spec in self.concepts:
            seen.update(concept_categories(spec))
        return tuple(sorted(seen))


# --- latent decoding ---------------------------------------------------------


def decode_scene(
    latent: np.ndarray,
    codebook: Codebook,
    vocab: Sequence[int] | None = None,
) -> Scene:
    """Decode a flat latent into a Scene. Pure and deterministic.

    Slot layout (width 10): [a, u_x, u_y, u_w, u_h, u_d, k1, k2, v1, v2].
    A slot is present iff a > 0; degenerate direction vectors (norm below
    1e-9) also drop the slot. Category is the nearest prototype among
    ``vocab`` (all categories when None).
    """
    z = np.asarray(latent, dtype=float).ravel()
    if z.size % SLOT_WIDTH != 0:
        raise ValueError(f"latent length {z.size} is not a multiple of {SLOT_WIDTH}")
    if not np.all(np.isfinite(z)):
        raise ValueError("latent contains non-finite values")
    if vocab is None:
        vocab_ids = list(range(codebook.n_categories))
    else:
        vocab_ids = [int(c) for c in vocab]
        if not vocab_ids:
            raise ValueError("vocab must not be empty")
        for c in vocab_ids:
            if not 0 <= c < codebook.n_categories:
                raise ValueError(f"vocab category out of range: {c}")
    prototypes = codebook.categories[vocab_ids]

    objects = []
    for s in range(z.size // SLOT_WIDTH):
        a, ux, uy, uw, uh, ud, k1, k2, v1, v2 = z[s * SLOT_WIDTH:(s + 1) * SLOT_WIDTH]
        if a <= 0.0:
            continue
        k = np.array([k1, k2])
        v = np.array([v1, v2])
        nk, nv = np.linalg.norm(k), np.linalg.norm(v)
        if nk < _DEGENERATE_NORM or nv < _DEGENERATE_NORM:
            continue
        cx, cy = logistic(ux), logistic(uy)
        w = 0.05 + 0.45 * logistic(uw)
        h = 0.05 + 0.45 * logistic(uh)
        bbox = BBox(
            x_min=max(0.0, cx - w / 2),
            y_min=max(0.0, cy - h / 2),
            x_max=min(1.0, cx + w / 2),
            y_max=min(1.0, cy + h / 2),
        )
        cat = vocab_ids[int(np.argmax(prototypes @ (k / nk)))]
        objects.append(
            SceneObject(
                category_id=cat,
                bbox=bbox,
                depth=float(logistic(ud)),
                attr_embedding=v / nv,
            )
        )
    return Scene(objects=tuple(objects))


# --- canonical JSON ----------------------------------------------------------


def concept_to_json(spec: ConceptSpec) -> dict:
    data: dict = {"type": spec.kind}
    if isinstance(spec, Exist):
        data["category"] = spec.category
    elif isinstance(spec, Attr):
        data.update(
            category=spec.category,
            attr_category=spec.attr_category,
            target_value_index=spec.target_value_index,
        )
    elif isinstance(spec, Count):
        data.update(category=spec.category, count=spec.count)
    elif isinstance(spec, Size):
        data.update(category=spec.category, direction=spec.direction)
    else:
        data.update(
            category_i=spec.category_i, category_j=spec.category_j, relation=spec.relation
        )
    return data


def concept_from_json(data: dict) -> ConceptSpec:
    kind = data.get("type")
    if kind == "exist":
        return Exist(category=int(data["category"]))
    if kind == "attr":
        return Attr(
            category=int(data["category"]),
            attr_category=str(data["attr_category"]),
            target_value_index=int(data["target_value_index"]),
        )
    if kind == "count":
        return Count(category=int(data["category"]), count=int(data["count"]))
    if kind == "size":
        return Size(category=int(data["category"]), direction=str(data["direction"]))
    if kind == "rel2d":
        return Rel2D(
            category_i=int(data["category_i"]),
            category_j=int(data["category_j"]),
            relation=str(data["relation"]),
        )
    if kind == "rel3d":
        return Rel3D(
            category_i=int(data["category_i"]),
            category_j=int(data["category_j"]),
            relation=str(data["relation"]),
        )
    raise ValueError(f"unknown concept type: {kind!r}")


def prompt_to_json(prompt: Prompt) -> dict:
    return {"concepts": [concept_to_json(c) for c in prompt.concepts]}


def prompt_from_json(data: dict) -> Prompt:
    return Prompt.from_concepts(concept_from_json(c) for c in data["concepts"])


def scene_to_json(scene: Scene) -> dict:
    return {
        "objects": [
            {
                "category_id": o.category_id,
                "bbox": {
                    "x_min": o.bbox.x_min,
                    "y_min": o.bbox.y_min,
                    "x_max": o.bbox.x_max,
                    "y_max": o.bbox.y_max,
                },
                "depth": o.depth,
                "attr_embedding": [float(o.attr_embedding[0]), float(o.attr_embedding[1])],
            }
            for o in scene.objects
        ]
    }


def scene_from_json(data: dict) -> Scene:
    objects = []
    for o in data["objects"]:
        b = o["bbox"]
        objects.append(
            SceneObject(
                category_id=int(o["category_id"]),
                bbox=BBox(float(b["x_min"]), float(b["y_min"]), float(b["x_max"]), float(b["y_max"])),
                depth=float(o["depth"]),
                attr_embedding=np.asarray(o["attr_embedding"], dtype=float),
            )
        )
    return Scene(objects=tuple(objects))
