"""Scene model: proposals, class vocabulary, relevance masks, relations.

A scene is a list of labelled point-cloud proposals with ids 0..K-1.  The
relevance mask of a referential-order suffix marks every proposal whose
class name occurs in that suffix; masks are pure set membership, so they
are invariant to duplication and permutation of the suffix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, NotFoundError

__all__ = [
    "ClassVocab",
    "Proposal",
    "Scene",
    "RelevanceMask",
    "compute_center_bbox",
    "build_mask",
    "relation_select",
    "permute_scene",
]

log = logging.getLogger(__name__)

RELATIONS = ("farthest", "nearest")


def _norm_name(name: str) -> str:
    return " ".join(name.lower().strip().split())


@dataclass(frozen=True)
class ClassVocab:
    """Fixed list of class names; matching is exact after lowercase/trim."""

    names: tuple[str, ...]

    def __post_init__(self):
        normed = tuple(_norm_name(n) for n in self.names)
        if len(set(normed)) != len(normed):
            raise ContractError("class vocabulary contains duplicate names")
        if any(not n for n in normed):
            raise ContractError("class vocabulary contains an empty name")
        object.__setattr__(self, "names", normed)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(normed)})

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return _norm_name(name) in self._index

    def index(self, name: str) -> int:
        key = _norm_name(name)
        if key not in self._index:
            raise NotFoundError(f"unknown class name: {name!r}")
        return self._index[key]

    def name(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise NotFoundError(f"class id {class_id} out of range")
        return self.names[class_id]


def compute_center_bbox(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Axis-aligned bbox of an Nx3 point set; center is the bbox midpoint."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ContractError(f"expected a non-empty Nx3 point array, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ContractError("points must be finite")
    bbox_min = pts.min(axis=0)
    bbox_max = pts.max(axis=0)
    return (bbox_min + bbox_max) / 2.0, bbox_min, bbox_max


@dataclass
class Proposal:
    """One object hypothesis: id, class label, and its xyzrgb points."""

    id: int
    class_id: int
    points: np.ndarray  # (I, 6) columns x, y, z, r, g, b
    center: np.ndarray = field(default=None, repr=False)
    bbox_min: np.ndarray = field(default=None, repr=False)
    bbox_max: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 6 or self.points.shape[0] == 0:
            raise ContractError(
                f"proposal points must be non-empty Ix6, got shape {self.points.shape}"
            )
        center, bmin, bmax = compute_center_bbox(self.points[:, :3])
        if self.center is None:
            self.center = center
        elif not np.allclose(self.center, center, atol=1e-9):
            raise ContractError("stored center disagrees with bbox center of points")
        else:
            self.center = np.asarray(self.center, dtype=np.float64)
        self.bbox_min, self.bbox_max = bmin, bmax


@dataclass
class Scene:
    """A set of proposals sharing one class vocabulary."""

    proposals: list[Proposal]
    vocab: ClassVocab
    scene_id: str = ""

    def __post_init__(self):
        if not self.proposals:
            raise ContractError("a scene needs at least one proposal")
        ids = [p.id for p in self.proposals]
        if ids != list(range(len(ids))):
            raise ContractError(f"proposal ids must be 0..K-1 in order, got {ids}")
        for p in self.proposals:
            if not 0 <= p.class_id < len(self.vocab):
                raise ContractError(f"proposal {p.id} has class id outside the vocabulary")

    def __len__(self) -> int:
        return len(self.proposals)

    def labels(self) -> list[int]:
        return [p.class_id for p in self.proposals]

    def centers(self) -> np.ndarray:
        return np.stack([p.center for p in self.proposals])

    def class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for p in self.proposals:
            counts[p.class_id] = counts.get(p.class_id, 0) + 1
        return counts


@dataclass(frozen=True)
class RelevanceMask:
    """0/1 bit per proposal: is its class mentioned in the order suffix?"""

    bits: np.ndarray  # (K,) of {0.0, 1.0}

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.float64)
        if bits.ndim != 1 or not np.isin(bits, (0.0, 1.0)).all():
            raise ContractError("mask bits must be a flat 0/1 array")
        object.__setattr__(self, "bits", bits)

    def count(self) -> int:
        return int(self.bits.sum())


def build_mask(
    labels: Sequence[int], order_suffix: Iterable[str], vocab: ClassVocab
) -> RelevanceMask:
    """Mark proposals whose class name appears anywhere in the suffix.

    Unknown suffix names are dropped with a warning rather than failing:
    parsed orders may mention classes the detector never proposes.
    """
    wanted: set[int] = set()
    for name in order_suffix:
        if name in vocab:
            wanted.add(vocab.index(name))
        else:
            log.warning("build_mask: dropping unknown class name %r", name)
    bits = np.array([1.0 if c in wanted else 0.0 for c in labels], dtype=np.float64)
    return RelevanceMask(bits)


def relation_select(
    scene: Scene, class_id: int, ref_center: np.ndarray, relation: str
) -> Proposal:
    """Pick the farthest/nearest proposal of a class from a reference point.

    Exact distance ties are broken by the lowest proposal id, which keeps
    the choice deterministic.
    """
    if relation not in RELATIONS:
        raise ContractError(f"relation must be one of {RELATIONS}, got {relation!r}")
    ref = np.asarray(ref_center, dtype=np.float64).reshape(3)
    candidates = [p for p in scene.proposals if p.class_id == class_id]
    if not candidates:
        raise NotFoundError(f"no proposal of class id {class_id} in scene")
    dists = np.array([np.linalg.norm(p.center - ref) for p in candidates])
    # argmax/argmin return the first extremal index; candidates are already
    # in ascending id order, so ties resolve to the lowest id.
    best = int(dists.argmax() if relation == "farthest" else dists.argmin())
    return candidates[best]


def permute_scene(scene: Scene, perm: Sequence[int]) -> Scene:
    """Reorder proposals (new position i takes old proposal perm[i])."""
    if sorted(perm) != list(range(len(scene))):
        raise ContractError("perm must be a permutation of 0..K-1")
    proposals = [
        Proposal(id=i, class_id=scene.proposals[j].class_id, points=scene.proposals[j].points)
        for i, j in enumerate(perm)
    ]
    return Scene(proposals=proposals, vocab=scene.vocab, scene_id=scene.scene_id)
