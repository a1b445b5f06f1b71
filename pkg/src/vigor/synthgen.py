"""Synthetic scene and warm-up sample generation with a ground-truth oracle.

Scenes are sampled so that all pairwise center distances are separated by
at least a configurable gap, which makes every farthest/nearest relation
chain uniquely resolvable.  A warm-up sample pairs a pruned scene with a
templated description whose class-name appearance order equals the
referential order, target last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import AmbiguityError, ContractError, GenerationError, SkipSample
from .scene import ClassVocab, Proposal, Scene, relation_select

__all__ = [
    "DEFAULT_CLASS_NAMES",
    "TEMPLATE_WORDS",
    "GenConfig",
    "WarmupSample",
    "default_vocab",
    "sample_scene",
    "synth_warmup_sample",
    "render_description",
    "oracle_resolve",
    "resolve_chain",
    "sample_at",
    "generate_dataset",
]

# Desk-scale stand-ins for indoor object detector classes.  Multi-word
# names are deliberate: they exercise longest-match order parsing.
DEFAULT_CLASS_NAMES = (
    "armchair",
    "backpack",
    "bed",
    "bookshelf",
    "cabinet",
    "chair",
    "clock",
    "couch",
    "desk",
    "desk lamp",
    "door",
    "dresser",
    "easy chair",
    "lamp",
    "laptop",
    "monitor",
    "nightstand",
    "pillow",
    "plant",
    "printer",
    "table",
    "trash can",
    "water bottle",
    "window",
)

TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class GenConfig:
    """Knobs for the scene sampler and warm-up synthesizer."""

    proposals_min: int = 5
    proposals_max: int = 9
    points_per_proposal: int = 16
    room_extent: float = 6.0
    class_vocab_size: int = 12
    order_len: int = 4
    relation: str = "farthest"
    min_separation: float = 0.01
    seed: int = 0
    # "natural" renders each sample through a randomly chosen reworded
    # template with a random relation, standing in for human descriptions.
    style: str = "template"

    def __post_init__(self):
        if self.proposals_min < 1 or self.proposals_max < self.proposals_min:
            raise ContractError("need 1 <= proposals_min <= proposals_max")
        if self.order_len < 2:
            raise ContractError("order_len must be at least 2")
        if self.relation not in ("farthest", "nearest"):
            raise ContractError(f"unknown relation {self.relation!r}")
        if self.style not in ("template", "natural"):
            raise ContractError(f"unknown style {self.style!r}")
        if self.min_separation <= 0:
            raise ContractError("min_separation must be positive")


@dataclass
class WarmupSample:
    """A pruned scene plus its templated description and resolved chain."""

    scene: Scene
    description: str
    order: list[str]  # class names, target last
    anchor_target_ids: list[int]  # proposal ids along the chain, target last
    relation: str


def default_vocab(size: int) -> ClassVocab:
    if size < 1:
        raise ContractError("vocabulary size must be positive")
    names = list(DEFAULT_CLASS_NAMES[:size])
    for i in range(len(names), size):
        names.append(f"object {i}")
    return ClassVocab(tuple(names))


def _class_color(class_id: int) -> np.ndarray:
    return np.random.default_rng(10_000 + class_id).uniform(0.1, 0.9, size=3)


def _pairwise_gaps_ok(centers: np.ndarray, min_sep: float) -> bool:
    """True iff all pairwise center distances differ by >= min_sep."""
    k = centers.shape[0]
    if k < 2:
        return True
    diffs = centers[:, None, :] - centers[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=2))
    iu = np.triu_indices(k, 1)
    flat = np.sort(dists[iu])
    if flat.size < 2:
        return True
    return bool((np.diff(flat) >= min_sep).all())


def sample_scene(cfg: GenConfig, rng: np.random.Generator, budget: int = 1000) -> Scene:
    """Rejection-sample a scene whose relation chains cannot tie.

    The gap condition is checked on realized bbox centers (the centers the
    rest of the pipeline sees), not on the nominal draws.
    """
    vocab = default_vocab(cfg.class_vocab_size)
    for _ in range(budget):
        k = int(rng.integers(cfg.proposals_min, cfg.proposals_max + 1))
        classes = rng.integers(0, len(vocab), size=k)
        proposals = []
        for pid in range(k):
            nominal = rng.uniform(0.0, cfg.room_extent, size=3)
            half = rng.uniform(0.05, 0.3, size=3)
            offsets = rng.uniform(-half, half, size=(cfg.points_per_proposal, 3))
            color = np.tile(_class_color(int(classes[pid])), (cfg.points_per_proposal, 1))
            pts = np.hstack([nominal + offsets, color])
            proposals.append(Proposal(id=pid, class_id=int(classes[pid]), points=pts))
        centers = np.stack([p.center for p in proposals])
        if _pairwise_gaps_ok(centers, cfg.min_separation):
            return Scene(proposals=proposals, vocab=vocab)
    raise GenerationError(
        f"no scene met the {cfg.min_separation} distance-gap condition in "
        f"{budget} tries; lower min_separation or enlarge the room"
    )


# ---------------------------------------------------------------------------
# description templates

# Canonical chained template.  Clause layout by order length B:
#   B=2: opener + final clause referencing O1 directly
#   B>=3: opener + "find the O2 ... to it" + chained clauses + final clause
_REL_WORDS = ("farthest", "nearest")


def render_description(order: list[str], relation: str) -> str:
    if relation not in _REL_WORDS:
        raise ContractError(f"unknown relation {relation!r}")
    if len(order) < 2:
        raise ContractError("the template needs at least two order elements")
    clauses = [f"There is a {order[0]} in the room"]
    if len(order) >= 3:
        clauses.append(f"find the {order[1]} {relation} to it")
        for j in range(2, len(order) - 1):
            clauses.append(f"and then find the {order[j]} {relation} to that {order[j - 1]}")
    clauses.append(f"finally you can see the {order[-1]} {relation} to that {order[-2]}")
    return ", ".join(clauses) + "."


# Reworded variants for "natural" style data.  Each keeps the class-name
# first-appearance order equal to the referential order and keeps the
# relation word verbatim, so rule parsing and verification still apply.
def _variant_1(order: list[str], relation: str) -> str:
    clauses = [f"In the room you can find a {order[0]}"]
    for j in range(1, len(order) - 1):
        prev = "it" if j == 1 else f"that {order[j - 1]}"
        clauses.append(f"locate the {order[j]} {relation} to {prev}")
    prev = "it" if len(order) == 2 else f"that {order[-2]}"
    clauses.append(f"the {order[-1]} {relation} to {prev} is the one you want")
    return ", ".join(clauses) + "."


def _variant_2(order: list[str], relation: str) -> str:
    clauses = [f"A {order[0]} sits somewhere in this room"]
    for j in range(1, len(order) - 1):
        prev = "it" if j == 1 else f"the {order[j - 1]}"
        clauses.append(f"from {prev} go to the {order[j]} {relation} away")
    prev = "it" if len(order) == 2 else f"the {order[-2]}"
    clauses.append(f"you are looking for the {order[-1]} {relation} from {prev}")
    return ", ".join(clauses) + "."


def _variant_3(order: list[str], relation: str) -> str:
    clauses = [f"Start at the {order[0]}"]
    for j in range(1, len(order) - 1):
        clauses.append(f"then move to the {order[j]} {relation} from there")
    clauses.append(f"pick the {order[-1]} {relation} from where you stand")
    return ", ".join(clauses) + "."


_NATURAL_VARIANTS = (_variant_1, _variant_2, _variant_3)


def _collect_template_words() -> tuple[str, ...]:
    import re

    probe = ["alpha", "beta", "gamma", "delta"]
    texts = [render_description(probe, r) for r in _REL_WORDS]
    for fn in _NATURAL_VARIANTS:
        for r in _REL_WORDS:
            texts.append(fn(probe, r))
    words = set()
    for t in texts:
        words.update(re.findall(r"[a-z0-9]+", t.lower()))
    words -= set(probe)
    return tuple(sorted(words))


TEMPLATE_WORDS = _collect_template_words()


# ---------------------------------------------------------------------------
# warm-up sample synthesis


def synth_warmup_sample(
    scene: Scene,
    order_len: int,
    relation: str,
    rng: np.random.Generator,
    style: str = "template",
) -> WarmupSample:
    """Draw an order, prune the scene, resolve the chain, render the text.

    Raises SkipSample when the scene has fewer distinct classes than the
    requested order length.
    """
    distinct = sorted(set(scene.labels()))
    if len(distinct) < order_len:
        raise SkipSample(
            f"scene has {len(distinct)} distinct classes, order needs {order_len}"
        )
    order_ids = [int(c) for c in rng.choice(distinct, size=order_len, replace=False)]

    # Keep exactly one proposal of the first class so the chain has an
    # unambiguous starting point.
    first_class = order_ids[0]
    holders = [p.id for p in scene.proposals if p.class_id == first_class]
    survivor = int(rng.choice(holders))
    kept = [p for p in scene.proposals if p.class_id != first_class or p.id == survivor]
    pruned = Scene(
        proposals=[
            Proposal(id=i, class_id=p.class_id, points=p.points) for i, p in enumerate(kept)
        ],
        vocab=scene.vocab,
        scene_id=scene.scene_id,
    )

    chain = resolve_chain(pruned, order_ids, relation)
    order_names = [scene.vocab.name(c) for c in order_ids]
    if style == "natural":
        renderer = _NATURAL_VARIANTS[int(rng.integers(0, len(_NATURAL_VARIANTS)))]
        description = renderer(order_names, relation)
    else:
        description = render_description(order_names, relation)
    return WarmupSample(
        scene=pruned,
        description=description,
        order=order_names,
        anchor_target_ids=chain,
        relation=relation,
    )


def resolve_chain(scene: Scene, order_ids: list[int], relation: str) -> list[int]:
    """Follow the relation chain; requires a unique first-class proposal."""
    first = [p for p in scene.proposals if p.class_id == order_ids[0]]
    if len(first) != 1:
        raise ContractError(
            f"chain start needs exactly one proposal of class {order_ids[0]}, found {len(first)}"
        )
    chain = [first[0].id]
    for class_id in order_ids[1:]:
        prev_center = scene.proposals[chain[-1]].center
        picked = relation_select(scene, class_id, prev_center, relation)
        chain.append(picked.id)
    return chain


def oracle_resolve(sample: WarmupSample) -> list[int]:
    """Re-derive the chain with exhaustive scalar scans, rejecting ties.

    Independent of relation_select: plain python loops, explicit tie
    detection within TIE_TOLERANCE.
    """
    return oracle_resolve_parts(sample.scene, sample.order, sample.relation)


def oracle_resolve_parts(scene: Scene, order: list[str], relation: str) -> list[int]:
    order_ids = [scene.vocab.index(n) for n in order]
    first = [p for p in scene.proposals if p.class_id == order_ids[0]]
    if len(first) != 1:
        raise AmbiguityError(
            f"expected exactly one proposal of class {order[0]!r}, found {len(first)}"
        )
    chain = [first[0].id]
    for class_id in order_ids[1:]:
        ref = scene.proposals[chain[-1]].center
        best_id, best_d = None, None
        tie = False
        for p in scene.proposals:
            if p.class_id != class_id:
                continue
            d = math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(p.center, ref)))
            if best_d is None:
                best_id, best_d = p.id, d
                continue
            if abs(d - best_d) <= TIE_TOLERANCE:
                tie = True
                continue
            if (relation == "farthest" and d > best_d) or (
                relation == "nearest" and d < best_d
            ):
                best_id, best_d, tie = p.id, d, False
        if best_id is None:
            raise AmbiguityError(f"no proposal of class id {class_id} in scene")
        if tie:
            raise AmbiguityError(
                f"distance tie within {TIE_TOLERANCE} while resolving class id {class_id}"
            )
        chain.append(best_id)
    return chain


def sample_at(cfg: GenConfig, index: int, budget: int = 100) -> WarmupSample:
    """Draw the sample for one slot, retrying scenes that cannot host it.

    The slot's rng is seeded by (cfg.seed, index), so any slot can be
    reproduced without generating its predecessors.
    """
    rng = np.random.default_rng((cfg.seed, index))
    relation = cfg.relation
    if cfg.style == "natural":
        relation = ("farthest", "nearest")[int(rng.integers(0, 2))]
    for _ in range(budget):
        scene = sample_scene(cfg, rng)
        scene.scene_id = f"scene-{cfg.seed}-{index}"
        try:
            return synth_warmup_sample(
                scene, cfg.order_len, relation, rng, style=cfg.style
            )
        except SkipSample:
            continue
    raise GenerationError(
        f"could not draw a scene with {cfg.order_len} distinct classes "
        f"in {budget} tries; widen the proposal range or the vocabulary"
    )


def generate_dataset(cfg: GenConfig, num_samples: int, budget: int = 100) -> Iterator[WarmupSample]:
    """Yield warm-up samples with per-sample derived seeds."""
    for idx in range(num_samples):
        yield sample_at(cfg, idx, budget)
