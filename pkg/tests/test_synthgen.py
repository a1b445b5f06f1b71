"""Tests for scene sampling, warm-up synthesis, and the chain oracle."""

import numpy as np
import pytest

from vigor.errors import AmbiguityError, ContractError, GenerationError, SkipSample
from vigor.scene import ClassVocab, Proposal, Scene
from vigor.synthgen import (
    GenConfig,
    default_vocab,
    generate_dataset,
    oracle_resolve,
    oracle_resolve_parts,
    render_description,
    resolve_chain,
    sample_scene,
    synth_warmup_sample,
)


def tiny_cfg(**kw):
    base = dict(
        proposals_min=4,
        proposals_max=7,
        points_per_proposal=8,
        room_extent=6.0,
        class_vocab_size=8,
        order_len=2,
        seed=0,
    )
    base.update(kw)
    return GenConfig(**base)


def scene_from_centers(centers, classes, vocab):
    proposals = []
    for i, (c, cls) in enumerate(zip(centers, classes)):
        c = np.asarray(c, dtype=float)
        pts = np.array(
            [
                [c[0] - 0.1, c[1] - 0.1, c[2] - 0.1, 0.5, 0.5, 0.5],
                [c[0] + 0.1, c[1] + 0.1, c[2] + 0.1, 0.5, 0.5, 0.5],
            ]
        )
        proposals.append(Proposal(id=i, class_id=cls, points=pts))
    return Scene(proposals=proposals, vocab=vocab)


# ---------------------------------------------------------------------------
# scene sampling


def test_sample_scene_respects_bounds_and_gap():
    cfg = tiny_cfg()
    rng = np.random.default_rng(1)
    for _ in range(20):
        scene = sample_scene(cfg, rng)
        assert cfg.proposals_min <= len(scene) <= cfg.proposals_max
        centers = scene.centers()
        assert (centers >= -0.5).all() and (centers <= cfg.room_extent + 0.5).all()
        k = len(scene)
        dists = sorted(
            float(np.linalg.norm(centers[i] - centers[j]))
            for i in range(k)
            for j in range(i + 1, k)
        )
        for a, b in zip(dists, dists[1:]):
            assert b - a >= cfg.min_separation


def test_sample_scene_centers_match_bbox():
    scene = sample_scene(tiny_cfg(), np.random.default_rng(2))
    for p in scene.proposals:
        xyz = p.points[:, :3]
        want = (xyz.min(axis=0) + xyz.max(axis=0)) / 2
        assert np.allclose(p.center, want)


def test_sample_scene_deterministic():
    cfg = tiny_cfg()
    a = sample_scene(cfg, np.random.default_rng(7))
    b = sample_scene(cfg, np.random.default_rng(7))
    assert len(a) == len(b)
    for pa, pb in zip(a.proposals, b.proposals):
        assert pa.class_id == pb.class_id
        assert np.array_equal(pa.points, pb.points)


def test_sample_scene_budget_exhaustion():
    # an absurd separation requirement cannot be met
    cfg = tiny_cfg(min_separation=100.0, proposals_min=5, proposals_max=5)
    with pytest.raises(GenerationError):
        sample_scene(cfg, np.random.default_rng(0), budget=20)


def test_default_vocab_extends_past_base_names():
    vocab = default_vocab(30)
    assert len(vocab) == 30
    assert "object 29" in vocab


# ---------------------------------------------------------------------------
# description rendering


def test_render_description_two_elements():
    text = render_description(["door", "table"], "farthest")
    assert text == "There is a door in the room, finally you can see the table farthest to that door."


def test_render_description_three_elements():
    text = render_description(["a", "b", "c"], "farthest")
    assert "There is a a in the room" in text
    assert "find the b farthest to it" in text
    assert "finally you can see the c farthest to that b" in text


def test_render_description_four_elements_chains():
    text = render_description(["a", "b", "c", "d"], "nearest")
    assert "and then find the c nearest to that b" in text
    assert text.endswith("finally you can see the d nearest to that c.")


def test_render_description_rejects_short_orders():
    with pytest.raises(ContractError):
        render_description(["chair"], "farthest")


# ---------------------------------------------------------------------------
# warm-up synthesis


def hand_scene():
    """door at origin, tables at x=3 and x=9, chair at x=5."""
    vocab = ClassVocab(("chair", "door", "table"))
    return scene_from_centers(
        centers=[[0, 0, 0], [3, 0, 0], [9, 0, 0], [5, 0, 0]],
        classes=[1, 2, 2, 0],
        vocab=vocab,
    )


def test_resolve_chain_hand_case():
    scene = hand_scene()
    # door -> farthest table is the one at x=9 (id 2)
    chain = resolve_chain(scene, [scene.vocab.index("door"), scene.vocab.index("table")], "farthest")
    assert chain == [0, 2]
    chain = resolve_chain(scene, [scene.vocab.index("door"), scene.vocab.index("table")], "nearest")
    assert chain == [0, 1]


def test_synth_warmup_sample_prunes_first_class():
    rng = np.random.default_rng(0)
    cfg = tiny_cfg(order_len=3, proposals_min=6, proposals_max=8)
    for _ in range(20):
        scene = sample_scene(cfg, rng)
        try:
            sample = synth_warmup_sample(scene, 3, "farthest", rng)
        except SkipSample:
            continue
        first = sample.order[0]
        count = sum(
            1 for p in sample.scene.proposals if sample.scene.vocab.name(p.class_id) == first
        )
        assert count == 1
        assert len(sample.order) == 3
        assert len(set(sample.anchor_target_ids)) == 3
        ids = [p.id for p in sample.scene.proposals]
        assert ids == list(range(len(ids)))


def test_synth_warmup_sample_skips_when_too_few_classes():
    vocab = ClassVocab(("chair", "door"))
    scene = scene_from_centers([[0, 0, 0], [1, 0, 0]], [0, 0], vocab)
    with pytest.raises(SkipSample):
        synth_warmup_sample(scene, 2, "farthest", np.random.default_rng(0))


def test_oracle_resolve_agrees_on_hand_case():
    scene = hand_scene()
    chain = oracle_resolve_parts(scene, ["door", "table"], "farthest")
    assert chain == [0, 2]


def test_oracle_resolve_detects_tie():
    vocab = ClassVocab(("door", "table"))
    scene = scene_from_centers(
        centers=[[0, 0, 0], [-4, 0, 0], [4, 0, 0]],
        classes=[0, 1, 1],
        vocab=vocab,
    )
    with pytest.raises(AmbiguityError):
        oracle_resolve_parts(scene, ["door", "table"], "farthest")


def test_oracle_resolve_requires_unique_start():
    vocab = ClassVocab(("door", "table"))
    scene = scene_from_centers(
        centers=[[0, 0, 0], [1, 0, 0], [4, 0, 0]],
        classes=[0, 0, 1],
        vocab=vocab,
    )
    with pytest.raises(AmbiguityError):
        oracle_resolve_parts(scene, ["door", "table"], "farthest")


# ---------------------------------------------------------------------------
# dataset generation


def test_generate_dataset_deterministic_and_valid():
    cfg = tiny_cfg(order_len=2)
    a = list(generate_dataset(cfg, 10))
    b = list(generate_dataset(cfg, 10))
    assert len(a) == 10
    for sa, sb in zip(a, b):
        assert sa.description == sb.description
        assert sa.order == sb.order
        assert sa.anchor_target_ids == sb.anchor_target_ids
        assert np.array_equal(sa.scene.centers(), sb.scene.centers())


def test_generate_dataset_oracle_agreement_sweep():
    for seed in range(3):
        cfg = tiny_cfg(order_len=3, proposals_min=5, proposals_max=8, seed=seed)
        for sample in generate_dataset(cfg, 25):
            assert oracle_resolve(sample) == sample.anchor_target_ids
            assert sample.anchor_target_ids[-1] == sample.anchor_target_ids[-1]
            assert len(sample.order) == 3


def test_generate_dataset_natural_style_resolves():
    cfg = tiny_cfg(order_len=2, style="natural", seed=3)
    seen_relations = set()
    for sample in generate_dataset(cfg, 20):
        seen_relations.add(sample.relation)
        assert sample.relation in sample.description
        assert oracle_resolve(sample) == sample.anchor_target_ids
    assert seen_relations == {"farthest", "nearest"}


def test_generate_dataset_zero_samples():
    assert list(generate_dataset(tiny_cfg(), 0)) == []
