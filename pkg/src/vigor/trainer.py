"""Two-stage optimization: synthetic warm-up, then fine-tuning.

The warm-up stage synthesizes its batches on the fly and supervises every
block (anchors, masks, offsets, text class).  The main stage reads stored
samples, obtains referential orders through a pluggable parser, and
supervises the target only: reference, mask, and text losses, never the
coordinate term.

Checkpoints hold the finalized config, both vocabularies, parameters,
optimizer moments, step counters, and the training rng state, so a resumed
run continues bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import tensor as tt
from .errors import CheckpointError, ContractError
from .losses import LossWeights, compose, loss_crd, loss_mask, loss_ref, loss_text
from .model import GroundingModel, ModelConfig, WordVocab
from .orderparse import trim_pad
from .scene import ClassVocab, Scene
from .synthgen import GenConfig, sample_at
from .tensor import AdamState, GradCheckReport, adam_step, backward, grad_check

__all__ = [
    "TrainConfig",
    "TrainState",
    "StageReport",
    "Checkpoint",
    "warmup_stage",
    "main_stage",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
    "full_model_grad_check",
    "moving_average",
]

CHECKPOINT_MAGIC = b"VGRC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    warmup_steps: int = 0
    main_steps: int = 0
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    eval_every: int = 0  # 0 disables the callback
    label_noise: float = 0.0  # per-proposal chance of a corrupted class label

    def __post_init__(self):
        if self.warmup_steps < 0 or self.main_steps < 0:
            raise ContractError("step counts cannot be negative")
        if self.batch_size < 1:
            raise ContractError("batch size must be at least 1")
        if self.lr <= 0:
            raise ContractError("learning rate must be positive")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ContractError("label noise is a probability")


@dataclass
class TrainState:
    adam: AdamState
    rng: np.random.Generator
    warmup_done: int = 0
    main_done: int = 0

    @classmethod
    def fresh(cls, seed: int) -> "TrainState":
        return cls(adam=AdamState(), rng=np.random.default_rng(seed))


@dataclass
class StageReport:
    stage: str
    losses: list[float]  # per-step batch means

    def final_loss(self) -> float:
        if not self.losses:
            raise ContractError("no steps were run")
        return self.losses[-1]


def moving_average(xs: Sequence[float], window: int) -> list[float]:
    if window < 1 or window > len(xs):
        raise ContractError("window must fit inside the series")
    sums = np.cumsum([0.0, *xs])
    return list((sums[window:] - sums[:-window]) / window)


class TrainItem(Protocol):
    scene: Scene
    description: str


def _target_of(item) -> int:
    if hasattr(item, "target_id"):
        return int(item.target_id)
    return int(item.anchor_target_ids[-1])


def _maybe_noisy_labels(
    scene: Scene, noise: float, rng: np.random.Generator
) -> list[int]:
    labels = scene.labels()
    if noise <= 0.0:
        return labels
    flips = rng.random(len(labels)) < noise
    draws = rng.integers(0, len(scene.vocab), size=len(labels))
    return [int(d) if f else l for l, f, d in zip(labels, flips, draws)]


def _sum_batch(totals: list[tt.Tensor]) -> tt.Tensor:
    acc = totals[0]
    for t in totals[1:]:
        acc = tt.add(acc, t)
    return acc


def warmup_stage(
    model: GroundingModel,
    gen_cfg: GenConfig,
    train_cfg: TrainConfig,
    state: TrainState | None = None,
    on_eval: Callable[[int, GroundingModel], None] | None = None,
) -> tuple[StageReport, TrainState]:
    """Optimize on freshly synthesized samples; supervises every block."""
    if gen_cfg.order_len != model.cfg.b:
        raise ContractError(
            f"generator order length {gen_cfg.order_len} != model blocks {model.cfg.b}"
        )
    state = state if state is not None else TrainState.fresh(train_cfg.seed)
    losses: list[float] = []
    for _ in range(train_cfg.warmup_steps):
        base = state.warmup_done * train_cfg.batch_size
        batch = [sample_at(gen_cfg, base + j) for j in range(train_cfg.batch_size)]
        leaves = model.trainable()
        totals = []
        for sample in batch:
            labels = _maybe_noisy_labels(sample.scene, train_cfg.label_noise, state.rng)
            out = model.forward(
                sample.scene, sample.order, sample.description, params=leaves, labels=labels
            )
            ids = sample.anchor_target_ids
            bd = compose(
                "warmup",
                loss_ref(out.scores_per_block, ids, "warmup"),
                loss_mask(out.mask_logits, out.masks),
                loss_text(
                    out.text_class_logits, sample.scene.proposals[ids[-1]].class_id
                ),
                loss_crd(out.coord_pred, sample.scene.centers(), ids),
                weights=train_cfg.weights,
            )
            totals.append(bd.total)
        batch_loss = _sum_batch(totals)
        grads = backward(batch_loss, leaves)
        adam_step(model.params, grads, state.adam, lr=train_cfg.lr)
        state.warmup_done += 1
        losses.append(batch_loss.item() / train_cfg.batch_size)
        if on_eval and train_cfg.eval_every and state.warmup_done % train_cfg.eval_every == 0:
            on_eval(state.warmup_done, model)
    return StageReport(stage="warmup", losses=losses), state


def main_stage(
    model: GroundingModel,
    dataset: Sequence[TrainItem],
    train_cfg: TrainConfig,
    parser: Callable[[str], Sequence[str]],
    state: TrainState | None = None,
    on_eval: Callable[[int, GroundingModel], None] | None = None,
) -> tuple[StageReport, TrainState]:
    """Fine-tune on stored samples; supervises the target only.

    `parser` maps a description to an order (class names, target last);
    results are normalized to the model's block count with trim_pad and
    cached, so each description is parsed once.
    """
    if not dataset:
        raise ContractError("main stage needs a nonempty dataset")
    state = state if state is not None else TrainState.fresh(train_cfg.seed)
    orders = []
    for item in dataset:
        parsed = parser(item.description)
        names = getattr(parsed, "names", parsed)
        orders.append(trim_pad(list(names), model.cfg.b))
    losses: list[float] = []
    for _ in range(train_cfg.main_steps):
        picks = state.rng.integers(0, len(dataset), size=train_cfg.batch_size)
        leaves = model.trainable()
        totals = []
        for i in picks:
            item = dataset[int(i)]
            target = _target_of(item)
            labels = _maybe_noisy_labels(item.scene, train_cfg.label_noise, state.rng)
            out = model.forward(
                item.scene, orders[int(i)], item.description, params=leaves, labels=labels
            )
            bd = compose(
                "main",
                loss_ref(out.scores_per_block, [target], "main"),
                loss_mask(out.mask_logits, out.masks),
                loss_text(out.text_class_logits, item.scene.proposals[target].class_id),
                weights=train_cfg.weights,
            )
            totals.append(bd.total)
        batch_loss = _sum_batch(totals)
        grads = backward(batch_loss, leaves)
        adam_step(model.params, grads, state.adam, lr=train_cfg.lr)
        state.main_done += 1
        losses.append(batch_loss.item() / train_cfg.batch_size)
        if on_eval and train_cfg.eval_every and state.main_done % train_cfg.eval_every == 0:
            on_eval(state.main_done, model)
    return StageReport(stage="main", losses=losses), state


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    cfg: ModelConfig
    class_names: tuple[str, ...]
    word_tokens: tuple[str, ...]
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int
    rng_state: dict
    warmup_done: int
    main_done: int


def _write_array(f, arr: np.ndarray) -> None:
    blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    f.write(struct.pack("<Q", len(blob)))
    f.write(blob)


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def save_checkpoint(path, model: GroundingModel, state: TrainState) -> None:
    groups = (
        ("params", model.params),
        ("adam_m", state.adam.m),
        ("adam_v", state.adam.v),
    )
    manifest = [
        {"group": group, "name": name, "shape": list(arrs[name].shape)}
        for group, arrs in groups
        for name in sorted(arrs)
    ]
    header = {
        "model": asdict(model.cfg),
        "class_names": list(model.class_vocab.names),
        "word_tokens": list(model.word_vocab.tokens),
        "adam_t": state.adam.t,
        "rng_state": state.rng.bit_generator.state,
        "warmup_done": state.warmup_done,
        "main_done": state.main_done,
        "arrays": manifest,
    }
    blob = json.dumps(header).encode("utf-8")
    by_group = dict(groups)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for entry in manifest:
            _write_array(f, by_group[entry["group"]][entry["name"]])


def load_checkpoint(path, expect: ModelConfig | None = None) -> Checkpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != CHECKPOINT_MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )
        (hlen,) = struct.unpack("<Q", _read_exact(f, 8))
        try:
            header = json.loads(_read_exact(f, hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
        cfg = ModelConfig(**header["model"])
        groups: dict[str, dict[str, np.ndarray]] = {
            "params": {},
            "adam_m": {},
            "adam_v": {},
        }
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            (blen,) = struct.unpack("<Q", _read_exact(f, 8))
            want = int(np.prod(shape)) * 8
            if blen != want:
                raise CheckpointError(
                    f"array {entry['name']}: length {blen} != shape {shape}"
                )
            arr = np.frombuffer(_read_exact(f, blen), dtype="<f8").reshape(shape)
            groups[entry["group"]][entry["name"]] = arr.astype(np.float64)
        if f.read(1):
            raise CheckpointError("trailing bytes after the last array")
    if expect is not None:
        fixed = ("d", "b", "n_heads", "points_per_proposal")
        for name in fixed:
            got, want = getattr(cfg, name), getattr(expect, name)
            if got != want:
                raise CheckpointError(
                    f"checkpoint {name}={got} does not match requested {name}={want}"
                )
    return Checkpoint(
        cfg=cfg,
        class_names=tuple(header["class_names"]),
        word_tokens=tuple(header["word_tokens"]),
        params=groups["params"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        adam_t=int(header["adam_t"]),
        rng_state=header["rng_state"],
        warmup_done=int(header["warmup_done"]),
        main_done=int(header["main_done"]),
    )


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[GroundingModel, TrainState]:
    model = GroundingModel(
        ckpt.cfg,
        ClassVocab(ckpt.class_names),
        word_vocab=WordVocab(ckpt.word_tokens),
        params=dict(ckpt.params),
    )
    rng = np.random.default_rng(0)
    rng.bit_generator.state = ckpt.rng_state
    state = TrainState(
        adam=AdamState(m=dict(ckpt.adam_m), v=dict(ckpt.adam_v), t=ckpt.adam_t),
        rng=rng,
        warmup_done=ckpt.warmup_done,
        main_done=ckpt.main_done,
    )
    return model, state


# ---------------------------------------------------------------------------
# whole-network gradient audit


def full_model_grad_check(seed: int = 0) -> GradCheckReport:
    """Finite-difference audit of every parameter on one warm-up sample.

    Small widths keep the parameter count tractable: d=8, two blocks,
    five proposals.
    """
    gen_cfg = GenConfig(
        proposals_min=5,
        proposals_max=5,
        points_per_proposal=8,
        class_vocab_size=6,
        order_len=2,
        seed=seed,
    )
    sample = sample_at(gen_cfg, 0)
    cfg = ModelConfig(d=8, b=2, n_heads=2, points_per_proposal=8, seed=seed)
    model = GroundingModel(cfg, sample.scene.vocab)
    ids = sample.anchor_target_ids
    target_class = sample.scene.proposals[ids[-1]].class_id

    def loss_fn(p):
        out = model.forward(sample.scene, sample.order, sample.description, params=p)
        return compose(
            "warmup",
            loss_ref(out.scores_per_block, ids, "warmup"),
            loss_mask(out.mask_logits, out.masks),
            loss_text(out.text_class_logits, target_class),
            loss_crd(out.coord_pred, sample.scene.centers(), ids),
        ).total

    return grad_check(loss_fn, model.params)
