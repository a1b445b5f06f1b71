"""The grounding network.

Text and object encoders feed a stack of object-referring blocks.  Block i
sees the order suffix starting at position i; its feature-enhancement step
attends masked object features against the suffix text, attends
self-attended object features against suffix-plus-description text, fuses
both, and emits the next K x d object feature matrix.  Four heads read the
block outputs: target scores, per-block mask logits, per-block coordinate
offsets, and a sentence-level class prediction.

Proposal rows carry no positional encoding, so the whole network is
permutation equivariant over proposals by construction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import tensor as tt
from .errors import ContractError
from .scene import ClassVocab, RelevanceMask, Scene, build_mask
from .synthgen import TEMPLATE_WORDS
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "WordVocab",
    "TextFeatures",
    "ObjectFeatures",
    "HeadOutputs",
    "GroundingModel",
    "tokenize",
    "encode_text",
    "encode_objects",
    "fe_forward",
    "apply_relevance_mask",
    "sinusoid_positions",
]

UNK_TOKEN = "<unk>"


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    b: int = 4  # referring blocks == normalized order length
    n_heads: int = 4
    points_per_proposal: int = 16
    seed: int = 0
    word_vocab_size: int = 0  # finalized when the model is built
    class_vocab_size: int = 0

    def __post_init__(self):
        if self.d < 1 or self.d % self.n_heads != 0:
            raise ContractError("d must be positive and divisible by n_heads")
        if self.b < 1:
            raise ContractError("need at least one referring block")
        if self.points_per_proposal < 1:
            raise ContractError("points_per_proposal must be positive")


@dataclass(frozen=True)
class WordVocab:
    """Token list with <unk> at id 0; unknown words map to <unk>."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != UNK_TOKEN:
            raise ContractError(f"token 0 must be {UNK_TOKEN!r}")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def build(cls, class_vocab: ClassVocab) -> "WordVocab":
        words: set[str] = set(TEMPLATE_WORDS)
        for name in class_vocab.names:
            words.update(tokenize(name))
        return cls(tokens=(UNK_TOKEN, *sorted(words)))

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: Sequence[str]) -> list[int]:
        return [self._ids.get(w, 0) for w in words]


@dataclass
class TextFeatures:
    """Row 0 is the sentence feature; rows 1.. are word features."""

    rows: Tensor  # (|D|+1) x d
    order_features: Tensor  # B x d
    token_count: int

    def __post_init__(self):
        if self.rows.shape[0] != self.token_count + 1:
            raise ContractError("text feature row count must be token count + 1")

    @property
    def sentence(self) -> Tensor:
        return tt.slice_rows(self.rows, 0, 1)


@dataclass
class ObjectFeatures:
    matrix: Tensor  # K x d
    block: int  # 1 for F_1, ..., B+1 for F_{B+1}

    def __post_init__(self):
        if not np.isfinite(self.matrix.data).all():
            raise ContractError(f"non-finite object features at block {self.block}")


@dataclass
class HeadOutputs:
    """Everything the heads produce, plus the block features behind them."""

    scores_per_block: list[Tensor]  # B entries, each K x 1 (from F_{i+1})
    mask_logits: list[Tensor]  # B entries, each K x 1
    coord_pred: list[Tensor]  # B entries, each K x 3
    text_class_logits: Tensor  # 1 x C
    features: list[ObjectFeatures]  # F_1 .. F_{B+1}
    masks: list[RelevanceMask]  # M_1 .. M_B
    text: TextFeatures

    @property
    def scores(self) -> Tensor:
        """Target scores: K logits read from F_{B+1}."""
        return self.scores_per_block[-1]

    def predicted_id(self) -> int:
        # argmax returns the first maximum, i.e. ties go to the lowest id
        return int(np.argmax(self.scores.data[:, 0]))


def sinusoid_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    dim = np.arange(d, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * (dim // 2) / d)
    out = np.empty((n, d))
    out[:, 0::2] = np.sin(angles[:, 0::2])
    out[:, 1::2] = np.cos(angles[:, 1::2])
    return out


# ---------------------------------------------------------------------------
# parameter initialization

def _init_attention(params, rng, prefix, d):
    # No key bias: a shared key offset shifts every logit in a softmax row
    # by the same amount, so it can never affect the output.
    params[f"{prefix}.wk"] = rng.normal(0.0, d**-0.5, size=(d, d))
    for w, b in (("wq", "bq"), ("wv", "bv"), ("wo", "bo")):
        params[f"{prefix}.{w}"] = rng.normal(0.0, d**-0.5, size=(d, d))
        params[f"{prefix}.{b}"] = np.zeros((1, d))


def _init_ln(params, prefix, d):
    params[f"{prefix}.g"] = np.ones((1, d))
    params[f"{prefix}.b"] = np.zeros((1, d))


def _init_linear(params, rng, prefix, n_in, n_out):
    params[f"{prefix}.w"] = rng.normal(0.0, n_in**-0.5, size=(n_in, n_out))
    params[f"{prefix}.b"] = np.zeros((1, n_out))


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    if cfg.word_vocab_size < 1 or cfg.class_vocab_size < 1:
        raise ContractError("vocab sizes must be finalized before initialization")
    rng = np.random.default_rng(cfg.seed)
    d = cfg.d
    p: dict[str, np.ndarray] = {}
    p["emb"] = rng.normal(0.0, d**-0.5, size=(cfg.word_vocab_size, d))
    for layer in range(2):
        _init_attention(p, rng, f"txt{layer}.attn", d)
        _init_ln(p, f"txt{layer}.ln1", d)
        _init_linear(p, rng, f"txt{layer}.ffn1", d, 2 * d)
        _init_linear(p, rng, f"txt{layer}.ffn2", 2 * d, d)
        _init_ln(p, f"txt{layer}.ln2", d)
    _init_linear(p, rng, "obj.p1", 6, d)
    _init_linear(p, rng, "obj.p2", d, d)
    _init_linear(p, rng, "obj.c", 3, d)
    _init_linear(p, rng, "obj.out", 2 * d, d)
    for i in range(cfg.b):
        for part in ("self", "low", "up", "fuse"):
            _init_attention(p, rng, f"fe{i}.{part}", d)
        for ln in ("self_ln", "low_ln", "up_ln", "out_ln"):
            _init_ln(p, f"fe{i}.{ln}", d)
        _init_linear(p, rng, f"head.mask{i}.1", d, d)
        _init_linear(p, rng, f"head.mask{i}.2", d, 1)
        _init_linear(p, rng, f"head.coord{i}.1", d, d)
        _init_linear(p, rng, f"head.coord{i}.2", d, 3)
    _init_linear(p, rng, "head.score.1", d, d)
    _init_linear(p, rng, "head.score.2", d, 1)
    _init_linear(p, rng, "head.text.1", d, d)
    _init_linear(p, rng, "head.text.2", d, cfg.class_vocab_size)
    return p


# ---------------------------------------------------------------------------
# building blocks


def _attention(p: dict[str, Tensor], prefix: str, q_in: Tensor, kv_in: Tensor, n_heads: int) -> Tensor:
    d = q_in.shape[1]
    dh = d // n_heads
    q = tt.add_row(tt.matmul(q_in, p[f"{prefix}.wq"]), p[f"{prefix}.bq"])
    k = tt.matmul(kv_in, p[f"{prefix}.wk"])
    v = tt.add_row(tt.matmul(kv_in, p[f"{prefix}.wv"]), p[f"{prefix}.bv"])
    heads = []
    for h in range(n_heads):
        lo, hi = h * dh, (h + 1) * dh
        qh = tt.slice_cols(q, lo, hi)
        kh = tt.slice_cols(k, lo, hi)
        vh = tt.slice_cols(v, lo, hi)
        logits = tt.scale(tt.matmul(qh, tt.transpose(kh)), dh**-0.5)
        heads.append(tt.matmul(tt.row_softmax(logits), vh))
    joined = heads[0] if n_heads == 1 else tt.concat_cols(*heads)
    return tt.add_row(tt.matmul(joined, p[f"{prefix}.wo"]), p[f"{prefix}.bo"])


def _layer_norm(p: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return tt.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def _mlp2(p: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    h = tt.relu(tt.add_row(tt.matmul(x, p[f"{prefix}.1.w"]), p[f"{prefix}.1.b"]))
    return tt.add_row(tt.matmul(h, p[f"{prefix}.2.w"]), p[f"{prefix}.2.b"])


def _encoder_layer(p: dict[str, Tensor], prefix: str, x: Tensor, n_heads: int) -> Tensor:
    x = _layer_norm(p, f"{prefix}.ln1", tt.add(x, _attention(p, f"{prefix}.attn", x, x, n_heads)))
    h = tt.relu(tt.add_row(tt.matmul(x, p[f"{prefix}.ffn1.w"]), p[f"{prefix}.ffn1.b"]))
    h = tt.add_row(tt.matmul(h, p[f"{prefix}.ffn2.w"]), p[f"{prefix}.ffn2.b"])
    return _layer_norm(p, f"{prefix}.ln2", tt.add(x, h))


def _encode_token_ids(p: dict[str, Tensor], ids: list[int], d: int, n_heads: int) -> Tensor:
    x = tt.take_rows(p["emb"], ids)
    x = tt.add(x, tt.constant(sinusoid_positions(len(ids), d)))
    for layer in range(2):
        x = _encoder_layer(p, f"txt{layer}", x, n_heads)
    return x


def encode_text(
    description_tokens: Sequence[str],
    order_names: Sequence[str],
    params: dict[str, Tensor],
    word_vocab: WordVocab,
    cfg: ModelConfig,
) -> TextFeatures:
    """Encode the description and each order name through one shared encoder."""
    if not description_tokens:
        raise ContractError("cannot encode an empty description")
    words = _encode_token_ids(
        params, word_vocab.encode(description_tokens), cfg.d, cfg.n_heads
    )
    sentence = tt.mean_rows(words)
    order_rows = [
        tt.mean_rows(_encode_token_ids(params, word_vocab.encode(tokenize(name)), cfg.d, cfg.n_heads))
        for name in order_names
    ]
    return TextFeatures(
        rows=tt.concat_rows(sentence, words),
        order_features=tt.concat_rows(*order_rows),
        token_count=len(description_tokens),
    )


def _resample_points(points: np.ndarray, count: int) -> np.ndarray:
    n = points.shape[0]
    if n == count:
        return points
    if n > count:
        idx = np.linspace(0, n - 1, num=count).astype(int)
        return points[idx]
    return np.resize(points, (count, points.shape[1]))


def encode_objects(scene: Scene, params: dict[str, Tensor], cfg: ModelConfig) -> ObjectFeatures:
    """Per-proposal point MLP + max-pool, concatenated with a center code."""
    i_pts = cfg.points_per_proposal
    stacked = np.vstack([_resample_points(p.points, i_pts) for p in scene.proposals])
    h = tt.relu(tt.add_row(tt.matmul(tt.constant(stacked), params["obj.p1.w"]), params["obj.p1.b"]))
    h = tt.relu(tt.add_row(tt.matmul(h, params["obj.p2.w"]), params["obj.p2.b"]))
    pooled = tt.max_rows_per_block(h, i_pts)  # K x d
    centers = tt.constant(scene.centers())
    c = tt.relu(tt.add_row(tt.matmul(centers, params["obj.c.w"]), params["obj.c.b"]))
    f1 = tt.add_row(
        tt.matmul(tt.concat_cols(pooled, c), params["obj.out.w"]), params["obj.out.b"]
    )
    return ObjectFeatures(matrix=f1, block=1)


def apply_relevance_mask(f: Tensor, mask: RelevanceMask) -> Tensor:
    """Zero out rows of proposals outside the mask (Hadamard with bits)."""
    if mask.bits.shape[0] != f.shape[0]:
        raise ContractError("mask length must match proposal count")
    return tt.scale_rows(f, tt.constant(mask.bits.reshape(-1, 1)))


def fe_forward(
    f: Tensor,
    mask: RelevanceMask,
    text: TextFeatures,
    params: dict[str, Tensor],
    block: int,
    cfg: ModelConfig,
) -> Tensor:
    """One feature-enhancement step: masked branch, context branch, fusion."""
    if not 0 <= block < cfg.b:
        raise ContractError(f"block index {block} outside 0..{cfg.b - 1}")
    pre = f"fe{block}"
    n_heads = cfg.n_heads
    f_mask = apply_relevance_mask(f, mask)
    suffix = tt.slice_rows(text.order_features, block, cfg.b)

    attended = _layer_norm(
        params, f"{pre}.self_ln", tt.add(f, _attention(params, f"{pre}.self", f, f, n_heads))
    )
    lower = _layer_norm(
        params,
        f"{pre}.low_ln",
        tt.add(suffix, _attention(params, f"{pre}.low", suffix, f_mask, n_heads)),
    )
    up_query = tt.concat_rows(suffix, text.rows)
    upper = _layer_norm(
        params,
        f"{pre}.up_ln",
        tt.add(up_query, _attention(params, f"{pre}.up", up_query, attended, n_heads)),
    )
    fused = _attention(params, f"{pre}.fuse", attended, tt.concat_rows(lower, upper), n_heads)
    return _layer_norm(params, f"{pre}.out_ln", tt.add(attended, fused))


# ---------------------------------------------------------------------------
# full model


class GroundingModel:
    """Parameters plus vocabularies; `forward` runs the whole pipeline."""

    def __init__(
        self,
        cfg: ModelConfig,
        class_vocab: ClassVocab,
        word_vocab: WordVocab | None = None,
        params: dict[str, np.ndarray] | None = None,
    ):
        word_vocab = word_vocab or WordVocab.build(class_vocab)
        cfg = replace(
            cfg, word_vocab_size=len(word_vocab), class_vocab_size=len(class_vocab)
        )
        self.cfg = cfg
        self.class_vocab = class_vocab
        self.word_vocab = word_vocab
        self.params = params if params is not None else init_params(cfg)

    def trainable(self) -> dict[str, Tensor]:
        """Wrap parameters as tape leaves (one wrap per training step)."""
        return {k: tt.leaf(v) for k, v in self.params.items()}

    def frozen(self) -> dict[str, Tensor]:
        return {k: tt.constant(v) for k, v in self.params.items()}

    def forward(
        self,
        scene: Scene,
        order: Sequence[str],
        description: str,
        params: dict[str, Tensor] | None = None,
        labels: Sequence[int] | None = None,
    ) -> HeadOutputs:
        cfg = self.cfg
        if len(order) != cfg.b:
            raise ContractError(f"order length {len(order)} != configured {cfg.b}")
        p = params if params is not None else self.frozen()
        labels = list(labels) if labels is not None else scene.labels()
        if len(labels) != len(scene):
            raise ContractError("one label per proposal required")

        masks = [build_mask(labels, order[i:], self.class_vocab) for i in range(cfg.b)]
        for a, b in zip(masks, masks[1:]):
            if not np.all(b.bits <= a.bits):
                raise ContractError("relevance masks must shrink along the block chain")

        tokens = tokenize(description)
        text = encode_text(tokens, order, p, self.word_vocab, cfg)
        features = [encode_objects(scene, p, cfg)]
        for i in range(cfg.b):
            nxt = fe_forward(features[-1].matrix, masks[i], text, p, i, cfg)
            features.append(ObjectFeatures(matrix=nxt, block=i + 2))

        scores_per_block = [_mlp2(p, "head.score", f.matrix) for f in features[1:]]
        mask_logits = [
            _mlp2(p, f"head.mask{i}", features[i + 1].matrix) for i in range(cfg.b)
        ]
        coord_pred = [
            _mlp2(p, f"head.coord{i}", features[i + 1].matrix) for i in range(cfg.b)
        ]
        text_class_logits = _mlp2(p, "head.text", text.sentence)
        return HeadOutputs(
            scores_per_block=scores_per_block,
            mask_logits=mask_logits,
            coord_pred=coord_pred,
            text_class_logits=text_class_logits,
            features=features,
            masks=masks,
            text=text,
        )
