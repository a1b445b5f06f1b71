"""Training objectives and their stage-dependent composition.

Warm-up supervises every referring block: anchor classification per block,
mask recovery per block, coordinate offsets per block, and the sentence
class.  The main stage keeps only the target-directed pieces: reference,
mask, and text.  Coordinate regression never runs in the main stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tt
from .errors import ContractError
from .scene import RelevanceMask
from .tensor import Tensor

__all__ = [
    "STAGES",
    "LossWeights",
    "LossBreakdown",
    "cross_entropy_column",
    "loss_ref",
    "loss_mask",
    "loss_crd",
    "loss_text",
    "compose",
]

STAGES = ("warmup", "main")


def _check_stage(stage: str) -> None:
    if stage not in STAGES:
        raise ContractError(f"stage must be one of {STAGES}, got {stage!r}")


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the composed total; the defaults leave sums unweighted."""

    w_ref: float = 1.0
    w_mask: float = 1.0
    w_text: float = 1.0
    w_crd: float = 1.0


@dataclass
class LossBreakdown:
    stage: str
    l_ref: Tensor
    l_mask: Tensor
    l_text: Tensor
    l_crd: Tensor | None
    total: Tensor

    def __post_init__(self):
        _check_stage(self.stage)
        for name in ("l_ref", "l_mask", "l_text", "l_crd"):
            t = getattr(self, name)
            if t is not None and t.item() < 0.0:
                raise ContractError(f"{name} must be nonnegative, got {t.item()}")

    def values(self) -> dict[str, float]:
        """Plain floats for logging."""
        out = {
            "l_ref": self.l_ref.item(),
            "l_mask": self.l_mask.item(),
            "l_text": self.l_text.item(),
            "total": self.total.item(),
        }
        if self.l_crd is not None:
            out["l_crd"] = self.l_crd.item()
        return out


def cross_entropy_column(scores: Tensor, target: int) -> Tensor:
    """Cross-entropy of a K x 1 score column against a single class id."""
    k = scores.shape[0]
    if scores.shape[1] != 1:
        raise ContractError(f"expected a score column, got shape {scores.shape}")
    if not 0 <= target < k:
        raise ContractError(f"target id {target} outside 0..{k - 1}")
    lsm = tt.log_row_softmax(tt.transpose(scores))
    return tt.scale(tt.slice_cols(lsm, target, target + 1), -1.0)


def loss_ref(
    scores_per_block: Sequence[Tensor],
    anchor_target_ids: Sequence[int],
    stage: str,
) -> Tensor:
    """Reference loss: per-block anchors in warm-up, final target in main."""
    _check_stage(stage)
    if not scores_per_block:
        raise ContractError("need at least one block of scores")
    if stage == "main":
        if len(anchor_target_ids) != 1:
            raise ContractError("main stage takes exactly one target id")
        return cross_entropy_column(scores_per_block[-1], anchor_target_ids[0])
    if len(anchor_target_ids) != len(scores_per_block):
        raise ContractError(
            f"warm-up needs one id per block: {len(anchor_target_ids)} ids "
            f"for {len(scores_per_block)} blocks"
        )
    terms = [
        cross_entropy_column(s, t) for s, t in zip(scores_per_block, anchor_target_ids)
    ]
    return tt.scale(_sum(terms), 1.0 / len(terms))


def loss_mask(
    mask_logits_per_block: Sequence[Tensor], masks: Sequence[RelevanceMask]
) -> Tensor:
    """Mean over blocks of binary cross-entropy with logits against M_i."""
    if len(mask_logits_per_block) != len(masks) or not masks:
        raise ContractError("need matching, nonempty logits and masks")
    terms = []
    for logits, mask in zip(mask_logits_per_block, masks):
        if logits.shape != (mask.bits.shape[0], 1):
            raise ContractError(
                f"mask logits shape {logits.shape} does not match {mask.bits.shape[0]} proposals"
            )
        m = tt.constant(mask.bits.reshape(-1, 1))
        # bce(z, m) = softplus(z) - z*m, elementwise, averaged over proposals
        terms.append(tt.mean_all(tt.sub(tt.softplus(logits), tt.mul(logits, m))))
    return tt.scale(_sum(terms), 1.0 / len(terms))


def loss_crd(
    coord_preds_per_block: Sequence[Tensor],
    centers: np.ndarray,
    anchor_target_ids: Sequence[int],
) -> Tensor:
    """Mean over blocks of MSE against per-anchor center offsets.

    Block i regresses, for every proposal j, the offset centers[j] - v_i
    where v_i is the center of that block's anchor.  Warm-up only.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[1] != 3:
        raise ContractError(f"centers must be K x 3, got {centers.shape}")
    if len(coord_preds_per_block) != len(anchor_target_ids) or not anchor_target_ids:
        raise ContractError("need one anchor id per coordinate block")
    k = centers.shape[0]
    terms = []
    for pred, anchor in zip(coord_preds_per_block, anchor_target_ids):
        if not 0 <= anchor < k:
            raise ContractError(f"anchor id {anchor} outside 0..{k - 1}")
        if pred.shape != (k, 3):
            raise ContractError(f"coordinate prediction must be K x 3, got {pred.shape}")
        offsets = tt.constant(centers - centers[anchor])
        terms.append(tt.mean_all(tt.square(tt.sub(pred, offsets))))
    return tt.scale(_sum(terms), 1.0 / len(terms))


def loss_text(text_class_logits: Tensor, target_class_id: int) -> Tensor:
    """Cross-entropy of the sentence-level class head."""
    if text_class_logits.shape[0] != 1:
        raise ContractError(
            f"expected one logit row, got shape {text_class_logits.shape}"
        )
    c = text_class_logits.shape[1]
    if not 0 <= target_class_id < c:
        raise ContractError(f"class id {target_class_id} outside 0..{c - 1}")
    lsm = tt.log_row_softmax(text_class_logits)
    return tt.scale(tt.slice_cols(lsm, target_class_id, target_class_id + 1), -1.0)


def _sum(terms: Sequence[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = tt.add(acc, t)
    return acc


def compose(
    stage: str,
    l_ref: Tensor,
    l_mask: Tensor,
    l_text: Tensor,
    l_crd: Tensor | None = None,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """Weighted total for a stage.

    Warm-up requires all four components; the main stage forbids the
    coordinate term.
    """
    _check_stage(stage)
    if stage == "warmup" and l_crd is None:
        raise ContractError("warm-up composition requires the coordinate loss")
    if stage == "main" and l_crd is not None:
        raise ContractError("the main stage must not carry a coordinate loss")
    total = _sum(
        [
            tt.scale(l_ref, weights.w_ref),
            tt.scale(l_mask, weights.w_mask),
            tt.scale(l_text, weights.w_text),
        ]
    )
    if l_crd is not None:
        total = tt.add(total, tt.scale(l_crd, weights.w_crd))
    return LossBreakdown(
        stage=stage, l_ref=l_ref, l_mask=l_mask, l_text=l_text, l_crd=l_crd, total=total
    )
