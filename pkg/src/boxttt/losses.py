"""Self-supervised objectives with eager prompt gradients.

Every loss here returns both its scalar value and the gradient with
respect to the student prompt that the corresponding update step will
descend, so callers never manage autograd graphs themselves.

* box_loss — negative log-likelihood of the second-pass box string under
  the grounding model conditioned on the ORIGINAL image, averaged over
  the fixed padded length.  Descended by the evidence prompt.
* answer_loss — length-normalized NLL of the teacher's decoded answers
  for the original and cropped views under the student answer prompt,
  combined by sum (default) or mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .backbones.base import (
    ANSWERING,
    GROUNDING,
    Backbone,
    TokenSequence,
    teacher_forced_logprobs,
)
from .prompts import SoftPrompt

ANS_REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class LossWeights:
    """Non-negative multipliers for the combined per-epoch objective."""

    box: float = 1.0
    answer: float = 1.0

    def __post_init__(self):
        if self.box < 0 or self.answer < 0:
            raise ValueError(f"loss weights must be >= 0, got {self}")


@dataclass(frozen=True)
class LossValue:
    """A computed loss: scalar, per-token log-probs, and prompt gradient.

    ``grad`` matches the shape of the prompt embeddings the loss was taken
    against and is detached; it is None for pure reporting quantities.
    ``norm_length`` is the divisor used for length normalization.
    """

    value: float
    per_token: tuple[float, ...]
    norm_length: int
    grad: torch.Tensor | None
    parts: dict[str, float] | None = None


def _grad_leaf(prompt: SoftPrompt) -> tuple[SoftPrompt, torch.Tensor]:
    leaf = prompt.embeddings.detach().clone().requires_grad_(True)
    return SoftPrompt(embeddings=leaf, role=prompt.role), leaf


def _grad_or_zeros(loss: torch.Tensor, leaf: torch.Tensor) -> torch.Tensor:
    if not loss.requires_grad:
        # The model ignored the prompt entirely, so the gradient is zero.
        return torch.zeros_like(leaf.detach())
    (grad,) = torch.autograd.grad(loss, leaf, allow_unused=True)
    if grad is None:
        return torch.zeros_like(leaf.detach())
    return grad.detach()


def box_loss(
    grounding: Backbone,
    image: np.ndarray,
    question: str,
    prompt_vis: SoftPrompt,
    target_ids: Sequence[int] | TokenSequence,
    pad_len: int = 32,
) -> LossValue:
    """NLL of the crop-view box string under the original-image context.

    ``target_ids`` must already be padded to exactly ``pad_len`` tokens;
    the average runs over every position, padding included.
    """
    if grounding.kind != GROUNDING:
        raise ValueError(
            f"box loss needs a grounding backbone, got kind {grounding.kind!r}"
        )
    ids = target_ids.ids if isinstance(target_ids, TokenSequence) else tuple(target_ids)
    if len(ids) != pad_len:
        raise ValueError(
            f"box targets must be padded to {pad_len} tokens, got {len(ids)}"
        )
    prompt, leaf = _grad_leaf(prompt_vis)
    logprobs = teacher_forced_logprobs(grounding, image, question, prompt, ids)
    loss = -logprobs.sum() / pad_len
    return LossValue(
        value=float(loss.detach()),
        per_token=tuple(float(v) for v in logprobs.detach()),
        norm_length=pad_len,
        grad=_grad_or_zeros(loss, leaf),
    )


def _view_nll(
    answerer: Backbone,
    view: np.ndarray,
    question: str,
    prompt: SoftPrompt,
    targets: Sequence[int] | TokenSequence,
) -> tuple[torch.Tensor, torch.Tensor]:
    logprobs = teacher_forced_logprobs(answerer, view, question, prompt, targets)
    return -logprobs.sum() / len(logprobs), logprobs


def answer_view_loss(
    answerer: Backbone,
    view: np.ndarray,
    question: str,
    prompt_ans: SoftPrompt,
    targets: Sequence[int] | TokenSequence,
) -> LossValue:
    """Length-normalized NLL of one teacher sequence on one view."""
    if answerer.kind != ANSWERING:
        raise ValueError(
            f"answer loss needs an answering backbone, got kind {answerer.kind!r}"
        )
    prompt, leaf = _grad_leaf(prompt_ans)
    loss, logprobs = _view_nll(answerer, view, question, prompt, targets)
    return LossValue(
        value=float(loss.detach()),
        per_token=tuple(float(v) for v in logprobs.detach()),
        norm_length=len(logprobs),
        grad=_grad_or_zeros(loss, leaf),
    )


def answer_loss(
    answerer: Backbone,
    image: np.ndarray,
    crop: np.ndarray,
    question: str,
    prompt_ans: SoftPrompt,
    targets_orig: Sequence[int] | TokenSequence,
    targets_crop: Sequence[int] | TokenSequence,
    reduction: str = "sum",
) -> LossValue:
    """Cross-view answer-consistency objective for the student prompt.

    Both view terms share one gradient tape, so ``grad`` is the exact
    gradient of the combined value.
    """
    if answerer.kind != ANSWERING:
        raise ValueError(
            f"answer loss needs an answering backbone, got kind {answerer.kind!r}"
        )
    if reduction not in ANS_REDUCTIONS:
        raise ValueError(
            f"reduction must be one of {ANS_REDUCTIONS}, got {reduction!r}"
        )
    prompt, leaf = _grad_leaf(prompt_ans)
    loss_orig, lp_orig = _view_nll(answerer, image, question, prompt, targets_orig)
    loss_crop, lp_crop = _view_nll(answerer, crop, question, prompt, targets_crop)
    total = loss_orig + loss_crop
    if reduction == "mean":
        total = total / 2
    return LossValue(
        value=float(total.detach()),
        per_token=tuple(float(v) for v in torch.cat([lp_orig, lp_crop]).detach()),
        norm_length=len(lp_orig) + len(lp_crop),
        grad=_grad_or_zeros(total, leaf),
        parts={
            "orig": float(loss_orig.detach()),
            "crop": float(loss_crop.detach()),
        },
    )


def total_loss(
    box: LossValue | None,
    answer: LossValue | None,
    weights: LossWeights = LossWeights(),
) -> LossValue:
    """Weighted sum of the per-epoch terms, for traces and reporting.

    The two terms descend different prompt sets, so the combined value
    carries no gradient of its own.
    """
    parts: dict[str, float] = {}
    value = 0.0
    if box is not None:
        parts["box"] = box.value
        value += weights.box * box.value
    if answer is not None:
        parts["answer"] = answer.value
        value += weights.answer * answer.value
    return LossValue(
        value=value, per_token=(), norm_length=0, grad=None, parts=parts
    )
