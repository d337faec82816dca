"""Contract every grounding/answer backbone satisfies, plus shared decoding.

A backbone is an immutable conditional language model over (view, question,
prompt).  Subclasses implement incremental state transitions; teacher
forcing, greedy decoding, and box prediction are derived here once.
Backbone parameters are frozen by construction; ``fingerprint()`` lets
callers assert that nothing inside ever changed.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import torch

from ..geometry import BoundingBox, BoxString, parse_box_string
from ..prompts import ANSWER, EVIDENCE, TEACHER, SoftPrompt
from .tokenizer import CharTokenizer, pad_ids

GROUNDING = "grounding"
ANSWERING = "answer"
KINDS = (GROUNDING, ANSWERING)

# Which prompt roles may condition which model kind.
_COMPATIBLE_ROLES = {GROUNDING: (EVIDENCE,), ANSWERING: (ANSWER, TEACHER)}


@dataclass(frozen=True)
class TokenSequence:
    """Token ids, optionally with the per-token log-probabilities that
    were realized when the sequence was produced."""

    ids: tuple[int, ...]
    logprobs: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.ids) < 1:
            raise ValueError("token sequences must be non-empty")
        if self.logprobs is not None and len(self.logprobs) != len(self.ids):
            raise ValueError("logprobs length must match ids length")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class BackboneDescriptor:
    name: str
    kind: str
    vocab_size: int
    embed_dim: int
    fingerprint: str


class Backbone(ABC):
    """Frozen conditional next-token model over (view, question, prompt)."""

    name: str = "backbone"
    kind: str
    vocab_size: int
    embed_dim: int
    tokenizer: CharTokenizer
    eos_id: int = CharTokenizer.eos_id

    @abstractmethod
    def init_state(self, view: np.ndarray, question: str, prompt: SoftPrompt) -> Any:
        """Consume the conditioning (prompt first, then the views) and
        return an opaque decoding state."""

    @abstractmethod
    def next_logits(self, state: Any) -> torch.Tensor:
        """Vocabulary logits for the next position given the state."""

    @abstractmethod
    def advance(self, state: Any, token_id: int) -> Any:
        """State after consuming one more token."""

    @abstractmethod
    def fingerprint(self) -> str:
        """Stable hash over every parameter; identical before and after
        any adaptation episode."""

    def descriptor(self) -> BackboneDescriptor:
        return BackboneDescriptor(
            name=self.name,
            kind=self.kind,
            vocab_size=self.vocab_size,
            embed_dim=self.embed_dim,
            fingerprint=self.fingerprint(),
        )

    def check_prompt(self, prompt: SoftPrompt) -> None:
        allowed = _COMPATIBLE_ROLES[self.kind]
        if prompt.role not in allowed:
            raise ValueError(
                f"prompt role {prompt.role!r} is not compatible with a "
                f"{self.kind} backbone (expected one of {allowed})"
            )

    def check_token(self, token_id: int) -> None:
        if not 0 <= token_id < self.vocab_size:
            raise ValueError(
                f"token id {token_id} outside vocabulary of size {self.vocab_size}"
            )


def teacher_forced_logprobs(
    model: Backbone,
    view: np.ndarray,
    question: str,
    prompt: SoftPrompt,
    targets: Sequence[int] | TokenSequence,
) -> torch.Tensor:
    """log P(target_t | target_<t, view, question; prompt) for every position.

    Returns a length-T float64 tensor, each entry <= 0, connected to the
    prompt embeddings when the backbone is differentiable.
    """
    ids = targets.ids if isinstance(targets, TokenSequence) else tuple(targets)
    if len(ids) < 1:
        raise ValueError("targets must be non-empty")
    model.check_prompt(prompt)
    for tok in ids:
        model.check_token(int(tok))
    state = model.init_state(view, question, prompt)
    logprobs = []
    for tok in ids:
        tok = int(tok)
        step = torch.log_softmax(model.next_logits(state), dim=-1)
        logprobs.append(step[tok])
        state = model.advance(state, tok)
    return torch.stack(logprobs)


def greedy_decode(
    model: Backbone,
    view: np.ndarray,
    question: str,
    prompt: SoftPrompt,
    max_len: int,
) -> TokenSequence:
    """Deterministic argmax decode; stops after emitting end-of-sequence."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    model.check_prompt(prompt)
    ids: list[int] = []
    logprobs: list[float] = []
    with torch.no_grad():
        state = model.init_state(view, question, prompt)
        for _ in range(max_len):
            step = torch.log_softmax(model.next_logits(state), dim=-1)
            tok = int(torch.argmax(step))
            ids.append(tok)
            logprobs.append(float(step[tok]))
            if tok == model.eos_id:
                break
            state = model.advance(state, tok)
    return TokenSequence(ids=tuple(ids), logprobs=tuple(logprobs))


def grounding_predict_box(
    model: Backbone,
    view: np.ndarray,
    question: str,
    prompt_vis: SoftPrompt,
    pad_len: int = 32,
) -> tuple[BoundingBox, BoxString, str]:
    """Greedy-decode a box string, parse with repair/fallback.

    Malformed model output is absorbed by the fallback policy, so this
    never raises on decode content.
    """
    if model.kind != GROUNDING:
        raise ValueError(f"expected a grounding backbone, got kind {model.kind!r}")
    sequence = greedy_decode(model, view, question, prompt_vis, max_len=pad_len)
    text = model.tokenizer.decode(sequence.ids)
    height, width = view.shape[:2]
    box, flag = parse_box_string(text, width, height)
    box_string = BoxString(text=text, token_ids=pad_ids(sequence.ids, pad_len))
    return box, box_string, flag
