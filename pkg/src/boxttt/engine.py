"""Per-sample adaptation episodes.

One episode adapts the two soft-prompt sets on a single image–question
pair for a fixed number of mini-epochs.  Each mini-epoch runs the
evidence step (predict box on the original image, crop, validate on the
crop, descend the box NLL) and then the answer step (decode teacher
sequences on both views with the EMA prompts, descend the cross-view
NLL), followed by the teacher refresh.  Backbones stay frozen
throughout; only prompt embeddings change.

Ablation toggles:

* ``evidence_consistency=False`` — single-pass grounding: the crop is
  still produced for the answer step, but there is no second pass, and
  the box objective targets the first-pass string itself.
* ``ema_teacher=False`` — the teacher is tied to the student (copied
  after every student update instead of exponentially averaged).

A non-finite loss or gradient aborts the episode: the sample falls back
to its unadapted answer and the trace is marked, so downstream metrics
are never silently corrupted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .backbones.base import (
    ANSWERING,
    GROUNDING,
    Backbone,
    TokenSequence,
    greedy_decode,
    grounding_predict_box,
)
from .geometry import BoundingBox, BoxString, clip_box, crop_and_pad, validate_image
from .losses import ANS_REDUCTIONS, LossValue, answer_loss, box_loss
from .prompts import (
    ANSWER,
    ANSWER_TOKENS,
    EVIDENCE,
    EVIDENCE_TOKENS,
    OptimizerConfig,
    SoftPrompt,
    ema_update,
    init_prompt,
    prompt_distance,
    prompt_norm,
    sgd_step,
    sync_teacher,
)

Observer = Callable[[str, int, dict], None]


@dataclass(frozen=True)
class EngineConfig:
    """Episode hyperparameters; defaults are the published operating point."""

    mini_epochs: int = 20
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    evidence_tokens: int = EVIDENCE_TOKENS
    answer_tokens: int = ANSWER_TOKENS
    max_answer_len: int = 128
    box_pad_len: int = 32
    evidence_consistency: bool = True
    ema_teacher: bool = True
    ans_reduction: str = "sum"
    seed: int = 0
    share_prompts_per_image: bool = False

    def __post_init__(self):
        if self.mini_epochs < 1:
            raise ValueError(f"mini_epochs must be >= 1, got {self.mini_epochs}")
        for name in ("evidence_tokens", "answer_tokens", "max_answer_len", "box_pad_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.ans_reduction not in ANS_REDUCTIONS:
            raise ValueError(
                f"ans_reduction must be one of {ANS_REDUCTIONS}, "
                f"got {self.ans_reduction!r}"
            )


@dataclass(frozen=True)
class TraceEntry:
    """Everything observable about one mini-epoch."""

    epoch: int
    b1: tuple[int, int, int, int]
    b1_flag: str
    b2: tuple[int, int, int, int] | None
    b2_flag: str | None
    box_loss: float | None
    ans_loss_orig: float | None
    ans_loss_crop: float | None
    ans_loss: float | None
    prompt_vis_norm: float
    prompt_ans_norm: float
    teacher_distance: float

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "b1": list(self.b1),
            "b1_flag": self.b1_flag,
            "b2": None if self.b2 is None else list(self.b2),
            "b2_flag": self.b2_flag,
            "box_loss": self.box_loss,
            "ans_loss_orig": self.ans_loss_orig,
            "ans_loss_crop": self.ans_loss_crop,
            "ans_loss": self.ans_loss,
            "prompt_vis_norm": self.prompt_vis_norm,
            "prompt_ans_norm": self.prompt_ans_norm,
            "teacher_distance": self.teacher_distance,
        }


STATUS_OK = "ok"
STATUS_ABORTED = "aborted"


@dataclass(frozen=True)
class EpisodeTrace:
    """Complete episode record: per-epoch entries plus the final outputs."""

    entries: tuple[TraceEntry, ...]
    answer_text: str
    answer_ids: tuple[int, ...]
    box: tuple[int, int, int, int]
    status: str
    abort_reason: str | None
    grounding_fingerprint: str
    answerer_fingerprint: str

    def __post_init__(self):
        if self.status not in (STATUS_OK, STATUS_ABORTED):
            raise ValueError(f"unknown episode status {self.status!r}")
        if self.status == STATUS_OK:
            for entry in self.entries:
                for value in (
                    entry.box_loss,
                    entry.ans_loss_orig,
                    entry.ans_loss_crop,
                    entry.ans_loss,
                ):
                    if value is not None and not math.isfinite(value):
                        raise ValueError(
                            f"non-finite loss in a completed episode: {entry}"
                        )


@dataclass(frozen=True)
class EvidenceStepResult:
    prompt_vis: SoftPrompt
    b1: BoundingBox
    b1_flag: str
    crop: np.ndarray
    b2: BoundingBox | None
    b2_flag: str | None
    target_string: BoxString
    loss: LossValue


@dataclass(frozen=True)
class AnswerStepResult:
    prompt_ans: SoftPrompt
    s_orig: TokenSequence
    s_crop: TokenSequence
    loss: LossValue


def _finite(loss: LossValue) -> bool:
    if not math.isfinite(loss.value):
        return False
    return loss.grad is None or bool(torch.isfinite(loss.grad).all())


def evidence_step(
    image: np.ndarray,
    question: str,
    grounding: Backbone,
    prompt_vis: SoftPrompt,
    lr_vis: float,
    two_pass: bool = True,
    pad_len: int = 32,
) -> EvidenceStepResult:
    """Predict, crop, validate, and descend the box objective once.

    With ``two_pass=False`` the validation pass is skipped and the loss
    targets the first-pass string.  The returned prompt is NOT updated
    when the loss is non-finite; the caller decides how to proceed.
    """
    height, width = image.shape[:2]
    b1, b1_string, b1_flag = grounding_predict_box(
        grounding, image, question, prompt_vis, pad_len=pad_len
    )
    crop = crop_and_pad(image, b1, (width, height))

    b2: BoundingBox | None = None
    b2_flag: str | None = None
    if two_pass:
        b2, target_string, b2_flag = grounding_predict_box(
            grounding, crop, question, prompt_vis, pad_len=pad_len
        )
    else:
        target_string = b1_string

    loss = box_loss(
        grounding, image, question, prompt_vis, target_string.token_ids, pad_len=pad_len
    )
    updated = sgd_step(prompt_vis, loss.grad, lr_vis) if _finite(loss) else prompt_vis
    return EvidenceStepResult(
        prompt_vis=updated,
        b1=b1,
        b1_flag=b1_flag,
        crop=crop,
        b2=b2,
        b2_flag=b2_flag,
        target_string=target_string,
        loss=loss,
    )


def answer_step(
    image: np.ndarray,
    crop: np.ndarray,
    question: str,
    answerer: Backbone,
    prompt_ans: SoftPrompt,
    teacher: SoftPrompt,
    lr_ans: float,
    max_answer_len: int = 128,
    reduction: str = "sum",
) -> AnswerStepResult:
    """Decode teacher targets on both views, then descend the student.

    The teacher prompt is read-only here; refreshing it is the episode
    loop's job.  As in evidence_step, a non-finite loss leaves the
    student prompt untouched.
    """
    s_orig = greedy_decode(answerer, image, question, teacher, max_answer_len)
    s_crop = greedy_decode(answerer, crop, question, teacher, max_answer_len)
    loss = answer_loss(
        answerer,
        image,
        crop,
        question,
        prompt_ans,
        s_orig,
        s_crop,
        reduction=reduction,
    )
    updated = sgd_step(prompt_ans, loss.grad, lr_ans) if _finite(loss) else prompt_ans
    return AnswerStepResult(
        prompt_ans=updated, s_orig=s_orig, s_crop=s_crop, loss=loss
    )


def _notify(observer: Observer | None, phase: str, epoch: int, state: dict) -> None:
    if observer is not None:
        observer(phase, epoch, state)


def run_episode(
    image: np.ndarray,
    question: str,
    grounding: Backbone,
    answerer: Backbone,
    config: EngineConfig = EngineConfig(),
    initial_prompts: tuple[SoftPrompt, SoftPrompt] | None = None,
    observer: Observer | None = None,
) -> tuple[TokenSequence, BoundingBox, EpisodeTrace]:
    """Adapt prompts on one (image, question) pair and answer it.

    Returns the greedy answer on the original image under the final
    student prompt, the final-epoch first-pass box, and the full trace.
    ``initial_prompts`` (evidence, answer) supports carrying prompts
    across questions that share an image; default is a fresh zero start.
    ``observer(phase, epoch, state)`` is called at "start", "evidence",
    "answer", "teacher", and "end" with the live prompt objects.
    """
    image = validate_image(image)
    if grounding.kind != GROUNDING:
        raise ValueError(f"grounding backbone has kind {grounding.kind!r}")
    if answerer.kind != ANSWERING:
        raise ValueError(f"answering backbone has kind {answerer.kind!r}")

    g_print_before = grounding.fingerprint()
    f_print_before = answerer.fingerprint()

    if initial_prompts is None:
        prompt_vis = init_prompt(EVIDENCE, config.evidence_tokens, grounding.embed_dim)
        prompt_ans = init_prompt(ANSWER, config.answer_tokens, answerer.embed_dim)
    else:
        prompt_vis, prompt_ans = initial_prompts
        if prompt_vis.role != EVIDENCE or prompt_ans.role != ANSWER:
            raise ValueError("initial_prompts must be (evidence, answer) prompts")
    native_prompt = init_prompt(ANSWER, config.answer_tokens, answerer.embed_dim)
    teacher = sync_teacher(prompt_ans)

    def snapshot() -> dict:
        return {
            "prompt_vis": prompt_vis,
            "prompt_ans": prompt_ans,
            "teacher": teacher,
        }

    _notify(observer, "start", 0, snapshot())

    entries: list[TraceEntry] = []
    status = STATUS_OK
    abort_reason: str | None = None
    last_b1: BoundingBox | None = None
    last_b1_flag = "fallback"

    for epoch in range(1, config.mini_epochs + 1):
        ev = evidence_step(
            image,
            question,
            grounding,
            prompt_vis,
            config.optimizer.lr_vis,
            two_pass=config.evidence_consistency,
            pad_len=config.box_pad_len,
        )
        last_b1, last_b1_flag = ev.b1, ev.b1_flag
        if not _finite(ev.loss):
            status = STATUS_ABORTED
            abort_reason = f"non-finite box loss at mini-epoch {epoch}"
            entries.append(
                TraceEntry(
                    epoch=epoch,
                    b1=ev.b1.as_tuple(),
                    b1_flag=ev.b1_flag,
                    b2=None if ev.b2 is None else ev.b2.as_tuple(),
                    b2_flag=ev.b2_flag,
                    box_loss=ev.loss.value,
                    ans_loss_orig=None,
                    ans_loss_crop=None,
                    ans_loss=None,
                    prompt_vis_norm=prompt_norm(prompt_vis),
                    prompt_ans_norm=prompt_norm(prompt_ans),
                    teacher_distance=prompt_distance(teacher, prompt_ans),
                )
            )
            break
        prompt_vis = ev.prompt_vis
        _notify(observer, "evidence", epoch, snapshot())

        ans = answer_step(
            image,
            ev.crop,
            question,
            answerer,
            prompt_ans,
            teacher,
            config.optimizer.lr_ans,
            max_answer_len=config.max_answer_len,
            reduction=config.ans_reduction,
        )
        if not _finite(ans.loss):
            status = STATUS_ABORTED
            abort_reason = f"non-finite answer loss at mini-epoch {epoch}"
            entries.append(
                TraceEntry(
                    epoch=epoch,
                    b1=ev.b1.as_tuple(),
                    b1_flag=ev.b1_flag,
                    b2=None if ev.b2 is None else ev.b2.as_tuple(),
                    b2_flag=ev.b2_flag,
                    box_loss=ev.loss.value,
                    ans_loss_orig=ans.loss.parts["orig"],
                    ans_loss_crop=ans.loss.parts["crop"],
                    ans_loss=ans.loss.value,
                    prompt_vis_norm=prompt_norm(prompt_vis),
                    prompt_ans_norm=prompt_norm(prompt_ans),
                    teacher_distance=prompt_distance(teacher, prompt_ans),
                )
            )
            break
        prompt_ans = ans.prompt_ans
        _notify(observer, "answer", epoch, snapshot())

        if config.ema_teacher:
            teacher = ema_update(teacher, prompt_ans, config.optimizer.ema_decay)
        else:
            teacher = sync_teacher(prompt_ans)
        _notify(observer, "teacher", epoch, snapshot())

        entries.append(
            TraceEntry(
                epoch=epoch,
                b1=ev.b1.as_tuple(),
                b1_flag=ev.b1_flag,
                b2=None if ev.b2 is None else ev.b2.as_tuple(),
                b2_flag=ev.b2_flag,
                box_loss=ev.loss.value,
                ans_loss_orig=ans.loss.parts["orig"],
                ans_loss_crop=ans.loss.parts["crop"],
                ans_loss=ans.loss.value,
                prompt_vis_norm=prompt_norm(prompt_vis),
                prompt_ans_norm=prompt_norm(prompt_ans),
                teacher_distance=prompt_distance(teacher, prompt_ans),
            )
        )

    if status == STATUS_ABORTED:
        answer = greedy_decode(
            answerer, image, question, native_prompt, config.max_answer_len
        )
    else:
        answer = greedy_decode(
            answerer, image, question, prompt_ans, config.max_answer_len
        )

    if grounding.fingerprint() != g_print_before:
        raise RuntimeError("grounding backbone changed during the episode")
    if answerer.fingerprint() != f_print_before:
        raise RuntimeError("answering backbone changed during the episode")

    height, width = image.shape[:2]
    if last_b1 is None:  # unreachable: the first evidence step always sets it
        last_b1, _ = clip_box(BoundingBox(0, 0, width, height), width, height)

    trace = EpisodeTrace(
        entries=tuple(entries),
        answer_text=answerer.tokenizer.decode(answer.ids),
        answer_ids=answer.ids,
        box=last_b1.as_tuple(),
        status=status,
        abort_reason=abort_reason,
        grounding_fingerprint=g_print_before,
        answerer_fingerprint=f_print_before,
    )
    _notify(observer, "end", len(entries), snapshot())
    return answer, last_b1, trace


def native_answer(
    image: np.ndarray,
    question: str,
    answerer: Backbone,
    config: EngineConfig = EngineConfig(),
) -> TokenSequence:
    """Unadapted baseline: greedy answer under freshly zeroed prompts."""
    if answerer.kind != ANSWERING:
        raise ValueError(f"answering backbone has kind {answerer.kind!r}")
    prompt = init_prompt(ANSWER, config.answer_tokens, answerer.embed_dim)
    return greedy_decode(answerer, image, question, prompt, config.max_answer_len)


def native_box(
    image: np.ndarray,
    question: str,
    grounding: Backbone,
    config: EngineConfig = EngineConfig(),
) -> tuple[BoundingBox, BoxString, str]:
    """Unadapted first-pass grounding under freshly zeroed prompts."""
    image = validate_image(image)
    prompt = init_prompt(EVIDENCE, config.evidence_tokens, grounding.embed_dim)
    return grounding_predict_box(
        grounding, image, question, prompt, pad_len=config.box_pad_len
    )
