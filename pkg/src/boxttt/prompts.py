"""Soft-prompt state: zero init, plain gradient steps, EMA teacher refresh.

Prompts are the only trainable state in the whole procedure.  Every update
returns a fresh value; nothing here mutates its inputs, which is what lets
episodes assert bitwise constancy of the untouched prompt set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

EVIDENCE = "evidence"
ANSWER = "answer"
TEACHER = "teacher"
ROLES = (EVIDENCE, ANSWER, TEACHER)

# Reference defaults: token counts, learning rates, and teacher decay.
EVIDENCE_TOKENS = 24
ANSWER_TOKENS = 32
LR_VIS = 1e-3
LR_ANS = 5e-4
EMA_DECAY = 0.9


@dataclass(frozen=True)
class SoftPrompt:
    """A [num_tokens x embed_dim] matrix of continuous embeddings."""

    embeddings: torch.Tensor
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown prompt role {self.role!r}")
        if self.embeddings.ndim != 2:
            raise ValueError(f"embeddings must be 2-D, got {self.embeddings.shape}")
        if self.embeddings.dtype != torch.float64:
            raise ValueError(
                f"embeddings must be float64, got {self.embeddings.dtype}"
            )

    @property
    def num_tokens(self) -> int:
        return int(self.embeddings.shape[0])

    @property
    def embed_dim(self) -> int:
        return int(self.embeddings.shape[1])


@dataclass(frozen=True)
class OptimizerConfig:
    """Learning rates for the two prompt sets and the teacher decay."""

    lr_vis: float = LR_VIS
    lr_ans: float = LR_ANS
    ema_decay: float = EMA_DECAY

    def __post_init__(self):
        if self.lr_vis <= 0 or self.lr_ans <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie strictly in (0, 1)")


def init_prompt(role: str, num_tokens: int, embed_dim: int) -> SoftPrompt:
    """All-zero prompt of the requested shape."""
    if num_tokens < 1 or embed_dim < 1:
        raise ValueError(
            f"prompt dimensions must be positive, got {num_tokens}x{embed_dim}"
        )
    return SoftPrompt(
        embeddings=torch.zeros((num_tokens, embed_dim), dtype=torch.float64),
        role=role,
    )


def sgd_step(prompt: SoftPrompt, gradient: torch.Tensor, lr: float) -> SoftPrompt:
    """One plain first-order step: embeddings - lr * gradient."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if tuple(gradient.shape) != tuple(prompt.embeddings.shape):
        raise ValueError(
            f"gradient shape {tuple(gradient.shape)} does not match prompt "
            f"shape {tuple(prompt.embeddings.shape)}"
        )
    if not torch.isfinite(gradient).all():
        raise ValueError("gradient contains non-finite entries")
    updated = prompt.embeddings - lr * gradient.to(prompt.embeddings.dtype)
    return SoftPrompt(embeddings=updated, role=prompt.role)


def ema_update(teacher: SoftPrompt, student: SoftPrompt, decay: float) -> SoftPrompt:
    """teacher' = decay * teacher + (1 - decay) * student; student untouched."""
    if not 0.0 < decay < 1.0:
        raise ValueError(f"decay must lie strictly in (0, 1), got {decay}")
    if tuple(teacher.embeddings.shape) != tuple(student.embeddings.shape):
        raise ValueError("teacher and student shapes differ")
    blended = decay * teacher.embeddings + (1.0 - decay) * student.embeddings
    return SoftPrompt(embeddings=blended, role=teacher.role)


def sync_teacher(student: SoftPrompt) -> SoftPrompt:
    """Independent teacher copy; later student updates cannot alter it."""
    return SoftPrompt(embeddings=student.embeddings.detach().clone(), role=TEACHER)


def prompt_norm(prompt: SoftPrompt) -> float:
    """Frobenius norm of the embedding matrix."""
    return float(torch.linalg.norm(prompt.embeddings))


def prompt_distance(a: SoftPrompt, b: SoftPrompt) -> float:
    """Frobenius distance between two prompt matrices of equal shape."""
    if tuple(a.embeddings.shape) != tuple(b.embeddings.shape):
        raise ValueError("prompt shapes differ")
    return float(torch.linalg.norm(a.embeddings - b.embeddings))


def save_prompt(path: str | Path, prompt: SoftPrompt) -> None:
    """Persist as a one-line JSON header followed by raw little-endian bytes."""
    header = {
        "role": prompt.role,
        "shape": [prompt.num_tokens, prompt.embed_dim],
        "dtype": "float64",
    }
    data = prompt.embeddings.detach().numpy().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii"))
        fh.write(b"\n")
        fh.write(data)


def load_prompt(path: str | Path) -> SoftPrompt:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        data = fh.read()
    header = json.loads(header_line.decode("ascii"))
    if header.get("dtype") != "float64":
        raise ValueError(f"unsupported prompt dtype {header.get('dtype')!r}")
    rows, cols = header["shape"]
    import numpy as np

    matrix = np.frombuffer(data, dtype="<f8").reshape(rows, cols).copy()
    return SoftPrompt(embeddings=torch.from_numpy(matrix), role=header["role"])
