"""Tiny differentiable reference backbone for desk-scale verification.

A frozen vanilla RNN over a conditioning sequence built from the prompt
rows (prepended), a patch-averaged image feature, and a hashed question
feature.  All weights come from a seeded generator and never change;
log-probabilities are differentiable with respect to the prompt
embeddings only.  Everything runs in float64 so finite-difference checks
have headroom.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

from ..geometry import validate_image
from ..prompts import SoftPrompt
from .base import Backbone, KINDS
from .tokenizer import FULL_VOCAB, CharTokenizer

_PATCH_GRID = 4
_HASH_BUCKETS = 64


def _grid_average(image: np.ndarray, grid: int) -> np.ndarray:
    """Mean RGB per cell of a fixed grid; cells never collapse to empty."""
    h, w = image.shape[:2]
    pixels = image.astype(np.float64) / 255.0
    features = np.empty((grid, grid, 3), dtype=np.float64)
    for i in range(grid):
        r0 = min(i * h // grid, h - 1)
        r1 = max(min((i + 1) * h // grid, h), r0 + 1)
        for j in range(grid):
            c0 = min(j * w // grid, w - 1)
            c1 = max(min((j + 1) * w // grid, w), c0 + 1)
            features[i, j] = pixels[r0:r1, c0:c1].mean(axis=(0, 1))
    return features.reshape(-1)


def _word_bucket(word: str, buckets: int) -> int:
    digest = hashlib.sha256(word.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % buckets


class ToyBackbone(Backbone):
    """Seeded frozen RNN; the prompt is the only differentiable input."""

    def __init__(self, seed: int, vocab_size: int, embed_dim: int, kind: str):
        if kind not in KINDS:
            raise ValueError(f"unknown backbone kind {kind!r}")
        if vocab_size < 2:
            raise ValueError(f"vocab size must be >= 2, got {vocab_size}")
        if embed_dim < 1:
            raise ValueError(f"embed_dim must be >= 1, got {embed_dim}")
        self.name = f"toy-{kind}-{seed}"
        self.kind = kind
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.seed = seed
        self.tokenizer = CharTokenizer()

        gen = torch.Generator().manual_seed(seed)
        d = embed_dim
        scale = 1.0 / np.sqrt(d)

        def draw(*shape):
            t = torch.randn(*shape, generator=gen, dtype=torch.float64) * scale
            t.requires_grad_(False)
            return t

        self._params = {
            "w_hidden": draw(d, d),
            "w_input": draw(d, d),
            "bias": draw(d),
            "h0": draw(d),
            "token_table": draw(vocab_size, d),
            "w_out": draw(vocab_size, d),
            "b_out": draw(vocab_size),
            "w_image": draw(d, 3 * _PATCH_GRID * _PATCH_GRID),
            "question_table": draw(_HASH_BUCKETS, d),
        }

    def fingerprint(self) -> str:
        hasher = hashlib.sha256()
        hasher.update(
            f"{self.name}|{self.kind}|{self.vocab_size}|{self.embed_dim}".encode()
        )
        for key in sorted(self._params):
            hasher.update(key.encode("ascii"))
            hasher.update(self._params[key].numpy().tobytes())
        return hasher.hexdigest()

    def _image_features(self, view: np.ndarray) -> torch.Tensor:
        view = validate_image(view)
        raw = torch.from_numpy(_grid_average(view, _PATCH_GRID))
        return self._params["w_image"] @ raw

    def _question_features(self, question: str) -> torch.Tensor:
        words = question.lower().split()
        if not words:
            return torch.zeros(self.embed_dim, dtype=torch.float64)
        rows = [self._params["question_table"][_word_bucket(w, _HASH_BUCKETS)] for w in words]
        return torch.stack(rows).mean(dim=0)

    def _step(self, hidden: torch.Tensor, vec: torch.Tensor) -> torch.Tensor:
        p = self._params
        return torch.tanh(p["w_hidden"] @ hidden + p["w_input"] @ vec + p["bias"])

    def init_state(self, view: np.ndarray, question: str, prompt: SoftPrompt) -> torch.Tensor:
        self.check_prompt(prompt)
        if prompt.embed_dim != self.embed_dim:
            raise ValueError(
                f"prompt embed_dim {prompt.embed_dim} does not match model "
                f"embed_dim {self.embed_dim}"
            )
        hidden = self._params["h0"]
        for row in prompt.embeddings:
            hidden = self._step(hidden, row)
        hidden = self._step(hidden, self._image_features(view))
        hidden = self._step(hidden, self._question_features(question))
        return hidden

    def next_logits(self, state: torch.Tensor) -> torch.Tensor:
        return self._params["w_out"] @ state + self._params["b_out"]

    def advance(self, state: torch.Tensor, token_id: int) -> torch.Tensor:
        self.check_token(token_id)
        return self._step(state, self._params["token_table"][token_id])


def build_toy_backbone(
    seed: int = 0,
    vocab: int = FULL_VOCAB,
    embed_dim: int = 16,
    kind: str = "answer",
) -> ToyBackbone:
    return ToyBackbone(seed=seed, vocab_size=vocab, embed_dim=embed_dim, kind=kind)
