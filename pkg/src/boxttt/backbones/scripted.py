"""Oracle backbone whose conditionals follow an explicit table.

The script maps (view digest, question, decoded prefix) to a probability
vector over the vocabulary.  Any component may be the wildcard ``"*"``;
lookup tries, in order: exact key, (view, question, *), (*, *, prefix),
(*, *, *).  Scripted models ignore prompts entirely, so every prompt
gradient through them is zero.  Unscripted contexts raise ScriptError.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from ..errors import ScriptError
from ..geometry import image_digest
from ..prompts import SoftPrompt
from .base import Backbone, KINDS
from .tokenizer import EOS_ID, CharTokenizer

WILDCARD = "*"

ScriptKey = tuple[str, str, "tuple[int, ...] | str"]
Script = dict


def uniform_probs(vocab_size: int) -> np.ndarray:
    return np.full(vocab_size, 1.0 / vocab_size, dtype=np.float64)


def certainty_probs(token_id: int, vocab_size: int) -> np.ndarray:
    if not 0 <= token_id < vocab_size:
        raise ValueError(f"token {token_id} outside vocabulary {vocab_size}")
    probs = np.zeros(vocab_size, dtype=np.float64)
    probs[token_id] = 1.0
    return probs


def sequence_rules(
    view: str,
    question: str,
    ids,
    vocab_size: int,
    end_with_eos: bool = True,
) -> Script:
    """Rules that deterministically emit ``ids`` (then EOS) for a context."""
    ids = tuple(int(i) for i in ids)
    rules: Script = {}
    for t, tok in enumerate(ids):
        rules[(view, question, ids[:t])] = certainty_probs(tok, vocab_size)
    if end_with_eos:
        rules[(view, question, ids)] = certainty_probs(EOS_ID, vocab_size)
    return rules


def text_sequence_rules(
    view: str,
    question: str,
    text: str,
    vocab_size: int,
) -> Script:
    """Sequence rules for a text emission, tokenized character-wise."""
    ids = CharTokenizer().encode(text)
    bad = [i for i in ids if i >= vocab_size]
    if bad:
        raise ValueError(
            f"text {text!r} needs token ids {bad} beyond vocab {vocab_size}"
        )
    return sequence_rules(view, question, ids, vocab_size)


class ScriptedBackbone(Backbone):
    """Conditional distributions read straight from a validated table."""

    def __init__(
        self,
        script: Script,
        vocab_size: int,
        kind: str,
        embed_dim: int = 8,
        name: str = "scripted",
    ):
        if kind not in KINDS:
            raise ValueError(f"unknown backbone kind {kind!r}")
        if vocab_size < 2:
            raise ValueError(f"vocab size must be >= 2, got {vocab_size}")
        self.name = name
        self.kind = kind
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.tokenizer = CharTokenizer()
        self._script: Script = {}
        for key, probs in script.items():
            view, question, prefix = key
            if prefix != WILDCARD:
                prefix = tuple(int(t) for t in prefix)
            probs = np.asarray(probs, dtype=np.float64)
            if probs.shape != (vocab_size,):
                raise ValueError(
                    f"rule {key}: expected {vocab_size} probabilities, "
                    f"got shape {probs.shape}"
                )
            if (probs < 0).any():
                raise ValueError(f"rule {key}: negative probabilities")
            if abs(float(probs.sum()) - 1.0) > 1e-9:
                raise ValueError(
                    f"rule {key}: probabilities sum to {probs.sum()}, not 1"
                )
            self._script[(view, question, prefix)] = probs

    def fingerprint(self) -> str:
        hasher = hashlib.sha256()
        hasher.update(f"{self.name}|{self.kind}|{self.vocab_size}".encode())
        for key in sorted(self._script, key=repr):
            hasher.update(repr(key).encode("utf-8"))
            hasher.update(self._script[key].tobytes())
        return hasher.hexdigest()

    def _lookup(self, view: str, question: str, prefix: tuple[int, ...]) -> np.ndarray:
        for key in (
            (view, question, prefix),
            (view, question, WILDCARD),
            (WILDCARD, WILDCARD, prefix),
            (WILDCARD, WILDCARD, WILDCARD),
        ):
            if key in self._script:
                return self._script[key]
        raise ScriptError(
            f"no scripted distribution for view={view!r} question={question!r} "
            f"prefix={prefix!r}"
        )

    def init_state(self, view: np.ndarray, question: str, prompt: SoftPrompt):
        self.check_prompt(prompt)
        return (image_digest(view), question, ())

    def next_logits(self, state) -> torch.Tensor:
        view, question, prefix = state
        probs = self._lookup(view, question, prefix)
        return torch.log(torch.from_numpy(probs))

    def advance(self, state, token_id: int):
        self.check_token(token_id)
        view, question, prefix = state
        return (view, question, prefix + (token_id,))


def build_scripted_backbone(
    script: Script,
    vocab_size: int,
    kind: str,
    embed_dim: int = 8,
    name: str = "scripted",
) -> ScriptedBackbone:
    return ScriptedBackbone(script, vocab_size, kind, embed_dim=embed_dim, name=name)


def _rule_probs(spec, vocab_size: int) -> np.ndarray:
    if spec == "uniform":
        return uniform_probs(vocab_size)
    if isinstance(spec, dict) and "certain" in spec:
        return certainty_probs(int(spec["certain"]), vocab_size)
    if isinstance(spec, list):
        return np.asarray(spec, dtype=np.float64)
    raise ValueError(f"unsupported probs spec {spec!r}")


def load_scripted_backbone(path: str | Path) -> ScriptedBackbone:
    """Build a scripted backbone from its JSON fixture (format in README)."""
    with open(path, "r", encoding="utf-8") as fh:
        fixture = json.load(fh)
    vocab_size = int(fixture["vocab_size"])
    script: Script = {}
    for rule in fixture.get("rules", []):
        view = rule.get("view", WILDCARD)
        question = rule.get("question", WILDCARD)
        if "emit" in rule:
            script.update(
                text_sequence_rules(view, question, rule["emit"], vocab_size)
            )
            continue
        prefix = rule.get("prefix", WILDCARD)
        if prefix != WILDCARD:
            prefix = tuple(int(t) for t in prefix)
        script[(view, question, prefix)] = _rule_probs(rule["probs"], vocab_size)
    return ScriptedBackbone(
        script,
        vocab_size=vocab_size,
        kind=fixture.get("kind", "answer"),
        embed_dim=int(fixture.get("embed_dim", 8)),
        name=fixture.get("name", "scripted"),
    )
