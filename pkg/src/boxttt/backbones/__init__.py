"""Backbone registry and reference implementations."""

from __future__ import annotations

from ..errors import ConfigError
from .base import (
    ANSWERING,
    GROUNDING,
    KINDS,
    Backbone,
    BackboneDescriptor,
    TokenSequence,
    greedy_decode,
    grounding_predict_box,
    teacher_forced_logprobs,
)
from .scripted import (
    ScriptedBackbone,
    build_scripted_backbone,
    certainty_probs,
    load_scripted_backbone,
    sequence_rules,
    text_sequence_rules,
    uniform_probs,
)
from .stubs import build_checkpoint_stub
from .tokenizer import ALPHABET, EOS_ID, FULL_VOCAB, PAD_ID, CharTokenizer, pad_ids
from .toy import ToyBackbone, build_toy_backbone

REGISTRY = ("toy", "scripted:<path>", "viscot-stub", "llava-stub")


def build_backbone(name: str, kind: str, seed: int = 0) -> Backbone:
    """Resolve a backbone by registry name.

    ``toy`` builds the seeded recurrent reference model, ``scripted:<path>``
    loads an oracle fixture, and the ``*-stub`` names stand in for
    checkpoint-backed models that are not shipped here.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown backbone kind {kind!r}")
    if name == "toy":
        return build_toy_backbone(seed=seed, kind=kind)
    if name.startswith("scripted:"):
        path = name.split(":", 1)[1]
        if not path:
            raise ConfigError("scripted backbone requires a fixture path")
        model = load_scripted_backbone(path)
        if model.kind != kind:
            raise ConfigError(
                f"fixture {path!r} declares kind {model.kind!r}, "
                f"but a {kind!r} backbone was requested"
            )
        return model
    if name in ("viscot-stub", "llava-stub"):
        return build_checkpoint_stub(name, kind)
    raise ConfigError(
        f"unknown backbone {name!r}; known names: {', '.join(REGISTRY)}"
    )


__all__ = [
    "ALPHABET",
    "ANSWERING",
    "Backbone",
    "BackboneDescriptor",
    "CharTokenizer",
    "EOS_ID",
    "FULL_VOCAB",
    "GROUNDING",
    "KINDS",
    "PAD_ID",
    "REGISTRY",
    "ScriptedBackbone",
    "TokenSequence",
    "ToyBackbone",
    "build_backbone",
    "build_checkpoint_stub",
    "build_scripted_backbone",
    "build_toy_backbone",
    "certainty_probs",
    "greedy_decode",
    "grounding_predict_box",
    "load_scripted_backbone",
    "pad_ids",
    "sequence_rules",
    "teacher_forced_logprobs",
    "text_sequence_rules",
    "uniform_probs",
]
