"""Adapters for full-scale pretrained checkpoints.

These register the checkpoint-backed grounding and answering models by
name so configuration files and CLI flags can refer to them, but the
sandbox ships no multi-gigabyte weights: constructing one raises
BackboneUnavailableError with instructions.  The reference backbones
("toy", "scripted") exercise the identical engine code paths.
"""

from __future__ import annotations

from ..errors import BackboneUnavailableError

_CHECKPOINT_HINTS = {
    "viscot-stub": "a chain-of-thought grounding checkpoint (~7B parameters)",
    "llava-stub": "a LLaVA-family answering checkpoint (~7B parameters)",
}


def build_checkpoint_stub(name: str, kind: str):
    hint = _CHECKPOINT_HINTS.get(name, "a pretrained checkpoint")
    raise BackboneUnavailableError(
        f"backbone {name!r} (kind={kind!r}) requires {hint}; "
        "download the weights and register a Backbone subclass that wraps "
        "them, or use the self-contained 'toy' / 'scripted:<path>' backbones"
    )
