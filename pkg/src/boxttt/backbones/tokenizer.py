"""Character-level tokenizer shared by the reference backbones.

Id 0 is the reserved end-of-sequence token and id 1 the pad token; ids 2+
map one-to-one onto a fixed printable alphabet.  Real checkpoint adapters
substitute their own tokenizer behind the same encode/decode surface.
"""

from __future__ import annotations

import string

EOS_ID = 0
PAD_ID = 1

ALPHABET = string.digits + string.ascii_letters + string.punctuation + " "
FULL_VOCAB = 2 + len(ALPHABET)

_CHAR_TO_ID = {ch: i + 2 for i, ch in enumerate(ALPHABET)}


class CharTokenizer:
    """One token per character over the fixed printable alphabet."""

    eos_id = EOS_ID
    pad_id = PAD_ID
    vocab_size = FULL_VOCAB

    def encode(self, text: str) -> list[int]:
        ids = []
        for ch in text:
            if ch not in _CHAR_TO_ID:
                raise ValueError(f"character {ch!r} is outside the alphabet")
            ids.append(_CHAR_TO_ID[ch])
        return ids

    def decode(self, ids) -> str:
        chars = []
        for i in ids:
            if i == EOS_ID:
                break
            if i == PAD_ID:
                continue
            index = i - 2
            if 0 <= index < len(ALPHABET):
                chars.append(ALPHABET[index])
        return "".join(chars)


def pad_ids(ids, length: int, pad_id: int = PAD_ID) -> tuple[int, ...]:
    """Truncate or right-pad a token id sequence to an exact length."""
    if length < 1:
        raise ValueError(f"pad length must be positive, got {length}")
    clipped = list(ids)[:length]
    clipped.extend([pad_id] * (length - len(clipped)))
    return tuple(clipped)
