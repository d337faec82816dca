"""Image loading, native-format converters, and the synthetic fixture.

The evaluation harness only ever sees the canonical JSON-lines schema
(see boxttt.evaluation).  The converters here translate the benchmarks'
native distribution formats into that schema; they are deliberately
tolerant about key spellings because public mirrors disagree on them.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .evaluation import CLOSED, OPEN, QARecord, save_dataset

_CLOSED_ANSWERS = frozenset({"yes", "no"})


def load_image(path: str | Path) -> np.ndarray:
    """Read an image file as an HxWx3 uint8 RGB array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise DataError(f"image file not found: {path}") from None
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def save_image(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def _first_key(entry: dict, keys: tuple[str, ...], context: str):
    for key in keys:
        if key in entry:
            return entry[key]
    raise DataError(f"{context}: none of the keys {keys} present")


def _load_json_entries(path: str | Path) -> list[dict]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        # fall back to JSON-lines dumps
        try:
            data = [json.loads(line) for line in text.splitlines() if line.strip()]
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: neither JSON nor JSON-lines: {exc}") from exc
    if not isinstance(data, list):
        raise DataError(f"{path}: expected a list of entries")
    return data


def convert_vqa_rad(source: str | Path, out_path: str | Path) -> int:
    """Convert a VQA-RAD release file; split comes from phrase_type."""
    records = []
    for i, entry in enumerate(_load_json_entries(source)):
        context = f"{source}[{i}]"
        phrase_type = str(entry.get("phrase_type", ""))
        split = "test" if phrase_type.startswith("test") else "train"
        answer_type = str(_first_key(entry, ("answer_type",), context)).lower()
        if answer_type not in (OPEN, CLOSED):
            raise DataError(f"{context}: unknown answer_type {answer_type!r}")
        records.append(
            QARecord(
                image=str(_first_key(entry, ("image_name", "image"), context)),
                question=str(_first_key(entry, ("question",), context)),
                answer=str(_first_key(entry, ("answer",), context)),
                answer_type=answer_type,
                dataset="vqa-rad",
                split=split,
                id=str(entry["qid"]) if "qid" in entry else None,
            )
        )
    return save_dataset(out_path, records)


def convert_slake(
    source: str | Path,
    out_path: str | Path,
    split: str,
    language: str = "en",
) -> int:
    """Convert one SLAKE split file, keeping one language (default English)."""
    records = []
    for i, entry in enumerate(_load_json_entries(source)):
        context = f"{source}[{i}]"
        if language and str(entry.get("q_lang", language)) != language:
            continue
        answer_type = str(_first_key(entry, ("answer_type",), context)).lower()
        if answer_type not in (OPEN, CLOSED):
            raise DataError(f"{context}: unknown answer_type {answer_type!r}")
        records.append(
            QARecord(
                image=str(_first_key(entry, ("img_name", "image"), context)),
                question=str(_first_key(entry, ("question",), context)),
                answer=str(_first_key(entry, ("answer",), context)),
                answer_type=answer_type,
                dataset="slake",
                split=split,
                id=str(entry["qid"]) if "qid" in entry else None,
            )
        )
    return save_dataset(out_path, records)


def convert_pathvqa(source: str | Path, out_path: str | Path, split: str) -> int:
    """Convert a PathVQA dump; yes/no answers are the closed subset."""
    records = []
    for i, entry in enumerate(_load_json_entries(source)):
        context = f"{source}[{i}]"
        answer = str(_first_key(entry, ("answer",), context))
        answer_type = CLOSED if answer.strip().lower() in _CLOSED_ANSWERS else OPEN
        records.append(
            QARecord(
                image=str(_first_key(entry, ("image", "img_id", "image_name"), context)),
                question=str(_first_key(entry, ("question",), context)),
                answer=answer,
                answer_type=answer_type,
                dataset="pathvqa",
                split=split,
                id=str(entry["qid"]) if "qid" in entry else None,
            )
        )
    return save_dataset(out_path, records)


_QUESTION_TEMPLATES = (
    ("is there a bright square in the image?", CLOSED),
    ("is the marked region dark?", CLOSED),
    ("what shape is highlighted?", OPEN),
    ("which side is brighter?", OPEN),
    ("does the image contain a gradient?", CLOSED),
)

_OPEN_ANSWERS = ("a square", "the left side", "a bright band", "the top corner")


def make_synthetic_dataset(
    out_dir: str | Path,
    num_records: int = 10,
    seed: int = 0,
    image_size: int = 24,
) -> Path:
    """Write a small deterministic fixture: PNG images plus records.jsonl.

    Images are blockwise random with one brighter rectangle so grounding
    has structure to look at.  Returns the records path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images_dir = out_dir / "images"
    images_dir.mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(num_records):
        image = rng.integers(0, 128, size=(image_size, image_size, 3), dtype=np.uint8)
        x1, y1 = rng.integers(0, image_size // 2, size=2)
        w, h = rng.integers(2, image_size // 2, size=2)
        image[y1 : y1 + h, x1 : x1 + w] = rng.integers(
            160, 256, size=(min(h, image_size - y1), min(w, image_size - x1), 3)
        )
        name = f"img_{i:03d}.png"
        save_image(images_dir / name, image)
        question, answer_type = _QUESTION_TEMPLATES[i % len(_QUESTION_TEMPLATES)]
        if answer_type == CLOSED:
            answer = "yes" if rng.integers(0, 2) else "no"
        else:
            answer = _OPEN_ANSWERS[int(rng.integers(0, len(_OPEN_ANSWERS)))]
        records.append(
            QARecord(
                image=str(Path("images") / name),
                question=question,
                answer=answer,
                answer_type=answer_type,
                dataset="toy",
                split="test",
                id=f"toy-{i:03d}",
            )
        )
    records_path = out_dir / "records.jsonl"
    save_dataset(records_path, records)
    return records_path


def resolve_image_path(records_path: str | Path, image_ref: str) -> Path:
    """Image references are relative to the records file's directory."""
    ref = Path(image_ref)
    if ref.is_absolute():
        return ref
    return Path(records_path).parent / ref
