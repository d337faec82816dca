"""Box-string parsing/serialization and the deterministic crop operator.

The box wire format is a bit-exact contract: ``{"bbox":[x1,y1,x2,y2]}``,
ASCII, integer pixel coordinates, no internal whitespace.  Coordinates are
half-open with x in [0, W] and y in [0, H].

The crop operator keeps the cropped region at its original coordinates,
whitens everything outside it, and resizes with nearest-neighbor
(floor-of-center) sampling so that outputs are byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Parse outcome flags.
PARSED = "parsed"
REPAIRED = "repaired"
FALLBACK = "fallback"

WHITE = 255

_BBOX_PATTERN = re.compile(
    r'\{\s*"bbox"\s*:\s*\[\s*-?\d+\s*,\s*-?\d+\s*,\s*-?\d+\s*,\s*-?\d+\s*\]\s*\}'
)


@dataclass(frozen=True)
class BoundingBox:
    """Integer pixel rectangle, half-open: pixels [x1, x2) x [y1, y2)."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise TypeError(f"{name} must be an int, got {value!r}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def is_valid(self, width: int, height: int) -> bool:
        return (
            0 <= self.x1 < self.x2 <= width and 0 <= self.y1 < self.y2 <= height
        )


@dataclass(frozen=True)
class BoxString:
    """Serialized box: canonical text plus (optionally) its padded token ids."""

    text: str
    token_ids: tuple[int, ...] | None = None


class ParseResult(NamedTuple):
    box: BoundingBox
    flag: str


def full_image_box(width: int, height: int) -> BoundingBox:
    return BoundingBox(0, 0, int(width), int(height))


def serialize_box(box: BoundingBox) -> BoxString:
    """Render a box in the canonical compact wire form."""
    text = f'{{"bbox":[{box.x1},{box.y1},{box.x2},{box.y2}]}}'
    return BoxString(text=text)


def clip_box(box: BoundingBox, width: int, height: int) -> tuple[BoundingBox, bool]:
    """Clip into [0,W]x[0,H] and repair degenerate edges.

    If an edge collapses after clipping (x2 <= x1), extend x2 by one pixel
    when possible, otherwise shift x1 back; same for y.  Returns the fixed
    box and whether anything changed.  Idempotent.
    """
    if width < 1 or height < 1:
        raise ValueError(f"image size must be positive, got {width}x{height}")
    x1 = min(max(box.x1, 0), width)
    x2 = min(max(box.x2, 0), width)
    y1 = min(max(box.y1, 0), height)
    y2 = min(max(box.y2, 0), height)
    if x2 <= x1:
        x2 = min(x1 + 1, width)
        if x2 <= x1:
            x1 = x2 - 1
    if y2 <= y1:
        y2 = min(y1 + 1, height)
        if y2 <= y1:
            y1 = y2 - 1
    clipped = BoundingBox(x1, y1, x2, y2)
    return clipped, clipped != box


def parse_box_string(text: str, image_width: int, image_height: int) -> ParseResult:
    """Parse arbitrary model output into a valid box.

    Well-formed input is a JSON object carrying "bbox": [x1,y1,x2,y2] with
    four integers, either as the whole (stripped) text or embedded in it.
    Coordinates are clipped/repaired into image bounds.  Anything else
    falls back to the full-image box.

    Flags: ``parsed`` (used verbatim), ``repaired`` (clipped or
    degenerate-fixed), ``fallback`` (malformed input).
    """
    if image_width < 1 or image_height < 1:
        raise ValueError(
            f"image size must be positive, got {image_width}x{image_height}"
        )
    fallback = ParseResult(full_image_box(image_width, image_height), FALLBACK)
    if not isinstance(text, str):
        return fallback

    payload = None
    try:
        payload = json.loads(text.strip())
    except (json.JSONDecodeError, ValueError):
        match = _BBOX_PATTERN.search(text)
        if match is not None:
            payload = json.loads(match.group(0))
    if not isinstance(payload, dict):
        return fallback
    coords = payload.get("bbox")
    if not isinstance(coords, list) or len(coords) != 4:
        return fallback
    if any(isinstance(c, bool) or not isinstance(c, int) for c in coords):
        return fallback

    raw = BoundingBox(*coords)
    box, changed = clip_box(raw, image_width, image_height)
    return ParseResult(box, REPAIRED if changed else PARSED)


def validate_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 array, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got dtype {image.dtype}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"image must be at least 1x1, got shape {image.shape}")
    return image


def resize_nearest(image: np.ndarray, target_resolution: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize with floor-of-center sampling.

    ``target_resolution`` is (width, height).  Output pixel (i, j) copies
    source pixel (floor((i+0.5)*H/th), floor((j+0.5)*W/tw)).
    """
    image = validate_image(image)
    tw, th = target_resolution
    if tw < 1 or th < 1:
        raise ValueError(f"target resolution must be positive, got {tw}x{th}")
    h, w = image.shape[:2]
    rows = np.minimum((((np.arange(th) + 0.5) * h) / th).astype(np.int64), h - 1)
    cols = np.minimum((((np.arange(tw) + 0.5) * w) / tw).astype(np.int64), w - 1)
    return np.ascontiguousarray(image[rows][:, cols])


def crop_and_pad(
    image: np.ndarray,
    box: BoundingBox,
    target_resolution: tuple[int, int],
) -> np.ndarray:
    """Whiten everything outside the box, then resize the full canvas.

    The boxed region stays at its original coordinates (the coordinate
    frame is preserved, so boxes predicted on the crop are directly
    comparable with boxes predicted on the original).  The box must already
    be clipped and non-degenerate; callers repair first via clip_box.
    """
    image = validate_image(image)
    h, w = image.shape[:2]
    if not box.is_valid(w, h):
        raise ValueError(f"box {box.as_tuple()} invalid or degenerate for {w}x{h}")
    canvas = np.full_like(image, WHITE)
    canvas[box.y1 : box.y2, box.x1 : box.x2] = image[box.y1 : box.y2, box.x1 : box.x2]
    return resize_nearest(canvas, target_resolution)


def image_digest(image: np.ndarray) -> str:
    """Stable short digest of pixel content, used to key scripted views."""
    image = validate_image(image)
    hasher = hashlib.sha256()
    hasher.update(str(image.shape).encode("ascii"))
    hasher.update(np.ascontiguousarray(image).tobytes())
    return hasher.hexdigest()[:16]
