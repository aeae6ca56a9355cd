"""Synthetic seven-segment digits, meter frames and reading assembly.

A digit image is a 57x42 glyph box surrounded by 4 pixels of padding
(3x65x50 overall). The decimal point sits in the lower-right corner of the
glyph box, inside the block the SCNN subsamples.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .autocorrect import FIELDS, CorrectionReport, EnergyVector, Tolerances, correct
from .errors import DataFormatError, FieldParseError, StructuralError
from .scnn.network import DigitLabel, ScnnConfig, ScnnParams, predict_categories

GLYPH_H, GLYPH_W = 57, 42
PAD = 4
IMAGE_SHAPE = (3, GLYPH_H + 2 * PAD, GLYPH_W + 2 * PAD)

BACKGROUND = np.array([0.08, 0.10, 0.08])
LIT = np.array([0.95, 0.35, 0.20])
UNLIT = np.array([0.14, 0.15, 0.12])

# (row0, row1, col0, col1) in glyph-box coordinates, end-exclusive
SEGMENTS = {
    "a": (3, 8, 6, 28),
    "b": (6, 28, 26, 31),
    "c": (27, 50, 26, 31),
    "d": (45, 50, 6, 28),
    "e": (27, 50, 3, 8),
    "f": (6, 28, 3, 8),
    "g": (24, 29, 6, 28),
}
DOT = (44, 50, 33, 39)

DIGIT_SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abdeg", 3: "abcdg", 4: "bcfg",
    5: "acdfg", 6: "acdefg", 7: "abc", 8: "abcdefg", 9: "abcdfg",
}


@dataclass(frozen=True, eq=False)
class DigitImage:
    pixels: np.ndarray
    label: DigitLabel


def _paint(img, box, color, dy=0, dx=0):
    r0, r1, c0, c1 = box
    img[:, PAD + r0 + dy:PAD + r1 + dy, PAD + c0 + dx:PAD + c1 + dx] = color[:, None, None]


def render_digit(label, noise_seed: Optional[int] = None, noise: float = 0.05,
                 jitter: int = 2) -> DigitImage:
    """Render one seven-segment glyph.

    Without ``noise_seed`` the glyph is noiseless and centred. With a seed,
    the glyph is shifted by up to ``jitter`` pixels, its brightness scaled and
    Gaussian pixel noise added. Random draws do not depend on the label, so
    categories ``k`` and ``k + 10`` rendered with one seed differ only in the
    decimal-point dot.
    """
    label = label if isinstance(label, DigitLabel) else DigitLabel(label)
    img = np.empty(IMAGE_SHAPE)
    img[:] = BACKGROUND[:, None, None]
    dy = dx = 0
    gain = 1.0
    if noise_seed is not None:
        rng = np.random.default_rng(noise_seed)
        dy, dx = (int(v) for v in rng.integers(-jitter, jitter + 1, size=2))
        gain = float(rng.uniform(0.8, 1.0))
        grain = rng.normal(0.0, noise, size=IMAGE_SHAPE)
    if not label.is_blank:
        lit = set(DIGIT_SEGMENTS[label.digit])
        for name, box in SEGMENTS.items():
            _paint(img, box, gain * LIT if name in lit else UNLIT, dy, dx)
        _paint(img, DOT, gain * LIT if label.has_decimal_point else UNLIT, dy, dx)
    if noise_seed is not None:
        img = np.clip(img + grain, 0.0, 1.0)
    return DigitImage(img, label)


@dataclass(eq=False)
class DigitCorpus:
    """Stacked images (float32, N x 3 x 65 x 50) and categories 1..21."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, k) -> DigitImage:
        return DigitImage(self.images[k].astype(np.float64), DigitLabel(int(self.labels[k])))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=22)[1:]


def build_corpus(n_per_class: int, seed: int = 0, noise: float = 0.05,
                 jitter: int = 2) -> tuple[DigitCorpus, DigitCorpus]:
    """Balanced noisy corpus over all 21 categories, split 90/10 per class."""
    if n_per_class < 10:
        raise StructuralError(f"n_per_class must be >= 10, got {n_per_class}")
    rng = np.random.default_rng(seed)
    n_test = int(round(n_per_class * 0.1))
    n_train = n_per_class - n_test
    seeds = rng.integers(0, 2**63 - 1, size=(21, n_per_class))
    tr_img = np.empty((21 * n_train,) + IMAGE_SHAPE, dtype=np.float32)
    te_img = np.empty((21 * n_test,) + IMAGE_SHAPE, dtype=np.float32)
    tr_lab = np.repeat(np.arange(1, 22), n_train)
    te_lab = np.repeat(np.arange(1, 22), n_test)
    for c in range(21):
        order = rng.permutation(n_per_class)
        for k, j in enumerate(order):
            px = render_digit(c + 1, int(seeds[c, j]), noise, jitter).pixels
            if k < n_test:
                te_img[c * n_test + k] = px
            else:
                tr_img[c * n_train + k - n_test] = px
    return DigitCorpus(tr_img, tr_lab), DigitCorpus(te_img, te_lab)


# -- image files -------------------------------------------------------------

def to_uint8(pixels) -> np.ndarray:
    return np.round(np.clip(np.asarray(pixels), 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)


def save_png(pixels, path) -> None:
    from PIL import Image
    Image.fromarray(to_uint8(pixels), mode="RGB").save(path)


def load_frame(path) -> np.ndarray:
    """Read a PNG (or other Pillow image) or a ``.npy`` dump as a float64 CxHxW tensor."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path, allow_pickle=False).astype(np.float64)
        if arr.ndim != 3:
            raise DataFormatError(f"{path}: expected a CxHxW tensor, got shape {arr.shape}")
        return arr
    from PIL import Image
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1).copy()


def save_corpus(corpus: DigitCorpus, directory) -> None:
    """One PNG per image plus ``manifest.csv`` (file, category)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with (d / "manifest.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "category"])
        for k in range(len(corpus)):
            name = f"{k:06d}.png"
            save_png(corpus.images[k], d / name)
            w.writerow([name, int(corpus.labels[k])])


def load_corpus(directory) -> DigitCorpus:
    d = Path(directory)
    manifest = d / "manifest.csv"
    if not manifest.exists():
        raise DataFormatError(f"{d}: no manifest.csv")
    with manifest.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    images = np.empty((len(rows),) + IMAGE_SHAPE, dtype=np.float32)
    labels = np.empty(len(rows), dtype=np.int64)
    for k, row in enumerate(rows):
        px = load_frame(d / row["file"])
        if px.shape != IMAGE_SHAPE:
            raise DataFormatError(f"{row['file']}: shape {px.shape}, expected {IMAGE_SHAPE}")
        images[k] = px
        labels[k] = int(row["category"])
    return DigitCorpus(images, labels)


# -- meter layouts and frames -------------------------------------------------

@dataclass(frozen=True)
class MeterLayout:
    """Digit ROIs ``(x, y, w, h)`` and the position runs ``[start, stop)`` of each field."""

    rois: tuple
    field_map: Mapping[str, tuple]
    frame_shape: Optional[tuple] = None

    def __post_init__(self):
        rois = tuple(tuple(int(v) for v in r) for r in self.rois)
        object.__setattr__(self, "rois", rois)
        object.__setattr__(self, "field_map", {k: (int(a), int(b)) for k, (a, b) in dict(self.field_map).items()})
        for x, y, w, h in rois:
            if w <= 0 or h <= 0 or x < 0 or y < 0:
                raise StructuralError(f"invalid ROI {(x, y, w, h)}")
        for i in range(len(rois)):
            for j in range(i + 1, len(rois)):
                if _overlap(rois[i], rois[j]):
                    raise StructuralError(f"ROIs {i} and {j} overlap")
        for name, (a, b) in self.field_map.items():
            if not 0 <= a < b <= len(rois):
                raise StructuralError(f"field {name!r} run {(a, b)} outside {len(rois)} positions")
        if self.frame_shape is not None:
            _, fh, fw = self.frame_shape
            for r in rois:
                _check_inside(r, fh, fw)

    def to_json(self) -> str:
        doc = {"rois": [list(r) for r in self.rois],
               "field_map": {k: list(v) for k, v in self.field_map.items()}}
        if self.frame_shape is not None:
            doc["frame_shape"] = list(self.frame_shape)
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MeterLayout":
        doc = json.loads(text)
        try:
            shape = doc.get("frame_shape")
            return cls(doc["rois"], doc["field_map"], tuple(shape) if shape else None)
        except KeyError as exc:
            raise DataFormatError(f"meter layout is missing {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MeterLayout":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _overlap(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


def _check_inside(roi, fh, fw):
    x, y, w, h = roi
    if x < 0 or y < 0 or x + w > fw or y + h > fh:
        raise StructuralError(f"ROI {roi} outside a {fh}x{fw} frame")


def grid_layout(fields: Sequence[str] = FIELDS, digits_per_field: int = 7) -> MeterLayout:
    """One display row per field, each ``digits_per_field`` positions wide."""
    _, ih, iw = IMAGE_SHAPE
    rois, fmap = [], {}
    for row, name in enumerate(fields):
        start = len(rois)
        for col in range(digits_per_field):
            rois.append((col * iw + PAD, row * ih + PAD, GLYPH_W, GLYPH_H))
        fmap[name] = (start, len(rois))
    return MeterLayout(rois, fmap, (3, len(fields) * ih, digits_per_field * iw))


def text_to_labels(text: str, width: int) -> list[DigitLabel]:
    """Right-align a decimal string into ``width`` positions, blanks on the left."""
    out = []
    for ch in text.strip():
        if ch.isdigit():
            out.append(DigitLabel.of(int(ch)))
        elif ch == "." and out and not out[-1].has_decimal_point and not out[-1].is_blank:
            out[-1] = DigitLabel.of(out[-1].digit, True)
        else:
            raise StructuralError(f"cannot display {text!r}")
    if len(out) > width:
        raise StructuralError(f"{text!r} needs {len(out)} positions, only {width} available")
    return [DigitLabel(DigitLabel.BLANK)] * (width - len(out)) + out


def compose_frame(images: Sequence, layout: MeterLayout, frame_shape=None) -> np.ndarray:
    """Paste the glyph box of each digit image into its ROI (ROIs must be 57x42)."""
    shape = frame_shape or layout.frame_shape
    if shape is None:
        raise StructuralError("frame shape unknown")
    frame = np.empty(shape)
    frame[:] = BACKGROUND[:, None, None]
    if len(images) != len(layout.rois):
        raise StructuralError(f"{len(images)} digit images for {len(layout.rois)} ROIs")
    for img, (x, y, w, h) in zip(images, layout.rois):
        if (w, h) != (GLYPH_W, GLYPH_H):
            raise StructuralError("compose_frame needs glyph-sized ROIs")
        px = img.pixels if isinstance(img, DigitImage) else np.asarray(img)
        frame[:, y:y + h, x:x + w] = px[:, PAD:PAD + GLYPH_H, PAD:PAD + GLYPH_W]
    return frame


def render_reading(texts: Mapping[str, str], layout: MeterLayout,
                   noise_seed: Optional[int] = None, noise: float = 0.05, jitter: int = 0) -> np.ndarray:
    """Render a meter frame showing ``texts`` (field -> decimal string)."""
    labels = [DigitLabel(DigitLabel.BLANK)] * len(layout.rois)
    for name, (a, b) in layout.field_map.items():
        if name in texts:
            labels[a:b] = text_to_labels(texts[name], b - a)
    rng = np.random.default_rng(noise_seed) if noise_seed is not None else None
    images = [render_digit(l, None if rng is None else int(rng.integers(2**63 - 1)), noise, jitter)
              for l in labels]
    return compose_frame(images, layout)


def crop_rois(frame, layout: MeterLayout, background=BACKGROUND) -> list[np.ndarray]:
    """Nearest-neighbour resample every ROI to 57x42 and pad by 4 pixels."""
    frame = np.asarray(frame, dtype=np.float64)
    _, fh, fw = frame.shape
    out = []
    for roi in layout.rois:
        _check_inside(roi, fh, fw)
        x, y, w, h = roi
        rows = y + (np.arange(GLYPH_H) * h) // GLYPH_H
        cols = x + (np.arange(GLYPH_W) * w) // GLYPH_W
        img = np.empty(IMAGE_SHAPE)
        img[:] = np.asarray(background, dtype=np.float64)[:, None, None]
        img[:, PAD:PAD + GLYPH_H, PAD:PAD + GLYPH_W] = frame[:, rows[:, None], cols[None, :]]
        out.append(img)
    return out


def assemble_number(labels: Sequence, field: str = "?") -> float:
    """Turn a run of recognized positions into a number.

    Blanks are skipped; a decimal-point category places the point right after
    its digit.
    """
    labels = [l if isinstance(l, DigitLabel) else DigitLabel(int(l)) for l in labels]
    text, dots = "", []
    for pos, l in enumerate(labels):
        if l.is_blank:
            continue
        text += str(l.digit)
        if l.has_decimal_point:
            dots.append(pos)
            text += "."
    if not text:
        raise FieldParseError(field, range(len(labels)), "no digits recognized")
    if len(dots) > 1:
        raise FieldParseError(field, dots, "more than one decimal point")
    return float(text)


def read_frame(frame, layout: MeterLayout, params: ScnnParams, cfg: ScnnConfig) -> dict[str, float]:
    """Recognize every field in ``layout`` and return field -> value."""
    crops = np.stack(crop_rois(frame, layout))
    cats = predict_categories(crops, params, cfg)
    return {name: assemble_number(cats[a:b], name) for name, (a, b) in layout.field_map.items()}


def frame_to_energy_vector(frame, layout: MeterLayout, params: ScnnParams, cfg: ScnnConfig,
                           tolerances: Optional[Tolerances] = None,
                           scale=None) -> tuple[EnergyVector, CorrectionReport]:
    values = read_frame(frame, layout, params, cfg)
    missing = [f for f in FIELDS if f not in values]
    if missing:
        raise StructuralError(f"layout lacks fields {missing}")
    raw = EnergyVector(*(values[f] for f in FIELDS))
    report = correct(raw, tolerances, scale)
    return report.corrected, report


def frames_to_energy_vectors(frames, layout, params, cfg, tolerances=None, scale=None):
    """One ``(vector, report)`` per frame, in frame order."""
    return [frame_to_energy_vector(f, layout, params, cfg, tolerances, scale) for f in frames]
