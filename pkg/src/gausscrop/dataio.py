"""Image and dataset codecs, synthetic scene generation, and result serialization."""

from __future__ import annotations

import csv
import io
import json
import math
import re
import zipfile
from dataclasses import dataclass, fields

import numpy as np

from gausscrop.analytics import Scene, SweepRecord
from gausscrop.crops import ImageDims, Rect
from gausscrop.rng import RngStream


class FormatError(ValueError):
    """Malformed or unsupported input bytes."""


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, H, W, C) floats in [0, 1]
    labels: np.ndarray  # (N,) ints in [0, class_count)
    class_count: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dims(self) -> ImageDims:
        return ImageDims(self.images.shape[2], self.images.shape[1])

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.images[index], self.labels[index], self.class_count)


# --- PPM -------------------------------------------------------------------

_PPM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def load_ppm(data: bytes) -> np.ndarray:
    """Decode a binary P6 PPM with maxval 255 into an ``(H, W, 3)`` float array in [0, 1]."""
    if not data.startswith(b"P6"):
        raise FormatError(f"not a binary P6 PPM (magic {data[:2]!r})")
    pos = 2
    header = []
    for _ in range(3):
        m = _PPM_TOKEN.match(data, pos)
        if m is None:
            raise FormatError("truncated PPM header")
        header.append(m.group(1))
        pos = m.end()
    try:
        width, height, maxval = (int(t) for t in header)
    except ValueError:
        raise FormatError(f"non-integer PPM header fields {header}") from None
    if width < 1 or height < 1:
        raise FormatError(f"invalid PPM size {width}x{height}")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after PPM header")
    pos += 1
    expected = width * height * 3
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(f"truncated PPM payload: {len(payload)} of {expected} bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return pixels.astype(np.float64) / 255.0


def save_ppm(image: np.ndarray) -> bytes:
    """Encode an ``(H, W, 3)`` or ``(H, W, 1)`` image with values in [0, 1] as P6."""
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    if image.shape[2] != 3:
        raise ValueError(f"PPM needs 1 or 3 channels, got {image.shape[2]}")
    h, w, _ = image.shape
    raw = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (w, h) + raw.tobytes()


# --- CIFAR-10 binary ---------------------------------------------------------

CIFAR_RECORD = 1 + 3 * 32 * 32


def load_cifar10_bin(data: bytes) -> LabeledDataset:
    """Decode CIFAR-10 binary batches: 1 label byte then 3072 bytes of planar R, G, B."""
    if len(data) == 0 or len(data) % CIFAR_RECORD:
        raise FormatError(f"CIFAR-10 binary length {len(data)} is not a positive multiple of {CIFAR_RECORD}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    if labels.max() >= 10:
        bad = int(np.flatnonzero(labels >= 10)[0])
        raise FormatError(f"record {bad} has label byte {labels[bad]} >= 10")
    images = raw[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).astype(np.float64) / 255.0
    return LabeledDataset(images, labels, 10)


# --- synthetic scenes --------------------------------------------------------

SHAPES = ("square", "disc", "plus", "diamond", "ring", "xcross")

# class colors, cycled when K exceeds the palette
PALETTE = np.array(
    [
        [0.85, 0.20, 0.20],
        [0.20, 0.70, 0.25],
        [0.25, 0.35, 0.90],
        [0.90, 0.80, 0.15],
        [0.75, 0.25, 0.80],
        [0.15, 0.80, 0.80],
        [0.95, 0.55, 0.15],
        [0.55, 0.55, 0.55],
    ]
)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Recipe for a labeled dataset of shapes on a noisy background.

    ``object_size_range`` bounds the object side as a fraction of the image
    side. Classes differ in both shape and base color; ``color_jitter``
    perturbs the color per object and ``background_jitter`` shifts the
    background level per image.
    """

    dims: ImageDims = ImageDims(32, 32)
    class_count: int = 4
    objects_per_image: tuple[int, int] = (1, 1)
    object_size_range: tuple[float, float] = (0.3, 0.5)
    placement: str = "centered"
    noise_level: float = 0.1
    color_jitter: float = 0.0
    background_jitter: float = 0.0
    channels: int = 3

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        lo, hi = self.object_size_range
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"object_size_range must satisfy 0 < lo <= hi <= 1, got {(lo, hi)}")
        a, b = self.objects_per_image
        if not (1 <= a <= b):
            raise ValueError(f"objects_per_image must satisfy 1 <= lo <= hi, got {(a, b)}")
        if self.placement not in ("centered", "uniform"):
            raise ValueError(f"placement must be 'centered' or 'uniform', got {self.placement!r}")
        if self.placement == "centered" and b != 1:
            raise ValueError("centered placement supports exactly one object per image")
        if self.noise_level < 0 or self.color_jitter < 0 or self.background_jitter < 0:
            raise ValueError("noise and jitter levels must be nonnegative")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")


def shape_mask(shape: str, w: int, h: int) -> np.ndarray:
    """Boolean ``(h, w)`` mask whose bounding box is the full ``w x h`` box."""
    ys = (np.arange(h) + 0.5 - h / 2) / (h / 2)
    xs = (np.arange(w) + 0.5 - w / 2) / (w / 2)
    dy, dx = np.abs(ys)[:, None], np.abs(xs)[None, :]
    if shape == "square":
        m = np.ones((h, w), dtype=bool)
    elif shape == "disc":
        m = dx**2 + dy**2 <= 1.0
    elif shape == "ring":
        r2 = dx**2 + dy**2
        m = (r2 <= 1.0) & (r2 >= 0.3)
    elif shape == "plus":
        m = (dx <= 0.34) | (dy <= 0.34)
    elif shape == "diamond":
        m = dx + dy <= 1.0
    elif shape == "xcross":
        sx, sy = xs[None, :], ys[:, None]
        m = (np.abs(sx - sy) <= 0.4) | (np.abs(sx + sy) <= 0.4)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    # tiny boxes can leave an edge row/col empty; pin its midpoint so the box stays tight
    for edge in (m[0, :], m[-1, :]):
        if not edge.any():
            edge[w // 2] = True
    for edge in (m[:, 0], m[:, -1]):
        if not edge.any():
            edge[h // 2] = True
    return m


def _object_box(spec: SyntheticSceneSpec, rng: RngStream) -> tuple[int, int]:
    lo, hi = spec.object_size_range
    frac = rng.uniform(lo, hi)
    w = max(1, min(spec.dims.width, round(frac * spec.dims.width)))
    h = max(1, min(spec.dims.height, round(frac * spec.dims.height)))
    if spec.placement == "centered":
        # parity match so the box center lands exactly on the image center
        w -= (spec.dims.width - w) % 2
        h -= (spec.dims.height - h) % 2
        w += 2 if w < 1 else 0
        h += 2 if h < 1 else 0
    return int(w), int(h)


def _overlaps(box: Rect, others: list[Rect]) -> bool:
    return any(
        box.left < o.right and o.left < box.right and box.top < o.bottom and o.top < box.bottom for o in others
    )


def gen_synthetic(spec: SyntheticSceneSpec, n: int, rng: RngStream) -> tuple[LabeledDataset, list[Scene]]:
    """Render ``n`` images with balanced labels; returns the dataset and each image's object boxes.

    Image ``i`` is drawn from ``rng.fork(i)`` so each image depends only on
    the seed and its index.
    """
    W, H, C = spec.dims.width, spec.dims.height, spec.channels
    images = np.empty((n, H, W, C))
    labels = np.arange(n) % spec.class_count
    scenes = []
    for i in range(n):
        r = rng.fork(i)
        label = int(labels[i])
        shape = SHAPES[label % len(SHAPES)]
        base = PALETTE[label % len(PALETTE)]
        bg = 0.5 + (r.uniform(-spec.background_jitter, spec.background_jitter) if spec.background_jitter else 0.0)
        img = np.full((H, W, 3), bg)
        lo, hi = spec.objects_per_image
        count = int(r.integers(lo, hi)) if hi > lo else lo
        boxes: list[Rect] = []
        for _ in range(count):
            for _attempt in range(50):
                w, h = _object_box(spec, r)
                if spec.placement == "centered":
                    box = Rect((W - w) // 2, (H - h) // 2, w, h)
                else:
                    box = Rect(int(r.integers(0, W - w)), int(r.integers(0, H - h)), w, h)
                if not _overlaps(box, boxes):
                    break
            else:
                continue
            color = base
            if spec.color_jitter:
                color = np.clip(base + r.normal(3) * spec.color_jitter, 0.0, 1.0)
            mask = shape_mask(shape, w, h)
            region = img[box.top : box.bottom, box.left : box.right]
            region[mask] = color
            boxes.append(box)
        if spec.noise_level:
            img = img + r.normal(img.shape) * spec.noise_level
        img = np.clip(img, 0.0, 1.0)
        if C == 1:
            img = img.mean(axis=2, keepdims=True)
        images[i] = img
        scenes.append(Scene(spec.dims, tuple(boxes)))
    return LabeledDataset(images, labels, spec.class_count), scenes


# --- results -----------------------------------------------------------------

RESULT_COLUMNS = (
    "method",
    "alpha",
    "crop_size",
    "seed",
    "fp_rate",
    "mean_pair_iou",
    "mean_center_distance",
    "oob_area_fraction",
    "lep_accuracy",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv_rows(rows: list[dict], columns) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue().encode("utf-8")


def write_results(records: list[SweepRecord], fmt: str = "csv") -> bytes:
    if fmt == "csv":
        return write_csv_rows([{c: getattr(r, c) for c in RESULT_COLUMNS} for r in records], RESULT_COLUMNS)
    if fmt == "json":
        docs = [{f.name: getattr(r, f.name) for f in fields(SweepRecord)} for r in records]
        for d in docs:
            for k, v in d.items():
                if isinstance(v, float) and not math.isfinite(v):
                    d[k] = None
        return (json.dumps(docs, indent=2) + "\n").encode("utf-8")
    raise ValueError(f"unknown results format {fmt!r}; expected 'csv' or 'json'")


def _parse_float(text: str) -> float | None:
    return None if text == "" else float(text)


def read_results(data: bytes, fmt: str = "csv") -> list[SweepRecord]:
    if fmt == "csv":
        reader = csv.DictReader(io.StringIO(data.decode("utf-8")))
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise FormatError(f"unexpected results header {reader.fieldnames}")
        out = []
        for row in reader:
            out.append(
                SweepRecord(
                    method=row["method"],
                    alpha=float(row["alpha"]),
                    crop_size=float(row["crop_size"]),
                    seed=int(row["seed"]),
                    fp_rate=float(row["fp_rate"]),
                    mean_pair_iou=float(row["mean_pair_iou"]),
                    mean_center_distance=float(row["mean_center_distance"]),
                    oob_area_fraction=float(row["oob_area_fraction"]),
                    lep_accuracy=_parse_float(row["lep_accuracy"]),
                )
            )
        return out
    if fmt == "json":
        out = []
        for d in json.loads(data):
            d = {k: (float("nan") if v is None and k in RESULT_COLUMNS[4:8] else v) for k, v in d.items()}
            out.append(SweepRecord(**d))
        return out
    raise ValueError(f"unknown results format {fmt!r}; expected 'csv' or 'json'")


# --- arrays ------------------------------------------------------------------


def save_npz(arrays: dict[str, np.ndarray]) -> bytes:
    """Encode arrays as an ``.npz`` archive readable by ``np.load``.

    Unlike ``np.savez`` the archive carries a fixed timestamp and sorted
    member order, so equal arrays always give equal bytes.
    """
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            member = io.BytesIO()
            np.lib.format.write_array(member, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), member.getvalue())
    return buf.getvalue()


def load_npz(data: bytes) -> dict[str, np.ndarray]:
    with np.load(io.BytesIO(data), allow_pickle=False) as npz:
        return {k: npz[k] for k in npz.files}
