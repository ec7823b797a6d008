"""Monte Carlo geometry and false-positive analysis of crop samplers, plus the sweep driver."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from gausscrop.crops import CropperConfig, ImageDims, Method, Rect, sample_rect_array
from gausscrop.rng import RngStream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scene:
    """Image dimensions plus ground-truth object boxes."""

    dims: ImageDims
    objects: tuple[Rect, ...]

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        for obj in self.objects:
            if not obj.in_bounds(self.dims):
                raise ValueError(f"object {obj} lies outside the {self.dims.width}x{self.dims.height} image")


@dataclass
class GeometryStats:
    mean_pair_iou: float
    mean_center_distance: float
    oob_area_fraction: float
    coverage_grid: np.ndarray


@dataclass
class FpEstimate:
    fp_rate: float
    n_samples: int
    tau: float

    @property
    def standard_error(self) -> float:
        p = self.fp_rate
        return math.sqrt(p * (1.0 - p) / self.n_samples)


@dataclass
class SweepRecord:
    method: str
    alpha: float
    crop_size: float
    seed: int
    fp_rate: float
    mean_pair_iou: float
    mean_center_distance: float
    oob_area_fraction: float
    lep_accuracy: float | None = None
    error: str | None = field(default=None, compare=False)


def iou(r1: Rect, r2: Rect) -> float:
    ix = max(0, min(r1.right, r2.right) - max(r1.left, r2.left))
    iy = max(0, min(r1.bottom, r2.bottom) - max(r1.top, r2.top))
    inter = ix * iy
    return inter / (r1.area + r2.area - inter)


def oob_fraction(rect: Rect, dims: ImageDims) -> float:
    """Fraction of the rect's area lying outside the image."""
    ix = max(0, min(rect.right, dims.width) - max(rect.left, 0))
    iy = max(0, min(rect.bottom, dims.height) - max(rect.top, 0))
    return 1.0 - (ix * iy) / rect.area


def _intersection(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise-broadcast intersection areas of ``(..., 4)`` ltwh arrays."""
    ix = np.minimum(a[..., 0] + a[..., 2], b[..., 0] + b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    iy = np.minimum(a[..., 1] + a[..., 3], b[..., 1] + b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    return np.clip(ix, 0, None) * np.clip(iy, 0, None)


def _area(a: np.ndarray) -> np.ndarray:
    return a[..., 2] * a[..., 3]


def geometry_stats(
    config: CropperConfig,
    dims: ImageDims,
    n_samples: int,
    rng: RngStream,
    grid: int = 16,
) -> GeometryStats:
    """Aggregate pair overlap, center spread, padding and coverage over ``n_samples`` view sets.

    ``coverage_grid[i, j]`` is the fraction of sampled views whose rect
    contains the center of grid cell ``(row i, column j)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rects, _ = sample_rect_array(config, dims, n_samples, rng)
    n_views = config.n_views
    pairs = list(itertools.combinations(range(n_views), 2))
    ious, dists = [], []
    for i, j in pairs:
        a, b = rects[:, i], rects[:, j]
        inter = _intersection(a, b)
        ious.append(inter / (_area(a) + _area(b) - inter))
        ca = a[:, :2] + a[:, 2:] / 2
        cb = b[:, :2] + b[:, 2:] / 2
        dists.append(np.hypot(*(ca - cb).T))

    flat = rects.reshape(-1, 4)
    image_box = np.array([0, 0, dims.width, dims.height])
    oob = 1.0 - _intersection(flat, image_box) / _area(flat)

    cell_x = (np.arange(grid) + 0.5) * dims.width / grid
    cell_y = (np.arange(grid) + 0.5) * dims.height / grid
    in_x = (flat[:, 0:1] <= cell_x) & (cell_x < flat[:, 0:1] + flat[:, 2:3])  # (M, G)
    in_y = (flat[:, 1:2] <= cell_y) & (cell_y < flat[:, 1:2] + flat[:, 3:4])
    coverage = in_y.astype(float).T @ in_x.astype(float) / len(flat)

    return GeometryStats(
        mean_pair_iou=float(np.mean(ious)),
        mean_center_distance=float(np.mean(dists)),
        oob_area_fraction=float(np.mean(oob)),
        coverage_grid=coverage,
    )


def false_positive_mask(rects: np.ndarray, objects: np.ndarray, tau: float) -> np.ndarray:
    """Flag view pairs that share no object.

    ``rects`` is ``(n, 2, 4)``; ``objects`` is ``(K, 4)``. A pair is a true
    positive when some single object covers at least ``tau`` of each view's
    area.
    """
    v1 = rects[:, 0][:, None, :]
    v2 = rects[:, 1][:, None, :]
    obj = objects[None]
    c1 = _intersection(v1, obj) >= tau * _area(v1)
    c2 = _intersection(v2, obj) >= tau * _area(v2)
    return ~np.any(c1 & c2, axis=1)


def estimate_fp_rate(
    config: CropperConfig,
    scene: Scene,
    tau: float,
    n_samples: int,
    rng: RngStream,
) -> FpEstimate:
    if not scene.objects:
        raise ValueError("scene needs at least one object to estimate false positives")
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rects, _ = sample_rect_array(config, scene.dims, n_samples, rng)
    objects = np.array([o.as_tuple() for o in scene.objects], dtype=np.int64)
    fp = false_positive_mask(rects[:, :2], objects, tau)
    return FpEstimate(fp_rate=float(fp.mean()), n_samples=n_samples, tau=tau)


def default_scene(dims: ImageDims, object_fraction: float = 0.5) -> Scene:
    """Single object centered exactly on the image, covering about ``object_fraction`` of its area.

    Each side is the size nearest ``sqrt(object_fraction)`` of the image side
    that shares the image side's parity, so the box has no half-pixel offset.
    """
    if not (0.0 < object_fraction <= 1.0):
        raise ValueError(f"object_fraction must lie in (0, 1], got {object_fraction}")
    scale = math.sqrt(object_fraction)

    def fit(size: int) -> int:
        target = scale * size
        best = size - 2 * round((size - target) / 2)
        return min(size, max(best, 2 - size % 2))

    w, h = fit(dims.width), fit(dims.height)
    return Scene(dims, (Rect((dims.width - w) // 2, (dims.height - h) // 2, w, h),))


LepFn = Callable[[CropperConfig, int], float]


def run_sweep(
    methods: Sequence[str | Method],
    alphas: Sequence[float],
    crop_sizes: Sequence[float],
    seeds: Sequence[int],
    scene: Scene,
    *,
    tau: float = 0.2,
    n_samples: int = 10_000,
    grid: int = 16,
    uniform_bounds: tuple[float, float] = (0.25, 0.75),
    lep: LepFn | None = None,
    progress: Callable[[str], None] | None = None,
) -> list[SweepRecord]:
    """One record per (method, alpha, crop_size, seed) cell.

    Each cell draws from ``RngStream(seed).fork(cell_index)``, so results do
    not depend on execution order. ``lep(config, seed)`` optionally fills
    ``lep_accuracy``. A failing cell yields a record with NaN metrics and
    its error message; the sweep carries on.
    """
    cells = list(itertools.product(methods, alphas, crop_sizes))
    if not cells or not seeds:
        raise ValueError("sweep grid is empty")
    records = []
    for index, (method, alpha, crop_size) in enumerate(cells):
        for seed in seeds:
            name = Method.parse(method).value
            try:
                config = CropperConfig(
                    method=method, alpha=alpha, crop_size=crop_size, uniform_bounds=uniform_bounds
                )
                rng = RngStream(seed).fork(index)
                fp = estimate_fp_rate(config, scene, tau, n_samples, rng.fork(0))
                geo = geometry_stats(config, scene.dims, n_samples, rng.fork(1), grid=grid)
                acc = lep(config, seed) if lep is not None else None
                rec = SweepRecord(
                    name, float(alpha), float(crop_size), int(seed), fp.fp_rate,
                    geo.mean_pair_iou, geo.mean_center_distance, geo.oob_area_fraction, acc,
                )
            except Exception as exc:  # noqa: BLE001 - a bad cell must not abort the sweep
                log.warning("sweep cell %s alpha=%s crop=%s seed=%s failed: %s", name, alpha, crop_size, seed, exc)
                nan = float("nan")
                rec = SweepRecord(name, float(alpha), float(crop_size), int(seed), nan, nan, nan, nan, None, str(exc))
            records.append(rec)
            if progress is not None:
                progress(f"{name} alpha={alpha} crop={crop_size} seed={seed} fp={rec.fp_rate:.4f}")
    return records


SUMMARY_METRICS = ("fp_rate", "mean_pair_iou", "mean_center_distance", "oob_area_fraction", "lep_accuracy")


def summarize(records: Iterable[SweepRecord]) -> list[dict]:
    """Mean and sample standard deviation over seeds for each (method, alpha, crop_size)."""
    groups: dict[tuple, list[SweepRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.alpha, r.crop_size), []).append(r)
    rows = []
    for (method, alpha, crop_size), recs in groups.items():
        row = {"method": method, "alpha": alpha, "crop_size": crop_size, "n_seeds": len(recs)}
        for m in SUMMARY_METRICS:
            vals = np.array([getattr(r, m) for r in recs if getattr(r, m) is not None], dtype=float)
            row[f"{m}_mean"] = float(np.mean(vals)) if len(vals) else None
            row[f"{m}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else (0.0 if len(vals) else None)
        rows.append(row)
    return rows
