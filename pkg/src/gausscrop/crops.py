"""Crop samplers: RandomCrop, GCC, CGCC, MGCC and MCGCC.

Images are numpy arrays shaped ``(height, width, channels)``. Crop centers
for the Gaussian methods are drawn from ``N(mu, diag(alpha*w, alpha*h))``;
the variance is in pixels squared, so the spread grows with resolution.
GCC/MGCC keep out-of-bounds views and pad them; CGCC/MCGCC shift each view
back inside the image first.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from gausscrop.rng import RngStream


class Method(str, enum.Enum):
    RANDOM = "RandomCrop"
    GCC = "GCC"
    CGCC = "CGCC"
    MGCC = "MGCC"
    MCGCC = "MCGCC"

    @property
    def corrected(self) -> bool:
        return self in (Method.CGCC, Method.MCGCC)

    @property
    def samples_mean(self) -> bool:
        return self in (Method.MGCC, Method.MCGCC)

    @classmethod
    def parse(cls, value: "str | Method") -> "Method":
        if isinstance(value, Method):
            return value
        for m in cls:
            if value.lower() in (m.value.lower(), m.name.lower()):
                return m
        raise ValueError(
            f"unknown method {value!r}; expected one of {[m.value for m in cls]}"
        )


class PadPolicy(str, enum.Enum):
    ZERO = "zero"
    EDGE = "edge"

    @classmethod
    def parse(cls, value: "str | PadPolicy") -> "PadPolicy":
        if isinstance(value, PadPolicy):
            return value
        v = value.lower()
        if v in ("zero", "constant"):
            return cls.ZERO
        if v in ("edge", "clamp", "clamp-to-edge"):
            return cls.EDGE
        raise ValueError(f"unknown pad policy {value!r}; expected 'zero' or 'edge'")


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")

    @classmethod
    def of(cls, image: np.ndarray) -> "ImageDims":
        return cls(width=int(image.shape[1]), height=int(image.shape[0]))


@dataclass(frozen=True)
class Rect:
    """Crop rectangle in pixel coordinates; may extend past the image."""

    left: int
    top: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"rect extents must be positive, got {self.width}x{self.height}")

    @property
    def right(self) -> int:
        return self.left + self.width

    @property
    def bottom(self) -> int:
        return self.top + self.height

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.left + self.width / 2, self.top + self.height / 2)

    def in_bounds(self, dims: ImageDims) -> bool:
        return (
            self.left >= 0
            and self.top >= 0
            and self.right <= dims.width
            and self.bottom <= dims.height
        )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.left, self.top, self.width, self.height)

    def to_dict(self) -> dict:
        return {"left": self.left, "top": self.top, "width": self.width, "height": self.height}


@dataclass(frozen=True)
class CropperConfig:
    method: Method = Method.GCC
    alpha: float = 1.0
    crop_size: float = 0.4
    uniform_bounds: tuple[float, float] = (0.25, 0.75)
    n_views: int = 2
    pad_policy: PadPolicy = PadPolicy.ZERO

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        object.__setattr__(self, "pad_policy", PadPolicy.parse(self.pad_policy))
        object.__setattr__(self, "uniform_bounds", tuple(float(v) for v in self.uniform_bounds))
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        _check_crop_size(self.crop_size)
        a, b = self.uniform_bounds
        if not (0.0 <= a <= b <= 1.0):
            raise ValueError(f"uniform_bounds must satisfy 0 <= a <= b <= 1, got {(a, b)}")
        if int(self.n_views) != self.n_views or self.n_views < 2:
            raise ValueError(f"n_views must be an integer >= 2, got {self.n_views}")


@dataclass
class ViewSet:
    rects: list[Rect]
    views: list[np.ndarray]
    sampled_mean: tuple[float, float] | None = field(default=None)


def _check_crop_size(crop_size: float) -> None:
    if not (0.0 < crop_size <= 1.0):
        raise ValueError(f"crop_size must lie in (0, 1], got {crop_size}")


def round_half_away(x):
    """Round to nearest integer, ties away from zero (numpy rounds ties to even)."""
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return out.astype(np.int64)


def compute_view_dims(crop_size: float, dims: ImageDims) -> tuple[int, int]:
    """Side lengths of a view covering ``crop_size`` of the image area."""
    _check_crop_size(crop_size)
    scale = np.sqrt(crop_size)
    w_c = max(1, int(round_half_away(scale * dims.width)))
    h_c = max(1, int(round_half_away(scale * dims.height)))
    return w_c, h_c


def _gaussian_std(dims: ImageDims, alpha: float) -> np.ndarray:
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return np.sqrt([alpha * dims.width, alpha * dims.height])


def sample_gcc_centers(rng: RngStream, dims: ImageDims, alpha: float, n_views: int = 2) -> np.ndarray:
    """Draw ``n_views`` real-valued centers around the image center. Returns ``(n_views, 2)`` as (x, y)."""
    std = _gaussian_std(dims, alpha)
    mu = np.array([dims.width / 2, dims.height / 2])
    return mu + rng.normal((n_views, 2)) * std


def sample_mgcc_centers(
    rng: RngStream,
    dims: ImageDims,
    alpha: float,
    bounds: tuple[float, float],
    n_views: int = 2,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw one mean from the uniform box, then ``n_views`` centers around it."""
    a, b = bounds
    if a > b:
        raise ValueError(f"uniform bounds need a <= b, got {(a, b)}")
    std = _gaussian_std(dims, alpha)
    mu = _uniform_means(rng, dims, bounds, 1)[0]
    centers = mu + rng.normal((n_views, 2)) * std
    return mu, centers


def _uniform_means(rng: RngStream, dims: ImageDims, bounds, n: int) -> np.ndarray:
    a, b = bounds
    u = rng.random((n, 2))
    lo = np.array([a * dims.width, a * dims.height])
    hi = np.array([b * dims.width, b * dims.height])
    return lo + (hi - lo) * u


def center_to_rect(center, view_dims: tuple[int, int]) -> Rect:
    w_c, h_c = view_dims
    x, y = center
    return Rect(
        left=int(round_half_away(x - w_c / 2)),
        top=int(round_half_away(y - h_c / 2)),
        width=int(w_c),
        height=int(h_c),
    )


def correct_rect(rect: Rect, dims: ImageDims) -> Rect:
    """Translate ``rect`` the minimal distance per axis so it lies inside the image."""
    if rect.width > dims.width or rect.height > dims.height:
        raise ValueError(
            f"rect {rect.width}x{rect.height} does not fit in image {dims.width}x{dims.height}"
        )
    left = min(max(rect.left, 0), dims.width - rect.width)
    top = min(max(rect.top, 0), dims.height - rect.height)
    return Rect(left, top, rect.width, rect.height)


def sample_random_crop(rng: RngStream, dims: ImageDims, crop_size: float) -> Rect:
    w_c, h_c = compute_view_dims(crop_size, dims)
    left = int(rng.integers(0, dims.width - w_c))
    top = int(rng.integers(0, dims.height - h_c))
    return Rect(left, top, w_c, h_c)


def sample_rect_array(
    config: CropperConfig,
    dims: ImageDims,
    n_draws: int,
    rng: RngStream,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Vectorized sampler for ``n_draws`` independent view sets.

    Returns ``rects`` with shape ``(n_draws, n_views, 4)`` holding
    ``(left, top, width, height)`` and, for MGCC/MCGCC, the per-draw means
    with shape ``(n_draws, 2)`` (``None`` otherwise). A single draw
    consumes the stream exactly like the scalar samplers above.
    """
    w_c, h_c = compute_view_dims(config.crop_size, dims)
    n_views = config.n_views
    method = config.method
    rects = np.empty((n_draws, n_views, 4), dtype=np.int64)
    rects[..., 2] = w_c
    rects[..., 3] = h_c
    means = None

    if method is Method.RANDOM:
        rects[..., 0] = rng.integers(0, dims.width - w_c, size=(n_draws, n_views))
        rects[..., 1] = rng.integers(0, dims.height - h_c, size=(n_draws, n_views))
        return rects, None

    std = _gaussian_std(dims, config.alpha)
    if method.samples_mean:
        means = _uniform_means(rng, dims, config.uniform_bounds, n_draws)
        mu = means[:, None, :]
    else:
        mu = np.array([dims.width / 2, dims.height / 2])
    centers = mu + rng.normal((n_draws, n_views, 2)) * std
    rects[..., 0] = round_half_away(centers[..., 0] - w_c / 2)
    rects[..., 1] = round_half_away(centers[..., 1] - h_c / 2)
    if method.corrected:
        np.clip(rects[..., 0], 0, dims.width - w_c, out=rects[..., 0])
        np.clip(rects[..., 1], 0, dims.height - h_c, out=rects[..., 1])
    return rects, means


def extract_view(image: np.ndarray, rect: Rect, pad_policy: PadPolicy = PadPolicy.ZERO) -> np.ndarray:
    """Copy ``rect`` out of ``image``, filling out-of-bounds pixels per ``pad_policy``."""
    image = _as_hwc(image)
    dims = ImageDims.of(image)
    if rect.width > dims.width or rect.height > dims.height:
        raise ValueError(
            f"rect {rect.width}x{rect.height} larger than image {dims.width}x{dims.height}"
        )
    batch = extract_views(image[None], np.array([rect.as_tuple()]), pad_policy)
    return batch[0]


def extract_views(images: np.ndarray, rects: np.ndarray, pad_policy: PadPolicy = PadPolicy.ZERO) -> np.ndarray:
    """Batched extraction: ``images`` is ``(B, H, W, C)``, ``rects`` is ``(B, 4)`` of equal size."""
    pad_policy = PadPolicy.parse(pad_policy)
    B, H, W, _ = images.shape
    rects = np.asarray(rects, dtype=np.int64)
    w_c, h_c = int(rects[0, 2]), int(rects[0, 3])
    if np.any(rects[:, 2] != w_c) or np.any(rects[:, 3] != h_c):
        raise ValueError("extract_views needs rects of identical size")
    rows = rects[:, 1:2] + np.arange(h_c)  # (B, h_c)
    cols = rects[:, 0:1] + np.arange(w_c)  # (B, w_c)
    rows_c = np.clip(rows, 0, H - 1)
    cols_c = np.clip(cols, 0, W - 1)
    b = np.arange(B)[:, None, None]
    out = images[b, rows_c[:, :, None], cols_c[:, None, :]]
    if pad_policy is PadPolicy.ZERO:
        inside = ((rows >= 0) & (rows < H))[:, :, None] & ((cols >= 0) & (cols < W))[:, None, :]
        out = np.where(inside[..., None], out, 0.0).astype(images.dtype, copy=False)
    return out


def _as_hwc(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        return image[:, :, None]
    if image.ndim != 3:
        raise ValueError(f"expected an (H, W, C) image, got shape {image.shape}")
    return image


def generate_views(image: np.ndarray, config: CropperConfig, rng: RngStream) -> ViewSet:
    """Sample one view set from ``image`` per ``config``."""
    image = _as_hwc(image)
    dims = ImageDims.of(image)
    rects, means = sample_rect_array(config, dims, 1, rng)
    rect_objs = [Rect(*map(int, r)) for r in rects[0]]
    views = list(extract_views(np.repeat(image[None], len(rect_objs), axis=0), rects[0], config.pad_policy))
    mean = None
    if means is not None:
        mean = (float(means[0, 0]), float(means[0, 1]))
    elif config.method is not Method.RANDOM:
        mean = (dims.width / 2, dims.height / 2)
    return ViewSet(rects=rect_objs, views=views, sampled_mean=mean)
