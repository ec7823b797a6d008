"""Contrastive pretraining with crop views and the linear evaluation protocol."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from gausscrop.augment import AugmentConfig, augment_batch, channel_stats, standardize
from gausscrop.crops import (
    CropperConfig,
    ImageDims,
    center_to_rect,
    compute_view_dims,
    extract_views,
    round_half_away,
    sample_rect_array,
)
from gausscrop.dataio import LabeledDataset
from gausscrop.encoder import (
    EncoderParams,
    encoder_backward,
    encoder_forward,
    forward_cached,
    hidden_features,
    init_encoder,
)
from gausscrop.loss import LossReport, nt_xent_loss_and_grad
from gausscrop.rng import RngStream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.5
    lr: float = 0.05
    epochs: int = 10
    batch_size: int = 128
    embed_dim: int = 32
    hidden: tuple[int, ...] = (128,)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lr < 0:
            raise ValueError(f"lr must be nonnegative, got {self.lr}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be >= 1, got {self.embed_dim}")


@dataclass(frozen=True)
class EvalConfig:
    epochs: int = 300
    lr: float = 0.5
    test_fraction: float = 0.25
    features: str = "embedding"  # or "hidden": activations before the final layer
    views: str = "center"  # or "grid": mean over windows tiling the whole image

    def __post_init__(self):
        if not (0.0 < self.test_fraction < 1.0):
            raise ValueError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.features not in ("embedding", "hidden"):
            raise ValueError(f"features must be 'embedding' or 'hidden', got {self.features!r}")
        if self.views not in ("center", "grid"):
            raise ValueError(f"views must be 'center' or 'grid', got {self.views!r}")


@dataclass
class PretrainResult:
    params: EncoderParams
    loss_curve: list[float] = field(default_factory=list)


def with_dataset_stats(aug: AugmentConfig, images: np.ndarray) -> AugmentConfig:
    """Fill in standardization stats from ``images`` unless already set."""
    if aug.mean is not None:
        return aug
    mean, std = channel_stats(images)
    return aug.with_stats(mean, std)


def view_shape(cropper: CropperConfig, images: np.ndarray) -> tuple[int, int, int]:
    w_c, h_c = compute_view_dims(cropper.crop_size, ImageDims.of(images[0]))
    return (h_c, w_c, images.shape[-1])


def make_view_pairs(
    images: np.ndarray, cropper: CropperConfig, aug: AugmentConfig, rng: RngStream
) -> np.ndarray:
    """Two augmented views per image, interleaved so rows ``2k, 2k+1`` come from image ``k``."""
    if cropper.n_views != 2:
        raise ValueError("contrastive training uses view pairs; set n_views=2")
    rects, _ = sample_rect_array(cropper, ImageDims.of(images[0]), len(images), rng.fork(0))
    first = augment_batch(extract_views(images, rects[:, 0], cropper.pad_policy), aug, rng.fork(1))
    second = augment_batch(extract_views(images, rects[:, 1], cropper.pad_policy), aug, rng.fork(2))
    out = np.empty((2 * len(images), *first.shape[1:]))
    out[0::2] = first
    out[1::2] = second
    return out


def train_step(
    params: EncoderParams,
    images: np.ndarray,
    cropper: CropperConfig,
    aug: AugmentConfig,
    tau: float,
    lr: float,
    rng: RngStream,
) -> tuple[EncoderParams, LossReport]:
    """One SGD step on NT-Xent over a batch of images; ``params`` is left untouched."""
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")
    views = make_view_pairs(images, cropper, aug, rng)
    z, cache = forward_cached(params, views)
    report, dz = nt_xent_loss_and_grad(z, tau)
    grads_w, grads_b = encoder_backward(params, cache, dz)
    new = params.copy()
    if lr > 0:
        for W, b, gw, gb in zip(new.weights, new.biases, grads_w, grads_b):
            W -= lr * gw
            b -= lr * gb
    return new, report


def pretrain(
    images: np.ndarray,
    cropper: CropperConfig,
    aug: AugmentConfig,
    cfg: TrainConfig,
    rng: RngStream,
    params: EncoderParams | None = None,
) -> PretrainResult:
    """Run ``cfg.epochs`` passes of shuffled mini-batch SGD.

    Randomness is keyed by purpose and (epoch, batch) through ``rng.fork``:
    key 0 initializes the encoder, ``(1, epoch)`` shuffles, and
    ``(2, epoch, batch)`` drives crops, flips and so on.
    """
    if len(images) < 2:
        raise ValueError("pretraining needs at least two images")
    aug = with_dataset_stats(aug, images)
    if params is None:
        params = init_encoder(
            view_shape(cropper, images), rng.fork(0), cfg.hidden, cfg.embed_dim, cfg.activation
        )
    curve = []
    n = len(images)
    for epoch in range(cfg.epochs):
        order = rng.fork(1, epoch).permutation(n)
        losses, weights = [], []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                continue
            params, report = train_step(params, images[idx], cropper, aug, cfg.tau, cfg.lr, rng.fork(2, epoch, b))
            losses.append(report.loss)
            weights.append(len(idx))
        epoch_loss = float(np.average(losses, weights=weights))
        if not np.isfinite(epoch_loss):
            raise FloatingPointError(f"pretraining diverged at epoch {epoch}")
        curve.append(epoch_loss)
        log.info("epoch %d loss %.5f", epoch, epoch_loss)
    return PretrainResult(params, curve)


def center_views(images: np.ndarray, view_hw: tuple[int, int], aug: AugmentConfig) -> np.ndarray:
    """Center crop of each image at the encoder's view size, standardized, with no other augmentation."""
    h_c, w_c = view_hw
    dims = ImageDims.of(images[0])
    rect = center_to_rect((dims.width / 2, dims.height / 2), (w_c, h_c))
    rects = np.repeat([rect.as_tuple()], len(images), axis=0)
    views = extract_views(images, rects)
    if aug.mean is not None:
        views = standardize(views, aug.mean, aug.std)
    return views


def grid_offsets(size: int, view: int) -> np.ndarray:
    """Evenly spaced window origins whose windows jointly cover ``[0, size)``."""
    count = -(-size // view) + 1 if view < size else 1
    return np.unique(round_half_away(np.linspace(0, size - view, count)))


def grid_rects(dims: ImageDims, view_hw: tuple[int, int]) -> list[tuple[int, int, int, int]]:
    h_c, w_c = view_hw
    return [
        (int(x), int(y), w_c, h_c)
        for y in grid_offsets(dims.height, h_c)
        for x in grid_offsets(dims.width, w_c)
    ]


def embed_dataset(
    params: EncoderParams,
    images: np.ndarray,
    aug: AugmentConfig,
    features: str = "embedding",
    views: str = "center",
) -> np.ndarray:
    """Frozen-encoder features per image, from the center window or averaged over a covering grid."""
    encode = hidden_features if features == "hidden" else encoder_forward
    view_hw = params.input_shape[:2]
    if views == "center":
        return encode(params, center_views(images, view_hw, aug))
    total = None
    rects = grid_rects(ImageDims.of(images[0]), view_hw)
    for rect in rects:
        batch = extract_views(images, np.repeat([rect], len(images), axis=0))
        if aug.mean is not None:
            batch = standardize(batch, aug.mean, aug.std)
        out = encode(params, batch)
        total = out if total is None else total + out
    return total / len(rects)


def train_linear_classifier(
    x: np.ndarray, y: np.ndarray, class_count: int, epochs: int, lr: float
) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch gradient descent on softmax cross-entropy from zero weights."""
    W = np.zeros((x.shape[1], class_count))
    b = np.zeros(class_count)
    onehot = np.eye(class_count)[y]
    for _ in range(epochs):
        logits = x @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / len(x)
        W -= lr * (x.T @ g)
        b -= lr * g.sum(axis=0)
    return W, b


def split_indices(n: int, test_fraction: float, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return order[n_test:], order[:n_test]


def linear_eval(
    frozen: EncoderParams,
    dataset: LabeledDataset,
    rng: RngStream,
    cfg: EvalConfig = EvalConfig(),
    aug: AugmentConfig | None = None,
) -> float:
    """Held-out accuracy of a linear classifier trained on frozen encoder outputs.

    ``aug`` supplies the standardization stats used during pretraining; if it
    is missing they are computed from ``dataset``. The encoder is never
    modified.
    """
    if len(dataset.labels) and dataset.labels.max() >= dataset.class_count:
        raise ValueError("labels exceed class_count")
    aug = with_dataset_stats(aug or AugmentConfig(), dataset.images)
    feats = embed_dataset(frozen, dataset.images, aug, cfg.features, cfg.views)
    train, test = split_indices(len(dataset), cfg.test_fraction, rng)
    mu = feats[train].mean(axis=0)
    sd = feats[train].std(axis=0) + 1e-8
    x = (feats - mu) / sd
    W, b = train_linear_classifier(x[train], dataset.labels[train], dataset.class_count, cfg.epochs, cfg.lr)
    pred = np.argmax(x[test] @ W + b, axis=1)
    return float(np.mean(pred == dataset.labels[test]))
