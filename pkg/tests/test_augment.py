import numpy as np
import pytest
from scipy.ndimage import correlate

from gausscrop.augment import (
    AugmentConfig,
    augment,
    augment_batch,
    blur3x3,
    channel_stats,
    gaussian_kernel3,
    hflip,
    standardize,
)
from gausscrop.rng import RngStream


def test_flip_is_involution():
    img = np.random.default_rng(0).random((5, 7, 3))
    np.testing.assert_array_equal(hflip(hflip(img)), img)
    assert not np.array_equal(hflip(img), img)
    np.testing.assert_array_equal(hflip(img)[:, 0], img[:, -1])


def test_blur_preserves_constants():
    img = np.full((9, 6, 3), 0.37)
    np.testing.assert_allclose(blur3x3(img, 1.0), img, atol=1e-15)


def test_blur_matches_scipy_correlate():
    rng = np.random.default_rng(1)
    img = rng.random((8, 11, 3))
    k1 = gaussian_kernel3(0.8)
    kernel = np.outer(k1, k1)
    expected = np.stack([correlate(img[..., c], kernel, mode="nearest") for c in range(3)], axis=-1)
    np.testing.assert_allclose(blur3x3(img, 0.8), expected, atol=1e-12)


def test_blur_kernel_normalized_and_symmetric():
    k = gaussian_kernel3(1.0)
    assert k.sum() == pytest.approx(1.0)
    assert k[0] == k[2] < k[1]
    # sigma = 1: weights proportional to (e^-0.5, 1, e^-0.5)
    assert k[0] / k[1] == pytest.approx(np.exp(-0.5))


def test_blur_batched_equals_single():
    rng = np.random.default_rng(2)
    batch = rng.random((4, 6, 6, 3))
    out = blur3x3(batch, 1.0)
    for i in range(4):
        np.testing.assert_allclose(out[i], blur3x3(batch[i], 1.0))


def test_standardized_dataset_stats():
    rng = np.random.default_rng(3)
    images = rng.random((50, 8, 8, 3)) * [1.0, 0.5, 0.2] + [0.0, 0.3, 0.6]
    mean, std = channel_stats(images)
    out = standardize(images, mean, std)
    flat = out.reshape(-1, 3)
    np.testing.assert_allclose(flat.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(flat.std(axis=0), 1, atol=1e-12)


def test_channel_stats_rejects_constant_channel():
    images = np.random.default_rng(4).random((3, 4, 4, 3))
    images[..., 1] = 0.5
    with pytest.raises(ValueError, match="zero variance"):
        channel_stats(images)


@pytest.mark.parametrize(
    "kwargs",
    [{"flip_probability": 1.5}, {"blur_sigma": 0.0}, {"mean": (0.5,)}, {"mean": (0.5,), "std": (0.0,)}],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        AugmentConfig(**kwargs)


def test_augment_flip_probability_extremes():
    img = np.random.default_rng(5).random((6, 6, 3))
    never = augment(img, AugmentConfig(flip_probability=0.0), RngStream(0))
    always = augment(img, AugmentConfig(flip_probability=1.0), RngStream(0))
    np.testing.assert_allclose(never, blur3x3(img, 1.0))
    np.testing.assert_allclose(always, blur3x3(hflip(img), 1.0))


def test_augment_applies_standardization_last():
    img = np.random.default_rng(6).random((6, 6, 3))
    cfg = AugmentConfig(flip_probability=0.0, mean=(0.1, 0.2, 0.3), std=(2.0, 2.0, 2.0))
    out = augment(img, cfg, RngStream(0))
    np.testing.assert_allclose(out, (blur3x3(img, 1.0) - [0.1, 0.2, 0.3]) / 2.0)


def test_augment_batch_flip_rate():
    batch = np.random.default_rng(7).random((4000, 3, 3, 1))
    out = augment_batch(batch, AugmentConfig(flip_probability=0.5, blur_sigma=1.0), RngStream(1))
    flipped = np.array([np.allclose(o, blur3x3(hflip(b), 1.0)) and not np.allclose(o, blur3x3(b, 1.0))
                        for o, b in zip(out, batch)])
    # binomial(4000, 0.5): 5 standard errors is about 0.04
    assert abs(flipped.mean() - 0.5) < 0.04
