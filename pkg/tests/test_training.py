import numpy as np
import pytest

from gausscrop.augment import AugmentConfig
from gausscrop.crops import CropperConfig, ImageDims
from gausscrop.dataio import LabeledDataset, SyntheticSceneSpec, gen_synthetic
from gausscrop.encoder import (
    EncoderParams,
    encoder_backward,
    encoder_forward,
    forward_cached,
    init_encoder,
)
from gausscrop.loss import nt_xent_loss, nt_xent_loss_and_grad
from gausscrop.rng import RngStream
from gausscrop.training import (
    EvalConfig,
    TrainConfig,
    linear_eval,
    make_view_pairs,
    pretrain,
    train_step,
    view_shape,
    with_dataset_stats,
)


@pytest.fixture(scope="module")
def toy():
    spec = SyntheticSceneSpec(dims=ImageDims(16, 16), class_count=2, noise_level=0.05)
    ds, _ = gen_synthetic(spec, 64, RngStream(0))
    return ds


# --- encoder -------------------------------------------------------------------


def test_zero_weights_give_zero_output():
    params = init_encoder((4, 4, 3), RngStream(0), hidden=(8,), embed_dim=5)
    for w in params.weights:
        w[:] = 0
    out = encoder_forward(params, np.random.default_rng(0).random((3, 4, 4, 3)))
    np.testing.assert_array_equal(out, 0)


def test_identity_single_layer_reproduces_input():
    params = EncoderParams((2, 3, 1), [np.eye(6)], [np.zeros(6)], "relu")
    x = np.random.default_rng(1).normal(size=(5, 2, 3, 1))
    np.testing.assert_array_equal(encoder_forward(params, x), x.reshape(5, 6))


def test_forward_is_deterministic():
    p1 = init_encoder((5, 5, 3), RngStream(3))
    p2 = init_encoder((5, 5, 3), RngStream(3))
    x = np.random.default_rng(2).random((4, 5, 5, 3))
    np.testing.assert_array_equal(encoder_forward(p1, x), encoder_forward(p2, x))


def test_forward_shape_mismatch():
    params = init_encoder((5, 5, 3), RngStream(0))
    with pytest.raises(ValueError):
        encoder_forward(params, np.zeros((2, 4, 5, 3)))


def test_inconsistent_layers_rejected():
    with pytest.raises(ValueError):
        EncoderParams((2, 2, 1), [np.zeros((4, 3)), np.zeros((4, 2))], [np.zeros(3), np.zeros(2)])
    with pytest.raises(ValueError):
        EncoderParams((2, 2, 1), [np.zeros((4, 3))], [np.zeros(3)], "gelu")


@pytest.mark.parametrize("activation", ["tanh", "relu", "identity"])
def test_backprop_matches_finite_differences(activation):
    rng = RngStream(4)
    params = init_encoder((3, 3, 2), rng, hidden=(7, 5), embed_dim=4, activation=activation)
    for b in params.biases:
        b[:] = rng.normal(b.shape) * 0.1
    x = np.random.default_rng(5).normal(size=(6, 3, 3, 2))

    def loss_of(p):
        return nt_xent_loss(encoder_forward(p, x), 0.5).loss

    z, cache = forward_cached(params, x)
    _, dz = nt_xent_loss_and_grad(z, 0.5)
    gw, gb = encoder_backward(params, cache, dz)
    h = 1e-6
    for layer in range(len(params.weights)):
        for arr, grad in ((params.weights[layer], gw[layer]), (params.biases[layer], gb[layer])):
            for idx in list(np.ndindex(*arr.shape))[:25]:
                old = arr[idx]
                arr[idx] = old + h
                up = loss_of(params)
                arr[idx] = old - h
                down = loss_of(params)
                arr[idx] = old
                assert grad[idx] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-8)


def test_params_npz_roundtrip(tmp_path):
    params = init_encoder((4, 4, 3), RngStream(0), hidden=(6,), embed_dim=3, activation="tanh")
    np.savez(tmp_path / "enc.npz", **params.to_npz_dict())
    back = EncoderParams.from_npz_dict(np.load(tmp_path / "enc.npz"))
    assert back.input_shape == params.input_shape and back.activation == "tanh"
    for a, b in zip(back.weights + back.biases, params.weights + params.biases):
        np.testing.assert_array_equal(a, b)


# --- training ------------------------------------------------------------------


def test_view_pairs_are_interleaved(toy):
    cropper = CropperConfig(method="GCC", alpha=0.0, crop_size=0.5)
    aug = AugmentConfig(flip_probability=0.0)
    views = make_view_pairs(toy.images[:5], cropper, aug, RngStream(1))
    assert views.shape == (10, 11, 11, 3)
    # alpha = 0 and no flips: partners are identical
    np.testing.assert_array_equal(views[0::2], views[1::2])


def test_view_pairs_need_two_views(toy):
    with pytest.raises(ValueError):
        make_view_pairs(toy.images[:2], CropperConfig(n_views=3), AugmentConfig(), RngStream(0))


def test_zero_lr_leaves_params(toy):
    cropper = CropperConfig(method="GCC", alpha=0.5, crop_size=0.5)
    aug = with_dataset_stats(AugmentConfig(), toy.images)
    params = init_encoder(view_shape(cropper, toy.images), RngStream(0), hidden=(16,), embed_dim=8)
    new, report = train_step(params, toy.images[:8], cropper, aug, 0.5, 0.0, RngStream(1))
    for a, b in zip(new.weights, params.weights):
        np.testing.assert_array_equal(a, b)
    assert report.loss > 0


def test_train_step_does_not_mutate_input(toy):
    cropper = CropperConfig(method="GCC", alpha=0.5, crop_size=0.5)
    aug = with_dataset_stats(AugmentConfig(), toy.images)
    params = init_encoder(view_shape(cropper, toy.images), RngStream(0), hidden=(16,), embed_dim=8)
    before = [w.copy() for w in params.weights]
    new, _ = train_step(params, toy.images[:8], cropper, aug, 0.5, 0.1, RngStream(1))
    for a, b in zip(params.weights, before):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(new.weights[0], before[0])


def test_repeated_steps_reduce_loss(toy):
    cropper = CropperConfig(method="GCC", alpha=0.3, crop_size=0.5)
    aug = with_dataset_stats(AugmentConfig(), toy.images)
    batch = toy.images[:4]
    params = init_encoder(view_shape(cropper, batch), RngStream(0), hidden=(32,), embed_dim=8)
    losses = []
    for step in range(50):
        params, report = train_step(params, batch, cropper, aug, 0.5, 0.2, RngStream(9).fork(step))
        losses.append(report.loss)
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


def test_pretrain_deterministic_and_decreasing(toy):
    cropper = CropperConfig(method="GCC", alpha=0.2, crop_size=0.5)
    cfg = TrainConfig(epochs=6, lr=0.3, batch_size=16, hidden=(32,), embed_dim=8)
    a = pretrain(toy.images, cropper, AugmentConfig(), cfg, RngStream(5))
    b = pretrain(toy.images, cropper, AugmentConfig(), cfg, RngStream(5))
    assert a.loss_curve == b.loss_curve
    for wa, wb in zip(a.params.weights, b.params.weights):
        np.testing.assert_array_equal(wa, wb)
    assert all(np.isfinite(a.loss_curve))
    assert a.loss_curve[-1] < a.loss_curve[0]


def test_pretrain_zero_epochs_returns_initial(toy):
    cropper = CropperConfig(crop_size=0.5)
    init = init_encoder(view_shape(cropper, toy.images), RngStream(0), hidden=(8,), embed_dim=4)
    res = pretrain(toy.images, cropper, AugmentConfig(), TrainConfig(epochs=0), RngStream(0), params=init.copy())
    assert res.loss_curve == []
    for a, b in zip(res.params.weights, init.weights):
        np.testing.assert_array_equal(a, b)


def test_pretrain_rejects_tiny_dataset(toy):
    with pytest.raises(ValueError):
        pretrain(toy.images[:1], CropperConfig(), AugmentConfig(), TrainConfig(), RngStream(0))


@pytest.mark.parametrize("kwargs", [{"tau": 0}, {"lr": -1}, {"epochs": -1}, {"batch_size": 1}, {"embed_dim": 0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


# --- linear evaluation ---------------------------------------------------------


def separable_dataset(n=200, k=4):
    """Class index written into pixel (0, 0) of an otherwise noisy image."""
    rng = np.random.default_rng(0)
    labels = np.arange(n) % k
    images = rng.random((n, 4, 4, 1)) * 0.01
    images[:, 1, 1, 0] = labels / k + 0.1
    return LabeledDataset(images, labels, k)


def test_linear_eval_separable_is_perfect():
    ds = separable_dataset()
    # class is an ordinal in one pixel; ReLU threshold units make it linearly separable
    W1 = np.zeros((16, 4))
    W1[5, :] = 1.0
    b1 = -np.array([0.0, 0.2, 0.45, 0.7])
    params = EncoderParams((4, 4, 1), [W1, np.eye(4)], [b1, np.zeros(4)], "relu")
    aug = AugmentConfig(mean=(0.0,), std=(1.0,))
    acc = linear_eval(params, ds, RngStream(0), EvalConfig(epochs=2000, lr=1.0), aug)
    assert acc == 1.0


def test_linear_eval_leaves_encoder_frozen(toy):
    params = init_encoder((11, 11, 3), RngStream(0), hidden=(16,), embed_dim=8)
    before = params.copy()
    linear_eval(params, toy, RngStream(1), EvalConfig(epochs=20))
    for a, b in zip(params.weights + params.biases, before.weights + before.biases):
        np.testing.assert_array_equal(a, b)


def test_linear_eval_deterministic(toy):
    params = init_encoder((11, 11, 3), RngStream(0), hidden=(16,), embed_dim=8)
    a = linear_eval(params, toy, RngStream(1), EvalConfig(epochs=50))
    b = linear_eval(params, toy, RngStream(1), EvalConfig(epochs=50))
    assert a == b


def test_linear_eval_random_labels_near_chance():
    """Labels independent of the images: held-out accuracy sits near 1/K."""
    rng = np.random.default_rng(7)
    k = 4
    images = rng.random((2000, 8, 8, 3))
    labels = rng.permutation(np.arange(2000) % k)
    ds = LabeledDataset(images, labels, k)
    params = init_encoder((6, 6, 3), RngStream(0), hidden=(32,), embed_dim=16)
    acc = linear_eval(params, ds, RngStream(1), EvalConfig(epochs=200))
    # 500 test items: binomial sd about 0.019
    assert abs(acc - 1 / k) < 0.08


@pytest.mark.parametrize("kwargs", [{"test_fraction": 0.0}, {"test_fraction": 1.0}, {"features": "logits"}])
def test_eval_config_validation(kwargs):
    with pytest.raises(ValueError):
        EvalConfig(**kwargs)
