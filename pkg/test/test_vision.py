"""A module for testing the vision.py module."""

import numpy as np
import pytest

import tensor as T
import vision


@pytest.fixture
def encoder():
    return vision.VisionEncoder(
        image_size=32,
        in_channels=1,
        channels=(4, 4, 8),
        feature_dim=8,
        norm_groups=2,
        blocks_per_stage=1,
        rng=np.random.default_rng(0),
    )


@pytest.fixture
def images():
    return np.random.default_rng(1).random((2, 32, 32, 1))


################################################
# VisionEncoder
################################################


def test_total_stride_is_16(encoder, images):
    grid = encoder(T.Tensor(images))
    assert grid.shape == (2, 2, 2, 8)
    assert encoder.grid_size == 2


def test_rejects_wrong_resolution(encoder):
    with pytest.raises(T.DimensionError):
        encoder(T.Tensor(np.zeros((1, 48, 48, 1))))


def test_rejects_wrong_channels(encoder):
    with pytest.raises(T.DimensionError):
        encoder(T.Tensor(np.zeros((1, 32, 32, 3))))


def test_rejects_size_not_divisible_by_stride():
    with pytest.raises(T.DimensionError):
        vision.VisionEncoder(40, 1, (4, 4, 8), 8, 2, 1, np.random.default_rng(0))


def test_deeper_stages_keep_geometry(images):
    deep = vision.VisionEncoder(32, 1, (4, 4, 8), 8, 2, 2, np.random.default_rng(0))
    assert deep(T.Tensor(images)).shape == (2, 2, 2, 8)
    assert len(deep.blocks) == 6


def test_encoder_is_deterministic(encoder, images):
    first = encoder(T.Tensor(images)).data
    second = encoder(T.Tensor(images)).data
    assert np.array_equal(first, second)


def test_gradient_reaches_stem(encoder, images):
    encoder(T.Tensor(images)).sum().backward()
    assert encoder.stem.weight.grad is not None
    assert encoder.stem.weight.grad.shape == encoder.stem.weight.shape


################################################
# encode_image / as_image_batch / flatten
################################################


def test_encode_single_image(encoder):
    grid = vision.encode_image(encoder, np.zeros((32, 32)))
    assert grid.shape == (1, 2, 2, 8)


def test_as_image_batch_replicates_grayscale():
    batch = vision.as_image_batch(np.ones((2, 16, 16, 1)), in_channels=3)
    assert batch.shape == (2, 16, 16, 3)


def test_flatten_is_row_major():
    grid = T.Tensor(np.arange(2 * 3 * 4 * 5, dtype=float).reshape(2, 3, 4, 5))
    flat = vision.flatten(grid)
    assert flat.shape == (2, 12, 5)
    for i in range(3):
        for j in range(4):
            assert np.array_equal(flat.data[:, i * 4 + j], grid.data[:, i, j])


def test_flatten_unbatched():
    grid = T.Tensor(np.zeros((3, 3, 7)))
    assert vision.flatten(grid).shape == (9, 7)
