"""A module for testing the fusion.py module."""

import numpy as np
import pytest

import fusion
import tensor as T

N, E, D, MAX_TEXT, V = 4, 6, 8, 10, 20


def make_front_end(dual=True, seed=0):
    return fusion.FusionFrontEnd(E, D, N, MAX_TEXT, V, dual, np.random.default_rng(seed))


@pytest.fixture
def front_end():
    return make_front_end()


@pytest.fixture
def features():
    rng = np.random.default_rng(3)
    return T.Tensor(rng.normal(size=(2, N, E))), T.Tensor(rng.normal(size=(2, N, E)))


################################################
# embed_image_branch
################################################


def test_branch_shapes(front_end, features):
    past, cur = features
    assert front_end.embed_image_branch(past, "past").shape == (2, N, D)
    assert front_end.embed_image_branch(cur[0], "current").shape == (N, D)


def test_unknown_branch(front_end, features):
    with pytest.raises(T.ContractError):
        front_end.embed_image_branch(features[0], "future")


def test_single_mode_has_no_past_branch(features):
    single = make_front_end(dual=False)
    with pytest.raises(T.ContractError):
        single.embed_image_branch(features[0], "past")
    assert "t_enc_past" not in dict(single.named_parameters())


def test_single_mode_adds_no_time_encoding(features):
    single = make_front_end(dual=False)
    cur = features[1]
    expected = (single.projection(cur) + single.p_enc_img).data
    assert np.array_equal(single.embed_image_branch(cur, "current").data, expected)


def test_wrong_token_count(front_end):
    with pytest.raises(T.DimensionError):
        front_end.embed_image_branch(T.Tensor(np.zeros((2, N + 1, E))), "current")


def test_same_features_differ_by_branch(front_end, features):
    v = features[0]
    past = front_end.embed_image_branch(v, "past").data
    cur = front_end.embed_image_branch(v, "current").data
    expected = front_end.t_enc_past.data - front_end.t_enc_cur.data
    assert np.allclose(past - cur, expected, atol=1e-5)


################################################
# embed_text / fuse
################################################


def test_fused_length(front_end, features):
    past, cur = features
    text = front_end.embed_text(np.array([[1, 5, 6, 2], [1, 7, 2, 0]]))
    fused = front_end.fuse(
        front_end.embed_image_branch(past, "past"),
        front_end.embed_image_branch(cur, "current"),
        text,
    )
    assert fused.shape == (2, 2 * N + 4, D)


def test_past_only_loss_leaves_current_time_encoding_untouched(front_end, features):
    past, cur = features
    text = front_end.embed_text(np.array([[1, 5, 6, 2], [1, 7, 2, 0]]))
    fused = front_end.fuse(
        front_end.embed_image_branch(past, "past"),
        front_end.embed_image_branch(cur, "current"),
        text,
    )
    weights = np.random.default_rng(4).normal(size=(2, N, D))
    (fused[:, :N] * weights).sum().backward()
    assert front_end.t_enc_cur.grad is None or not front_end.t_enc_cur.grad.any()
    assert np.allclose(front_end.t_enc_past.grad, weights.sum(axis=0), atol=1e-5)


def test_single_mode_fused_length(features):
    single = make_front_end(dual=False)
    text = single.embed_text(np.array([1, 5, 2]))
    fused = single.fuse(None, single.embed_image_branch(features[1][0], "current"), text)
    assert fused.shape == (N + 3, D)


def test_text_too_long(front_end):
    with pytest.raises(T.DimensionError):
        front_end.embed_text(np.ones(MAX_TEXT + 1, dtype=int))


def test_text_id_out_of_range(front_end):
    with pytest.raises(IndexError):
        front_end.embed_text(np.array([1, V]))


def test_fuse_width_mismatch(front_end):
    with pytest.raises(T.DimensionError):
        front_end.fuse(None, T.Tensor(np.zeros((N, D))), T.Tensor(np.zeros((3, D + 1))))


################################################
# null past / mix_past / tie_time_encodings
################################################


def test_null_past_block(front_end):
    block = front_end.null_past_branch(3)
    assert block.shape == (3, N, D)
    expected = front_end.null_past.data + front_end.t_enc_past.data
    assert np.allclose(block.data[2], expected)


def test_mix_past_selects_per_sample(front_end, features):
    real = front_end.embed_image_branch(features[0], "past")
    null = front_end.null_past_branch(2)
    mixed = fusion.mix_past(real, null, np.array([True, False]))
    assert np.allclose(mixed.data[0], real.data[0])
    assert np.allclose(mixed.data[1], null.data[1])
    assert fusion.mix_past(real, null, np.array([True, True])) is real


def test_tied_time_encodings_make_swap_symmetric(front_end, features):
    front_end.tie_time_encodings(freeze=True)
    a, b = features
    text = front_end.embed_text(np.array([[1, 4, 2], [1, 5, 2]]))

    def fused(past, cur):
        return front_end.fuse(
            front_end.embed_image_branch(past, "past"),
            front_end.embed_image_branch(cur, "current"),
            text,
        ).data

    original = fused(a, b)
    swapped = fused(b, a)
    assert np.array_equal(original[:, :N], swapped[:, N : 2 * N])
    assert np.array_equal(original[:, N : 2 * N], swapped[:, :N])
    assert np.array_equal(original[:, 2 * N :], swapped[:, 2 * N :])
    assert not front_end.t_enc_past.requires_grad
    assert not front_end.t_enc_cur.requires_grad
