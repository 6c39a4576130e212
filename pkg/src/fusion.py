"""Fusion front-end: image projection, positional and time encodings, text embedding.

The Transformer-encoder input is assembled as::

    past   = P_img(v_past) + p_enc_img + t_enc_past
    cur    = P_img(v_cur)  + p_enc_img + t_enc_cur
    text   = token_embedding[ids] + p_enc_txt[:N_t]
    fused  = concat(past, cur, text)

In single-image mode there is no past block and the current block carries no
time encoding. A dual-mode sample without a prior visit gets a learned null-past
row repeated N times plus t_enc_past in place of the past block.
"""

import logging
from typing import Optional

import numpy as np

import tensor as T
from layers import Linear, Module, normal_parameter
from tensor import Tensor

logger = logging.getLogger(__name__)

BRANCHES = ("past", "current")


class FusionFrontEnd(Module):
    """
    Owns every fusion parameter group.

    Args:
        feature_dim (int): Encoder width E.
        d_model (int): Transformer width D.
        n_image_tokens (int): N = Ĥ·Ŵ.
        max_text_len (int): Longest accepted text sequence.
        vocab_size (int): V.
        dual (bool): Whether the past branch and time encodings exist.
        rng (np.random.Generator): Initialization RNG.
    """

    def __init__(
        self,
        feature_dim: int,
        d_model: int,
        n_image_tokens: int,
        max_text_len: int,
        vocab_size: int,
        dual: bool,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.d_model = d_model
        self.n_image_tokens = n_image_tokens
        self.max_text_len = max_text_len
        self.dual = dual
        self.projection = Linear(feature_dim, d_model, rng, init="xavier")
        self.p_enc_img = normal_parameter((n_image_tokens, d_model), rng)
        self.p_enc_txt = normal_parameter((max_text_len, d_model), rng)
        self.token_embedding = normal_parameter((vocab_size, d_model), rng)
        if dual:
            self.t_enc_past = normal_parameter((n_image_tokens, d_model), rng)
            self.t_enc_cur = normal_parameter((n_image_tokens, d_model), rng)
            self.null_past = normal_parameter((1, d_model), rng)

    def embed_image_branch(self, v: Tensor, which: str) -> Tensor:
        """
        Project flattened features and add positional and time encodings.

        Args:
            v (Tensor): Flattened features of shape (N, E) or (B, N, E).
            which (str): "past" or "current".

        Returns:
            Tensor: Shape (N, D) or (B, N, D).

        Raises:
            ContractError: If `which` is not a branch name, or "past" is requested
                in single-image mode.
            DimensionError: If N does not match the configured grid.
        """
        if which not in BRANCHES:
            raise T.ContractError(f"unknown image branch {which!r}")
        if which == "past" and not self.dual:
            raise T.ContractError("single-image mode has no past branch")
        if v.shape[-2] != self.n_image_tokens:
            raise T.DimensionError(
                f"expected {self.n_image_tokens} image tokens, got {v.shape}"
            )
        out = self.projection(v) + self.p_enc_img
        if self.dual:
            out = out + (self.t_enc_past if which == "past" else self.t_enc_cur)
        return out

    def null_past_branch(self, batch_size: int) -> Tensor:
        """Placeholder past block of shape (B, N, D) for samples without a prior visit."""
        rows = self.null_past * Tensor(
            np.ones((self.n_image_tokens, 1), dtype=self.null_past.dtype)
        )
        block = rows + self.t_enc_past
        return Tensor(np.ones((batch_size, 1, 1), dtype=block.dtype)) * block

    def embed_text(self, ids: np.ndarray) -> Tensor:
        """
        Embed token ids and add the text positional encoding prefix.

        Args:
            ids (np.ndarray): Ids of shape (N_t,) or (B, N_t).

        Returns:
            Tensor: Shape (N_t, D) or (B, N_t, D).

        Raises:
            DimensionError: If N_t exceeds the maximum text length.
            IndexError: If an id is outside [0, V).
        """
        ids = np.asarray(ids, dtype=np.int64)
        n_text = ids.shape[-1]
        if n_text > self.max_text_len:
            raise T.DimensionError(
                f"text length {n_text} exceeds maximum {self.max_text_len}"
            )
        return T.embedding(self.token_embedding, ids) + self.p_enc_txt[:n_text]

    def fuse(self, past: Optional[Tensor], cur: Tensor, text: Tensor) -> Tensor:
        """
        Concatenate the blocks along the sequence axis: past, current, text.

        Raises:
            DimensionError: If widths or batch axes disagree.
        """
        blocks = [cur, text] if past is None else [past, cur, text]
        widths = {b.shape[-1] for b in blocks}
        if len(widths) != 1:
            raise T.DimensionError(
                f"fused blocks have different widths: {[b.shape for b in blocks]}"
            )
        return T.concat(blocks, axis=-2)

    def tie_time_encodings(self, freeze: bool = True) -> None:
        """Copy t_enc_past into t_enc_cur, optionally excluding both from training."""
        self.t_enc_cur.data[...] = self.t_enc_past.data
        if freeze:
            self.t_enc_past.requires_grad = False
            self.t_enc_cur.requires_grad = False
        logger.info("time encodings tied frozen=%s", freeze)


def mix_past(
    embedded_past: Tensor, null_block: Tensor, has_past: np.ndarray
) -> Tensor:
    """Select per sample between the real past block and the null-past placeholder."""
    mask = np.asarray(has_past, dtype=embedded_past.dtype).reshape(-1, 1, 1)
    if mask.all():
        return embedded_past
    return Tensor(mask) * embedded_past + Tensor(1.0 - mask) * null_block
