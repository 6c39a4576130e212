"""Pre-norm Transformer encoder/decoder over the fused sequence, with greedy and beam decoding."""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

import tensor as T
from layers import LayerNorm, Linear, Module, ModuleList, normal_parameter
from tensor import Tensor
from tokenizer import BOS_ID, EOS_ID, PAD_ID
from utils import Configuration

logger = logging.getLogger(__name__)

MASK_VALUE = -1e9


@dataclass
class GenerationConfig:
    """
    Decoding settings.

    Attributes:
        max_len (int): Maximum number of generated tokens after bos (1..100).
        strategy (str): "greedy" or "beam".
        beam_size (int): Hypotheses kept by beam search.
        length_penalty (float): Exponent alpha of the ``logp / len**alpha`` score used
            both to prune beams and to pick the final one.
    """

    max_len: int = Configuration.MAX_SEQUENCE_LENGTH
    strategy: str = "greedy"
    beam_size: int = 1
    length_penalty: float = 1.0

    def __post_init__(self):
        if not 1 <= self.max_len <= Configuration.MAX_SEQUENCE_LENGTH:
            raise T.ContractError(
                f"max_len must be in [1, {Configuration.MAX_SEQUENCE_LENGTH}], "
                f"got {self.max_len}"
            )
        if self.strategy not in ("greedy", "beam"):
            raise T.ContractError(f"unknown decoding strategy {self.strategy!r}")
        if self.beam_size < 1:
            raise T.ContractError("beam_size must be at least 1")


def key_mask_bias(key_mask: Optional[np.ndarray], dtype) -> Optional[np.ndarray]:
    """Turn a (B, L) validity mask into an additive (B, 1, 1, L) bias."""
    if key_mask is None or np.all(key_mask):
        return None
    bias = np.where(np.asarray(key_mask, dtype=bool), 0.0, MASK_VALUE)
    return bias[:, None, None, :].astype(dtype)


def causal_bias(length: int, dtype) -> np.ndarray:
    upper = np.triu(np.ones((length, length), dtype=bool), k=1)
    return np.where(upper, MASK_VALUE, 0.0).astype(dtype)


class MultiHeadAttention(Module):
    def __init__(
        self,
        d_model: int,
        n_heads: int,
        dropout: float,
        rng: np.random.Generator,
    ):
        super().__init__()
        if d_model % n_heads:
            raise T.DimensionError(f"{n_heads} heads do not divide width {d_model}")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.dropout = dropout
        self.rng = rng
        self.query = Linear(d_model, d_model, rng)
        self.key = Linear(d_model, d_model, rng)
        self.value = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        b, length, _ = x.shape
        return x.reshape(b, length, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)

    def forward(
        self, x: Tensor, context: Tensor, bias: Optional[np.ndarray] = None
    ) -> Tensor:
        """
        Attend from `x` (B, Lq, D) to `context` (B, Lk, D).

        Args:
            bias (Optional[np.ndarray]): Additive scores broadcastable to (B, h, Lq, Lk).
        """
        q = self._split(self.query(x))
        k = self._split(self.key(context))
        v = self._split(self.value(context))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        if bias is not None:
            scores = scores + Tensor(bias.astype(scores.dtype))
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data
        weights = T.dropout(weights, self.dropout, self.rng, self.training)
        attended = (weights @ v).transpose(0, 2, 1, 3)
        b, length = attended.shape[:2]
        return self.out(attended.reshape(b, length, self.n_heads * self.head_dim))


class FeedForward(Module):
    def __init__(self, d_model: int, dropout: float, rng: np.random.Generator):
        super().__init__()
        self.dropout = dropout
        self.rng = rng
        self.hidden = Linear(d_model, 4 * d_model, rng)
        self.projection = Linear(4 * d_model, d_model, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = T.dropout(self.hidden(x).gelu(), self.dropout, self.rng, self.training)
        return self.projection(h)


class EncoderLayer(Module):
    def __init__(self, d_model, n_heads, dropout, drop_path, rng):
        super().__init__()
        self.dropout = dropout
        self.drop_path = drop_path
        self.rng = rng
        self.attention_norm = LayerNorm(d_model)
        self.attention = MultiHeadAttention(d_model, n_heads, dropout, rng)
        self.ffn_norm = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, dropout, rng)

    def _residual(self, x: Tensor, branch: Tensor) -> Tensor:
        branch = T.dropout(branch, self.dropout, self.rng, self.training)
        return x + T.drop_path(branch, self.drop_path, self.rng, self.training)

    def forward(self, x: Tensor, bias: Optional[np.ndarray]) -> Tensor:
        h = self.attention_norm(x)
        x = self._residual(x, self.attention(h, h, bias))
        return self._residual(x, self.ffn(self.ffn_norm(x)))


class DecoderLayer(EncoderLayer):
    def __init__(self, d_model, n_heads, dropout, drop_path, rng):
        super().__init__(d_model, n_heads, dropout, drop_path, rng)
        self.cross_norm = LayerNorm(d_model)
        self.cross_attention = MultiHeadAttention(d_model, n_heads, dropout, rng)

    def forward(
        self,
        x: Tensor,
        memory: Tensor,
        self_bias: np.ndarray,
        memory_bias: Optional[np.ndarray],
    ) -> Tensor:
        h = self.attention_norm(x)
        x = self._residual(x, self.attention(h, h, self_bias))
        x = self._residual(x, self.cross_attention(self.cross_norm(x), memory, memory_bias))
        return self._residual(x, self.ffn(self.ffn_norm(x)))


def _depth_rates(rate: float, n_layers: int) -> List[float]:
    if n_layers == 1:
        return [0.0]
    return [rate * i / (n_layers - 1) for i in range(n_layers)]


class Seq2Seq(Module):
    """
    Encoder over the fused input and autoregressive decoder.

    The decoder embeds tokens with the fusion front-end's token embedding (shared,
    registered once under ``fusion.token_embedding``) and owns its own learned
    positions ``dec_pos``.

    Args:
        d_model (int): Width D.
        n_heads (int): Attention heads.
        encoder_layers (int): Encoder depth.
        decoder_layers (int): Decoder depth.
        vocab_size (int): V.
        max_input_len (int): Longest accepted fused sequence (2N + max text length).
        max_text_len (int): Longest decoder sequence.
        token_embedding (Tensor): Shared (V, D) embedding.
        dropout (float): Dropout on attention weights, FFN and residual branches.
        stochastic_depth (float): Drop-path rate of the deepest layer.
        rng (np.random.Generator): Initialization and dropout RNG.
    """

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        encoder_layers: int,
        decoder_layers: int,
        vocab_size: int,
        max_input_len: int,
        max_text_len: int,
        token_embedding: Tensor,
        dropout: float,
        stochastic_depth: float,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.d_model = d_model
        self.max_input_len = max_input_len
        self.max_text_len = max_text_len
        object.__setattr__(self, "token_embedding", token_embedding)
        self.encoder_layers = ModuleList(
            [
                EncoderLayer(d_model, n_heads, dropout, p, rng)
                for p in _depth_rates(stochastic_depth, encoder_layers)
            ]
        )
        self.encoder_norm = LayerNorm(d_model)
        self.decoder_layers = ModuleList(
            [
                DecoderLayer(d_model, n_heads, dropout, p, rng)
                for p in _depth_rates(stochastic_depth, decoder_layers)
            ]
        )
        self.decoder_norm = LayerNorm(d_model)
        self.dec_pos = normal_parameter((max_text_len, d_model), rng)
        self.output = Linear(d_model, vocab_size, rng, init="normal")

    @property
    def vocab_size(self) -> int:
        return self.output.out_features

    def encode(self, i_trans: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        """
        Full (non-causal) self-attention over every fused position.

        Args:
            i_trans (Tensor): Fused input of shape (B, L, D).
            key_mask (Optional[np.ndarray]): (B, L) booleans, False for text padding.

        Returns:
            Tensor: Memory of shape (B, L, D).

        Raises:
            DimensionError: If L exceeds the maximum input length or the width is not D.
        """
        if i_trans.ndim != 3 or i_trans.shape[-1] != self.d_model:
            raise T.DimensionError(
                f"encoder expects (B, L, {self.d_model}), got {i_trans.shape}"
            )
        if i_trans.shape[1] > self.max_input_len:
            raise T.DimensionError(
                f"fused length {i_trans.shape[1]} exceeds {self.max_input_len}"
            )
        bias = key_mask_bias(key_mask, i_trans.dtype)
        x = i_trans
        for layer in self.encoder_layers:
            x = layer(x, bias)
        return self.encoder_norm(x)

    def decode(
        self,
        memory: Tensor,
        input_ids: np.ndarray,
        memory_mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        """Teacher-forced decoder pass returning logits of shape (B, T, V)."""
        input_ids = np.asarray(input_ids, dtype=np.int64)
        length = input_ids.shape[1]
        if length > self.max_text_len:
            raise T.DimensionError(
                f"decoder length {length} exceeds {self.max_text_len}"
            )
        x = T.embedding(self.token_embedding, input_ids) + self.dec_pos[:length]
        self_bias = causal_bias(length, x.dtype)
        memory_bias = key_mask_bias(memory_mask, x.dtype)
        for layer in self.decoder_layers:
            x = layer(x, memory, self_bias, memory_bias)
        return self.output(self.decoder_norm(x))

    def decoder_loss(
        self,
        memory: Tensor,
        targets: np.ndarray,
        memory_mask: Optional[np.ndarray] = None,
        reduction: str = "mean",
    ) -> Tensor:
        """
        Cross-entropy of the shifted targets under causal teacher forcing.

        Args:
            memory (Tensor): Encoder output (B, L, D).
            targets (np.ndarray): Padded ``[bos, ..., eos]`` ids of shape (B, T), T >= 2.
            memory_mask (Optional[np.ndarray]): (B, L) memory validity mask.
            reduction (str): "mean" or "none" (per-position terms of shape (B, T-1)).

        Returns:
            Tensor: The loss.
        """
        targets = np.asarray(targets, dtype=np.int64)
        if targets.ndim != 2 or targets.shape[1] < 2:
            raise T.DimensionError(f"targets must be (B, T>=2), got {targets.shape}")
        logits = self.decode(memory, targets[:, :-1], memory_mask)
        return T.cross_entropy(logits, targets[:, 1:], pad_id=PAD_ID, reduction=reduction)

    def _next_log_probs(
        self, memory: Tensor, ids: np.ndarray, memory_mask: Optional[np.ndarray]
    ) -> np.ndarray:
        logits = self.decode(memory, ids, memory_mask).data[:, -1].astype(np.float64)
        logits[:, [PAD_ID, BOS_ID]] = -np.inf
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def generate(
        self,
        memory: Tensor,
        config: GenerationConfig,
        memory_mask: Optional[np.ndarray] = None,
    ) -> List[List[int]]:
        """
        Decode one sequence per memory row, starting from bos.

        Returns:
            List[List[int]]: ``[bos, ...]`` per sample, ending in eos unless
            `config.max_len` tokens were produced first.
        """
        with T.no_grad():
            if config.strategy == "beam":
                return [
                    self._beam_search(
                        memory[i : i + 1],
                        None if memory_mask is None else memory_mask[i : i + 1],
                        config,
                    )
                    for i in range(memory.shape[0])
                ]
            return self._greedy(memory, memory_mask, config)

    def _greedy(
        self,
        memory: Tensor,
        memory_mask: Optional[np.ndarray],
        config: GenerationConfig,
    ) -> List[List[int]]:
        batch = memory.shape[0]
        ids = np.full((batch, 1), BOS_ID, dtype=np.int64)
        finished = np.zeros(batch, dtype=bool)
        for _ in range(config.max_len):
            log_probs = self._next_log_probs(memory, ids, memory_mask)
            step = np.where(finished, PAD_ID, log_probs.argmax(axis=-1))
            ids = np.concatenate([ids, step[:, None]], axis=1)
            finished |= step == EOS_ID
            if finished.all():
                break
        return [[int(t) for t in row if t != PAD_ID] for row in ids]

    def _beam_search(
        self,
        memory: Tensor,
        memory_mask: Optional[np.ndarray],
        config: GenerationConfig,
    ) -> List[int]:
        k = config.beam_size

        def ranked(beam):
            generated = max(1, len(beam[0]) - 1)
            return beam[1] / generated ** config.length_penalty

        beams = [([BOS_ID], 0.0, False)]
        for _ in range(config.max_len):
            live = [b for b in beams if not b[2]]
            if not live:
                break
            ids = np.array([b[0] for b in live], dtype=np.int64)
            repeated = T.concat([memory] * len(live), axis=0)
            mask = None if memory_mask is None else np.repeat(memory_mask, len(live), 0)
            log_probs = self._next_log_probs(repeated, ids, mask)
            candidates = [b for b in beams if b[2]]
            for (tokens, score, _), row in zip(live, log_probs):
                for token in np.argsort(-row, kind="stable")[:k]:
                    token = int(token)
                    candidates.append(
                        (tokens + [token], score + float(row[token]), token == EOS_ID)
                    )
            # Finished and live hypotheses compete on length-normalized score.
            candidates.sort(key=ranked, reverse=True)
            beams = candidates[:k]

        return max(beams, key=ranked)[0]
