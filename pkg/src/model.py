"""The dual-image vision-language model and its configuration.

`VisionLanguageModel` wires the shared image encoder, the fusion front-end and
the Transformer encoder/decoder. Parameter names are dotted attribute paths
(``encoder.stem.weight``, ``fusion.t_enc_past``, ``seq2seq.output.weight``).
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

import tensor as T
from fusion import FusionFrontEnd, mix_past
from layers import Module
from tensor import Tensor
from transformer import GenerationConfig, Seq2Seq
from utils import Configuration
from vision import TOTAL_STRIDE, VisionEncoder, flatten

logger = logging.getLogger(__name__)

PAST_BRANCH_PARAMETERS = frozenset(
    {"fusion.t_enc_past", "fusion.t_enc_cur", "fusion.null_past"}
)


class ParameterMismatchError(ValueError):
    pass


@dataclass
class ModelConfig:
    """
    Every architectural hyperparameter.

    Attributes:
        image_size (int): H = W; must be divisible by 16.
        in_channels (int): 1 for grayscale, 3 to replicate grayscale input.
        encoder_channels (Tuple[int, int, int]): Stem and first two stage widths.
        feature_dim (int): E, the width of the last encoder stage.
        blocks_per_stage (int): Residual blocks per encoder stage.
        norm_groups (int): Group-norm groups in the encoder.
        d_model (int): D.
        n_heads (Optional[int]): Attention heads; defaults to max(1, D // 64).
        encoder_layers (int): Transformer encoder depth.
        decoder_layers (int): Transformer decoder depth.
        vocab_size (int): V.
        max_text_len (int): Longest text sequence (instruction or target).
        dropout (float): Dropout rate.
        stochastic_depth (float): Drop-path rate of the deepest layer.
        dual (bool): Whether the past branch and time encodings exist.
        seed (int): Initialization seed.
    """

    image_size: int = 64
    in_channels: int = 1
    encoder_channels: Tuple[int, int, int] = (16, 32, 64)
    feature_dim: int = 128
    blocks_per_stage: int = 1
    norm_groups: int = 8
    d_model: int = 64
    n_heads: Optional[int] = None
    encoder_layers: int = 2
    decoder_layers: int = 2
    vocab_size: int = Configuration.DEFAULT_VOCAB_SIZE
    max_text_len: int = Configuration.MAX_SEQUENCE_LENGTH
    dropout: float = 0.1
    stochastic_depth: float = 0.1
    dual: bool = True
    seed: int = 0

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if len(self.encoder_channels) != 3:
            raise T.ContractError("encoder_channels needs three widths")
        if self.image_size % TOTAL_STRIDE:
            raise T.DimensionError(
                f"image_size {self.image_size} not divisible by {TOTAL_STRIDE}"
            )

    @classmethod
    def desk(cls, **kwargs) -> "ModelConfig":
        return cls(**kwargs)

    @classmethod
    def tiny(cls, **kwargs) -> "ModelConfig":
        values = dict(
            image_size=32,
            encoder_channels=(4, 4, 8),
            feature_dim=8,
            norm_groups=2,
            d_model=16,
            encoder_layers=1,
            decoder_layers=1,
            vocab_size=32,
            dropout=0.0,
            stochastic_depth=0.0,
        )
        values.update(kwargs)
        return cls(**values)

    @classmethod
    def full(cls, **kwargs) -> "ModelConfig":
        values = dict(
            image_size=384,
            encoder_channels=(64, 256, 512),
            feature_dim=1024,
            norm_groups=32,
            d_model=768,
            n_heads=12,
            encoder_layers=6,
            decoder_layers=6,
            vocab_size=50265,
        )
        values.update(kwargs)
        return cls(**values)

    @property
    def heads(self) -> int:
        return self.n_heads or max(1, self.d_model // 64)

    @property
    def grid_size(self) -> int:
        return self.image_size // TOTAL_STRIDE

    @property
    def n_image_tokens(self) -> int:
        return self.grid_size * self.grid_size

    @property
    def max_input_len(self) -> int:
        return 2 * self.n_image_tokens + self.max_text_len

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values["encoder_channels"] = list(self.encoder_channels)
        return values

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ModelConfig":
        return cls(**values)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


class VisionLanguageModel(Module):
    """
    Image encoder + fusion front-end + Transformer encoder/decoder.

    Args:
        config (ModelConfig): Architecture.
        rng (Optional[np.random.Generator]): Initialization and dropout RNG;
            defaults to one seeded from `config.seed`.
    """

    def __init__(self, config: ModelConfig, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.encoder = VisionEncoder(
            config.image_size,
            config.in_channels,
            config.encoder_channels,
            config.feature_dim,
            config.norm_groups,
            config.blocks_per_stage,
            self.rng,
        )
        self.fusion = FusionFrontEnd(
            config.feature_dim,
            config.d_model,
            config.n_image_tokens,
            config.max_text_len,
            config.vocab_size,
            config.dual,
            self.rng,
        )
        self.seq2seq = Seq2Seq(
            config.d_model,
            config.heads,
            config.encoder_layers,
            config.decoder_layers,
            config.vocab_size,
            config.max_input_len,
            config.max_text_len,
            self.fusion.token_embedding,
            config.dropout,
            config.stochastic_depth,
            self.rng,
        )

    def image_features(self, images: np.ndarray) -> Tensor:
        """(B, H, W, C) pixels to flattened (B, N, E) features."""
        return flatten(
            self.encoder(Tensor(np.asarray(images, dtype=T.get_default_dtype())))
        )

    def fused_input(self, batch) -> Tuple[Tensor, np.ndarray]:
        """
        Build the Transformer-encoder input for a batch.

        Returns:
            Tuple[Tensor, np.ndarray]: The fused (B, L, D) tensor and its (B, L)
            validity mask (False only on instruction padding).
        """
        fusion = self.fusion
        size = len(batch)
        cur = fusion.embed_image_branch(
            self.image_features(batch.current_images), "current"
        )
        text = fusion.embed_text(batch.instruction_ids)
        past = None
        if self.config.dual:
            has_past = np.asarray(batch.has_past, dtype=bool)
            null_block = fusion.null_past_branch(size)
            if batch.past_images is not None and has_past.any():
                past = fusion.embed_image_branch(
                    self.image_features(batch.past_images), "past"
                )
                past = mix_past(past, null_block, has_past)
            else:
                past = null_block
        fused = fusion.fuse(past, cur, text)
        image_rows = fused.shape[1] - text.shape[1]
        key_mask = np.concatenate(
            [
                np.ones((size, image_rows), dtype=bool),
                np.asarray(batch.instruction_mask, dtype=bool),
            ],
            axis=1,
        )
        return fused, key_mask

    def encode_batch(self, batch) -> Tuple[Tensor, np.ndarray]:
        fused, key_mask = self.fused_input(batch)
        return self.seq2seq.encode(fused, key_mask), key_mask

    def loss(self, batch, reduction: str = "mean") -> Tensor:
        memory, key_mask = self.encode_batch(batch)
        return self.seq2seq.decoder_loss(
            memory, batch.target_ids, key_mask, reduction=reduction
        )

    def generate(self, batch, config: Optional[GenerationConfig] = None) -> List[List[int]]:
        config = config or GenerationConfig()
        with T.no_grad():
            memory, key_mask = self.encode_batch(batch)
            return self.seq2seq.generate(memory, config, key_mask)

    def load_state(self, state: Dict[str, np.ndarray]) -> List[str]:
        return load_parameters(self, state)


def load_parameters(model: Module, state: Dict[str, np.ndarray]) -> List[str]:
    """
    Copy named arrays into a model.

    Past-branch parameters may be absent from `state` (they keep their fresh
    initialization) or present without a counterpart in a single-image model.
    Every other name must match in both presence and shape.

    Args:
        model (Module): Target model.
        state (Dict[str, np.ndarray]): Arrays by dotted name.

    Returns:
        List[str]: Names left freshly initialized.

    Raises:
        ParameterMismatchError: Listing every offending tensor.
    """
    params = dict(model.named_parameters())
    problems = []
    fresh = []
    for name, param in params.items():
        if name not in state:
            if name in PAST_BRANCH_PARAMETERS:
                fresh.append(name)
            else:
                problems.append(f"{name}: missing from checkpoint")
        elif tuple(state[name].shape) != param.shape:
            problems.append(
                f"{name}: checkpoint {tuple(state[name].shape)} vs model {param.shape}"
            )
    for name in sorted(set(state) - set(params)):
        if name not in PAST_BRANCH_PARAMETERS:
            problems.append(f"{name}: not a model parameter")
    if problems:
        raise ParameterMismatchError(
            "incompatible parameters:\n  " + "\n  ".join(problems)
        )
    for name, param in params.items():
        if name in state:
            param.data[...] = state[name]
    if fresh:
        logger.info("fresh parameters=%s", ",".join(sorted(fresh)))
    return sorted(fresh)


def parameter_count(config: ModelConfig) -> int:
    """
    Number of trainable scalars, computed from the configuration alone.

    Args:
        config (ModelConfig): Architecture.

    Returns:
        int: Total parameter count.
    """
    c0, c1, c2 = config.encoder_channels
    e, d, v = config.feature_dim, config.d_model, config.vocab_size
    n, t = config.n_image_tokens, config.max_text_len

    total = 9 * config.in_channels * c0 + 2 * c0
    for w_in, w_out in ((c0, c1), (c1, c2), (c2, e)):
        total += 9 * w_in * w_out + 9 * w_out * w_out + 4 * w_out
        total += w_in * w_out + 2 * w_out
        total += (config.blocks_per_stage - 1) * (18 * w_out * w_out + 4 * w_out)

    total += e * d + d + n * d + t * d + v * d
    if config.dual:
        total += 2 * n * d + d

    attention = 4 * (d * d + d)
    ffn = d * 4 * d + 4 * d + 4 * d * d + d
    norm = 2 * d
    total += config.encoder_layers * (attention + ffn + 2 * norm)
    total += config.decoder_layers * (2 * attention + ffn + 3 * norm)
    total += 2 * norm + t * d + d * v + v
    return total


def shape_plan(config: ModelConfig, n_text: int) -> "OrderedDict[str, Tuple[int, ...]]":
    """
    Shape of every intermediate for one sample, without allocating weights.

    Args:
        config (ModelConfig): Architecture.
        n_text (int): Instruction length in tokens.

    Returns:
        OrderedDict[str, Tuple[int, ...]]: Shapes keyed by stage name.
    """
    if n_text > config.max_text_len:
        raise T.DimensionError(
            f"text length {n_text} exceeds maximum {config.max_text_len}"
        )
    g, n = config.grid_size, config.n_image_tokens
    e, d = config.feature_dim, config.d_model
    fused = (2 * n if config.dual else n) + n_text
    plan = OrderedDict()
    plan["image"] = (config.image_size, config.image_size, config.in_channels)
    plan["feature_grid"] = (g, g, e)
    plan["flattened"] = (n, e)
    plan["image_branch"] = (n, d)
    plan["text_branch"] = (n_text, d)
    plan["fused"] = (fused, d)
    plan["memory"] = (fused, d)
    plan["logits_per_step"] = (config.vocab_size,)
    return plan
