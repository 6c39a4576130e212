"""Residual convolutional image encoder and feature-grid flattening.

The encoder is a stride-2 stem followed by three residual stages that each
halve the resolution, for a total stride of 16. The last stage outputs the
feature width E, so a (B, H, W, C) batch becomes a (B, H/16, W/16, E) grid.
"""

import logging
from typing import Sequence, Union

import numpy as np

import tensor as T
from layers import Conv2d, GroupNorm, Module, ModuleList
from tensor import Tensor

logger = logging.getLogger(__name__)

TOTAL_STRIDE = 16


class ResidualBlock(Module):
    """Two 3x3 convolutions with a skip connection; the first conv carries the stride."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        stride: int,
        norm_groups: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1)
        self.norm1 = GroupNorm(out_channels, norm_groups)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, stride=1, padding=1)
        self.norm2 = GroupNorm(out_channels, norm_groups)
        self.has_projection = stride != 1 or in_channels != out_channels
        if self.has_projection:
            self.shortcut_conv = Conv2d(in_channels, out_channels, 1, rng, stride=stride)
            self.shortcut_norm = GroupNorm(out_channels, norm_groups)

    def forward(self, x: Tensor) -> Tensor:
        out = self.norm1(self.conv1(x)).relu()
        out = self.norm2(self.conv2(out))
        shortcut = (
            self.shortcut_norm(self.shortcut_conv(x)) if self.has_projection else x
        )
        return (out + shortcut).relu()


class VisionEncoder(Module):
    """
    Image encoder shared by the past and current branches.

    Args:
        image_size (int): Input height and width; must be divisible by 16.
        in_channels (int): Input channels (1 for grayscale).
        channels (Sequence[int]): Widths of the stem and the first two stages.
        feature_dim (int): Width E of the last stage.
        norm_groups (int): Group-norm groups (reduced to a divisor of each width).
        blocks_per_stage (int): Residual blocks per stage.
        rng (np.random.Generator): Initialization RNG.
    """

    def __init__(
        self,
        image_size: int,
        in_channels: int,
        channels: Sequence[int],
        feature_dim: int,
        norm_groups: int,
        blocks_per_stage: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        if image_size % TOTAL_STRIDE:
            raise T.DimensionError(
                f"image size {image_size} not divisible by total stride {TOTAL_STRIDE}"
            )
        self.image_size = image_size
        self.in_channels = in_channels
        self.feature_dim = feature_dim
        self.stem = Conv2d(in_channels, channels[0], 3, rng, stride=2, padding=1)
        self.stem_norm = GroupNorm(channels[0], norm_groups)

        widths = [channels[0], channels[1], channels[2], feature_dim]
        self.blocks = ModuleList()
        for stage in range(3):
            for block in range(blocks_per_stage):
                self.blocks.append(
                    ResidualBlock(
                        widths[stage] if block == 0 else widths[stage + 1],
                        widths[stage + 1],
                        2 if block == 0 else 1,
                        norm_groups,
                        rng,
                    )
                )

    @property
    def grid_size(self) -> int:
        return self.image_size // TOTAL_STRIDE

    def forward(self, images: Tensor) -> Tensor:
        """
        Encode a channel-last batch.

        Args:
            images (Tensor): Shape (B, H, W, C) with values in [0, 1].

        Returns:
            Tensor: Feature grid of shape (B, H/16, W/16, E).

        Raises:
            DimensionError: If the resolution or channel count does not match.
        """
        expected = (self.image_size, self.image_size, self.in_channels)
        if images.ndim != 4 or tuple(images.shape[1:]) != expected:
            raise T.DimensionError(
                f"expected images of shape (B, {expected[0]}, {expected[1]}, "
                f"{expected[2]}), got {images.shape}"
            )
        out = self.stem_norm(self.stem(images)).relu()
        for block in self.blocks:
            out = block(out)
        return out


def as_image_batch(
    images: Union[np.ndarray, Tensor], in_channels: int = 1
) -> Tensor:
    """Lift (H, W), (H, W, C) or (B, H, W[, C]) pixel arrays to a (B, H, W, C) tensor."""
    if isinstance(images, Tensor):
        images = images.data
    images = np.asarray(images, dtype=T.get_default_dtype())
    if images.ndim == 2:
        images = images[None, :, :, None]
    elif images.ndim == 3:
        images = images[None] if images.shape[-1] == in_channels else images[..., None]
    if images.shape[-1] == 1 and in_channels == 3:
        images = np.repeat(images, 3, axis=-1)
    return Tensor(images)


def encode_image(encoder: VisionEncoder, image: Union[np.ndarray, Tensor]) -> Tensor:
    """Encode one image or a batch into a feature grid."""
    return encoder(as_image_batch(image, encoder.in_channels))


def flatten(grid: Tensor) -> Tensor:
    """
    Flatten the spatial axes in row-major order.

    (B, Ĥ, Ŵ, E) becomes (B, Ĥ·Ŵ, E) and (Ĥ, Ŵ, E) becomes (Ĥ·Ŵ, E), so
    ``flat[i * Ŵ + j] == grid[i, j]``.
    """
    if grid.ndim == 3:
        h, w, e = grid.shape
        return grid.reshape(h * w, e)
    b, h, w, e = grid.shape
    return grid.reshape(b, h * w, e)
