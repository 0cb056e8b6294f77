"""
View-slot layouts of the attention-reshaping block.

A latent batch has shape (B, V+1, C, H, W) with slot 0 the reference.
ResBlocks see the views folded into the batch axis, attention sees the
views concatenated along the token axis so it spans every view jointly.
"""

from dataclasses import dataclass

import torch
from einops import rearrange

from common.errors import ValidationError


@dataclass
class ViewLatentBatch:
    data: torch.Tensor

    def __post_init__(self):
        if self.data.ndim != 5:
            raise ValidationError(f"view batch must be (B, V+1, C, H, W), got {tuple(self.data.shape)}")
        if self.data.shape[1] < 2:
            raise ValidationError(f"view batch needs a reference and at least one novel view, got {self.data.shape[1]} slots")

    @property
    def batch_size(self) -> int:
        return self.data.shape[0]

    @property
    def views(self) -> int:
        return self.data.shape[1] - 1

    @property
    def reference(self) -> torch.Tensor:
        return self.data[:, 0]

    @property
    def novel(self) -> torch.Tensor:
        return self.data[:, 1:]


def reshape_for_resblock(x: torch.Tensor) -> torch.Tensor:
    """(B, V+1, C, H, W) -> (B*(V+1), C, H, W); slot (b, v) lands on row b*(V+1)+v."""
    return rearrange(x, 'b v c h w -> (b v) c h w')


def unfold_from_resblock(x: torch.Tensor, slots: int) -> torch.Tensor:
    return rearrange(x, '(b v) c h w -> b v c h w', v=slots)


def reshape_for_attention(x: torch.Tensor) -> torch.Tensor:
    """(B, V+1, C, H, W) -> (B, C, (V+1)*H*W); token index v*H*W + h*W + w."""
    return rearrange(x, 'b v c h w -> b c (v h w)')


def unfold_from_attention(x: torch.Tensor, slots: int, height: int, width: int) -> torch.Tensor:
    return rearrange(x, 'b c (v h w) -> b v c h w', v=slots, h=height, w=width)
