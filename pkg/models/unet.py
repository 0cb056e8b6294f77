"""
Multi-view U-Net with the attention-reshaping block.

Hidden states travel between blocks as (B, V+1, C, H, W). Every
convolutional block folds the view axis into the batch axis; every
attention block lays all views out along one token axis. No block
carries a slot embedding, so novel views are processed
permutation-equivariantly.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from common.errors import ValidationError
from .layout import (
    reshape_for_attention,
    reshape_for_resblock,
    unfold_from_attention,
    unfold_from_resblock,
)

GROUPS = 8


def sinusoidal_embedding(timesteps: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard diffusion timestep embedding, shape (N, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = timesteps.float()[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(GROUPS, in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, out_channels)
        self.norm2 = nn.GroupNorm(GROUPS, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention(nn.Module):
    """Multi-head self-attention over (B, C, N) tokens, channels as embedding."""

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        if channels % heads:
            raise ValidationError(f"{channels} channels do not split into {heads} heads")
        self.heads = heads
        self.norm = nn.GroupNorm(GROUPS, channels)
        self.to_q = nn.Linear(channels, channels)
        self.to_k = nn.Linear(channels, channels)
        self.to_v = nn.Linear(channels, channels)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x):
        b, c, n = x.shape
        tokens = self.norm(x).transpose(1, 2)                       # (B, N, C)
        q, k, v = (
            proj(tokens).reshape(b, n, self.heads, c // self.heads).transpose(1, 2)
            for proj in (self.to_q, self.to_k, self.to_v)
        )
        weights = torch.einsum('bhnd,bhmd->bhnm', q, k) * (c // self.heads) ** -0.5
        out = torch.einsum('bhnm,bhmd->bhnd', weights.softmax(dim=-1), v)
        out = self.to_out(out.transpose(1, 2).reshape(b, n, c))
        return x + out.transpose(1, 2)


class MultiViewResBlock(nn.Module):
    """ResBlock applied to the (B*(V+1), C, H, W) folded layout."""

    def __init__(self, in_channels: int, out_channels: int, temb_dim: int):
        super().__init__()
        self.block = ResBlock(in_channels, out_channels, temb_dim)

    def forward(self, x, temb):
        slots = x.shape[1]
        return unfold_from_resblock(self.block(reshape_for_resblock(x), temb), slots)


class MultiViewAttention(nn.Module):
    """Self-attention over the (B, C, (V+1)*H*W) joint token layout."""

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.attention = SelfAttention(channels, heads)

    def forward(self, x):
        _, slots, _, h, w = x.shape
        return unfold_from_attention(self.attention(reshape_for_attention(x)), slots, h, w)


class PerView(nn.Module):
    """Apply a 4D module to every view slot independently."""

    def __init__(self, block: nn.Module):
        super().__init__()
        self.block = block

    def forward(self, x):
        slots = x.shape[1]
        return unfold_from_resblock(self.block(reshape_for_resblock(x)), slots)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode='nearest'))


class RefinerUNet(nn.Module):
    """
    Two down and two up stages. Attention sits at the two coarsest
    resolutions. The output is the input latent plus a predicted correction.
    """

    def __init__(self, latent_channels: int = 8, widths: tuple = (32, 64, 128), heads: int = 4,
                 temb_dim: int = 128, fixed_timestep: int = 400):
        super().__init__()
        if len(widths) != 3:
            raise ValidationError(f"expected three channel widths, got {widths}")
        w0, w1, w2 = widths
        self.latent_channels = latent_channels
        self.fixed_timestep = fixed_timestep
        self.forward_calls = 0

        self.register_buffer(
            'timestep_table', sinusoidal_embedding(torch.tensor([fixed_timestep]), temb_dim)
        )
        self.time_mlp = nn.Sequential(
            nn.Linear(temb_dim, temb_dim),
            nn.SiLU(),
            nn.Linear(temb_dim, temb_dim),
        )

        self.conv_in = PerView(nn.Conv2d(latent_channels, w0, 3, padding=1))
        self.down0 = MultiViewResBlock(w0, w0, temb_dim)
        self.downsample0 = PerView(nn.Conv2d(w0, w0, 3, stride=2, padding=1))
        self.down1 = MultiViewResBlock(w0, w1, temb_dim)
        self.down1_attn = MultiViewAttention(w1, heads)
        self.downsample1 = PerView(nn.Conv2d(w1, w1, 3, stride=2, padding=1))

        self.mid0 = MultiViewResBlock(w1, w2, temb_dim)
        self.mid_attn = MultiViewAttention(w2, heads)
        self.mid1 = MultiViewResBlock(w2, w2, temb_dim)

        self.upsample1 = PerView(Upsample(w2))
        self.up1 = MultiViewResBlock(w2 + w1, w1, temb_dim)
        self.up1_attn = MultiViewAttention(w1, heads)
        self.upsample0 = PerView(Upsample(w1))
        self.up0 = MultiViewResBlock(w1 + w0, w0, temb_dim)

        self.conv_out = PerView(nn.Sequential(
            nn.GroupNorm(GROUPS, w0),
            nn.SiLU(),
            nn.Conv2d(w0, latent_channels, 3, padding=1),
        ))

    def forward(self, x: torch.Tensor, timestep: int = None) -> torch.Tensor:
        if timestep is not None and timestep != self.fixed_timestep:
            raise ValidationError(f"this U-Net runs at t={self.fixed_timestep}, got t={timestep}")
        if x.ndim != 5 or x.shape[2] != self.latent_channels:
            raise ValidationError(
                f"expected (B, V+1, {self.latent_channels}, H, W) latents, got {tuple(x.shape)}"
            )
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ValidationError(f"latent size {x.shape[-2]}x{x.shape[-1]} is not divisible by 4")
        self.forward_calls += 1

        temb = self.time_mlp(self.timestep_table)

        h = self.conv_in(x)
        s0 = self.down0(h, temb)
        h = self.downsample0(s0)
        s1 = self.down1_attn(self.down1(h, temb))
        h = self.downsample1(s1)

        h = self.mid1(self.mid_attn(self.mid0(h, temb)), temb)

        h = self.upsample1(h)
        h = self.up1_attn(self.up1(torch.cat([h, s1], dim=2), temb))
        h = self.upsample0(h)
        h = self.up0(torch.cat([h, s0], dim=2), temb)

        return x + self.conv_out(h)
