"""Attention blocks used by the generator.

Two mechanisms live here. AttentionGate sits on a U-Net skip connection and
decides, per spatial position, how much of the encoder feature to let
through. SelfAttention2d mixes information across all spatial positions of a
single feature map, weighted by content similarity.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ContractViolation

INIT_STD = 0.02


def _init_conv(conv: nn.Conv2d) -> nn.Conv2d:
    nn.init.normal_(conv.weight, 0.0, INIT_STD)
    if conv.bias is not None:
        nn.init.zeros_(conv.bias)
    return conv


class AttentionGate(nn.Module):
    """Additive attention gate for one skip connection.

    The decoder feature (the query) and the encoder feature (the key) are
    each projected to half the encoder width by 1x1 convolutions, summed,
    and passed through ReLU. A third 1x1 convolution collapses the result
    to one score per spatial position; its sigmoid is the gate coefficient
    alpha. The encoder feature scaled by alpha is what gets concatenated
    into the decoder.

    `channels` is the decoder-side width. `enc_channels` defaults to the
    same value, which is the symmetric-U-Net case; an asymmetric decoder
    passes the encoder width explicitly.
    """

    def __init__(self, channels: int, enc_channels: int | None = None):
        super().__init__()
        enc_channels = channels if enc_channels is None else enc_channels
        if channels < 1 or enc_channels < 2 or enc_channels % 2 != 0:
            raise ConfigurationError(
                f"gate needs dec channels >= 1 and even enc channels >= 2, "
                f"got {channels} and {enc_channels}"
            )
        self.channels = channels
        self.enc_channels = enc_channels
        inter = enc_channels // 2
        self.query = _init_conv(nn.Conv2d(channels, inter, 1))
        self.key = _init_conv(nn.Conv2d(enc_channels, inter, 1))
        self.score = _init_conv(nn.Conv2d(inter, 1, 1))

    def forward(self, decoder_feat, encoder_feat):
        """Return (gated encoder feature, alpha).

        Both inputs must share spatial size; alpha has a single channel and
        broadcasts over the encoder channels.
        """
        if decoder_feat.dim() != encoder_feat.dim() or decoder_feat.dim() not in (3, 4):
            raise ContractViolation(
                f"expected matching 3d or 4d features, got {decoder_feat.dim()}d "
                f"and {encoder_feat.dim()}d"
            )
        if decoder_feat.shape[-2:] != encoder_feat.shape[-2:]:
            raise ContractViolation(
                f"spatial sizes differ: {tuple(decoder_feat.shape[-2:])} vs "
                f"{tuple(encoder_feat.shape[-2:])}"
            )
        if decoder_feat.shape[-3] != self.channels:
            raise ContractViolation(
                f"decoder feature has {decoder_feat.shape[-3]} channels, "
                f"gate was built for {self.channels}"
            )
        if encoder_feat.shape[-3] != self.enc_channels:
            raise ContractViolation(
                f"encoder feature has {encoder_feat.shape[-3]} channels, "
                f"gate was built for {self.enc_channels}"
            )
        a = F.relu(self.query(decoder_feat) + self.key(encoder_feat))
        alpha = torch.sigmoid(self.score(a))
        return encoder_feat * alpha, alpha


class SelfAttention2d(nn.Module):
    """Self-attention over the spatial positions of a feature map.

    Queries and keys are C/8-dimensional projections, values keep the full
    width. For positions i, j the logit is k(x_i)^T q(x_j); a softmax over i
    turns each row j into a distribution over source positions, and the
    output at j is the attention-weighted sum of values. The block returns
    gamma * out + x with gamma a learnable scalar starting at zero, so a
    fresh block is an exact identity.
    """

    def __init__(self, channels: int):
        super().__init__()
        if channels < 8 or channels % 8 != 0:
            raise ConfigurationError(
                f"self-attention needs channels divisible by 8, got {channels}"
            )
        self.channels = channels
        self.query = _init_conv(nn.Conv2d(channels, channels // 8, 1))
        self.key = _init_conv(nn.Conv2d(channels, channels // 8, 1))
        self.value = _init_conv(nn.Conv2d(channels, channels, 1))
        self.gamma = nn.Parameter(torch.zeros(()))

    def forward(self, x, return_attention: bool = False):
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.dim() != 4:
            raise ContractViolation(f"expected a 3d or 4d feature map, got {x.dim()}d")
        if x.shape[1] != self.channels:
            raise ContractViolation(
                f"feature has {x.shape[1]} channels, block was built for {self.channels}"
            )
        b, c, h, w = x.shape
        n = h * w
        q = self.query(x).reshape(b, -1, n)
        k = self.key(x).reshape(b, -1, n)
        v = self.value(x).reshape(b, c, n)
        # logits[j, i] = k_i . q_j, rows sum to one after the softmax over i
        logits = torch.bmm(q.transpose(1, 2), k)
        beta = F.softmax(logits, dim=2)
        out = torch.bmm(v, beta.transpose(1, 2)).reshape(b, c, h, w)
        y = self.gamma * out + x
        if squeeze:
            y = y.squeeze(0)
            beta = beta.squeeze(0)
        if return_attention:
            return y, beta
        return y
