"""Generator, critic, and evaluation classifier.

The generator is a five-level U-Net. Skip connections can be gated by
additive attention, and self-attention blocks can be inserted behind
encoder and decoder layers at chosen feature-map sizes. Which pieces are
present is described by a VariantSpec, so ablation variants are all built
by the same code path.

Feature-map sizes in a VariantSpec always use the 128-pixel profile
vocabulary (64, 32, 16, 8 behind encoder layers 1..4). Building at a
smaller image size keeps the placement by layer, with the actual maps
scaled down accordingly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import AttentionGate, SelfAttention2d
from .errors import ConfigurationError, ContractViolation

ENC_CHANNELS = (64, 128, 256, 512, 1024)
# canonical map size behind encoder layer l at the 128px profile
LEVEL_MAP_SIZES = {1: 64, 2: 32, 3: 16, 4: 8}
MAP_SIZE_LEVELS = {s: l for l, s in LEVEL_MAP_SIZES.items()}
N_ATTRS = 13

_FEAT_RE = re.compile(r"^FEAT(_\d+)+$")


@dataclass(frozen=True)
class VariantSpec:
    """Structural description of one generator variant.

    gate_levels: which skip connections carry an attention gate (1 is the
    outermost 64-map level, 4 the innermost 8-map level). Levels absent
    here have no skip connection at all, gated or plain.
    attention_maps: feature-map sizes (128px vocabulary) that get a
    self-attention block.
    attention_sides: "both", "encoder", or "decoder".
    symmetric: mirror the encoder widths in the decoder; False doubles the
    decoder widths and collapses to RGB through a final 1x1 convolution.
    """

    name: str
    gate_levels: frozenset[int] = frozenset()
    attention_maps: frozenset[int] = frozenset()
    attention_sides: str = "both"
    symmetric: bool = True

    def __post_init__(self):
        if not self.gate_levels <= set(LEVEL_MAP_SIZES):
            raise ConfigurationError(
                f"gate levels must be within {sorted(LEVEL_MAP_SIZES)}, "
                f"got {sorted(self.gate_levels)}"
            )
        if not self.attention_maps <= set(MAP_SIZE_LEVELS):
            raise ConfigurationError(
                f"attention map sizes must be within {sorted(MAP_SIZE_LEVELS)}, "
                f"got {sorted(self.attention_maps)}"
            )
        if self.attention_sides not in ("both", "encoder", "decoder"):
            raise ConfigurationError(
                f"attention_sides must be both/encoder/decoder, got {self.attention_sides!r}"
            )

    @property
    def attention_levels(self) -> frozenset[int]:
        return frozenset(MAP_SIZE_LEVELS[s] for s in self.attention_maps)

    @classmethod
    def from_name(cls, name: str) -> "VariantSpec":
        """Parse a variant id.

        M0 is the full model, M1 drops self-attention, M2 drops the gated
        skips, M3 is M0 with the asymmetric decoder. AUC_k keeps gates on
        levels 1..k only (no self-attention). Feat_S1[_S2...] places
        self-attention at the given map sizes on a gate-free U-Net, so
        Feat_32_64 and M2 are the same network.
        """
        key = name.strip().upper()
        all_gates = frozenset(LEVEL_MAP_SIZES)
        sa_default = frozenset({32, 64})
        if key == "M0":
            return cls("M0", all_gates, sa_default)
        if key == "M1":
            return cls("M1", all_gates, frozenset())
        if key == "M2":
            return cls("M2", frozenset(), sa_default)
        if key == "M3":
            return cls("M3", all_gates, sa_default, symmetric=False)
        m = re.fullmatch(r"AUC_([1-4])", key)
        if m:
            k = int(m.group(1))
            return cls(f"AUC_{k}", frozenset(range(1, k + 1)), frozenset())
        if _FEAT_RE.fullmatch(key):
            sizes = sorted({int(tok) for tok in key.split("_")[1:]})
            bad = [s for s in sizes if s not in MAP_SIZE_LEVELS]
            if bad:
                raise ConfigurationError(
                    f"unknown feature-map size(s) {bad} in variant {name!r}; "
                    f"valid sizes: {sorted(MAP_SIZE_LEVELS)}"
                )
            canon = "Feat_" + "_".join(str(s) for s in sizes)
            return cls(canon, frozenset(), frozenset(sizes))
        raise ConfigurationError(
            f"unknown variant {name!r}; expected M0..M3, AUC_1..AUC_4, "
            f"or Feat_<size>[_<size>...]"
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "gate_levels": sorted(self.gate_levels),
            "attention_maps": sorted(self.attention_maps),
            "attention_sides": self.attention_sides,
            "symmetric": self.symmetric,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VariantSpec":
        try:
            return cls(
                name=d["name"],
                gate_levels=frozenset(d["gate_levels"]),
                attention_maps=frozenset(d["attention_maps"]),
                attention_sides=d.get("attention_sides", "both"),
                symmetric=d.get("symmetric", True),
            )
        except KeyError as e:
            raise ConfigurationError(f"variant dict is missing key {e}") from None


def _weights_init(m):
    if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.normal_(m.weight, 0.0, 0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.InstanceNorm2d) and m.affine:
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)


def _conv_block(c_in, c_out):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 4, 2, 1),
        nn.InstanceNorm2d(c_out, affine=True),
        nn.ReLU(inplace=True),
    )


def _deconv_block(c_in, c_out):
    return nn.Sequential(
        nn.ConvTranspose2d(c_in, c_out, 4, 2, 1),
        nn.InstanceNorm2d(c_out, affine=True),
        nn.ReLU(inplace=True),
    )


class Generator(nn.Module):
    """Attribute-conditioned encoder-decoder.

    encode() maps an image to the five encoder features (after any
    self-attention). decode() takes those features plus a 0/1 attribute
    vector, tiles the vector over the bottleneck, and runs the decoder,
    gating each skip connection that has a gate. forward() chains both.
    """

    def __init__(self, spec: VariantSpec, image_size: int = 128, n_attrs: int = N_ATTRS):
        super().__init__()
        # below 64 the bottleneck map collapses to 1x1, which instance
        # norm cannot handle
        if image_size % 32 != 0 or image_size < 64:
            raise ConfigurationError(
                f"image size must be a multiple of 32, at least 64, got {image_size}"
            )
        if n_attrs < 1:
            raise ConfigurationError(f"need at least one attribute, got {n_attrs}")
        self.spec = spec
        self.image_size = image_size
        self.n_attrs = n_attrs
        self.bottleneck = image_size // 32

        attn_levels = spec.attention_levels
        enc_attn = spec.attention_sides in ("both", "encoder")
        dec_attn = spec.attention_sides in ("both", "decoder")

        convs = []
        c_in = 3
        for c_out in ENC_CHANNELS:
            convs.append(_conv_block(c_in, c_out))
            c_in = c_out
        self.enc_convs = nn.ModuleList(convs)
        self.enc_attn = nn.ModuleDict(
            {str(l): SelfAttention2d(ENC_CHANNELS[l - 1]) for l in sorted(attn_levels)}
            if enc_attn
            else {}
        )

        def dec_width(level):
            w = ENC_CHANNELS[level - 1]
            return w if spec.symmetric else 2 * w

        self.gates = nn.ModuleDict(
            {
                str(l): AttentionGate(dec_width(l), ENC_CHANNELS[l - 1])
                for l in sorted(spec.gate_levels)
            }
        )

        if spec.symmetric:
            out_widths = [512, 256, 128, 64, 3]
        else:
            out_widths = [1024, 512, 256, 128, 64]
        blocks = []
        d_ch = ENC_CHANNELS[-1] + n_attrs
        for j, c_out in enumerate(out_widths, start=1):
            if j >= 2:
                lvl = 6 - j
                if lvl in spec.gate_levels:
                    d_ch += ENC_CHANNELS[lvl - 1]
            if spec.symmetric and j == 5:
                blocks.append(
                    nn.Sequential(nn.ConvTranspose2d(d_ch, c_out, 4, 2, 1), nn.Tanh())
                )
            else:
                blocks.append(_deconv_block(d_ch, c_out))
            d_ch = c_out
        self.dec_blocks = nn.ModuleList(blocks)
        self.to_rgb = (
            None
            if spec.symmetric
            else nn.Sequential(nn.Conv2d(out_widths[-1], 3, 1), nn.Tanh())
        )
        self.dec_attn = nn.ModuleDict(
            {str(l): SelfAttention2d(dec_width(l)) for l in sorted(attn_levels)}
            if dec_attn
            else {}
        )

        self.apply(_weights_init)

    def _check_image(self, x):
        if x.dim() not in (3, 4):
            raise ContractViolation(f"expected a 3d or 4d image tensor, got {x.dim()}d")
        if x.shape[-3] != 3 or x.shape[-2:] != (self.image_size, self.image_size):
            raise ContractViolation(
                f"expected 3x{self.image_size}x{self.image_size} images, "
                f"got shape {tuple(x.shape)}"
            )

    def encode(self, x):
        """Return the five per-level encoder features for an image batch."""
        self._check_image(x)
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        feats = []
        f = x
        for i, block in enumerate(self.enc_convs, start=1):
            f = block(f)
            key = str(i)
            if key in self.enc_attn:
                f = self.enc_attn[key](f)
            feats.append(f)
        if squeeze:
            feats = [f.squeeze(0) for f in feats]
        return feats

    def decode(self, feats, b, return_attention: bool = False):
        if len(feats) != 5:
            raise ContractViolation(f"expected 5 encoder features, got {len(feats)}")
        squeeze = feats[-1].dim() == 3
        if squeeze:
            feats = [f.unsqueeze(0) for f in feats]
            b = b.unsqueeze(0) if b.dim() == 1 else b
        batch = feats[-1].shape[0]
        if b.dim() != 2 or b.shape != (batch, self.n_attrs):
            raise ContractViolation(
                f"expected attribute batch of shape ({batch}, {self.n_attrs}), "
                f"got {tuple(b.shape)}"
            )
        s = self.bottleneck
        bmap = b.to(feats[-1].dtype).view(batch, self.n_attrs, 1, 1).expand(-1, -1, s, s)
        d = torch.cat([feats[-1], bmap], dim=1)
        alphas = {}
        for j, block in enumerate(self.dec_blocks, start=1):
            if j >= 2:
                lvl = 6 - j
                key = str(lvl)
                if key in self.gates:
                    gated, alpha = self.gates[key](d, feats[lvl - 1])
                    alphas[f"gate_{lvl}"] = alpha
                    d = torch.cat([gated, d], dim=1)
            d = block(d)
            if j <= 4:
                key = str(5 - j)
                if key in self.dec_attn:
                    d = self.dec_attn[key](d)
        if self.to_rgb is not None:
            d = self.to_rgb(d)
        if squeeze:
            d = d.squeeze(0)
            alphas = {k: v.squeeze(0) for k, v in alphas.items()}
        if return_attention:
            return d, alphas
        return d

    def forward(self, x, b, return_attention: bool = False):
        feats = self.encode(x)
        return self.decode(feats, b, return_attention=return_attention)


class Discriminator(nn.Module):
    """Shared convolutional backbone with a critic head and an attribute head.

    The critic head returns one unbounded score per sample; the attribute
    head returns one logit per attribute.
    """

    def __init__(self, image_size: int = 128, n_attrs: int = N_ATTRS):
        super().__init__()
        if image_size % 32 != 0 or image_size < 64:
            raise ConfigurationError(
                f"image size must be a multiple of 32, at least 64, got {image_size}"
            )
        self.image_size = image_size
        self.n_attrs = n_attrs
        layers = []
        c_in = 3
        for c_out in ENC_CHANNELS:
            layers += [
                nn.Conv2d(c_in, c_out, 4, 2, 1),
                nn.InstanceNorm2d(c_out, affine=True),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            c_in = c_out
        self.backbone = nn.Sequential(*layers)
        flat = ENC_CHANNELS[-1] * (image_size // 32) ** 2
        self.adv_head = nn.Linear(flat, 1)
        self.cls_head = nn.Linear(flat, n_attrs)
        self.apply(_weights_init)

    def features(self, x):
        if x.dim() != 4 or x.shape[1:] != (3, self.image_size, self.image_size):
            raise ContractViolation(
                f"expected (B, 3, {self.image_size}, {self.image_size}) images, "
                f"got shape {tuple(x.shape)}"
            )
        return self.backbone(x).flatten(1)

    def forward(self, x):
        f = self.features(x)
        return self.adv_head(f).squeeze(-1), self.cls_head(f)


class BasicBlock(nn.Module):
    """Two 3x3 convolutions with batch norm and an additive shortcut."""

    def __init__(self, c_in, c_out, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride, bias=False), nn.BatchNorm2d(c_out)
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = torch.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return torch.relu(h + self.shortcut(x))


class AttributeClassifier(nn.Module):
    """Residual network that scores each attribute independently.

    Three stages of basic blocks (3, 4, and 6 of them) at widths 64, 128,
    256, global average pooling, and a linear head with one logit per
    attribute. Used only to judge edits, never during GAN training.
    """

    STAGES = ((3, 64, 1), (4, 128, 2), (6, 256, 2))

    def __init__(self, n_attrs: int = N_ATTRS):
        super().__init__()
        self.n_attrs = n_attrs
        self.stem = nn.Sequential(
            nn.Conv2d(3, 64, 3, 1, 1, bias=False), nn.BatchNorm2d(64), nn.ReLU(inplace=True)
        )
        blocks = []
        c_in = 64
        for depth, width, stride in self.STAGES:
            for i in range(depth):
                blocks.append(BasicBlock(c_in, width, stride if i == 0 else 1))
                c_in = width
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(c_in, n_attrs)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ContractViolation(
                f"expected a (B, 3, H, W) image batch, got shape {tuple(x.shape)}"
            )
        h = self.blocks(self.stem(x))
        h = h.mean(dim=(2, 3))
        return self.head(h)

    @torch.no_grad()
    def predict(self, x):
        """Per-attribute probabilities."""
        return torch.sigmoid(self.forward(x))


def build_variant(variant, image_size: int = 128, n_attrs: int = N_ATTRS):
    """Build (generator, discriminator) for a variant id or VariantSpec."""
    spec = VariantSpec.from_name(variant) if isinstance(variant, str) else variant
    gen = Generator(spec, image_size=image_size, n_attrs=n_attrs)
    disc = Discriminator(image_size=image_size, n_attrs=n_attrs)
    return gen, disc


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
