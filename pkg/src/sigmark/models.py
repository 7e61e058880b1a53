"""Network definitions: encoders, latent codec, denoiser, watermark nets.

Everything is sized for desk-scale 64x64 glyphs; widths and dims come from
the run config.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InputShape


def conv_block(cin, cout, stride=2):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        nn.GroupNorm(min(8, cout), cout),
        nn.SiLU(),
    )


class ImageEncoder(nn.Module):
    """Small conv encoder to a fixed-dimension embedding.

    Also exposes its last spatial feature map (used by the contextual loss).
    """

    def __init__(self, in_channels=1, dim=128, base=32):
        super().__init__()
        self.in_channels = in_channels
        self.features = nn.Sequential(
            conv_block(in_channels, base),        # 32
            conv_block(base, base * 2),           # 16
            conv_block(base * 2, base * 4),       # 8
        )
        self.head = nn.Sequential(
            conv_block(base * 4, base * 4),       # 4
            nn.AdaptiveAvgPool2d(1),
        )
        self.fc = nn.Linear(base * 4, dim)

    def feature_map(self, x):
        self._check(x)
        return self.features(x)

    def forward(self, x):
        fmap = self.feature_map(x)
        pooled = self.head(fmap).flatten(1)
        return self.fc(pooled)

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise InputShape(
                f"expected (B,{self.in_channels},H,W), got {tuple(x.shape)}")


class ProjectionHead(nn.Module):
    """Two-layer MLP onto the unit hypersphere; train-time only."""

    def __init__(self, dim=128, proj_dim=64):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, dim), nn.ReLU(),
                                 nn.Linear(dim, proj_dim))

    def forward(self, x):
        return F.normalize(self.net(x), dim=-1)


# ---------------------------------------------------------------------------
# latent codec (toy convolutional VAE, 4x downsampling)
# ---------------------------------------------------------------------------

class LatentCodec(nn.Module):
    downsample = 4

    def __init__(self, in_channels=1, latent_channels=4, base=32):
        super().__init__()
        self.latent_channels = latent_channels
        self.encoder = nn.Sequential(
            conv_block(in_channels, base),            # /2
            conv_block(base, base * 2),               # /4
            nn.Conv2d(base * 2, base * 2, 3, padding=1),
            nn.SiLU(),
        )
        self.to_stats = nn.Conv2d(base * 2, latent_channels * 2, 1)
        self.decoder = nn.Sequential(
            nn.Conv2d(latent_channels, base * 2, 3, padding=1),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(base * 2, base * 2, 3, padding=1),
            nn.GroupNorm(8, base * 2),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(base * 2, base, 3, padding=1),
            nn.GroupNorm(8, base),
            nn.SiLU(),
            nn.Conv2d(base, in_channels, 3, padding=1),
        )

    def encode_stats(self, x):
        mu, logvar = self.to_stats(self.encoder(x)).chunk(2, dim=1)
        return mu, torch.clamp(logvar, -30, 20)

    def encode(self, x):
        """Posterior mean; the deterministic inference encoding."""
        return self.encode_stats(x)[0]

    def decode(self, z):
        return torch.sigmoid(self.decoder(z))

    def forward(self, x, rng=None):
        mu, logvar = self.encode_stats(x)
        if rng is None:
            eps = torch.randn_like(mu)
        else:
            eps = torch.randn(mu.shape, generator=rng).to(mu.device)
        z = mu + torch.exp(0.5 * logvar) * eps
        return self.decode(z), mu, logvar


# ---------------------------------------------------------------------------
# conditional denoiser
# ---------------------------------------------------------------------------

def timestep_embedding(t, dim):
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0)
                      * torch.arange(half, dtype=torch.float32,
                                     device=t.device) / half)
    ang = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, cin, cout, emb_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(emb_dim, cout)
        self.norm2 = nn.GroupNorm(min(8, cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class StyleCrossAttention(nn.Module):
    """Single-token cross-attention against the (fused) style feature.

    A learned null token gives the softmax a do-nothing alternative, so the
    block can modulate how much style it injects per position.
    """

    def __init__(self, channels, style_dim):
        super().__init__()
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.q = nn.Conv2d(channels, channels, 1)
        self.kv = nn.Linear(style_dim, channels * 2)
        self.null_token = nn.Parameter(torch.zeros(1, style_dim))
        self.out = nn.Conv2d(channels, channels, 1)
        self.scale = channels ** -0.5

    def forward(self, x, style):
        b, c, h, w = x.shape
        tokens = torch.stack([style, self.null_token.expand_as(style)], dim=1)
        k, v = self.kv(tokens).chunk(2, dim=-1)          # b,2,c
        q = self.q(self.norm(x)).reshape(b, c, h * w)    # b,c,hw
        attn = torch.softmax(
            torch.einsum("bcn,btc->btn", q, k) * self.scale, dim=1)
        mixed = torch.einsum("btn,btc->bcn", attn, v).reshape(b, c, h, w)
        return x + self.out(mixed)


class ConditionalDenoiser(nn.Module):
    """U-Net noise predictor conditioned on content (via the timestep
    embedding) and style (via cross-attention at the two lowest scales)."""

    def __init__(self, latent_channels=4, base=48, content_dim=128,
                 style_dim=128, content_concat=False):
        super().__init__()
        emb_dim = base * 4
        self.content_concat = content_concat
        self.t_proj = nn.Sequential(nn.Linear(base, emb_dim), nn.SiLU(),
                                    nn.Linear(emb_dim, emb_dim))
        self.c_proj = nn.Linear(content_dim, emb_dim)
        self.base = base
        cin = latent_channels + (1 if content_concat else 0)
        self.conv_in = nn.Conv2d(cin, base, 3, padding=1)
        self.down1 = ResBlock(base, base, emb_dim)            # 16
        self.downsample1 = nn.Conv2d(base, base * 2, 3, stride=2, padding=1)
        self.down2 = ResBlock(base * 2, base * 2, emb_dim)    # 8
        self.attn2 = StyleCrossAttention(base * 2, style_dim)
        self.downsample2 = nn.Conv2d(base * 2, base * 2, 3, stride=2,
                                     padding=1)
        self.mid = ResBlock(base * 2, base * 2, emb_dim)      # 4
        self.attn_mid = StyleCrossAttention(base * 2, style_dim)
        self.up1 = nn.Upsample(scale_factor=2, mode="nearest")
        self.upblock1 = ResBlock(base * 4, base * 2, emb_dim)  # 8
        self.attn_up = StyleCrossAttention(base * 2, style_dim)
        self.up2 = nn.Upsample(scale_factor=2, mode="nearest")
        self.upblock2 = ResBlock(base * 3, base, emb_dim)      # 16
        self.norm_out = nn.GroupNorm(8, base)
        self.conv_out = nn.Conv2d(base, latent_channels, 3, padding=1)

    def forward(self, z, t, style, content):
        emb = self.t_proj(timestep_embedding(t, self.base)) \
            + self.c_proj(content)
        if self.content_concat:
            extra = content.mean(dim=1, keepdim=True)[:, :, None, None]
            z = torch.cat([z, extra.expand(-1, 1, z.shape[2], z.shape[3])],
                          dim=1)
        h1 = self.down1(self.conv_in(z), emb)
        h2 = self.attn2(self.down2(self.downsample1(h1), emb), style)
        h3 = self.attn_mid(self.mid(self.downsample2(h2), emb), style)
        u1 = self.upblock1(torch.cat([self.up1(h3), h2], dim=1), emb)
        u1 = self.attn_up(u1, style)
        u2 = self.upblock2(torch.cat([self.up2(u1), h1], dim=1), emb)
        return self.conv_out(F.silu(self.norm_out(u2)))


# ---------------------------------------------------------------------------
# watermark embedder / extractor
# ---------------------------------------------------------------------------

class WatermarkEmbedder(nn.Module):
    """Gated residual fusion of bits into the reference style feature."""

    def __init__(self, n_bits=16, style_dim=128, gate_init=0.1):
        super().__init__()
        self.n_bits = n_bits
        self.proj = nn.Linear(n_bits, style_dim)
        self.gate = nn.Parameter(torch.tensor(float(gate_init)))

    def forward(self, reference, bits):
        if bits.shape[-1] != self.n_bits:
            raise InputShape(f"expected {self.n_bits} bits, "
                             f"got {bits.shape[-1]}")
        return reference + self.gate * self.proj(bits.to(reference.dtype))


class SpatialAligner(nn.Module):
    """Affine spatial transformer initialized to the identity transform."""

    def __init__(self, in_channels=1, base=16):
        super().__init__()
        self.loc = nn.Sequential(
            conv_block(in_channels, base),      # /2
            conv_block(base, base * 2),         # /4
            conv_block(base * 2, base * 2),     # /8
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(base * 2, 32), nn.ReLU(),
            nn.Linear(32, 6),
        )
        last = self.loc[-1]
        nn.init.zeros_(last.weight)
        last.bias.data = torch.tensor([1., 0., 0., 0., 1., 0.])

    def forward(self, x):
        theta = self.loc(x).view(-1, 2, 3)
        grid = F.affine_grid(theta, x.shape, align_corners=False)
        return F.grid_sample(x, grid, align_corners=False,
                             padding_mode="border")


class WatermarkExtractor(nn.Module):
    """STN alignment, fused-style recovery, and the bit-prediction MLP."""

    def __init__(self, n_bits=16, style_dim=128, in_channels=1, base=32):
        super().__init__()
        self.aligner = SpatialAligner(in_channels)
        self.recover = ImageEncoder(in_channels, dim=style_dim, base=base)
        # the style-recovery regression reads detached trunk features: its
        # target is the per-identity reference, so letting its gradient into
        # the trunk drives the features toward an identity-constant and
        # erases the bit-induced variation the logits depend on
        self.recover_head = nn.Linear(style_dim, style_dim)
        self.mlp = nn.Sequential(
            nn.Linear(style_dim * 2, 256), nn.ReLU(),
            nn.Linear(256, 256), nn.ReLU(),
            nn.Linear(256, n_bits),
        )

    def forward(self, image, reference):
        aligned = self.aligner(image)
        feats = self.recover(aligned)
        recovered = self.recover_head(feats.detach())
        logits = self.mlp(torch.cat([feats, reference], dim=-1))
        return logits, recovered


def bits_from_logits(logits):
    return (logits > 0).to(torch.uint8)


def extraction_confidence(logits):
    """Mean distance of per-bit probabilities from coin-flip, in [0,1]."""
    return float((torch.sigmoid(logits) - 0.5).abs().mean().item() * 2)
