"""Network building blocks for the stage-1 reconstruction model.

Conventions: SiLU activations throughout (smooth, so finite-difference
gradient checks are meaningful), GroupNorm after strided convs, encoders
downsample 16x (H and W must be divisible by 16).
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn

from .errors import ConfigError


def coord_channels(b: int, h: int, w: int, dtype, device) -> torch.Tensor:
    ys = torch.linspace(-1, 1, h, dtype=dtype, device=device)
    xs = torch.linspace(-1, 1, w, dtype=dtype, device=device)
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([xx, yy]).unsqueeze(0).expand(b, -1, -1, -1)


def _down_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=2, padding=1),
        nn.GroupNorm(8, c_out),
        nn.SiLU(),
    )


class ConvEncoder(nn.Module):
    """Four stride-2 conv blocks, flattened to an out_dim vector."""

    def __init__(self, in_channels: int, hw: tuple[int, int], out_dim: int,
                 with_coords: bool = False):
        super().__init__()
        h, w = hw
        if h % 16 or w % 16:
            raise ConfigError(f"encoder input {hw} must be divisible by 16")
        self.with_coords = with_coords
        c = in_channels + (2 if with_coords else 0)
        self.blocks = nn.Sequential(
            _down_block(c, 32),
            _down_block(32, 64),
            _down_block(64, 128),
            _down_block(128, 128),
        )
        self.head = nn.Linear(128 * (h // 16) * (w // 16), out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.with_coords:
            coords = coord_channels(x.shape[0], x.shape[2], x.shape[3], x.dtype, x.device)
            x = torch.cat([x, coords], dim=1)
        feat = self.blocks(x)
        return self.head(feat.flatten(1))


class GaussianEncoder(nn.Module):
    """Conv encoder emitting a diagonal-Gaussian posterior (mu, logvar).

    The logvar head starts at -4 so early samples stay close to the means;
    unit-variance noise at initialization lets decoders ignore the code and
    collapses the posterior.
    """

    def __init__(self, in_channels: int, hw: tuple[int, int], latent_dim: int,
                 with_coords: bool = False):
        super().__init__()
        self.latent_dim = latent_dim
        self.net = ConvEncoder(in_channels, hw, 2 * latent_dim, with_coords)
        with torch.no_grad():
            self.net.head.bias[latent_dim:] = -4.0

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mu, logvar = self.net(x).chunk(2, dim=1)
        return mu, logvar.clamp(-8, 8)


def sample_gaussian(mu: torch.Tensor, logvar: torch.Tensor,
                    generator: torch.Generator | None = None) -> torch.Tensor:
    eps = torch.randn(mu.shape, dtype=mu.dtype, device=mu.device, generator=generator)
    return mu + torch.exp(0.5 * logvar) * eps


def kl_standard_normal(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(q || N(0,I)) summed over dims, averaged over the batch."""
    return (-0.5 * (1 + logvar - mu.pow(2) - logvar.exp()).sum(dim=1)).mean()


class SpatialFeatures(nn.Module):
    """CoordConv feature extractor: a /4-resolution key map plus a pooled
    descriptor, both consumed by the recurrent detector."""

    def __init__(self, in_channels: int, dim: int = 128):
        super().__init__()
        self.blocks = nn.Sequential(
            _down_block(in_channels + 2, 32),
            _down_block(32, 64),
        )
        self.keys = nn.Conv2d(64, dim, 1)
        self.pool = nn.Linear(64, dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        coords = coord_channels(x.shape[0], x.shape[2], x.shape[3], x.dtype, x.device)
        feat = self.blocks(torch.cat([x, coords], dim=1))
        return self.keys(feat), torch.nn.functional.silu(self.pool(feat.mean(dim=(2, 3))))


class ObjectDetector(nn.Module):
    """Recurrent position emitter: one z_where per step.

    Each step attends over the spatial key map; the window center is the
    attention-weighted mean of cell coordinates (a convex combination, so it
    lies in [-1,1] by construction), and sizes pass through a sigmoid. The
    attention logits carry a salience bias from the difference image, so
    windows start on foreground mass; attended regions are inhibited before
    the next step so later slots look elsewhere.
    """

    def __init__(self, dim: int, n_slots: int, hidden: int = 128):
        super().__init__()
        self.n_slots = n_slots
        self.hidden = hidden
        self.dim = dim
        self.cell = nn.LSTMCell(2 * dim, hidden)
        self.query = nn.Linear(hidden, dim)
        self.size_head = nn.Linear(hidden, 2)
        self.salience_gain = nn.Parameter(torch.tensor(20.0))

    def forward(self, keys: torch.Tensor, pooled: torch.Tensor,
                salience: torch.Tensor) -> torch.Tensor:
        """keys (B,dim,H',W'), pooled (B,dim), salience (B,1,H',W')
        -> z_where (B, n_slots, 4)."""
        b, _, gh, gw = keys.shape
        coords = coord_channels(b, gh, gw, keys.dtype, keys.device)  # (B,2,H',W')
        h = keys.new_zeros(b, self.hidden)
        c = keys.new_zeros(b, self.hidden)
        attended = keys.new_zeros(b, self.dim)
        sal = salience.squeeze(1)
        scale = 1.0 / math.sqrt(self.dim)
        out = []
        for _ in range(self.n_slots):
            h, c = self.cell(torch.cat([pooled, attended], dim=1), (h, c))
            q = self.query(h)
            logits = (keys * q[:, :, None, None]).sum(dim=1) * scale
            logits = logits + self.salience_gain * sal  # (B,H',W')
            w = torch.softmax(logits.flatten(1), dim=1).view(b, 1, gh, gw)
            center = (w * coords).sum(dim=(2, 3))  # (B,2) in [-1,1]
            attended = (w * keys).sum(dim=(2, 3))
            size = torch.sigmoid(self.size_head(h))
            out.append(torch.cat([center, size], dim=1))
            # inhibit the attended region for the remaining slots
            w2 = w.squeeze(1)
            sal = sal * (1.0 - w2 / (w2.amax(dim=(1, 2), keepdim=True) + 1e-8))
        return torch.stack(out, dim=1)


class BroadcastDecoder(nn.Module):
    """Spatial broadcast decoder: tile the code over an h*w grid, append
    coordinate channels, then four convolutions to an RGB image and mask."""

    def __init__(self, code_dim: int, hw: tuple[int, int]):
        super().__init__()
        self.hw = hw
        self.net = nn.Sequential(
            nn.Conv2d(code_dim + 2, 64, 3, padding=1), nn.SiLU(),
            nn.Conv2d(64, 64, 3, padding=1), nn.SiLU(),
            nn.Conv2d(64, 32, 3, padding=1), nn.SiLU(),
            nn.Conv2d(32, 4, 3, padding=1),
        )

    def forward(self, code: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b = code.shape[0]
        h, w = self.hw
        grid = code[:, :, None, None].expand(b, code.shape[1], h, w)
        coords = coord_channels(b, h, w, code.dtype, code.device)
        out = torch.sigmoid(self.net(torch.cat([grid, coords], dim=1)))
        return out[:, :3], out[:, 3:4]


class BackgroundDecoder(nn.Module):
    """Latent to full-frame RGB through four stride-2 upsampling blocks."""

    def __init__(self, latent_dim: int, hw: tuple[int, int]):
        super().__init__()
        h, w = hw
        if h % 16 or w % 16:
            raise ConfigError(f"decoder output {hw} must be divisible by 16")
        self.h0, self.w0 = h // 16, w // 16
        self.fc = nn.Linear(latent_dim, 128 * self.h0 * self.w0)
        def up(c_in, c_out):
            return nn.Sequential(
                nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1),
                nn.GroupNorm(8, c_out),
                nn.SiLU(),
            )
        self.blocks = nn.Sequential(up(128, 128), up(128, 64), up(64, 32), up(32, 32))
        self.out = nn.Conv2d(32, 3, 3, padding=1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = self.fc(z).view(z.shape[0], 128, self.h0, self.w0)
        return torch.sigmoid(self.out(self.blocks(x)))


class FrameDiscriminator(nn.Module):
    """Real/generated frame classifier; returns raw logits."""

    def __init__(self, hw: tuple[int, int]):
        super().__init__()
        self.net = ConvEncoder(3, hw, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).squeeze(1)


class PairDiscriminator(nn.Module):
    """Classifies a pair of pose codes; returns the raw logit.

    Probability 1 is the "objects from unrelated videos" label.
    """

    def __init__(self, pose_dim: int, hidden: int = 128):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(2 * pose_dim, hidden), nn.SiLU(),
            nn.Linear(hidden, hidden), nn.SiLU(),
            nn.Linear(hidden, 1),
        )

    def forward(self, z_a: torch.Tensor, z_b: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([z_a, z_b], dim=1)).squeeze(1)
