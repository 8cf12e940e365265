"""Translation network: text/content-conditioned image-to-image generator.

The generator encodes a frame to a 512-channel map, runs it through a stack
of residual blocks whose normalization is replaced by multi-feature
modulation, and decodes back to the input resolution. Each modulation block
normalizes activations channel-wise and re-scales/shifts them by per-channel
parameters projected from two condition vectors: a 512-dim text embedding
and a 256-dim content code. Learned scalar blend weights (sigmoid of a
per-block logit, so always in (0, 1)) interpolate between the two sources
for the scale and the shift independently.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .textenc import EMBED_DIM

CONTENT_DIM = 256


class SafeInstanceNorm2d(nn.Module):
    """Instance normalization that leaves 1x1 feature maps untouched.

    A single spatial element has no within-instance statistics; plain
    InstanceNorm2d raises on it, so degenerate maps pass through identity.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.channels = channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] * x.shape[-2] <= 1:
            return x
        return nn.functional.instance_norm(x, eps=self.eps)


class MappingNetwork(nn.Module):
    """Four fully connected layers lifting z_cont to the 256-dim content code."""

    def __init__(self, in_dim: int, out_dim: int = CONTENT_DIM, hidden: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, out_dim),
        )
        self.in_dim = in_dim

    def forward(self, z_cont: torch.Tensor) -> torch.Tensor:
        if z_cont.shape[-1] != self.in_dim:
            raise ValueError(f"z_cont dim {z_cont.shape[-1]} != {self.in_dim}")
        return self.net(z_cont)


class MultiFeatureModulation(nn.Module):
    """Conditional normalization blending text- and content-derived affines.

    output = (a*gamma_c + (1-a)*psi_c) * (x - mu_c)/sigma_c
             + b*rho_c + (1-b)*eta_c

    with per-channel statistics over (batch, H, W) in ``batch`` mode or per
    sample over (H, W) in ``instance`` mode, and a, b the sigmoid blend
    weights. The std is floored at ``eps`` so constant inputs degrade to the
    pure shift term.
    """

    def __init__(self, channels: int, text_dim: int = EMBED_DIM,
                 content_dim: int = CONTENT_DIM, stats: str = "batch",
                 eps: float = 1e-5):
        super().__init__()
        if stats not in ("batch", "instance"):
            raise ValueError(f"stats must be batch or instance, got {stats!r}")
        self.channels = channels
        self.stats = stats
        self.eps = eps
        self.text_scale = nn.Linear(text_dim, channels)
        self.text_shift = nn.Linear(text_dim, channels)
        self.content_scale = nn.Linear(content_dim, channels)
        self.content_shift = nn.Linear(content_dim, channels)
        # zero logits start both blends at 0.5: equal influence of the sources
        self.scale_blend_logit = nn.Parameter(torch.zeros(()))
        self.shift_blend_logit = nn.Parameter(torch.zeros(()))

    @property
    def scale_blend(self) -> torch.Tensor:
        return torch.sigmoid(self.scale_blend_logit)

    @property
    def shift_blend(self) -> torch.Tensor:
        return torch.sigmoid(self.shift_blend_logit)

    def compute_stats(self, x: torch.Tensor):
        """Channel mean and std: sqrt(E[x^2] - mean^2) floored at eps."""
        dims = (0, 2, 3) if self.stats == "batch" else (2, 3)
        mu = x.mean(dim=dims, keepdim=True)
        var = (x * x).mean(dim=dims, keepdim=True) - mu * mu
        sigma = torch.sqrt(torch.clamp(var, min=self.eps ** 2))
        return mu, sigma

    def forward(self, x: torch.Tensor, w_desc: torch.Tensor, w_cont: torch.Tensor,
                stats=None) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(f"expected (N, {self.channels}, H, W) input, got {tuple(x.shape)}")
        mu, sigma = self.compute_stats(x) if stats is None else stats
        gamma = self.text_scale(w_desc)[:, :, None, None]
        rho = self.text_shift(w_desc)[:, :, None, None]
        psi = self.content_scale(w_cont)[:, :, None, None]
        eta = self.content_shift(w_cont)[:, :, None, None]
        a, b = self.scale_blend, self.shift_blend
        scale = a * gamma + (1.0 - a) * psi
        shift = b * rho + (1.0 - b) * eta
        return scale * (x - mu) / sigma + shift


class ModulatedResidualBlock(nn.Module):
    """Residual unit: out = x + conv(modulate(activate(x)))."""

    def __init__(self, channels: int, stats: str = "batch", eps: float = 1e-5,
                 activation: str = "relu"):
        super().__init__()
        self.norm = MultiFeatureModulation(channels, stats=stats, eps=eps)
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.act = nn.ReLU() if activation == "relu" else nn.LeakyReLU(0.2)

    def forward(self, x, w_desc, w_cont):
        return x + self.conv(self.norm(self.act(x), w_desc, w_cont))


def _conv_in_relu(in_ch, out_ch, kernel, stride):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=kernel, stride=stride, padding=kernel // 2),
        SafeInstanceNorm2d(out_ch),
        nn.ReLU(),
    )


class TranslationNetwork(nn.Module):
    """Encoder, modulated residual stack and upsampling decoder.

    Owns the mapping network that lifts the text-irrelevant/dynamic code to
    the content condition; callers compute ``w_cont = net.mapping(z_cont)``
    and pass it to :meth:`generate`.
    """

    def __init__(self, n_blocks: int = 5, width: int = 512, stats: str = "batch",
                 eps: float = 1e-5, z_cont_dim: int = 3, content_dim: int = CONTENT_DIM):
        super().__init__()
        w4, w2 = max(width // 4, 1), max(width // 2, 1)
        w8 = max(width // 8, 1)
        self.mapping = MappingNetwork(z_cont_dim, content_dim)
        self.encoder = nn.Sequential(
            _conv_in_relu(3, w8, 7, 1),
            _conv_in_relu(w8, w4, 3, 2),
            _conv_in_relu(w4, w2, 3, 2),
            _conv_in_relu(w2, width, 3, 2),
        )
        self.blocks = nn.ModuleList(
            ModulatedResidualBlock(width, stats=stats, eps=eps) for _ in range(n_blocks)
        )
        self.decoder = nn.Sequential(
            self._up(width, w2), self._up(w2, w4), self._up(w4, w8),
        )
        self.to_rgb = nn.ConvTranspose2d(w8, 3, kernel_size=7, stride=1, padding=3)
        self.content_dim = content_dim

    @classmethod
    def from_config(cls, cfg) -> "TranslationNetwork":
        return cls(
            n_blocks=cfg.mfmod.blocks, width=cfg.mfmod.width, stats=cfg.mfmod.stats,
            eps=cfg.mfmod.eps, z_cont_dim=cfg.latent.dim_ti + cfg.latent.dim_dyn,
        )

    @staticmethod
    def _up(in_ch, out_ch):
        return nn.Sequential(
            nn.ConvTranspose2d(in_ch, out_ch, kernel_size=3, stride=2,
                               padding=1, output_padding=1),
            SafeInstanceNorm2d(out_ch),
            nn.ReLU(),
        )

    def generate(self, frame: torch.Tensor, w_desc: torch.Tensor,
                 w_cont: torch.Tensor) -> torch.Tensor:
        """Manipulated frame in [0, 1] at the input resolution."""
        if frame.ndim != 4:
            raise ValueError("expected (N, 3, H, W) frames")
        h, w = frame.shape[-2:]
        if h % 8 != 0 or w % 8 != 0 or min(h, w) < 8:
            raise ValueError(f"frame size {h}x{w} must be divisible by 8")
        x = self.encoder(frame * 2.0 - 1.0)
        for block in self.blocks:
            x = block(x, w_desc, w_cont)
        y = torch.tanh(self.to_rgb(self.decoder(x)))
        return (y + 1.0) * 0.5

    forward = generate


def manipulate_clip(clip, text: str, rep_net, tra_net, text_encoder,
                    k_random: int = 3, rng=None, solver=None) -> torch.Tensor:
    """Re-render every frame of a clip according to a target description.

    The clip is encoded from an observation subset (posterior means), the
    dynamic code is rolled out on the clip's full timestamp grid, and each
    frame is translated with the shared text embedding and its per-frame
    content code. Returns (N, 3, H, W) in [0, 1].
    """
    import numpy as np

    from . import scenes
    from .textenc import encode_batch

    rng = rng or np.random.default_rng(0)
    obs = scenes.sample_observations(clip, min(k_random, len(clip.frames) - 1), rng)
    frames = torch.as_tensor(obs.frames).unsqueeze(0)
    times = torch.as_tensor(obs.times, dtype=frames.dtype).unsqueeze(0)
    dense = torch.as_tensor(clip.timestamps, dtype=frames.dtype)

    rep_net.eval(), tra_net.eval()
    with torch.no_grad():
        code = rep_net.encode_clip(frames, times, sample=False,
                                   query_times=dense, solver=solver)
        w_desc = encode_batch(text_encoder, [text], dtype=frames.dtype)
        n = len(clip.frames)
        z_cont = torch.cat(
            [code.z_ti.unsqueeze(1).expand(-1, n, -1), code.z_dyn], dim=-1
        ).reshape(n, -1)
        w_cont = tra_net.mapping(z_cont)
        all_frames = torch.as_tensor(clip.frames)
        out = tra_net.generate(all_frames, w_desc.expand(n, -1), w_cont)
    return out
