"""Set-based variational video encoder with latent dynamics.

A shared CNN encodes each observed frame to a 256-dim feature split into a
static and a dynamic subspace. The static half is max-pooled over the frame
set (permutation invariant) and mapped to a Gaussian posterior over the
static code, itself partitioned into text-relevant and text-irrelevant
parts. The dynamic half runs through a GRU in reverse time order with the
time gap appended to each step's input, yielding a posterior over the
dynamic code at the first timestamp; its trajectory at any queried times is
produced by integrating a learned vector field. A deconvolutional decoder
(training only) reconstructs frames from concatenated codes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from . import odeint
from .textenc import TextProjection


@dataclass
class GaussianLatent:
    """Diagonal Gaussian posterior parameters."""

    mean: torch.Tensor
    log_variance: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise ValueError("mean and log_variance must share a shape")

    def sample(self, generator=None) -> torch.Tensor:
        eps = torch.randn(self.mean.shape, generator=generator,
                          dtype=self.mean.dtype, device=self.mean.device)
        return self.mean + torch.exp(0.5 * self.log_variance) * eps


@dataclass
class LatentCode:
    """Latent description of one batch of observed clips.

    ``z_tr`` and ``z_ti`` are shared by all frames of a clip; ``z_dyn``
    holds the dynamic code evaluated at ``times`` (observation grid or a
    caller-supplied query grid).
    """

    z_tr: torch.Tensor               # (B, dim_tr)
    z_ti: torch.Tensor               # (B, dim_ti)
    z_dyn: torch.Tensor              # (B, T, dim_dyn)
    times: torch.Tensor              # (B, T)
    static: GaussianLatent           # pooled posterior over z^ST
    static_per_frame: GaussianLatent  # (B, K, dim_st) head on each frame
    dynamic: GaussianLatent          # posterior over z_dyn at t0

    @property
    def z_static(self) -> torch.Tensor:
        return torch.cat([self.z_tr, self.z_ti], dim=-1)

    def frame_codes(self) -> torch.Tensor:
        """Per-frame concatenated codes (B, T, dim_tr+dim_ti+dim_dyn)."""
        st = self.z_static.unsqueeze(1).expand(-1, self.z_dyn.shape[1], -1)
        return torch.cat([st, self.z_dyn], dim=-1)

    def frame_codes_with(self, z_tr_replacement: torch.Tensor) -> torch.Tensor:
        """Per-frame codes with the text-relevant part substituted."""
        if z_tr_replacement.shape != self.z_tr.shape:
            raise ValueError("replacement must match z_tr shape")
        st = torch.cat([z_tr_replacement, self.z_ti], dim=-1)
        st = st.unsqueeze(1).expand(-1, self.z_dyn.shape[1], -1)
        return torch.cat([st, self.z_dyn], dim=-1)


class FrameEncoder(nn.Module):
    """Stride-2 conv stack then a linear head to one vector per frame."""

    def __init__(self, channels=(32, 32, 64, 128, 128), feature_dim=256,
                 resolution=32, in_channels=3):
        super().__init__()
        layers = []
        prev = in_channels
        for ch in channels:
            layers += [nn.Conv2d(prev, ch, kernel_size=4, stride=2, padding=1), nn.ReLU()]
            prev = ch
        self.conv = nn.Sequential(*layers)
        self.n_down = len(channels)
        div = 2 ** self.n_down
        if resolution % div != 0 or resolution < div:
            raise ValueError(f"resolution {resolution} must be divisible by {div}")
        self.resolution = resolution
        self.head = nn.Linear(prev * (resolution // div) ** 2, feature_dim)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.ndim != 4:
            raise ValueError("expected (N, C, H, W) frames")
        h, w = frames.shape[-2:]
        if h != self.resolution or w != self.resolution:
            raise ValueError(f"frame size {h}x{w} != configured {self.resolution}")
        return torch.relu(self.head(self.conv(frames).flatten(1)))


class DynamicsField(nn.Module):
    """Autonomous vector field for the dynamic code: 3 linear layers, ELU."""

    def __init__(self, dim: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden), nn.ELU(),
            nn.Linear(hidden, hidden), nn.ELU(),
            nn.Linear(hidden, dim),
        )

    def forward(self, z, t=None):
        return self.net(z)


class FrameDecoder(nn.Module):
    """Latent to image: two linear layers then mirrored transposed convs."""

    def __init__(self, latent_dim: int, encoder_channels=(32, 32, 64, 128, 128),
                 resolution: int = 32, out_channels: int = 3):
        super().__init__()
        up_channels = tuple(reversed(encoder_channels[:-1])) + (out_channels,)
        self.base = resolution // (2 ** len(encoder_channels))
        if self.base < 1 or resolution % (2 ** len(encoder_channels)) != 0:
            raise ValueError("resolution incompatible with encoder depth")
        self.start_channels = encoder_channels[-1]
        self.fc = nn.Sequential(
            nn.Linear(latent_dim, 256), nn.ReLU(),
            nn.Linear(256, self.start_channels * self.base * self.base), nn.ReLU(),
        )
        deconvs = []
        prev = self.start_channels
        for i, ch in enumerate(up_channels):
            deconvs.append(nn.ConvTranspose2d(prev, ch, kernel_size=4, stride=2, padding=1))
            if i < len(up_channels) - 1:
                deconvs.append(nn.ReLU())
            prev = ch
        self.deconv = nn.Sequential(*deconvs)
        self.latent_dim = latent_dim
        self.resolution = resolution

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent dim {z.shape[-1]} != {self.latent_dim}")
        lead = z.shape[:-1]
        x = self.fc(z.reshape(-1, self.latent_dim))
        x = x.reshape(-1, self.start_channels, self.base, self.base)
        img = torch.sigmoid(self.deconv(x))
        return img.reshape(*lead, *img.shape[1:])


class RepresentationNetwork(nn.Module):
    """Encoder/decoder pair producing partitioned latent codes for clips."""

    def __init__(self, dim_tr=3, dim_ti=2, dim_dyn=1, feature_dim=256, hidden_split=128,
                 gru_hidden=256, ode_hidden=64, encoder_channels=(32, 32, 64, 128, 128),
                 resolution=32, text_embed_dim=512):
        super().__init__()
        if not 1 <= hidden_split < feature_dim:
            raise ValueError("hidden_split must lie in [1, feature_dim)")
        self.dim_tr, self.dim_ti, self.dim_dyn = dim_tr, dim_ti, dim_dyn
        self.dim_st = dim_tr + dim_ti
        self.total_dim = self.dim_st + dim_dyn
        self.hidden_split = hidden_split

        self.frame_encoder = FrameEncoder(encoder_channels, feature_dim, resolution)
        self.static_head = nn.Linear(hidden_split, 2 * self.dim_st)
        self.gru = nn.GRUCell(feature_dim - hidden_split + 1, gru_hidden)
        self.dynamic_head = nn.Linear(gru_hidden, 2 * self.dim_dyn)
        self.dynamics = DynamicsField(dim_dyn, ode_hidden)
        self.decoder = FrameDecoder(self.total_dim, encoder_channels, resolution)
        self.text_projection = TextProjection(dim_tr, text_embed_dim)

    @classmethod
    def from_config(cls, cfg) -> "RepresentationNetwork":
        return cls(
            dim_tr=cfg.latent.dim_tr, dim_ti=cfg.latent.dim_ti, dim_dyn=cfg.latent.dim_dyn,
            feature_dim=cfg.repnet.feature_dim, hidden_split=cfg.repnet.hidden_split,
            gru_hidden=cfg.repnet.gru_hidden, ode_hidden=cfg.repnet.ode_hidden,
            encoder_channels=tuple(cfg.repnet.encoder_channels),
            resolution=cfg.data.resolution, text_embed_dim=cfg.text.embed_dim,
        )

    # -- spec operations ---------------------------------------------------

    def encode_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """Per-frame features; accepts (B, K, C, H, W) or (K, C, H, W)."""
        squeeze = frames.ndim == 4
        if squeeze:
            frames = frames.unsqueeze(0)
        b, k = frames.shape[:2]
        feats = self.frame_encoder(frames.reshape(b * k, *frames.shape[2:]))
        feats = feats.reshape(b, k, -1)
        return feats[0] if squeeze else feats

    def pool_static(self, hidden: torch.Tensor) -> GaussianLatent:
        """Max over frames of the static feature slice, then the linear head."""
        if hidden.ndim == 2:
            hidden = hidden.unsqueeze(0)
        if hidden.shape[1] < 1:
            raise ValueError("need at least one frame to pool")
        pooled = hidden[..., : self.hidden_split].max(dim=1).values
        out = self.static_head(pooled)
        return GaussianLatent(out[..., : self.dim_st], out[..., self.dim_st:])

    def static_posterior_per_frame(self, hidden: torch.Tensor) -> GaussianLatent:
        """The static head evaluated on each frame individually."""
        out = self.static_head(hidden[..., : self.hidden_split])
        return GaussianLatent(out[..., : self.dim_st], out[..., self.dim_st:])

    def encode_dynamics(self, hidden: torch.Tensor, times: torch.Tensor) -> GaussianLatent:
        """Reverse-time GRU over the dynamic feature slice.

        Each step consumes the frame's dynamic features concatenated with the
        gap to the previously consumed (later) frame; the newest frame gets a
        zero gap. The final hidden state parameterizes the posterior at t0.
        """
        if hidden.ndim == 2:
            hidden, times = hidden.unsqueeze(0), torch.as_tensor(times).unsqueeze(0)
        times = torch.as_tensor(times, dtype=hidden.dtype, device=hidden.device)
        if times.ndim != 2 or times.shape != hidden.shape[:2]:
            raise ValueError("times must align with hidden frames")
        if times.shape[1] > 1 and not bool((times[:, 1:] > times[:, :-1]).all()):
            raise ValueError("times must be strictly increasing")

        b, k = hidden.shape[:2]
        h_dyn = hidden[..., self.hidden_split:]
        state = hidden.new_zeros(b, self.gru.hidden_size)
        for i in range(k - 1, -1, -1):
            gap = (times[:, i + 1] - times[:, i]) if i < k - 1 else times.new_zeros(b)
            inp = torch.cat([h_dyn[:, i], gap.unsqueeze(-1)], dim=-1)
            state = self.gru(inp, state)
        out = self.dynamic_head(state)
        return GaussianLatent(out[..., : self.dim_dyn], out[..., self.dim_dyn:])

    def roll_dynamics(self, z_dyn_t0: torch.Tensor, times,
                      solver: odeint.SolverConfig | None = None) -> odeint.TrajectorySolution:
        """Integrate the dynamic code from its value at the first time."""
        solver = solver or odeint.SolverConfig(method="rk4", max_steps=20)
        return odeint.integrate(self.dynamics, z_dyn_t0, times, solver)

    def decode_frame(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z)

    def encode_clip(self, frames: torch.Tensor, times, sample: bool = False,
                    generator=None, query_times=None,
                    solver: odeint.SolverConfig | None = None) -> LatentCode:
        """Full encoding pass for a batch of observation sets.

        ``times`` is (B, K) or (K,); rows must be strictly increasing and
        share the first timestamp (the integration origin). ``query_times``
        optionally replaces the observation grid for the returned dynamic
        trajectory (e.g. a dense grid for frame interpolation).
        """
        if frames.ndim == 4:
            frames = frames.unsqueeze(0)
        times = torch.as_tensor(times, dtype=frames.dtype, device=frames.device)
        if times.ndim == 1:
            times = times.unsqueeze(0).expand(frames.shape[0], -1)
        hidden = self.encode_frames(frames)

        static = self.pool_static(hidden)
        per_frame = self.static_posterior_per_frame(hidden)
        dynamic = self.encode_dynamics(hidden, times)

        z_st = static.sample(generator) if sample else static.mean
        z_dyn0 = dynamic.sample(generator) if sample else dynamic.mean

        t0 = times[:, 0]
        if not bool((t0 == t0[0]).all()):
            raise ValueError("all clips in a batch must share the first timestamp")

        if query_times is not None:
            grid = torch.as_tensor(query_times, dtype=frames.dtype, device=frames.device)
            if abs(float(grid[0]) - float(t0[0])) > 1e-12:
                raise ValueError("query_times must start at the clips' first timestamp")
            sol = self.roll_dynamics(z_dyn0, grid, solver)
            z_dyn = sol.states.transpose(0, 1)           # (B, Q, dim_dyn)
            out_times = grid.unsqueeze(0).expand(frames.shape[0], -1)
        else:
            grid = torch.unique(times.reshape(-1))        # sorted unique union
            sol = self.roll_dynamics(z_dyn0, grid, solver)
            traj = sol.states.transpose(0, 1)             # (B, U, dim_dyn)
            idx = torch.searchsorted(grid, times.contiguous())
            z_dyn = torch.gather(traj, 1, idx.unsqueeze(-1).expand(-1, -1, self.dim_dyn))
            out_times = times

        return LatentCode(
            z_tr=z_st[..., : self.dim_tr],
            z_ti=z_st[..., self.dim_tr:],
            z_dyn=z_dyn,
            times=out_times,
            static=static,
            static_per_frame=per_frame,
            dynamic=dynamic,
        )

    def project_text(self, w_desc: torch.Tensor) -> torch.Tensor:
        """Project a text embedding onto the text-relevant code (z_desc)."""
        return self.text_projection(w_desc)

    def forward(self, frames: torch.Tensor, times) -> torch.Tensor:
        """Posterior mean vector [z^ST, z_dyn_t0] per clip; the encoder map."""
        hidden = self.encode_frames(frames)
        static = self.pool_static(hidden)
        dynamic = self.encode_dynamics(hidden, times)
        return torch.cat([static.mean, dynamic.mean], dim=-1)
