"""Multi-scale conditional patch discriminator and the pairing policy.

Each scale applies the same conv architecture to a progressively
average-pooled copy of the input (factors 1, 0.5, 0.25, ...), ends in a
text/content-conditioned modulation block and a 1-channel conv, and emits a
map of per-patch scores. Real/fake supervision follows three pair kinds:

    matched    real frame with its own description      -> real
    unmatched  real frame with a deranged description   -> fake
    relevant   generated frame with its target text     -> fake (D side)

The generator is scored on relevant pairs against the real target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .tranet import ModulatedResidualBlock, SafeInstanceNorm2d

logger = logging.getLogger(__name__)


class PatchDiscriminatorScale(nn.Module):
    """Conv stack, one conditioned modulation block, then patch scores.

    No normalization on the input conv; leaky-ReLU slope 0.2 throughout; the
    classifier conv is 4x4 stride 1 with asymmetric padding so the score map
    keeps the spatial size reached by the stride-2 stack.
    """

    def __init__(self, channels=(64, 128, 256, 512), stats: str = "batch",
                 eps: float = 1e-5):
        super().__init__()
        layers = []
        prev = 3
        for i, ch in enumerate(channels):
            layers.append(nn.Conv2d(prev, ch, kernel_size=4, stride=2, padding=1))
            if i > 0:
                layers.append(SafeInstanceNorm2d(ch))
            layers.append(nn.LeakyReLU(0.2))
            prev = ch
        self.conv = nn.Sequential(*layers)
        self.n_down = len(channels)
        self.modulated = ModulatedResidualBlock(prev, stats=stats, eps=eps,
                                                activation="lrelu")
        self.classifier = nn.Conv2d(prev, 1, kernel_size=4, stride=1, padding=0)

    def forward(self, image, w_desc, w_cont):
        h = image.shape[-2]
        if h < 2 ** self.n_down or h % (2 ** self.n_down) != 0:
            raise ValueError(
                f"image size {h} incompatible with {self.n_down} stride-2 convs"
            )
        feat = self.modulated(self.conv(image), w_desc, w_cont)
        return self.classifier(F.pad(feat, (1, 2, 1, 2)))


class MultiScaleDiscriminator(nn.Module):
    """Independent per-scale discriminators over pooled image pyramids."""

    def __init__(self, scales: int = 3, channels=(64, 128, 256, 512),
                 stats: str = "batch", eps: float = 1e-5):
        super().__init__()
        if scales < 1:
            raise ValueError("need at least one scale")
        self.scales = nn.ModuleList(
            PatchDiscriminatorScale(channels, stats=stats, eps=eps) for _ in range(scales)
        )
        self.down = nn.AvgPool2d(kernel_size=2, stride=2)

    def discriminate(self, image, w_desc, w_cont):
        """Per-scale 1-channel patch score maps, finest first."""
        outs = []
        x = image
        for i, scale in enumerate(self.scales):
            outs.append(scale(x, w_desc, w_cont))
            if i + 1 < len(self.scales):
                x = self.down(x)
        return outs

    forward = discriminate


@dataclass
class PairBatch:
    """Conditioning triples grouped by kind (images, text emb, content code)."""

    matched: tuple
    unmatched: tuple | None
    relevant: tuple


def random_derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation without fixed points (rejection sampled)."""
    if n < 2:
        raise ValueError("derangements need n >= 2")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def build_pairs(real_frames, generated_frames, w_desc, w_cont,
                rng: np.random.Generator) -> PairBatch:
    """Assemble matched/unmatched/relevant pairs for one discriminator step.

    The unmatched kind reuses the real frames with descriptions shuffled by
    a derangement, so no frame keeps its own text; a batch of one cannot
    form it and the kind is skipped with a log message. Content codes always
    stay with their own image.
    """
    n = real_frames.shape[0]
    if not (generated_frames.shape[0] == w_desc.shape[0] == w_cont.shape[0] == n):
        raise ValueError("pair components must share the batch dimension")

    if n >= 2:
        foreign = torch.as_tensor(random_derangement(n, rng), device=w_desc.device)
        unmatched = (real_frames, w_desc[foreign], w_cont)
    else:
        logger.info("batch of one: skipping unmatched pairs")
        unmatched = None

    return PairBatch(
        matched=(real_frames, w_desc, w_cont),
        unmatched=unmatched,
        relevant=(generated_frames, w_desc, w_cont),
    )


def _scale_mean(score_maps, transform):
    per_scale = [transform(s).mean() for s in score_maps]
    return torch.stack(per_scale).mean()


def gan_loss(scores_real, scores_fake, side: str, kind: str = "lsgan"):
    """Adversarial objective over per-scale patch maps.

    Least squares: D wants real scores at 1 and fake at 0, G wants fake at
    1. Each scale contributes its patch mean with equal weight.
    """
    if side not in ("discriminator", "generator"):
        raise ValueError(f"side must be discriminator or generator, got {side!r}")
    if kind not in ("lsgan", "hinge"):
        raise ValueError(f"unknown gan loss {kind!r}")

    if side == "generator":
        if kind == "lsgan":
            return _scale_mean(scores_fake, lambda s: (s - 1.0) ** 2)
        return _scale_mean(scores_fake, lambda s: -s)

    if kind == "lsgan":
        real_term = _scale_mean(scores_real, lambda s: (s - 1.0) ** 2)
        fake_term = _scale_mean(scores_fake, lambda s: s ** 2)
    else:
        real_term = _scale_mean(scores_real, lambda s: F.relu(1.0 - s))
        fake_term = _scale_mean(scores_fake, lambda s: F.relu(1.0 + s))
    return real_term + fake_term


def concat_score_maps(a, b):
    """Concatenate two per-scale score lists along the batch axis."""
    return [torch.cat([x, y], dim=0) for x, y in zip(a, b)]
