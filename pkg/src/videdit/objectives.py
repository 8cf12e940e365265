"""Loss terms and their weighted composition.

The representation loss is the negative ELBO: reconstruction negative
log-likelihood (two variants: one from the encoded codes, one with the
text-projected code substituted for the text-relevant part) plus the
beta-weighted KL of the static and dynamic posteriors against N(0, I).
The translation loss adds the adversarial term, a perceptual L1 and a
latent-consistency term between input and manipulated clips.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn as nn

from .repnet import GaussianLatent

_PIXEL_EPS = 1e-6


@dataclass
class LossWeights:
    beta: float = 32.0
    lambda_l1: float = 1.0
    lambda_u: float = 0.5
    lambda_t: float = 1.0

    def __post_init__(self):
        for name in ("beta", "lambda_l1", "lambda_u", "lambda_t"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def kl_gaussian(posterior: GaussianLatent) -> torch.Tensor:
    """KL(q || N(0, I)) summed over dims, averaged over leading axes."""
    mu, lv = posterior.mean, posterior.log_variance
    per = 0.5 * (mu * mu + torch.exp(lv) - lv - 1.0).sum(dim=-1)
    return per.mean()


def kl_static(latents, mode: str = "per_frame") -> torch.Tensor:
    """Static-code KL: averaged over sampled frames, or on the pooled posterior."""
    if mode == "per_frame":
        return kl_gaussian(latents.static_per_frame)
    if mode == "pooled":
        return kl_gaussian(latents.static)
    raise ValueError(f"unknown kl_static mode {mode!r}")


def kl_dynamic(latents) -> torch.Tensor:
    """Dynamic-code KL, evaluated at the first timestamp only."""
    return kl_gaussian(latents.dynamic)


def reconstruction_nll(x: torch.Tensor, decoded: torch.Tensor,
                       kind: str = "bernoulli") -> torch.Tensor:
    """Per-frame reconstruction NLL summed over pixels, averaged over frames.

    Bernoulli clamps predictions into [1e-6, 1 - 1e-6]; the gaussian variant
    is the unit-variance squared-error form.
    """
    if x.shape != decoded.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(decoded.shape)}")
    lead = x.shape[:-3]
    n_frames = int(torch.tensor(lead).prod()) if lead else 1
    if kind == "bernoulli":
        p = decoded.clamp(_PIXEL_EPS, 1.0 - _PIXEL_EPS)
        nll = -(x * torch.log(p) + (1.0 - x) * torch.log1p(-p))
    elif kind == "gaussian":
        nll = 0.5 * (x - decoded) ** 2
    else:
        raise ValueError(f"unknown reconstruction kind {kind!r}")
    return nll.sum() / max(n_frames, 1)


def twin_reconstruction(x: torch.Tensor, latents, z_desc: torch.Tensor, decoder,
                        kind: str = "bernoulli"):
    """(L_rec, L_rec') from the encoded codes and the text-substituted codes."""
    rec = decoder(latents.frame_codes())
    rec_prime = decoder(latents.frame_codes_with(z_desc))
    return (reconstruction_nll(x, rec, kind), reconstruction_nll(x, rec_prime, kind))


# -- perceptual distance -------------------------------------------------------


class IdentityExtractor(nn.Module):
    """Raw pixels as the single feature map."""

    frozen = True

    def features(self, x):
        return [x]

    forward = features


class RandomConvPyramid(nn.Module):
    """Frozen, seeded three-stage conv pyramid used as the default extractor."""

    frozen = True

    def __init__(self, seed: int = 9001, in_channels: int = 3):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        chans = [in_channels, 8, 16, 32]
        self.stages = nn.ModuleList()
        for cin, cout in zip(chans[:-1], chans[1:]):
            conv = nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.3)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
            self.stages.append(conv)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x):
        outs = []
        for conv in self.stages:
            x = torch.relu(conv(x))
            outs.append(x)
        return outs

    forward = features


class VggAdapter(nn.Module):  # pragma: no cover - needs pretrained weights
    """Optional adapter over a pretrained VGG-19 feature tower."""

    frozen = True
    _LAYERS = (3, 8, 17, 26)

    def __init__(self):
        super().__init__()
        from .textenc import AdapterUnavailableError
        try:
            from torchvision import models
            vgg = models.vgg19(weights=models.VGG19_Weights.IMAGENET1K_V1).features
        except Exception as exc:
            raise AdapterUnavailableError(f"cannot load pretrained VGG-19: {exc}") from exc
        self.vgg = vgg.eval()
        for p in self.vgg.parameters():
            p.requires_grad_(False)

    def features(self, x):
        outs = []
        for i, layer in enumerate(self.vgg):
            x = layer(x)
            if i in self._LAYERS:
                outs.append(x)
        return outs

    forward = features


def build_perceptual_extractor(name: str, seed: int = 9001):
    """Extractor per config; the VGG adapter degrades to the random pyramid."""
    if name == "identity":
        return IdentityExtractor()
    if name == "random_conv":
        return RandomConvPyramid(seed)
    if name == "vgg_adapter":
        from .textenc import AdapterUnavailableError
        try:
            return VggAdapter()
        except AdapterUnavailableError as exc:  # pragma: no cover
            warnings.warn(f"{exc}; falling back to the random conv extractor")
            return RandomConvPyramid(seed)
    raise ValueError(f"unknown perceptual extractor {name!r}")


def perceptual_l1(x: torch.Tensor, y: torch.Tensor, extractor) -> torch.Tensor:
    """Sum over feature levels of the mean absolute feature difference."""
    if x.shape != y.shape:
        raise ValueError("perceptual inputs must share a shape")
    total = x.new_zeros(())
    for fx, fy in zip(extractor.features(x), extractor.features(y)):
        total = total + (fx - fy).abs().mean()
    return total


# -- latent consistency ----------------------------------------------------------


def encoder_posterior_means(rep_net, frames: torch.Tensor, times: torch.Tensor,
                            detach_params: bool = False) -> torch.Tensor:
    """Posterior mean vector [z^ST, z_dyn_t0] for each clip in the batch.

    With ``detach_params`` the encoder weights are replaced by detached
    views, so gradients reach the frames but not the network parameters.
    """
    if not detach_params:
        return rep_net(frames, times)
    detached = {k: v.detach() for k, v in rep_net.named_parameters()}
    detached.update({k: v for k, v in rep_net.named_buffers()})
    return torch.func.functional_call(rep_net, detached, (frames, times))


def latent_consistency(frames_x: torch.Tensor, frames_y: torch.Tensor, times,
                       rep_net, stop_encoder_grad: bool = True) -> torch.Tensor:
    """Mean L2 distance between posterior means of a clip and its edit."""
    times = torch.as_tensor(times, dtype=frames_x.dtype, device=frames_x.device)
    mu_x = encoder_posterior_means(rep_net, frames_x, times,
                                   detach_params=stop_encoder_grad)
    if stop_encoder_grad:
        mu_x = mu_x.detach()
    mu_y = encoder_posterior_means(rep_net, frames_y, times,
                                   detach_params=stop_encoder_grad)
    return torch.linalg.vector_norm(mu_x - mu_y, dim=-1).mean()


def total_loss(components: dict, weights: LossWeights):
    """Compose (L_RepNet, L_TraNet, L) from individual terms.

    L_RepNet = (L_rec + L_rec')/2 + beta*(KL_static + KL_dynamic), the
    negative ELBO being the minimized quantity; L_TraNet adds the generator
    adversarial term with the perceptual and consistency extras.
    """
    c = components
    l_repnet = 0.5 * (c["l_rec"] + c["l_rec_prime"]) + weights.beta * (c["kl_st"] + c["kl_dyn"])
    l_tranet = c["l_cgan_g"] + weights.lambda_l1 * c["l_l1"] + weights.lambda_u * c["l_unsup"]
    return l_repnet, l_tranet, l_repnet + weights.lambda_t * l_tranet
