"""Training loop: alternating discriminator/generator updates with logging.

Each step samples an observation set per clip, runs the variational
reconstruction pass, translates the observed frames under the clip's own
description, updates the discriminator on matched/unmatched/relevant pairs,
then updates the representation and translation networks on the combined
objective. Gradients flowing from the translation loss into the frame
encoder are gated by a linear warmup so the early adversarial signal cannot
disturb the representation before it forms.
"""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np
import torch

from . import adversary, objectives, scenes
from .adversary import MultiScaleDiscriminator, build_pairs, concat_score_maps, gan_loss
from .checkpoint import save_checkpoint
from .config import Config
from .odeint import SolverConfig
from .repnet import RepresentationNetwork
from .textenc import build_text_encoder, encode_batch
from .tranet import TranslationNetwork


class _GradScale(torch.autograd.Function):
    """Identity forward, gradient scaled by a constant on the way back."""

    @staticmethod
    def forward(ctx, x, scale):
        ctx.scale = float(scale)
        return x.clone()

    @staticmethod
    def backward(ctx, grad):
        return grad * ctx.scale, None


def grad_scale(x: torch.Tensor, scale: float) -> torch.Tensor:
    return _GradScale.apply(x, scale)


def warmup_scale(step: int, warmup_iters: int) -> float:
    """Linear ramp 0 -> 1 over ``warmup_iters`` steps (1 when disabled)."""
    if warmup_iters <= 0:
        return 1.0
    return min(step / warmup_iters, 1.0)


def build_networks(cfg: Config) -> dict:
    return {
        "repnet": RepresentationNetwork.from_config(cfg),
        "tranet": TranslationNetwork.from_config(cfg),
        "discriminator": MultiScaleDiscriminator(
            scales=cfg.gan.scales, channels=tuple(cfg.gan.disc_channels),
            stats=cfg.mfmod.stats, eps=cfg.mfmod.eps,
        ),
    }


def build_optimizers(cfg: Config, nets: dict) -> dict:
    tranet = nets["tranet"]
    mapping_ids = {id(p) for p in tranet.mapping.parameters()}
    main_params = [p for p in tranet.parameters() if id(p) not in mapping_ids]
    return {
        "repnet": torch.optim.Adam(
            nets["repnet"].parameters(), lr=cfg.train.lr_repnet,
            betas=tuple(cfg.train.adam_betas_repnet),
        ),
        "tranet": torch.optim.Adam(
            [
                {"params": main_params},
                {"params": list(tranet.mapping.parameters()),
                 "lr": cfg.train.lr_gan * cfg.train.mapping_lr_scale},
            ],
            lr=cfg.train.lr_gan, betas=tuple(cfg.train.adam_betas_gan),
        ),
        "discriminator": torch.optim.Adam(
            nets["discriminator"].parameters(), lr=cfg.train.lr_gan,
            betas=tuple(cfg.train.adam_betas_gan),
        ),
    }


def optimizer_rates(cfg: Config) -> dict:
    return {
        "lr_repnet": cfg.train.lr_repnet,
        "lr_tranet": cfg.train.lr_gan,
        "lr_disc": cfg.train.lr_gan,
        "lr_mapping": cfg.train.lr_gan * cfg.train.mapping_lr_scale,
    }


class ClipStore:
    """Manifest-backed frame access with an in-memory uint8 cache."""

    def __init__(self, root, split: str = "train"):
        self.root = Path(root)
        self.records = [r for r in scenes.load_manifest(root) if r["split"] == split]
        if not self.records:
            raise ValueError(f"no {split!r} clips found under {root}")
        self._cache: dict = {}

    def __len__(self):
        return len(self.records)

    def clip(self, index: int) -> scenes.VideoClip:
        rec = self.records[index]
        if rec["clip_id"] not in self._cache:
            self._cache[rec["clip_id"]] = scenes.load_clip(self.root, rec)
        return self._cache[rec["clip_id"]]


def assemble_batch(store: ClipStore, indices, k_random: int, rng: np.random.Generator) -> dict:
    """Observation frames/times plus one description per clip."""
    frames, times, descriptions = [], [], []
    for idx in indices:
        clip = store.clip(int(idx))
        obs = scenes.sample_observations(clip, k_random, rng)
        frames.append(torch.as_tensor(obs.frames))
        times.append(torch.as_tensor(obs.times, dtype=torch.float32))
        descriptions.append(clip.descriptions[int(rng.integers(len(clip.descriptions)))])
    return {
        "frames": torch.stack(frames),
        "times": torch.stack(times),
        "descriptions": descriptions,
    }


def _require_finite(components: dict):
    values = {k: float(v.detach() if torch.is_tensor(v) else v)
              for k, v in components.items()}
    bad = sorted(k for k, v in values.items() if not math.isfinite(v))
    if bad:
        dump = ", ".join(f"{k}={v:.6g}" for k, v in values.items())
        raise RuntimeError(f"non-finite loss {bad}; components: {dump}")


def train_step(nets: dict, opts: dict, batch: dict, cfg: Config,
               weights: objectives.LossWeights, text_encoder, extractor,
               torch_gen: torch.Generator, np_rng: np.random.Generator,
               step: int, warmup_iters: int, solver: SolverConfig) -> dict:
    """One discriminator update then one generator/representation update."""
    rep, tra, disc = nets["repnet"], nets["tranet"], nets["discriminator"]
    frames, times = batch["frames"], batch["times"]
    b, k = frames.shape[:2]
    if b < 2:
        raise ValueError("train_step needs batch size >= 2 for unmatched pairs")

    w_desc = encode_batch(text_encoder, batch["descriptions"], dtype=frames.dtype)

    # representation pass (sampled posteriors)
    latents = rep.encode_clip(frames, times, sample=True, generator=torch_gen,
                              solver=solver)
    z_desc = rep.project_text(w_desc)
    l_rec, l_rec_prime = objectives.twin_reconstruction(
        frames, latents, z_desc, rep.decode_frame, kind=cfg.loss.recon)
    kl_st = objectives.kl_static(latents, cfg.loss.kl_static)
    kl_dyn = objectives.kl_dynamic(latents)

    # translation pass on the observed frames
    z_cont = torch.cat(
        [latents.z_ti.unsqueeze(1).expand(-1, k, -1), latents.z_dyn], dim=-1)
    gate = warmup_scale(step, warmup_iters)
    w_cont = tra.mapping(grad_scale(z_cont.reshape(b * k, -1), gate))
    w_desc_frames = w_desc.repeat_interleave(k, dim=0)
    x_flat = frames.reshape(b * k, *frames.shape[2:])
    y_flat = tra.generate(x_flat, w_desc_frames, w_cont)

    # discriminator phase: matched real, unmatched + relevant fake
    pairs = build_pairs(x_flat, y_flat.detach(), w_desc_frames.detach(),
                        w_cont.detach(), np_rng)
    real_scores = disc.discriminate(*pairs.matched)
    fake_scores = disc.discriminate(*pairs.relevant)
    if pairs.unmatched is not None:
        fake_scores = concat_score_maps(disc.discriminate(*pairs.unmatched), fake_scores)
    l_cgan_d = gan_loss(real_scores, fake_scores, "discriminator", cfg.gan.loss)
    _require_finite({"L_cgan_d": l_cgan_d})
    opts["discriminator"].zero_grad(set_to_none=True)
    l_cgan_d.backward()
    opts["discriminator"].step()

    # generator phase against the updated discriminator
    gen_scores = disc.discriminate(y_flat, w_desc_frames, w_cont)
    l_cgan_g = gan_loss(None, gen_scores, "generator", cfg.gan.loss)
    l_l1 = objectives.perceptual_l1(x_flat, y_flat, extractor)
    l_unsup = objectives.latent_consistency(
        frames, y_flat.reshape(b, k, *y_flat.shape[1:]), times, rep,
        stop_encoder_grad=cfg.loss.unsup_encoder_grad == "stop")

    components = {
        "l_rec": l_rec, "l_rec_prime": l_rec_prime, "kl_st": kl_st,
        "kl_dyn": kl_dyn, "l_cgan_g": l_cgan_g, "l_l1": l_l1, "l_unsup": l_unsup,
    }
    l_repnet, l_tranet, total = objectives.total_loss(components, weights)
    _require_finite({**components, "L_total": total})

    opts["repnet"].zero_grad(set_to_none=True)
    opts["tranet"].zero_grad(set_to_none=True)
    total.backward()
    opts["repnet"].step()
    opts["tranet"].step()

    as_float = lambda t: float(t.detach() if torch.is_tensor(t) else t)
    return {
        "step": step,
        "L_rec": as_float(l_rec), "L_rec_prime": as_float(l_rec_prime),
        "kl_st": as_float(kl_st), "kl_dyn": as_float(kl_dyn),
        "L_cgan_d": as_float(l_cgan_d), "L_cgan_g": as_float(l_cgan_g),
        "L_l1": as_float(l_l1), "L_unsup": as_float(l_unsup),
        "L_repnet": as_float(l_repnet), "L_tranet": as_float(l_tranet),
        "L_total": as_float(total), "warmup": gate,
    }


def train(cfg: Config, data_root, out_dir, max_steps: int | None = None) -> dict:
    """Full training run; returns summary with checkpoint and log paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.validate()

    torch.manual_seed(cfg.seed)
    torch_gen = torch.Generator().manual_seed(cfg.seed)
    np_rng = np.random.default_rng(cfg.seed)

    store = ClipStore(data_root, "train")
    nets = build_networks(cfg)
    opts = build_optimizers(cfg, nets)
    text_encoder = build_text_encoder(cfg.text)
    extractor = objectives.build_perceptual_extractor(cfg.loss.perceptual)
    weights = objectives.LossWeights(
        beta=cfg.loss.beta, lambda_l1=cfg.loss.lambda_l1,
        lambda_u=cfg.loss.lambda_u, lambda_t=cfg.loss.lambda_t)
    solver = SolverConfig(method=cfg.ode.method, rtol=cfg.ode.rtol,
                          atol=cfg.ode.atol, max_steps=cfg.ode.max_steps,
                          initial_step=cfg.ode.initial_step)

    steps_per_epoch = max(len(store) // cfg.train.batch_size, 1)
    warmup_iters = cfg.train.warmup_iters
    if warmup_iters is None:
        warmup_iters = max(steps_per_epoch // 10, 1)

    rates = optimizer_rates(cfg)
    log_path = out / "train_log.jsonl"
    step = 0
    started = time.time()
    first_record = last_record = None

    with open(log_path, "w") as log:
        for epoch in range(cfg.train.epochs):
            order = np.random.default_rng([cfg.seed, 1000 + epoch]).permutation(len(store))
            for i in range(steps_per_epoch):
                if max_steps is not None and step >= max_steps:
                    break
                indices = order[i * cfg.train.batch_size:(i + 1) * cfg.train.batch_size]
                if len(indices) < 2:
                    continue
                batch = assemble_batch(store, indices, cfg.train.k_random, np_rng)
                record = train_step(nets, opts, batch, cfg, weights, text_encoder,
                                    extractor, torch_gen, np_rng, step,
                                    warmup_iters, solver)
                record.update(rates)
                record["epoch"] = epoch
                if step % max(cfg.train.log_every, 1) == 0:
                    log.write(json.dumps(record) + "\n")
                    log.flush()
                first_record = first_record or record
                last_record = record
                step += 1
                if cfg.train.checkpoint_every and step % cfg.train.checkpoint_every == 0:
                    save_checkpoint(out / f"ckpt_{step}.pt", nets, opts, step, cfg,
                                    torch_gen, np_rng)
            if max_steps is not None and step >= max_steps:
                break

    final = save_checkpoint(out / f"ckpt_{step}.pt", nets, opts, step, cfg,
                            torch_gen, np_rng)
    return {
        "steps": step,
        "seconds": time.time() - started,
        "checkpoint": str(final),
        "log": str(log_path),
        "first_record": first_record,
        "last_record": last_record,
        "nets": nets,
    }
