"""Checkpointing: parameters per network section, optimizer and RNG state.

A checkpoint restores training exactly: reloading and rerunning a step from
it reproduces the original forward pass bit for bit on the same hardware
and precision.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

SECTIONS = ("repnet", "tranet", "discriminator")
FORMAT_VERSION = 1


def save_checkpoint(path, nets: dict, optimizers: dict, step: int, config,
                    torch_generator: torch.Generator | None = None,
                    numpy_rng: np.random.Generator | None = None) -> Path:
    """Write all state needed to resume training at ``step``."""
    missing = [s for s in SECTIONS if s not in nets]
    if missing:
        raise ValueError(f"nets must contain sections {SECTIONS}, missing {missing}")
    payload = {
        "format": FORMAT_VERSION,
        "step": int(step),
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "params": {name: nets[name].state_dict() for name in SECTIONS},
        "optim": {name: opt.state_dict() for name, opt in optimizers.items()},
        "torch_rng": torch_generator.get_state() if torch_generator is not None else None,
        "numpy_rng": numpy_rng.bit_generator.state if numpy_rng is not None else None,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path, nets: dict, optimizers: dict | None = None,
                    torch_generator: torch.Generator | None = None,
                    numpy_rng: np.random.Generator | None = None) -> dict:
    """Restore network/optimizer/RNG state in place; returns the raw payload."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    for name in SECTIONS:
        if name in nets:
            nets[name].load_state_dict(payload["params"][name])
    if optimizers:
        for name, opt in optimizers.items():
            if name in payload["optim"]:
                opt.load_state_dict(payload["optim"][name])
    if torch_generator is not None and payload["torch_rng"] is not None:
        torch_generator.set_state(payload["torch_rng"])
    if numpy_rng is not None and payload["numpy_rng"] is not None:
        numpy_rng.bit_generator.state = payload["numpy_rng"]
    return payload
