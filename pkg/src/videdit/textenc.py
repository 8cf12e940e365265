"""Text embeddings and the projection onto the text-relevant latent.

All encoders are frozen: encoding is a pure function of the input string and
every embedding is unit-normalized in R^512. The default template encoder
embeds the (color, size, shape) attribute slots of a scene description
through a fixed seeded orthogonal map, which keeps distinct attribute
combinations near-orthogonal; unknown text falls back to a hashed
bag-of-words so encoding never fails.
"""

from __future__ import annotations

import csv
import hashlib
import warnings

import numpy as np
import torch
import torch.nn as nn

from . import scenes

EMBED_DIM = 512
_SLOT_DIM = len(scenes.COLOR_WORDS) + len(scenes.SIZE_WORDS) + len(scenes.SHAPE_WORDS)


class AdapterUnavailableError(RuntimeError):
    """An optional external encoder could not be constructed."""


def _orthogonal_map(seed: int, rows: int, cols: int) -> np.ndarray:
    """Seeded matrix with orthonormal columns, sign-fixed for determinism."""
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(gauss)
    return q * np.sign(np.diag(r))


def _tokenize(text: str) -> list:
    return [t.strip(".,!?;:\"'").lower() for t in text.split() if t.strip(".,!?;:\"'")]


class TemplateTextEncoder:
    """Deterministic attribute-slot encoder for scene descriptions."""

    name = "template"
    deterministic = True

    def __init__(self, seed: int = 7001):
        self._map = _orthogonal_map(seed, EMBED_DIM, _SLOT_DIM)

    def slot_vector(self, color_idx: int, size_idx: int, shape_idx: int) -> np.ndarray:
        v = np.zeros(_SLOT_DIM)
        v[color_idx] = 1.0
        v[len(scenes.COLOR_WORDS) + size_idx] = 1.0
        v[len(scenes.COLOR_WORDS) + len(scenes.SIZE_WORDS) + shape_idx] = 1.0
        return v

    def embed_slots(self, color_idx: int, size_idx: int, shape_idx: int) -> np.ndarray:
        v = self._map @ self.slot_vector(color_idx, size_idx, shape_idx)
        return v / np.linalg.norm(v)

    def encode(self, text: str) -> np.ndarray:
        parsed = scenes.parse_description(text)
        if parsed is not None:
            size, color, shape = parsed
            return self.embed_slots(
                scenes.COLOR_WORDS.index(color),
                scenes.SIZE_WORDS.index(size),
                scenes.SHAPE_WORDS.index(shape),
            )
        return self._hashed_bag_of_words(text)

    def _hashed_bag_of_words(self, text: str) -> np.ndarray:
        v = np.zeros(EMBED_DIM)
        tokens = _tokenize(text)
        if not tokens:
            v[0] = 1.0
            return v
        for tok in tokens:
            digest = hashlib.sha256(tok.encode()).digest()
            idx = int.from_bytes(digest[:4], "little") % EMBED_DIM
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            v[idx] += sign
        norm = np.linalg.norm(v)
        if norm == 0.0:
            v[0] = 1.0
            return v
        return v / norm


class ClipAdapterTextEncoder:
    """Optional adapter around an external pretrained text tower.

    Loading requires a local model path; construction raises
    AdapterUnavailableError when the model cannot be loaded, and callers are
    expected to fall back to the template encoder.
    """

    name = "clip_adapter"
    deterministic = True

    def __init__(self, model_path: str):
        if not model_path:
            raise AdapterUnavailableError("clip_adapter needs a local model path")
        try:
            from transformers import CLIPTextModel, CLIPTokenizer  # noqa: PLC0415
            self._tokenizer = CLIPTokenizer.from_pretrained(model_path)
            self._model = CLIPTextModel.from_pretrained(model_path)
        except Exception as exc:  # pragma: no cover - depends on local weights
            raise AdapterUnavailableError(f"cannot load text model from {model_path!r}: {exc}") from exc
        self._model.eval()
        for p in self._model.parameters():
            p.requires_grad_(False)

    def encode(self, text: str) -> np.ndarray:  # pragma: no cover - optional path
        toks = self._tokenizer(text, return_tensors="pt", padding=True, truncation=True)
        with torch.no_grad():
            out = self._model(**toks).pooler_output[0].numpy().astype(np.float64)
        if out.shape[0] != EMBED_DIM:
            raise AdapterUnavailableError(f"adapter produced dim {out.shape[0]}, expected {EMBED_DIM}")
        return out / np.linalg.norm(out)


def build_text_encoder(text_cfg):
    """Encoder per config; clip_adapter degrades to template with a warning."""
    if text_cfg.text_encoder == "clip_adapter":
        try:
            return ClipAdapterTextEncoder(text_cfg.clip_model_path)
        except AdapterUnavailableError as exc:
            warnings.warn(f"{exc}; falling back to the template text encoder")
    return TemplateTextEncoder()


def encode_batch(encoder, texts, dtype=torch.float32) -> torch.Tensor:
    """Stack encoder outputs for a list of strings into a (B, 512) tensor."""
    rows = np.stack([encoder.encode(t) for t in texts])
    return torch.as_tensor(rows, dtype=dtype)


class TextProjection(nn.Module):
    """Linear chain mapping a 512-dim text embedding to the z_tr-sized code."""

    def __init__(self, out_dim: int, embed_dim: int = EMBED_DIM):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(embed_dim, 256), nn.LeakyReLU(0.2),
            nn.Linear(256, 128), nn.LeakyReLU(0.2),
            nn.Linear(128, 64), nn.LeakyReLU(0.2),
            nn.Linear(64, out_dim),
        )
        self.out_dim = out_dim

    def forward(self, w_desc: torch.Tensor) -> torch.Tensor:
        if w_desc.shape[-1] != self.net[0].in_features:
            raise ValueError(
                f"text embedding dim {w_desc.shape[-1]} != {self.net[0].in_features}"
            )
        return self.net(w_desc)


def dump_embeddings(encoder, texts, path):
    """Write one CSV row per description: text followed by its embedding."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["text"] + [f"e_{i}" for i in range(EMBED_DIM)])
        for t in texts:
            writer.writerow([t] + [f"{x:.10g}" for x in encoder.encode(t)])
