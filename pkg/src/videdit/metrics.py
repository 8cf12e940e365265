"""Evaluation suite: disentanglement, fidelity and manipulation metrics.

Mutual-information scores work on a table of per-frame latent codes paired
with ground-truth factor indices. Fidelity metrics (Fréchet distance over
frame or clip embeddings, inception-style score) run on pluggable frozen
embedders; the desk-scale defaults are seeded random conv pyramids, so the
reported values are comparable across runs of this codebase but are not on
the scale of any pretrained-tower numbers. Manipulation precision couples
the mean pixel change with the cosine similarity between the edited frame
and the target description in the shared attribute-embedding space.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from . import scenes
from .textenc import TemplateTextEncoder

# -- code/factor tables -----------------------------------------------------


@dataclass
class CodeFactorTable:
    codes: np.ndarray     # (n, latent_dim) posterior means
    factors: np.ndarray   # (n, n_factors) discrete indices

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.float64)
        self.factors = np.asarray(self.factors)
        if self.codes.shape[0] != self.factors.shape[0]:
            raise ValueError("codes and factors must be row-aligned")

    def dump(self, codes_path, factors_path):
        np.savetxt(codes_path, self.codes, delimiter=",",
                   header=",".join(f"z_{i}" for i in range(self.codes.shape[1])),
                   comments="")
        np.savetxt(factors_path, self.factors, delimiter=",", fmt="%d",
                   header=",".join(f"v_{i}" for i in range(self.factors.shape[1])),
                   comments="")

    @classmethod
    def load(cls, codes_path, factors_path):
        codes = np.loadtxt(codes_path, delimiter=",", skiprows=1, ndmin=2)
        factors = np.loadtxt(factors_path, delimiter=",", skiprows=1, ndmin=2)
        return cls(codes=codes, factors=factors.astype(int))


# -- mutual information ---------------------------------------------------------


def _equal_frequency_bins(z: np.ndarray, bins: int) -> np.ndarray:
    """Quantile binning that keeps distinct discrete values separated."""
    edges = np.unique(np.quantile(z, np.linspace(0.0, 1.0, bins + 1)[1:-1]))
    return np.digitize(z, edges, right=True)


def mutual_information(z: np.ndarray, v: np.ndarray, bins: int = 20) -> float:
    """Histogram MI (nats) between one latent column and one factor column.

    The latent column is discretized into equal-frequency bins; a constant
    column carries no information and returns 0 by convention.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    v = np.asarray(v).ravel()
    if z.shape != v.shape:
        raise ValueError("columns must have equal length")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if np.unique(v).size < 2:
        raise ValueError("factor column must take at least two values")
    if np.all(z == z[0]):
        return 0.0

    zb = _equal_frequency_bins(z, bins)
    _, zi = np.unique(zb, return_inverse=True)
    _, vi = np.unique(v, return_inverse=True)
    joint = np.zeros((zi.max() + 1, vi.max() + 1))
    np.add.at(joint, (zi, vi), 1.0)
    joint /= joint.sum()
    pz = joint.sum(axis=1, keepdims=True)
    pv = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    return float((joint[mask] * np.log(joint[mask] / (pz @ pv)[mask])).sum())


def factor_entropy(v: np.ndarray) -> float:
    _, counts = np.unique(np.asarray(v).ravel(), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def _mi_matrix(table: CodeFactorTable, bins: int) -> np.ndarray:
    d, k = table.codes.shape[1], table.factors.shape[1]
    mi = np.zeros((d, k))
    for j in range(d):
        for f in range(k):
            mi[j, f] = mutual_information(table.codes[:, j], table.factors[:, f], bins)
    return mi


def mig(table: CodeFactorTable, bins: int = 20) -> float:
    """Mutual information gap: normalized top-two MI difference per factor."""
    mi = _mi_matrix(table, bins)
    scores = []
    for f in range(mi.shape[1]):
        h = factor_entropy(table.factors[:, f])
        if h <= 0:
            raise ValueError(f"factor {f} is constant")
        col = np.sort(mi[:, f])[::-1]
        second = col[1] if col.size > 1 else 0.0
        scores.append((col[0] - second) / h)
    return float(np.mean(scores))


def aam(table: CodeFactorTable, bins: int = 20, mode: str = "sum_others") -> float:
    """Axis alignment: penalize factor information spread across latents.

    ``sum_others`` subtracts the sum of all non-maximal MIs from the top MI;
    ``second_only`` subtracts just the runner-up. Both clamp at zero and
    normalize by the top MI.
    """
    if mode not in ("sum_others", "second_only"):
        raise ValueError(f"unknown aam mode {mode!r}")
    mi = _mi_matrix(table, bins)
    scores = []
    for f in range(mi.shape[1]):
        col = mi[:, f]
        top = float(col.max())
        if top <= 0:
            scores.append(0.0)
            continue
        if mode == "sum_others":
            others = float(col.sum() - top)
        else:
            others = float(np.sort(col)[::-1][1]) if col.size > 1 else 0.0
        scores.append(max(top - others, 0.0) / top)
    return float(np.mean(scores))


# -- Frechet distance and inception-style score ----------------------------------


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    """Squared 2-Wasserstein distance between two Gaussians.

    Uses the symmetric form trace(A) + trace(B) - 2*trace((A^1/2 B A^1/2)^1/2)
    via eigendecompositions; eigenvalues below -1e-8 raise, small negatives
    clamp to zero.
    """
    mu_a, mu_b = np.asarray(mu_a, dtype=np.float64), np.asarray(mu_b, dtype=np.float64)
    cov_a = np.atleast_2d(np.asarray(cov_a, dtype=np.float64))
    cov_b = np.atleast_2d(np.asarray(cov_b, dtype=np.float64))

    wa, va = np.linalg.eigh((cov_a + cov_a.T) / 2)
    if float(wa.min()) < -1e-8:
        raise ValueError(f"covariance A has negative eigenvalue {wa.min():.3e}")
    root_a = (va * np.sqrt(np.clip(wa, 0.0, None))) @ va.T

    inner = root_a @ cov_b @ root_a
    wm = np.linalg.eigvalsh((inner + inner.T) / 2)
    if float(wm.min()) < -1e-8:
        raise ValueError(f"cross matrix has negative eigenvalue {wm.min():.3e}")
    trace_sqrt = float(np.sqrt(np.clip(wm, 0.0, None)).sum())

    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)


def frechet_distance(features_a, features_b) -> float:
    """Fréchet distance between Gaussian fits of two feature samples.

    Sample sets smaller than dim+1 rows (or ill-conditioned covariances)
    are regularized with 1e-6*I and a warning.
    """
    a = np.atleast_2d(np.asarray(features_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(features_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError("feature dimensions differ")

    def moments(x):
        mu = x.mean(axis=0)
        cov = np.cov(x, rowvar=False) if x.shape[0] > 1 else np.zeros((x.shape[1],) * 2)
        return mu, np.atleast_2d(cov)

    mu_a, cov_a = moments(a)
    mu_b, cov_b = moments(b)

    d = a.shape[1]
    needs_reg = a.shape[0] <= d or b.shape[0] <= d
    if not needs_reg:
        for cov in (cov_a, cov_b):
            w = np.linalg.eigvalsh(cov)
            if w.max() <= 0 or w.min() < 1e-12 * w.max():
                needs_reg = True
    if needs_reg:
        warnings.warn("few samples or ill-conditioned covariance; adding 1e-6*I")
        cov_a = cov_a + 1e-6 * np.eye(d)
        cov_b = cov_b + 1e-6 * np.eye(d)
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b)


def inception_score(probability_rows) -> float:
    """exp of the mean KL between per-sample class rows and their marginal."""
    p = np.atleast_2d(np.asarray(probability_rows, dtype=np.float64))
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError("need a matrix of probability rows")
    if np.any(p < -1e-12):
        raise ValueError("probabilities must be non-negative")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError("rows must sum to 1 within 1e-6")
    marginal = p.mean(axis=0)
    mask = p > 0
    logs = np.zeros_like(p)
    logs[mask] = np.log(p[mask]) - np.log(marginal[np.nonzero(mask)[1]])
    kl = (p * logs).sum(axis=1)
    return float(np.exp(kl.mean()))


# -- manipulation precision -------------------------------------------------------


def _to_numpy_frames(x) -> np.ndarray:
    arr = x.detach().cpu().numpy() if torch.is_tensor(x) else np.asarray(x)
    arr = arr.astype(np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError("expected (N, 3, H, W) or (3, H, W) images")
    return arr


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def mp_score(y, x, description: str, text_encoder, image_embedder) -> float:
    """Manipulative precision: (1 - mean |y - x|) x text similarity, per frame.

    The pixel term uses the mean absolute difference so it stays in [0, 1]
    for unit-range images; the clip score is the frame average.
    """
    ya, xa = _to_numpy_frames(y), _to_numpy_frames(x)
    if ya.shape != xa.shape:
        raise ValueError("clips must share a shape")
    if ya.min() < -1e-6 or ya.max() > 1 + 1e-6 or xa.min() < -1e-6 or xa.max() > 1 + 1e-6:
        raise ValueError("images must lie in [0, 1]")
    w = text_encoder.encode(description)
    scores = []
    for yi, xi in zip(ya, xa):
        change = float(np.abs(yi - xi).mean())
        sim = cosine_similarity(image_embedder.embed(yi), w)
        scores.append((1.0 - change) * sim)
    return float(np.mean(scores))


# -- frozen embedders --------------------------------------------------------------


class RandomConvImageEmbedder:
    """Seeded frozen conv pyramid with global average pooling per stage."""

    def __init__(self, seed: int = 5001, dim_note: str = "56 = 8+16+32"):
        gen = torch.Generator().manual_seed(seed)
        self._convs = []
        chans = [3, 8, 16, 32]
        for cin, cout in zip(chans[:-1], chans[1:]):
            conv = torch.nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.4)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
            conv.requires_grad_(False)
            self._convs.append(conv)

    def embed(self, images) -> np.ndarray:
        arr = _to_numpy_frames(images)
        x = torch.as_tensor(arr, dtype=torch.float32)
        feats = []
        with torch.no_grad():
            for conv in self._convs:
                x = torch.relu(conv(x))
                feats.append(x.mean(dim=(2, 3)))
        out = torch.cat(feats, dim=1).numpy().astype(np.float64)
        return out[0] if np.asarray(images).ndim == 3 and not torch.is_tensor(images) else out


class RandomVideoEmbedder:
    """Seeded frozen spatiotemporal conv stack for clip-level features."""

    def __init__(self, seed: int = 5002):
        gen = torch.Generator().manual_seed(seed)
        self._convs = []
        chans = [3, 8, 16]
        for cin, cout in zip(chans[:-1], chans[1:]):
            conv = torch.nn.Conv3d(cin, cout, kernel_size=3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.4)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
            conv.requires_grad_(False)
            self._convs.append(conv)

    def embed(self, clips) -> np.ndarray:
        """``clips``: (N, T, 3, H, W) arrays or tensors in [0, 1]."""
        arr = clips.detach().cpu().numpy() if torch.is_tensor(clips) else np.asarray(clips)
        if arr.ndim == 4:
            arr = arr[None]
        x = torch.as_tensor(arr, dtype=torch.float32).permute(0, 2, 1, 3, 4)
        feats = []
        with torch.no_grad():
            for conv in self._convs:
                x = torch.relu(conv(x))
                feats.append(x.mean(dim=(2, 3, 4)))
        return torch.cat(feats, dim=1).numpy().astype(np.float64)


class RandomClassifier:
    """Seeded frozen classifier head producing class-probability rows."""

    def __init__(self, n_classes: int = 10, seed: int = 5003):
        self._embedder = RandomConvImageEmbedder(seed=seed)
        rng = np.random.default_rng(seed + 1)
        self._w = rng.standard_normal((56, n_classes))
        self.n_classes = n_classes

    def classify(self, images) -> np.ndarray:
        feats = np.atleast_2d(self._embedder.embed(images))
        logits = feats @ self._w
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)


class AttributeImageEmbedder:
    """Reads (color, size, shape) off a rendered frame and embeds the slots.

    This is the desk-scale substitute for a pretrained joint image/text
    space: images land on the same unit sphere as template text encodings,
    so cosine similarity between an image and a description is meaningful.
    Frames that yield no detectable object fall back to a fixed off-slot
    direction.
    """

    def __init__(self, resolution: int, text_encoder: TemplateTextEncoder | None = None):
        self.text_encoder = text_encoder or TemplateTextEncoder()
        self.resolution = resolution
        self._object_palette = scenes.palette_rgb("object").astype(np.float64) / 255.0
        # reference silhouette heights per (shape, scale), averaged over the
        # orientation sweep; height is immune to horizontal rasterization
        self._ref_heights = np.zeros((len(scenes.SHAPE_WORDS), scenes.N_SCALES))
        for shape in range(len(scenes.SHAPE_WORDS)):
            for scale in range(scenes.N_SCALES):
                f = scenes.FactorSpec(0, 0, 0, scale, shape)
                heights = []
                for ori in range(scenes.N_ORIENTATIONS):
                    img = scenes.render_frame(f, ori, resolution)
                    mask = self._object_mask(img.transpose(1, 2, 0))
                    ys = np.nonzero(mask)[0]
                    heights.append(ys.max() - ys.min() + 1)
                self._ref_heights[shape, scale] = float(np.mean(heights))
        rng = np.random.default_rng(424242)
        fallback = rng.standard_normal(512)
        self._fallback = fallback / np.linalg.norm(fallback)

    @staticmethod
    def _object_mask(px: np.ndarray) -> np.ndarray:
        h = px.shape[0]
        wall = np.median(px[: max(1, int(0.1 * h))].reshape(-1, 3), axis=0)
        floor = np.median(px[-max(1, int(0.08 * h)):].reshape(-1, 3), axis=0)
        dist_w = np.abs(px - wall).sum(axis=-1)
        dist_f = np.abs(px - floor).sum(axis=-1)
        return (dist_w > 0.25) & (dist_f > 0.25)

    def read_attributes(self, frame) -> tuple | None:
        """(color_idx, size_idx, shape_idx) or None when nothing is detected."""
        arr = _to_numpy_frames(frame)[0]
        px = arr.transpose(1, 2, 0)
        mask = self._object_mask(px)
        if mask.sum() < 4:
            return None
        ys, xs = np.nonzero(mask)
        h = ys.max() - ys.min() + 1
        w = xs.max() - xs.min() + 1
        aspect = w / h
        fill = mask.sum() / (h * w)
        if aspect >= 0.75:
            shape = 0 if fill >= 0.9 else 1          # cube vs sphere
        else:
            shape = 2 if fill >= 0.97 else 3         # cylinder vs capsule
        scale = int(np.argmin(np.abs(self._ref_heights[shape] - h)))
        color_rgb = np.median(px[mask], axis=0)
        color = int(np.argmin(np.abs(self._object_palette - color_rgb).sum(axis=1)))
        return color, scale // 2, shape

    def embed(self, frame) -> np.ndarray:
        attrs = self.read_attributes(frame)
        if attrs is None:
            return self._fallback
        return self.text_encoder.embed_slots(*attrs)


# -- diagnostics --------------------------------------------------------------------


def linear_fit_r2(t: np.ndarray, y: np.ndarray) -> float:
    """R^2 of the least-squares line through (t, y)."""
    t, y = np.asarray(t, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if t.size < 3:
        raise ValueError("need at least 3 points")
    coef = np.polyfit(t, y, 1)
    resid = y - np.polyval(coef, t)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - float((resid ** 2).sum()) / ss_tot


def traversal_grid(rep_net, clip, dims, values, tra_net=None,
                   text_encoder=None, k_random: int = 3, rng=None,
                   solver=None, out_path=None) -> np.ndarray:
    """Decode latent traversals: one row per traversed dim, one column per value.

    Each cell overwrites a single latent dimension of the encoded clip
    (posterior means, first observed frame) and decodes it. When the
    translation stack is supplied, a second block of rows shows the
    translated frame under the same traversal of the content code.
    """
    rng = rng or np.random.default_rng(0)
    dims = [dims] if isinstance(dims, int) else list(dims)
    obs = scenes.sample_observations(clip, min(k_random, len(clip.frames) - 1), rng)
    frames = torch.as_tensor(obs.frames).unsqueeze(0)
    times = torch.as_tensor(obs.times, dtype=frames.dtype).unsqueeze(0)

    with torch.no_grad():
        code = rep_net.encode_clip(frames, times, sample=False, solver=solver)
        base = code.frame_codes()[0, 0]          # first observed frame's code
        rows = []
        for dim in dims:
            if not 0 <= dim < base.shape[0]:
                raise ValueError(f"latent dim {dim} out of range")
            cells = []
            for value in values:
                z = base.clone()
                z[dim] = float(value)
                cells.append(rep_net.decode_frame(z.unsqueeze(0))[0])
            rows.append(torch.cat(cells, dim=-1))
        if tra_net is not None and text_encoder is not None:
            from .textenc import encode_batch
            w_desc = encode_batch(text_encoder, [clip.descriptions[0]])
            frame0 = frames[:, 0]
            for dim in dims:
                cells = []
                for value in values:
                    z = base.clone()
                    z[dim] = float(value)
                    z_cont = z[rep_net.dim_tr:].unsqueeze(0)
                    y = tra_net.generate(frame0, w_desc, tra_net.mapping(z_cont))
                    cells.append(y[0])
                rows.append(torch.cat(cells, dim=-1))
    grid = torch.cat(rows, dim=-2).clamp(0, 1).numpy()

    if out_path is not None:
        from PIL import Image
        arr = np.round(grid.transpose(1, 2, 0) * 255).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(out_path)
    return grid


def dyn_trajectory_report(rep_net, clip, dense_times, out_csv=None, out_png=None,
                          k_random: int = 3, rng=None, solver=None) -> dict:
    """Dynamic-code trajectories on a dense grid, normalized per dim to [-1, 1].

    Returns {"times", "trajectory", "normalized", "orientation"}; optionally
    writes a CSV (t, per-dim normalized values, ground-truth orientation)
    and a line plot.
    """
    rng = rng or np.random.default_rng(0)
    obs = scenes.sample_observations(clip, min(k_random, len(clip.frames) - 1), rng)
    frames = torch.as_tensor(obs.frames).unsqueeze(0)
    times = torch.as_tensor(obs.times, dtype=frames.dtype).unsqueeze(0)
    dense = np.asarray(dense_times, dtype=np.float64)

    with torch.no_grad():
        code = rep_net.encode_clip(frames, times, sample=False,
                                   query_times=torch.as_tensor(dense, dtype=frames.dtype),
                                   solver=solver)
    traj = code.z_dyn[0].numpy().astype(np.float64)          # (T, dim_dyn)

    lo, hi = traj.min(axis=0), traj.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    normalized = 2.0 * (traj - lo) / span - 1.0

    # ground-truth orientation on the same grid, scaled to [-1, 1]
    n = len(clip.timestamps)
    orientation = np.interp(dense, clip.timestamps, np.arange(n))
    orientation = 2.0 * orientation / (n - 1) - 1.0

    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"z_{i}" for i in range(traj.shape[1])] + ["orientation"])
            for t, row, o in zip(dense, normalized, orientation):
                writer.writerow([f"{t:.10g}"] + [f"{v:.10g}" for v in row] + [f"{o:.10g}"])

    if out_png is not None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(6, 4))
        for i in range(normalized.shape[1]):
            ax.plot(dense, normalized[:, i], label=f"z_{i}")
        ax.plot(dense, orientation, "k--", label="orientation")
        ax.set_xlabel("t")
        ax.set_ylabel("normalized value")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_png, dpi=100)
        plt.close(fig)

    return {"times": dense, "trajectory": traj, "normalized": normalized,
            "orientation": orientation}


def collect_codes_and_factors(rep_net, root, records, k_random: int = 3,
                              rng=None, solver=None) -> CodeFactorTable:
    """Encode clips (posterior means) into a row-aligned code/factor table.

    One row per observed frame: latent code [z_tr, z_ti, z_dyn_t] against
    the five static factor indices plus the frame's orientation index.
    """
    rng = rng or np.random.default_rng(0)
    codes, factors = [], []
    for rec in records:
        clip = scenes.load_clip(root, rec)
        obs = scenes.sample_observations(clip, min(k_random, len(clip.frames) - 1), rng)
        frames = torch.as_tensor(obs.frames).unsqueeze(0)
        times = torch.as_tensor(obs.times, dtype=frames.dtype).unsqueeze(0)
        with torch.no_grad():
            code = rep_net.encode_clip(frames, times, sample=False, solver=solver)
            per_frame = code.frame_codes()[0].numpy()
        f = clip.factors
        for k, frame_idx in enumerate(obs.indices):
            codes.append(per_frame[k])
            factors.append([f.floor_color, f.wall_color, f.object_color,
                            f.scale, f.shape, int(frame_idx)])
    return CodeFactorTable(codes=np.array(codes), factors=np.array(factors, dtype=int))
