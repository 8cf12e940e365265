"""Procedural moving-shapes video dataset.

Scenes are defined by five static factors (floor color, wall color, object
color, scale, shape) plus a per-frame orientation index that sweeps left to
right at constant speed. Rendering is pure numpy on pixel centers, so equal
inputs give bit-identical frames on any platform.

Disk layout:
    <root>/clips/<clip_id>/frame_0000.png ... frame_0014.png   (8-bit RGB)
    <root>/manifest.jsonl    one JSON record per clip
    <root>/palette.json      hue <-> color-word mapping and role styling
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

N_HUES = 10
N_SCALES = 6
N_ORIENTATIONS = 15
SHAPE_WORDS = ("cube", "sphere", "cylinder", "capsule")
SIZE_WORDS = ("small", "medium", "big")
COLOR_WORDS = (
    "red", "orange", "yellow", "lime", "green",
    "cyan", "azure", "blue", "purple", "magenta",
)

# Fixed (saturation, value) per scene role; hues are shared across roles so
# the object stays separable from the background even on matching hues.
_ROLE_STYLE = {"wall": (0.35, 0.85), "floor": (0.55, 0.55), "object": (0.90, 0.95)}
_HORIZON = 0.55  # wall band above, floor band below


class FactorError(ValueError):
    """An out-of-range factor index."""


@dataclass(frozen=True)
class FactorSpec:
    """One scene configuration; ``orientation`` is the first-frame index."""

    floor_color: int
    wall_color: int
    object_color: int
    scale: int
    shape: int
    orientation: int = 0

    def __post_init__(self):
        _check_range("floor_color", self.floor_color, N_HUES)
        _check_range("wall_color", self.wall_color, N_HUES)
        _check_range("object_color", self.object_color, N_HUES)
        _check_range("scale", self.scale, N_SCALES)
        _check_range("shape", self.shape, len(SHAPE_WORDS))
        _check_range("orientation", self.orientation, N_ORIENTATIONS)

    @property
    def size_group(self) -> str:
        # scale indices pair up: {0,1} small, {2,3} medium, {4,5} big
        return SIZE_WORDS[self.scale // 2]

    def static_key(self) -> tuple:
        return (self.floor_color, self.wall_color, self.object_color, self.scale, self.shape)

    def to_dict(self) -> dict:
        return {
            "floor_color": self.floor_color,
            "wall_color": self.wall_color,
            "object_color": self.object_color,
            "scale": self.scale,
            "shape": self.shape,
            "orientation": self.orientation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorSpec":
        return cls(**{k: int(v) for k, v in d.items()})


def _check_range(name, value, n):
    if not isinstance(value, (int, np.integer)) or not 0 <= value < n:
        raise FactorError(f"{name} must be an integer in [0, {n}), got {value!r}")


@dataclass
class VideoClip:
    """Ordered frames with normalized timestamps, factors and descriptions."""

    frames: np.ndarray          # (N, 3, H, W) float32 in [0, 1]
    timestamps: np.ndarray      # (N,) float64, strictly increasing, in [0, 1]
    factors: FactorSpec
    descriptions: list
    clip_id: str

    def __post_init__(self):
        if len(self.frames) != len(self.timestamps):
            raise ValueError("frames and timestamps must have equal length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")


@dataclass
class ObservationSet:
    """A time-ordered subset of a clip's frames, always containing frame 0."""

    frames: np.ndarray          # (K, 3, H, W)
    times: np.ndarray           # (K,)
    indices: np.ndarray         # (K,) frame indices into the source clip
    source_clip_id: str


def palette_rgb(role: str) -> np.ndarray:
    """The 10-hue palette for a scene role as uint8 RGB rows."""
    sat, val = _ROLE_STYLE[role]
    rows = []
    for i in range(N_HUES):
        r, g, b = colorsys.hsv_to_rgb(i / N_HUES, sat, val)
        rows.append([round(r * 255), round(g * 255), round(b * 255)])
    return np.array(rows, dtype=np.uint8)


def render_frame(factors: FactorSpec, frame_index: int, resolution: int) -> np.ndarray:
    """Render one frame as float32 (3, R, R) in [0, 1].

    The wall band fills the top, the floor band the bottom, and a single
    filled shape sits on the horizon. Shape silhouette encodes the shape
    factor, silhouette area the scale factor, fill color the object color,
    and the horizontal position the orientation index.
    """
    if resolution not in (32, 64):
        raise FactorError(f"resolution must be 32 or 64, got {resolution}")
    if not isinstance(frame_index, (int, np.integer)) or frame_index < 0:
        raise FactorError(f"frame_index must be a non-negative integer, got {frame_index!r}")
    orientation = factors.orientation + int(frame_index)
    if orientation >= N_ORIENTATIONS:
        raise FactorError(
            f"orientation {factors.orientation} + frame {frame_index} exceeds {N_ORIENTATIONS - 1}"
        )

    r = resolution
    img = np.empty((r, r, 3), dtype=np.uint8)
    horizon = int(round(_HORIZON * r))
    img[:horizon] = palette_rgb("wall")[factors.wall_color]
    img[horizon:] = palette_rgb("floor")[factors.floor_color]

    mask = _shape_mask(factors.shape, factors.scale, orientation, r)
    img[mask] = palette_rgb("object")[factors.object_color]
    return img.transpose(2, 0, 1).astype(np.float32) / 255.0


def _shape_mask(shape: int, scale: int, orientation: int, r: int) -> np.ndarray:
    """Boolean (r, r) silhouette evaluated on pixel centers."""
    yy, xx = np.mgrid[0:r, 0:r].astype(np.float64) + 0.5
    cx = (0.26 + 0.48 * orientation / (N_ORIENTATIONS - 1)) * r
    cy = _HORIZON * r
    rad = (0.11 + 0.022 * scale) * r   # base radius, 0.11R .. 0.22R

    name = SHAPE_WORDS[shape]
    if name == "sphere":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= rad**2
    if name == "cube":
        half = rad * 0.9
        return (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)
    if name == "cylinder":
        hw, hh = rad * 0.55, rad * 1.1
        return (np.abs(xx - cx) <= hw) & (np.abs(yy - cy) <= hh)
    # capsule: rectangle body with semicircular caps
    hw, hh = rad * 0.55, rad * 1.2
    body = (np.abs(xx - cx) <= hw) & (np.abs(yy - cy) <= hh - hw)
    caps = (xx - cx) ** 2 + (np.abs(yy - cy) - (hh - hw)) ** 2 <= hw**2
    return body | (caps & (np.abs(yy - cy) > hh - hw))


def describe(factors: FactorSpec) -> list:
    """Templated sentences naming the object's size group, color and shape."""
    size = factors.size_group
    color = COLOR_WORDS[factors.object_color]
    shape = SHAPE_WORDS[factors.shape]
    return [
        f"There is a {size} {color} {shape}.",
        f"There is a {color} {size} {shape}.",
        f"A {size} {color} {shape} is in the scene.",
        f"The scene contains a {size} {color} {shape}.",
    ]


def parse_description(text: str):
    """Invert the description templates.

    Returns (size_word, color_word, shape_word) or None when any slot is
    missing or ambiguous.
    """
    tokens = [t.strip(".,!?;:").lower() for t in text.split()]
    found = {}
    for slot, vocab in (("size", SIZE_WORDS), ("color", COLOR_WORDS), ("shape", SHAPE_WORDS)):
        hits = [t for t in tokens if t in vocab]
        if len(set(hits)) != 1:
            return None
        found[slot] = hits[0]
    return found["size"], found["color"], found["shape"]


def clip_timestamps(n_frames: int) -> np.ndarray:
    return np.arange(n_frames, dtype=np.float64) / (n_frames - 1)


def make_clip(factors: FactorSpec, clip_id: str, resolution: int,
              n_frames: int = N_ORIENTATIONS) -> VideoClip:
    """Render a clip whose orientation advances by one index per frame."""
    base = replace(factors, orientation=0)
    frames = np.stack([render_frame(base, i, resolution) for i in range(n_frames)])
    return VideoClip(
        frames=frames,
        timestamps=clip_timestamps(n_frames),
        factors=base,
        descriptions=describe(base),
        clip_id=clip_id,
    )


def sample_observations(clip: VideoClip, k_random: int, rng: np.random.Generator) -> ObservationSet:
    """The first frame plus ``k_random`` distinct later frames, time-ordered."""
    n = len(clip.frames)
    if 1 + k_random > n:
        raise ValueError(f"cannot sample 1+{k_random} observations from {n} frames")
    extra = rng.choice(np.arange(1, n), size=k_random, replace=False) if k_random else np.array([], dtype=int)
    idx = np.concatenate([[0], np.sort(extra)]).astype(int)
    return ObservationSet(
        frames=clip.frames[idx],
        times=clip.timestamps[idx],
        indices=idx,
        source_clip_id=clip.clip_id,
    )


# ---------------------------------------------------------------------------
# dataset generation and loading


def _all_static_combos() -> int:
    return N_HUES * N_HUES * N_HUES * N_SCALES * len(SHAPE_WORDS)


def _combo_to_factors(index: int) -> FactorSpec:
    index, shape = divmod(index, len(SHAPE_WORDS))
    index, scale = divmod(index, N_SCALES)
    index, obj = divmod(index, N_HUES)
    floor, wall = divmod(index, N_HUES)
    return FactorSpec(floor_color=floor, wall_color=wall, object_color=obj,
                      scale=scale, shape=shape)


def generate_dataset(seed: int, n_train: int, n_test: int, resolution: int,
                     out_dir, n_frames: int = N_ORIENTATIONS,
                     overwrite: bool = False) -> Path:
    """Write a dataset to ``out_dir`` and return the manifest path.

    Train and test splits draw disjoint static factor combinations; the same
    seed reproduces the exact same files.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    total = n_train + n_test
    if total > _all_static_combos():
        raise ValueError(f"requested {total} clips but only {_all_static_combos()} factor combinations exist")

    root = Path(out_dir)
    manifest_path = root / "manifest.jsonl"
    if manifest_path.exists() and not overwrite:
        raise FileExistsError(f"{manifest_path} exists; pass overwrite=True to regenerate")
    (root / "clips").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    combos = rng.choice(_all_static_combos(), size=total, replace=False)

    records = []
    for i, combo in enumerate(combos):
        split = "train" if i < n_train else "test"
        clip_id = f"c{i:05d}"
        # per-clip stream reserved for any future per-clip randomness;
        # derivation from (seed, index) keeps generation parallelizable
        _ = np.random.default_rng([seed, i])
        clip = make_clip(_combo_to_factors(int(combo)), clip_id, resolution, n_frames)
        clip_dir = root / "clips" / clip_id
        clip_dir.mkdir(parents=True, exist_ok=True)
        for j, frame in enumerate(clip.frames):
            arr = np.round(frame.transpose(1, 2, 0) * 255.0).astype(np.uint8)
            Image.fromarray(arr, mode="RGB").save(clip_dir / f"frame_{j:04d}.png")
        records.append({
            "clip_id": clip_id,
            "split": split,
            "timestamps": [float(t) for t in clip.timestamps],
            "factors": clip.factors.to_dict(),
            "descriptions": clip.descriptions,
        })

    with open(manifest_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    palette = {
        "hues_deg": [i * 360.0 / N_HUES for i in range(N_HUES)],
        "color_words": list(COLOR_WORDS),
        "size_words": list(SIZE_WORDS),
        "shape_words": list(SHAPE_WORDS),
        "role_style": {k: {"saturation": s, "value": v} for k, (s, v) in _ROLE_STYLE.items()},
        "resolution": resolution,
        "seed": seed,
    }
    (root / "palette.json").write_text(json.dumps(palette, indent=2, sort_keys=True))
    return manifest_path


def load_manifest(root) -> list:
    """Read manifest records (dicts) in file order."""
    records = []
    with open(Path(root) / "manifest.jsonl") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_clip(root, record: dict) -> VideoClip:
    """Load one clip's frames from disk into a VideoClip."""
    clip_dir = Path(root) / "clips" / record["clip_id"]
    frames = []
    for j in range(len(record["timestamps"])):
        with Image.open(clip_dir / f"frame_{j:04d}.png") as im:
            frames.append(np.asarray(im.convert("RGB"), dtype=np.uint8))
    arr = np.stack(frames).transpose(0, 3, 1, 2).astype(np.float32) / 255.0
    return VideoClip(
        frames=arr,
        timestamps=np.asarray(record["timestamps"], dtype=np.float64),
        factors=FactorSpec.from_dict(record["factors"]),
        descriptions=list(record["descriptions"]),
        clip_id=record["clip_id"],
    )
