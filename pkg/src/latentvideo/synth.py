"""Synthetic moving-digit videos with ground-truth trajectories.

Digits are binary glyph masks tinted by a drifting hue, moving over a fixed
background. Motion is integer-free billiards: elastic reflection off the
frame edges and pairwise velocity exchange along the center-to-center axis
when two digit boxes overlap. Every frame is rendered from the truth records,
so re-rendering the records reproduces the video exactly.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from . import formats
from .errors import ConfigError, CorpusError, ShapeError

# 5x7 bitmap font, one row string per scanline, '#' = ink.
_FONT = {
    0: (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    1: ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    2: (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    3: ("#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."),
    4: ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    5: ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    6: ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    7: ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    8: (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    9: (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
}

# Palette for flat-color backgrounds; the palette index is the background class.
FLAT_PALETTE = [
    (0.15, 0.15, 0.35), (0.10, 0.35, 0.15), (0.35, 0.12, 0.12),
    (0.30, 0.30, 0.10), (0.12, 0.30, 0.30), (0.28, 0.15, 0.30),
    (0.20, 0.20, 0.20), (0.35, 0.25, 0.12),
]


@dataclass
class SynthesisSpec:
    """Geometry, motion, and appearance parameters for one dataset."""

    height: int = 32
    width: int = 32
    digit_size: int = 12
    n_objects_range: tuple[int, int] = (1, 2)
    video_length: int = 16
    velocity_range: tuple[float, float] = (1.0, 3.0)
    color_drift_rate: float = 0.02
    background_mode: str = "flat-color"  # or "corpus-image"
    rng_seed: int = 0

    def validate(self) -> None:
        if not 0 < self.digit_size < min(self.height, self.width):
            raise ConfigError(
                f"digit_size {self.digit_size} must lie in (0, {min(self.height, self.width)})")
        n_min, n_max = self.n_objects_range
        if n_min < 0 or n_max < n_min:
            raise ConfigError(f"bad n_objects_range {self.n_objects_range}")
        if self.video_length < 2:
            raise ConfigError("video_length must be >= 2")
        if self.velocity_range[0] < 0 or self.velocity_range[1] < self.velocity_range[0]:
            raise ConfigError(f"bad velocity_range {self.velocity_range}")
        if not 0 <= self.color_drift_rate < 1:
            raise ConfigError("color_drift_rate must be in [0,1)")
        if self.background_mode not in ("flat-color", "corpus-image"):
            raise ConfigError(f"unknown background_mode {self.background_mode!r}")

    @property
    def max_objects(self) -> int:
        return self.n_objects_range[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_objects_range"] = list(self.n_objects_range)
        d["velocity_range"] = list(self.velocity_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisSpec":
        d = dict(d)
        d["n_objects_range"] = tuple(d["n_objects_range"])
        d["velocity_range"] = tuple(d["velocity_range"])
        return cls(**d)


@dataclass
class ObjectRecord:
    """Ground-truth state of one digit in one frame."""

    cx: float
    cy: float
    size: int
    hue: float
    digit_class: int
    glyph: int  # index into the corpus glyph list


@dataclass
class Video:
    frames: np.ndarray  # T*H*W*3 float32 in [0,1]
    truth: list[list[ObjectRecord]]
    background: np.ndarray  # H*W*3
    background_class: int = -1

    def __post_init__(self):
        if np.min(self.frames) < 0 or np.max(self.frames) > 1:
            raise ShapeError("frame values must lie in [0,1]")
        if len(self.truth) != self.frames.shape[0]:
            raise ShapeError("truth length must equal frame count")


def hue_to_rgb(hue: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(hue % 1.0, 1.0, 1.0), dtype=np.float32)


# -----------------------------------------------------------------------------
# Corpora
# -----------------------------------------------------------------------------

def make_builtin_glyphs(out_dir: str | Path, classes=range(10), canvas: int = 28) -> list[Path]:
    """Write the built-in digit font as a grayscale PNG corpus."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in classes:
        rows = _FONT[c]
        bits = np.array([[ch == "#" for ch in row] for row in rows], dtype=np.uint8)
        img = Image.fromarray(bits * 255).resize((canvas, canvas), Image.NEAREST)
        p = out_dir / f"{c}.png"
        img.save(p)
        paths.append(p)
    return paths


def make_pattern_backgrounds(out_dir: str | Path, count: int, size: int = 64,
                             seed: int = 0) -> list[Path]:
    """Write procedural RGB backgrounds; the filename prefix is the class id."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    u = np.linspace(0, 1, size, dtype=np.float32)
    xx, yy = np.meshgrid(u, u)
    paths = []
    for i in range(count):
        cls = i % 4
        a, b = rng.uniform(0.05, 0.45, size=(2, 3)).astype(np.float32)
        if cls == 0:
            w = xx
        elif cls == 1:
            w = yy
        elif cls == 2:
            w = ((xx * 6).astype(int) + (yy * 6).astype(int)) % 2
        else:
            w = np.sqrt((xx - 0.5) ** 2 + (yy - 0.5) ** 2) * 1.4
        img = a[None, None, :] + w[..., None] * (b - a)[None, None, :]
        img = np.clip(img, 0, 1)
        p = out_dir / f"{cls}_{i:03d}.png"
        Image.fromarray((img * 255).astype(np.uint8)).save(p)
        paths.append(p)
    return paths


def _class_from_name(path: Path, fallback: int) -> int:
    stem = path.stem.split("_")[0]
    return int(stem) if stem.isdigit() else fallback


class GlyphCorpus:
    """Directory of grayscale glyph images, binarized at 0.5."""

    def __init__(self, directory: str | Path, digit_size: int):
        directory = Path(directory)
        files = sorted(p for p in directory.glob("*") if p.suffix.lower() in (".png", ".jpg", ".bmp"))
        if not files:
            raise CorpusError(f"no glyph images found under {directory}")
        self.files = files
        self.digit_size = digit_size
        self.masks = []
        self.classes = []
        for i, p in enumerate(files):
            img = Image.open(p).convert("L").resize((digit_size, digit_size), Image.NEAREST)
            self.masks.append(np.asarray(img, dtype=np.float32) / 255.0 >= 0.5)
            self.classes.append(_class_from_name(p, i))

    def __len__(self) -> int:
        return len(self.masks)


class BackgroundCorpus:
    """Directory of RGB images, center-cropped and resized to the frame size."""

    def __init__(self, directory: str | Path, height: int, width: int):
        directory = Path(directory)
        files = sorted(p for p in directory.glob("*") if p.suffix.lower() in (".png", ".jpg", ".bmp"))
        if not files:
            raise CorpusError(f"no background images found under {directory}")
        self.files = files
        self.images = []
        self.classes = []
        for i, p in enumerate(files):
            img = Image.open(p).convert("RGB")
            side = min(img.size)
            left = (img.size[0] - side) // 2
            top = (img.size[1] - side) // 2
            img = img.crop((left, top, left + side, top + side)).resize((width, height), Image.BILINEAR)
            self.images.append(np.asarray(img, dtype=np.float32) / 255.0)
            self.classes.append(_class_from_name(p, i))

    def __len__(self) -> int:
        return len(self.images)


# -----------------------------------------------------------------------------
# Rendering & physics
# -----------------------------------------------------------------------------

def render_frame(background: np.ndarray, records: list[ObjectRecord],
                 glyph_masks: list[np.ndarray]) -> np.ndarray:
    """Paste tinted glyphs onto the background at rounded integer positions."""
    frame = background.copy()
    for rec in records:
        mask = glyph_masks[rec.glyph]
        s = rec.size
        top = int(round(rec.cy - s / 2.0))
        left = int(round(rec.cx - s / 2.0))
        color = hue_to_rgb(rec.hue)
        frame[top:top + s, left:left + s][mask] = color
    return frame


def _reflect(p: float, v: float, lo: float, hi: float) -> tuple[float, float]:
    while p < lo or p > hi:
        if p < lo:
            p = 2 * lo - p
        else:
            p = 2 * hi - p
        v = -v
    return p, v


def _step_motion(pos: np.ndarray, vel: np.ndarray, size: int, height: int,
                 width: int) -> None:
    """Advance one frame in place: move, bounce off walls, exchange on contact."""
    n = pos.shape[0]
    lo_x, hi_x = size / 2.0, (width - 1) - size / 2.0
    lo_y, hi_y = size / 2.0, (height - 1) - size / 2.0
    pos += vel
    for i in range(n):
        pos[i, 0], vel[i, 0] = _reflect(pos[i, 0], vel[i, 0], lo_x, hi_x)
        pos[i, 1], vel[i, 1] = _reflect(pos[i, 1], vel[i, 1], lo_y, hi_y)
    for i in range(n):
        for j in range(i + 1, n):
            d = pos[i] - pos[j]
            if abs(d[0]) < size and abs(d[1]) < size:
                norm = float(np.hypot(d[0], d[1]))
                if norm == 0.0:
                    continue
                axis = d / norm
                vi = float(vel[i] @ axis)
                vj = float(vel[j] @ axis)
                if vi - vj < 0:  # approaching: swap normal components
                    vel[i] += (vj - vi) * axis
                    vel[j] += (vi - vj) * axis


def synthesize_video(spec: SynthesisSpec, glyphs: GlyphCorpus,
                     backgrounds: BackgroundCorpus | None, seed: int) -> Video:
    """Generate one video; deterministic for a fixed (spec, seed)."""
    spec.validate()
    if len(glyphs) == 0:
        raise CorpusError("glyph corpus is empty")
    if spec.background_mode == "corpus-image":
        if backgrounds is None or len(backgrounds) == 0:
            raise CorpusError("background corpus required for corpus-image mode")
    rng = np.random.default_rng((spec.rng_seed, seed))

    if spec.background_mode == "corpus-image":
        b = int(rng.integers(len(backgrounds)))
        background = backgrounds.images[b]
        background_class = backgrounds.classes[b]
    else:
        b = int(rng.integers(len(FLAT_PALETTE)))
        background = np.full((spec.height, spec.width, 3), FLAT_PALETTE[b], dtype=np.float32)
        background_class = b

    n_min, n_max = spec.n_objects_range
    n = int(rng.integers(n_min, n_max + 1))
    s = spec.digit_size
    lo_x, hi_x = s / 2.0, (spec.width - 1) - s / 2.0
    lo_y, hi_y = s / 2.0, (spec.height - 1) - s / 2.0

    pos = np.zeros((n, 2))
    for i in range(n):
        for _ in range(64):
            cand = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])
            if all(max(abs(cand[0] - pos[j, 0]), abs(cand[1] - pos[j, 1])) >= s for j in range(i)):
                pos[i] = cand
                break
        else:
            pos[i] = cand
    vmin, vmax = spec.velocity_range
    vel = rng.uniform(vmin, vmax, size=(n, 2)) * rng.choice([-1.0, 1.0], size=(n, 2))
    glyph_idx = rng.integers(len(glyphs), size=n)
    hues = rng.uniform(0, 1, size=n)

    frames = np.empty((spec.video_length, spec.height, spec.width, 3), dtype=np.float32)
    truth: list[list[ObjectRecord]] = []
    for t in range(spec.video_length):
        records = [
            ObjectRecord(cx=float(pos[i, 0]), cy=float(pos[i, 1]), size=s,
                         hue=float((hues[i] + t * spec.color_drift_rate) % 1.0),
                         digit_class=glyphs.classes[int(glyph_idx[i])],
                         glyph=int(glyph_idx[i]))
            for i in range(n)
        ]
        frames[t] = render_frame(background, records, glyphs.masks)
        truth.append(records)
        if t + 1 < spec.video_length:
            _step_motion(pos, vel, s, spec.height, spec.width)
    return Video(frames=frames, truth=truth, background=background,
                 background_class=background_class)


# -----------------------------------------------------------------------------
# Dataset on disk
# -----------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    version: str
    spec: SynthesisSpec
    videos: list[str]
    truths: list[str]
    root: Path = field(default_factory=Path)

    @property
    def video_count(self) -> int:
        return len(self.videos)

    def video_path(self, i: int) -> Path:
        return self.root / self.videos[i]

    def truth_path(self, i: int) -> Path:
        return self.root / self.truths[i]


def _truth_to_json(video: Video) -> dict:
    return {
        "background_class": video.background_class,
        "frames": [[asdict(rec) for rec in frame] for frame in video.truth],
    }


def load_truth(path: str | Path) -> dict:
    d = formats.read_json(path)
    d["frames"] = [[ObjectRecord(**rec) for rec in frame] for frame in d["frames"]]
    return d


def build_dataset(spec: SynthesisSpec, glyphs: GlyphCorpus,
                  backgrounds: BackgroundCorpus | None, count: int,
                  out_dir: str | Path) -> DatasetManifest:
    """Write `count` videos plus a manifest; byte-identical when re-run."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    videos, truths = [], []
    for i in range(count):
        video = synthesize_video(spec, glyphs, backgrounds, seed=i)
        vname, tname = f"video_{i:05d}.hvid", f"video_{i:05d}.truth.json"
        formats.write_video(out_dir / vname, video.frames)
        formats.write_json(out_dir / tname, _truth_to_json(video))
        videos.append(vname)
        truths.append(tname)
    manifest = {
        "version": formats.FORMAT_VERSION,
        "spec": spec.to_dict(),
        "videos": videos,
        "truths": truths,
    }
    formats.write_json(out_dir / "manifest.json", manifest)
    return DatasetManifest(version=formats.FORMAT_VERSION, spec=spec,
                           videos=videos, truths=truths, root=out_dir)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    d = formats.read_json(path)
    return DatasetManifest(version=d["version"], spec=SynthesisSpec.from_dict(d["spec"]),
                           videos=d["videos"], truths=d["truths"], root=path.parent)


def sample_pair_indices(length: int, rng: np.random.Generator) -> tuple[int, int]:
    if length < 2:
        raise ShapeError(f"need at least 2 frames, got {length}")
    i, j = rng.choice(length, size=2, replace=False)
    return int(i), int(j)


def sample_frame_pair(frames: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two frames of one video at distinct uniformly drawn indices."""
    i, j = sample_pair_indices(frames.shape[0], rng)
    return frames[i], frames[j]
