"""One-pass conversion of video datasets into aligned latent-sequence datasets.

A latent frame is the flat vector [z_back | slot_1 | ... | slot_N] with each
slot laid out as (z_where, z_p, z_c), encoded from the frozen stage-1
posterior means. Slot order is made temporally consistent by exhaustively
searching the N! slot permutations that minimize summed content-code distance
between adjacent frames.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import formats, synth
from .errors import ConfigError, DataError, IncompatibilityError, ShapeError
from .recon import ReconNet, frames_to_tensor

MAX_ALIGN_SLOTS = 6  # N! exhaustive search bound


@dataclass(frozen=True)
class LatentLayout:
    """Dimension table locating every component inside a flat latent vector."""

    k_back: int
    n_slots: int
    k_pose: int
    k_content: int

    @property
    def slot_width(self) -> int:
        return 4 + self.k_pose + self.k_content

    @property
    def k(self) -> int:
        return self.k_back + self.n_slots * self.slot_width

    def slot_slice(self, i: int) -> slice:
        start = self.k_back + i * self.slot_width
        return slice(start, start + self.slot_width)

    def where_slice(self, i: int) -> slice:
        start = self.k_back + i * self.slot_width
        return slice(start, start + 4)

    def pose_slice(self, i: int) -> slice:
        start = self.k_back + i * self.slot_width + 4
        return slice(start, start + self.k_pose)

    def content_slice(self, i: int) -> slice:
        start = self.k_back + i * self.slot_width + 4 + self.k_pose
        return slice(start, start + self.k_content)

    def pose_indices(self) -> np.ndarray:
        """Indices of the time-varying part: every slot's z_where and z_p."""
        idx = [np.arange(self.where_slice(i).start, self.pose_slice(i).stop)
               for i in range(self.n_slots)]
        return np.concatenate(idx) if idx else np.empty(0, dtype=int)

    def content_indices(self) -> np.ndarray:
        """Indices of the time-invariant part: z_back and every slot's z_c."""
        idx = [np.arange(self.k_back)]
        for i in range(self.n_slots):
            s = self.content_slice(i)
            idx.append(np.arange(s.start, s.stop))
        return np.concatenate(idx)

    def to_dict(self) -> dict:
        return {"k_back": self.k_back, "n_slots": self.n_slots,
                "k_pose": self.k_pose, "k_content": self.k_content}

    @classmethod
    def from_dict(cls, d: dict) -> "LatentLayout":
        return cls(**d)

    @classmethod
    def from_recon_config(cls, config) -> "LatentLayout":
        return cls(k_back=config.k_back, n_slots=config.n_slots,
                   k_pose=config.k_pose, k_content=config.k_content)


@dataclass
class LatentSequence:
    frames: np.ndarray  # (T, k)
    video_id: str
    permutations: list[list[int]]  # one per frame; frame 0 is identity


# -----------------------------------------------------------------------------
# Encoding
# -----------------------------------------------------------------------------

class LatentEncoder:
    """Frozen stage-1 encoders applied deterministically (posterior means)."""

    def __init__(self, model: ReconNet):
        self.model = model
        self.layout = LatentLayout.from_recon_config(model.config)

    @torch.no_grad()
    def encode_batch(self, x: torch.Tensor) -> np.ndarray:
        """(B,3,H,W) frames -> (B,k) latent vectors."""
        c = self.model.config
        if x.shape[2] != c.height or x.shape[3] != c.width:
            raise IncompatibilityError(
                f"frames are {tuple(x.shape[2:])} but the checkpoint expects "
                f"({c.height}, {c.width})")
        mu_b, _ = self.model.encode_background(x)
        parts = self.model.encode_objects(x, mu_b)
        b = x.shape[0]
        slots = torch.cat([parts["z_where"], parts["mu_p"], parts["mu_c"]], dim=2)
        return torch.cat([mu_b, slots.reshape(b, -1)], dim=1).numpy().astype(np.float32)

    def encode_frame(self, frame: np.ndarray) -> np.ndarray:
        """(H,W,3) frame -> length-k latent vector."""
        return self.encode_batch(frames_to_tensor(frame))[0]

    def encode_video(self, frames: np.ndarray) -> np.ndarray:
        return self.encode_batch(frames_to_tensor(frames))


@torch.no_grad()
def decode_latent_frame(model: ReconNet, vector: np.ndarray) -> np.ndarray:
    """Inverse of LatentEncoder: flat latent vector -> (H,W,3) frame."""
    layout = LatentLayout.from_recon_config(model.config)
    if vector.shape != (layout.k,):
        raise ShapeError(f"latent vector must have length {layout.k}")
    v = torch.from_numpy(np.asarray(vector, dtype=np.float32)).unsqueeze(0)
    background = model.decode_background(v[:, :layout.k_back])
    z_where = torch.stack([v[0, layout.where_slice(i)] for i in range(layout.n_slots)]).unsqueeze(0)
    z_p = torch.stack([v[0, layout.pose_slice(i)] for i in range(layout.n_slots)]).unsqueeze(0)
    z_c = torch.stack([v[0, layout.content_slice(i)] for i in range(layout.n_slots)]).unsqueeze(0)
    pasted_obj, pasted_mask, _ = model.decode_slots(z_p, z_c, z_where)
    from .recon import composite
    frame = composite(background, pasted_obj, pasted_mask)
    return frame[0].permute(1, 2, 0).numpy().astype(np.float32)


# -----------------------------------------------------------------------------
# Alignment
# -----------------------------------------------------------------------------

def _permute_slots(vector: np.ndarray, perm: tuple[int, ...],
                   layout: LatentLayout) -> np.ndarray:
    out = vector.copy()
    for i, p in enumerate(perm):
        out[layout.slot_slice(i)] = vector[layout.slot_slice(p)]
    return out


def align_objects(frames: np.ndarray, layout: LatentLayout) -> LatentSequence:
    """Chain per-pair exhaustive permutation search over adjacent frames.

    Frame 0 keeps its detection order; each later frame is permuted to
    minimize the summed squared content distance against the already-aligned
    previous frame. Ties break toward the lexicographically smallest
    permutation.
    """
    n = layout.n_slots
    if n > MAX_ALIGN_SLOTS:
        raise ConfigError(
            f"alignment is exhaustive over N! permutations; N={n} exceeds {MAX_ALIGN_SLOTS}")
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 2 or frames.shape[1] != layout.k:
        raise ShapeError(f"expected (T,{layout.k}) latents, got {frames.shape}")
    t_len = frames.shape[0]
    aligned = frames.copy()
    perms: list[list[int]] = [list(range(n))]
    all_perms = list(itertools.permutations(range(n)))
    for t in range(t_len - 1):
        prev_content = np.stack([aligned[t, layout.content_slice(i)] for i in range(n)])
        next_content = np.stack([frames[t + 1, layout.content_slice(i)] for i in range(n)])
        best_perm, best_cost = None, np.inf
        for perm in all_perms:
            cost = sum(
                float(((prev_content[i] - next_content[perm[i]]) ** 2).sum())
                for i in range(n))
            if cost < best_cost:
                best_perm, best_cost = perm, cost
        aligned[t + 1] = _permute_slots(frames[t + 1], best_perm, layout)
        perms.append(list(best_perm))
    return LatentSequence(frames=aligned, video_id="", permutations=perms)


# -----------------------------------------------------------------------------
# Dataset conversion
# -----------------------------------------------------------------------------

@dataclass
class LatentManifest:
    version: str
    k: int
    layout: LatentLayout
    sequences: list[dict]  # {path, source, permutations}
    source_frame_hw: tuple[int, int]
    compression_ratio: float
    root: Path

    def sequence_path(self, i: int) -> Path:
        return self.root / self.sequences[i]["path"]

    def __len__(self) -> int:
        return len(self.sequences)


def convert_dataset(manifest: synth.DatasetManifest, checkpoint: str | Path,
                    out_dir: str | Path) -> LatentManifest:
    """Encode and align every video once; writes HLAT files plus a manifest.

    Failed videos are reported together at the end; converted files are kept.
    """
    model, _ = ReconNet.load(checkpoint)
    encoder = LatentEncoder(model)
    layout = encoder.layout
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries, failed = [], []
    for i in range(manifest.video_count):
        name = f"latent_{i:05d}.hlat"
        try:
            frames = formats.read_video(manifest.video_path(i))
            seq = align_objects(encoder.encode_video(frames), layout)
            formats.write_latents(out_dir / name, seq.frames)
            entries.append({"path": name, "source": manifest.videos[i],
                            "permutations": seq.permutations})
        except Exception as e:  # keep going; report failures together
            failed.append(f"{manifest.videos[i]}: {e}")
    hw = (manifest.spec.height, manifest.spec.width)
    ratio = (hw[0] * hw[1] * 3) / layout.k
    formats.write_json(out_dir / "manifest.json", {
        "version": formats.FORMAT_VERSION,
        "k": layout.k,
        "dims": layout.to_dict(),
        "sequences": entries,
        "source_frame_hw": list(hw),
        "compression_ratio_per_frame": ratio,
    })
    if failed:
        raise DataError("conversion failed for: " + "; ".join(failed))
    return LatentManifest(version=formats.FORMAT_VERSION, k=layout.k,
                          layout=layout, sequences=entries,
                          source_frame_hw=hw, compression_ratio=ratio,
                          root=out_dir)


def load_latent_manifest(path: str | Path) -> LatentManifest:
    path = Path(path)
    d = formats.read_json(path)
    return LatentManifest(version=d["version"], k=d["k"],
                          layout=LatentLayout.from_dict(d["dims"]),
                          sequences=d["sequences"],
                          source_frame_hw=tuple(d["source_frame_hw"]),
                          compression_ratio=d["compression_ratio_per_frame"],
                          root=path.parent)
