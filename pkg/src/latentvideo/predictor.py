"""Stage-2: recurrent prediction over latent sequences.

The latent vector splits into a time-varying pose part (every slot's z_where
and z_p) and a time-invariant content part (z_back and every slot's z_c). The
content part is averaged over the observed frames and held fixed; an LSTM
consumes (content, pose, pose difference) per step and predicts the next
difference, which is integrated to roll the pose forward. Training never
touches pixel data.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import formats
from .codec import LatentLayout, LatentManifest
from .errors import ConfigError, DataError, ShapeError


@dataclass
class PredictorConfig:
    t_past: int = 8
    t_fut: int = 8
    hidden: int = 128
    huber_delta: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 32

    def validate(self) -> None:
        if self.t_past < 2:
            raise ConfigError("t_past must be >= 2 (a difference needs two frames)")
        if self.t_fut < 1:
            raise ConfigError("t_fut must be >= 1")
        if self.huber_delta <= 0:
            raise ConfigError("huber_delta must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        return cls(**d)


@dataclass(frozen=True)
class PoseSplit:
    """Index sets partitioning a flat latent vector, from the dimension table."""

    pose_idx: np.ndarray
    content_idx: np.ndarray

    @classmethod
    def from_layout(cls, layout: LatentLayout) -> "PoseSplit":
        return cls(pose_idx=layout.pose_indices(), content_idx=layout.content_indices())

    @property
    def k_pose_total(self) -> int:
        return len(self.pose_idx)

    @property
    def k_content_total(self) -> int:
        return len(self.content_idx)

    @property
    def k(self) -> int:
        return self.k_pose_total + self.k_content_total

    def split(self, latents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        latents = np.asarray(latents)
        return latents[..., self.pose_idx], latents[..., self.content_idx]

    def merge(self, pose: np.ndarray, content: np.ndarray) -> np.ndarray:
        pose = np.asarray(pose)
        out = np.empty(pose.shape[:-1] + (self.k,), dtype=pose.dtype)
        out[..., self.pose_idx] = pose
        out[..., self.content_idx] = content
        return out


def average_content(latents: np.ndarray, t_past: int, split: PoseSplit) -> np.ndarray:
    """Mean of the content part over the first t_past frames."""
    latents = np.asarray(latents)
    if latents.shape[0] < t_past:
        raise ShapeError(f"sequence has {latents.shape[0]} frames, need {t_past}")
    _, content = split.split(latents[:t_past])
    return content.mean(axis=0)


def huber_loss(pred: torch.Tensor, target: torch.Tensor, delta: float) -> torch.Tensor:
    """Mean over components of 0.5*r^2 if |r|<=delta else delta*(|r|-0.5*delta)."""
    if pred.shape != target.shape:
        raise ShapeError(f"shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if delta <= 0:
        raise ConfigError("delta must be > 0")
    r = pred - target
    absr = r.abs()
    return torch.where(absr <= delta, 0.5 * r * r, delta * (absr - 0.5 * delta)).mean()


class SequencePredictor(nn.Module):
    """LSTM over (content, pose, difference) triples emitting pose differences.

    The output projection starts at zero so the untrained model predicts
    "no motion", which keeps early rollouts anchored to the last observation.
    """

    def __init__(self, split: PoseSplit, config: PredictorConfig):
        super().__init__()
        config.validate()
        self.split = split
        self.config = config
        self.cell = nn.LSTMCell(split.k_content_total + 2 * split.k_pose_total,
                                config.hidden)
        self.head = nn.Linear(config.hidden, split.k_pose_total)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def initial_state(self, batch: int, dtype=torch.float32):
        h = torch.zeros(batch, self.config.hidden, dtype=dtype)
        return h, h.clone()

    def predict_step(self, state, content: torch.Tensor, pose: torch.Tensor,
                     diff: torch.Tensor):
        """One recurrent step; returns (predicted next difference, new state)."""
        if pose.shape[-1] != self.split.k_pose_total or diff.shape != pose.shape:
            raise ShapeError("pose/diff length must equal the pose split width")
        h, c = self.cell(torch.cat([content, pose, diff], dim=-1), state)
        return self.head(h), (h, c)

    def forward(self, content: torch.Tensor, poses: torch.Tensor) -> torch.Tensor:
        """Teacher-forced pass: poses (B,T,kp) -> predicted diffs (B,T-1,kp).

        Output step t predicts pose_{t+1} - pose_t. The difference input for
        the first frame is defined as zero.
        """
        b, t_len, _ = poses.shape
        state = self.initial_state(b, dtype=poses.dtype)
        diffs = torch.cat([torch.zeros_like(poses[:, :1]),
                           poses[:, 1:] - poses[:, :-1]], dim=1)
        preds = []
        for t in range(t_len - 1):
            d_hat, state = self.predict_step(state, content, poses[:, t], diffs[:, t])
            preds.append(d_hat)
        return torch.stack(preds, dim=1)

    @torch.no_grad()
    def rollout(self, past: np.ndarray, t_fut: int) -> np.ndarray:
        """Warm up on the observed latents, then integrate predicted diffs.

        past: (T_past, k) latent frames; returns (t_fut, k) with the content
        part of every output frame equal to the observed content average.
        """
        past = np.asarray(past, dtype=np.float32)
        if past.ndim != 2 or past.shape[0] != self.config.t_past:
            raise ShapeError(f"expected ({self.config.t_past}, k) past latents")
        split = self.split
        content_bar = average_content(past, self.config.t_past, split)
        content = torch.from_numpy(content_bar).unsqueeze(0)
        pose_seq, _ = split.split(past)
        poses = torch.from_numpy(np.ascontiguousarray(pose_seq)).unsqueeze(0)

        state = self.initial_state(1)
        d = torch.zeros_like(poses[:, 0])
        d_hat = d
        for t in range(self.config.t_past):
            d_hat, state = self.predict_step(state, content, poses[:, t], d)
            d = poses[:, t + 1] - poses[:, t] if t + 1 < self.config.t_past else d_hat

        pose = poses[:, -1]
        out = []
        for _ in range(t_fut):
            pose = pose + d_hat
            out.append(split.merge(pose[0].numpy(), content_bar))
            d_hat, state = self.predict_step(state, content, pose, d_hat)
        return np.stack(out).astype(np.float32)

    def save(self, path: str | Path, epoch: int, layout: LatentLayout) -> None:
        params = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        formats.save_checkpoint(path, "predictor",
                                {"predictor": self.config.to_dict(),
                                 "layout": layout.to_dict()},
                                epoch, params)

    @classmethod
    def load(cls, path: str | Path) -> tuple["SequencePredictor", LatentLayout]:
        stage, config, _, params = formats.load_checkpoint(path)
        if stage != "predictor":
            raise DataError(f"{path} is a {stage} checkpoint, expected predictor")
        layout = LatentLayout.from_dict(config["layout"])
        model = cls(PoseSplit.from_layout(layout),
                    PredictorConfig.from_dict(config["predictor"]))
        model.load_state_dict({k: torch.from_numpy(v) for k, v in params.items()})
        model.eval()
        return model, layout


def _load_windows(manifest: LatentManifest, config: PredictorConfig):
    """All (t_past + t_fut)-length windows from every sequence."""
    need = config.t_past + config.t_fut
    windows, too_short = [], []
    for i in range(len(manifest)):
        seq = formats.read_latents(manifest.sequence_path(i))
        if seq.shape[0] < need:
            too_short.append(manifest.sequences[i]["path"])
            continue
        for start in range(seq.shape[0] - need + 1):
            windows.append(seq[start:start + need])
    if too_short:
        raise DataError(
            f"sequences shorter than t_past+t_fut={need}: " + ", ".join(too_short))
    return np.stack(windows)


def train_stage2(manifest: LatentManifest, config: PredictorConfig,
                 out_dir: str | Path, seed: int = 0) -> Path:
    """Teacher-forced training on difference vectors over the future window.

    Reads only latent files; writes `predictor.ckpt` and `predictor_log.jsonl`.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = PoseSplit.from_layout(manifest.layout)

    windows = _load_windows(manifest, config)  # (M, t_past+t_fut, k)
    pose_all, content_all = split.split(windows)
    content_bar = content_all[:, :config.t_past].mean(axis=1)

    torch.manual_seed(seed)
    model = SequencePredictor(split, config)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(seed)
    m = windows.shape[0]

    with formats.TrainingLog(out_dir / "predictor_log.jsonl") as log:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(m)
            total, steps = 0.0, 0
            for start in range(0, m, config.batch_size):
                idx = order[start:start + config.batch_size]
                poses = torch.from_numpy(np.ascontiguousarray(pose_all[idx]))
                content = torch.from_numpy(np.ascontiguousarray(content_bar[idx]))
                pred = model(content, poses)  # (B, T-1, kp)
                future_pred = pred[:, config.t_past - 1:]
                future_true = (poses[:, config.t_past:]
                               - poses[:, config.t_past - 1:-1])
                loss = huber_loss(future_pred, future_true, config.huber_delta)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                total += float(loss.detach())
                steps += 1
            log.write({"epoch": epoch, "huber": total / steps})

    ckpt_path = out_dir / "predictor.ckpt"
    model.save(ckpt_path, epoch=config.epochs, layout=manifest.layout)
    return ckpt_path
