"""Evaluation: latent probes and disentanglement ratios, latent interpolation,
per-timestep prediction scoring with a frame probe, and memory accounting
(re-exported from meter).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import formats, synth
from .codec import LatentEncoder, LatentLayout, LatentManifest, align_objects, decode_latent_frame
from .errors import ConfigError, EvaluationError, ShapeError
from .meter import (  # noqa: F401  (public API of this module)
    ActivationMeter,
    MemoryReport,
    measure_baseline_clip_step,
    measure_stage1_step,
    measure_stage2_step,
)
from .predictor import SequencePredictor
from .recon import ReconNet, frames_to_tensor

PROBE_TASKS = ("digit_sum", "background_class", "pixel_value_sum", "position_sum")
INPUT_SELECTIONS = ("all_z", "z_c_only", "z_p_only")


@dataclass
class ProbeTask:
    name: str
    input_selection: str = "all_z"

    def __post_init__(self):
        if self.name not in PROBE_TASKS:
            raise ConfigError(f"unknown probe task {self.name!r}")
        if self.input_selection not in INPUT_SELECTIONS:
            raise ConfigError(f"unknown input selection {self.input_selection!r}")

    @property
    def target_type(self) -> str:
        return "classification" if self.name in ("digit_sum", "background_class") else "regression"


@dataclass
class ProbeResult:
    task: str
    target_type: str
    metrics: dict[str, list[float]]  # selection -> per-trial held-out metric
    ratio_content: list[float] = field(default_factory=list)
    ratio_pose: list[float] = field(default_factory=list)

    @property
    def trials(self) -> int:
        return len(self.metrics["all_z"])

    def summary(self) -> dict:
        out = {"task": self.task, "target_type": self.target_type,
               "trials": self.trials}
        for sel, vals in self.metrics.items():
            out[sel] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        out["r_c"] = {"mean": float(np.mean(self.ratio_content)),
                      "std": float(np.std(self.ratio_content))}
        out["r_p"] = {"mean": float(np.mean(self.ratio_pose)),
                      "std": float(np.std(self.ratio_pose))}
        return out


def selection_indices(layout: LatentLayout, selection: str) -> np.ndarray:
    if selection == "all_z":
        return np.arange(layout.k)
    if selection == "z_c_only":
        return layout.content_indices()
    if selection == "z_p_only":
        return layout.pose_indices()
    raise ConfigError(f"unknown selection {selection!r}")


# -----------------------------------------------------------------------------
# Labels from synthesis truth
# -----------------------------------------------------------------------------

def frame_labels(records: list[synth.ObjectRecord], background_class: int,
                 width: int, height: int) -> dict:
    """Per-frame probe targets computed from the truth records."""
    digit_sum = sum(r.digit_class for r in records)
    # summed RGB of each digit's tint: the color signal the paper probes
    pixel_sum = float(sum(synth.hue_to_rgb(r.hue).sum() for r in records))
    position_sum = float(sum(r.cx / (width - 1) + r.cy / (height - 1) for r in records))
    return {"digit_sum": digit_sum, "background_class": background_class,
            "pixel_value_sum": pixel_sum, "position_sum": position_sum}


def build_probe_table(video_manifest: synth.DatasetManifest,
                      latent_manifest: LatentManifest):
    """Stack every frame's latent vector with its labels and video id."""
    latents, labels, video_ids = [], {t: [] for t in PROBE_TASKS}, []
    w, h = video_manifest.spec.width, video_manifest.spec.height
    for i in range(len(latent_manifest)):
        seq = formats.read_latents(latent_manifest.sequence_path(i))
        truth = synth.load_truth(video_manifest.truth_path(i))
        for t in range(seq.shape[0]):
            latents.append(seq[t])
            row = frame_labels(truth["frames"][t], truth["background_class"], w, h)
            for task in PROBE_TASKS:
                labels[task].append(row[task])
            video_ids.append(i)
    return (np.stack(latents), {k: np.asarray(v) for k, v in labels.items()},
            np.asarray(video_ids))


# -----------------------------------------------------------------------------
# Latent probes
# -----------------------------------------------------------------------------

class LatentProbe(nn.Module):
    """Three fully connected layers over a latent slice."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, 256), nn.SiLU(),
            nn.Linear(256, 128), nn.SiLU(),
            nn.Linear(128, out_dim),
        )

    def forward(self, x):
        return self.net(x)


def _split_by_video(video_ids: np.ndarray, seed: int):
    ids = np.unique(video_ids)
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    n_train = max(1, int(round(0.8 * len(ids))))
    train_ids = set(ids[:n_train].tolist())
    train_mask = np.array([v in train_ids for v in video_ids])
    if train_mask.all():  # make sure something is held out
        train_mask[video_ids == ids[-1]] = False
    return train_mask, ~train_mask


def train_probe(latents: np.ndarray, labels: np.ndarray, task: ProbeTask,
                video_ids: np.ndarray, seed: int = 0, epochs: int = 60,
                lr: float = 1e-3) -> tuple[LatentProbe, float]:
    """Train the probe and return it with its held-out metric
    (accuracy for classification, MSE on standardized targets for regression)."""
    if latents.shape[0] < 100:
        raise EvaluationError(f"need >= 100 labeled examples, got {latents.shape[0]}")
    x = torch.from_numpy(np.ascontiguousarray(latents, dtype=np.float32))
    train_mask, test_mask = _split_by_video(video_ids, seed)

    if task.target_type == "classification":
        classes = np.unique(labels)
        if len(classes) < 2:
            raise EvaluationError(f"labels for {task.name} are degenerate (one class)")
        remap = {v: i for i, v in enumerate(classes.tolist())}
        y = torch.tensor([remap[v] for v in labels.tolist()], dtype=torch.long)
        out_dim = len(classes)
    else:
        y = torch.from_numpy(np.asarray(labels, dtype=np.float32)).unsqueeze(1)
        mu, sd = y[train_mask].mean(), y[train_mask].std().clamp(min=1e-8)
        y = (y - mu) / sd
        out_dim = 1

    torch.manual_seed(seed)
    probe = LatentProbe(x.shape[1], out_dim)
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    xtr, ytr = x[train_mask], y[train_mask]
    rng = np.random.default_rng(seed)
    batch = 128
    for _ in range(epochs):
        order = rng.permutation(len(xtr))
        for s in range(0, len(xtr), batch):
            idx = order[s:s + batch]
            pred = probe(xtr[idx])
            if task.target_type == "classification":
                loss = F.cross_entropy(pred, ytr[idx])
            else:
                loss = F.mse_loss(pred, ytr[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()

    probe.eval()
    with torch.no_grad():
        pred = probe(x[test_mask])
        if task.target_type == "classification":
            metric = float((pred.argmax(1) == y[test_mask]).float().mean())
        else:
            metric = float(F.mse_loss(pred, y[test_mask]))
    return probe, metric


def disentanglement_ratio(metric_all: float, metric_subset: float) -> float:
    """metric_subset / metric_all; the paper's per-variable usefulness ratio."""
    if metric_all == 0:
        raise EvaluationError("ratio undefined: the all-variables metric is 0")
    return metric_subset / metric_all


def run_disentanglement(video_manifest: synth.DatasetManifest,
                        latent_manifest: LatentManifest,
                        tasks: tuple[str, ...] = ("digit_sum",),
                        trials: int = 5, seed: int = 0,
                        epochs: int = 60) -> dict[str, ProbeResult]:
    """Probe each task with every input selection over several seeds."""
    latents, labels, video_ids = build_probe_table(video_manifest, latent_manifest)
    layout = latent_manifest.layout
    results = {}
    for name in tasks:
        metrics = {sel: [] for sel in INPUT_SELECTIONS}
        r_c, r_p = [], []
        for trial in range(trials):
            trial_seed = seed + 1000 * trial
            per_sel = {}
            for sel in INPUT_SELECTIONS:
                task = ProbeTask(name, sel)
                idx = selection_indices(layout, sel)
                _, metric = train_probe(latents[:, idx], labels[name], task,
                                        video_ids, seed=trial_seed, epochs=epochs)
                metrics[sel].append(metric)
                per_sel[sel] = metric
            r_c.append(disentanglement_ratio(per_sel["all_z"], per_sel["z_c_only"]))
            r_p.append(disentanglement_ratio(per_sel["all_z"], per_sel["z_p_only"]))
        results[name] = ProbeResult(task=name, target_type=ProbeTask(name).target_type,
                                    metrics=metrics, ratio_content=r_c, ratio_pose=r_p)
    return results


# -----------------------------------------------------------------------------
# Latent interpolation
# -----------------------------------------------------------------------------

_COMPONENTS = ("z_back", "z_where", "z_p", "z_c")


def component_indices(layout: LatentLayout, which: str) -> np.ndarray:
    if which == "z_back":
        return np.arange(layout.k_back)
    picks = {"z_where": layout.where_slice, "z_p": layout.pose_slice,
             "z_c": layout.content_slice}
    if which not in picks:
        raise ConfigError(f"unknown latent component {which!r}; use one of {_COMPONENTS}")
    return np.concatenate([
        np.arange(picks[which](i).start, picks[which](i).stop)
        for i in range(layout.n_slots)])


def interpolate_latent(frame_a: np.ndarray, frame_b: np.ndarray, which: str,
                       steps: int, model: ReconNet) -> np.ndarray:
    """Sweep one latent component from frame_a's value to frame_b's value,
    holding every other component at frame_a's encoding, and decode each step.

    Step 0 is exactly the plain reconstruction of frame_a; the last step
    decodes frame_a's code with the selected component replaced by frame_b's
    (both endpoint codes are exact, no interpolation rounding).
    """
    if steps < 2:
        raise ConfigError("steps must be >= 2")
    encoder = LatentEncoder(model)
    layout = encoder.layout
    idx = component_indices(layout, which)
    code_a = encoder.encode_frame(np.asarray(frame_a))
    code_b = encoder.encode_frame(np.asarray(frame_b))
    frames = []
    for s in range(steps):
        t = s / (steps - 1)
        code = code_a.copy()
        code[idx] = (1.0 - t) * code_a[idx] + t * code_b[idx]
        frames.append(decode_latent_frame(model, code))
    return np.stack(frames)


# -----------------------------------------------------------------------------
# Frame probe and prediction scoring
# -----------------------------------------------------------------------------

REGRESSION_TASKS = ("digit_sum", "pixel_value_sum", "position_sum")


class FrameProbe(nn.Module):
    """Small CNN (4 conv + 2 FC) regressing the three frame statistics."""

    def __init__(self, hw: tuple[int, int]):
        super().__init__()
        h, w = hw
        self.conv = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(64, 64, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(64, 64, 3, stride=2, padding=1), nn.SiLU(),
        )
        feat = 64 * ((h + 15) // 16) * ((w + 15) // 16)
        self.fc = nn.Sequential(nn.Linear(feat, 256), nn.SiLU(), nn.Linear(256, 3))
        self.register_buffer("label_mean", torch.zeros(3))
        self.register_buffer("label_std", torch.ones(3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.conv(x).flatten(1))

    @torch.no_grad()
    def predict(self, x: torch.Tensor) -> torch.Tensor:
        """Denormalized predictions, one row per frame, columns in
        REGRESSION_TASKS order."""
        return self(x) * self.label_std + self.label_mean


def _video_label_rows(truth: dict, width: int, height: int) -> np.ndarray:
    rows = []
    for recs in truth["frames"]:
        lab = frame_labels(recs, truth["background_class"], width, height)
        rows.append([lab[t] for t in REGRESSION_TASKS])
    return np.asarray(rows, dtype=np.float32)


def train_frame_probe(manifest: synth.DatasetManifest, seed: int = 0,
                      epochs: int = 20, lr: float = 1e-3,
                      batch: int = 64) -> tuple[FrameProbe, dict[str, float]]:
    """Train the pixel-space probe on real frames with truth labels.

    Returns the probe plus its held-out per-task MSE in raw label units.
    """
    frames, labels, video_ids = [], [], []
    for i in range(manifest.video_count):
        vid = formats.read_video(manifest.video_path(i))
        truth = synth.load_truth(manifest.truth_path(i))
        rows = _video_label_rows(truth, manifest.spec.width, manifest.spec.height)
        frames.append(vid)
        labels.append(rows)
        video_ids.extend([i] * vid.shape[0])
    x = frames_to_tensor(np.concatenate(frames))
    y = torch.from_numpy(np.concatenate(labels))
    video_ids = np.asarray(video_ids)
    train_mask, test_mask = _split_by_video(video_ids, seed)

    torch.manual_seed(seed)
    probe = FrameProbe((manifest.spec.height, manifest.spec.width))
    mu = y[train_mask].mean(dim=0)
    sd = y[train_mask].std(dim=0).clamp(min=1e-8)
    probe.label_mean.copy_(mu)
    probe.label_std.copy_(sd)
    yn = (y - mu) / sd

    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    xtr, ytr = x[train_mask], yn[train_mask]
    for _ in range(epochs):
        order = rng.permutation(len(xtr))
        for s in range(0, len(xtr), batch):
            idx = order[s:s + batch]
            loss = F.mse_loss(probe(xtr[idx]), ytr[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()

    probe.eval()
    with torch.no_grad():
        pred = probe.predict(x[test_mask]).numpy()
    truth_raw = y[test_mask].numpy()
    val = {t: float(np.mean((pred[:, i] - truth_raw[:, i]) ** 2))
           for i, t in enumerate(REGRESSION_TASKS)}
    return probe, val


def predict_and_score(frames: np.ndarray, truth: dict, model: ReconNet,
                      predictor: SequencePredictor, probe: FrameProbe,
                      width: int, height: int) -> dict:
    """Roll out the future of one video and probe every generated frame.

    Returns {task: [{t, prediction, truth, sq_error, gt_frame_prediction,
    gt_frame_sq_error} ...]} with exactly t_fut entries per task.
    """
    t_past, t_fut = predictor.config.t_past, predictor.config.t_fut
    if frames.shape[0] < t_past + t_fut:
        raise ShapeError(f"video has {frames.shape[0]} frames, need {t_past + t_fut}")
    if model.config.height != height or model.config.width != width:
        raise ShapeError("frame size does not match the reconstruction checkpoint")
    encoder = LatentEncoder(model)
    latents = align_objects(encoder.encode_video(frames[:t_past]), encoder.layout)
    future = predictor.rollout(latents.frames, t_fut)
    decoded = np.stack([decode_latent_frame(model, v) for v in future])

    with torch.no_grad():
        pred_rows = probe.predict(frames_to_tensor(decoded)).numpy()
        gt_rows = probe.predict(frames_to_tensor(frames[t_past:t_past + t_fut])).numpy()
    label_rows = _video_label_rows(truth, width, height)[t_past:t_past + t_fut]

    out = {}
    for col, task in enumerate(REGRESSION_TASKS):
        series = []
        for s in range(t_fut):
            truth_v = float(label_rows[s, col])
            pred_v = float(pred_rows[s, col])
            gt_v = float(gt_rows[s, col])
            series.append({
                "t": s + 1,
                "prediction": pred_v,
                "truth": truth_v,
                "sq_error": (pred_v - truth_v) ** 2,
                "gt_frame_prediction": gt_v,
                "gt_frame_sq_error": (gt_v - truth_v) ** 2,
            })
        out[task] = series
    return out
