"""Activation footprint accounting for one training step.

The meter hooks every leaf module of a model and sums the element counts of
all intermediate outputs produced during a step (plus explicitly recorded
inputs). Because every recorded activation stays live for the backward pass,
the sum at the end of the forward(s) is the high-water mark.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import formats
from .codec import LatentManifest
from .predictor import PoseSplit, PredictorConfig, SequencePredictor, huber_loss
from .recon import ReconConfig, ReconNet, frames_to_tensor


@dataclass
class MemoryReport:
    stage: str
    batch: int
    height: int
    width: int
    channels: int
    duration: int
    latent_dim: int
    input_elements: int
    peak_elements: int

    def to_dict(self) -> dict:
        return self.__dict__.copy()


class ActivationMeter:
    """Counts elements of every intermediate tensor a model produces."""

    def __init__(self):
        self.total = 0
        self.input_elements = 0
        self._handles = []

    def record(self, *tensors: torch.Tensor, as_input: bool = False) -> None:
        for t in tensors:
            if isinstance(t, torch.Tensor):
                self.total += t.numel()
                if as_input:
                    self.input_elements += t.numel()

    def _hook(self, module, inputs, output):
        outs = output if isinstance(output, (tuple, list)) else (output,)
        for t in outs:
            if isinstance(t, torch.Tensor):
                self.total += t.numel()

    def attach(self, model: nn.Module) -> "ActivationMeter":
        for m in model.modules():
            if next(m.children(), None) is None:  # leaf modules only
                self._handles.append(m.register_forward_hook(self._hook))
        return self

    def detach(self) -> None:
        for h in self._handles:
            h.remove()
        self._handles.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.detach()


def measure_stage2_step(manifest: LatentManifest, config: PredictorConfig,
                        batch: int = 8, seed: int = 0) -> MemoryReport:
    """Instrument one teacher-forced stage-2 training step."""
    config.validate()
    split = PoseSplit.from_layout(manifest.layout)
    torch.manual_seed(seed)
    model = SequencePredictor(split, config)

    need = config.t_past + config.t_fut
    seqs = []
    for i in range(len(manifest)):
        seq = formats.read_latents(manifest.sequence_path(i))
        seqs.append(seq[:need])
        if len(seqs) >= batch:
            break
    windows = np.stack(seqs)
    if windows.shape[0] < batch:
        windows = np.concatenate(
            [windows] * (batch // windows.shape[0] + 1))[:batch]

    pose, content = split.split(windows)
    content_bar = torch.from_numpy(content[:, :config.t_past].mean(axis=1))
    poses = torch.from_numpy(np.ascontiguousarray(pose))

    with ActivationMeter().attach(model) as meter:
        meter.record(torch.from_numpy(windows), as_input=True)
        pred = model(content_bar, poses)
        meter.record(pred)
        loss = huber_loss(pred[:, config.t_past - 1:],
                          poses[:, config.t_past:] - poses[:, config.t_past - 1:-1],
                          config.huber_delta)
        loss.backward()
    h, w = manifest.source_frame_hw
    return MemoryReport(stage="stage2", batch=batch, height=h, width=w,
                        channels=3, duration=need, latent_dim=manifest.k,
                        input_elements=meter.input_elements,
                        peak_elements=meter.total)


def measure_stage1_step(config: ReconConfig, duration: int, batch: int = 8,
                        seed: int = 0) -> MemoryReport:
    """Instrument one stage-1 step; frames are processed as pairs, so the
    count carries no factor of the video duration."""
    torch.manual_seed(seed)
    model = ReconNet(config)
    rng = np.random.default_rng(seed)
    shape = (batch, config.height, config.width, 3)
    x = frames_to_tensor(rng.random(shape, dtype=np.float32))
    x_prime = frames_to_tensor(rng.random(shape, dtype=np.float32))
    x_second = frames_to_tensor(rng.random(shape, dtype=np.float32))
    with ActivationMeter().attach(model) as meter:
        meter.record(x, x_prime, x_second, as_input=True)
        losses, _ = model.compute_losses(x, x_prime, x_second, epoch=0, rng=rng)
        losses["total"].backward()
    return MemoryReport(stage="stage1", batch=batch, height=config.height,
                        width=config.width, channels=3, duration=duration,
                        latent_dim=0, input_elements=meter.input_elements,
                        peak_elements=meter.total)


class ClipEncoder(nn.Module):
    """Reference end-to-end model: convolutions over every frame of a clip.

    Stands in for conventional video generators whose activations scale with
    B*T*H*W*C.
    """

    def __init__(self, channels: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, channels, 3, padding=1), nn.SiLU(),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1), nn.SiLU(),
        )

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        b, t, c, h, w = clip.shape
        return self.net(clip.reshape(b * t, c, h, w))


def measure_baseline_clip_step(height: int, width: int, duration: int,
                               batch: int = 8, seed: int = 0) -> MemoryReport:
    """Instrument the whole-clip reference pass at a given frame size."""
    torch.manual_seed(seed)
    model = ClipEncoder()
    rng = np.random.default_rng(seed)
    clip = torch.from_numpy(
        rng.random((batch, duration, 3, height, width), dtype=np.float32))
    with ActivationMeter().attach(model) as meter:
        meter.record(clip, as_input=True)
        out = model(clip)
        out.pow(2).mean().backward()
    return MemoryReport(stage="baseline", batch=batch, height=height,
                        width=width, channels=3, duration=duration,
                        latent_dim=0, input_elements=meter.input_elements,
                        peak_elements=meter.total)
