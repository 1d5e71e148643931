#!/usr/bin/env python3
"""Tour of the stage-1 reconstruction network on an untrained model.

Shows the individual operations (background encode/decode, detection, crop,
object decode, compositing) and one full loss computation over a frame pair
plus an unrelated frame. Training itself is demo 03.
"""
import numpy as np
import torch

from latentvideo import synth
from latentvideo.recon import ReconConfig, ReconNet, frames_to_tensor

torch.manual_seed(0)

config = ReconConfig(height=32, width=32, sub_height=16, sub_width=16,
                     n_slots=2, k_back=64, k_pose=16, k_content=32,
                     total_epochs=30)
model = ReconNet(config)
print(f"parameters: {sum(p.numel() for p in model.parameters()):,}")

# two frames of one video plus a frame of another
import tempfile
from pathlib import Path
gdir = Path(tempfile.mkdtemp()) / "glyphs"
synth.make_builtin_glyphs(gdir, classes=range(5))
glyphs = synth.GlyphCorpus(gdir, digit_size=12)
spec = synth.SynthesisSpec(n_objects_range=(1, 2), video_length=8, rng_seed=1)
video = synth.synthesize_video(spec, glyphs, None, seed=0)
other = synth.synthesize_video(spec, glyphs, None, seed=1)

x = frames_to_tensor(video.frames[0:1])
x_prime = frames_to_tensor(video.frames[4:5])
x_second = frames_to_tensor(other.frames[0:1])

mu_b, logvar_b = model.encode_background(x)
print(f"background posterior: mu {tuple(mu_b.shape)}, logvar {tuple(logvar_b.shape)}")
background = model.decode_background(mu_b)
print(f"decoded background: {tuple(background.shape)}, "
      f"range [{background.min():.2f}, {background.max():.2f}]")

z_where = model.detect_objects(x, x - background)
print(f"detected windows (cx, cy, sx, sy):\n{z_where[0].detach().numpy().round(2)}")

crops = model.crop_object(x.expand(config.n_slots, -1, -1, -1),
                          z_where[0])
(mu_p, _), (mu_c, _) = model.encode_object(crops)
obj, mask = model.decode_object(mu_p, mu_c)
print(f"object decode: image {tuple(obj.shape)}, mask {tuple(mask.shape)}, "
      f"mask mean {mask.mean():.3f}")

losses, outputs = model.compute_losses(x, x_prime, x_second, epoch=0,
                                       rng=np.random.default_rng(0))
print("loss components:")
for name, value in losses.items():
    print(f"  {name:>14s} = {float(value):8.4f}")
print(f"reconstruction shape: {tuple(outputs['x_hat'].shape)}")
