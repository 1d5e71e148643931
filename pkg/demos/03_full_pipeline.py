#!/usr/bin/env python3
"""Run the whole two-stage pipeline at a small scale through the library API.

dataset -> stage-1 training -> one-pass latent conversion -> stage-2 training
-> rollout -> decoded future frames. Takes a couple of minutes on CPU; the
`latentvideo all` CLI wraps the same sequence with staleness tracking.
"""
from pathlib import Path

import numpy as np

from latentvideo import codec, formats, predictor, recon, synth

out = Path("demo_out/pipeline")
out.mkdir(parents=True, exist_ok=True)

glyph_dir = out / "glyphs"
synth.make_builtin_glyphs(glyph_dir, classes=range(5))
glyphs = synth.GlyphCorpus(glyph_dir, digit_size=12)
spec = synth.SynthesisSpec(height=32, width=32, digit_size=12,
                           n_objects_range=(1, 1), video_length=8,
                           velocity_range=(1.0, 2.0), rng_seed=5)
manifest = synth.build_dataset(spec, glyphs, None, count=20, out_dir=out / "ds")
print(f"dataset: {manifest.video_count} videos")

config = recon.ReconConfig(height=32, width=32, sub_height=16, sub_width=16,
                           n_slots=1, total_epochs=6, batch_size=8,
                           pairs_per_video=4)
ckpt = recon.train_stage1(manifest, config, out / "recon", seed=0)
log = formats.read_training_log(out / "recon" / "recon_log.jsonl")
print(f"stage 1: recon {log[0]['recon']:.4f} -> {log[-1]['recon']:.4f} "
      f"over {len(log)} epochs")

latent_manifest = codec.convert_dataset(manifest, ckpt, out / "latents")
print(f"latents: k={latent_manifest.k}, "
      f"compression {latent_manifest.compression_ratio:.0f}x per frame")

pred_config = predictor.PredictorConfig(t_past=4, t_fut=4, hidden=64, epochs=30)
pred_ckpt = predictor.train_stage2(latent_manifest, pred_config,
                                   out / "predictor", seed=1)
plog = formats.read_training_log(out / "predictor" / "predictor_log.jsonl")
print(f"stage 2: huber {plog[0]['huber']:.5f} -> {plog[-1]['huber']:.5f}")

# roll one video's future and decode it back to pixels
model, _ = recon.ReconNet.load(ckpt)
pred, _ = predictor.SequencePredictor.load(pred_ckpt)
frames = formats.read_video(manifest.video_path(0))
encoder = codec.LatentEncoder(model)
past = codec.align_objects(encoder.encode_video(frames[:4]), encoder.layout)
future_latents = pred.rollout(past.frames, t_fut=4)
decoded = np.stack([codec.decode_latent_frame(model, v) for v in future_latents])
mse = float(((decoded - frames[4:8]) ** 2).mean())
print(f"decoded future frames: {decoded.shape}, pixel MSE vs truth {mse:.4f}")
formats.write_video(out / "predicted.hvid", decoded)
print(f"wrote {out / 'predicted.hvid'}")
