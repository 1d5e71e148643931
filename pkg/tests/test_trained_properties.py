"""Post-training behavioral checks on the shared tiny trained stack.

These are the spec'd empirical properties that only hold after stage-1/2
training has actually worked: code-space geometry, detection accuracy,
interpolation behavior, and prediction scoring.
"""
import numpy as np
import pytest
import torch

from latentvideo import codec, evaluate, formats, recon, synth


def _encode_objects(stack, frames):
    model = stack["model"]
    x = recon.frames_to_tensor(frames)
    with torch.no_grad():
        mu_b, _ = model.encode_background(x)
        return model.encode_objects(x, mu_b)


def _background_mu(stack, frame):
    with torch.no_grad():
        mu, _ = stack["model"].encode_background(recon.frames_to_tensor(frame))
    return mu[0].numpy()


def test_background_codes_cluster_by_video(tiny_stack):
    """Same-video z_back pairs are closer than cross-video pairs on >=80% of
    100 sampled pairs."""
    manifest = tiny_stack["manifest"]
    rng = np.random.default_rng(0)
    cache = {}

    def mu_of(i, t):
        if (i, t) not in cache:
            frames = formats.read_video(manifest.video_path(i))
            cache[(i, t)] = _background_mu(tiny_stack, frames[t])
        return cache[(i, t)]

    wins = 0
    for _ in range(100):
        i = int(rng.integers(50))
        t1, t2 = rng.choice(8, 2, replace=False)
        j = int(rng.integers(49))
        j = j + 1 if j >= i else j
        t3 = int(rng.integers(8))
        d_same = float(((mu_of(i, int(t1)) - mu_of(i, int(t2))) ** 2).sum())
        d_cross = float(((mu_of(i, int(t1)) - mu_of(j, t3)) ** 2).sum())
        wins += d_same < d_cross
    assert wins >= 80


def test_background_decoder_reproduces_flat_backgrounds(tiny_stack):
    """decode(encode(flat frame)) per-pixel MAE < 0.05 after flat-corpus
    training."""
    manifest = tiny_stack["manifest"]
    model = tiny_stack["model"]
    maes = []
    for i in range(20):
        truth = synth.load_truth(manifest.truth_path(i))
        color = np.array(synth.FLAT_PALETTE[truth["background_class"]],
                         dtype=np.float32)
        flat = np.broadcast_to(color, (32, 32, 3)).copy()
        with torch.no_grad():
            mu, _ = model.encode_background(recon.frames_to_tensor(flat))
            out = model.decode_background(mu)[0].permute(1, 2, 0).numpy()
        maes.append(float(np.abs(out - flat).mean()))
    assert float(np.mean(maes)) < 0.05


def test_detector_tracks_truth_centers(tiny_stack):
    """Predicted (cx, cy) against truth centers: MAE < 0.1 normalized."""
    manifest = tiny_stack["manifest"]
    errs = []
    for i in range(30):
        frames = formats.read_video(manifest.video_path(i))
        truth = synth.load_truth(manifest.truth_path(i))
        parts = _encode_objects(tiny_stack, frames)
        zw = parts["z_where"][:, 0].numpy()
        for t, recs in enumerate(truth["frames"]):
            r = recs[0]
            errs.append([abs(zw[t, 0] - (2 * r.cx / 31 - 1)),
                         abs(zw[t, 1] - (2 * r.cy / 31 - 1))])
    mae = np.array(errs).mean(axis=0)
    assert mae[0] < 0.1 and mae[1] < 0.1


def test_content_codes_cluster_by_glyph(tiny_stack):
    """Triplet ordering: same glyph across frames nearer than a different
    glyph, on >=80% of 100 sampled triplets."""
    manifest = tiny_stack["manifest"]
    rng = np.random.default_rng(1)
    mus, cls = {}, {}
    for i in range(50):
        frames = formats.read_video(manifest.video_path(i))
        truth = synth.load_truth(manifest.truth_path(i))
        mus[i] = _encode_objects(tiny_stack, frames)["mu_c"][:, 0].numpy()
        cls[i] = truth["frames"][0][0].digit_class
    ok = 0
    for _ in range(100):
        i = int(rng.integers(50))
        t1, t2 = rng.choice(8, 2, replace=False)
        others = [j for j in range(50) if cls[j] != cls[i]]
        j = others[int(rng.integers(len(others)))]
        t3 = int(rng.integers(8))
        d_same = float(((mus[i][int(t1)] - mus[i][int(t2)]) ** 2).sum())
        d_diff = float(((mus[i][int(t1)] - mus[j][t3]) ** 2).sum())
        ok += d_same < d_diff
    assert ok >= 80


def test_interpolate_background_same_video_near_constant(tiny_stack):
    """Sweeping z_back between frames of one video barely changes the output
    because their backgrounds coincide."""
    manifest = tiny_stack["manifest"]
    frames = formats.read_video(manifest.video_path(0))
    sweep = evaluate.interpolate_latent(frames[0], frames[-1], "z_back",
                                        steps=6, model=tiny_stack["model"])
    step_maes = [float(np.abs(sweep[s + 1] - sweep[s]).mean())
                 for s in range(5)]
    assert max(step_maes) < 0.02


def test_interpolation_moves_masked_region_most(tiny_stack):
    """Across a z_where sweep, pixels under the object masks change more than
    the rest of the frame."""
    manifest = tiny_stack["manifest"]
    model = tiny_stack["model"]
    frames = formats.read_video(manifest.video_path(0))
    sweep = evaluate.interpolate_latent(frames[0], frames[4], "z_where",
                                        steps=6, model=model)
    enc = codec.LatentEncoder(model)
    layout = enc.layout
    region = np.zeros((32, 32), dtype=bool)
    for frame in (frames[0], frames[4]):
        code = enc.encode_frame(frame)
        v = torch.from_numpy(code).unsqueeze(0)
        z_where = v[:, layout.where_slice(0)]
        z_p = v[:, layout.pose_slice(0)]
        z_c = v[:, layout.content_slice(0)]
        with torch.no_grad():
            _, mask = model.decode_object(z_p, z_c)
            pasted = model.paste(mask, z_where)[0, 0].numpy()
        region |= pasted > 0.2
    assert region.any() and (~region).any()
    change = np.abs(np.diff(sweep, axis=0)).mean(axis=(0, 3))
    assert change[region].mean() > change[~region].mean()


def test_predict_and_score_series_structure(tiny_stack):
    manifest = tiny_stack["manifest"]
    frames = formats.read_video(manifest.video_path(0))
    truth = synth.load_truth(manifest.truth_path(0))
    series = evaluate.predict_and_score(frames, truth, tiny_stack["model"],
                                        tiny_stack["predictor"],
                                        tiny_stack["frame_probe"], 32, 32)
    t_fut = tiny_stack["predictor"].config.t_fut
    assert set(series) == set(evaluate.REGRESSION_TASKS)
    for task, rows in series.items():
        assert len(rows) == t_fut
        assert [r["t"] for r in rows] == list(range(1, t_fut + 1))
        for r in rows:
            assert r["sq_error"] == pytest.approx(
                (r["prediction"] - r["truth"]) ** 2)


def test_predict_and_score_zero_motion_stays_flat(tiny_stack):
    """On static scenes the position-sum error must not grow with the
    horizon: every timestep stays within 2x of the first."""
    spec = synth.SynthesisSpec(height=32, width=32, digit_size=16,
                               n_objects_range=(1, 1), video_length=8,
                               velocity_range=(0.0, 0.0),
                               color_drift_rate=0.0, rng_seed=21)
    per_step = []
    for seed in range(4):
        video = synth.synthesize_video(spec, tiny_stack["glyphs"], None, seed=seed)
        truth = {"background_class": video.background_class,
                 "frames": video.truth}
        series = evaluate.predict_and_score(video.frames, truth,
                                            tiny_stack["model"],
                                            tiny_stack["predictor"],
                                            tiny_stack["frame_probe"], 32, 32)
        per_step.append([r["sq_error"] for r in series["position_sum"]])
    mse = np.mean(per_step, axis=0)
    assert (mse <= 2 * mse[0] + 1e-6).all()


def test_gt_frame_scoring_matches_probe_validation(tiny_stack):
    """Scoring ground-truth future frames reproduces probe-level error, not
    rollout error: it must sit within the probe's validation error range."""
    manifest = tiny_stack["manifest"]
    frames = formats.read_video(manifest.video_path(0))
    truth = synth.load_truth(manifest.truth_path(0))
    series = evaluate.predict_and_score(frames, truth, tiny_stack["model"],
                                        tiny_stack["predictor"],
                                        tiny_stack["frame_probe"], 32, 32)
    for task in evaluate.REGRESSION_TASKS:
        gt_mse = float(np.mean([r["gt_frame_sq_error"] for r in series[task]]))
        val = tiny_stack["frame_probe_val"][task]
        assert gt_mse <= 25 * val + 1e-6  # same order as held-out validation
