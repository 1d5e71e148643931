import numpy as np
import pytest
import torch

from latentvideo import codec, evaluate, formats, predictor, recon, synth
from latentvideo.codec import LatentLayout
from latentvideo.recon import ReconConfig

TINY_EPOCHS = 30


@pytest.fixture(scope="session")
def glyph_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("glyphs")
    synth.make_builtin_glyphs(d, classes=range(5))
    return d


@pytest.fixture(scope="session")
def glyphs(glyph_dir):
    return synth.GlyphCorpus(glyph_dir, digit_size=12)


@pytest.fixture(scope="session")
def background_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("backgrounds")
    synth.make_pattern_backgrounds(d, count=8, size=48, seed=0)
    return d


@pytest.fixture()
def tiny_spec():
    return synth.SynthesisSpec(height=32, width=32, digit_size=12,
                               n_objects_range=(1, 2), video_length=8,
                               velocity_range=(1.0, 3.0), color_drift_rate=0.02,
                               background_mode="flat-color", rng_seed=11)


@pytest.fixture(scope="session")
def small_recon_config():
    return ReconConfig(height=32, width=32, sub_height=16, sub_width=16,
                       n_slots=2, total_epochs=10, batch_size=4,
                       pairs_per_video=1)


@pytest.fixture(scope="session")
def small_model(small_recon_config):
    torch.manual_seed(0)
    from latentvideo.recon import ReconNet
    model = ReconNet(small_recon_config)
    model.eval()
    return model


@pytest.fixture()
def layout():
    return LatentLayout(k_back=6, n_slots=3, k_pose=2, k_content=4)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_stack(tmp_path_factory):
    """One real training run shared by the acceptance and post-training
    property tests: 32x32 single-digit videos, 30 stage-1 epochs, latent
    conversion, a short stage-2 run, and a pixel-space probe.

    Takes around 15 minutes on CPU; everything downstream reuses it.
    """
    root = tmp_path_factory.mktemp("tiny_stack")
    gdir = root / "glyphs"
    synth.make_builtin_glyphs(gdir, classes=range(5))
    corpus = synth.GlyphCorpus(gdir, digit_size=16)
    spec = synth.SynthesisSpec(height=32, width=32, digit_size=16,
                               n_objects_range=(1, 1), video_length=8,
                               velocity_range=(1.0, 3.0), rng_seed=3)
    manifest = synth.build_dataset(spec, corpus, None, count=50, out_dir=root / "ds")
    config = ReconConfig(height=32, width=32, sub_height=16, sub_width=16,
                         n_slots=1, total_epochs=TINY_EPOCHS, batch_size=16,
                         pairs_per_video=24)
    recon.train_stage1(manifest, config, root / "recon", seed=0)
    model, _ = recon.ReconNet.load(root / "recon" / "recon.ckpt")
    latent_manifest = codec.convert_dataset(manifest, root / "recon" / "recon.ckpt",
                                            root / "latents")
    pred_config = predictor.PredictorConfig(t_past=4, t_fut=4, hidden=64,
                                            epochs=40)
    predictor.train_stage2(latent_manifest, pred_config, root / "predictor",
                           seed=1)
    pred_model, _ = predictor.SequencePredictor.load(
        root / "predictor" / "predictor.ckpt")
    probe, probe_val = evaluate.train_frame_probe(manifest, seed=0, epochs=15)
    return {
        "root": root,
        "spec": spec,
        "glyphs": corpus,
        "manifest": manifest,
        "config": config,
        "model": model,
        "latents": latent_manifest,
        "predictor": pred_model,
        "frame_probe": probe,
        "frame_probe_val": probe_val,
        "log": formats.read_training_log(root / "recon" / "recon_log.jsonl"),
    }
