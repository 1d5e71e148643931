"""Command-line pipeline: synth -> train-recon -> encode -> train-pred ->
predict -> eval -> interp, driven by one JSON config.

Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence,
1 anything else. Each stage writes under <out_dir>/<stage>/ together with a
provenance hash of its upstream config; `all` skips stages whose outputs are
present and fresh unless --force is given.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from . import codec, evaluate, formats, predictor, recon, synth
from .config import PipelineConfig, apply_overrides, config_hash, stage_hashes, validate_config
from .errors import ConfigError, DataError, DivergenceError, LatentVideoError

STAGES = ("synth", "train-recon", "encode", "train-pred", "predict", "eval", "interp")
_STAGE_DIRS = {"synth": "dataset", "train-recon": "recon", "encode": "latents",
               "train-pred": "predictor", "predict": "predict", "eval": "eval",
               "interp": "interp"}
_STAGE_OUTPUTS = {"synth": "manifest.json", "train-recon": "recon.ckpt",
                  "encode": "manifest.json", "train-pred": "predictor.ckpt",
                  "predict": "predicted_00000.hvid", "eval": "report.json",
                  "interp": "interp_z_back.png"}


def _provenance_path(stage_dir: Path) -> Path:
    return stage_dir / "provenance.json"


def _is_fresh(cfg: PipelineConfig, stage: str) -> bool:
    d = cfg.stage_dir(_STAGE_DIRS[stage])
    prov = _provenance_path(d)
    if not prov.exists() or not (d / _STAGE_OUTPUTS[stage]).exists():
        return False
    return formats.read_json(prov).get("hash") == stage_hashes(cfg)[_STAGE_DIRS[stage]]


def _mark_done(cfg: PipelineConfig, stage: str) -> None:
    d = cfg.stage_dir(_STAGE_DIRS[stage])
    formats.write_json(_provenance_path(d),
                       {"hash": stage_hashes(cfg)[_STAGE_DIRS[stage]]})


def _load_corpora(cfg: PipelineConfig):
    glyph_dir = cfg.glyph_dir
    if glyph_dir is None:
        glyph_dir = cfg.out_dir / "corpus" / "glyphs"
        synth.make_builtin_glyphs(glyph_dir, classes=cfg.glyph_classes)
    glyphs = synth.GlyphCorpus(glyph_dir, cfg.synth.digit_size)
    backgrounds = None
    if cfg.synth.background_mode == "corpus-image":
        bg_dir = cfg.background_dir
        if bg_dir is None:
            bg_dir = cfg.out_dir / "corpus" / "backgrounds"
            synth.make_pattern_backgrounds(bg_dir, count=16, seed=cfg.seed)
        backgrounds = synth.BackgroundCorpus(bg_dir, cfg.synth.height, cfg.synth.width)
    return glyphs, backgrounds


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"missing {what}: {path} (run the upstream stage first)")
    return path


def _dataset(cfg: PipelineConfig) -> synth.DatasetManifest:
    return synth.load_manifest(
        _require(cfg.stage_dir("dataset") / "manifest.json", "dataset manifest"))


def _recon_ckpt(cfg: PipelineConfig) -> Path:
    return _require(cfg.stage_dir("recon") / "recon.ckpt", "checkpoint")


def _latents(cfg: PipelineConfig) -> codec.LatentManifest:
    return codec.load_latent_manifest(
        _require(cfg.stage_dir("latents") / "manifest.json", "latent manifest"))


def _pred_ckpt(cfg: PipelineConfig) -> Path:
    return _require(cfg.stage_dir("predictor") / "predictor.ckpt", "checkpoint")


# -----------------------------------------------------------------------------
# Stage implementations
# -----------------------------------------------------------------------------

def _cmd_synth(cfg: PipelineConfig) -> None:
    glyphs, backgrounds = _load_corpora(cfg)
    synth.build_dataset(cfg.synth, glyphs, backgrounds, cfg.synth_count,
                        cfg.stage_dir("dataset"))


def _cmd_train_recon(cfg: PipelineConfig) -> None:
    recon.train_stage1(_dataset(cfg), cfg.recon, cfg.stage_dir("recon"),
                       seed=cfg.seed)


def _cmd_encode(cfg: PipelineConfig) -> None:
    codec.convert_dataset(_dataset(cfg), _recon_ckpt(cfg), cfg.stage_dir("latents"))


def _cmd_train_pred(cfg: PipelineConfig) -> None:
    predictor.train_stage2(_latents(cfg), cfg.predictor,
                           cfg.stage_dir("predictor"), seed=cfg.seed + 1)


def _montage(rows: list[np.ndarray], path: Path) -> None:
    """Stack one or more (T,H,W,3) frame rows into a single PNG strip."""
    strips = [np.concatenate(list(r), axis=1) for r in rows]
    img = np.concatenate(strips, axis=0)
    Image.fromarray((np.clip(img, 0, 1) * 255).astype(np.uint8)).save(path)


def _cmd_predict(cfg: PipelineConfig) -> None:
    manifest = _dataset(cfg)
    model, _ = recon.ReconNet.load(_recon_ckpt(cfg))
    pred, _ = predictor.SequencePredictor.load(_pred_ckpt(cfg))
    out = cfg.stage_dir("predict")
    out.mkdir(parents=True, exist_ok=True)
    encoder = codec.LatentEncoder(model)
    t_past, t_fut = cfg.predictor.t_past, cfg.predictor.t_fut
    n = min(cfg.eval.get("predict_videos", 1), manifest.video_count)
    for i in range(n):
        frames = formats.read_video(manifest.video_path(i))
        latents = codec.align_objects(encoder.encode_video(frames[:t_past]),
                                      encoder.layout)
        future = pred.rollout(latents.frames, t_fut)
        decoded = np.stack([codec.decode_latent_frame(model, v) for v in future])
        formats.write_video(out / f"predicted_{i:05d}.hvid", decoded)
        _montage([frames[:t_past + t_fut], np.concatenate([frames[:t_past], decoded])],
                 out / f"predicted_{i:05d}.png")


def _plot_training_log(log_path: Path, keys: list[str], out_png: Path) -> None:
    records = formats.read_training_log(log_path)
    plt.figure(figsize=(7, 4))
    for key in keys:
        if records and key in records[0]:
            plt.plot([r["epoch"] for r in records], [r[key] for r in records], label=key)
    plt.xlabel("epoch")
    plt.ylabel("loss")
    plt.legend()
    plt.tight_layout()
    plt.savefig(out_png)
    plt.close()


def _cmd_eval(cfg: PipelineConfig) -> None:
    manifest = _dataset(cfg)
    latent_manifest = _latents(cfg)
    model, _ = recon.ReconNet.load(_recon_ckpt(cfg))
    pred, _ = predictor.SequencePredictor.load(_pred_ckpt(cfg))
    out = cfg.stage_dir("eval")
    out.mkdir(parents=True, exist_ok=True)
    ev = cfg.eval
    report: dict = {"config_hash": stage_hashes(cfg)["eval"]}

    results = evaluate.run_disentanglement(
        manifest, latent_manifest, tasks=tuple(ev["probe_tasks"]),
        trials=ev["probe_trials"], seed=cfg.seed, epochs=ev["probe_epochs"])
    report["disentanglement"] = {k: v.summary() for k, v in results.items()}

    probe, val = evaluate.train_frame_probe(manifest, seed=cfg.seed,
                                            epochs=ev["frame_probe_epochs"])
    report["frame_probe_validation_mse"] = val

    frames = formats.read_video(manifest.video_path(0))
    truth = synth.load_truth(manifest.truth_path(0))
    series = evaluate.predict_and_score(frames, truth, model, pred, probe,
                                        manifest.spec.width, manifest.spec.height)
    report["prediction_series"] = series

    with open(out / "prediction_series.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["task", "t", "prediction", "truth", "sq_error"])
        for task, rows in series.items():
            for row in rows:
                writer.writerow([task, row["t"], row["prediction"],
                                 row["truth"], row["sq_error"]])

    plt.figure(figsize=(7, 4))
    for task, rows in series.items():
        plt.plot([r["t"] for r in rows], [r["sq_error"] for r in rows],
                 marker="o", label=task)
    plt.xlabel("future timestep")
    plt.ylabel("squared error")
    plt.legend()
    plt.tight_layout()
    plt.savefig(out / "metric_vs_timestep.png")
    plt.close()

    mem2 = evaluate.measure_stage2_step(latent_manifest, cfg.predictor,
                                        batch=ev["memory_batch"])
    mem1 = evaluate.measure_stage1_step(cfg.recon, duration=cfg.synth.video_length,
                                        batch=min(ev["memory_batch"], cfg.recon.batch_size))
    base = evaluate.measure_baseline_clip_step(cfg.synth.height, cfg.synth.width,
                                               cfg.synth.video_length,
                                               batch=ev["memory_batch"])
    report["memory"] = {"stage1": mem1.to_dict(), "stage2": mem2.to_dict(),
                        "baseline_clip": base.to_dict()}

    recon_log = cfg.stage_dir("recon") / "recon_log.jsonl"
    if recon_log.exists():
        _plot_training_log(recon_log, ["recon", "total", "mask_mean"],
                           out / "recon_loss.png")
    pred_log = cfg.stage_dir("predictor") / "predictor_log.jsonl"
    if pred_log.exists():
        _plot_training_log(pred_log, ["huber"], out / "predictor_loss.png")

    formats.write_json(out / "report.json", report)


def _cmd_interp(cfg: PipelineConfig) -> None:
    manifest = _dataset(cfg)
    model, _ = recon.ReconNet.load(_recon_ckpt(cfg))
    out = cfg.stage_dir("interp")
    out.mkdir(parents=True, exist_ok=True)
    frames_a = formats.read_video(manifest.video_path(0))
    other = 1 if manifest.video_count > 1 else 0
    frames_b = formats.read_video(manifest.video_path(other))
    steps = cfg.eval.get("interp_steps", 6)
    for which in ("z_back", "z_where", "z_p", "z_c"):
        sweep = evaluate.interpolate_latent(frames_a[0], frames_b[-1], which,
                                            steps, model)
        _montage([sweep], out / f"interp_{which}.png")


_COMMANDS = {
    "synth": _cmd_synth,
    "train-recon": _cmd_train_recon,
    "encode": _cmd_encode,
    "train-pred": _cmd_train_pred,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "interp": _cmd_interp,
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentvideo",
                                description="Two-stage latent video prediction pipeline")
    p.add_argument("command", choices=list(STAGES) + ["all"])
    p.add_argument("--config", type=Path, default=None, help="JSON config path")
    p.add_argument("--seed", type=int, default=None, help="global seed override")
    p.add_argument("--force", action="store_true",
                   help="rerun stages even when outputs are fresh")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="config override (dotted path)")
    p.add_argument("--out-dir", type=Path, default=None, help="output root override")
    return p


def run_command(argv: list[str]) -> int:
    """Execute one subcommand; returns the process exit status."""
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0

    try:
        document = {}
        if args.config is not None:
            if not args.config.exists():
                raise ConfigError(f"config file not found: {args.config}")
            with open(args.config) as f:
                try:
                    document = json.load(f)
                except json.JSONDecodeError as e:
                    raise ConfigError(f"config is not valid JSON: {e}") from e
        document = apply_overrides(document, args.overrides)
        if args.seed is not None:
            document["seed"] = args.seed
            document.setdefault("synth", {}).setdefault("rng_seed", args.seed)
        if args.out_dir is not None:
            document["out_dir"] = str(args.out_dir)
        cfg = validate_config(document)

        if args.command == "all":
            for stage in STAGES:
                if not args.force and _is_fresh(cfg, stage):
                    print(f"[skip] {stage}: outputs up to date")
                    continue
                print(f"[run ] {stage}")
                _COMMANDS[stage](cfg)
                _mark_done(cfg, stage)
        else:
            _COMMANDS[args.command](cfg)
            _mark_done(cfg, args.command)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 4
    except LatentVideoError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # unexpected
        print(f"internal error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
