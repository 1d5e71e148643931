"""Single-document pipeline configuration with defaults and validation.

The config is one JSON object with per-stage sections (synth, recon,
predictor, eval) plus a global seed. Validation fills documented defaults,
rejects unknown keys and type mismatches with field-path diagnostics, and
enforces cross-stage consistency (frame sizes, slot counts, sequence
lengths). Stage outputs are keyed by a content hash of the upstream config so
staleness is detectable.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .predictor import PredictorConfig
from .recon import ReconConfig
from .synth import SynthesisSpec

_DEFAULTS = {
    "seed": 0,
    "out_dir": "runs/default",
    "synth": {
        "height": 32, "width": 32, "digit_size": 12,
        "n_objects_range": [1, 2], "video_length": 16,
        "velocity_range": [1.0, 3.0], "color_drift_rate": 0.02,
        "background_mode": "flat-color", "rng_seed": 0,
        "count": 50, "glyph_dir": None, "background_dir": None,
        "glyph_classes": [0, 1, 2, 3, 4],
    },
    "recon": {
        "height": 32, "width": 32, "sub_height": 16, "sub_width": 16,
        "n_slots": 2, "k_back": 64, "k_pose": 16, "k_content": 32,
        "total_epochs": 30,
        "w_recon": 1.0, "w_kl": 1e-3, "w_adv_img": 0.1, "w_back": 1.0,
        "w_content": 1.0, "w_adv_pose": 0.1, "w_mask": 2.0,
        "triplet_margin": 0.5, "mask_cutoff_fraction": 0.5,
        "learning_rate": 1e-3, "batch_size": 16, "pairs_per_video": 16,
        "r1_gamma": 1.0,
    },
    "predictor": {
        "t_past": 8, "t_fut": 8, "hidden": 128, "huber_delta": 1.0,
        "learning_rate": 1e-3, "epochs": 50, "batch_size": 32,
    },
    "eval": {
        "probe_tasks": ["digit_sum"], "probe_trials": 5, "probe_epochs": 60,
        "frame_probe_epochs": 20, "interp_steps": 6, "predict_videos": 1,
        "memory_batch": 8,
    },
}

_SYNTH_EXTRAS = ("count", "glyph_dir", "background_dir", "glyph_classes")


@dataclass
class PipelineConfig:
    seed: int
    out_dir: Path
    synth: SynthesisSpec
    synth_count: int
    glyph_dir: str | None
    background_dir: str | None
    glyph_classes: list[int]
    recon: ReconConfig
    predictor: PredictorConfig
    eval: dict = field(default_factory=dict)

    def stage_dir(self, stage: str) -> Path:
        return self.out_dir / stage


def _merge(defaults, user, path: str):
    """Overlay user values on defaults, rejecting unknown keys and wrong types."""
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(user).__name__}")
    out = dict(defaults)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"{where}: unknown field")
        base = defaults[key]
        if isinstance(base, dict):
            out[key] = _merge(base, value, where)
        elif isinstance(base, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}: expected bool, got {value!r}")
            out[key] = value
        elif isinstance(base, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}: expected integer, got {value!r}")
            out[key] = value
        elif isinstance(base, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}: expected number, got {value!r}")
            out[key] = float(value)
        elif isinstance(base, list):
            if not isinstance(value, list):
                raise ConfigError(f"{where}: expected list, got {value!r}")
            out[key] = value
        elif base is None:
            if value is not None and not isinstance(value, str):
                raise ConfigError(f"{where}: expected string or null, got {value!r}")
            out[key] = value
        else:
            if not isinstance(value, str):
                raise ConfigError(f"{where}: expected string, got {value!r}")
            out[key] = value
    return out


def validate_config(document: dict) -> PipelineConfig:
    """Normalize a raw JSON document into a validated PipelineConfig."""
    merged = _merge(_DEFAULTS, document, "")

    synth_d = dict(merged["synth"])
    extras = {k: synth_d.pop(k) for k in _SYNTH_EXTRAS}
    synth_d["n_objects_range"] = tuple(synth_d["n_objects_range"])
    synth_d["velocity_range"] = tuple(synth_d["velocity_range"])
    try:
        spec = SynthesisSpec(**synth_d)
        spec.validate()
    except ConfigError as e:
        raise ConfigError(f"synth: {e}") from e
    try:
        recon = ReconConfig(**merged["recon"])
        recon.validate()
    except ConfigError as e:
        raise ConfigError(f"recon: {e}") from e
    try:
        pred = PredictorConfig(**merged["predictor"])
        pred.validate()
    except ConfigError as e:
        raise ConfigError(f"predictor: {e}") from e

    if extras["count"] < 1:
        raise ConfigError("synth.count: must be >= 1")

    # cross-section consistency
    if spec.max_objects != recon.n_slots:
        raise ConfigError(
            f"synth.n_objects_range[1]={spec.max_objects} conflicts with "
            f"recon.n_slots={recon.n_slots}")
    if (spec.height, spec.width) != (recon.height, recon.width):
        raise ConfigError(
            f"synth.height/width=({spec.height},{spec.width}) conflicts with "
            f"recon.height/width=({recon.height},{recon.width})")
    if spec.video_length < pred.t_past + pred.t_fut:
        raise ConfigError(
            f"synth.video_length={spec.video_length} is shorter than "
            f"predictor.t_past+predictor.t_fut={pred.t_past + pred.t_fut}")

    return PipelineConfig(
        seed=merged["seed"], out_dir=Path(merged["out_dir"]),
        synth=spec, synth_count=extras["count"],
        glyph_dir=extras["glyph_dir"], background_dir=extras["background_dir"],
        glyph_classes=list(extras["glyph_classes"]),
        recon=recon, predictor=pred, eval=merged["eval"],
    )


def apply_overrides(document: dict, pairs: list[str]) -> dict:
    """Apply repeatable --set key=value overrides (dotted paths, JSON values)."""
    out = json.loads(json.dumps(document))  # deep copy
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p} is not an object")
        node[parts[-1]] = value
    return out


def config_hash(obj) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def stage_hashes(cfg: PipelineConfig) -> dict[str, str]:
    """Chained content hashes: each stage's key covers its upstream config."""
    h_synth = config_hash({"seed": cfg.seed, "synth": cfg.synth.to_dict(),
                           "count": cfg.synth_count, "glyphs": cfg.glyph_dir,
                           "backgrounds": cfg.background_dir,
                           "classes": cfg.glyph_classes})
    h_recon = config_hash({"up": h_synth, "recon": cfg.recon.to_dict()})
    h_latents = config_hash({"up": h_recon})
    h_pred = config_hash({"up": h_latents, "predictor": cfg.predictor.to_dict()})
    h_eval = config_hash({"up": h_pred, "eval": cfg.eval})
    return {"dataset": h_synth, "recon": h_recon, "latents": h_latents,
            "predictor": h_pred, "predict": h_pred, "eval": h_eval,
            "interp": h_recon}
