"""Memory-efficient two-stage future-video prediction.

Stage 1 learns a hierarchically disentangled per-frame representation
(background code, plus position / pose / content codes per object slot);
stage 2 converts the video dataset once into aligned latent sequences and
trains a recurrent predictor over those low-dimensional sequences only.
"""

from .codec import (
    LatentEncoder,
    LatentLayout,
    LatentManifest,
    LatentSequence,
    align_objects,
    convert_dataset,
    decode_latent_frame,
    load_latent_manifest,
)
from .config import PipelineConfig, validate_config
from .errors import (
    ConfigError,
    CorpusError,
    DataError,
    DivergenceError,
    EvaluationError,
    IncompatibilityError,
    LatentVideoError,
    ShapeError,
)
from .evaluate import (
    FrameProbe,
    ProbeResult,
    ProbeTask,
    disentanglement_ratio,
    interpolate_latent,
    predict_and_score,
    run_disentanglement,
    train_frame_probe,
    train_probe,
)
from .meter import (
    ActivationMeter,
    MemoryReport,
    measure_baseline_clip_step,
    measure_stage1_step,
    measure_stage2_step,
)
from .predictor import (
    PoseSplit,
    PredictorConfig,
    SequencePredictor,
    average_content,
    huber_loss,
    train_stage2,
)
from .recon import (
    LossReport,
    ReconConfig,
    ReconNet,
    composite,
    match_content,
    mix_content,
    sample_alpha,
    train_stage1,
)
from .synth import (
    DatasetManifest,
    GlyphCorpus,
    BackgroundCorpus,
    SynthesisSpec,
    Video,
    build_dataset,
    load_manifest,
    make_builtin_glyphs,
    make_pattern_backgrounds,
    sample_frame_pair,
    synthesize_video,
)
from .warp import crop_window, paste_window, window_to_zwhere

__version__ = "0.1.0"
