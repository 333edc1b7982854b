"""Synthetic fast-moving-object sequences: generation, segmentation,
tracking and evaluation."""

from .config import RunConfig, config_from_dict, config_to_dict, load_config, \
    save_config
from .dataset import (
    RenderConfig,
    SequenceSample,
    build_sequence,
    derive_seed,
    easy_regime,
    generate_dataset,
    read_dataset,
    synthetic_clip,
    write_dataset,
)
from .errors import (
    ConfigError,
    DataError,
    FmotrackError,
    NumericalError,
    ProtocolError,
    ProtocolTimeout,
)
from .metrics import (
    Counts,
    Metrics,
    aggregate,
    format_csv,
    format_report,
    iou,
    match_frame,
    rasterize_polygon,
)
from .renderer import (
    ForegroundSprite,
    RenderParams,
    ball_template,
    make_gt_mask,
    median_background,
    synthesize_frame,
    tint_and_resize,
)
from .segment import (
    BaselineSegmenter,
    ExternalSegmenter,
    MaskPrediction,
    baseline_segment,
    make_segmenter,
    serve_forever,
)
from .synthgen import (
    ArenaConfig,
    BounceSurface,
    PathPSF,
    Trajectory,
    TrajectoryConfig,
    generate_trajectory,
    label_fmo,
    rasterize_psf,
)
from .tracker import (
    Blob,
    StreakTracker,
    Track,
    TrackerParams,
    TrackStatus,
    connected_components,
    kalman_init,
    kalman_predict,
    kalman_update,
    read_track_jsonl,
    score_blobs,
    track_sequence,
    write_track_jsonl,
)

__version__ = "0.1.0"
