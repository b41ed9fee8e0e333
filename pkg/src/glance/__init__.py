"""Gaze-driven ROI detection toolkit.

A lookup-table gaze estimator trainable by gradient descent, quantized
model serialization, gaze-to-ROI geometry with union-of-ROIs mosaics, a
temporal attention policy, rotation/motion ROI stabilization, and a
frame-sequence simulator with detector-agnostic accuracy and cost
accounting.
"""

__version__ = "0.1.0"

from .dwn import (
    Complexity,
    ConnectionMap,
    DwnConfig,
    GazeModel,
    GazeSample,
    InferenceCost,
    LinearHead,
    LutBank,
    ThresholdTable,
    angular_error,
    count_complexity,
    encode_hard,
    encode_soft,
    fit_thresholds,
    head_forward,
    infer_hard,
    init_model,
    loss,
    lut_forward_hard,
    lut_forward_soft,
    normalize_target,
    preprocess,
)
from .errors import (
    ConfigError,
    DataError,
    DetectorError,
    GazeAwayError,
    GlanceError,
    NumericsError,
    ParseError,
)
from .model_io import QuantizedModel, export_quantized, import_quantized, quantized_forward
from .policy import PolicyConfig, TemporalState, decay_after_run, should_refresh, temporal_update
from .roi import (
    Box,
    CameraIntrinsics,
    Fixation,
    Mosaic,
    RegionMask,
    Roi,
    backproject,
    build_mosaic,
    focal_length,
    project_gaze,
    propose_rois,
    roi_nms,
    roi_side,
    spatial_union,
    uncertainty_radius,
)
from .simulate import (
    Detection,
    ExternalDetector,
    FrameRecord,
    GtBox,
    OffsetGaze,
    OracleDetector,
    RunReport,
    SimOptions,
    accuracy,
    run_sequence,
    size_stratum,
    sweep,
)
from .stabilization import (
    BoxCache,
    PoseSample,
    WorldMap,
    inflate_roi,
    inflation_alpha,
    reproject_roi,
    rotation_shift,
    to_world,
)
from .training import AdamState, fit, stack_samples, train_step

__all__ = [name for name in dir() if not name.startswith("_")]
