"""Retinal fundus hemorrhage detection pipeline.

Enhancement, seed extraction, calibration, expanding-window adaptive
threshold segmentation, feature extraction, linear SVM classification and
a sensitivity/specificity evaluation harness.
"""

# Note: the stage entry points living in same-named modules (
# fundus_he.preprocess.preprocess, fundus_he.calibrate.calibrate) are not
# re-exported here so the module names stay importable.
from .calibrate import (
    CalibrateConfig,
    CalibrationProducts,
    NoRetinaError,
    build_calibration,
    retinal_border,
    retinal_mask,
    search_space,
)
from .config import PipelineConfig, load_config
from .evaluate import (
    ConfusionCounts,
    SplitManifest,
    annotate,
    confusion,
    make_split,
    sensitivity,
    specificity,
)
from .features import (
    CONVENTIONAL_FEATURE_NAMES,
    EXPECTED_DIMS,
    FeatureRecord,
    ScalerStats,
    SchemaError,
    apply_scaler,
    extract_conventional,
    fit_scaler,
    read_records,
    write_records,
)
from .preprocess import PreprocessConfig, adaptive_gamma, clahe, fuzzy_unsharp
from .raster import (
    ConnectedComponent,
    RasterError,
    StructuringElement,
    connected_components,
    crop,
    dilate,
    erode,
    green_channel,
    histogram,
    median_filter,
    open_mask,
    read_png,
    write_png,
)
from .seeds import (
    NoThresholdError,
    SeedConfig,
    SeedWindow,
    extract_seeds,
    glcm_cross_entropy_threshold,
    matched_filter,
)
from .segmentation import (
    DegenerateWindowError,
    NoObjectError,
    OtsuResult,
    Segment,
    SegmentConfig,
    WindowState,
    adaptive_thresholds,
    binarize_min,
    border_flags,
    expand_window,
    multilevel_otsu,
    prune_objects,
    segment_window,
)
from .svm import SvmModel, classify, predict, train

__version__ = "0.1.0"
