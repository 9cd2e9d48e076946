"""Label transfer between co-registered RGB and hyperspectral views, PCA
band reduction, segmentation metrics and a synthetic two-camera rig."""

__version__ = "0.1.0"

from .errors import RgbHsiError, TransferFailed
from .geometry import AffineTransform, FitConfig, connected_components, fit_affine, sample_contour, trace_contour
from .imaging import (
    CLASS_IDS,
    CLASS_NAMES,
    Annotation,
    AnnotationSet,
    HyperCube,
    LabelMask,
    PreprocessConfig,
    RasterImage,
    Rect,
    augment,
    preprocess,
    rasterize_annotations,
)
from .matching import AffineOracleMatcher, FileMatcher, LabelOracleMatcher, MatcherConfig, NccMatcher
from .metrics import IoUAccumulator, iou_per_class, median_freq_weights, miou
from .spectral import PcaModel, false_color, pca_apply, pca_fit
from .transfer import TransferConfig, manual_alignment, transfer_mask
from .synth import SceneConfig, generate_scene, render_views
