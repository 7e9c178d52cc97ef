"""fungiforge: curation and benchmarking toolkit for direct-examination
fungal microscopy images.

Pipeline: patch -> filter -> review -> split/kfold -> train -> report.
"""

from .augment import AugmentPolicy, augment, augment_array
from .dataset import (
    CLASS_ORDER,
    FoldPlan,
    Manifest,
    ManifestRow,
    SplitAssignment,
    build_manifest,
    holdout_split,
    kfold_plan,
    verify_split,
)
from .filtering import (
    FilterThresholds,
    PatchVerdict,
    Verdict,
    calibrate_thresholds,
    classify_patch,
    filter_run,
)
from .harness import (
    EvalResult,
    RunConfig,
    TrainRecord,
    early_stop,
    evaluate,
    external_backend_run,
    train,
)
from .imaging import (
    ImageBuffer,
    LuminancePlane,
    Rect,
    RegionStats,
    decode_image,
    region_stats,
    resize_bilinear,
    to_luminance,
)
from .nn import MicroCNN, MicroCnnArch, cross_entropy, softmax
from .optim import AdamState, adam_step, init_adam
from .patching import GridPlan, Patch, extract_patches, patch_id, plan_grid
from .reporting import FoldResult, RunSummary, export_curves, fold_stats, render_report
from .rng import PortableRng, derive_key

__version__ = "0.1.0"
