"""Seeded superpixel diffusion: activation maps + segmentation map -> label map."""

from .config import PipelineConfig
from .diffusion import (
    AffinityGraph,
    DiffusionField,
    SeedAssignment,
    build_affinity,
    diffuse_all_classes,
    solve_diffusion,
    solve_diffusion_jacobi,
    solve_diffusion_oracle,
)
from .evaluation import ConfusionMatrix, accumulate, iou_per_class, mean_iou
from .imagecore import (
    FloatMap,
    LabelMap,
    LabImage,
    RawImage,
    load_fmap,
    load_label_png,
    normalize_lab,
    rgb_to_lab,
    save_fmap,
    save_label_png,
)
from .labeling import ActivationSet, SeedReport, extract_seeds, fuse_labels, rasterize
from .pipeline import run_pipeline
from .superpixel import (
    Adjacency,
    FeatureTable,
    SuperpixelMap,
    build_adjacency,
    compute_features,
    enforce_connectivity,
    slic_segment,
)

__version__ = "0.1.0"
