"""Image + segmentation map + activations -> pixel-level label map."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .config import PipelineConfig
from .diffusion import build_affinity, diffuse_all_classes
from .errors import DimensionMismatch, NonConvergence
from .imagecore import normalize_lab, rgb_to_lab
from .labeling import ActivationSet, extract_seeds, fuse_labels, rasterize
from .superpixel import build_adjacency, compute_features, slic_segment

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineResult:
    label_map: object
    superpixels: object
    graph: object
    seeds: object
    fields: dict
    converged: bool


def run_pipeline(image, m, activations, class_table, config=None, workers=1):
    """Label every pixel of ``image``.

    Parameters
    ----------
    image : RawImage
    m : FloatMap
        Class-agnostic segmentation map.
    activations : ActivationSet or iterable of (class index, FloatMap)
    class_table : sequence of (index, name)
    config : PipelineConfig, optional

    Returns
    -------
    PipelineResult
        ``converged`` is False when some class hit the iteration cap; the
        label map is still built from the partial solution.
    """
    cfg = config or PipelineConfig()
    if not isinstance(activations, ActivationSet):
        activations = ActivationSet(tuple(activations))
    shape = (image.height, image.width)
    if m.data.shape != shape or activations.maps[0][1].data.shape != shape:
        raise DimensionMismatch("image, M and activation maps must share dimensions")
    n_classes = len(class_table)
    for c in activations.classes:
        if c >= n_classes:
            raise ValueError(f"activation class {c} not in class table")

    lab = normalize_lab(rgb_to_lab(image))
    k = min(cfg.slic_k, image.height * image.width)
    sp = slic_segment(lab, k, cfg.slic_compactness, cfg.slic_iters)
    feats = compute_features(sp, lab, m)
    graph = build_affinity(build_adjacency(sp), feats, cfg.sigma, cfg.affinity_norm)
    report = extract_seeds(sp, activations, m, cfg.seed_frac, cfg.bg_thresh)
    log.debug("%d superpixels, %d edges", sp.n, graph.edges.shape[0])

    converged = True
    try:
        fields = diffuse_all_classes(
            graph,
            report.per_class,
            tol=cfg.solver_tol,
            max_iters=cfg.max_iters_for(sp.n),
            mode=cfg.diffusion_mode,
            jacobi_iters=cfg.jacobi_iters,
            workers=workers,
        )
    except NonConvergence as exc:
        fields = exc.fields
        converged = False
    classes = fuse_labels(fields, report, cfg.accept_thresh)
    label_map = rasterize(sp, classes, class_table)
    return PipelineResult(label_map, sp, graph, report, fields, converged)
