"""Deterministic synthetic fixtures with known ground truth."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import (
    FloatMap,
    LabelMap,
    RawImage,
    save_class_table,
    save_fmap,
    save_image,
    save_label_png,
)

VARIANTS = ("two-blob", "checker", "gradient")
CLASS_TABLE = ((0, "background"), (1, "object_a"), (2, "object_b"))

IMAGE_FILE = "image.png"
MASK_FILE = "m.fmap"
GT_FILE = "gt.png"
CLASSES_FILE = "classes.txt"


def activation_file(c):
    return f"act_{c}.fmap"


@dataclass(frozen=True)
class Fixture:
    image: RawImage
    m: FloatMap
    activations: tuple  # ((class, FloatMap), ...)
    gt: LabelMap


def _gauss_bump(shape, cy, cx, sigma):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))


def _noisy_mask(gt, rng, noise, band=2):
    """Object-union indicator whose boundary band is partly replaced by noise."""
    fg = gt > 0
    m = fg.astype(np.float64)
    if noise > 0:
        inside = ndimage.distance_transform_edt(fg)
        outside = ndimage.distance_transform_edt(~fg)
        near = ((inside > 0) & (inside <= band)) | ((outside > 0) & (outside <= band))
        flip = near & (rng.random(gt.shape) < noise)
        m[flip] = rng.random(int(flip.sum()))
    return m


def _finish(rgb, gt, objects, rng, noise):
    """objects: list of (class, cy, cx, radius) used to place activation peaks."""
    rgb = np.clip(np.round(rgb), 0, 255).astype(np.uint8)
    acts = {}
    for c, cy, cx, r in objects:
        bump = _gauss_bump(gt.shape, cy, cx, max(0.35 * r, 1.0))
        acts[c] = np.maximum(acts.get(c, 0.0), bump)
    m = _noisy_mask(gt, rng, noise)
    return Fixture(
        RawImage(rgb),
        FloatMap(m),
        tuple((c, FloatMap(acts[c])) for c in sorted(acts)),
        LabelMap(gt, class_table=CLASS_TABLE),
    )


def _two_blob(rng, size, noise):
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w]
    bg = rng.uniform(95, 135, 3)
    rgb = np.broadcast_to(bg, (h, w, 3)) + rng.normal(0, 3, (h, w, 3))
    gt = np.zeros((h, w), dtype=np.uint8)
    palettes = [np.array([200.0, 45.0, 40.0]), np.array([40.0, 70.0, 210.0])]
    placed = []
    for _ in range(10000):
        if len(placed) == 2:
            break
        ry, rx = rng.uniform(0.14, 0.22, 2) * size
        cy = rng.uniform(ry + 2, h - ry - 2)
        cx = rng.uniform(rx + 2, w - rx - 2)
        if any(
            np.hypot(cy - py, cx - px) < max(ry, rx) + max(pry, prx) + 4
            for py, px, pry, prx in placed
        ):
            continue
        placed.append((cy, cx, ry, rx))
    else:
        raise RuntimeError("could not place two separated blobs")
    objects = []
    for c, (cy, cx, ry, rx) in enumerate(placed, start=1):
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        color = palettes[c - 1] + rng.uniform(-15, 15, 3)
        rgb[inside] = color + rng.normal(0, 3, (int(inside.sum()), 3))
        gt[inside] = c
        objects.append((c, cy, cx, min(ry, rx)))
    return _finish(rgb, gt, objects, rng, noise)


def _checker(rng, size, cells=4):
    h = w = size
    cell = size / cells
    gap = max(int(cell * 0.15), 1)
    bg = rng.uniform(110, 140, 3)
    rgb = np.broadcast_to(bg, (h, w, 3)).copy()
    gt = np.zeros((h, w), dtype=np.uint8)
    colors = {1: np.array([210.0, 60.0, 50.0]), 2: np.array([50.0, 180.0, 70.0])}
    objects = []
    for i in range(cells):
        for j in range(cells):
            c = 1 + (i + j) % 2
            y0, y1 = int(i * cell) + gap, int((i + 1) * cell) - gap
            x0, x1 = int(j * cell) + gap, int((j + 1) * cell) - gap
            rgb[y0:y1, x0:x1] = colors[c] + rng.uniform(-10, 10, 3)
            gt[y0:y1, x0:x1] = c
            objects.append((c, (y0 + y1 - 1) / 2, (x0 + x1 - 1) / 2, (y1 - y0) / 2))
    return rgb, gt, objects


def _gradient(rng, size):
    h = w = size
    t = np.linspace(0.0, 1.0, w)[None, :, None]
    left = np.array([70.0, 80.0, 95.0]) + rng.uniform(-8, 8, 3)
    right = np.array([175.0, 165.0, 140.0]) + rng.uniform(-8, 8, 3)
    rgb = np.broadcast_to(left + t * (right - left), (h, w, 3)).copy()
    gt = np.zeros((h, w), dtype=np.uint8)
    colors = {1: np.array([215.0, 40.0, 120.0]), 2: np.array([30.0, 190.0, 60.0])}
    objects = []
    for c, (fy, fx) in ((1, (0.3, 0.28)), (2, (0.68, 0.7))):
        hh, hw = rng.uniform(0.12, 0.18, 2) * size
        cy = fy * size + rng.uniform(-3, 3)
        cx = fx * size + rng.uniform(-3, 3)
        y0, y1 = int(round(cy - hh)), int(round(cy + hh))
        x0, x1 = int(round(cx - hw)), int(round(cx + hw))
        rgb[y0:y1, x0:x1] = colors[c] + rng.uniform(-10, 10, 3)
        gt[y0:y1, x0:x1] = c
        objects.append((c, (y0 + y1 - 1) / 2, (x0 + x1 - 1) / 2, min(y1 - y0, x1 - x0) / 2))
    return rgb, gt, objects


def make_fixture(variant, seed, size=96, noise=0.3):
    """Build a fixture; identical (variant, seed, size, noise) give identical data."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if size < 16:
        raise ValueError("fixtures need size >= 16")
    if not 0 <= noise <= 1:
        raise ValueError("noise must be in [0, 1]")
    rng = np.random.default_rng(seed)
    if variant == "two-blob":
        return _two_blob(rng, size, noise)
    if variant == "checker":
        rgb, gt, objects = _checker(rng, size)
    else:
        rgb, gt, objects = _gradient(rng, size)
    return _finish(rgb, gt, objects, rng, noise)


def write_fixture(fixture, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    save_image(fixture.image, os.path.join(out_dir, IMAGE_FILE))
    save_fmap(fixture.m, os.path.join(out_dir, MASK_FILE))
    for c, fmap in fixture.activations:
        save_fmap(fmap, os.path.join(out_dir, activation_file(c)))
    save_label_png(fixture.gt, os.path.join(out_dir, GT_FILE))
    save_class_table(CLASS_TABLE, os.path.join(out_dir, CLASSES_FILE))
