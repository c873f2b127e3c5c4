"""SLIC oversegmentation, connectivity repair, region adjacency and features."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DimensionMismatch, KTooLarge

# Normalized Lab differences are multiplied by this before they meet the
# compactness term, so compactness keeps its usual meaning (Lab spans ~100).
COLOR_SCALE = 100.0


@dataclass(frozen=True)
class SuperpixelMap:
    assignment: np.ndarray
    n: int

    def __post_init__(self):
        arr = np.array(self.assignment, dtype=np.int64)
        if arr.ndim != 2:
            raise DimensionMismatch(f"assignment must be 2-D, got {arr.shape}")
        n = int(self.n)
        if arr.size == 0 or arr.min() < 0 or arr.max() >= n:
            raise ValueError("superpixel ids must lie in [0, n)")
        if np.any(np.bincount(arr.ravel(), minlength=n) == 0):
            raise ValueError("every superpixel id in [0, n) must occur")
        arr.setflags(write=False)
        object.__setattr__(self, "assignment", arr)
        object.__setattr__(self, "n", n)

    @property
    def height(self):
        return self.assignment.shape[0]

    @property
    def width(self):
        return self.assignment.shape[1]

    def sizes(self):
        return np.bincount(self.assignment.ravel(), minlength=self.n)


@dataclass(frozen=True)
class Adjacency:
    """Undirected region adjacency; ``edges`` is (E, 2) with i < j, sorted."""

    n: int
    edges: np.ndarray

    def edge_set(self):
        return {(int(i), int(j)) for i, j in self.edges}


@dataclass(frozen=True)
class FeatureTable:
    """Per-superpixel (L, a, b, M) means, all on the normalized [0, 1] scale."""

    features: np.ndarray

    @property
    def n(self):
        return self.features.shape[0]


def relabel_sequential(labels):
    """Renumber ``labels`` to 0..N-1 in order of first raster appearance."""
    flat = np.asarray(labels).ravel()
    uniq, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank[inverse].reshape(np.shape(labels)), uniq.size


def _grid_shape(h, w, k):
    ny = int(np.clip(round(math.sqrt(k * h / w)), 1, min(h, k)))
    nx = int(np.clip(k // ny, 1, w))
    return ny, nx


def _gradient_magnitude(img):
    pad = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gx = pad[1:-1, 2:] - pad[1:-1, :-2]
    gy = pad[2:, 1:-1] - pad[:-2, 1:-1]
    return np.sum(gx**2, axis=-1) + np.sum(gy**2, axis=-1)


def _initial_centers(img, ny, nx):
    h, w, _ = img.shape
    sy, sx = h / ny, w / nx
    grad = _gradient_magnitude(img)
    centers = []
    for i in range(ny):
        for j in range(nx):
            cy = min(int((i + 0.5) * sy), h - 1)
            cx = min(int((j + 0.5) * sx), w - 1)
            # move to the lowest-gradient pixel of the 3x3 neighbourhood;
            # only strictly lower values move, so flat regions keep the grid
            by, bx, best = cy, cx, grad[cy, cx]
            for y in range(max(cy - 1, 0), min(cy + 2, h)):
                for x in range(max(cx - 1, 0), min(cx + 2, w)):
                    if grad[y, x] < best:
                        by, bx, best = y, x, grad[y, x]
            centers.append((*img[by, bx], float(by), float(bx)))
    return np.array(centers, dtype=np.float64)


def slic_segment(lab, k=600, compactness=10.0, iters=10):
    """SLIC superpixels on a normalized Lab image.

    Parameters
    ----------
    lab : LabImage
        Must be normalized.
    k : int
        Requested number of superpixels; the grid holds at most ``k`` seeds.
    compactness : float
        Weight of the spatial term. 0 gives pure colour clustering.
    iters : int
        Number of assignment/update rounds.

    Returns
    -------
    SuperpixelMap
        Connected superpixels, at most ``2 * k`` of them.
    """
    if not lab.normalized:
        raise ValueError("slic_segment expects a normalized LabImage")
    img = lab.data
    h, w, _ = img.shape
    n_pix = h * w
    if k > n_pix:
        raise KTooLarge(f"k={k} exceeds pixel count {n_pix}")
    if k < 1 or iters < 1:
        raise ValueError("k and iters must be >= 1")
    if compactness < 0:
        raise ValueError("compactness must be non-negative")

    ny, nx = _grid_shape(h, w, k)
    sy, sx = h / ny, w / nx
    centers = _initial_centers(img, ny, nx)
    n_clusters = centers.shape[0]
    step = math.sqrt(n_pix / n_clusters)
    spatial_w = (compactness / step) ** 2
    ry, rx = int(math.ceil(sy)), int(math.ceil(sx))

    yy, xx = np.mgrid[0:h, 0:w]
    labels = (
        np.minimum((yy / sy).astype(np.int64), ny - 1) * nx
        + np.minimum((xx / sx).astype(np.int64), nx - 1)
    )
    color = img * COLOR_SCALE
    flat_color = color.reshape(-1, 3)
    flat_y = yy.ravel().astype(np.float64)
    flat_x = xx.ravel().astype(np.float64)

    for _ in range(iters):
        dist = np.full((h, w), np.inf)
        for c in range(n_clusters):
            cl, ca, cb, cy, cx = centers[c]
            iy, ix = int(round(cy)), int(round(cx))
            y0, y1 = max(iy - ry, 0), min(iy + ry + 1, h)
            x0, x1 = max(ix - rx, 0), min(ix + rx + 1, w)
            win = color[y0:y1, x0:x1]
            dc = (
                (win[..., 0] - cl * COLOR_SCALE) ** 2
                + (win[..., 1] - ca * COLOR_SCALE) ** 2
                + (win[..., 2] - cb * COLOR_SCALE) ** 2
            )
            ds = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            d = dc + spatial_w * ds
            # strict < : on ties the lower cluster id (visited first) wins
            better = d < dist[y0:y1, x0:x1]
            dist[y0:y1, x0:x1][better] = d[better]
            labels[y0:y1, x0:x1][better] = c

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=n_clusters).astype(np.float64)
        live = counts > 0
        sums = np.stack(
            [np.bincount(flat, weights=flat_color[:, ch], minlength=n_clusters) for ch in range(3)]
            + [
                np.bincount(flat, weights=flat_y, minlength=n_clusters),
                np.bincount(flat, weights=flat_x, minlength=n_clusters),
            ],
            axis=1,
        )
        means = sums[live] / counts[live, None]
        means[:, :3] /= COLOR_SCALE
        centers[live] = means

    relabeled, n = relabel_sequential(labels)
    sp = SuperpixelMap(relabeled, n)
    return enforce_connectivity(sp, min_size=n_pix / (4 * k), max_segments=2 * k)


def _pixel_pairs(arr):
    """Flat indices of horizontally and vertically adjacent pixel pairs."""
    h, w = arr.shape
    idx = np.arange(h * w).reshape(h, w)
    a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return a, b


def enforce_connectivity(sp, min_size=0, max_segments=None):
    """Split labels into 4-connected regions and absorb small ones.

    Every 4-connected fragment becomes its own region. Regions smaller than
    ``min_size`` pixels are then merged, smallest first, into their largest
    neighbouring region; merging also continues while more than
    ``max_segments`` regions remain. Ids are renumbered by first raster
    appearance.
    """
    lab = sp.assignment
    h, w = lab.shape
    n_pix = h * w
    a, b = _pixel_pairs(lab)
    flat = lab.ravel()
    same = flat[a] == flat[b]
    graph = coo_matrix(
        (np.ones(int(same.sum()), dtype=np.int8), (a[same], b[same])), shape=(n_pix, n_pix)
    )
    n_comp, comp = connected_components(graph, directed=False)
    comp = comp.astype(np.int64)

    sizes = np.bincount(comp, minlength=n_comp).astype(np.int64)
    diff = ~same
    ca, cb = comp[a[diff]], comp[b[diff]]
    lo, hi = np.minimum(ca, cb), np.maximum(ca, cb)
    pairs = np.unique(lo * n_comp + hi) if lo.size else np.array([], dtype=np.int64)
    neighbours = [set() for _ in range(n_comp)]
    for p in pairs.tolist():
        i, j = divmod(p, n_comp)
        neighbours[i].add(j)
        neighbours[j].add(i)

    parent = np.arange(n_comp)
    limit = n_comp if max_segments is None else max(int(max_segments), 1)
    count = n_comp
    heap = [(int(s), c) for c, s in enumerate(sizes)]
    heapq.heapify(heap)
    while heap and count > 1:
        s, c = heap[0]
        if parent[c] != c or sizes[c] != s:
            heapq.heappop(heap)
            continue
        if s >= min_size and count <= limit:
            break
        heapq.heappop(heap)
        if not neighbours[c]:
            continue
        target = min(neighbours[c], key=lambda t: (-sizes[t], t))
        parent[c] = target
        sizes[target] += s
        for nb in neighbours[c]:
            neighbours[nb].discard(c)
            if nb != target:
                neighbours[nb].add(target)
                neighbours[target].add(nb)
        neighbours[c] = set()
        heapq.heappush(heap, (int(sizes[target]), target))
        count -= 1

    # resolve merge chains
    root = parent.copy()
    while True:
        nxt = root[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    merged, n = relabel_sequential(root[comp].reshape(h, w))
    return SuperpixelMap(merged, n)


def build_adjacency(sp):
    """Exact 4-adjacency edge set between superpixels."""
    a, b = _pixel_pairs(sp.assignment)
    flat = sp.assignment.ravel()
    la, lb = flat[a], flat[b]
    diff = la != lb
    lo = np.minimum(la[diff], lb[diff])
    hi = np.maximum(la[diff], lb[diff])
    keys = np.unique(lo * sp.n + hi)
    edges = np.stack([keys // sp.n, keys % sp.n], axis=1).astype(np.int64)
    edges.setflags(write=False)
    return Adjacency(sp.n, edges.reshape(-1, 2))


def region_means(sp, values):
    """Mean of ``values`` (H x W or H x W x C) over each superpixel."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[:2] != sp.assignment.shape:
        raise DimensionMismatch(
            f"values shape {values.shape[:2]} != superpixel map {sp.assignment.shape}"
        )
    flat = sp.assignment.ravel()
    counts = np.bincount(flat, minlength=sp.n).astype(np.float64)
    if values.ndim == 2:
        return np.bincount(flat, weights=values.ravel(), minlength=sp.n) / counts
    chans = values.reshape(flat.size, -1)
    return np.stack(
        [np.bincount(flat, weights=chans[:, c], minlength=sp.n) for c in range(chans.shape[1])],
        axis=1,
    ) / counts[:, None]


def compute_features(sp, lab, m):
    """Mean normalized (L, a, b) and mean segmentation value per superpixel."""
    if not lab.normalized:
        raise ValueError("compute_features expects a normalized LabImage")
    if lab.data.shape[:2] != sp.assignment.shape or m.data.shape != sp.assignment.shape:
        raise DimensionMismatch("superpixel map, Lab image and M must share dimensions")
    stacked = np.concatenate([lab.data, m.data[..., None].astype(np.float64)], axis=-1)
    feats = np.clip(region_means(sp, stacked), 0.0, 1.0)
    feats.setflags(write=False)
    return FeatureTable(feats)
