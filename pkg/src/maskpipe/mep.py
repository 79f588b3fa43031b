"""Mask extraction pipeline: NMS thinning, connected-component labeling,
marker-based watershed, and the refinement pass (closing, semantic filter,
small-component removal).

The CCL and watershed inner loops are numba-compiled; everything else is
vectorized numpy / scipy.ndimage.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from .raster import BinaryMask, LabelMap, ProbMap, SemanticMap, ValidationError


@dataclass(frozen=True)
class MepConfig:
    boundary_threshold: float = 0.5
    min_component_area: int = 16
    closing_radius: int = 1
    connectivity: int = 4  # marker extraction connectivity

    def __post_init__(self):
        if not 0.0 <= self.boundary_threshold <= 1.0:
            raise ValidationError(
                f"boundary_threshold {self.boundary_threshold} outside [0,1]"
            )
        if self.min_component_area < 0:
            raise ValidationError("min_component_area must be >= 0")
        if self.closing_radius < 0:
            raise ValidationError("closing_radius must be >= 0")
        if self.connectivity not in (4, 8):
            raise ValidationError(f"connectivity must be 4 or 8, got {self.connectivity}")


class DisjointSet:
    """Union-find with path compression and union by rank."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return ra


# ---------------------------------------------------------------------------
# NMS edge thinning

def nms_thin(boundary: ProbMap, threshold: float, orient_sigma: float = 1.5) -> BinaryMask:
    """Keep pixels that are >= threshold and are strict-or-tie local maxima
    along the quantized ridge-normal direction.

    Gradients come from central differences on an edge-replicated surface.
    The comparison direction is the dominant orientation of the local
    structure tensor (gradient outer products smoothed by orient_sigma):
    at a ridge crest the raw gradient is near zero and its direction is
    dominated by along-ridge slope, which would punch holes into closed
    contours; the tensor average of the flank gradients recovers the true
    normal.  Directions are quantized to {0, 45, 90, 135} degrees and
    out-of-bounds neighbors never suppress a pixel.
    """
    p = boundary.data.astype(np.float64)
    padded = np.pad(p, 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    if orient_sigma > 0:
        jxx = ndimage.gaussian_filter(gx * gx, orient_sigma)
        jxy = ndimage.gaussian_filter(gx * gy, orient_sigma)
        jyy = ndimage.gaussian_filter(gy * gy, orient_sigma)
    else:
        jxx, jxy, jyy = gx * gx, gx * gy, gy * gy
    angle = np.degrees(0.5 * np.arctan2(2.0 * jxy, jxx - jyy)) % 180.0
    # bins: 0deg -> horizontal neighbors, 45deg -> down-right/up-left,
    # 90deg -> vertical, 135deg -> down-left/up-right
    bins = ((angle + 22.5) // 45.0).astype(np.int64) % 4

    low = np.pad(p, 1, mode="constant", constant_values=-np.inf)

    def shift(dr, dc):
        return low[1 + dr : 1 + dr + p.shape[0], 1 + dc : 1 + dc + p.shape[1]]

    offsets = {
        0: ((0, -1), (0, 1)),
        1: ((1, 1), (-1, -1)),
        2: ((-1, 0), (1, 0)),
        3: ((1, -1), (-1, 1)),
    }
    keep = np.zeros(p.shape, dtype=bool)
    for b, ((dr1, dc1), (dr2, dc2)) in offsets.items():
        sel = bins == b
        keep |= sel & (p >= shift(dr1, dc1)) & (p >= shift(dr2, dc2))
    keep &= p >= threshold
    return BinaryMask(keep)


# ---------------------------------------------------------------------------
# Two-scan connected-component labeling

@njit(cache=True)
def _ccl_two_scan(mask, eight_connected):
    H, W = mask.shape
    labels = np.zeros((H, W), np.int32)
    # provisional labels: worst case (checkerboard) is ceil(H*W/2) + 1
    cap = H * W // 2 + 2
    parent = np.empty(cap, np.int32)
    rank = np.zeros(cap, np.int8)
    next_label = 1

    for r in range(H):
        for c in range(W):
            if not mask[r, c]:
                continue
            best = 0
            # scan-order neighbors: left, up (+ diagonals for 8-connectivity)
            if c > 0 and mask[r, c - 1]:
                best = labels[r, c - 1]
            if r > 0:
                if mask[r - 1, c]:
                    lab = labels[r - 1, c]
                    best = lab if best == 0 else _uf_union(parent, rank, best, lab)
                if eight_connected:
                    if c > 0 and mask[r - 1, c - 1]:
                        lab = labels[r - 1, c - 1]
                        best = lab if best == 0 else _uf_union(parent, rank, best, lab)
                    if c < W - 1 and mask[r - 1, c + 1]:
                        lab = labels[r - 1, c + 1]
                        best = lab if best == 0 else _uf_union(parent, rank, best, lab)
            if best == 0:
                best = next_label
                parent[best] = best
                next_label += 1
            labels[r, c] = best

    # second scan: resolve roots, renumber densely in first-encounter order
    remap = np.zeros(next_label, np.int32)
    k = 0
    for r in range(H):
        for c in range(W):
            lab = labels[r, c]
            if lab == 0:
                continue
            root = _uf_find(parent, lab)
            if remap[root] == 0:
                k += 1
                remap[root] = k
            labels[r, c] = remap[root]
    return labels, k


@njit(cache=True, inline="always")
def _uf_find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True, inline="always")
def _uf_union(parent, rank, a, b):
    ra = _uf_find(parent, a)
    rb = _uf_find(parent, b)
    if ra == rb:
        return ra
    if rank[ra] < rank[rb]:
        ra, rb = rb, ra
    parent[rb] = ra
    if rank[ra] == rank[rb]:
        rank[ra] += 1
    return ra


def ccl_label(non_boundary: BinaryMask, connectivity: int = 4) -> LabelMap:
    """Two-scan union-find labeling with labels densely renumbered 1..K in
    first-encounter raster order; mask-false pixels get 0."""
    if connectivity not in (4, 8):
        raise ValidationError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, _ = _ccl_two_scan(
        non_boundary.data.astype(np.uint8), connectivity == 8
    )
    return LabelMap(labels)


# ---------------------------------------------------------------------------
# Priority-flood watershed

@njit(cache=True)
def _watershed_flood(costbits, markers, H, W):
    # binary min-heap keyed by (cost, insertion seq) packed into one uint64;
    # IEEE bit pattern of a non-negative float32 is order-preserving
    N = H * W
    out = markers.copy()
    cap = 4 * N + 8
    hkey = np.empty(cap, np.uint64)
    hpix = np.empty(cap, np.int64)
    hlab = np.empty(cap, np.int32)
    size = 0
    seq = np.uint64(0)

    dr = np.array([-1, 1, 0, 0], np.int64)
    dc = np.array([0, 0, -1, 1], np.int64)

    # seed: unlabeled 4-neighbors of marker pixels, raster order
    for r in range(H):
        for c in range(W):
            lab = markers[r * W + c]
            if lab == 0:
                continue
            for k in range(4):
                nr = r + dr[k]
                nc = c + dc[k]
                if nr < 0 or nr >= H or nc < 0 or nc >= W:
                    continue
                n = nr * W + nc
                if out[n] != 0:
                    continue
                key = (np.uint64(costbits[n]) << np.uint64(32)) | seq
                seq += np.uint64(1)
                size = _heap_push(hkey, hpix, hlab, size, key, n, lab)

    while size > 0:
        p = hpix[0]
        lab = hlab[0]
        size = _heap_pop(hkey, hpix, hlab, size)
        if out[p] != 0:
            continue
        out[p] = lab
        r = p // W
        c = p % W
        for k in range(4):
            nr = r + dr[k]
            nc = c + dc[k]
            if nr < 0 or nr >= H or nc < 0 or nc >= W:
                continue
            n = nr * W + nc
            if out[n] != 0:
                continue
            key = (np.uint64(costbits[n]) << np.uint64(32)) | seq
            seq += np.uint64(1)
            size = _heap_push(hkey, hpix, hlab, size, key, n, lab)
    return out


@njit(cache=True, inline="always")
def _heap_push(hkey, hpix, hlab, size, key, pix, lab):
    i = size
    hkey[i] = key
    hpix[i] = pix
    hlab[i] = lab
    while i > 0:
        par = (i - 1) // 2
        if hkey[par] <= hkey[i]:
            break
        hkey[par], hkey[i] = hkey[i], hkey[par]
        hpix[par], hpix[i] = hpix[i], hpix[par]
        hlab[par], hlab[i] = hlab[i], hlab[par]
        i = par
    return size + 1


@njit(cache=True, inline="always")
def _heap_pop(hkey, hpix, hlab, size):
    last = size - 1
    hkey[0] = hkey[last]
    hpix[0] = hpix[last]
    hlab[0] = hlab[last]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        smallest = i
        if l < last and hkey[l] < hkey[smallest]:
            smallest = l
        if r < last and hkey[r] < hkey[smallest]:
            smallest = r
        if smallest == i:
            break
        hkey[smallest], hkey[i] = hkey[i], hkey[smallest]
        hpix[smallest], hpix[i] = hpix[i], hpix[smallest]
        hlab[smallest], hlab[i] = hlab[i], hlab[smallest]
        i = smallest
    return last


def watershed_flood(cost: ProbMap, markers: LabelMap) -> LabelMap:
    """Priority-flood watershed from marker seeds over a cost surface.

    The minimum-cost frontier pixel is popped first; equal costs are broken
    FIFO by insertion order, so the output is deterministic.  Marker pixels
    keep their input labels.
    """
    if cost.data.shape != markers.data.shape:
        raise ValidationError(
            f"cost {cost.data.shape} vs markers {markers.data.shape} dimension mismatch"
        )
    H, W = cost.data.shape
    costbits = np.ascontiguousarray(cost.data, dtype=np.float32).ravel().view(np.uint32)
    out = _watershed_flood(costbits, markers.data.ravel().copy(), H, W)
    return LabelMap(out.reshape(H, W))


# ---------------------------------------------------------------------------
# Refinement

def _square_se(radius: int) -> np.ndarray:
    side = 2 * radius + 1
    return np.ones((side, side), dtype=bool)


def renumber_dense(labels: np.ndarray) -> np.ndarray:
    """Renumber positive labels to 1..K in first-encounter raster order."""
    flat = labels.ravel()
    pos = flat[flat > 0]
    if pos.size == 0:
        return labels.astype(np.int32, copy=True)
    # first-encounter order == order of first index of each unique value
    _, first_idx = np.unique(pos, return_index=True)
    order = np.argsort(first_idx)
    remap = np.zeros(int(flat.max()) + 1, np.int32)
    uniq = np.unique(pos)
    remap[uniq[order]] = np.arange(1, len(uniq) + 1, dtype=np.int32)
    return remap[labels]


def refine(instances: LabelMap, semantic: SemanticMap, config: MepConfig) -> LabelMap:
    """Per-instance closing, semantic filtering, small-component removal,
    dense relabeling.  When closing makes two instances claim a pixel the
    lowest label wins."""
    if instances.data.shape != semantic.data.shape:
        raise ValidationError("instances vs semantic dimension mismatch")
    labels = instances.data
    out = np.zeros_like(labels)
    se = _square_se(config.closing_radius)
    for lab in range(1, labels.max(initial=0) + 1):
        m = labels == lab
        if not m.any():
            continue
        if config.closing_radius > 0:
            dilated = ndimage.binary_dilation(m, structure=se)
            closed = ndimage.binary_erosion(dilated, structure=se, border_value=1)
        else:
            closed = m
        out[closed & (out == 0)] = lab
    out[semantic.data == 0] = 0
    if config.min_component_area > 0:
        # per-label connected components, so filtering leftovers (thin
        # fragments of a basin that straddled the semantic border) die even
        # when the label's total area is large
        for lab in np.unique(out):
            if lab == 0:
                continue
            comps, _ = _ccl_two_scan((out == lab).astype(np.uint8), False)
            areas = np.bincount(comps.ravel())
            small = np.flatnonzero(areas < config.min_component_area)
            out[(out == lab) & np.isin(comps, small[small > 0])] = 0
    return LabelMap(renumber_dense(out))


# ---------------------------------------------------------------------------
# Full pipeline

def extract_masks(
    boundary: ProbMap,
    semantic: SemanticMap,
    config: MepConfig | None = None,
    apply_refine: bool = True,
) -> LabelMap:
    """NMS thinning -> CCL on non-boundary pixels -> small-marker suppression
    -> priority-flood watershed over the boundary probabilities -> refinement.
    Deterministic for fixed inputs and config."""
    config = config or MepConfig()
    if boundary.data.shape != semantic.data.shape:
        raise ValidationError("boundary vs semantic dimension mismatch")
    thin = nms_thin(boundary, config.boundary_threshold)
    markers = ccl_label(BinaryMask(~thin.data), config.connectivity)
    marker_arr = markers.data
    if config.min_component_area > 0 and marker_arr.max(initial=0) > 0:
        areas = np.bincount(marker_arr.ravel())
        small = np.flatnonzero(areas < config.min_component_area)
        marker_arr = marker_arr.copy()
        marker_arr[np.isin(marker_arr, small[small > 0])] = 0
        marker_arr = renumber_dense(marker_arr)
    flooded = watershed_flood(boundary, LabelMap(marker_arr))
    # with several basins, the mostly-background one is the scene background,
    # not an instance; without this the filter step would keep its slivers of
    # contour-band pixels that happen to lie inside an object's class region.
    # A lone basin (no boundary evidence) stays: the semantic filter alone
    # then carves out the instances.
    basins = flooded.data.copy()
    labs = [lab for lab in np.unique(basins) if lab != 0]
    if len(labs) > 1:
        for lab in labs:
            votes = np.bincount(semantic.data[basins == lab])
            if int(votes.argmax()) == 0:
                basins[basins == lab] = 0
    basins = renumber_dense(basins)
    if not apply_refine:
        return LabelMap(basins)
    return refine(LabelMap(basins), semantic, config)
