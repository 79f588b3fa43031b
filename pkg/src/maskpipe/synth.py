"""Deterministic synthetic scene generator: non-overlapping shapes rendered
into a ground-truth label map, a semantic map, and a boundary probability
map (blurred ground-truth contours plus optional noise).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .fusion import Instance, InstanceSet, write_instance_set
from .raster import (
    BinaryMask,
    LabelMap,
    ProbMap,
    SemanticMap,
    write_float_raster,
    write_semantic_png,
)

SHAPE_PALETTE = ("rectangle", "ellipse", "blob")


class GenerationError(Exception):
    """Scene spec could not be satisfied within the placement budget."""


@dataclass(frozen=True)
class SceneSpec:
    height: int = 416
    width: int = 416
    min_instances: int = 3
    max_instances: int = 6
    shapes: tuple[str, ...] = SHAPE_PALETTE
    num_classes: int = 3
    min_separation: int = 8
    blur_sigma: float = 1.0
    noise_sigma: float = 0.0
    min_radius_frac: float = 0.06
    max_radius_frac: float = 0.12
    max_attempts: int = 1000

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("image dimensions must be positive")
        if not 0 <= self.min_instances <= self.max_instances:
            raise ValueError("bad instance count range")
        if self.num_classes < 1:
            raise ValueError("need at least one foreground class")
        for s in self.shapes:
            if s not in SHAPE_PALETTE:
                raise ValueError(f"unknown shape {s!r}")


@dataclass
class Scene:
    image_id: str
    boundary: ProbMap
    semantic: SemanticMap
    labels: LabelMap
    instances: InstanceSet = field(default=None)


def _render_rectangle(h, w, cy, cx, ry, rx):
    m = np.zeros((h, w), dtype=bool)
    m[max(0, cy - ry): cy + ry + 1, max(0, cx - rx): cx + rx + 1] = True
    return m


def _render_ellipse(h, w, cy, cx, ry, rx):
    yy, xx = np.ogrid[:h, :w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _render_blob(h, w, cy, cx, radius, rng):
    k = int(rng.integers(6, 11))
    angles = np.linspace(0.0, 2.0 * np.pi, k, endpoint=False)
    radii = radius * rng.uniform(0.6, 1.0, size=k)
    pts = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
    # two rounds of corner-cutting subdivision to smooth the outline
    for _ in range(2):
        nxt = []
        for i in range(len(pts)):
            a = pts[i]
            b = pts[(i + 1) % len(pts)]
            nxt.append(0.75 * a + 0.25 * b)
            nxt.append(0.25 * a + 0.75 * b)
        pts = np.asarray(nxt)
    img = Image.new("L", (w, h), 0)
    ImageDraw.Draw(img).polygon([(float(x), float(y)) for x, y in pts], fill=1)
    return np.asarray(img, dtype=bool)


def _inner_contour(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with a 4-neighbor outside the mask (out of bounds counts
    as outside)."""
    cross = ndimage.generate_binary_structure(2, 1)
    return mask & ~ndimage.binary_erosion(mask, structure=cross, border_value=0)


def generate_scene(seed, spec: SceneSpec, image_id: str | None = None) -> Scene:
    """Render one scene from a seeded PRNG; identical (seed, spec) pairs give
    bitwise-identical output."""
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    n = int(rng.integers(spec.min_instances, spec.max_instances + 1))

    base = min(h, w)
    r_lo = max(2, int(round(spec.min_radius_frac * base)))
    r_hi = max(r_lo, int(round(spec.max_radius_frac * base)))

    labels = np.zeros((h, w), np.int32)
    blocked = np.zeros((h, w), dtype=bool)
    sep_se = np.ones((2 * spec.min_separation + 1,) * 2, dtype=bool) \
        if spec.min_separation > 0 else None
    masks: list[np.ndarray] = []
    attempts = 0
    while len(masks) < n:
        if attempts >= spec.max_attempts:
            raise GenerationError(
                f"placed {len(masks)} of {n} instances in {attempts} attempts"
            )
        attempts += 1
        shape = spec.shapes[int(rng.integers(0, len(spec.shapes)))]
        radius = int(rng.integers(r_lo, r_hi + 1))
        margin = radius + 2
        if 2 * margin >= min(h, w):
            continue
        cy = int(rng.integers(margin, h - margin))
        cx = int(rng.integers(margin, w - margin))
        if shape == "rectangle":
            ry = max(2, int(round(radius * float(rng.uniform(0.6, 1.0)))))
            rx = max(2, int(round(radius * float(rng.uniform(0.6, 1.0)))))
            m = _render_rectangle(h, w, cy, cx, ry, rx)
        elif shape == "ellipse":
            ry = max(2, int(round(radius * float(rng.uniform(0.6, 1.0)))))
            rx = max(2, int(round(radius * float(rng.uniform(0.6, 1.0)))))
            m = _render_ellipse(h, w, cy, cx, ry, rx)
        else:
            m = _render_blob(h, w, cy, cx, radius, rng)
        if not m.any() or (m & blocked).any():
            continue
        labels[m] = len(masks) + 1
        masks.append(m)
        grown = ndimage.binary_dilation(m, structure=sep_se) if sep_se is not None else m
        blocked |= grown

    classes = [int(rng.integers(1, spec.num_classes + 1)) for _ in masks]
    semantic = np.zeros((h, w), np.int32)
    contour = np.zeros((h, w), dtype=bool)
    for m, c in zip(masks, classes):
        semantic[m] = c
        contour |= _inner_contour(m)

    boundary = contour.astype(np.float64)
    if spec.blur_sigma > 0:
        boundary = ndimage.gaussian_filter(boundary, sigma=spec.blur_sigma)
        peak = boundary.max()
        if peak > 0:
            boundary = boundary / peak
    if spec.noise_sigma > 0:
        boundary = boundary + rng.normal(0.0, spec.noise_sigma, size=boundary.shape)
    boundary = np.clip(boundary, 0.0, 1.0).astype(np.float32)

    image_id = image_id or f"scene_{seed}"
    instances = InstanceSet(
        image_id=image_id,
        instances=[
            Instance(mask=BinaryMask(m), class_id=c, score=1.0)
            for m, c in zip(masks, classes)
        ],
    )
    return Scene(
        image_id=image_id,
        boundary=ProbMap(boundary),
        semantic=SemanticMap(semantic, spec.num_classes),
        labels=LabelMap(labels),
        instances=instances,
    )


def scene_seed(master_seed: int, index: int):
    """Per-scene PRNG key derived from the master seed."""
    return np.random.SeedSequence([int(master_seed), int(index)])


def write_scene(scene: Scene, out_dir) -> None:
    """Write <id>_boundary.bfr, <id>_semantic.png, and the ground-truth
    instance set (<id>.png + <id>.csv)."""
    os.makedirs(out_dir, exist_ok=True)
    write_float_raster(
        scene.boundary, os.path.join(out_dir, f"{scene.image_id}_boundary.bfr")
    )
    write_semantic_png(
        scene.semantic, os.path.join(out_dir, f"{scene.image_id}_semantic.png")
    )
    write_instance_set(scene.instances, out_dir, image_id=scene.image_id)
