"""Scalar loss formulas and attention-block forward math, with analytic
gradients suitable for finite-difference verification.

All math runs in 64-bit by default; pass dtype=np.float32 for the
raster-scale path.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import BinaryMask, ProbMap, SemanticMap, ValidationError

EPS = 1e-7

OVERALL_WEIGHTS_DEFAULT = (0.3, 50.0, 1.0)


# ---------------------------------------------------------------------------
# weighted boundary loss

def class_balance_weight(y: np.ndarray) -> float:
    """|Y-| / (|Y-| + |Y+|) over a binary ground-truth map."""
    n_pos = int(np.count_nonzero(y))
    n_neg = y.size - n_pos
    return n_neg / y.size


def boundary_loss(b: ProbMap, y: BinaryMask, dtype=np.float64):
    """Class-balanced binary cross-entropy over a boundary map.

    Returns (scalar loss, per-pixel gradient w.r.t. the clamped
    probabilities).  Probabilities are clamped to [EPS, 1-EPS] before the
    logs.
    """
    if b.data.shape != y.data.shape:
        raise ValidationError("boundary vs ground-truth dimension mismatch")
    bb = np.clip(b.data.astype(dtype), EPS, 1.0 - EPS)
    yy = y.data.astype(dtype)
    alpha = class_balance_weight(y.data)
    if alpha in (0.0, 1.0):
        warnings.warn(
            f"ground truth is single-class; balance weight degenerates to {alpha}",
            stacklevel=2,
        )
    loss = -np.sum(yy * alpha * np.log(bb) + (1.0 - yy) * (1.0 - alpha) * np.log1p(-bb))
    grad = -(yy * alpha / bb - (1.0 - yy) * (1.0 - alpha) / (1.0 - bb))
    return float(loss), grad


# ---------------------------------------------------------------------------
# weighted pixel contrastive loss

@dataclass(frozen=True)
class ContrastBatch:
    anchor: np.ndarray  # (D,)
    positives: np.ndarray  # (P, D)
    negatives: np.ndarray  # (N, D); N may be 0
    temperature: float
    alpha: float  # class-balance weight in [0, 1]

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.anchor, dtype=np.float64))
        p = np.atleast_2d(np.asarray(self.positives, dtype=np.float64))
        n = np.asarray(self.negatives, dtype=np.float64).reshape(-1, a.shape[0]) \
            if np.asarray(self.negatives).size else np.zeros((0, a.shape[0]))
        if p.shape[0] == 0:
            raise ValidationError("contrastive batch needs at least one positive")
        if p.shape[1] != a.shape[0] or n.shape[1] != a.shape[0]:
            raise ValidationError("embedding dimensions inconsistent")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError("alpha must lie in [0, 1]")
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "positives", p)
        object.__setattr__(self, "negatives", n)


def contrast_loss(batch: ContrastBatch):
    """Weighted InfoNCE-style loss over one anchor.

    L = (1/|P|) sum_p -alpha * log( e_p / (e_p + (1-alpha) * sum_n e_n) )
    with e_x = exp(anchor . x / tau).  Negatives are down-weighted by
    (1-alpha) inside the denominator only.

    Returns (loss, grad_anchor, grad_positives, grad_negatives).
    """
    a = batch.anchor
    pos = batch.positives
    neg = batch.negatives
    tau = batch.temperature
    alpha = batch.alpha
    P = pos.shape[0]

    t_pos = pos @ a / tau
    t_neg = neg @ a / tau
    shift = max(t_pos.max(initial=-np.inf), t_neg.max(initial=-np.inf))
    e_pos = np.exp(t_pos - shift)
    e_neg = np.exp(t_neg - shift)
    s_neg = e_neg.sum()
    denom = e_pos + (1.0 - alpha) * s_neg  # shifted by exp(-shift)

    loss = (alpha / P) * float(np.sum(np.log(denom) + shift - t_pos))

    # ratios e/denom are shift-invariant
    r_pos = e_pos / denom  # (P,)
    inv_denom = 1.0 / denom
    grad_a = (alpha / (P * tau)) * (
        r_pos @ pos
        + (1.0 - alpha) * inv_denom.sum() * (e_neg @ neg)
        - pos.sum(axis=0)
    )
    grad_pos = (alpha / (P * tau)) * np.outer(r_pos - 1.0, a)
    grad_neg = (alpha * (1.0 - alpha) / (P * tau)) * np.outer(
        e_neg * inv_denom.sum(), a
    )
    return loss, grad_a, grad_pos, grad_neg


# ---------------------------------------------------------------------------
# attention block forward math

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class MauWeights:
    """Weights for the mutual-attention forward pass.

    mlp_* implement one shared hidden-layer perceptron (ReLU hidden) applied
    to both pooled channel descriptors; conv7 holds a 7x7 kernel over the
    2-channel pooled spatial stack; conv1 is a 1x1 channel-mixing matrix.
    """

    mlp_w1: np.ndarray  # (hidden, C)
    mlp_b1: np.ndarray  # (hidden,)
    mlp_w2: np.ndarray  # (C, hidden)
    mlp_b2: np.ndarray  # (C,)
    conv7: np.ndarray  # (2, 7, 7)
    conv7_bias: float
    conv1: np.ndarray  # (C, C)
    conv1_bias: np.ndarray  # (C,)
    beta: float

    def __post_init__(self):
        c = self.mlp_w1.shape[1]
        hidden = self.mlp_w1.shape[0]
        if self.mlp_b1.shape != (hidden,) or self.mlp_w2.shape != (c, hidden):
            raise ValidationError("MLP weight shapes inconsistent")
        if self.mlp_b2.shape != (c,):
            raise ValidationError("MLP output bias shape inconsistent")
        if self.conv7.shape != (2, 7, 7):
            raise ValidationError(f"conv7 must be (2,7,7), got {self.conv7.shape}")
        if self.conv1.shape != (c, c) or self.conv1_bias.shape != (c,):
            raise ValidationError("conv1 shapes inconsistent")

    @property
    def channels(self) -> int:
        return self.mlp_w1.shape[1]

    @classmethod
    def identity(cls, channels: int, beta: float = 0.0) -> "MauWeights":
        """Identity 1x1 mixing, zero everything else."""
        hidden = max(1, channels // 16)
        return cls(
            mlp_w1=np.zeros((hidden, channels)),
            mlp_b1=np.zeros(hidden),
            mlp_w2=np.zeros((channels, hidden)),
            mlp_b2=np.zeros(channels),
            conv7=np.zeros((2, 7, 7)),
            conv7_bias=0.0,
            conv1=np.eye(channels),
            conv1_bias=np.zeros(channels),
            beta=beta,
        )

    @classmethod
    def random(cls, rng: np.random.Generator, channels: int, hidden: int | None = None,
               beta: float = 1.0) -> "MauWeights":
        hidden = hidden or max(1, channels // 16)
        return cls(
            mlp_w1=rng.standard_normal((hidden, channels)),
            mlp_b1=rng.standard_normal(hidden),
            mlp_w2=rng.standard_normal((channels, hidden)),
            mlp_b2=rng.standard_normal(channels),
            conv7=rng.standard_normal((2, 7, 7)),
            conv7_bias=float(rng.standard_normal()),
            conv1=rng.standard_normal((channels, channels)),
            conv1_bias=rng.standard_normal(channels),
            beta=beta,
        )


def _mlp(weights: MauWeights, v: np.ndarray) -> np.ndarray:
    h = np.maximum(weights.mlp_w1 @ v + weights.mlp_b1, 0.0)
    return weights.mlp_w2 @ h + weights.mlp_b2


def mau_forward(features: np.ndarray, weights: MauWeights) -> np.ndarray:
    """Forward pass of the mutual-attention unit over a C x H x W tensor.

    Channel gate: sigmoid(MLP(avg-pooled) + MLP(max-pooled)).
    Spatial gate: sigmoid(7x7 conv over [channel-avg; channel-max]), same
    padding.  Identity path: 1x1 conv.  Output =
    identity + (features * channel_gate + features * spatial_gate) * beta.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 3:
        raise ValidationError(f"expected C x H x W tensor, got shape {f.shape}")
    if f.shape[0] != weights.channels:
        raise ValidationError(
            f"channel mismatch: features {f.shape[0]} vs weights {weights.channels}"
        )
    gate_c = _sigmoid(_mlp(weights, f.mean(axis=(1, 2))) + _mlp(weights, f.max(axis=(1, 2))))
    avg_s = f.mean(axis=0)
    max_s = f.max(axis=0)
    conv = (
        ndimage.correlate(avg_s, weights.conv7[0], mode="constant")
        + ndimage.correlate(max_s, weights.conv7[1], mode="constant")
        + weights.conv7_bias
    )
    gate_s = _sigmoid(conv)
    identity = np.einsum("oc,chw->ohw", weights.conv1, f) + weights.conv1_bias[:, None, None]
    return identity + (f * gate_c[:, None, None] + f * gate_s[None, :, :]) * weights.beta


# ---------------------------------------------------------------------------
# semantic contour extraction

def semantic_contours(semantic: SemanticMap) -> BinaryMask:
    """Pixels whose class id differs from any 4-neighbor; border pixels are
    compared only against in-bounds neighbors."""
    s = semantic.data
    edge = np.zeros(s.shape, dtype=bool)
    edge[:-1, :] |= s[:-1, :] != s[1:, :]
    edge[1:, :] |= s[1:, :] != s[:-1, :]
    edge[:, :-1] |= s[:, :-1] != s[:, 1:]
    edge[:, 1:] |= s[:, 1:] != s[:, :-1]
    return BinaryMask(edge)


# ---------------------------------------------------------------------------
# combined objective and semantic cross-entropy

def overall_loss(lp: float, lb: float, ls: float,
                 weights: tuple[float, float, float] = OVERALL_WEIGHTS_DEFAULT) -> float:
    """Weighted sum of the contrastive, boundary, and semantic losses."""
    for v in (lp, lb, ls):
        if not np.isfinite(v):
            raise ValidationError(f"non-finite loss component {v}")
    a, b, g = weights
    return a * lp + b * lb + g * ls


def cross_entropy_pixelwise(logits: np.ndarray, target: SemanticMap, dtype=np.float64):
    """Mean per-pixel softmax cross-entropy.

    logits: C x H x W; target class ids index the channel axis.
    Returns (loss, gradient w.r.t. logits).
    """
    z = np.asarray(logits, dtype=dtype)
    if z.ndim != 3:
        raise ValidationError(f"expected C x H x W logits, got shape {z.shape}")
    c, h, w = z.shape
    t = target.data
    if t.shape != (h, w):
        raise ValidationError("logits vs target dimension mismatch")
    if t.max(initial=0) >= c:
        raise ValidationError(f"target class {int(t.max())} >= channel count {c}")
    shift = z.max(axis=0, keepdims=True)
    ez = np.exp(z - shift)
    denom = ez.sum(axis=0, keepdims=True)
    log_sm = (z - shift) - np.log(denom)
    picked = np.take_along_axis(log_sm, t[None, :, :], axis=0)[0]
    loss = float(-picked.mean())
    onehot = np.zeros_like(z)
    np.put_along_axis(onehot, t[None, :, :], 1.0, axis=0)
    grad = (ez / denom - onehot) / (h * w)
    return loss, grad
