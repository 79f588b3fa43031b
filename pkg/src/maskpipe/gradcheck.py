"""Finite-difference verification of the analytic loss gradients, plus the
scalar invariant checks exposed by the `losscheck` CLI subcommand.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .raster import BinaryMask, ProbMap, SemanticMap

FD_STEP = 1e-3
REL_TOL = 1e-4


def central_difference(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function, elementwise in x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    g = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        g[i] = (hi - lo) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((diff / scale).max(initial=0.0))


# ---------------------------------------------------------------------------
# per-loss single-trial checks; each returns the worst relative error seen

def check_boundary_grad(rng: np.random.Generator, negate: bool = False) -> float:
    h, w = 8, 8
    b = rng.uniform(0.1, 0.9, size=(h, w))
    y = rng.random((h, w)) < 0.5
    if not y.any() or y.all():
        y[0, 0] = True
        y[0, 1] = False
    ymask = BinaryMask(y)
    _, grad = losses.boundary_loss(ProbMap(b), ymask)  # float64 path
    if negate:
        grad = -grad

    def f64(x):
        bb = np.clip(x, losses.EPS, 1.0 - losses.EPS)
        yy = y.astype(np.float64)
        alpha = losses.class_balance_weight(y)
        return float(-np.sum(yy * alpha * np.log(bb)
                             + (1 - yy) * (1 - alpha) * np.log1p(-bb)))

    numeric = central_difference(f64, b)
    return max_rel_error(grad, numeric)


def check_contrast_grad(rng: np.random.Generator, negate: bool = False) -> float:
    d = 8
    n_pos = int(rng.integers(1, 5))
    n_neg = int(rng.integers(0, 6))
    anchor = rng.standard_normal(d)
    pos = rng.standard_normal((n_pos, d))
    neg = rng.standard_normal((n_neg, d))
    tau = float(rng.uniform(0.1, 1.0))
    alpha = float(rng.uniform(0.1, 0.9))

    def make(a, p, n):
        return losses.ContrastBatch(a, p, n, tau, alpha)

    _, ga, gp, gn = losses.contrast_loss(make(anchor, pos, neg))
    if negate:
        ga, gp, gn = -ga, -gp, -gn
    worst = 0.0
    worst = max(worst, max_rel_error(
        ga, central_difference(lambda a: losses.contrast_loss(make(a, pos, neg))[0], anchor)))
    worst = max(worst, max_rel_error(
        gp, central_difference(lambda p: losses.contrast_loss(make(anchor, p, neg))[0], pos)))
    if n_neg:
        worst = max(worst, max_rel_error(
            gn, central_difference(lambda n: losses.contrast_loss(make(anchor, pos, n))[0], neg)))
    return worst


def check_cross_entropy_grad(rng: np.random.Generator, negate: bool = False) -> float:
    c, h, w = 3, 4, 4
    logits = rng.standard_normal((c, h, w))
    target = SemanticMap(rng.integers(0, c, size=(h, w)).astype(np.int32), c)
    _, grad = losses.cross_entropy_pixelwise(logits, target)
    if negate:
        grad = -grad
    numeric = central_difference(
        lambda z: losses.cross_entropy_pixelwise(z, target)[0], logits
    )
    return max_rel_error(grad, numeric)


# ---------------------------------------------------------------------------
# suite runner

@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float
    passed: bool
    failing_seed: int | None = None


GRAD_CHECKS = {
    "boundary_loss": check_boundary_grad,
    "contrast_loss": check_contrast_grad,
    "cross_entropy": check_cross_entropy_grad,
}


def run_gradient_suite(trials: int, seed: int, negate: bool = False) -> list[CheckResult]:
    results = []
    for name, check in GRAD_CHECKS.items():
        worst = 0.0
        failing = None
        for t in range(trials):
            case_seed = seed * 1_000_003 + t
            err = check(np.random.default_rng(case_seed), negate=negate)
            if err > worst:
                worst = err
            if err >= REL_TOL and failing is None:
                failing = case_seed
        results.append(CheckResult(name, worst, REL_TOL, worst < REL_TOL, failing))
    return results


def run_invariant_checks(seed: int) -> list[CheckResult]:
    """Scalar identities that need no finite differences."""
    rng = np.random.default_rng(seed)
    results = []

    # balance-weight symmetry: flipping labels and probabilities together
    # leaves the loss unchanged
    b = rng.uniform(0.05, 0.95, size=(6, 6)).astype(np.float32)
    y = rng.random((6, 6)) < 0.4
    y[0, 0], y[0, 1] = True, False
    l1, _ = losses.boundary_loss(ProbMap(b), BinaryMask(y))
    l2, _ = losses.boundary_loss(ProbMap(1.0 - b), BinaryMask(~y))
    err = abs(l1 - l2) / max(1.0, abs(l1))
    results.append(CheckResult("balance_symmetry", err, 1e-6, err < 1e-6))

    # sharpening the temperature on a separable batch lowers the loss
    anchor = np.array([1.0, 0.0])
    pos = np.array([[0.9, 0.1]])
    neg = np.array([[0.1, 0.9]])
    vals = [
        losses.contrast_loss(losses.ContrastBatch(anchor, pos, neg, t, 0.5))[0]
        for t in (0.5, 0.2, 0.1)
    ]
    mono = vals[0] > vals[1] > vals[2]
    results.append(CheckResult("temperature_monotonic", 0.0 if mono else 1.0, 1.0, mono))

    # combined-objective weighting at unit losses
    total = losses.overall_loss(1.0, 1.0, 1.0)
    ok = total == 51.3
    results.append(CheckResult("overall_weighting", abs(total - 51.3), 1e-12, ok))

    # attention block with zero scale and identity mixing is the identity
    f = rng.standard_normal((4, 5, 5))
    out = losses.mau_forward(f, losses.MauWeights.identity(4))
    ident = np.array_equal(out, f)
    results.append(CheckResult("attention_identity", 0.0 if ident else 1.0, 1.0, ident))

    # non-negativity spot checks
    nonneg = all(
        losses.contrast_loss(
            losses.ContrastBatch(
                rng.standard_normal(4),
                rng.standard_normal((2, 4)),
                rng.standard_normal((3, 4)),
                0.3,
                0.7,
            )
        )[0] >= -1e-12
        for _ in range(10)
    )
    results.append(CheckResult("contrast_nonnegative", 0.0 if nonneg else 1.0, 1.0, nonneg))

    return results
