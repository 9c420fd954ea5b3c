"""Topology- and ridge-preserving training losses as plain field operators.

Every loss has a ``*_value_and_grad`` twin returning the closed-form gradient
with respect to the prediction; :func:`gradient_check` compares those against
central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import expit

from .grid import VoxelGrid, _laplacian_adjoint, _laplacian_array
from .mat import relaxed_ridge_mask_vjp, ridge_strength

DICE_SMOOTH = 1e-6


@dataclass
class LossConfig:
    gaussian_sigma: float = 1.0
    sigmoid_k: float = 50.0
    weights: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be > 0")
        if self.sigmoid_k <= 0:
            raise ValueError("sigmoid_k must be > 0")
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != 4 or min(self.weights) < 0:
            raise ValueError("weights must be 4 non-negative numbers")


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, VoxelGrid) else x, dtype=float)


def gaussian_density(delta, sigma: float = 1.0):
    return np.exp(-0.5 * (np.asarray(delta) / sigma) ** 2) / math.sqrt(2.0 * math.pi * sigma**2)


def validate_prob_field(p: np.ndarray, atol: float = 1e-6) -> None:
    if p.ndim != 4:
        raise ValueError("a probability field has shape (K, nx, ny, nz)")
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    if not np.allclose(p.sum(axis=0), 1.0, atol=atol):
        raise ValueError("channels must sum to 1 per voxel")


def foreground_probability(pred) -> np.ndarray:
    """Per-voxel foreground probability: the array itself, or 1 - p_0 for a
    K-channel field (bin 0 is background)."""
    p = _arr(pred)
    if p.ndim == 4:
        return 1.0 - p[0]
    return p


def expected_udf(prob: np.ndarray) -> np.ndarray:
    p = np.asarray(prob, dtype=float)
    k = np.arange(p.shape[0], dtype=float).reshape(-1, 1, 1, 1)
    return (k * p).sum(axis=0)


def _check_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"dims mismatch: {a.shape} vs {b.shape}")


def dice_loss(pred, gt) -> float:
    return dice_loss_value_and_grad(pred, gt)[0]


def dice_loss_value_and_grad(pred, gt):
    """1 - soft Dice. The gradient is with respect to the foreground
    probability map (3D)."""
    p = foreground_probability(pred)
    g = (_arr(gt) > 0).astype(float)
    _check_shape(p, g)
    inter = np.sum(p * g)
    denom = np.sum(p) + np.sum(g) + DICE_SMOOTH
    num = 2.0 * inter + DICE_SMOOTH
    value = 1.0 - num / denom
    grad = -(2.0 * g * denom - num) / denom**2
    return float(value), grad


def _per_voxel_score(pred, gt: np.ndarray, sigma: float):
    """Gaussian score per voxel and its derivative (real-valued predictions only).

    For a K-channel field the score is the expectation ``sum_k p_k g(k - y)``;
    for a real field it is ``g(pred - y)``, which coincides with the one-hot
    case at integer predictions.
    """
    p = _arr(pred)
    if p.ndim == 4:
        K = p.shape[0]
        if gt.max(initial=0) > K - 1:
            raise ValueError(f"ground-truth bin {int(gt.max())} exceeds K-1 = {K - 1}")
        _check_shape(p[0], gt)
        ks = np.arange(K, dtype=float).reshape(-1, 1, 1, 1)
        dens = gaussian_density(ks - gt[None], sigma)
        return (p * dens).sum(axis=0), dens
    _check_shape(p, gt)
    delta = p - gt
    dens = gaussian_density(delta, sigma)
    return dens, -dens * delta / sigma**2


def stochastic_distance_loss(pred, gt, cfg: LossConfig = LossConfig()) -> float:
    return stochastic_distance_loss_value_and_grad(pred, gt, cfg)[0]


def stochastic_distance_loss_value_and_grad(pred, gt, cfg: LossConfig = LossConfig()):
    """Negative mean expected Gaussian score of the predicted bins around the
    ground-truth distance."""
    y = _arr(gt)
    score, dscore = _per_voxel_score(pred, y, cfg.gaussian_sigma)
    n = score.size
    return float(-score.sum() / n), -dscore / n


def laplacian_loss(pred, gt) -> float:
    return laplacian_loss_value_and_grad(pred, gt)[0]


def laplacian_loss_value_and_grad(pred, gt):
    p, g = _arr(pred), _arr(gt)
    _check_shape(p, g)
    if min(p.shape) < 3:
        raise ValueError("laplacian needs >= 3 voxels per axis")
    r = _laplacian_array(p) - _laplacian_array(g)
    n = r.size
    return float(np.sum(r * r) / n), _laplacian_adjoint(2.0 * r / n)


def mat_loss(pred, gt, cfg: LossConfig = LossConfig()) -> float:
    return mat_loss_value_and_grad(pred, gt, cfg)[0]


def mat_loss_value_and_grad(pred, gt, cfg: LossConfig = LossConfig()):
    """Stochastic distance loss weighted by the product of the relaxed ridge
    masks of prediction and ground truth."""
    p, y = _arr(pred), _arr(gt)
    if p.ndim == 4:
        raise ValueError("mat_loss takes a real-valued field; use expected_udf() on probabilities")
    _check_shape(p, y)
    k = cfg.sigmoid_k
    s_pred = expit(k * ridge_strength(p))
    s_gt = expit(k * ridge_strength(y))
    score, dscore = _per_voxel_score(p, y, cfg.gaussian_sigma)
    n = p.size
    w = s_pred * s_gt
    value = -np.sum(w * score) / n
    grad = -(w * dscore) / n + relaxed_ridge_mask_vjp(p, -(s_gt * score) / n, k)
    return float(value), grad


def total_loss(pred_seg, pred_udf, gt_seg, gt_udf, cfg: LossConfig = LossConfig()):
    """Weighted sum of the four terms. Returns ``(total, terms)`` with
    ``terms`` keyed dice / stochastic / laplacian / mat.

    ``pred_udf`` may be a K-channel probability field; the Laplacian and MAT
    terms then act on its expected value.
    """
    pu = _arr(pred_udf)
    real_udf = expected_udf(pu) if pu.ndim == 4 else pu
    terms = {
        "dice": dice_loss(pred_seg, gt_seg),
        "stochastic": stochastic_distance_loss(pu, gt_udf, cfg),
        "laplacian": laplacian_loss(real_udf, gt_udf),
        "mat": mat_loss(real_udf, gt_udf, cfg),
    }
    total = sum(w * terms[name] for w, name in zip(cfg.weights, ("dice", "stochastic", "laplacian", "mat")))
    return float(total), terms


def gradient_check(value_and_grad, point, seed: int = 0, n_dirs: int = 32, h: float = 1e-3) -> float:
    """Max relative error between closed-form and central-difference
    directional derivatives along ``n_dirs`` random unit directions.

    ``value_and_grad(x) -> (value, grad)`` with ``grad`` shaped like ``x``.
    """
    x = _arr(point)
    rng = np.random.default_rng(seed)
    value, grad = value_and_grad(x)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite loss or gradient at the check point")
    worst = 0.0
    for _ in range(n_dirs):
        d = rng.standard_normal(x.shape)
        d /= np.linalg.norm(d)
        analytic = float(np.sum(grad * d))
        fp = value_and_grad(x + h * d)[0]
        fm = value_and_grad(x - h * d)[0]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("non-finite loss during finite differences")
        numeric = (fp - fm) / (2.0 * h)
        scale = max(abs(analytic), abs(numeric), 1e-300)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst
