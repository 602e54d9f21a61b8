"""Matching costs and training losses over clips.

The frame-level matching cost combines a cross-entropy class term with
binary cross-entropy and soft-dice mask terms. The clip-level (global)
cost uses the clip-averaged class probability and the full T-frame mask
stacks. The overall loss sums the global cost over matched pairs and
supervises unmatched prediction slots toward the no-object class.

All arithmetic is float64. Log arguments are clamped to [eps, 1] so every
cost is finite and exactly nonnegative, including at perfect predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Assignment, GroundTruthTrack, PredictionTrack

EPS_LOG = 1e-12
DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative weights for the class / bce / dice cost terms."""

    lambda_cls: float = 2.0
    lambda_bce: float = 5.0
    lambda_dice: float = 5.0

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_bce", "lambda_dice"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
            object.__setattr__(self, name, value)


def _neg_log(x: np.ndarray, eps: float) -> np.ndarray:
    # clamp to 1 so a probability of exactly 1 costs exactly 0
    return -np.log(np.minimum(x + eps, 1.0))


def average_class_prob(track: PredictionTrack) -> np.ndarray:
    """Clip-averaged class probability: elementwise mean over the T frames."""
    return np.asarray(track.class_probs, dtype=np.float64).mean(axis=0)


def ce_cost(gt_class: int, prob, eps: float = EPS_LOG) -> float:
    """Cross-entropy of a probability vector against a class index."""
    prob = np.asarray(prob, dtype=np.float64)
    if not 0 <= gt_class < prob.shape[-1]:
        raise ValueError(f"gt_class {gt_class} out of range for {prob.shape[-1]} classes")
    return float(_neg_log(prob[gt_class], eps))


def bce_cost(gt_masks, pred_masks, eps: float = EPS_LOG) -> float:
    """Binary cross entropy, averaged over every cell of the mask stack."""
    y = np.asarray(gt_masks, dtype=np.float64)
    p = np.asarray(pred_masks, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"mask shapes differ: {y.shape} vs {p.shape}")
    terms = y * _neg_log(p, eps) + (1.0 - y) * _neg_log(1.0 - p, eps)
    return float(terms.mean())


def dice_cost(gt_masks, pred_masks, smooth: float = DICE_SMOOTH) -> float:
    """Soft dice loss over the whole stack: 1 - (2*overlap + d)/(mass + d)."""
    y = np.asarray(gt_masks, dtype=np.float64)
    p = np.asarray(pred_masks, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"mask shapes differ: {y.shape} vs {p.shape}")
    overlap = float((y * p).sum())
    mass = float(y.sum() + p.sum())
    return float(1.0 - (2.0 * overlap + smooth) / (mass + smooth))


def frame_matching_cost(gt_track: GroundTruthTrack, pred_track: PredictionTrack,
                        t: int, weights: LossWeights) -> float:
    """Single-frame matching cost at frame index t (0-based)."""
    T = gt_track.masks.shape[0]
    if not 0 <= t < T:
        raise ValueError(f"frame index {t} out of range for T={T}")
    return (weights.lambda_cls * ce_cost(gt_track.class_id, pred_track.class_probs[t])
            + weights.lambda_bce * bce_cost(gt_track.masks[t], pred_track.mask_probs[t])
            + weights.lambda_dice * dice_cost(gt_track.masks[t], pred_track.mask_probs[t]))


def global_matching_cost(gt_track: GroundTruthTrack, pred_track: PredictionTrack,
                         weights: LossWeights) -> float:
    """Whole-clip matching cost: clip-averaged class term + full mask stacks."""
    return (weights.lambda_cls * ce_cost(gt_track.class_id, average_class_prob(pred_track))
            + weights.lambda_bce * bce_cost(gt_track.masks, pred_track.mask_probs)
            + weights.lambda_dice * dice_cost(gt_track.masks, pred_track.mask_probs))


def overall_loss(gt_tracks, pred_tracks, assignment: Assignment,
                 weights: LossWeights) -> float:
    """Total supervision: matched global costs plus no-object terms for
    every unmatched prediction slot."""
    n_gt, n_slots = len(gt_tracks), len(pred_tracks)
    seen_gt, seen_slot = set(), set()
    for g, s in assignment.pairs:
        if not 0 <= g < n_gt or not 0 <= s < n_slots:
            raise ValueError(f"assignment pair ({g}, {s}) out of range")
        if g in seen_gt or s in seen_slot:
            raise ValueError(f"assignment pair ({g}, {s}) repeats an index")
        seen_gt.add(g)
        seen_slot.add(s)
    if seen_gt != set(range(n_gt)):
        raise ValueError("assignment must cover every ground-truth index exactly once")

    total = 0.0
    for g, s in sorted(assignment.pairs):
        total += global_matching_cost(gt_tracks[g], pred_tracks[s], weights)
    for s in range(n_slots):
        if s not in seen_slot:
            probs = average_class_prob(pred_tracks[s])
            no_object = probs.shape[-1] - 1
            total += weights.lambda_cls * ce_cost(no_object, probs)
    return float(total)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mask_loss_grad(gt_masks, pred_logits, weights: LossWeights,
                   eps: float = EPS_LOG, smooth: float = DICE_SMOOTH) -> np.ndarray:
    """Analytic gradient of the weighted bce + dice mask loss w.r.t. logits.

    The loss being differentiated is exactly
    ``weights.lambda_bce * bce_cost(y, sigmoid(z))
      + weights.lambda_dice * dice_cost(y, sigmoid(z))``
    including the log clamping, so the result matches central finite
    differences of those implementations.
    """
    y = np.asarray(gt_masks, dtype=np.float64)
    z = np.asarray(pred_logits, dtype=np.float64)
    if y.shape != z.shape:
        raise ValueError(f"shapes differ: {y.shape} vs {z.shape}")
    p = _sigmoid(z)
    n = y.size

    # d(bce)/dp; the log clamp zeroes the term once its argument hits 1
    pos_active = (p + eps) < 1.0
    neg_active = (1.0 - p + eps) < 1.0
    dbce = (-y / (p + eps) * pos_active + (1.0 - y) / (1.0 - p + eps) * neg_active) / n

    overlap2 = 2.0 * float((y * p).sum()) + smooth
    mass = float(y.sum() + p.sum()) + smooth
    ddice = (overlap2 - 2.0 * y * mass) / (mass * mass)

    dp_dz = p * (1.0 - p)
    return (weights.lambda_bce * dbce + weights.lambda_dice * ddice) * dp_dz
