"""Trajectory evaluation metrics."""

from __future__ import annotations

import numpy as np

from .graph import Trajectory

# Reference point sets whose second principal axis carries less than this
# fraction of the spread are treated as collinear (alignment not unique).
_COLLINEAR_RATIO = 1e-9


class AlignmentError(ValueError):
    """Rigid alignment is degenerate: too few or collinear correspondences."""


def umeyama_alignment(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best-fit rotation R and translation t minimizing sum ||R s_i + t - t_i||^2.

    Closed-form solution without scale. Both inputs are (n, 3) arrays.
    """
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise AlignmentError("point sets must both be (n, 3)")
    n = source.shape[0]
    if n < 3:
        raise AlignmentError(f"need at least 3 correspondences, got {n}")
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    centered_t = target - mu_t
    singular = np.linalg.svd(centered_t, compute_uv=False)
    if singular[0] <= 0.0 or singular[1] <= _COLLINEAR_RATIO * singular[0]:
        raise AlignmentError("reference points are collinear; rigid alignment is degenerate")
    cov = (source - mu_s).T @ centered_t / n
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    translation = mu_t - rotation @ mu_s
    return rotation, translation


def ate_rmse(estimate: Trajectory, reference: Trajectory) -> float:
    """Absolute translation error: RMSE after one best-fit rigid alignment.

    Poses are matched by key; the estimate is aligned to the reference with a
    single rotation + translation (no scale) over all matched poses.
    """
    ref_map = reference.pose_map()
    matched = [(p.pose.translation, ref_map[p.key].translation) for p in estimate if p.key in ref_map]
    if len(matched) < 3:
        raise AlignmentError(f"need at least 3 matched poses, got {len(matched)}")
    est_pts = np.array([m[0] for m in matched])
    ref_pts = np.array([m[1] for m in matched])
    rotation, translation = umeyama_alignment(est_pts, ref_pts)
    residual = (est_pts @ rotation.T + translation) - ref_pts
    return float(np.sqrt(np.mean(np.sum(residual * residual, axis=1))))
