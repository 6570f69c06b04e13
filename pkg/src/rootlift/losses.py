"""Relative-space and camera-space training losses."""

from __future__ import annotations

import numpy as np

from .camera import CameraIntrinsics, project
from .errors import ShapeMismatch


def loss_translation_rmse(t_pred, t_gt) -> float:
    """Root mean squared error over the three translation components.

    With a leading batch axis the per-sample RMSE values are averaged.
    """
    d = np.asarray(t_pred, dtype=np.float64) - np.asarray(t_gt, dtype=np.float64)
    return float(np.mean(np.sqrt(np.mean(d * d, axis=-1))))


def loss_relative_l1(pred, gt) -> float:
    """Mean absolute componentwise difference; works for 3D points or pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.mean(np.abs(pred - gt)))


def loss_keypoint_consistency(cam: CameraIntrinsics, k3d_cs, k2d_pred) -> float:
    """L1 between predicted 2D keypoints and projections of camera-space 3D keypoints."""
    proj = project(cam, k3d_cs)
    return loss_relative_l1(proj, k2d_pred)


def loss_projected_vertices(cam: CameraIntrinsics, verts_cs, verts2d_gt) -> float:
    """L1 between projected camera-space vertices and their ground-truth pixels."""
    proj = project(cam, verts_cs)
    return loss_relative_l1(proj, verts2d_gt)
