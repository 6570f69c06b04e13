"""Linear root-translation system, its weighted least-squares solve, and the VJP.

For keypoint ``i`` with root-relative position ``(x, y, z)`` and normalized ray
``(u', v')`` the unknown translation ``t`` satisfies two linear equations::

    [-1  0  u'] t = x - z u'
    [ 0 -1  v'] t = y - z v'

Stacking all keypoints gives ``A t = B``. With per-keypoint confidences the
solution minimizes ``||W (A t - B)||^2`` where ``W`` repeats each weight on both
rows of its keypoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .camera import CameraIntrinsics
from .errors import DegenerateGeometry, InvalidConfig, ShapeMismatch, TooFewCorrespondences


@dataclass(frozen=True)
class LinearSystem:
    """Stacked ``2N x 3`` matrix ``A`` and ``2N`` vector ``B``.

    Rows ``2i`` and ``2i + 1`` belong to keypoint ``i``. ``k3d`` keeps the
    root-relative keypoints the system was built from; it is needed for the
    behind-camera diagnostics and for chaining gradients back to 3D keypoints.
    """

    A: np.ndarray
    B: np.ndarray
    k3d: np.ndarray | None = None

    @property
    def n_keypoints(self) -> int:
        return self.A.shape[0] // 2

    @property
    def rays(self) -> np.ndarray:
        return self.A[:, 2].reshape(-1, 2)


@dataclass(frozen=True)
class SolveResult:
    t: np.ndarray
    residual_norm: float
    cond_estimate: float
    behind_camera: np.ndarray


@dataclass(frozen=True)
class GradientBundle:
    """Gradients of a scalar loss with respect to the solver inputs.

    ``d_k2d`` is in units of loss per pixel and is only populated when the
    camera is known; ``d_rays`` is the same gradient with respect to the
    normalized ray coordinates.
    """

    d_k2d: np.ndarray | None
    d_k3d: np.ndarray
    d_w: np.ndarray
    d_rays: np.ndarray


def check_regressor(jreg, atol: float = 1e-9) -> np.ndarray:
    jreg = np.asarray(jreg, dtype=np.float64)
    if jreg.ndim != 2:
        raise ShapeMismatch(f"regressor must be 2-D, got shape {jreg.shape}")
    n_k, n_v = jreg.shape
    if n_k < 2 or n_v < n_k:
        raise ShapeMismatch(f"regressor needs N_K >= 2 and N_V >= N_K, got {jreg.shape}")
    if np.any(jreg < 0) or not np.all(np.isfinite(jreg)):
        raise InvalidConfig("regressor entries must be finite and non-negative")
    if np.max(np.abs(jreg.sum(axis=1) - 1.0)) > atol:
        raise InvalidConfig("regressor rows must sum to 1")
    return jreg


def apply_regressor(jreg, verts) -> np.ndarray:
    """Keypoints as fixed linear combinations of mesh vertices, ``jreg @ verts``."""
    jreg = np.asarray(jreg, dtype=np.float64)
    verts = np.asarray(verts, dtype=np.float64)
    if jreg.ndim != 2 or verts.ndim < 2 or verts.shape[-1] != 3 or verts.shape[-2] != jreg.shape[1]:
        raise ShapeMismatch(f"cannot apply regressor {jreg.shape} to vertices {verts.shape}")
    return jreg @ verts


def to_camera_space(verts_rel, t) -> np.ndarray:
    return np.asarray(verts_rel, dtype=np.float64) + np.asarray(t, dtype=np.float64)


def build_system(k3d, rays) -> LinearSystem:
    k3d = np.asarray(k3d, dtype=np.float64)
    rays = np.asarray(rays, dtype=np.float64)
    if k3d.ndim != 2 or k3d.shape[1] != 3 or rays.shape != (k3d.shape[0], 2):
        raise ShapeMismatch(f"expected (N, 3) keypoints and (N, 2) rays, got {k3d.shape} and {rays.shape}")
    n = k3d.shape[0]
    if n < 2:
        raise TooFewCorrespondences(f"need at least 2 correspondences, got {n}")
    A = np.zeros((2 * n, 3))
    A[0::2, 0] = -1.0
    A[1::2, 1] = -1.0
    A[0::2, 2] = rays[:, 0]
    A[1::2, 2] = rays[:, 1]
    B = np.empty(2 * n)
    B[0::2] = k3d[:, 0] - k3d[:, 2] * rays[:, 0]
    B[1::2] = k3d[:, 1] - k3d[:, 2] * rays[:, 1]
    return LinearSystem(A, B, k3d.copy())


def _check_weights(w, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeMismatch(f"expected {n} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidConfig("weights must be finite and non-negative")
    return w


def solve_wls(sys: LinearSystem, w) -> SolveResult:
    """Closed-form ``t* = (A^T W^2 A)^-1 A^T W^2 B`` via a 3x3 Cholesky factorization.

    Raises:
        DegenerateGeometry: fewer than two positive weights, or the weighted
            normal matrix has condition estimate above ``kernels.COND_MAX``.
    """
    n = sys.n_keypoints
    w = _check_weights(w, n)
    t, cond, resid, ok = kernels.solve_batch(sys.rays[None], sys.B.reshape(1, n, 2), w[None])
    if not ok[0]:
        npos = int(np.count_nonzero(w > 0))
        if npos < 2:
            raise DegenerateGeometry(f"need at least 2 positive weights, got {npos}")
        raise DegenerateGeometry("weighted normal matrix is singular or ill-conditioned")
    t = t[0]
    if sys.k3d is not None:
        behind = sys.k3d[:, 2] + t[2] <= 0
    else:
        behind = np.zeros(n, dtype=bool)
    return SolveResult(t, float(resid[0]), float(cond[0]), behind)


def solve_ls(sys: LinearSystem) -> SolveResult:
    """Unweighted solve, ``t* = (A^T A)^-1 A^T B``."""
    return solve_wls(sys, np.ones(sys.n_keypoints))


def solve_wls_vjp(
    sys: LinearSystem,
    w,
    upstream,
    cam: CameraIntrinsics | None = None,
    result: SolveResult | None = None,
) -> GradientBundle:
    """Exact gradients of ``upstream . t*`` with respect to keypoints and weights.

    With ``M = A^T W^2 A``, ``q = M^-1 g`` and ``r = B - A t*``::

        dL/dB = W^2 A q
        dL/dA = W^2 r q^T - (W^2 A q) t*^T
        dL/dw_i = 2 w_i sum_rows(i) (a_j . q) r_j

    then chained through ``A(u', v')`` and ``B(x, y, z, u', v')``. Pixel
    gradients divide the ray gradients by the focal length.
    """
    if sys.k3d is None:
        raise InvalidConfig("the system must carry its 3D keypoints to chain gradients")
    n = sys.n_keypoints
    w = _check_weights(w, n)
    g = np.asarray(upstream, dtype=np.float64).reshape(3)
    if result is None:
        result = solve_wls(sys, w)
    rays = sys.rays
    d_rays, d_rhs, d_w = kernels.vjp_batch(
        rays[None], sys.B.reshape(1, n, 2), w[None], result.t[None], g[None]
    )
    d_rays, d_rhs, d_w = d_rays[0], d_rhs[0], d_w[0]
    z = sys.k3d[:, 2]
    d_k3d = np.empty((n, 3))
    d_k3d[:, 0] = d_rhs[:, 0]
    d_k3d[:, 1] = d_rhs[:, 1]
    d_k3d[:, 2] = -(rays[:, 0] * d_rhs[:, 0] + rays[:, 1] * d_rhs[:, 1])
    d_rays = d_rays - z[:, None] * d_rhs
    d_k2d = d_rays / cam.f if cam is not None else None
    return GradientBundle(d_k2d, d_k3d, d_w, d_rays)
