"""Synthetic hand-like scenes with ground truth, corruption, and reference oracles.

Every generator is a pure function of its seed. Random numbers come from
numpy's PCG64 bit generator; only its uniform doubles are consumed, and
Gaussian samples are derived from them with the Box-Muller transform so the
streams do not depend on numpy's sampler internals.

The oracles in this module deliberately avoid the closed-form solver:
finite differences evaluate the objective through ``numpy.linalg.lstsq``,
``oracle_minimize`` runs conjugate gradients on the weighted residual, and
``geometric_refine`` minimizes reprojection error in pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .camera import CameraIntrinsics, normalize_pixel, project
from .errors import DegenerateGeometry, DidNotConverge, InvalidConfig, NonPositiveDepth
from .solver import GradientBundle, LinearSystem, apply_regressor, build_system, solve_wls

# Gradients smaller than this are compared in absolute terms: at the default
# relative tolerance of 1e-5 the effective absolute floor is 1e-8.
GRAD_ERROR_FLOOR = 1e-3


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def uniform(rng: np.random.Generator, low=0.0, high=1.0, size=None):
    return low + (high - low) * rng.random(size)


def normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal samples via Box-Muller on PCG64 uniforms."""
    n = int(np.prod(size))
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1], keeps log finite
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:n].reshape(size)


def _readonly(a):
    if a is None:
        return None
    a = np.array(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Scene:
    """A set of 2D-3D keypoint correspondences with optional ground truth.

    ``verts_rel`` are root-relative vertices in metres, ``jreg`` maps them to
    keypoints and ``k2d_obs`` holds the observed keypoint pixels.
    """

    cam: CameraIntrinsics
    verts_rel: np.ndarray
    jreg: np.ndarray
    k2d_obs: np.ndarray
    t_gt: np.ndarray | None = None
    outlier_mask: np.ndarray | None = None
    weights: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("verts_rel", "jreg", "k2d_obs", "t_gt", "outlier_mask", "weights"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def n_keypoints(self) -> int:
        return self.jreg.shape[0]

    @property
    def k3d(self) -> np.ndarray:
        return apply_regressor(self.jreg, self.verts_rel)

    @property
    def rays(self) -> np.ndarray:
        return normalize_pixel(self.cam, self.k2d_obs)

    def system(self) -> LinearSystem:
        return build_system(self.k3d, self.rays)

    def k2d_true(self) -> np.ndarray:
        """Exact projections of the ground-truth camera-space keypoints."""
        if self.t_gt is None:
            raise InvalidConfig("scene has no ground-truth translation")
        return project(self.cam, self.k3d + self.t_gt)

    def same_as(self, other: Scene) -> bool:
        """Bitwise equality of every field."""
        if self.cam != other.cam or self.seed != other.seed:
            return False
        for name in ("verts_rel", "jreg", "k2d_obs", "t_gt", "outlier_mask", "weights"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or a.tobytes() != b.tobytes()):
                return False
        return True


@dataclass(frozen=True)
class PerturbSpec:
    noise_px: float = 0.0
    outlier_count: int = 0
    seed: int = 0


def random_regressor(rng, n_k: int, n_v: int, support: int = 4) -> np.ndarray:
    """Row-stochastic ``n_k x n_v`` matrix, each row a convex mix of ``support`` vertices."""
    support = min(support, n_v)
    jreg = np.zeros((n_k, n_v))
    for i in range(n_k):
        idx = np.argsort(rng.random(n_v), kind="stable")[:support]
        c = uniform(rng, 0.1, 1.0, support)
        jreg[i, idx] = c / c.sum()
    return jreg


def gen_scene(
    seed: int,
    n_v: int = 64,
    n_k: int = 21,
    depth_range=(0.3, 1.2),
    hand_extent: float = 0.18,
    fov_range=(40.0, 70.0),
    frame=(512, 512),
) -> Scene:
    """Random noiseless scene: box-sampled hand vertices seen by a random pinhole camera."""
    lo, hi = depth_range
    if not (0.1 < lo <= hi < 10):
        raise InvalidConfig(f"depth range must lie within (0.1, 10), got {depth_range}")
    if n_k < 2 or n_v < n_k:
        raise InvalidConfig(f"need n_k >= 2 and n_v >= n_k, got n_k={n_k}, n_v={n_v}")
    if not (0 < hand_extent < 2 * lo):
        raise InvalidConfig("hand extent must be positive and keep every point in front of the camera")
    if not (0 < fov_range[0] <= fov_range[1] < 180):
        raise InvalidConfig(f"invalid field of view range {fov_range}")
    width, height = frame
    rng = make_rng(seed)

    verts = uniform(rng, -hand_extent / 2, hand_extent / 2, (n_v, 3))
    verts -= verts.mean(axis=0)
    jreg = random_regressor(rng, n_k, n_v)

    cam = CameraIntrinsics.from_fov(uniform(rng, *fov_range), width, height)
    tz = uniform(rng, lo, hi)
    # root projects into the central 60% of the frame
    u = uniform(rng, 0.2 * width, 0.8 * width)
    v = uniform(rng, 0.2 * height, 0.8 * height)
    t = np.array([(u - cam.u0) * tz / cam.f, (v - cam.v0) * tz / cam.f, tz])

    k3d = apply_regressor(jreg, verts)
    k2d = project(cam, k3d + t)
    return Scene(cam, verts, jreg, k2d, t_gt=t, outlier_mask=np.zeros(n_k, dtype=bool), seed=int(seed))


def perturb(scene: Scene, spec: PerturbSpec) -> Scene:
    """Gaussian pixel noise on inliers and uniform in-frame pixels for outliers."""
    n_k = scene.n_keypoints
    if scene.t_gt is None:
        raise InvalidConfig("perturb needs a scene with ground truth")
    if not (np.isfinite(spec.noise_px) and spec.noise_px >= 0):
        raise InvalidConfig(f"noise_px must be >= 0, got {spec.noise_px}")
    if not (0 <= spec.outlier_count < n_k - 1):
        raise InvalidConfig(f"outlier_count must be in [0, {n_k - 1}), got {spec.outlier_count}")
    rng = make_rng(spec.seed)
    mask = np.zeros(n_k, dtype=bool)
    mask[np.argsort(rng.random(n_k), kind="stable")[: spec.outlier_count]] = True
    noise = normal(rng, (n_k, 2))
    k2d = np.array(scene.k2d_obs, dtype=np.float64)
    if spec.noise_px > 0:
        k2d[~mask] += spec.noise_px * noise[~mask]
    n_out = int(mask.sum())
    if n_out:
        k2d[mask, 0] = uniform(rng, 0.0, scene.cam.width, n_out)
        k2d[mask, 1] = uniform(rng, 0.0, scene.cam.height, n_out)
    return replace(scene, k2d_obs=k2d, outlier_mask=mask)


def _lstsq_translation(k3d, rays, w) -> np.ndarray:
    sys = build_system(k3d, rays)
    W = np.repeat(w, 2)
    t, *_ = np.linalg.lstsq(W[:, None] * sys.A, W * sys.B, rcond=None)
    return t


def finite_diff_grad(scene: Scene, w, upstream, eps: float = 1e-6) -> GradientBundle:
    """Central differences of ``upstream . t*`` w.r.t. every pixel, 3D keypoint and weight.

    Each coordinate is perturbed on its own; ``t*`` is re-solved through
    ``numpy.linalg.lstsq`` on the weighted system, independent of the
    closed-form solver.
    """
    if not (1e-8 <= eps <= 1e-4):
        raise InvalidConfig(f"eps must lie in [1e-8, 1e-4], got {eps}")
    g = np.asarray(upstream, dtype=np.float64).reshape(3)
    cam = scene.cam
    k3d = np.array(scene.k3d)
    k2d = np.array(scene.k2d_obs, dtype=np.float64)
    w = np.array(w, dtype=np.float64)
    n = k3d.shape[0]
    # raise the solver's errors (degenerate input) up front
    solve_wls(build_system(k3d, normalize_pixel(cam, k2d)), w)

    def objective(k3d_, k2d_, w_):
        return g @ _lstsq_translation(k3d_, normalize_pixel(cam, k2d_), w_)

    def central(arr, setter):
        out = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            plus = arr.copy()
            minus = arr.copy()
            plus[idx] += eps
            minus[idx] -= eps
            out[idx] = (setter(plus) - setter(minus)) / (2 * eps)
        return out

    if not np.any(g):
        zeros = np.zeros
        return GradientBundle(zeros((n, 2)), zeros((n, 3)), zeros(n), zeros((n, 2)))
    d_k2d = central(k2d, lambda a: objective(k3d, a, w))
    d_k3d = central(k3d, lambda a: objective(a, k2d, w))
    d_w = central(w, lambda a: objective(k3d, k2d, a))
    return GradientBundle(d_k2d, d_k3d, d_w, d_k2d * cam.f)


def gradient_error(analytic: GradientBundle, reference: GradientBundle) -> float:
    """Largest entrywise ``|a - r| / max(|r|, GRAD_ERROR_FLOOR)`` over pixels, 3D keypoints and weights."""
    worst = 0.0
    for name in ("d_k2d", "d_k3d", "d_w"):
        a = np.asarray(getattr(analytic, name))
        r = np.asarray(getattr(reference, name))
        err = np.abs(a - r) / np.maximum(np.abs(r), GRAD_ERROR_FLOOR)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def oracle_minimize(sys: LinearSystem, w, t0=None, max_iters: int = 100, tol: float = 1e-12, full_output=False):
    """Minimize ``||W (A t - B)||^2`` by conjugate gradients with exact line search.

    Uses only products with ``A`` and ``A^T``; the normal matrix is never
    formed. Converged when the gradient norm is at most ``tol`` times its
    rounding scale ``2 |A|^T W^2 (|A| |t| + |B|)``.

    Raises:
        DegenerateGeometry: fewer than two positive weights or all weighted
            rays identical, so the minimizer is not unique.
        DidNotConverge: tolerance not met within ``max_iters`` iterations.
    """
    A, B = sys.A, sys.B
    w = np.asarray(w, dtype=np.float64)
    d2 = np.repeat(w * w, 2)
    pos = w > 0
    if np.count_nonzero(pos) < 2:
        raise DegenerateGeometry("fewer than two positive weights")
    rays = sys.rays[pos]
    ww = (w * w)[pos]
    mean = (ww[:, None] * rays).sum(axis=0) / ww.sum()
    spread = (ww * ((rays - mean) ** 2).sum(axis=1)).sum() / ww.sum()
    if spread <= 1e-20 * (1.0 + mean @ mean):
        raise DegenerateGeometry("all weighted rays coincide")

    t = np.zeros(3) if t0 is None else np.array(t0, dtype=np.float64)

    def grad(t):
        r = d2 * (A @ t - B)
        scale = 2 * np.abs(A).T @ (d2 * (np.abs(A) @ np.abs(t) + np.abs(B)))
        return 2 * (A.T @ r), np.linalg.norm(scale)

    G, scale = grad(t)
    d = -G
    for it in range(max_iters + 1):
        if np.linalg.norm(G) <= tol * scale:
            return (t, it) if full_output else t
        if it == max_iters:
            break
        Ad = A @ d
        curv = 2 * (d2 * Ad) @ Ad
        if not curv > 0:
            raise DidNotConverge("non-positive curvature along the search direction")
        alpha = -(G @ d) / curv
        t = t + alpha * d
        G_new, scale = grad(t)
        if (it + 1) % 3 == 0:
            d = -G_new
        else:
            beta = (G_new @ G_new) / (G @ G)
            d = -G_new + beta * d
        G = G_new
    raise DidNotConverge(f"gradient norm {np.linalg.norm(G):.3e} above tolerance after {max_iters} iterations")


def geometric_refine(scene: Scene, w, t0, max_iters: int = 50, tol: float = 1e-11) -> np.ndarray:
    """Gauss-Newton on ``sum_i w_i^2 |project(k_i + t) - k2d_i|^2`` in pixels.

    Steps are halved until the cost does not increase and all positively
    weighted keypoints stay in front of the camera.
    """
    cam = scene.cam
    k3d = scene.k3d
    k2d = np.asarray(scene.k2d_obs, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    pos = w > 0
    k3d, k2d, w = k3d[pos], k2d[pos], w[pos]
    t = np.array(t0, dtype=np.float64)

    def residual(t):
        X = k3d + t
        if np.any(X[:, 2] <= 0):
            raise NonPositiveDepth("keypoint behind the camera during refinement")
        return (w[:, None] * (project(cam, X) - k2d)).ravel(), X

    r, X = residual(t)
    cost = r @ r
    for _ in range(max_iters):
        Z = X[:, 2]
        J = np.zeros((len(w), 2, 3))
        J[:, 0, 0] = cam.f / Z
        J[:, 0, 2] = -cam.f * X[:, 0] / Z**2
        J[:, 1, 1] = cam.f / Z
        J[:, 1, 2] = -cam.f * X[:, 1] / Z**2
        J = (w[:, None, None] * J).reshape(-1, 3)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        if np.linalg.norm(step) <= tol * (1.0 + np.linalg.norm(t)):
            return t
        lam = 1.0
        while True:
            trial = t + lam * step
            try:
                r_new, X_new = residual(trial)
            except NonPositiveDepth:
                r_new = None
            # rounding slack: near the optimum the cost change is pure noise
            if r_new is not None and r_new @ r_new <= cost * (1 + 1e-14):
                break
            lam *= 0.5
            if lam < 1e-10:
                # no descent possible at working precision
                if r_new is None:
                    raise NonPositiveDepth("refinement cannot keep keypoints in front of the camera")
                return t
        t, r, X, cost = trial, r_new, X_new, r_new @ r_new
    raise DidNotConverge(f"Gauss-Newton did not converge in {max_iters} iterations")


def random_rotation(rng) -> np.ndarray:
    """Uniformly distributed rotation matrix from a normalized Gaussian quaternion."""
    q = normal(rng, 4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def pose_scene(
    template: Scene,
    seed: int,
    scale_range=(0.85, 1.15),
    deform_m: float = 0.002,
    depth_range=(0.3, 1.2),
    fov_range=(40.0, 70.0),
    frame=(512, 512),
) -> Scene:
    """New noiseless scene that reuses the template's mesh and regressor.

    The template vertices are rotated, scaled, jittered by ``deform_m`` metres
    and re-centred; camera and root translation are drawn as in
    :func:`gen_scene`.
    """
    lo, hi = depth_range
    if not (0.1 < lo <= hi < 10):
        raise InvalidConfig(f"depth range must lie within (0.1, 10), got {depth_range}")
    rng = make_rng(seed)
    R = random_rotation(rng)
    s = uniform(rng, *scale_range)
    verts = s * np.asarray(template.verts_rel) @ R.T
    verts = verts + deform_m * normal(rng, verts.shape)
    verts -= verts.mean(axis=0)
    if np.max(np.abs(verts[:, 2])) >= lo:
        raise InvalidConfig("posed hand does not fit in front of the camera")
    width, height = frame
    cam = CameraIntrinsics.from_fov(uniform(rng, *fov_range), width, height)
    tz = uniform(rng, lo, hi)
    u = uniform(rng, 0.2 * width, 0.8 * width)
    v = uniform(rng, 0.2 * height, 0.8 * height)
    t = np.array([(u - cam.u0) * tz / cam.f, (v - cam.v0) * tz / cam.f, tz])
    jreg = np.asarray(template.jreg)
    k2d = project(cam, apply_regressor(jreg, verts) + t)
    return Scene(cam, verts, jreg, k2d, t_gt=t, outlier_mask=np.zeros(len(jreg), dtype=bool), seed=int(seed))
