"""Pinhole camera with a single focal length, plus canonical-camera rectification.

Pixel coordinates have their origin at the top-left corner, ``u`` to the right
and ``v`` downward, with no half-pixel offset. Points and pixels are plain
numpy arrays with a trailing axis of size 3 or 2, so every function here
broadcasts over leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, NonPositiveDepth


@dataclass(frozen=True)
class CameraIntrinsics:
    """Focal length ``f`` and principal point ``(u0, v0)`` in pixels, frame size."""

    f: float
    u0: float
    v0: float
    width: int
    height: int

    def __post_init__(self):
        if not (np.isfinite(self.f) and self.f > 0):
            raise InvalidConfig(f"focal length must be positive, got {self.f}")
        if not (np.isfinite(self.u0) and np.isfinite(self.v0)):
            raise InvalidConfig("principal point must be finite")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise InvalidConfig("frame size must be integral")
        if self.width <= 0 or self.height <= 0:
            raise InvalidConfig(f"frame size must be positive, got {self.width}x{self.height}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.u0], [0.0, self.f, self.v0], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        return np.array([self.u0, self.v0])

    @classmethod
    def from_fov(cls, fov_deg: float, width: int, height: int) -> CameraIntrinsics:
        """Camera with horizontal field of view ``fov_deg`` and a centred principal point."""
        f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2)
        return cls(float(f), width / 2, height / 2, width, height)

    def to_dict(self) -> dict:
        return {"f": self.f, "u0": self.u0, "v0": self.v0, "width": self.width, "height": self.height}


def project(cam: CameraIntrinsics, p) -> np.ndarray:
    """Perspective projection of camera-frame points ``(..., 3)`` to pixels ``(..., 2)``."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise NonPositiveDepth("cannot project a point with z <= 0")
    u = cam.f * p[..., 0] / z + cam.u0
    v = cam.f * p[..., 1] / z + cam.v0
    return np.stack([u, v], axis=-1)


def normalize_pixel(cam: CameraIntrinsics, px) -> np.ndarray:
    """Apply the inverse intrinsics: pixels to normalized image-plane coordinates."""
    px = np.asarray(px, dtype=np.float64)
    return (px - cam.center) / cam.f


def rectify_intrinsics(
    cam: CameraIntrinsics, f_canon: float = 500.0, crop_w: int = 256, crop_h: int = 256
) -> tuple[CameraIntrinsics, float]:
    """Canonical camera for a ``crop_w x crop_h`` crop and the resize ratio ``f_canon / f``.

    The canonical principal point is the crop centre.
    """
    if not f_canon > 0 or not crop_w > 0 or not crop_h > 0:
        raise InvalidConfig("canonical focal length and crop size must be positive")
    canon = CameraIntrinsics(float(f_canon), crop_w / 2, crop_h / 2, int(crop_w), int(crop_h))
    return canon, float(f_canon) / cam.f


def rectify_pixel(cam: CameraIntrinsics, cam_canon: CameraIntrinsics, px) -> np.ndarray:
    """Map pixels of ``cam`` to the canonical camera, keeping every viewing ray fixed."""
    px = np.asarray(px, dtype=np.float64)
    return cam_canon.f * (px - cam.center) / cam.f + cam_canon.center


def unrectify_pixel(cam: CameraIntrinsics, cam_canon: CameraIntrinsics, px_canon) -> np.ndarray:
    """Inverse of :func:`rectify_pixel`."""
    px_canon = np.asarray(px_canon, dtype=np.float64)
    return cam.f * (px_canon - cam_canon.center) / cam_canon.f + cam.center
