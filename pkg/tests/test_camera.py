import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rootlift.camera import (
    CameraIntrinsics,
    normalize_pixel,
    project,
    rectify_intrinsics,
    rectify_pixel,
    unrectify_pixel,
)
from rootlift.errors import InvalidConfig, NonPositiveDepth

finite = st.floats(-5, 5, allow_nan=False)


class TestProject:
    def test_principal_ray(self):
        cam = CameraIntrinsics(1.0, 0.0, 0.0, 10, 10)
        np.testing.assert_array_equal(project(cam, [0, 0, 1]), [0, 0])

    def test_substitution(self):
        cam = CameraIntrinsics(2.0, 10.0, 20.0, 64, 64)
        np.testing.assert_allclose(project(cam, [1, 2, 2]), [11, 22])

    def test_behind_camera(self):
        cam = CameraIntrinsics(500.0, 128.0, 128.0, 256, 256)
        with pytest.raises(NonPositiveDepth):
            project(cam, [0, 0, -1])
        with pytest.raises(NonPositiveDepth):
            project(cam, [[0, 0, 1], [0, 0, 0]])

    def test_batched(self):
        cam = CameraIntrinsics(2.0, 10.0, 20.0, 64, 64)
        out = project(cam, np.array([[1, 2, 2], [0, 0, 1]]))
        np.testing.assert_allclose(out, [[11, 22], [10, 20]])


class TestNormalizePixel:
    def test_inverse_of_projection_example(self):
        cam = CameraIntrinsics(2.0, 10.0, 20.0, 64, 64)
        np.testing.assert_allclose(normalize_pixel(cam, [11, 22]), [0.5, 1.0])

    def test_principal_point(self):
        cam = CameraIntrinsics(700.0, 300.5, 211.0, 640, 480)
        np.testing.assert_array_equal(normalize_pixel(cam, cam.center), [0, 0])

    @given(finite, finite, st.floats(0.1, 10), st.floats(50, 2000))
    def test_roundtrip_is_perspective_division(self, x, y, z, f):
        cam = CameraIntrinsics(f, 320.0, 240.0, 640, 480)
        ray = normalize_pixel(cam, project(cam, [x, y, z]))
        np.testing.assert_allclose(ray, [x / z, y / z], rtol=1e-12, atol=1e-12)


class TestIntrinsics:
    def test_rejects_bad_values(self):
        with pytest.raises(InvalidConfig):
            CameraIntrinsics(0.0, 1, 1, 2, 2)
        with pytest.raises(InvalidConfig):
            CameraIntrinsics(1.0, np.nan, 1, 2, 2)
        with pytest.raises(InvalidConfig):
            CameraIntrinsics(1.0, 1, 1, 0, 2)

    def test_from_fov(self):
        cam = CameraIntrinsics.from_fov(90.0, 512, 256)
        assert cam.f == pytest.approx(256.0)
        np.testing.assert_array_equal(cam.center, [256, 128])
        np.testing.assert_allclose(cam.K, [[256, 0, 256], [0, 256, 128], [0, 0, 1]])


class TestRectify:
    cam = CameraIntrinsics(1000.0, 320.0, 240.0, 640, 480)

    def test_ratio(self):
        _, ratio = rectify_intrinsics(self.cam, 500.0)
        assert ratio == 0.5

    def test_canonical_intrinsics(self):
        canon, _ = rectify_intrinsics(self.cam, 500.0, 256, 256)
        assert canon == CameraIntrinsics(500.0, 128.0, 128.0, 256, 256)

    def test_identity_case(self):
        cam = CameraIntrinsics(500.0, 128.0, 128.0, 256, 256)
        canon, ratio = rectify_intrinsics(cam, 500.0, 256, 256)
        assert canon == cam and ratio == 1.0

    def test_invalid(self):
        with pytest.raises(InvalidConfig):
            rectify_intrinsics(self.cam, 0.0)
        with pytest.raises(InvalidConfig):
            rectify_intrinsics(self.cam, 500.0, 0, 256)

    def test_pixel_examples(self):
        canon, _ = rectify_intrinsics(self.cam, 500.0, 256, 256)
        np.testing.assert_allclose(rectify_pixel(self.cam, canon, [320, 240]), [128, 128])
        assert rectify_pixel(self.cam, canon, [420, 240])[0] == pytest.approx(178.0)
        np.testing.assert_allclose(unrectify_pixel(self.cam, canon, [178, 128]), [420, 240])
        np.testing.assert_allclose(unrectify_pixel(self.cam, canon, [128, 128]), [320, 240])

    def test_roundtrip(self, rng):
        canon, _ = rectify_intrinsics(self.cam, 500.0, 256, 256)
        px = rng.uniform(0, 640, (100, 2))
        back = unrectify_pixel(self.cam, canon, rectify_pixel(self.cam, canon, px))
        np.testing.assert_allclose(back, px, rtol=0, atol=1e-12)

    @settings(max_examples=200)
    @given(st.floats(100, 3000), st.floats(0, 1000), st.floats(0, 1000), st.floats(-500, 1500), st.floats(-500, 1500),
           st.floats(50, 2000), st.integers(16, 1024))
    def test_ray_invariance(self, f, u0, v0, u, v, fc, size):
        cam = CameraIntrinsics(f, u0, v0, 1024, 1024)
        canon, _ = rectify_intrinsics(cam, fc, size, size)
        r0 = normalize_pixel(cam, [u, v])
        r1 = normalize_pixel(canon, rectify_pixel(cam, canon, [u, v]))
        np.testing.assert_allclose(r1, r0, rtol=1e-12, atol=1e-12)
