"""Acceptance suite: one test per criterion, tolerances as specified.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints
one PASS/FAIL line per criterion.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from rootlift.camera import rectify_intrinsics, rectify_pixel
from rootlift.cli import main
from rootlift.errors import DegenerateGeometry
from rootlift.sceneio import dumps, scene_to_dict
from rootlift.solver import build_system, solve_ls, solve_wls, solve_wls_vjp
from rootlift.synthlab import (
    PerturbSpec,
    finite_diff_grad,
    gen_scene,
    gradient_error,
    make_rng,
    normal,
    oracle_minimize,
    perturb,
    uniform,
)
from rootlift.toytrain import TrainConfig, train

# fixed seed bases keep the suites independent of each other
BASE = {1: 10_000, 2: 20_000, 3: 30_000, 4: 40_000, 5: 50_000, 6: 60_000}


def _seeds(n, count):
    return range(BASE[n], BASE[n] + count)


@pytest.mark.criterion(1, "exact recovery on 1000 noiseless scenes, max error <= 1e-9 m, <= 5 s")
def test_c1_exact_recovery():
    start = time.perf_counter()
    worst = 0.0
    for seed in _seeds(1, 1000):
        s = gen_scene(seed)
        sys = s.system()
        w = uniform(make_rng(seed), 0.05, 2.0, s.n_keypoints)
        worst = max(worst, np.abs(solve_ls(sys).t - s.t_gt).max(), np.abs(solve_wls(sys, w).t - s.t_gt).max())
    elapsed = time.perf_counter() - start
    print(f"criterion 1: max error {worst:.3e} m in {elapsed:.2f} s")
    assert worst <= 1e-9
    assert elapsed <= 5.0


@pytest.mark.criterion(2, "closed form matches iterative minimization within 1e-8 on 100 scenes, <= 5 s")
def test_c2_oracle_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for seed in _seeds(2, 100):
        s = perturb(gen_scene(seed), PerturbSpec(2.0, 2, seed))
        rng = make_rng(seed)
        w = uniform(rng, 0.1, 1.5, s.n_keypoints)
        t0 = normal(rng, 3)
        sys = s.system()
        worst = max(worst, np.abs(oracle_minimize(sys, w, t0=t0) - solve_wls(sys, w).t).max())
    elapsed = time.perf_counter() - start
    print(f"criterion 2: max difference {worst:.3e} m in {elapsed:.2f} s")
    assert worst <= 1e-8
    assert elapsed <= 5.0


@pytest.mark.criterion(3, "VJP vs central differences (eps 1e-6), max relative error < 1e-5 on 100 scenes, <= 30 s")
def test_c3_gradient_correctness():
    start = time.perf_counter()
    worst = 0.0
    for seed in _seeds(3, 100):
        s = perturb(gen_scene(seed), PerturbSpec(1.0, 0, seed))
        rng = make_rng(seed)
        w = uniform(rng, 0.5, 1.5, s.n_keypoints)
        g = normal(rng, 3)
        analytic = solve_wls_vjp(s.system(), w, g, cam=s.cam)
        worst = max(worst, gradient_error(analytic, finite_diff_grad(s, w, g, eps=1e-6)))
    elapsed = time.perf_counter() - start
    print(f"criterion 3: max relative error {worst:.3e} in {elapsed:.2f} s")
    assert worst < 1e-5
    assert elapsed <= 30.0


@pytest.mark.criterion(4, "zero-weight deletion and weight-scale invariance within 1e-12 on 100 scenes")
def test_c4_weight_invariances():
    worst_del = worst_scale = 0.0
    for seed in _seeds(4, 100):
        s = perturb(gen_scene(seed), PerturbSpec(2.0, 2, seed))
        rng = make_rng(seed)
        sys = s.system()
        w = uniform(rng, 0.1, 1.5, s.n_keypoints)
        c = float(np.exp(uniform(rng, -5, 5)))
        worst_scale = max(worst_scale, np.abs(solve_wls(sys, c * w).t - solve_wls(sys, w).t).max())
        drop = int(rng.integers(0, s.n_keypoints))
        w0 = np.ones(s.n_keypoints)
        w0[drop] = 0.0
        keep = np.arange(s.n_keypoints) != drop
        sub = solve_ls(build_system(s.k3d[keep], s.rays[keep])).t
        worst_del = max(worst_del, np.abs(solve_wls(sys, w0).t - sub).max())
    print(f"criterion 4: deletion {worst_del:.3e}, scale {worst_scale:.3e}")
    assert worst_del <= 1e-12
    assert worst_scale <= 1e-12


@pytest.mark.criterion(5, "rectified solve reproduces the unrectified translation within 1e-9 on 100 scenes")
def test_c5_rectification_invariance():
    worst = 0.0
    for seed in _seeds(5, 100):
        s = perturb(gen_scene(seed), PerturbSpec(2.0, 2, seed))
        canon, _ = rectify_intrinsics(s.cam, 500.0, 256, 256)
        rect = replace(s, cam=canon, k2d_obs=rectify_pixel(s.cam, canon, s.k2d_obs))
        worst = max(worst, np.abs(solve_ls(rect.system()).t - solve_ls(s.system()).t).max())
    print(f"criterion 5: max difference {worst:.3e} m")
    assert worst <= 1e-9


def _adversarial_fixtures():
    """25 shared-ray scenes and 25 scenes with fewer than two positive weights."""
    out = []
    for i, seed in enumerate(_seeds(6, 25)):
        s = gen_scene(seed)
        rng = make_rng(seed)
        px = uniform(rng, 0, s.cam.width, 2)
        # identical pixels; every fifth fixture also zeroes some weights
        w = np.ones(s.n_keypoints)
        if i % 5 == 0:
            w[: s.n_keypoints // 2] = 0.0
        out.append((replace(s, k2d_obs=np.tile(px, (s.n_keypoints, 1))), w))
    for i, seed in enumerate(_seeds(6, 25)):
        s = perturb(gen_scene(seed + 1000), PerturbSpec(2.0, 2, seed))
        w = np.zeros(s.n_keypoints)
        if i % 2:
            w[i % s.n_keypoints] = float(10.0 ** (i % 7 - 3))
        out.append((s, w))
    return out


@pytest.mark.criterion(6, "shared-ray scenes and < 2 positive weights raise DegenerateGeometry and exit 2 (50 fixtures)")
def test_c6_degeneracy(tmp_path):
    fixtures = _adversarial_fixtures()
    assert len(fixtures) == 50
    for i, (scene, w) in enumerate(fixtures):
        with pytest.raises(DegenerateGeometry):
            solve_wls(scene.system(), w)
        with pytest.raises(DegenerateGeometry):
            oracle_minimize(scene.system(), w)
        doc = scene_to_dict(replace(scene, weights=w))
        path = tmp_path / f"deg_{i}.json"
        path.write_text(dumps(doc))
        out = tmp_path / f"deg_{i}.result"
        assert main(["solve", "--scene", str(path), "--weights", "from-file", "--out", str(out)]) == 2
        assert not out.exists()
    print("criterion 6: 50 of 50 fixtures rejected")


@pytest.fixture(scope="module")
def trend_runs():
    base = TrainConfig(n_train=200, n_test=100, noise_px=2.0, outliers=2, epochs=300, fov_range=(40.0, 70.0))
    runs = {}
    for key, mode, rect in (("e2e", "e2e", False), ("detached", "detached", False), ("rectified", "e2e", True)):
        start = time.perf_counter()
        report = train(replace(base, mode=mode, rectified=rect))
        runs[key] = (report, time.perf_counter() - start)
    return runs


@pytest.mark.criterion(7, "end-to-end CS-MJE < detached CS-MJE (200/100 scenes, 2 px, 2 outliers, 300 epochs), <= 2 min")
def test_c7_e2e_beats_detached(trend_runs):
    (e2e, t1), (det, t2) = trend_runs["e2e"], trend_runs["detached"]
    print(f"criterion 7: e2e {e2e.final['cs_mje']:.2f} mm vs detached {det.final['cs_mje']:.2f} mm in {t1 + t2:.1f} s")
    assert e2e.final["cs_mje"] < det.final["cs_mje"]
    assert t1 + t2 <= 120.0


@pytest.mark.criterion(8, "rectified e2e CS-MJE < unrectified e2e CS-MJE (FOV 40-70 deg), <= 2 min")
def test_c8_rectification_helps(trend_runs):
    (rect, t1), (unrect, t2) = trend_runs["rectified"], trend_runs["e2e"]
    print(f"criterion 8: rectified {rect.final['cs_mje']:.2f} mm vs unrectified {unrect.final['cs_mje']:.2f} mm "
          f"in {t1 + t2:.1f} s")
    assert rect.final["cs_mje"] < unrect.final["cs_mje"]
    assert t1 + t2 <= 120.0


@pytest.mark.criterion(9, "after e2e training, mean outlier weight < mean inlier weight on the test split")
def test_c9_outliers_weighted_lower(trend_runs):
    for key in ("e2e", "rectified"):
        f = trend_runs[key][0].final
        print(f"criterion 9 ({key}): outlier {f['mean_w_outlier']:.4f} vs inlier {f['mean_w_inlier']:.4f}")
        assert f["mean_w_outlier"] < f["mean_w_inlier"]


def _snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def _run_all_commands(root, capsys):
    root.mkdir()
    stdout = []
    cmds = [
        ["synth", "--seed", "3", "--count", "4", "--noise-px", "2", "--outliers", "2", "--out", str(root / "scenes")],
        ["solve", "--scene", str(root / "scenes" / "scene_3_0.json"), "--out", str(root / "result.json")],
        ["rectify", "--scene", str(root / "scenes" / "scene_3_1.json"), "--out", str(root / "rect.json")],
        ["gradcheck", "--random", "5"],
        ["gradcheck", "--scene", str(root / "rect.json")],
        ["train", "--epochs", "20", "--train", "40", "--test", "20", "--report", str(root / "report.json")],
    ]
    for cmd in cmds:
        assert main(cmd) == 0, cmd
        stdout.append(capsys.readouterr().out.replace(str(root), "<root>"))
    return _snapshot(root), stdout


@pytest.mark.criterion(10, "every command rerun with identical flags produces byte-identical output files")
def test_c10_determinism(tmp_path, capsys):
    files_a, out_a = _run_all_commands(tmp_path / "a", capsys)
    files_b, out_b = _run_all_commands(tmp_path / "b", capsys)
    assert files_a.keys() == files_b.keys() and len(files_a) == 8
    for name in files_a:
        assert files_a[name] == files_b[name], name
    assert out_a == out_b
    json.loads(files_a["report.json"])
    print(f"criterion 10: {len(files_a)} files identical across reruns")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
