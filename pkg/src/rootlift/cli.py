"""Command-line interface.

Exit codes: 0 success, 1 invalid flags, 2 degenerate geometry, 3 I/O or
schema error, 4 check failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._version import __version__
from .camera import rectify_intrinsics, rectify_pixel
from .errors import DegenerateGeometry, InvalidConfig, SchemaError
from .sceneio import dumps, load_scene, result_to_dict, save_scene, write_text
from .solver import solve_wls, solve_wls_vjp
from .synthlab import PerturbSpec, finite_diff_grad, gen_scene, gradient_error, make_rng, normal, perturb, uniform
from .toytrain import TrainConfig, train

EXIT_OK, EXIT_FLAGS, EXIT_DEGENERATE, EXIT_IO, EXIT_CHECK = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FLAGS, f"{self.prog}: error: {message}\n")


def _derive_seed(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1, dtype=np.uint64)[0])


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or WxH, got {text!r}") from None
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected N or WxH with positive sizes, got {text!r}")
    return dims[0], dims[1]


def _fmt_vec(v) -> str:
    return "[" + ", ".join(f"{x:.9g}" for x in v) + "]"


def cmd_solve(args) -> int:
    scene = load_scene(args.scene)
    if args.weights == "from-file":
        if scene.weights is None:
            raise SchemaError("--weights from-file needs a 'weights' entry in the scene")
        w = np.asarray(scene.weights)
    else:
        w = np.ones(scene.n_keypoints)
    result = solve_wls(scene.system(), w)
    err = None
    print(f"translation (m): {_fmt_vec(result.t)}")
    print(f"residual_norm: {result.residual_norm:.6g}")
    print(f"cond_estimate: {result.cond_estimate:.6g}")
    print(f"behind_camera: {int(result.behind_camera.sum())} of {scene.n_keypoints}")
    if scene.t_gt is not None:
        err = float(np.linalg.norm(result.t - scene.t_gt))
        print(f"error vs ground truth (mm): {1000 * err:.6g}")
    if args.out:
        write_text(args.out, dumps(result_to_dict(result, err)))
    return EXIT_OK


def cmd_synth(args) -> int:
    if not math.isfinite(args.noise_px) or args.noise_px < 0:
        raise InvalidConfig("--noise-px must be a finite value >= 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        scene = gen_scene(_derive_seed(args.seed, i))
        scene = perturb(scene, PerturbSpec(args.noise_px, args.outliers, _derive_seed(args.seed, i, 1)))
        save_scene(scene, out / f"scene_{args.seed}_{i}.json")
    print(f"wrote {args.count} scenes to {out}")
    return EXIT_OK


def _gradcheck_one(scene, w, g, eps) -> float:
    sys_ = scene.system()
    analytic = solve_wls_vjp(sys_, w, g, cam=scene.cam)
    reference = finite_diff_grad(scene, w, g, eps=eps)
    return gradient_error(analytic, reference)


def cmd_gradcheck(args) -> int:
    if not (1e-8 <= args.eps <= 1e-4):
        raise InvalidConfig("--eps must lie in [1e-8, 1e-4]")
    if not args.tol >= 0:
        raise InvalidConfig("--tol must be >= 0")
    worst = 0.0
    if args.scene:
        scene = load_scene(args.scene)
        w = np.asarray(scene.weights) if scene.weights is not None else np.ones(scene.n_keypoints)
        g = normal(make_rng(_derive_seed(args.seed, 0)), 3)
        worst = _gradcheck_one(scene, w, g, args.eps)
        n = 1
    else:
        n = args.random
        for i in range(n):
            rng = make_rng(_derive_seed(args.seed, i, 2))
            scene = perturb(gen_scene(_derive_seed(args.seed, i)), PerturbSpec(1.0, 0, _derive_seed(args.seed, i, 1)))
            w = uniform(rng, 0.5, 1.5, scene.n_keypoints)
            g = normal(rng, 3)
            worst = max(worst, _gradcheck_one(scene, w, g, args.eps))
    print(f"max relative error over {n} scene(s): {worst:.3e} (tol {args.tol:g})")
    return EXIT_OK if worst < args.tol else EXIT_CHECK


def cmd_rectify(args) -> int:
    scene = load_scene(args.scene)
    w, h = args.size
    canon, _ = rectify_intrinsics(scene.cam, args.canonical_f, w, h)
    k2d = rectify_pixel(scene.cam, canon, scene.k2d_obs)
    save_scene(replace(scene, cam=canon, k2d_obs=k2d), args.out)
    print(f"rectified to f={canon.f:g} px, {w}x{h} px")
    return EXIT_OK


def _finite_or_none(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _clean(value):
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return _finite_or_none(value)


def cmd_train(args) -> int:
    config = TrainConfig(
        mode=args.mode,
        rectified=args.rectified,
        seed=args.seed,
        epochs=args.epochs,
        lr=args.lr,
        n_train=args.train,
        n_test=args.test,
    ).validate()
    report = train(config)
    doc = _clean(report.to_dict())
    doc["version"] = __version__
    report_path = Path(args.report)
    write_text(report_path, dumps(doc))

    buf = io.StringIO()
    cols = ("train_loss", "cs_mje", "rs_mje", "mean_w_inlier", "mean_w_outlier")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("epoch",) + cols)
    for e in range(config.epochs):
        writer.writerow([e + 1] + [format(getattr(report, c)[e], ".17g") for c in cols])
    write_text(report_path.with_suffix(".csv"), buf.getvalue())

    f = report.final
    print(f"final CS-MJE (mm): {f['cs_mje']:.4f}")
    print(f"final RS-MJE (mm): {f['rs_mje']:.4f}")
    print(f"mean weight inlier/outlier: {f['mean_w_inlier']:.4f} / {f['mean_w_outlier']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rootlift", description="Differentiable root-translation solver tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a scene for its root translation")
    p.add_argument("--scene", required=True, help="scene JSON file (pixels, metres)")
    p.add_argument("--weights", choices=("uniform", "from-file"), default="uniform",
                   help="per-keypoint weights (dimensionless): all ones, or the scene's 'weights' entry")
    p.add_argument("--out", help="result JSON file; translation and error in metres")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("synth", help="generate random scene files")
    p.add_argument("--seed", type=_nonneg_int, default=0, help="base seed (integer)")
    p.add_argument("--count", type=_nonneg_int, default=1, help="number of scenes (count)")
    p.add_argument("--noise-px", type=float, default=0.0, help="Gaussian keypoint noise std (pixels)")
    p.add_argument("--outliers", type=_nonneg_int, default=0, help="uniform in-frame outlier keypoints per scene (count)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="scene JSON file (pixels, metres)")
    src.add_argument("--random", type=_nonneg_int, help="number of random scenes (count)")
    p.add_argument("--eps", type=float, default=1e-6, help="finite-difference step (pixels, metres, weight units)")
    p.add_argument("--tol", type=float, default=1e-5, help="maximum relative error (dimensionless)")
    p.add_argument("--seed", type=_nonneg_int, default=0, help="seed for random scenes and upstream gradients (integer)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("rectify", help="map a scene to the canonical camera")
    p.add_argument("--scene", required=True, help="scene JSON file (pixels, metres)")
    p.add_argument("--canonical-f", type=float, default=500.0, help="canonical focal length (pixels)")
    p.add_argument("--size", type=_size, default=(256, 256), help="canonical crop size, N or WxH (pixels)")
    p.add_argument("--out", required=True, help="output scene JSON file")
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("train", help="train the toy model and report held-out metrics")
    p.add_argument("--mode", choices=("e2e", "detached"), default="e2e", help="gradient flow through the solver")
    p.add_argument("--rectified", type=_bool, default=True, help="train in the canonical camera (true|false)")
    p.add_argument("--seed", type=_nonneg_int, default=0, help="experiment seed (integer)")
    p.add_argument("--epochs", type=int, default=300, help="training epochs (count)")
    p.add_argument("--lr", type=float, default=TrainConfig.lr, help="gradient-descent step size (per unit loss: mm and pixels)")
    p.add_argument("--train", type=int, default=200, help="training scenes (count)")
    p.add_argument("--test", type=int, default=100, help="held-out scenes (count)")
    p.add_argument("--report", required=True, help="report JSON file (mm); a per-epoch CSV is written next to it")
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DegenerateGeometry as exc:
        print(f"degenerate geometry: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except InvalidConfig as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except (SchemaError, OSError) as exc:
        print(f"I/O or schema error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
