"""JSON scene and result files.

Output is deterministic: keys keep a fixed order and every float is written
with 17 significant digits, which round-trips 64-bit values exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from ._version import __version__
from .camera import CameraIntrinsics
from .errors import RootliftError, SchemaError
from .solver import SolveResult, check_regressor
from .synthlab import Scene

_NUM = {"type": "number"}
_ROW = lambda n=None: {"type": "array", "items": _NUM, **({"minItems": n, "maxItems": n} if n else {})}  # noqa: E731

SCENE_SCHEMA = {
    "type": "object",
    "required": ["intrinsics", "vertices_rel", "j_reg", "keypoints_2d", "seed"],
    "properties": {
        "intrinsics": {
            "type": "object",
            "required": ["f", "u0", "v0", "width", "height"],
            "properties": {
                "f": _NUM,
                "u0": _NUM,
                "v0": _NUM,
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
            },
        },
        "vertices_rel": {"type": "array", "items": _ROW(3), "minItems": 1},
        "j_reg": {"type": "array", "items": _ROW(), "minItems": 1},
        "keypoints_2d": {"type": "array", "items": _ROW(2), "minItems": 1},
        "translation_gt": _ROW(3),
        "weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "outlier_mask": {"type": "array", "items": {"type": "boolean"}},
        "seed": {"type": "integer", "minimum": 0},
    },
}


def _fmt_scalar(x) -> str:
    if x is None:
        return "null"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("non-finite value cannot be written to JSON")
    return format(x, ".17g")


def _fmt_flat(value) -> str:
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt_flat(v) for v in value) + "]"
    if isinstance(value, str):
        return json.dumps(value)
    return _fmt_scalar(value)


def _fmt_value(value, indent: str) -> str:
    if isinstance(value, dict):
        inner = indent + "  "
        items = [f"{inner}{json.dumps(k)}: {_fmt_value(v, inner)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + indent + "}"
    if isinstance(value, np.ndarray) and value.ndim == 2:
        value = list(value)
    if isinstance(value, list) and value and isinstance(value[0], (list, tuple, np.ndarray)):
        inner = indent + "  "
        rows = [inner + _fmt_flat(r) for r in value]
        return "[\n" + ",\n".join(rows) + "\n" + indent + "]"
    return _fmt_flat(value)


def dumps(doc: dict) -> str:
    """Serialize a document with fixed key order and 17-digit floats."""
    return _fmt_value(doc, "") + "\n"


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def scene_to_dict(scene: Scene) -> dict:
    doc = {
        "intrinsics": scene.cam.to_dict(),
        "vertices_rel": np.asarray(scene.verts_rel),
        "j_reg": np.asarray(scene.jreg),
        "keypoints_2d": np.asarray(scene.k2d_obs),
    }
    if scene.t_gt is not None:
        doc["translation_gt"] = list(scene.t_gt)
    if scene.weights is not None:
        doc["weights"] = list(scene.weights)
    if scene.outlier_mask is not None:
        doc["outlier_mask"] = [bool(b) for b in scene.outlier_mask]
    doc["seed"] = int(scene.seed)
    return doc


def save_scene(scene: Scene, path) -> None:
    write_text(path, dumps(scene_to_dict(scene)))


def scene_from_dict(doc) -> Scene:
    try:
        jsonschema.validate(doc, SCENE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"scene schema violation at {list(exc.absolute_path)}: {exc.message}") from None
    try:
        intr = doc["intrinsics"]
        cam = CameraIntrinsics(float(intr["f"]), float(intr["u0"]), float(intr["v0"]), intr["width"], intr["height"])
        verts = np.array(doc["vertices_rel"], dtype=np.float64)
        jreg = np.array(doc["j_reg"], dtype=np.float64)
        k2d = np.array(doc["keypoints_2d"], dtype=np.float64)
        if jreg.ndim != 2 or jreg.shape[1] != verts.shape[0]:
            raise SchemaError(f"j_reg must be N_K x {verts.shape[0]}")
        n_k = jreg.shape[0]
        if k2d.shape != (n_k, 2):
            raise SchemaError(f"keypoints_2d must be {n_k} x 2, got {k2d.shape}")
        for key in ("weights", "outlier_mask"):
            if key in doc and len(doc[key]) != n_k:
                raise SchemaError(f"{key} must have {n_k} entries")
        for arr in (verts, jreg, k2d):
            if not np.all(np.isfinite(arr)):
                raise SchemaError("non-finite value in scene")
        # N_K < 2 is left to the solver, which reports it as degenerate geometry
        if n_k >= 2:
            check_regressor(jreg)
        elif np.any(jreg < 0) or np.max(np.abs(jreg.sum(axis=1) - 1)) > 1e-9:
            raise SchemaError("j_reg rows must be non-negative and sum to 1")
    except SchemaError:
        raise
    except RootliftError as exc:
        raise SchemaError(str(exc)) from None
    return Scene(
        cam,
        verts,
        jreg,
        k2d,
        t_gt=np.array(doc["translation_gt"], dtype=np.float64) if "translation_gt" in doc else None,
        outlier_mask=np.array(doc["outlier_mask"], dtype=bool) if "outlier_mask" in doc else None,
        weights=np.array(doc["weights"], dtype=np.float64) if "weights" in doc else None,
        seed=int(doc["seed"]),
    )


def load_scene(path) -> Scene:
    """Read and validate a scene file.

    Raises:
        SchemaError: malformed JSON or a document that violates the schema.
        OSError: the file cannot be read.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return scene_from_dict(doc)


def result_to_dict(result: SolveResult, error_vs_gt: float | None = None) -> dict:
    doc = {
        "translation": list(result.t),
        "residual_norm": result.residual_norm,
        "cond_estimate": result.cond_estimate,
        "behind_camera": [bool(b) for b in result.behind_camera],
    }
    if error_vs_gt is not None:
        doc["error_vs_gt"] = error_vs_gt
    doc["version"] = __version__
    return doc
