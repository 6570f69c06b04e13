"""A linear stand-in network trained through the differentiable root solver.

The model reads corrupted observations of a posed template hand and predicts
2D keypoints, root-relative 3D keypoints and vertices, and per-keypoint
confidences. The root translation comes from the weighted least-squares
solver; camera-space losses are placed after it. In ``"e2e"`` mode their
gradients reach the model through the solver's VJP, in ``"detached"`` mode the
solver inputs are treated as constants and only the relative-space losses
train the model.

Units: 3D losses and metrics are in millimetres, 2D losses in pixels of the
working frame (the canonical crop when ``rectified`` is set, the original
frame otherwise).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from .camera import rectify_intrinsics, rectify_pixel
from .errors import InvalidConfig
from .synthlab import PerturbSpec, Scene, gen_scene, make_rng, normal, perturb, pose_scene

logger = logging.getLogger(__name__)

MM = 1000.0
K3D_UNIT = 0.1  # metres per feature/output unit for 3D quantities
LOGIT_CLIP = 30.0
MIN_DEPTH = 0.05  # metres; projection losses skip scenes with closer points


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "e2e"
    rectified: bool = True
    epochs: int = 300
    lr: float = 3e-4
    batch_size: int = 20
    seed: int = 0
    n_train: int = 200
    n_test: int = 100
    noise_px: float = 2.0
    outliers: int = 2
    noise_3d_m: float = 0.005
    lam_rel: float = 1.0
    lam_2d: float = 1.0
    lam_t: float = 1.0
    lam_kc: float = 1.0
    lam_v2d: float = 1.0
    n_k: int = 21
    n_v: int = 64
    fov_range: tuple = (40.0, 70.0)
    depth_range: tuple = (0.3, 1.2)
    canonical_f: float = 500.0
    canonical_size: int = 256

    def validate(self) -> TrainConfig:
        if self.mode not in ("e2e", "detached"):
            raise InvalidConfig(f"mode must be 'e2e' or 'detached', got {self.mode!r}")
        if not self.lr >= 0 or not np.isfinite(self.lr):
            raise InvalidConfig("step size must be a non-negative finite number")
        if self.epochs < 1 or self.batch_size < 1 or self.n_train < 1 or self.n_test < 1:
            raise InvalidConfig("epochs, batch size and split sizes must be >= 1")
        lams = (self.lam_rel, self.lam_2d, self.lam_t, self.lam_kc, self.lam_v2d)
        if any(not lam >= 0 for lam in lams):
            raise InvalidConfig("loss coefficients must be >= 0")
        if self.noise_px < 0 or self.noise_3d_m < 0:
            raise InvalidConfig("noise levels must be >= 0")
        if not 0 <= self.outliers < self.n_k - 1:
            raise InvalidConfig(f"outliers must be in [0, {self.n_k - 1})")
        return self


@dataclass(frozen=True)
class Dims:
    n_k: int
    n_v: int


@dataclass
class ToyModel:
    """Linear map: per-keypoint residual 2D/3D heads, a dense vertex head, and a shared sigmoid weight head."""

    dims: Dims
    params: dict = field(default_factory=dict)

    def copy(self) -> ToyModel:
        return ToyModel(self.dims, {k: v.copy() for k, v in self.params.items()})


def init_model(seed: int, dims: Dims, scale: float = 1e-3) -> ToyModel:
    if dims.n_k < 2 or dims.n_v < 1:
        raise InvalidConfig(f"invalid model dimensions {dims}")
    nk, nv = dims.n_k, dims.n_v
    rng = make_rng(seed)
    # per-keypoint affine blocks for 2D/3D keypoints, dense map for vertices,
    # one logistic head shared by all keypoints for the weights
    shapes = {
        "W2": ((nk, 2, 2), (nk, 2)),
        "W3": ((nk, 3, 3), (nk, 3)),
        "Wv": ((3 * nv, 3 * nk), (3 * nv,)),
        "Ww": ((1, 2), (1,)),
    }
    params = {}
    for name, (wshape, bshape) in shapes.items():
        params[name] = scale * normal(rng, wshape)
        params["b" + name[1:]] = np.zeros(bshape)
    return ToyModel(dims, params)


@dataclass
class Batch:
    """Stacked per-scene arrays in the working frame; ``jreg`` is shared."""

    jreg: np.ndarray
    f: np.ndarray  # (B,) working focal length
    c: np.ndarray  # (B, 2) working principal point
    s: np.ndarray  # (B,) pixel scale of 2D features
    obs: np.ndarray  # (B, N, 2) observed pixels
    k2d_gt: np.ndarray
    k3d_noisy: np.ndarray
    k3d_gt: np.ndarray
    verts_gt: np.ndarray
    verts2d_gt: np.ndarray
    t_gt: np.ndarray
    outlier: np.ndarray
    feat2d: np.ndarray
    feat3d: np.ndarray
    featw: np.ndarray

    def __len__(self):
        return len(self.f)

    def take(self, idx) -> Batch:
        kw = {k: (v if k == "jreg" else v[idx]) for k, v in self.__dict__.items()}
        return Batch(**kw)


def _project(f, c, X):
    """Batched projection; ``X`` is (B, M, 3), ``f`` (B,), ``c`` (B, 2)."""
    return f[:, None, None] * X[..., :2] / X[..., 2:3] + c[:, None, :]


def featurize(obs, s, c, k3d_noisy):
    """Input features: normalized pixels, 3D keypoints, and per-keypoint spread features.

    The spread features are each keypoint's distance from the median observed
    keypoint, and its square, in units of ``s`` pixels.
    """
    B, n, _ = obs.shape
    feat2d = (obs - c[:, None, :]) / s[:, None, None]
    feat3d = k3d_noisy / K3D_UNIT
    med = np.median(obs, axis=1)
    dev = np.linalg.norm(obs - med[:, None, :], axis=2) / s[:, None]
    featw = np.stack([dev, dev * dev], axis=2)
    return feat2d, feat3d, featw


def make_batch(scenes: list[Scene], config: TrainConfig, noise_seed: int) -> Batch:
    """Working-frame arrays for ``scenes``; rectifies coordinates when configured."""
    n = len(scenes)
    jreg = np.asarray(scenes[0].jreg)
    rng = make_rng(noise_seed)
    f, c, s = np.empty(n), np.empty((n, 2)), np.empty(n)
    obs, k2d_gt, verts2d = [], [], []
    k3d_gt = np.stack([sc.k3d for sc in scenes])
    verts_gt = np.stack([np.asarray(sc.verts_rel) for sc in scenes])
    t_gt = np.stack([np.asarray(sc.t_gt) for sc in scenes])
    for i, sc in enumerate(scenes):
        cam = sc.cam
        true2d = sc.k2d_true()
        vert2d = _project(np.array([cam.f]), cam.center[None], (verts_gt[i] + t_gt[i])[None])[0]
        o = np.asarray(sc.k2d_obs)
        if config.rectified:
            canon, _ = rectify_intrinsics(cam, config.canonical_f, config.canonical_size, config.canonical_size)
            o, true2d, vert2d = (rectify_pixel(cam, canon, a) for a in (o, true2d, vert2d))
            cam = canon
        f[i], c[i], s[i] = cam.f, cam.center, cam.width / 2
        obs.append(o)
        k2d_gt.append(true2d)
        verts2d.append(vert2d)
    obs = np.stack(obs)
    k3d_noisy = k3d_gt + config.noise_3d_m * normal(rng, k3d_gt.shape)
    feat2d, feat3d, featw = featurize(obs, s, c, k3d_noisy)
    return Batch(
        jreg, f, c, s, obs, np.stack(k2d_gt), k3d_noisy, k3d_gt, verts_gt, np.stack(verts2d), t_gt,
        np.stack([np.asarray(sc.outlier_mask) for sc in scenes]), feat2d, feat3d, featw,
    )


def _seed(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1, dtype=np.uint64)[0])


def make_splits(config: TrainConfig) -> tuple[Batch, Batch]:
    """Train and held-out batches of posed template hands; pure function of the config."""
    config.validate()
    template = gen_scene(_seed(config.seed, 0), n_v=config.n_v, n_k=config.n_k, depth_range=config.depth_range)
    out = []
    for split, count in ((1, config.n_train), (2, config.n_test)):
        scenes = []
        for i in range(count):
            sc = pose_scene(
                template, _seed(config.seed, split, i), depth_range=config.depth_range, fov_range=config.fov_range
            )
            sc = perturb(sc, PerturbSpec(config.noise_px, config.outliers, _seed(config.seed, split, i, 1)))
            scenes.append(sc)
        out.append(make_batch(scenes, config, _seed(config.seed, split, 2)))
    return out[0], out[1]


@dataclass
class Forward:
    k2d: np.ndarray
    k3d: np.ndarray
    verts: np.ndarray
    w: np.ndarray
    t: np.ndarray
    ok: np.ndarray  # solver succeeded
    terms: dict
    total: float
    cache: dict


def _logits(p, featw):
    # shared across keypoints; each keypoint sees only its own spread features
    return featw @ p["Ww"][0] + p["bw"][0]


def predict(model: ToyModel, batch: Batch):
    p = model.params
    B = len(batch)
    nv = model.dims.n_v
    k2d = batch.obs + batch.s[:, None, None] * (np.einsum("kij,bkj->bki", p["W2"], batch.feat2d) + p["b2"])
    k3d = batch.k3d_noisy + K3D_UNIT * (np.einsum("kij,bkj->bki", p["W3"], batch.feat3d) + p["b3"])
    verts = K3D_UNIT * (batch.feat3d.reshape(B, -1) @ p["Wv"].T + p["bv"]).reshape(B, nv, 3)
    logits = np.clip(_logits(p, batch.featw), -LOGIT_CLIP, LOGIT_CLIP)
    w = 1.0 / (1.0 + np.exp(-logits))
    return k2d, k3d, verts, w


def solve_root(k2d, k3d, w, f, c):
    rays = (k2d - c[:, None, :]) / f[:, None, None]
    rhs = k3d[..., :2] - k3d[..., 2:3] * rays
    t, _, _, ok = kernels.solve_batch(rays, rhs, w)
    return t, ok, rays, rhs


def loss_terms(k2d, k3d, verts, w, batch: Batch):
    """Loss terms from model outputs; returns ``(t, ok, terms, cache)``.

    The translation term averages over scenes whose solve succeeded. Each
    projection term only uses scenes whose camera-space points all lie at
    least ``MIN_DEPTH`` in front of the camera; closer points make the
    projection gradient blow up.
    """
    t, ok, rays, rhs = solve_root(k2d, k3d, w, batch.f, batch.c)
    t_safe = np.where(ok[:, None], t, 0.0)
    Xk = k3d + t_safe[:, None, :]
    Xv = verts + t_safe[:, None, :]
    ok_k = ok & np.all(Xk[..., 2] > MIN_DEPTH, axis=1)
    ok_v = ok & np.all(Xv[..., 2] > MIN_DEPTH, axis=1)
    Xk[~ok_k, :, 2] = 1.0
    Xv[~ok_v, :, 2] = 1.0
    pk = _project(batch.f, batch.c, Xk)
    pv = _project(batch.f, batch.c, Xv)

    rel = MM * np.abs(verts - batch.verts_gt).mean(axis=(1, 2))
    l2d = np.abs(k2d - batch.k2d_gt).mean(axis=(1, 2))
    dt = t_safe - batch.t_gt
    lt = MM * np.sqrt((dt * dt).mean(axis=1))
    kc = np.abs(pk - k2d).mean(axis=(1, 2))
    v2d = np.abs(pv - batch.verts2d_gt).mean(axis=(1, 2))
    n_ok, n_k, n_v = (max(int(m.sum()), 1) for m in (ok, ok_k, ok_v))
    terms = {
        "rel": float(rel.mean()),
        "2d": float(l2d.mean()),
        "t": float(lt[ok].sum() / n_ok),
        "kc": float(kc[ok_k].sum() / n_k),
        "v2d": float(v2d[ok_v].sum() / n_v),
    }
    cache = dict(
        t=t_safe, ok=ok, ok_k=ok_k, ok_v=ok_v, n=(n_ok, n_k, n_v),
        rays=rays, rhs=rhs, Xk=Xk, Xv=Xv, pk=pk, pv=pv, dt=dt,
    )
    return t, ok, terms, cache


def total_loss(terms: dict, config: TrainConfig) -> float:
    return (
        config.lam_rel * terms["rel"]
        + config.lam_2d * terms["2d"]
        + config.lam_t * terms["t"]
        + config.lam_kc * terms["kc"]
        + config.lam_v2d * terms["v2d"]
    )


def forward_batch(model: ToyModel, batch: Batch, config: TrainConfig) -> Forward:
    k2d, k3d, verts, w = predict(model, batch)
    t, ok, terms, cache = loss_terms(k2d, k3d, verts, w, batch)
    return Forward(k2d, k3d, verts, w, t, ok, terms, total_loss(terms, config), cache)


def forward(model: ToyModel, scene: Scene, config: TrainConfig | None = None, noise_seed: int = 0) -> Forward:
    """Single-scene forward pass (2D, 3D, vertices, weights, root, loss terms)."""
    config = config or TrainConfig()
    return forward_batch(model, make_batch([scene], config, noise_seed), config)


def _proj_backward(f, X, G):
    """Pull pixel gradients ``G`` (B, M, 2) back to camera-space points ``X``."""
    Z = X[..., 2]
    fz = f[:, None] / Z
    dX = np.empty(X.shape)
    dX[..., 0] = fz * G[..., 0]
    dX[..., 1] = fz * G[..., 1]
    dX[..., 2] = -fz * (X[..., 0] * G[..., 0] + X[..., 1] * G[..., 1]) / Z
    return dX


def output_gradients(fw: Forward, batch: Batch, config: TrainConfig):
    """Gradients of the total loss w.r.t. (k2d, k3d, verts, w).

    In detached mode every camera-space path is cut, so only the
    relative-space terms contribute.
    """
    B = len(batch)
    nk = fw.k2d.shape[1]
    nv = fw.verts.shape[1]
    d_verts = config.lam_rel * MM * np.sign(fw.verts - batch.verts_gt) / (3 * nv * B)
    d_k2d = config.lam_2d * np.sign(fw.k2d - batch.k2d_gt) / (2 * nk * B)
    d_k3d = np.zeros(fw.k3d.shape)
    d_w = np.zeros(fw.w.shape)
    if config.mode == "detached":
        return d_k2d, d_k3d, d_verts, d_w

    c = fw.cache
    n_ok, n_k, n_v = c["n"]
    # translation RMSE
    dt = c["dt"]
    norm = np.linalg.norm(dt, axis=1)
    g_t = np.where(norm[:, None] > 0, config.lam_t * MM * dt / (np.sqrt(3.0) * np.where(norm > 0, norm, 1.0))[:, None], 0.0)
    g_t = g_t * (c["ok"] / n_ok)[:, None]
    # keypoint consistency
    Gk = config.lam_kc * np.sign(c["pk"] - fw.k2d) / (2 * nk) * (c["ok_k"] / n_k)[:, None, None]
    d_k2d -= Gk
    dXk = _proj_backward(batch.f, c["Xk"], Gk)
    d_k3d += dXk
    g_t = g_t + dXk.sum(axis=1)
    # projected vertices
    Gv = config.lam_v2d * np.sign(c["pv"] - batch.verts2d_gt) / (2 * nv) * (c["ok_v"] / n_v)[:, None, None]
    dXv = _proj_backward(batch.f, c["Xv"], Gv)
    d_verts = d_verts + dXv
    g_t = g_t + dXv.sum(axis=1)
    # through the solver
    rays, rhs = c["rays"], c["rhs"]
    d_rays, d_rhs, dw = kernels.vjp_batch(rays, rhs, fw.w, c["t"], g_t)
    z = fw.k3d[..., 2]
    d_k3d[..., 0] += d_rhs[..., 0]
    d_k3d[..., 1] += d_rhs[..., 1]
    d_k3d[..., 2] -= rays[..., 0] * d_rhs[..., 0] + rays[..., 1] * d_rhs[..., 1]
    d_rays = d_rays - z[..., None] * d_rhs
    d_k2d += d_rays / batch.f[:, None, None]
    d_w += dw
    return d_k2d, d_k3d, d_verts, d_w


def param_gradients(model: ToyModel, fw: Forward, batch: Batch, config: TrainConfig) -> dict:
    d_k2d, d_k3d, d_verts, d_w = output_gradients(fw, batch, config)
    B = len(batch)
    d_lin2 = batch.s[:, None, None] * d_k2d
    d_lin3 = K3D_UNIT * d_k3d
    d_linv = (K3D_UNIT * d_verts).reshape(B, -1)
    logits = _logits(model.params, batch.featw)
    inside = np.abs(logits) < LOGIT_CLIP
    d_logit = d_w * fw.w * (1.0 - fw.w) * inside
    return {
        "W2": np.einsum("bki,bkj->kij", d_lin2, batch.feat2d),
        "b2": d_lin2.sum(axis=0),
        "W3": np.einsum("bki,bkj->kij", d_lin3, batch.feat3d),
        "b3": d_lin3.sum(axis=0),
        "Wv": d_linv.T @ batch.feat3d.reshape(B, -1),
        "bv": d_linv.sum(axis=0),
        "Ww": np.einsum("bk,bkj->j", d_logit, batch.featw)[None],
        "bw": np.array([d_logit.sum()]),
    }


def step(model: ToyModel, batch: Batch, config: TrainConfig) -> tuple[ToyModel, Forward, dict]:
    """One plain gradient-descent update; returns the new model, the forward pass, and the gradients."""
    if len(batch) == 0:
        raise InvalidConfig("empty batch")
    fw = forward_batch(model, batch, config)
    grads = param_gradients(model, fw, batch, config)
    new = ToyModel(model.dims, {k: v - config.lr * grads[k] for k, v in model.params.items()})
    return new, fw, grads


def evaluate(model: ToyModel, batch: Batch) -> dict:
    """Held-out CS-MJE and root-centred RS-MJE in millimetres, plus mean weights.

    Scenes whose solve fails are excluded from the joint errors and counted
    in ``skipped``.
    """
    k2d, k3d, verts, w = predict(model, batch)
    t, ok, _, _ = solve_root(k2d, k3d, w, batch.f, batch.c)
    return metrics_from(k3d, t, ok, w, batch)


def metrics_from(k3d, t, ok, w, batch: Batch) -> dict:
    cs = np.linalg.norm((k3d + t[:, None, :]) - (batch.k3d_gt + batch.t_gt[:, None, :]), axis=2)
    rel_p = k3d - k3d.mean(axis=1, keepdims=True)
    rel_g = batch.k3d_gt - batch.k3d_gt.mean(axis=1, keepdims=True)
    rs = np.linalg.norm(rel_p - rel_g, axis=2)
    out = batch.outlier
    return {
        "cs_mje": float(MM * cs[ok].mean()) if ok.any() else float("nan"),
        "rs_mje": float(MM * rs[ok].mean()) if ok.any() else float("nan"),
        "mean_w_inlier": float(w[~out].mean()) if (~out).any() else float("nan"),
        "mean_w_outlier": float(w[out].mean()) if out.any() else float("nan"),
        "skipped": int((~ok).sum()),
    }


@dataclass
class TrainReport:
    config: dict
    backend: str
    baseline: dict
    train_loss: list
    cs_mje: list
    rs_mje: list
    mean_w_inlier: list
    mean_w_outlier: list
    skipped: int
    final: dict

    def to_dict(self) -> dict:
        return asdict(self)


def train(config: TrainConfig, return_model: bool = False):
    """Full training run on freshly generated splits; pure function of ``config``."""
    config.validate()
    train_b, test_b = make_splits(config)
    model = init_model(_seed(config.seed, 3), Dims(config.n_k, config.n_v))
    baseline = evaluate(model, test_b)
    order_rng = make_rng(_seed(config.seed, 4))
    hist = {k: [] for k in ("train_loss", "cs_mje", "rs_mje", "mean_w_inlier", "mean_w_outlier")}
    skipped = 0
    n = len(train_b)
    for epoch in range(config.epochs):
        perm = np.argsort(order_rng.random(n), kind="stable")
        losses = []
        for start in range(0, n, config.batch_size):
            batch = train_b.take(perm[start : start + config.batch_size])
            model, fw, _ = step(model, batch, config)
            losses.append(fw.total * len(batch))
            skipped += int((~fw.ok).sum())
        m = evaluate(model, test_b)
        hist["train_loss"].append(float(sum(losses) / n))
        for k in ("cs_mje", "rs_mje", "mean_w_inlier", "mean_w_outlier"):
            hist[k].append(m[k])
        logger.debug("epoch %d loss %.4f cs %.3f rs %.3f", epoch, hist["train_loss"][-1], m["cs_mje"], m["rs_mje"])
    final = evaluate(model, test_b)
    cfg = asdict(config)
    cfg["fov_range"] = list(config.fov_range)
    cfg["depth_range"] = list(config.depth_range)
    report = TrainReport(cfg, kernels.BACKEND, baseline, skipped=skipped, final=final, **hist)
    return (report, model) if return_model else report


def compare_modes(config_a: TrainConfig, config_b: TrainConfig) -> dict:
    """Train both configurations and report their final metrics and ``b - a`` deltas."""
    ra, rb = train(config_a), train(config_b)
    keys = ("cs_mje", "rs_mje", "mean_w_inlier", "mean_w_outlier")
    return {
        "a": ra.final,
        "b": rb.final,
        "delta": {k: rb.final[k] - ra.final[k] for k in keys},
        "reports": (ra, rb),
    }


def trend_checks(config: TrainConfig | None = None) -> dict:
    """Run the three ablation-direction checks on one base configuration.

    * end-to-end beats detached (both unrectified) on held-out CS-MJE;
    * rectified end-to-end beats unrectified end-to-end on CS-MJE;
    * after end-to-end training, outlier keypoints get lower mean weight.
    """
    base = config or TrainConfig()
    e2e = replace(base, mode="e2e", rectified=False)
    det = replace(base, mode="detached", rectified=False)
    rect = replace(base, mode="e2e", rectified=True)
    r_e2e, r_det, r_rect = train(e2e), train(det), train(rect)
    return {
        "e2e_cs_mje": r_e2e.final["cs_mje"],
        "detached_cs_mje": r_det.final["cs_mje"],
        "rectified_cs_mje": r_rect.final["cs_mje"],
        "e2e_rs_mje": r_e2e.final["rs_mje"],
        "rectified_rs_mje": r_rect.final["rs_mje"],
        "mean_w_inlier": r_rect.final["mean_w_inlier"],
        "mean_w_outlier": r_rect.final["mean_w_outlier"],
        "e2e_beats_detached": r_e2e.final["cs_mje"] < r_det.final["cs_mje"],
        "rectified_beats_unrectified": r_rect.final["cs_mje"] < r_e2e.final["cs_mje"],
        "outliers_weighted_lower": r_rect.final["mean_w_outlier"] < r_rect.final["mean_w_inlier"],
    }
