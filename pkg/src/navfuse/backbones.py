"""Dual-stream feature extraction: residual CNN + reduced-head self-attention
for images, and a dynamic-sampling point network with attention pooling for
clouds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .kitti import Image, PointCloud
from .params import ParamRegistry, kaiming_uniform, register_conv, register_linear
from .tensor import Tensor

MASK_NEG = -1e30


@dataclass
class RgbBranchConfig:
    stage_channels: list[int] = field(default_factory=lambda: [8, 16, 32])
    strides: list[int] = field(default_factory=lambda: [2, 2, 2])
    attn_heads: int = 2
    attn_dim: int = 32
    out_dim: int = 64

    def validate(self):
        if len(self.stage_channels) != len(self.strides):
            raise ConfigError("stage_channels and strides must have equal length")
        if self.attn_dim % self.attn_heads != 0:
            raise ConfigError("attn_dim must be divisible by attn_heads")
        return self


@dataclass
class PointBranchConfig:
    input_budget: int = 2048
    centroids_min: int = 64
    centroids_max: int = 256
    radius: float = 2.0
    group_cap: int = 32
    mlp_dims: list[int] = field(default_factory=lambda: [32, 64])
    out_dim: int = 64

    def validate(self):
        if not (self.centroids_min <= self.centroids_max <= self.input_budget):
            raise ConfigError("need centroids_min <= centroids_max <= input_budget")
        if self.radius <= 0:
            raise ConfigError("radius must be > 0")
        return self


@dataclass
class BranchFeatures:
    vector: Tensor                 # [out_dim]
    per_stage: list[Tensor] = field(default_factory=list)


# -- attention ---------------------------------------------------------


def init_attention_params(params: ParamRegistry, rng, prefix: str, d: int):
    for name in ("wq", "wk", "wv", "wo"):
        params.register(f"{prefix}.{name}", kaiming_uniform(rng, (d, d), fan_in=d))


def attention_block(x: Tensor, heads: int, params: ParamRegistry, prefix: str) -> Tensor:
    """Multi-head scaled dot-product self-attention with a residual add.

    No positional term: token order carries no meaning here, so the output
    permutes with the input.
    """
    t, d = x.shape
    if d % heads != 0:
        raise ConfigError(f"feature dim {d} not divisible by {heads} heads")
    dh = d // heads
    q = T.matmul(x, params.get(f"{prefix}.wq"))
    k = T.matmul(x, params.get(f"{prefix}.wk"))
    v = T.matmul(x, params.get(f"{prefix}.wv"))
    scale = 1.0 / np.sqrt(dh)
    head_outs = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        scores = T.mul(T.matmul(qh, kh.T), scale)
        attn = T.softmax(scores, axis=-1)
        head_outs.append(T.matmul(attn, vh))
    merged = T.concat(head_outs, axis=1)
    return T.add(x, T.matmul(merged, params.get(f"{prefix}.wo")))


# -- RGB branch --------------------------------------------------------


def init_rgb_params(cfg: RgbBranchConfig, params: ParamRegistry, rng,
                    prefix: str = "rgb") -> dict[str, np.ndarray]:
    """Register RGB branch parameters; returns the batch-norm buffer dict."""
    cfg.validate()
    buffers: dict[str, np.ndarray] = {}
    c_in = 4  # RGB + aligned sparse depth
    for i, c_out in enumerate(cfg.stage_channels):
        register_conv(params, rng, f"{prefix}.stage{i}.conv", c_in, c_out, 3)
        params.register(f"{prefix}.stage{i}.short.w",
                        kaiming_uniform(rng, (c_out, c_in, 1, 1), fan_in=c_in))
        params.register(f"{prefix}.stage{i}.bn.gamma", np.ones(c_out))
        params.register(f"{prefix}.stage{i}.bn.beta", np.zeros(c_out))
        buffers[f"{prefix}.stage{i}.bn.mean"] = np.zeros(c_out)
        buffers[f"{prefix}.stage{i}.bn.var"] = np.ones(c_out)
        register_linear(params, rng, f"{prefix}.stage_proj{i}", c_out, cfg.out_dim)
        c_in = c_out
    register_linear(params, rng, f"{prefix}.tokproj", cfg.stage_channels[-1], cfg.attn_dim)
    init_attention_params(params, rng, f"{prefix}.attn", cfg.attn_dim)
    register_linear(params, rng, f"{prefix}.attn_proj", cfg.attn_dim, cfg.out_dim)
    # zero logits: uniform scale mixing at init
    params.register(f"{prefix}.scale_logits", np.zeros(len(cfg.stage_channels)))
    return buffers


def _linear(x: Tensor, params: ParamRegistry, prefix: str) -> Tensor:
    return T.add(T.matmul(x, params.get(prefix + ".w")), params.get(prefix + ".b"))


def _vec_linear(x: Tensor, params: ParamRegistry, prefix: str) -> Tensor:
    """Linear map for a 1-D vector input."""
    out = _linear(T.reshape(x, (1, x.shape[0])), params, prefix)
    return T.reshape(out, (out.shape[1],))


def rgb_forward(image: Image, sparse_depth: Tensor, cfg: RgbBranchConfig,
                params: ParamRegistry, buffers: dict[str, np.ndarray],
                mode: str = "eval", prefix: str = "rgb",
                use_attention: bool = True) -> BranchFeatures:
    """Residual conv stages + token self-attention + learned multi-scale mixing."""
    h, w = image.height, image.width
    stride_prod = int(np.prod(cfg.strides))
    if h % stride_prod or w % stride_prod:
        raise DimensionError(f"image dims {h}x{w} not divisible by stride product {stride_prod}")
    if sparse_depth.shape != (1, h, w):
        raise DimensionError(f"sparse depth shape {sparse_depth.shape} != (1, {h}, {w})")
    training = mode == "train"
    rgb = Tensor(image.pixels.astype(np.float64).transpose(2, 0, 1) / 255.0)
    x = T.concat([rgb, sparse_depth], axis=0)
    stage_summaries = []
    for i, (c_out, stride) in enumerate(zip(cfg.stage_channels, cfg.strides)):
        pre = f"{prefix}.stage{i}"
        # stride-1 same-pad conv then subsampling == floor-mode strided conv,
        # which keeps even input sizes workable with odd kernels
        sub = (slice(None), slice(None, None, stride), slice(None, None, stride))
        conv = T.conv2d(x, params.get(pre + ".conv.w"), stride=1, pad=1)[sub]
        conv = T.add(conv, T.reshape(params.get(pre + ".conv.b"), (c_out, 1, 1)))
        short = T.conv2d(x, params.get(pre + ".short.w"), stride=1, pad=0)[sub]
        c, hh, ww = conv.shape
        flat = T.transpose(T.reshape(conv, (c, hh * ww)))  # (H'W') x C
        normed = T.batch_norm(flat, params.get(pre + ".bn.gamma"), params.get(pre + ".bn.beta"),
                              buffers[pre + ".bn.mean"], buffers[pre + ".bn.var"],
                              training=training)
        normed = T.reshape(T.transpose(normed), (c, hh, ww))
        x = T.relu(T.add(normed, short))
        T.assert_finite(x, f"{pre} output")
        stage_summaries.append(T.tmean(T.reshape(x, (c, hh * ww)), axis=1))
    c, hh, ww = x.shape
    tokens = T.transpose(T.reshape(x, (c, hh * ww)))
    tokens = _linear(tokens, params, f"{prefix}.tokproj")
    if use_attention:
        tokens = attention_block(tokens, cfg.attn_heads, params, f"{prefix}.attn")
    pooled_tokens = T.tmean(tokens, axis=0)
    attn_part = _vec_linear(pooled_tokens, params, f"{prefix}.attn_proj")
    scale_w = T.softmax(params.get(f"{prefix}.scale_logits"))
    mixed = attn_part
    for i, summary in enumerate(stage_summaries):
        proj = _vec_linear(summary, params, f"{prefix}.stage_proj{i}")
        mixed = T.add(mixed, T.mul(proj, scale_w[i:i + 1]))
    T.assert_finite(mixed, "rgb branch output")
    return BranchFeatures(vector=mixed, per_stage=stage_summaries)


# -- point branch ------------------------------------------------------


def dynamic_sample_count(cloud: PointCloud, cfg: PointBranchConfig) -> int:
    """Centroid count from point density and geometric complexity."""
    n = len(cloud)
    if n == 0:
        raise ContractError("dynamic_sample_count needs a non-empty cloud")
    rho = min(max(n / cfg.input_budget, 0.0), 1.0)
    if n <= 3:
        kappa = 0.0
    else:
        cov = np.cov(cloud.xyz.T)
        eig = np.linalg.eigvalsh(cov)
        lam_max = eig[-1]
        kappa = 0.0 if lam_max <= 1e-12 else 1.0 - max(eig[0], 0.0) / lam_max
    count = round(cfg.centroids_min + (cfg.centroids_max - cfg.centroids_min)
                  * (0.5 * rho + 0.5 * kappa))
    return int(min(max(count, cfg.centroids_min), min(cfg.centroids_max, n)))


def fps_sample(cloud: PointCloud, k: int, start_index: int = 0) -> list[int]:
    """Greedy farthest-point sampling; ties break to the lowest index."""
    n = len(cloud)
    if not (1 <= k <= n):
        raise ContractError(f"fps_sample needs 1 <= k <= N, got k={k}, N={n}")
    xyz = cloud.xyz
    chosen = [start_index]
    diff = xyz - xyz[start_index]
    d2 = np.einsum("ij,ij->i", diff, diff)
    # per-round distances via the |x|^2 + |c|^2 - 2 x.c expansion: one gemv
    # instead of an n x 3 subtract + reduce
    sq = np.einsum("ij,ij->i", xyz, xyz)
    for _ in range(k - 1):
        nxt = int(np.argmax(d2))  # argmax returns the first (lowest) index on ties
        chosen.append(nxt)
        np.minimum(d2, sq + sq[nxt] - 2.0 * (xyz @ xyz[nxt]), out=d2)
    return chosen


def init_point_params(cfg: PointBranchConfig, params: ParamRegistry, rng,
                      prefix: str = "point"):
    cfg.validate()
    d_in = 5  # local xyz, distance to centroid, reflectance
    for i, d_out in enumerate(cfg.mlp_dims):
        register_linear(params, rng, f"{prefix}.mlp{i}", d_in, d_out)
        d_in = d_out
    # zero-init scores: uniform attention pooling at init
    params.register(f"{prefix}.group_score.w", np.zeros((d_in, 1)))
    params.register(f"{prefix}.global_score.w", np.zeros((d_in, 1)))
    register_linear(params, rng, f"{prefix}.out", d_in, cfg.out_dim)


def group_and_encode(cloud_cam: PointCloud, centroids: list[int],
                     cfg: PointBranchConfig, params: ParamRegistry,
                     mode: str = "eval", prefix: str = "point") -> Tensor:
    """Ball-query groups in local coordinates through a shared MLP with
    attention pooling (softmax-weighted sum, not max-pool)."""
    xyz = cloud_cam.xyz
    refl = cloud_cam.reflectance
    m = len(centroids)
    cap = cfg.group_cap
    centers = xyz[centroids]
    r2 = cfg.radius ** 2
    n = xyz.shape[0]
    # rank neighbors by the |c|^2 + |x|^2 - 2 c.x expansion (one BLAS matmul
    # instead of an m x n x 3 broadcast); the cap nearest overall contain the
    # nearest-in-ball capped set, since sorted order puts every in-ball point
    # before every out-of-ball one
    sq = np.einsum("nd,nd->n", xyz, xyz)
    d2_rank = sq[centroids, None] + sq[None, :] - 2.0 * (centers @ xyz.T)
    if cap < n:
        sel = np.argpartition(d2_rank, cap - 1, axis=1)[:, :cap]
    else:
        sel = np.broadcast_to(np.arange(n), (m, n)).copy()
        cap = n
    # exact differences on the selected pairs keep the local features
    # translation invariant to the last bit
    local_raw = xyz[sel] - centers[:, None, :]
    d2_sel = np.einsum("mcd,mcd->mc", local_raw, local_raw)
    valid = d2_sel <= r2
    local = local_raw * valid[..., None]
    dist = np.sqrt(d2_sel) * valid
    refl_g = refl[sel] * valid
    feats_in = np.concatenate([local, dist[..., None], refl_g[..., None]], axis=2)
    x = Tensor(feats_in.reshape(m * cap, 5))
    for i in range(len(cfg.mlp_dims)):
        x = T.relu(_linear(x, params, f"{prefix}.mlp{i}"))
    d_out = cfg.mlp_dims[-1]
    scores = T.matmul(x, params.get(f"{prefix}.group_score.w"))
    scores = T.reshape(scores, (m, cap))
    scores = T.add(scores, Tensor(np.where(valid, 0.0, MASK_NEG)))
    # groups with no member keep a zero feature
    any_valid = valid.any(axis=1)
    weights = T.softmax(scores, axis=1)
    weights = T.mul(weights, Tensor(any_valid[:, None].astype(np.float64)))
    feats3 = T.reshape(x, (m, cap, d_out))
    pooled = T.tsum(T.mul(feats3, T.reshape(weights, (m, cap, 1))), axis=1)
    return pooled


def point_forward(cloud_cam: PointCloud, cfg: PointBranchConfig,
                  params: ParamRegistry, mode: str = "eval",
                  rng: np.random.Generator | None = None,
                  prefix: str = "point") -> BranchFeatures:
    """Budget the cloud, pick centroids by FPS, encode groups, pool globally."""
    n = len(cloud_cam)
    if n == 0:
        raise ContractError("point_forward needs a non-empty cloud")
    k = dynamic_sample_count(cloud_cam, cfg)
    if n > cfg.input_budget:
        if rng is None:
            raise ContractError("subsampling above input_budget needs an explicit rng")
        idx = np.sort(rng.choice(n, size=cfg.input_budget, replace=False))
        work = PointCloud(points=cloud_cam.points[idx])
    elif n < cfg.input_budget:
        reps = np.resize(np.arange(n), cfg.input_budget)
        work = PointCloud(points=cloud_cam.points[reps])
    else:
        work = cloud_cam
    k = min(k, len(work))
    centroids = fps_sample(work, k)
    grouped = group_and_encode(work, centroids, cfg, params, mode, prefix)
    scores = T.matmul(grouped, params.get(f"{prefix}.global_score.w"))
    weights = T.softmax(T.reshape(scores, (len(centroids),)))
    pooled = T.tsum(T.mul(grouped, T.reshape(weights, (len(centroids), 1))), axis=0)
    vector = _vec_linear(pooled, params, f"{prefix}.out")
    T.assert_finite(vector, "point branch output")
    return BranchFeatures(vector=vector, per_stage=[pooled])
