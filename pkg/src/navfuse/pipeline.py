"""End-to-end per-frame pipeline: geometry -> backbones -> fusion -> temporal
modeling -> navigation decision."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fusion as F
from . import geometry as G
from . import temporal as TM
from .backbones import (BranchFeatures, PointBranchConfig, RgbBranchConfig,
                        init_point_params, init_rgb_params, point_forward, rgb_forward)
from .errors import ConfigError
from .kitti import Frame, LabeledFrame
from .params import ParamRegistry, make_rng
from .tensor import Tensor


@dataclass
class PipelineConfig:
    rgb: RgbBranchConfig = field(default_factory=RgbBranchConfig)
    point: PointBranchConfig = field(default_factory=PointBranchConfig)
    fusion_dim: int = 64
    hidden_dim: int = 64
    window: int = 4
    max_step: float = 5.0
    lambda_ego: float = 1.0
    beta: float = 1.0
    tau_img: float = F.TAU_IMG_DEFAULT
    n_ref: int = F.N_REF_DEFAULT
    z_near: float = G.Z_NEAR_DEFAULT
    depth_max: float = G.DEPTH_MAX_DEFAULT
    dropout_rate: float = 0.1
    cell: str = "gru"
    use_attention: bool = True
    use_temporal: bool = True
    modality: str = "both"  # rgb | lidar | both

    def validate(self):
        self.rgb.validate()
        self.point.validate()
        if self.modality not in ("rgb", "lidar", "both"):
            raise ConfigError(f"unknown modality {self.modality!r}")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.cell not in ("gru", "lstm"):
            raise ConfigError(f"unknown recurrent cell {self.cell!r}")
        return self

    @property
    def state_dim(self) -> int:
        return self.hidden_dim if self.cell == "gru" else 2 * self.hidden_dim


@dataclass
class ModelState:
    params: ParamRegistry
    buffers: dict[str, np.ndarray]
    cfg: PipelineConfig


def init_pipeline(cfg: PipelineConfig, seed: int = 0) -> ModelState:
    """Build all learnable parameters and batch-norm buffers for one model."""
    cfg.validate()
    rng = make_rng(seed)
    params = ParamRegistry()
    buffers = init_rgb_params(cfg.rgb, params, rng)
    init_point_params(cfg.point, params, rng)
    F.init_fusion_params(params, rng, cfg.rgb.out_dim, cfg.fusion_dim)
    TM.init_recurrent_params(params, rng, 2 * cfg.fusion_dim, cfg.hidden_dim, cfg.cell)
    TM.init_temporal_attention_params(params, rng, cfg.hidden_dim, cfg.fusion_dim)
    TM.init_decision_params(params, rng, cfg.hidden_dim + 2 * cfg.fusion_dim, cfg.hidden_dim)
    return ModelState(params=params, buffers=buffers, cfg=cfg)


@dataclass
class StepResult:
    nav: TM.NavOutput
    fused: F.FusedFeature
    state: TM.TemporalState
    loss: Tensor | None = None


def initial_state(cfg: PipelineConfig) -> TM.TemporalState:
    return TM.TemporalState.initial(cfg.state_dim)


def pipeline_step(frame: Frame, state: TM.TemporalState, model: ModelState,
                  mode: str = "eval", rng: np.random.Generator | None = None,
                  label: LabeledFrame | None = None,
                  timings: dict[str, float] | None = None) -> StepResult:
    """One full perception-to-decision step; returns output, fused feature,
    the updated temporal state, and (train mode with a label) the loss.

    With a timings dict, per-stage wall time accumulates under the keys
    'backbones', 'fusion', 'temporal'.
    """
    import time as _time

    cfg = model.cfg
    params = model.params
    w, h = frame.image.width, frame.image.height

    t0 = _time.perf_counter() if timings is not None else 0.0
    cam_cloud = G.lidar_to_camera(frame.cloud, frame.calib)
    u, v, depth, _ = G.project_points(cam_cloud.xyz, frame.calib.P, w, h, cfg.z_near)
    sparse_depth = G.render_sparse_depth_arrays(u, v, depth, w, h, cell=1,
                                               depth_max=cfg.depth_max)

    use_rgb = cfg.modality in ("rgb", "both")
    use_lidar = cfg.modality in ("lidar", "both") and len(cam_cloud) > 0

    if use_rgb:
        r_rgb = F.reliability_image(frame.image, cfg.tau_img)
        rgb_feat = rgb_forward(frame.image, sparse_depth, cfg.rgb, params, model.buffers,
                               mode=mode, use_attention=cfg.use_attention)
    else:
        r_rgb = F.REL_FLOOR
        rgb_feat = BranchFeatures(vector=Tensor(np.zeros(cfg.rgb.out_dim)))
    if use_lidar:
        r_lidar = F.reliability_cloud(frame.cloud, frame.calib, w, h, cfg.n_ref)
        pt_feat = point_forward(cam_cloud, cfg.point, params, mode=mode, rng=rng)
    else:
        r_lidar = F.REL_FLOOR
        pt_feat = BranchFeatures(vector=Tensor(np.zeros(cfg.point.out_dim)))

    if timings is not None:
        t1 = _time.perf_counter()
        timings["backbones"] = timings.get("backbones", 0.0) + (t1 - t0)
        t0 = t1

    rel = F.ReliabilityScores(r_rgb=r_rgb, r_lidar=r_lidar)
    f_rgb = F.semantic_map(rgb_feat.vector, params, "rgb")
    f_lidar = F.semantic_map(pt_feat.vector, params, "lidar")
    _, w_t = F.fusion_weights(f_rgb, f_lidar, rel, params, cfg.beta)
    fused = F.fuse(f_rgb, f_lidar, w_t, rel)

    if timings is not None:
        t1 = _time.perf_counter()
        timings["fusion"] = timings.get("fusion", 0.0) + (t1 - t0)
        t0 = t1

    if cfg.use_temporal:
        delta = TM.temporal_delta(fused.vector, state.prev_fused)
        hidden = TM.recurrent_step(delta, state.hidden, params, cfg.cell)
        window = (state.window + [fused.vector])[-cfg.window:]
        context = TM.temporal_attention(
            hidden if cfg.cell == "gru" else hidden[:cfg.hidden_dim],
            window, params)
    else:
        hidden = Tensor(np.zeros(cfg.state_dim))
        window = []
        context = Tensor(np.zeros(cfg.fusion_dim))

    nav, out5 = TM.decision_forward(
        hidden if cfg.cell == "gru" else hidden[:cfg.hidden_dim],
        context, fused.vector, params, mode=mode, rng=rng,
        dropout_rate=cfg.dropout_rate, max_step=cfg.max_step)

    loss = None
    if label is not None:
        loss = TM.nav_loss(out5, label.waypoint, label.ego_delta, cfg.lambda_ego)

    if timings is not None:
        timings["temporal"] = timings.get("temporal", 0.0) + (_time.perf_counter() - t0)

    new_state = TM.TemporalState(hidden=hidden, window=window, prev_fused=fused.vector)
    return StepResult(nav=nav, fused=fused, state=new_state, loss=loss)


def predict_sequence(model: ModelState, frames: list[LabeledFrame]) -> list[StepResult]:
    """Run the pipeline in eval mode over one sequence from a fresh state."""
    state = initial_state(model.cfg)
    results = []
    for lf in frames:
        res = pipeline_step(lf.frame, state, model, mode="eval",
                            rng=make_rng(0), label=None)
        state = res.state
        results.append(res)
    return results
