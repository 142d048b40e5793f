"""Command-line entry point: synth | train | eval | gradcheck | bench."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import simulate as S
from .checkpoint import Checkpoint, load_checkpoint, restore_model, save_checkpoint
from .config import RunConfig, config_from_dict, config_to_dict, load_config
from .errors import CheckpointError, ConfigError, ContractError, FormatError, NavfuseError
from .kitti import (AugmentPolicy, load_sequences, save_ppm,
                    serialize_poses, serialize_velodyne_bin)
from .metrics import FPS_BASELINE, evaluate_run
from .params import make_rng
from .pipeline import init_pipeline, initial_state, pipeline_step
from .train import train as run_train
from .verify import run_op_checks, run_pipeline_check

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3


# -- shared plumbing ---------------------------------------------------


def _load_run_config(args) -> RunConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise OSError(f"cannot read config {args.config}: {e}") from None
        cfg = load_config(text)
    else:
        cfg = config_from_dict({})
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _apply_ablations(cfg: RunConfig, args) -> None:
    if getattr(args, "no_attention", False):
        cfg.pipeline.use_attention = False
    if getattr(args, "no_temporal", False):
        cfg.pipeline.use_temporal = False
    if getattr(args, "beta", None) is not None:
        cfg.pipeline.beta = args.beta
    if getattr(args, "modality", None) is not None:
        cfg.pipeline.modality = args.modality
    cfg.pipeline.validate()


def _ablation_flags(cfg: RunConfig) -> dict:
    return {"use_attention": cfg.pipeline.use_attention,
            "use_temporal": cfg.pipeline.use_temporal,
            "beta": cfg.pipeline.beta,
            "modality": cfg.pipeline.modality}


def _calib_text(P: np.ndarray, Tr: np.ndarray) -> str:
    p_line = "P2: " + " ".join(repr(float(v)) for v in P.ravel())
    tr_line = "Tr: " + " ".join(repr(float(v)) for v in Tr[:3].ravel())
    return p_line + "\n" + tr_line + "\n"


def _load_tagged_dataset(cfg: RunConfig) -> list[tuple[str, list]]:
    """Labeled sequences with scenario tags.

    A manifest.yaml written by `synth` supplies the tags; a plain KITTI tree
    is treated as all-standard.
    """
    root = Path(cfg.data.root)
    if not cfg.data.root:
        raise ConfigError("data.root is not set; point it at a dataset tree")
    seqs = load_sequences(root, lookahead_m=cfg.data.lookahead_m,
                          max_step=cfg.data.max_step)
    manifest_path = root / "manifest.yaml"
    tags = {}
    if manifest_path.exists():
        manifest = yaml.safe_load(manifest_path.read_text())
        tags = manifest.get("sequences", {})
    out = []
    for sid in sorted(seqs):
        tag = tags.get(f"{sid:02d}", "standard")
        out.append((tag, seqs[sid]))
    return out


def _build_model(cfg: RunConfig, checkpoint_path: str | None):
    model = init_pipeline(cfg.pipeline, seed=cfg.seed)
    if checkpoint_path:
        ckpt = load_checkpoint(checkpoint_path)
        restore_model(ckpt, model.params, model.buffers)
    return model


# -- synth -------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    sc = cfg.synth
    out_root = Path(cfg.out_dir)
    cam = S.CameraConfig(width=sc.width, height=sc.height, focal=sc.focal)
    lidar = S.LidarConfig(n_azimuth=sc.n_azimuth, n_elevation=sc.n_elevation)
    manifest = {"seed": cfg.seed, "frames": sc.frames, "sequences": {}}
    try:
        for i, name in enumerate(sc.scenarios):
            world, spec = S.preset_scenario(name, frames=sc.frames, speed=sc.speed,
                                            yaw_rate_deg=sc.yaw_rate_deg)
            rng = make_rng(cfg.seed * 10007 + i)
            seq_dir = out_root / "sequences" / f"{i:02d}"
            (seq_dir / "velodyne").mkdir(parents=True, exist_ok=True)
            (seq_dir / "image_2").mkdir(parents=True, exist_ok=True)
            (out_root / "poses").mkdir(parents=True, exist_ok=True)

            labeled = S.synth_sequence(world, sc.frames, cam, lidar, rng=rng,
                                       lookahead_m=cfg.data.lookahead_m,
                                       max_step=cfg.data.max_step)
            # the final trajectory pose has no label but its frame is still
            # written, so a reader re-derives exactly the same label set
            last_image = S.render_frame(world, sc.frames - 1, cam)
            last_cloud = S.scan_frame(world, sc.frames - 1, cam, lidar)
            frames = [(lf.frame.image, lf.frame.cloud) for lf in labeled]
            frames.append((last_image, last_cloud))

            for t, (image, cloud) in enumerate(frames):
                image = S.degrade_image(image, spec, rng)
                cloud = S.degrade_cloud(cloud, spec, rng)
                (seq_dir / "velodyne" / f"{t:06d}.bin").write_bytes(
                    serialize_velodyne_bin(cloud))
                (seq_dir / "image_2" / f"{t:06d}.ppm").write_bytes(save_ppm(image))
            (seq_dir / "calib.txt").write_text(
                _calib_text(cam.projection(), lidar.transform()))
            (out_root / "poses" / f"{i:02d}.txt").write_text(
                serialize_poses(world.trajectory[:sc.frames]))
            manifest["sequences"][f"{i:02d}"] = name
        (out_root / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=True))
    except OSError as e:
        raise OSError(f"cannot write dataset under {out_root}: {e}") from None
    print(f"synth: wrote {len(sc.scenarios)} sequences x {sc.frames} frames "
          f"to {out_root}")
    return EXIT_OK


# -- train -------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    _apply_ablations(cfg, args)
    tagged = _load_tagged_dataset(cfg)
    train_seqs = [frames for _, frames in tagged]
    val_seqs = [frames for tag, frames in tagged if tag == "standard"] or train_seqs
    model = init_pipeline(cfg.pipeline, seed=cfg.seed)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    augment = AugmentPolicy() if cfg.data.augment else None

    with open(log_path, "w") as log_fh:
        def log_fn(log):
            log_fh.write(json.dumps(log.to_dict(), sort_keys=True) + "\n")
            log_fh.flush()
            print(f"epoch {log.epoch:4d}  lr {log.lr:.6f}  "
                  f"train {log.train_loss:.6f}  val {log.val_loss:.6f}  "
                  f"{log.wall_seconds:.2f}s")

        result = run_train(model, train_seqs, val_seqs, cfg.train,
                           augment=augment, max_epochs=args.epochs, log_fn=log_fn)
        if result.stopped_early:
            stop_line = {"record": "early_stop", "reason": result.stop_reason,
                         "epoch": len(result.logs) - 1}
            log_fh.write(json.dumps(stop_line, sort_keys=True) + "\n")
            print(f"early stop: {result.stop_reason}")

    ckpt = Checkpoint(config=config_to_dict(cfg), params=result.best_params,
                      buffers=result.best_buffers, adam=result.adam,
                      epoch=result.best_epoch, best_val_loss=result.best_val_loss)
    ckpt_path = out_dir / "checkpoint.bin"
    save_checkpoint(ckpt, str(ckpt_path))
    print(f"train: best val loss {result.best_val_loss:.6f} at epoch "
          f"{result.best_epoch}; checkpoint -> {ckpt_path}")
    return EXIT_OK


# -- eval --------------------------------------------------------------


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    _apply_ablations(cfg, args)
    model = _build_model(cfg, args.checkpoint)
    tagged = _load_tagged_dataset(cfg)
    metrics = evaluate_run(tagged, model, na_threshold=cfg.data.na_threshold)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.jsonl"
    with open(report_path, "w") as fh:
        fh.write(json.dumps({"record": "aggregate", **metrics.to_dict(),
                             "ablations": _ablation_flags(cfg)}, sort_keys=True) + "\n")
        for tag, (na, lp) in metrics.per_scenario.items():
            rec = {"record": "scenario", "scenario": tag, "na": na, "lp": lp,
                   "ri": metrics.per_scenario_ri.get(tag),
                   "w_rgb": metrics.mean_weights[tag][0],
                   "w_lidar": metrics.mean_weights[tag][1]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    print(f"NA {metrics.na:.4f}  LP {metrics.lp:.4f} m  "
          f"FPS {metrics.fps:.1f}  RI {metrics.ri if metrics.ri is None else round(metrics.ri, 4)}")
    print(f"{'scenario':<16} {'NA':>7} {'LP':>8} {'RI':>7} {'w_rgb':>7} {'w_lidar':>8}")
    for tag, (na, lp) in sorted(metrics.per_scenario.items()):
        ri = metrics.per_scenario_ri.get(tag)
        print(f"{tag:<16} {na:7.4f} {lp:8.4f} "
              f"{'-' if ri is None else format(ri, '7.4f'):>7} "
              f"{metrics.mean_weights[tag][0]:7.4f} {metrics.mean_weights[tag][1]:8.4f}")
    print(f"report -> {report_path}")
    return EXIT_OK


# -- gradcheck ---------------------------------------------------------


def cmd_gradcheck(args) -> int:
    cfg = _load_run_config(args)
    entries = run_op_checks(seeds=(cfg.seed, cfg.seed + 1, cfg.seed + 2))
    pipeline_rep = run_pipeline_check(seed=cfg.seed)
    report = []
    failed = []
    for e in entries:
        report.append({"record": "op", "name": e.name,
                       "max_rel_err": e.max_rel_err, "passed": e.passed})
        if not e.passed:
            failed.append(e.name)
    report.append({"record": "pipeline", "name": "full_pipeline",
                   "max_rel_err": pipeline_rep.max_rel_err,
                   "passed": pipeline_rep.passed})
    if not pipeline_rep.passed:
        failed.append("full_pipeline")

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "gradcheck.jsonl", "w") as fh:
        for rec in report:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    for rec in report:
        mark = "ok  " if rec["passed"] else "FAIL"
        print(f"{mark} {rec['name']:<16} max rel err {rec['max_rel_err']:.3e}")
    if failed:
        print(f"gradcheck FAILED for: {', '.join(failed)}")
        return EXIT_CHECK_FAILURE
    print("gradcheck: all operations and the full pipeline pass at tol 1e-4")
    return EXIT_OK


# -- bench -------------------------------------------------------------


def cmd_bench(args) -> int:
    cfg = _load_run_config(args)
    _apply_ablations(cfg, args)
    model = _build_model(cfg, args.checkpoint)
    sc = cfg.synth
    world, _ = S.preset_scenario("standard", frames=max(sc.frames, 12),
                                 speed=sc.speed, yaw_rate_deg=sc.yaw_rate_deg)
    cam = S.CameraConfig(width=sc.width, height=sc.height, focal=sc.focal)
    lidar = S.LidarConfig(n_azimuth=sc.n_azimuth, n_elevation=sc.n_elevation)
    labeled = S.synth_sequence(world, max(sc.frames, 12), cam, lidar,
                               rng=make_rng(cfg.seed))

    warmup = 10
    measure = max(args.frames, 200)
    state = initial_state(model.cfg)
    for i in range(warmup):
        lf = labeled[i % len(labeled)]
        state = pipeline_step(lf.frame, state, model, mode="eval",
                              rng=make_rng(0)).state

    timings: dict[str, float] = {}
    t_start = time.perf_counter()
    for i in range(measure):
        lf = labeled[i % len(labeled)]
        state = pipeline_step(lf.frame, state, model, mode="eval",
                              rng=make_rng(0), timings=timings).state
    total = time.perf_counter() - t_start
    fps = measure / total
    passed = fps >= FPS_BASELINE

    record = {"record": "bench", "frames": measure, "wall_seconds": total,
              "fps": fps, "fps_baseline": FPS_BASELINE, "passed": passed,
              "stage_seconds": {k: timings[k] for k in sorted(timings)},
              "ablations": _ablation_flags(cfg)}
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "bench.jsonl", "w") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"bench: {measure} frames in {total:.2f}s -> {fps:.1f} FPS "
          f"({'pass' if passed else 'FAIL'} vs baseline {FPS_BASELINE:.0f})")
    for k in sorted(timings):
        print(f"  {k:<10} {timings[k]:8.3f}s ({100 * timings[k] / total:5.1f}%)")
    return EXIT_OK if passed else EXIT_CHECK_FAILURE


# -- entry point -------------------------------------------------------


def _add_common(sub, ablations: bool = False, checkpoint: bool = False):
    sub.add_argument("--config", help="path to a YAML run configuration")
    sub.add_argument("--seed", type=int, default=None, help="override config seed")
    sub.add_argument("--out", default=None, help="override output directory")
    if checkpoint:
        sub.add_argument("--checkpoint", default=None, help="checkpoint file")
    if ablations:
        sub.add_argument("--no-attention", action="store_true",
                         help="disable self-attention blocks")
        sub.add_argument("--no-temporal", action="store_true",
                         help="disable the recurrent/temporal stage")
        sub.add_argument("--beta", type=float, default=None,
                         help="reliability prior strength (0 disables it)")
        sub.add_argument("--modality", choices=["rgb", "lidar", "both"],
                         default=None, help="restrict input modalities")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="navfuse",
        description="Camera+LiDAR fusion navigation pipeline")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate synthetic KITTI-layout scenarios")
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    p = subs.add_parser("train", help="train the pipeline")
    _add_common(p, ablations=True)
    p.add_argument("--epochs", type=int, default=None, help="override epoch count")
    p.set_defaults(fn=cmd_train)

    p = subs.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p, ablations=True, checkpoint=True)
    p.set_defaults(fn=cmd_eval)

    p = subs.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_common(p)
    p.set_defaults(fn=cmd_gradcheck)

    p = subs.add_parser("bench", help="throughput benchmark")
    _add_common(p, ablations=True, checkpoint=True)
    p.add_argument("--frames", type=int, default=200, help="frames to measure")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except NavfuseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK_FAILURE


if __name__ == "__main__":
    sys.exit(main())
