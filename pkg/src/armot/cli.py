"""Command-line pipeline: simulate, train, track, eval, and ablation sweeps.

Configuration comes from flat key=value files; command-line flags override file
keys. All randomness flows from a single seed. Every successful run writes a
JSON manifest next to its outputs (atomically) and exits 0 only if it did;
existing outputs are never clobbered without --overwrite.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config, save_config
from .core import FrameObservation, IDVocabulary, ModelDims
from .decoder import DecoderConfig, TrackingModel, load_checkpoint, save_checkpoint
from .inference import InferConfig, track_video
from .metrics import evaluate
from .simdata import (
    DatasetConfig,
    OracleConfig,
    ScenarioConfig,
    dataset_from_mapping,
    generate_scenario,
    oracle_detect,
    result_from_records,
    read_motchallenge,
    sample_scenario_configs,
    scenario_from_mapping,
    scenario_ground_truth,
    scenario_to_mapping,
    write_motchallenge,
)
from .trainer import TrainConfig, run_training

log = logging.getLogger("armot")


class CliError(RuntimeError):
    """User-facing failure; printed as a one-line diagnostic, exit nonzero."""


@dataclass
class RunManifest:
    """Record of one CLI run, written atomically on success."""

    command: str
    config: dict
    seed: int | None
    version: str
    outputs: list[str]
    duration_sec: float
    created_unix: float = field(default_factory=time.time)


def write_manifest(path: Path, manifest: RunManifest) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(asdict(manifest), indent=2) + "\n")
    os.replace(tmp, path)


def _setup_logging() -> None:
    level = os.environ.get("ARMOT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _refuse_existing(path: Path, overwrite: bool) -> None:
    if overwrite:
        return
    if path.is_file():
        raise CliError(f"output {path} exists; pass --overwrite to replace it")
    if path.is_dir() and any(path.iterdir()):
        raise CliError(f"output directory {path} is not empty; pass --overwrite")


def _load_optional_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config not found: {p}")
    return load_config(p)


# --- config-mapping builders ----------------------------------------------------

def model_from_mapping(cfg: dict) -> TrackingModel:
    dims = ModelDims(
        d_img=int(cfg.get("d_img", 64)),
        d_lm=int(cfg.get("d_lm", 128)),
        d_det=int(cfg.get("d_det", 64)),
        patch=int(cfg.get("patch", 8)),
    )
    decoder_cfg = DecoderConfig(
        layers=int(cfg.get("layers", 6)),
        heads=int(cfg.get("heads", 4)),
        d_lm=dims.d_lm,
        d_ff=int(cfg.get("d_ff", 256)),
        max_len=int(cfg.get("max_len", 512)),
        dropout=float(cfg.get("dropout", 0.0)),
    )
    return TrackingModel(
        dims=dims,
        vocab=IDVocabulary(capacity=int(cfg.get("capacity", 64))),
        decoder_cfg=decoder_cfg,
        use_raa=bool(cfg.get("use_raa", True)),
        box_mode=bool(cfg.get("box_mode", False)),
        n_bins=int(cfg.get("n_bins", 200)),
        alpha=float(cfg.get("alpha", 1.0)),
        include_history_images=bool(cfg.get("include_history_images", False)),
    )


def train_config_from_mapping(cfg: dict, seed: int | None = None) -> TrainConfig:
    schedule = tuple(int(v) for v in cfg.get("clip_schedule", [2, 3, 4, 5]))
    return TrainConfig(
        epochs=int(cfg.get("epochs", 15)),
        steps_per_epoch=int(cfg.get("steps_per_epoch", 50)),
        batch_size=int(cfg.get("batch_size", 4)),
        lr=float(cfg.get("lr", 6.0e-5)),
        weight_decay=float(cfg.get("weight_decay", 0.01)),
        cosine=bool(cfg.get("cosine", True)),
        clip_schedule=schedule,
        gap_range=(int(cfg.get("gap_min", 0)), int(cfg.get("gap_max", 2))),
        mode=str(cfg.get("mode", "window")),
        supervise_all_frames=bool(cfg.get("supervise_all_frames", False)),
        seed=int(seed if seed is not None else cfg.get("seed", 0)),
    )


def oracle_from_mapping(cfg: dict) -> OracleConfig:
    return OracleConfig(
        p_miss=float(cfg.get("p_miss", 0.0)),
        fp_rate=float(cfg.get("fp_rate", 0.0)),
        jitter_sigma=float(cfg.get("jitter_sigma", 0.0)),
    )


def infer_from_mapping(cfg: dict, args: argparse.Namespace | None = None) -> InferConfig:
    mode = str(cfg.get("mode", "window"))
    window = int(cfg.get("window", 4))
    tau_det = float(cfg.get("tau_det", 0.5))
    tau_loss = int(cfg.get("tau_loss", 10))
    if args is not None:
        if getattr(args, "mode", None):
            mode = args.mode
        if getattr(args, "window", None) is not None:
            window = args.window
        if getattr(args, "tau_det", None) is not None:
            tau_det = args.tau_det
        if getattr(args, "tau_loss", None) is not None:
            tau_loss = args.tau_loss
    return InferConfig(mode=mode, window=window, tau_det=tau_det, tau_loss=tau_loss)


# --- scenario directories -------------------------------------------------------

def write_scenario_dir(directory: Path, scenario: ScenarioConfig) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    save_config(scenario_to_mapping(scenario), directory / "config.txt")
    frames = generate_scenario(scenario)
    gt = scenario_ground_truth(frames, scenario.width, scenario.height)
    write_motchallenge(gt, directory / "gt.txt")


def load_scenario_dir(directory: Path) -> ScenarioConfig:
    config_path = directory / "config.txt"
    if not config_path.is_file():
        raise CliError(f"no scenario config at {config_path}")
    return scenario_from_mapping(load_config(config_path))


def scenario_dirs(root: Path) -> list[Path]:
    dirs = sorted(p for p in root.iterdir() if (p / "config.txt").is_file())
    if not dirs:
        raise CliError(f"no scenario directories under {root}")
    return dirs


# --- subcommands -----------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> RunManifest:
    cfg = _load_optional_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    dataset = dataset_from_mapping(cfg)
    out = Path(args.out)
    _refuse_existing(out, args.overwrite)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = sample_scenario_configs(dataset)
    outputs = []
    for k, scenario in enumerate(scenarios):
        directory = out / f"scenario_{k:03d}"
        write_scenario_dir(directory, scenario)
        outputs.append(str(directory))
    return RunManifest(
        command="simulate",
        config={"dataset": cfg},
        seed=dataset.seed,
        version=__version__,
        outputs=outputs,
        duration_sec=0.0,
    )


def _load_videos(data_dir: Path) -> list[list]:
    return [generate_scenario(load_scenario_dir(d)) for d in scenario_dirs(data_dir)]


def cmd_train(args: argparse.Namespace) -> RunManifest:
    cfg = _load_optional_config(args.config)
    train_cfg = train_config_from_mapping(cfg, args.seed)
    model = model_from_mapping(cfg)
    if args.device and args.device != "cpu":
        raise CliError(f"unsupported device {args.device!r}; this build is CPU-only")
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise CliError(f"data directory not found: {data_dir}")
    out = Path(args.out)
    _refuse_existing(out, args.overwrite)
    out.parent.mkdir(parents=True, exist_ok=True)
    videos = _load_videos(data_dir)
    oracle_cfg = oracle_from_mapping(cfg)
    log.info("training on %d videos for %d epochs", len(videos), train_cfg.epochs)
    history = run_training(
        model, videos, train_cfg, oracle_cfg, progress_every=args.progress_every
    )
    save_checkpoint(out, model, extra={"steps": len(history.steps)})
    log_path = out.with_name(out.name + ".log")
    log_path.write_text(history.to_text())
    return RunManifest(
        command="train",
        config={"train": cfg, "resolved_seed": train_cfg.seed},
        seed=train_cfg.seed,
        version=__version__,
        outputs=[str(out), str(log_path)],
        duration_sec=0.0,
    )


def cmd_track(args: argparse.Namespace) -> RunManifest:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise CliError(f"checkpoint not found: {ckpt}")
    cfg = _load_optional_config(args.config)
    infer_cfg = infer_from_mapping(cfg, args)
    model = load_checkpoint(ckpt)
    scenario = load_scenario_dir(Path(args.video_dir))
    out = Path(args.out)
    _refuse_existing(out, args.overwrite)
    out.parent.mkdir(parents=True, exist_ok=True)
    frames = generate_scenario(scenario)
    oracle_cfg = oracle_from_mapping(cfg)
    rng = np.random.default_rng(args.seed if args.seed is not None else scenario.seed)
    observed = [
        FrameObservation(
            frame_index=f.frame_index,
            image=f.image,
            detections=oracle_detect(f, oracle_cfg, rng),
        )
        for f in frames
    ]
    result = track_video(model, observed, infer_cfg)
    write_motchallenge(result, out)
    return RunManifest(
        command="track",
        config={"infer": cfg, "mode": infer_cfg.mode, "tau_loss": infer_cfg.tau_loss},
        seed=args.seed,
        version=__version__,
        outputs=[str(out)],
        duration_sec=0.0,
    )


def cmd_eval(args: argparse.Namespace) -> RunManifest:
    gt_path, pred_path = Path(args.gt), Path(args.pred)
    for p in (gt_path, pred_path):
        if not p.is_file():
            raise CliError(f"input not found: {p}")
    report_path = Path(args.out)
    _refuse_existing(report_path, args.overwrite)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    width, height = args.width, args.height
    gt = result_from_records(read_motchallenge(gt_path), width, height)
    pred_records = read_motchallenge(pred_path)
    pred = result_from_records(pred_records, width, height, n_frames=gt.n_frames)
    report = evaluate(gt, pred)
    report_path.write_text(report.report_text())
    summary_path = report_path.with_name(report_path.name + ".kv")
    summary_path.write_text(report.summary_keyvalues())
    print(report.summary_keyvalues(), end="")
    return RunManifest(
        command="eval",
        config={"gt": str(gt_path), "pred": str(pred_path)},
        seed=None,
        version=__version__,
        outputs=[str(report_path), str(summary_path)],
        duration_sec=0.0,
    )


# --- ablation sweeps -------------------------------------------------------------

TAU_LOSS_GRID = (1, 2, 3, 5, 10, 15)
ALPHA_SWEEP = (0.4, 0.5, 0.6, 0.7, 0.8, 1.0)
ABLATION_SUITES = ("tauloss", "tmf", "raa", "tokens", "alpha")


def _ablate_data(cfg: dict, seed: int):
    data_cfg = dict(cfg)
    data_cfg.setdefault("scenarios", 4)
    data_cfg.setdefault("n_frames", 16)
    data_cfg.setdefault("occlusion_count_max", 1)
    data_cfg["seed"] = seed
    dataset = dataset_from_mapping(data_cfg)
    scenarios = sample_scenario_configs(dataset)
    train_videos = [generate_scenario(s) for s in scenarios]
    held_cfg = dataset_from_mapping({**data_cfg, "scenarios": 2, "seed": seed + 1})
    held_scenarios = sample_scenario_configs(held_cfg)
    held_videos = [generate_scenario(s) for s in held_scenarios]
    return train_videos, held_videos, held_scenarios


def _ablate_train(cfg: dict, videos, seed: int, **model_overrides) -> TrackingModel:
    mapping = dict(cfg)
    mapping.setdefault("epochs", 2)
    mapping.setdefault("steps_per_epoch", 6)
    mapping.setdefault("batch_size", 2)
    mapping.setdefault("lr", 3.0e-4)
    mapping.setdefault("clip_schedule", [2, 3])
    mapping.setdefault("gap_max", 1)
    mapping.update(model_overrides)
    model = model_from_mapping(mapping)
    train_cfg = train_config_from_mapping(mapping, seed)
    run_training(model, videos, train_cfg, oracle_from_mapping(mapping))
    return model


def _ablate_eval(model: TrackingModel, held_videos, held_scenarios, infer_cfg) -> dict:
    totals = {"hota": 0.0, "deta": 0.0, "assa": 0.0, "mota": 0.0, "idf1": 0.0}
    for video, scenario in zip(held_videos, held_scenarios):
        gt = scenario_ground_truth(video, scenario.width, scenario.height)
        pred = track_video(model, video, infer_cfg)
        report = evaluate(gt, pred)
        for key in totals:
            totals[key] += getattr(report, key)
    return {key: value / max(len(held_videos), 1) for key, value in totals.items()}


def run_ablation(suite: str, cfg: dict, seed: int) -> list[dict]:
    if suite not in ABLATION_SUITES:
        raise CliError(f"unknown ablation suite {suite!r}; choose from {ABLATION_SUITES}")
    train_videos, held_videos, held_scenarios = _ablate_data(cfg, seed)
    rows = []

    def row(setting: str, model: TrackingModel, infer_cfg: InferConfig) -> None:
        scores = _ablate_eval(model, held_videos, held_scenarios, infer_cfg)
        rows.append({"setting": setting, **scores})

    if suite == "tauloss":
        model = _ablate_train(cfg, train_videos, seed)
        for tau in TAU_LOSS_GRID:
            row(f"tau_loss={tau}", model, InferConfig(mode="window", tau_loss=tau))
    elif suite == "tmf":
        window_model = _ablate_train(cfg, train_videos, seed, mode="window")
        tmf_model = _ablate_train(cfg, train_videos, seed, mode="tmf")
        row("tmf=off", window_model, InferConfig(mode="window"))
        row("tmf=on", tmf_model, InferConfig(mode="tmf"))
    elif suite == "raa":
        for flag in (False, True):
            model = _ablate_train(cfg, train_videos, seed, use_raa=flag)
            row(f"raa={'on' if flag else 'off'}", model, InferConfig(mode="window"))
    elif suite == "tokens":
        for box in (False, True):
            model = _ablate_train(cfg, train_videos, seed, box_mode=box)
            row("tokens=box" if box else "tokens=query", model, InferConfig(mode="window"))
    else:  # alpha
        for alpha in ALPHA_SWEEP:
            model = _ablate_train(cfg, train_videos, seed, box_mode=True, alpha=alpha)
            row(f"alpha={alpha}", model, InferConfig(mode="window"))
    return rows


def format_ablation_table(suite: str, rows: list[dict]) -> str:
    header = f"{'setting':<16} {'HOTA':>8} {'DetA':>8} {'AssA':>8} {'MOTA':>8} {'IDF1':>8}"
    lines = [f"suite: {suite}", header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['setting']:<16} {r['hota']:>8.4f} {r['deta']:>8.4f} "
            f"{r['assa']:>8.4f} {r['mota']:>8.4f} {r['idf1']:>8.4f}"
        )
    return "\n".join(lines) + "\n"


def cmd_ablate(args: argparse.Namespace) -> RunManifest:
    cfg = _load_optional_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = Path(args.out)
    _refuse_existing(out, args.overwrite)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(args.suite, cfg, seed)
    table = format_ablation_table(args.suite, rows)
    table_path = out / "ablation.txt"
    table_path.write_text(table)
    print(table, end="")
    return RunManifest(
        command="ablate",
        config={"suite": args.suite, **cfg},
        seed=seed,
        version=__version__,
        outputs=[str(table_path)],
        duration_sec=0.0,
    )


# --- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="armot",
        description="Autoregressive multi-object tracking: simulate, train, track, eval, ablate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_help: str) -> None:
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--overwrite", action="store_true", help="replace existing outputs")
        p.add_argument("--device", default="cpu", help="compute device (cpu)")

    p = sub.add_parser("simulate", help="generate scenario directories with gt files")
    common(p, "output dataset directory")
    p.set_defaults(func=cmd_simulate, manifest_dir=lambda a: Path(a.out))

    p = sub.add_parser("train", help="train a model on a scenario dataset")
    p.add_argument("data", help="dataset directory from `simulate`")
    p.add_argument("--progress-every", type=int, default=0, help="print progress every N steps")
    common(p, "output checkpoint path")
    p.set_defaults(func=cmd_train, manifest_dir=lambda a: Path(a.out).parent)

    p = sub.add_parser("track", help="track one scenario directory with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("video_dir", help="scenario directory with config.txt")
    p.add_argument("--mode", choices=("window", "tmf"))
    p.add_argument("--window", type=int, help="history length T in window mode")
    p.add_argument("--tau-det", type=float, dest="tau_det")
    p.add_argument("--tau-loss", type=int, dest="tau_loss")
    common(p, "output MOTChallenge file")
    p.set_defaults(func=cmd_track, manifest_dir=lambda a: Path(a.out).parent)

    p = sub.add_parser("eval", help="score a prediction file against a gt file")
    p.add_argument("gt")
    p.add_argument("pred")
    p.add_argument("--width", type=int, default=32, help="image width in pixels")
    p.add_argument("--height", type=int, default=32, help="image height in pixels")
    common(p, "output report path")
    p.set_defaults(func=cmd_eval, manifest_dir=lambda a: Path(a.out).parent)

    p = sub.add_parser("ablate", help="run a named sweep and emit a combined table")
    p.add_argument("suite", choices=ABLATION_SUITES)
    common(p, "output directory")
    p.set_defaults(func=cmd_ablate, manifest_dir=lambda a: Path(a.out))

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.monotonic()
    try:
        manifest = args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"armot {args.command}: error: {exc}", file=sys.stderr)
        return 1
    manifest.duration_sec = time.monotonic() - start
    manifest_dir = args.manifest_dir(args)
    manifest_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(manifest_dir / "manifest.json", manifest)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
