"""Small end-to-end pipeline run: simulate, train, track, evaluate.

Uses a reduced budget so it finishes in a couple of minutes on CPU; see
exp_train_full.py for the full acceptance-scale recipe.
"""

import argparse
import time

import numpy as np
import torch

from armot.decoder import TrackingModel, save_checkpoint
from armot.inference import InferConfig, track_video
from armot.metrics import evaluate
from armot.simdata import (
    DatasetConfig,
    OracleConfig,
    generate_scenario,
    sample_scenario_configs,
    scenario_ground_truth,
)
from armot.trainer import TrainConfig, run_training


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=6)
    parser.add_argument("--steps-per-epoch", type=int, default=25)
    parser.add_argument("--mode", choices=("window", "tmf"), default="window")
    parser.add_argument("--out", default="/tmp/armot_demo.ckpt")
    args = parser.parse_args()

    torch.manual_seed(args.seed)
    train_ds = DatasetConfig(
        scenarios=12, n_frames=20, objects_min=2, objects_max=3,
        occlusion_count_max=1, seed=args.seed + 1,
    )
    held_ds = DatasetConfig(
        scenarios=4, n_frames=16, objects_min=2, objects_max=2,
        motions=("linear",), min_separation=0.3, size_min=0.12, size_max=0.2,
        seed=args.seed + 2,
    )
    train_videos = [generate_scenario(s) for s in sample_scenario_configs(train_ds)]
    held = [
        (s, generate_scenario(s)) for s in sample_scenario_configs(held_ds)
    ]

    model = TrackingModel()
    cfg = TrainConfig(
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        batch_size=4,
        lr=3e-4,
        clip_schedule=(2, 3, 4),
        gap_range=(0, 1),
        mode=args.mode,
        seed=args.seed,
    )
    start = time.time()
    run_training(model, train_videos, cfg, OracleConfig(), progress_every=25)
    print(f"trained in {time.time() - start:.0f}s")
    save_checkpoint(args.out, model)
    print(f"checkpoint written to {args.out}")

    infer = InferConfig(mode=args.mode, window=3, tau_loss=10)
    scores = []
    for scenario, video in held:
        gt = scenario_ground_truth(video, scenario.width, scenario.height)
        report = evaluate(gt, track_video(model, video, infer))
        scores.append((report.hota, report.mota, report.idf1, report.idsw))
        print(
            f"scenario seed={scenario.seed}: HOTA={report.hota:.3f} "
            f"MOTA={report.mota:.3f} IDF1={report.idf1:.3f} IDSW={report.idsw}"
        )
    hota = float(np.mean([s[0] for s in scores]))
    print(f"mean held-out HOTA {hota:.3f}")


if __name__ == "__main__":
    main()
