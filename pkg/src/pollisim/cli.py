"""Command-line front end.

Subcommands: train (fit color model + classifiers), lut (build and check the
color lookup table), map (one mapping sweep, exports), run (single trial with
telemetry), bench (full scenario campaign), report (re-aggregate a trials
CSV).  Everything lands under --out; exit code is 0 on success, 1 on any
pipeline error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .config import PipelineConfig, load_config, save_config
from .kinematics import default_arm_model
from .segmentation import (build_lut_timed, load_color_model,
                           load_training_directory, save_lut,
                           train_color_model)
from .sim.pipeline import (load_models, run_mapping_sweep, run_trials,
                           save_models, sweep_poses, train_perception_models)
from .sim.report import (aggregate_report, format_report_table,
                         load_trials_csv, recompute_overall,
                         write_attempts_csv, write_report_csv,
                         write_trials_csv)
from .sim.scene import SCENARIO_TRIALS, generate_scene, noise_preset

NOISE_CHOICES = ("off", "low", "default")


def _load_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "noise", None):
        config.noise = args.noise
    return config


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _models_for(config: PipelineConfig, out: Path):
    """Load a previously exported model bundle from --out, else train."""
    if all((out / name).exists()
           for name in ("color_model.bin", "lut.bin", "patch_classifier.bin",
                        "orientation_classifier.bin")):
        print(f"loading models from {out}")
        return load_models(out)
    print("training models (seed %d)" % config.training_seed)
    return train_perception_models(config)


def cmd_train(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    t0 = time.perf_counter()
    if args.data:
        pairs = load_training_directory(args.data)
        print(f"{len(pairs)} labeled image pairs from {args.data}")
        models = train_perception_models(config)
        models.color_model = train_color_model(
            pairs, smoothing=config.color_smoothing)
        from .segmentation import build_lut
        models.lut = build_lut(models.color_model, config.lut_bits)
    else:
        models = train_perception_models(config)
    elapsed = time.perf_counter() - t0
    save_models(models, out)
    save_config(config, out / "config.yaml")
    print(f"trained in {elapsed:.1f}s; priors "
          f"{np.round(models.color_model.priors, 4).tolist()}")
    print(f"models written to {out}")
    return 0


def cmd_lut(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    model_file = out / "color_model.bin"
    if model_file.exists():
        model = load_color_model(model_file)
        print(f"color model from {model_file}")
    else:
        model = train_perception_models(config).color_model
        print("color model trained from the synthetic generator")
    lut, seconds = build_lut_timed(model, config.lut_bits)
    save_lut(lut, out / "lut.bin")
    # spot-check table agreement against the direct classifier
    from .segmentation import classify_pixel
    rng = np.random.default_rng(0)
    colors = rng.integers(0, 256, size=(10_000, 3))
    direct = np.array([classify_pixel(model, c) for c in colors])
    mismatch = int(np.sum(lut.lookup(colors) != direct))
    print(f"built {lut.table.size:,}-entry table in {seconds:.2f}s; "
          f"{mismatch}/10000 spot-check mismatches")
    print(f"lut written to {out / 'lut.bin'}")
    return 0 if mismatch == 0 else 1


def cmd_map(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    scene = generate_scene(args.scenario, args.seed)
    models = _models_for(config, out)
    noise = noise_preset(config.noise)
    rng = np.random.default_rng(args.seed)
    octree, fmap, counts = run_mapping_sweep(scene, sweep_poses(config),
                                             models, noise, rng, config)
    fmap.write_csv(out / "flower_map.csv")
    occupied = octree.occupied_leaf_centers()
    with open(out / "occupied_voxels.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "z"])
        for p in occupied:
            w.writerow([f"{v:.4f}" for v in p])
    tracks = fmap.confirmed_tracks()
    print(f"scenario {args.scenario} seed {args.seed}: "
          f"{len(tracks)} confirmed tracks, {len(occupied)} occupied voxels, "
          f"detections per pose {counts}")
    for tr in tracks:
        print(f"  track {tr.id}: position {np.round(tr.position, 4).tolist()} "
              f"observations {tr.observation_count}")
    print(f"exports written to {out}")
    return 0


def cmd_run(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    models = _models_for(config, out)
    arm = default_arm_model()
    results = run_trials([args.scenario], 1, master_seed=args.seed,
                         config=config, models=models, arm=arm)
    r = results[0]
    write_trials_csv(results, out / "trials.csv")
    write_attempts_csv(results, out / "attempts.csv")
    with open(out / "events.txt", "w") as f:
        for state, note in r.events:
            f.write(f"{state.value:<16} {note}\n")
    print(f"scenario {r.scenario} trial seed {r.seed}")
    for state, note in r.events:
        print(f"  {state.value:<16} {note}")
    print(f"reachable {r.reachable} seen {r.seen} attempted {r.attempted} "
          f"touched {r.touched} pollinated {r.pollinated} "
          f"false_positives {r.false_positives}")
    print(f"telemetry written to {out}")
    return 0


def cmd_bench(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    scenarios = [args.scenario] if args.scenario else list(range(1, 9))
    models = _models_for(config, out)
    arm = default_arm_model()
    t0 = time.perf_counter()
    results = run_trials(scenarios, args.trials, master_seed=args.seed,
                         config=config, models=models, arm=arm)
    elapsed = time.perf_counter() - t0
    write_trials_csv(results, out / "trials.csv")
    write_attempts_csv(results, out / "attempts.csv")
    reports = aggregate_report(results)
    write_report_csv(reports, out / "report.csv")
    table = format_report_table(reports)
    (out / "report.txt").write_text(table + "\n")
    print(table)
    print(f"\n{len(results)} trials in {elapsed:.1f}s; reports written to {out}")
    # cross-check the summary against an independent pass over the trials CSV
    overall = reports[-1]
    recomputed = recompute_overall(load_trials_csv(out / "trials.csv"))
    for key in ("detection_accuracy", "pct_touched", "pct_pollinated"):
        a, b = getattr(overall, key), recomputed[key]
        if (a is None) != (b is None) or (a is not None and abs(a - b) > 1e-9):
            print(f"aggregation mismatch on {key}: {a} vs {b}",
                  file=sys.stderr)
            return 1
    return 0


def cmd_report(args) -> int:
    out = _out_dir(args)
    trials_file = out / "trials.csv"
    rows = load_trials_csv(trials_file)
    results = [SimpleNamespace(**row) for row in rows]
    reports = aggregate_report(results)
    write_report_csv(reports, out / "report.csv")
    table = format_report_table(reports)
    (out / "report.txt").write_text(table + "\n")
    print(table)
    overall = recompute_overall(rows)
    print(f"\noverall from {trials_file}: "
          f"detection {overall['detection_accuracy']:.1f}% "
          f"touched {overall['pct_touched']:.1f}% "
          f"pollinated {overall['pct_pollinated']:.1f}% "
          f"false positives {overall['false_positives']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pollisim",
        description="autonomous pollination pipeline on synthetic scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=False):
        p.add_argument("--config", metavar="FILE",
                       help="YAML config overriding the built-in defaults")
        p.add_argument("--out", metavar="DIR", default="out",
                       help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, default=0, metavar="S")
        p.add_argument("--noise", choices=NOISE_CHOICES,
                       help="noise preset override")
        if scenario:
            p.add_argument("--scenario", type=int, choices=range(1, 9),
                           metavar="N", help="scenario id 1-8")

    p = sub.add_parser("train", help="fit color model and patch classifiers")
    common(p)
    p.add_argument("--data", metavar="DIR",
                   help="directory of NAME.png/NAME_mask.png pairs; "
                        "default trains on the synthetic generator")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("lut", help="build the color lookup table")
    common(p)
    p.set_defaults(func=cmd_lut)

    p = sub.add_parser("map", help="run one mapping sweep and export the map")
    common(p, scenario=True)
    p.set_defaults(func=cmd_map)
    p.set_defaults(scenario=1)

    p = sub.add_parser("run", help="run a single trial with telemetry")
    common(p, scenario=True)
    p.set_defaults(func=cmd_run)
    p.set_defaults(scenario=1)

    p = sub.add_parser("bench", help="run the full scenario campaign")
    common(p, scenario=True)
    p.add_argument("--trials", type=int, metavar="K",
                   help="trials per scenario (default: per-scenario counts)")
    p.set_defaults(func=cmd_bench)
    p.set_defaults(scenario=None)

    p = sub.add_parser("report", help="re-aggregate an existing trials.csv")
    p.add_argument("--out", metavar="DIR", default="out",
                   help="directory holding trials.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # any module error -> nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
