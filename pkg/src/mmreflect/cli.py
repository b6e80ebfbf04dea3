"""Command-line entry point: ``mmreflect <command> --config scene.ini --seed 0``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import report
from .environment import RolloutLog
from .experiments import (SCHEMES, ExperimentConfig, ablate_grouping, ablate_reward, emit_heatmap,
                          load_experiment_config, run_baseline, sweep_noise, sweep_rows, sweep_users, train_scheme,
                          write_summary_csv, write_summary_json)
from .vectormath import ContractError

LEARNED = ("sa_focus", "col_ma", "ma_focus")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file with [scene] and [experiment] sections")
    p.add_argument("--seed", type=int, default=None, help="experiment seed (overrides the config)")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    p.add_argument("--full-scale", action="store_true", help="7x9 array, 3000 episodes, 300 eval steps")
    p.add_argument("--episodes", type=int, help="override the training episode count")
    p.add_argument("--eval-steps", type=int, help="override the evaluation length")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmreflect", description="Multi-agent mmWave reflector experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one learning scheme and save its checkpoint")
    _common(p)
    p.add_argument("--scheme", choices=LEARNED, default="ma_focus")

    p = sub.add_parser("eval", help="evaluate a checkpoint with user mobility")
    _common(p)
    p.add_argument("--scheme", choices=SCHEMES, default="ma_focus")
    p.add_argument("--checkpoint", type=Path)

    p = sub.add_parser("baseline", help="compare schemes on identical user trajectories")
    _common(p)
    p.add_argument("--schemes", nargs="+", choices=SCHEMES, default=list(SCHEMES))

    p = sub.add_parser("sweep-users", help="evaluate the multi-agent checkpoint for several user counts")
    _common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--users", type=int, nargs="+", default=[2, 3, 4])

    p = sub.add_parser("sweep-rows", help="evaluate the multi-agent checkpoint on taller arrays")
    _common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--rows", type=int, nargs="+", default=[5, 7, 9, 11])

    p = sub.add_parser("sweep-noise", help="train and evaluate under user-position noise")
    _common(p)
    p.add_argument("--sigmas", type=float, nargs="+", default=[0.0, 0.1, 0.3, 0.5, 1.0])
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("ablate-grouping", help="column versus shifted tile grouping")
    _common(p)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("ablate-reward", help="distance-normalized reward exponents")
    _common(p)
    p.add_argument("--exponents", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("heatmap", help="RSSI coverage map over the user region")
    _common(p)
    p.add_argument("--scheme", choices=SCHEMES, default="ma_focus")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--step", type=float, help="grid resolution in metres")
    return parser


def config_from_args(args, **extra) -> ExperimentConfig:
    base = ExperimentConfig.full_scale() if args.full_scale else ExperimentConfig()
    return load_experiment_config(args.config, base, seed=args.seed, episodes=args.episodes,
                                  eval_steps=args.eval_steps, **extra)


def checkpoint_path(out: Path, cfg: ExperimentConfig, scheme: str | None = None) -> Path:
    return out / f"{scheme or cfg.scheme}_seed{cfg.seed}.ckpt"


def _say(line: str) -> None:
    print(line, flush=True)


def _report_line(key, rep) -> str:
    s = rep.summary()
    rec = "n/a" if s["recovery_steps"] is None else f"{s['recovery_steps']:.2f}"
    return f"{key}: mean {s['mean_dbm']:.2f} dBm, std {s['std_dbm']:.2f} dB, recovery {rec} steps"


def cmd_train(args) -> None:
    cfg = config_from_args(args, scheme=args.scheme)
    stem = args.out / f"{cfg.scheme}_seed{cfg.seed}"
    progress = (lambda r: _say(f"episode {r['episode'] + 1}: {r['mean_reward']:.2f} dBm")
                if (r["episode"] + 1) % 50 == 0 else None)
    result = train_scheme(cfg, checkpoint_path(args.out, cfg), Path(f"{stem}_metrics.csv"), progress)
    report.plot_learning_curve(result.rows, f"{stem}_curve.png", f"{cfg.scheme} training")
    _say(f"saved {checkpoint_path(args.out, cfg)} after {result.updates} updates")


def cmd_eval(args) -> None:
    cfg = config_from_args(args, scheme=args.scheme)
    ckpt = args.checkpoint or checkpoint_path(args.out, cfg)
    log = RolloutLog(cfg.users, cfg.agents)
    rep = run_baseline(cfg, ckpt if cfg.mode else None, log)
    stem = args.out / f"{cfg.scheme}_eval"
    log.write(f"{stem}_rollout.csv")
    rep.write_trace_csv(f"{stem}_trace.csv")
    write_summary_json(f"{stem}_summary.json", rep.summary())
    report.plot_traces({cfg.scheme: rep}, f"{stem}.png")
    _say(_report_line(cfg.scheme, rep))


def cmd_baseline(args) -> None:
    cfg = config_from_args(args)
    reports = {}
    for scheme in args.schemes:
        c = replace(cfg, scheme=scheme)
        reports[scheme] = run_baseline(c, checkpoint_path(args.out, c) if c.mode else None)
        _say(_report_line(scheme, reports[scheme]))
    write_summary_json(args.out / "baseline_summary.json", [r.summary() for r in reports.values()])
    write_summary_csv(args.out / "baseline.csv", "scheme", reports)
    report.plot_scheme_bars([r.summary() for r in reports.values()], args.out / "baseline.png")
    report.plot_traces(reports, args.out / "baseline_traces.png")


def _write_sweep(args, name: str, key_name: str, reports: dict, reference=None) -> None:
    write_summary_json(args.out / f"{name}_summary.json",
                       [{key_name: k, **r.summary()} for k, r in reports.items()])
    write_summary_csv(args.out / f"{name}.csv", key_name, reports)
    report.plot_sweep(list(reports), reports, args.out / f"{name}.png", key_name, reference)
    for k, r in reports.items():
        _say(_report_line(f"{key_name}={k}", r))


def _flat_reference(cfg: ExperimentConfig) -> float:
    return run_baseline(replace(cfg, scheme="flat")).mean_dbm


def cmd_sweep_users(args) -> None:
    cfg = config_from_args(args, scheme="ma_focus")
    reports = sweep_users(cfg, args.checkpoint or checkpoint_path(args.out, cfg), args.users)
    _write_sweep(args, "sweep_users", "users", reports, _flat_reference(cfg))


def cmd_sweep_rows(args) -> None:
    cfg = config_from_args(args, scheme="ma_focus")
    reports = sweep_rows(cfg, args.checkpoint or checkpoint_path(args.out, cfg), args.rows)
    _write_sweep(args, "sweep_rows", "rows", reports)


def _train_eval_sweep(args, name, key_name, runner, keys) -> None:
    cfg = config_from_args(args, scheme="ma_focus")
    results = runner(cfg, args.out / name, keys, workers=args.workers)
    reports = {k: rep for k, (_, rep) in results.items()}
    for k, (res, _) in results.items():
        report.plot_learning_curve(res.rows, args.out / name / f"{key_name}_{k}_curve.png", f"{key_name}={k}")
    _write_sweep(args, name, key_name, reports, _flat_reference(cfg))


def cmd_sweep_noise(args) -> None:
    _train_eval_sweep(args, "sweep_noise", "sigma", sweep_noise, args.sigmas)


def cmd_ablate_grouping(args) -> None:
    _train_eval_sweep(args, "ablate_grouping", "grouping", ablate_grouping, ("columns", "shifted"))


def cmd_ablate_reward(args) -> None:
    _train_eval_sweep(args, "ablate_reward", "n", ablate_reward, args.exponents)


def cmd_heatmap(args) -> None:
    extra = {"scheme": args.scheme}
    if args.step is not None:
        extra["heatmap_step"] = args.step
    cfg = config_from_args(args, **extra)
    ckpt = (args.checkpoint or checkpoint_path(args.out, cfg)) if cfg.mode else None
    out = emit_heatmap(cfg, args.out / f"heatmap_{cfg.scheme}", ckpt)
    report.plot_heatmap(out["values"], out["grid"], out["users"], args.out / f"heatmap_{cfg.scheme}.png",
                        f"{cfg.scheme} coverage")
    _say(f"heatmap {cfg.scheme}: mean {out['values'].mean():.2f} dBm over {out['values'].size} cells")


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "baseline": cmd_baseline, "sweep-users": cmd_sweep_users,
            "sweep-rows": cmd_sweep_rows, "sweep-noise": cmd_sweep_noise, "ablate-grouping": cmd_ablate_grouping,
            "ablate-reward": cmd_ablate_reward, "heatmap": cmd_heatmap}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[args.command](args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
