"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .dataset import (
    CrowdConfig,
    DataError,
    GridSpec,
    SceneSpec,
    convert_table,
    export_trajectories,
    load_trajectories,
    synth_crowd,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("crowdnav")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    scene = SceneSpec(args.width, args.height)
    columns = tuple(c.strip() for c in args.columns.split(","))
    n = convert_table(args.src, args.out, columns, args.delimiter, args.scale, args.frame_step)
    store = load_trajectories(args.out, scene, on_invalid=args.on_invalid)
    if store.rejected:
        export_trajectories(store, args.out)
    print(f"ingested {n} records -> {len(store)} trajectories, {store.total_points} points "
          f"({store.rejected} out-of-scene records dropped)")
    return EXIT_OK


def _crowd_config(args) -> CrowdConfig:
    return CrowdConfig(
        pedestrians=args.pedestrians, frames=args.frames, seed=args.seed,
        straight_fraction=args.straight_fraction, loiter_fraction=args.loiter_fraction,
        speed_px_mean=args.speed_mean, speed_px_std=args.speed_std,
    )


def cmd_synth(args) -> int:
    store = synth_crowd(_crowd_config(args))
    export_trajectories(store, args.out)
    print(f"wrote {len(store)} trajectories ({store.total_points} points) to {args.out}")
    return EXIT_OK


def cmd_train_forest(args) -> int:
    from .benchmark import eval_predictor
    from .prediction import ForestParams, build_samples, fit_forest, split_by_trajectory
    from .dataset import filter_min_length

    store = filter_min_length(load_trajectories(args.store), 10)
    if len(store) < 10:
        raise DataError(f"need at least 10 trajectories of length >= 10, found {len(store)}")
    params = ForestParams(n_trees=args.trees, max_depth=args.max_depth,
                          min_samples_leaf=args.min_leaf, max_features=args.max_features)
    train_ids, _, _ = split_by_trajectory([t.pedestrian_id for t in store], args.seed)
    _, X, y = build_samples(store[i] for i in train_ids)
    forest = fit_forest(X, y, params, args.seed)
    forest.save(args.out)
    report = eval_predictor(f"forest:{args.out}", store, args.seed)
    print(f"forest with {len(forest.trees)} trees on {len(X)} windows -> {args.out}")
    print(f"NMSE train {report.train:.5f}  validation {report.validation:.5f}  test {report.test:.5f}")
    return EXIT_OK


def cmd_train_policy(args) -> int:
    from .policy import TrainConfig, train_policy
    from .scenarios import CORRIDOR_GRID, corridor_crossings
    from .simulator import CrowdSimulator

    if args.store:
        store = load_trajectories(args.store)
        sim = CrowdSimulator(store, GridSpec(store.scene, args.cols, args.rows))
    else:
        sim = CrowdSimulator(corridor_crossings(args.frames, seed=args.seed), CORRIDOR_GRID)
    config = TrainConfig(episodes=args.episodes, learning_rate=args.lr,
                         checkpoint_every=args.checkpoint_every)
    out = Path(args.out)

    def save(n_done, ck):
        if n_done < config.episodes:
            ck.save(out.with_name(f"{out.stem}.ep{n_done}{out.suffix}"))

    ck = train_policy(sim, config, args.seed, log_path=args.log, on_checkpoint=save)
    ck.save(out)
    print(f"trained {config.episodes} episodes -> {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .benchmark import BenchmarkConfig, run_benchmarks

    if not args.controller:
        raise UsageError("simulate needs at least one --controller")
    crowd = None if args.store else _crowd_config(args)
    configs = [
        BenchmarkConfig(controller=c, episodes=args.episodes, seed=args.seed, store=args.store,
                        crowd=crowd, cols=args.cols, rows=args.rows, out=args.out, workers=args.workers)
        for c in args.controller
    ]
    table = run_benchmarks(configs)
    print(table.to_csv() if args.format == "csv" else table.to_markdown(), end="")
    return EXIT_OK


def cmd_eval_predictor(args) -> int:
    from .benchmark import eval_predictor

    report = eval_predictor(args.model, load_trajectories(args.store), args.seed)
    text = json.dumps(asdict(report), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_render(args) -> int:
    from .render import render_frames

    store = load_trajectories(args.store)
    paths = render_frames(args.log, store, args.out, GridSpec(store.scene, args.cols, args.rows),
                          args.image_format)
    print(f"wrote {len(paths)} frames to {args.out}")
    return EXIT_OK


def cmd_export(args) -> int:
    from .benchmark import export_results, read_results

    table = read_results(args.results)
    if args.out:
        export_results(table, args.out, args.format)
    else:
        print(table.to_csv() if args.format == "csv" else table.to_markdown(), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_crowd_flags(p):
    d = CrowdConfig()
    p.add_argument("--pedestrians", type=int, default=d.pedestrians)
    p.add_argument("--frames", type=int, default=d.frames)
    p.add_argument("--straight-fraction", type=float, default=d.straight_fraction)
    p.add_argument("--loiter-fraction", type=float, default=d.loiter_fraction)
    p.add_argument("--speed-mean", type=float, default=d.speed_px_mean, help="mean pixels per frame")
    p.add_argument("--speed-std", type=float, default=d.speed_px_std)


def _add_grid_flags(p):
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--rows", type=int, default=36)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crowdnav", description="Crowd navigation benchmark on replayed trajectories.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file of option defaults (keys are option names)")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = command("ingest", cmd_ingest, "Convert an annotation table into a validated trajectory file.")
    p.add_argument("src")
    p.add_argument("--out", required=True)
    p.add_argument("--columns", default="id,frame,x,y", help="meaning of each input column")
    p.add_argument("--delimiter", default=None)
    p.add_argument("--scale", type=float, default=1.0, help="multiplier from source units to pixels")
    p.add_argument("--frame-step", type=int, default=1)
    p.add_argument("--width", type=float, default=1920.0)
    p.add_argument("--height", type=float, default=1080.0)
    p.add_argument("--on-invalid", choices=("raise", "drop"), default="raise")

    p = command("synth", cmd_synth, "Generate a synthetic crowd recording.")
    p.add_argument("--out", required=True)
    _add_crowd_flags(p)

    p = command("train-forest", cmd_train_forest, "Fit the random-forest trajectory predictor.")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--max-features", type=int, default=11)

    p = command("train-policy", cmd_train_policy, "Train the grid policy in the replay simulator.")
    p.add_argument("--out", required=True)
    p.add_argument("--store", help="recording to train on (default: the crossing corridor)")
    p.add_argument("--frames", type=int, default=3000, help="corridor recording length")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--checkpoint-every", type=int, default=100)
    p.add_argument("--log", help="training log CSV")
    _add_grid_flags(p)

    p = command("simulate", cmd_simulate, "Run controllers over a shared seeded episode list.")
    p.add_argument("--controller", action="append", default=[],
                   help="dstar+baseline[:r] | dstar+forest:PATH | dstar+external:PATH | dstar+perfect | policy:PATH")
    p.add_argument("--store", help="recording (default: a synthetic crowd from the crowd flags)")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: logical cores)")
    p.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    _add_grid_flags(p)
    _add_crowd_flags(p)

    p = command("eval-predictor", cmd_eval_predictor, "NMSE of a predictor on an 80/10/10 trajectory split.")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True, help="persistence | oracle | forest | forest:PATH")
    p.add_argument("--out")

    p = command("render", cmd_render, "Render one image per tick of an episode log.")
    p.add_argument("log")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-format", choices=("ppm", "png"), default="ppm")
    _add_grid_flags(p)

    p = command("export", cmd_export, "Re-export a results table.")
    p.add_argument("results")
    p.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    p.add_argument("--out")
    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("crowdnav: a subcommand is required (see --help)")
    if args.config:
        try:
            defaults = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(defaults, dict):
            raise DataError("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(k.replace("-", "_") for k in defaults if k.replace("-", "_") not in known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
        args = parser.parse_args(argv)  # command-line flags still win
    if getattr(args, "workers", 0) is None:
        from .benchmark import default_workers
        args.workers = default_workers()
    return args


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, FileNotFoundError, IsADirectoryError, NotADirectoryError,
            PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
