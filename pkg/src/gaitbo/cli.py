"""Command line entry point: train, eval, predict, transition-map, terrain-gen.

Exit codes: 0 success, 1 usage or configuration error, 2 IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bo, eval as ev
from .collocation import Context
from .config import ConfigError, RunConfig, load_config
from .gp import GpError, GpState, load_model, save_model
from .terrain import TerrainError, flat_heightmap, load_heightmap, sample_random_terrain, save_heightmap

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 1, 2
GOAL_MAX = 1.0

log = logging.getLogger("gaitbo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--seed", type=int, help="overrides [bo] seed")
    p.add_argument("-o", "--out", type=Path, help="output path")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gaitbo", description="contact-schedule learning for a planar hopper")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="learn a schedule model with contextual GP-UCB")
    _common(p)
    p.add_argument("--scenario", choices=[bo.FLAT, bo.ROUGH])
    p.add_argument("--warm-start", type=Path, help="model to continue from (rough stage only)")
    p.add_argument("--max-iterations", type=int, help="overrides [bo] max_iterations")

    p = sub.add_parser("eval", help="duel a model against the baseline or another model")
    _common(p)
    p.add_argument("model", type=Path)
    p.add_argument("--vs", default="baseline", help="'baseline' or a model path")
    p.add_argument("--n", type=int, default=100, help="number of duel rounds")
    p.add_argument("--scenario", choices=[bo.FLAT, bo.ROUGH])

    p = sub.add_parser("predict", help="print the predicted schedule for one task")
    _common(p)
    p.add_argument("model", type=Path)
    p.add_argument("--goal", type=float, required=True, help="goal distance in m")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--terrain", type=Path, help="heightmap file")
    g.add_argument("--flat", action="store_true", help="all-zero terrain (default)")

    p = sub.add_parser("transition-map", help="predicted schedule over a goal-distance sweep")
    _common(p)
    p.add_argument("model", type=Path)
    p.add_argument("--resolution", type=float, default=0.001)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--terrain", type=Path, help="heightmap file")
    g.add_argument("--flat", action="store_true", help="all-zero terrain (default)")

    p = sub.add_parser("terrain-gen", help="write a heightmap file")
    _common(p)
    p.add_argument("--flat", action="store_true", help="write the all-zero heightmap")
    return parser


# -- helpers --------------------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace("bo", seed=args.seed)
    if getattr(args, "scenario", None):
        cfg = cfg.replace("bo", scenario=args.scenario)
    if getattr(args, "max_iterations", None) is not None:
        cfg = cfg.replace("bo", max_iterations=args.max_iterations)
    return cfg


def _oracle(cfg: RunConfig) -> bo.MeritOracle:
    return bo.MeritOracle(cfg.hopper, cfg.solver, cfg.merit)


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _terrain_context(cfg: RunConfig, goal: float, args) -> Context:
    """Context for a goal and an optional heightmap file."""
    settings = cfg.terrain_settings()
    hm = load_heightmap(args.terrain) if args.terrain else flat_heightmap()
    if args.terrain and len(hm.x_samples) != len(settings.base.x_samples):
        raise ConfigError("terrain file must use the configured knot grid")
    feats = hm.z_samples[settings.indices] - settings.base.z_samples[settings.indices]
    return Context(goal, np.asarray(feats, dtype=float))


# -- commands -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    out = args.out or Path("model.json")
    warm = load_model(args.warm_start) if args.warm_start else None
    if warm is not None and cfg.bo.scenario != bo.ROUGH:
        raise ConfigError("--warm-start is only meaningful with --scenario rough")
    result = bo.train(cfg.bo, _oracle(cfg), cfg.kernel_params(), warm, cfg.terrain_settings())
    save_model(result.gp, out)
    bo.write_log(result.log, _sibling(out, "_log.csv"))
    summary = {"converged": result.converged, "stages": result.stages,
               "observations": result.gp.n, "seed": cfg.bo.seed, "scenario": cfg.bo.scenario}
    _sibling(out, "_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    status = "converged" if result.converged else "not converged"
    print(f"{out}: {result.gp.n} observations, {status}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    cfg = _config(args)
    model = load_model(args.model)
    p1 = ev.ModelPlayer(model, args.model.stem)
    if args.vs == "baseline":
        p2 = ev.BaselinePlayer()
    else:
        p2 = ev.ModelPlayer(load_model(Path(args.vs)), Path(args.vs).stem)
    report = ev.duel(p1, p2, args.n, cfg.bo.seed, cfg.bo.scenario, _oracle(cfg),
                     cfg.terrain_settings())
    out = args.out or Path(f"duel_{p1.name}_vs_{p2.name}")
    report.to_csv(out.with_suffix(".csv"))
    report.to_json(out.with_suffix(".json"))
    s = report.summary()
    print(f"{p1.name} vs {p2.name}: {s['wins1']:g}-{s['wins2']:g} over {s['rounds']} rounds, "
          f"failure rates {s['failure_rate1']:.3f} / {s['failure_rate2']:.3f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    if not 0.0 <= args.goal <= GOAL_MAX:
        raise UsageError(f"goal distance must lie in [0, {GOAL_MAX}] m")
    cfg = _config(args)
    model = load_model(args.model)
    context = _terrain_context(cfg, args.goal, args)
    action = ev.predict_action(model, context)
    text = f"action {action}\nphases {action.n_phases}\nschedule {action.schedule_string()}\n"
    if args.out:
        args.out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_transition_map(args) -> int:
    if not 0 < args.resolution <= 1.0:
        raise UsageError("--resolution must lie in (0, 1]")
    cfg = _config(args)
    model = load_model(args.model)
    feats = _terrain_context(cfg, 0.0, args).terrain_features
    rows = ev.transition_map(model, args.resolution, 0.0, GOAL_MAX, feats)
    out = args.out or Path("transition_map.csv")
    ev.write_transition_map(rows, out)
    print(f"{out}: {len(rows)} rows")
    return EXIT_OK


def cmd_terrain_gen(args) -> int:
    cfg = _config(args)
    settings = cfg.terrain_settings()
    out = args.out or Path("terrain.txt")
    if args.flat:
        hm, heights = settings.base, np.zeros(0)
    else:
        rng = np.random.default_rng(cfg.bo.seed)
        hm, heights = sample_random_terrain(rng, len(settings.indices), settings.base,
                                            settings.indices, settings.sigma)
    comment = "flat" if args.flat else f"seed {cfg.bo.seed}; heights " + " ".join(
        f"{h:.6f}" for h in heights)
    save_heightmap(hm, out, comment)
    print(f"{out}: {comment}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "transition-map": cmd_transition_map,
    "terrain-gen": cmd_terrain_gen,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gaitbo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, GpError, TerrainError, ValueError) as exc:
        print(f"gaitbo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"gaitbo: io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
