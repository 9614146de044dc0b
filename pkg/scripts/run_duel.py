"""Duel a model against the baseline or another model, with progress output.

    python3 scripts/run_duel.py runs/gpft.json --vs baseline --n 100 -o runs/duel_gpft_vs_baseline
    python3 scripts/run_duel.py runs/gprt.json --vs runs/gpft.json --n 200 --scenario rough \\
        -o runs/duel_gprt_vs_gpft

Writes ``<out>.csv`` (one row per round) and ``<out>.json`` (summary), the
same files as ``gaitbo eval``.
"""

import argparse
import json
import time
from pathlib import Path

from gaitbo import bo, eval as ev
from gaitbo.config import RunConfig, load_config
from gaitbo.gp import load_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("model", type=Path)
    ap.add_argument("--vs", default="baseline")
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--scenario", default="flat", choices=[bo.FLAT, bo.ROUGH])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--config", type=Path)
    ap.add_argument("-o", "--out", type=Path, required=True)
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    p1 = ev.ModelPlayer(load_model(args.model), args.model.stem)
    if args.vs == "baseline":
        p2 = ev.BaselinePlayer()
    else:
        p2 = ev.ModelPlayer(load_model(Path(args.vs)), Path(args.vs).stem)
    oracle = bo.MeritOracle(cfg.hopper, cfg.solver, cfg.merit)
    t0 = time.time()

    def progress(rec):
        print(f"[{time.time() - t0:6.0f}s] round {rec.round} z={rec.goal_distance:.3f} "
              f"{rec.action1} {rec.merit1:.4f}{'' if rec.converged1 else ' (failed)'} vs "
              f"{rec.action2} {rec.merit2:.4f}{'' if rec.converged2 else ' (failed)'} "
              f"winner {rec.winner}", flush=True)

    report = ev.duel(p1, p2, args.n, args.seed, args.scenario, oracle, cfg.terrain_settings(),
                     progress)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(args.out.with_suffix(".csv"))
    report.to_json(args.out.with_suffix(".json"))
    print(json.dumps(report.summary(), indent=2))


if __name__ == "__main__":
    main()
