"""Train a schedule model with progress output.

    python3 scripts/train_model.py --scenario flat --seed 0 -o runs/gpft.json
    python3 scripts/train_model.py --scenario rough --warm-start runs/gpft.json -o runs/gprt.json

Writes the model JSON, ``<stem>_log.csv`` and ``<stem>_summary.json``, the
same files as ``gaitbo train``.
"""

import argparse
import json
import time
from pathlib import Path

from gaitbo import bo
from gaitbo.config import RunConfig, load_config
from gaitbo.gp import load_model, save_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", type=Path)
    ap.add_argument("--scenario", default="flat", choices=[bo.FLAT, bo.ROUGH])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--warm-start", type=Path)
    ap.add_argument("--max-iterations", type=int)
    ap.add_argument("-o", "--out", type=Path, required=True)
    ap.add_argument("--every", type=int, default=25, help="progress interval")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = cfg.replace("bo", seed=args.seed, scenario=args.scenario)
    if args.max_iterations:
        cfg = cfg.replace("bo", max_iterations=args.max_iterations)
    warm = load_model(args.warm_start) if args.warm_start else None
    args.out.parent.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    count = [0]

    def progress(row):
        count[0] += 1
        if count[0] % args.every == 0:
            print(f"[{time.time() - t0:7.0f}s] stage {row['stage']} k={row['k']} "
                  f"z={row['goal_distance']:.3f} {row['action']} m={row['merit']:.4f} "
                  f"mu={row['mu_pred']:.4f} fsrr={row['fsrr']:.4f}", flush=True)

    oracle = bo.MeritOracle(cfg.hopper, cfg.solver, cfg.merit)
    result = bo.train(cfg.bo, oracle, cfg.kernel_params(), warm, cfg.terrain_settings(), progress)
    save_model(result.gp, args.out)
    bo.write_log(result.log, args.out.with_name(args.out.stem + "_log.csv"))
    summary = {"converged": result.converged, "stages": result.stages,
               "observations": result.gp.n, "seed": cfg.bo.seed, "scenario": cfg.bo.scenario,
               "seconds": round(time.time() - t0, 1)}
    args.out.with_name(args.out.stem + "_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
