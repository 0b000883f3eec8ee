"""Heat-equation critic sweep: dimension x gradient kind, one run directory each.

    python scripts/heat_sweep.py --dims 10 --gradients qhpde dhgm --T 200000 --out runs/heat_sweep

Each run goes through the same code path as ``dhg train``, so the directories
can be summarized afterwards with ``dhg report runs/heat_sweep/*``.
"""

import argparse
import dataclasses
import json
import logging
from pathlib import Path

from dhg.cli import EvalSettings, evaluate_critic, probe_table, save_state, write_csv, _write_eval
from dhg.train import LOG_FIELDS, TrainConfig, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, nargs="+", default=[10])
    ap.add_argument("--gradients", nargs="+", default=["qhpde", "dhgm"])
    ap.add_argument("--problem", default="heat-tcc")
    ap.add_argument("--T", type=int, default=200_000)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--M", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eval-K", type=int, default=1_000_000)
    ap.add_argument("--out", default="runs/heat_sweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    ev = EvalSettings(eval_K=args.eval_K)
    for d in args.dims:
        for grad in args.gradients:
            cfg = TrainConfig(problem=args.problem, gradient=grad, d=d, width=args.width, N=250, T=args.T,
                              M=args.M, seed=args.seed, log_every=max(1, args.T // 20), probes=["sin1", "parabola"])
            path = Path(args.out) / f"{args.problem}_{grad}_d{d}"
            path.mkdir(parents=True, exist_ok=True)
            st, rows = run(cfg, frozen_actor=True)
            save_state(st, path / "final")
            write_csv(path / "log.csv", rows, LOG_FIELDS + [k for k in rows[0] if k not in LOG_FIELDS] if rows else None)
            (path / "config.json").write_text(json.dumps(dataclasses.asdict(cfg), indent=2))
            report = evaluate_critic(st.critic, None, cfg, ev)
            _write_eval(path, report, probe_table(st.critic, cfg, ev))
            v = report["value"]
            print(f"d={d:3d} {grad:5s}  RE2={v['RE2']:.4f}  RMSE={v['RMSE']:.4f}  residual={report['residual_l2']:.4f}")


if __name__ == "__main__":
    main()
