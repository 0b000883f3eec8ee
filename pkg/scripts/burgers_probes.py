"""Finite-difference Monte Carlo values of the Burgers control problem at the named probes.

    python scripts/burgers_probes.py                       # deterministic column
    python scripts/burgers_probes.py --noise 1d --paths 1000

Prints a markdown table (probe, estimate, standard error, runtime).
"""

import argparse

from dhg.cli import fd_noise_profile
from dhg.oracle import fd_burgers_value
from dhg.residual import noise_by_name
from dhg.spectral import PROBE_FUNCTIONS


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--noise", default="none", choices=["none", "tcc", "1d"])
    ap.add_argument("--paths", type=int, default=1)
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--probes", nargs="+", default=list(PROBE_FUNCTIONS))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    noise = noise_by_name(args.noise, 250)
    print("| probe | estimate | std. error | runtime (s) |\n|---|---|---|---|")
    for name in args.probes:
        r = fd_burgers_value(PROBE_FUNCTIONS[name], noise=noise, steps=args.steps, mc_count=args.paths,
                             seed=args.seed, noise_fn=fd_noise_profile(args.noise))
        print(f"| {name} | {r.estimate:.4f} | {r.std_error:.4f} | {r.runtime:.1f} |", flush=True)


if __name__ == "__main__":
    main()
