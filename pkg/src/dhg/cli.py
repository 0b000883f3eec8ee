"""Command-line entry point: train, evaluate, oracle, fd-oracle, report."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
import types
import typing
import warnings
from pathlib import Path

import numpy as np

from . import __version__, hgno
from .evaluation import bounded_inverse_report, derivative_error_norms, metrics, residual_l2_norm
from .measures import STREAMS
from .oracle import FDDiverged, fd_burgers_value, lq_solve, oracle_control, reference_critic
from .residual import PRESETS, noise_by_name
from .spectral import PROBE_FUNCTIONS, ConfigError, FormatError, probe_point
from .train import LOG_FIELDS, OptimizerState, TrainConfig, TrainingDiverged, TrainState, run

log = logging.getLogger("dhg")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


# --- run configuration -------------------------------------------------------

@dataclasses.dataclass
class EvalSettings:
    eval_K: int = 1_000_000
    op_K: int = 10_000
    eval_seed: int | None = None
    fd_paths: int = 16
    fd_steps: int = 100_000
    probe_oracle: bool = True


TRAIN_KEYS = typing.get_type_hints(TrainConfig)
EVAL_KEYS = typing.get_type_hints(EvalSettings)
EXTRA_KEYS = {"out"}


def _type_ok(value, hint) -> bool:
    options = typing.get_args(hint) if isinstance(hint, types.UnionType) or typing.get_origin(hint) is typing.Union else (hint,)
    for opt in options:
        base = typing.get_origin(opt) or opt
        if opt is type(None):
            if value is None:
                return True
        elif base is float:
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return True
        elif base is int:
            if isinstance(value, int) and not isinstance(value, bool):
                return True
        elif isinstance(value, base):
            return True
    return False


def validate_config(raw: dict) -> tuple[TrainConfig, EvalSettings, str | None]:
    """Check keys, types and module preconditions before any compute."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if "problem" not in raw:
        raise ConfigError("missing required key 'problem'")
    for key, value in raw.items():
        hint = TRAIN_KEYS.get(key, EVAL_KEYS.get(key))
        if hint is None and key not in EXTRA_KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        if hint is not None and not _type_ok(value, hint):
            raise ConfigError(f"bad type for '{key}': {value!r}")
    if raw["problem"] not in PRESETS:
        raise ConfigError(f"'problem' must be one of {sorted(PRESETS)}, got {raw['problem']!r}")
    train_kw = {k: v for k, v in raw.items() if k in TRAIN_KEYS}
    for k in ("critic_schedule", "actor_schedule"):
        s = train_kw.get(k)
        if isinstance(s, list) and (len(s) != 2 or not all(isinstance(x, (int, float)) for x in s) or s[0] <= 0 or s[1] < 0):
            raise ConfigError(f"'{k}' must be a schedule id or [c > 0, e >= 0]")
    try:
        cfg = TrainConfig(**train_kw)
        cfg.spec()
        cfg.mu()
        cfg.critic_rate, cfg.actor_rate
        for name in cfg.probes:
            probe_point(name, cfg.N)
    except ConfigError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    ev = EvalSettings(**{k: v for k, v in raw.items() if k in EVAL_KEYS})
    for k in ("eval_K", "op_K"):
        if getattr(ev, k) < 1:
            raise ConfigError(f"'{k}' must be >= 1")
    return cfg, ev, raw.get("out")


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None


def config_hash(cfg: TrainConfig, ev: EvalSettings) -> str:
    blob = json.dumps({"train": cfg.to_dict(), "eval": dataclasses.asdict(ev)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def out_dir(cli_out: str | None, cfg_out: str | None, default: str) -> Path:
    path = Path(cli_out or os.environ.get("DHG_OUT") or cfg_out or default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(path: Path, cfg: TrainConfig, ev: EvalSettings, command: str) -> None:
    files = {}
    for f in sorted(path.iterdir()):
        if f.is_file() and f.name != "manifest.json":
            files[f.name] = hashlib.sha256(f.read_bytes()).hexdigest()
    manifest = {
        "command": command,
        "config": {"train": cfg.to_dict(), "eval": dataclasses.asdict(ev)},
        "config_hash": config_hash(cfg, ev),
        "version": __version__,
        "seeds": {"seed": cfg.seed, "eval_seed": _eval_seed(cfg, ev), "streams": STREAMS},
        "files": files,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _eval_seed(cfg: TrainConfig, ev: EvalSettings) -> int:
    return cfg.seed if ev.eval_seed is None else ev.eval_seed


# --- checkpoints -----------------------------------------------------------------

def save_state(st: TrainState, prefix: Path) -> None:
    """``prefix.hgno`` critic, ``prefix_actor.hgno`` actor, ``prefix_state.npz`` optimizer sidecar."""
    hgno.save(st.critic, f"{prefix}.hgno")
    arrays = {"t": np.array(st.t)}
    arrays.update({f"critic_{k}": v for k, v in st.critic_opt.to_arrays().items()})
    if st.actor is not None:
        hgno.save(st.actor, f"{prefix}_actor.hgno")
        arrays.update({f"actor_{k}": v for k, v in st.actor_opt.to_arrays().items()})
    with open(f"{prefix}_state.npz", "wb") as fh:
        np.savez(fh, **arrays)


def load_state(path: str, cfg: TrainConfig) -> TrainState:
    """Resume from ``X.hgno`` plus its sidecar ``X_state.npz`` (and ``X_actor.hgno`` if present)."""
    prefix = path[: -len(".hgno")] if path.endswith(".hgno") else path
    critic = hgno.load(f"{prefix}.hgno")
    hgno.check_dims(critic, cfg.d, cfg.width)
    sidecar = Path(f"{prefix}_state.npz")
    if not sidecar.exists():
        raise FormatError(f"optimizer-state sidecar {sidecar} not found")
    with np.load(sidecar) as z:
        pick = lambda tag: {k[len(tag) + 1:]: z[k] for k in z.files if k.startswith(tag + "_")}
        t = int(z["t"])
        copt = OptimizerState.from_arrays(pick("critic"))
        actor = aopt = None
        if Path(f"{prefix}_actor.hgno").exists():
            actor = hgno.load(f"{prefix}_actor.hgno")
            aopt = OptimizerState.from_arrays(pick("actor"))
    return TrainState(t, critic, copt, actor, aopt)


def load_critic(arg: str, cfg: TrainConfig):
    """A ``.hgno`` path, or ``oracle`` for the closed-form reference critic."""
    if arg == "oracle":
        return reference_critic(cfg.spec()), None
    critic = hgno.load(arg)
    if not isinstance(critic, hgno.CriticNet):
        raise FormatError(f"{arg} holds an actor, expected a critic")
    hgno.check_dims(critic, cfg.d)
    actor_path = Path(arg[: -len(".hgno")] + "_actor.hgno") if arg.endswith(".hgno") else None
    actor = hgno.load(actor_path) if actor_path and actor_path.exists() else None
    return critic, actor


# --- CSV helpers ---------------------------------------------------------------

def write_csv(path: Path, rows: list[dict], fields: list[str] | None = None) -> None:
    fields = fields or list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def append_csv(path: Path, row: dict) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow(row)


def fd_noise_profile(noise_name: str):
    """Exact grid profile for rank-one constant noise; None means synthesize from the columns."""
    return PROBE_FUNCTIONS["const-invsqrt2pi"] if noise_name == "1d" else None


# --- evaluation ------------------------------------------------------------------

def probe_table(critic, cfg: TrainConfig, ev: EvalSettings) -> list[dict]:
    """Rows (point, model, oracle) for each configured probe."""
    spec = cfg.spec()
    rows = []
    ref = None if spec.is_burgers else reference_critic(spec)
    for name in cfg.probes:
        x = probe_point(name, cfg.N)
        oracle_value = None
        if ref is not None:
            oracle_value = float(ref.value(x))
        elif ev.probe_oracle:
            x0 = PROBE_FUNCTIONS.get(name, x)
            res = fd_burgers_value(x0, noise=spec.noise, gamma=spec.gamma, mc_count=ev.fd_paths,
                                   steps=ev.fd_steps, seed=_eval_seed(cfg, ev),
                                   noise_fn=fd_noise_profile(spec.noise.name))
            oracle_value = res.estimate
        rows.append({"point": name, "model": float(critic.value(x)), "oracle": oracle_value})
    return rows


def evaluate_critic(critic, actor, cfg: TrainConfig, ev: EvalSettings) -> dict:
    spec = cfg.spec()
    mu = cfg.mu()
    seed = _eval_seed(cfg, ev)
    report: dict = {"problem": cfg.problem, "hjb": cfg.hjb, "gradient": cfg.gradient, "seed": cfg.seed,
                    "eval_seed": seed, "K": ev.eval_K}
    report["residual_l2"] = residual_l2_norm(critic, actor, spec, mu, ev.eval_K, seed)
    if not spec.is_burgers:
        ref = reference_critic(spec)
        report["value"] = metrics(critic.value, ref.value, mu, ev.eval_K, seed, "mu-samples").to_dict()
        report["derivatives"] = derivative_error_norms(critic, ref, mu, mu, ev.op_K, seed).to_dict()
        if spec.is_hjb and actor is not None:
            sol = lq_solve(spec.gamma, spec.lam, spec.xbar, spec.noise.diag(spec.N), spec.N)
            report["control"] = metrics(lambda X: actor(X, spec.N), lambda X: oracle_control(sol, X),
                                        mu, ev.eval_K, seed, "mu-samples").to_dict()
        if spec.kind == "heat_kolmogorov":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                report["bounded_inverse"] = bounded_inverse_report(critic, spec, mu, ev.eval_K, seed).to_dict()
    return report


def _write_eval(path: Path, report: dict, probes: list[dict]) -> None:
    (path / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    row = {"problem": report["problem"], "gradient": report["gradient"], "seed": report["seed"],
           "residual_l2": report["residual_l2"]}
    for key in ("ME", "RMSE", "RE1", "RE2"):
        row[key] = report.get("value", {}).get(key)
    append_csv(path / "metrics.csv", row)
    if probes:
        write_csv(path / "probes.csv", probes, ["point", "model", "oracle"])


# --- commands ---------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg, ev, cfg_out = validate_config(load_config(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    path = out_dir(args.out, cfg_out, f"runs/{config_hash(cfg, ev)[:12]}")
    state = load_state(args.checkpoint, cfg) if args.checkpoint else None
    ckpt = lambda st: save_state(st, path / f"ckpt_{st.t:09d}")
    try:
        st, rows = run(cfg, state, on_checkpoint=ckpt)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    save_state(st, path / "final")
    fields = LOG_FIELDS + [f"value_{p}" for p in cfg.probes]
    if state is not None and (path / "log.csv").exists():
        with open(path / "log.csv") as fh:
            prior = [r for r in csv.DictReader(fh) if int(r["iteration"]) <= state.t]
        rows = prior + rows
    write_csv(path / "log.csv", rows, fields)
    if not args.no_eval:
        critic, actor = st.critic, st.actor
        _write_eval(path, evaluate_critic(critic, actor, cfg, ev), probe_table(critic, cfg, ev))
    write_manifest(path, cfg, ev, "train")
    print(path)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, ev, cfg_out = validate_config(load_config(args.config))
    if args.seed is not None:
        ev = dataclasses.replace(ev, eval_seed=args.seed)
    if not args.checkpoint:
        raise ConfigError("evaluate needs --checkpoint (a .hgno file or 'oracle')")
    critic, actor = load_critic(args.checkpoint, cfg)
    path = out_dir(args.out, cfg_out, f"runs/{config_hash(cfg, ev)[:12]}")
    report = evaluate_critic(critic, actor, cfg, ev)
    report["checkpoint"] = args.checkpoint
    probes = probe_table(critic, cfg, ev)
    _write_eval(path, report, probes)
    write_manifest(path, cfg, ev, "evaluate")
    if probes:
        sys.stdout.write(_table(probes, ["point", "model", "oracle"]))
    print(json.dumps({k: report[k] for k in ("residual_l2",) if k in report}))
    return EXIT_OK


def cmd_oracle(args) -> int:
    noise = noise_by_name(args.noise, args.modes)
    sol = lq_solve(args.gamma, args.lam, None, noise.diag(args.modes), args.modes)
    rows = [{"n": n + 1, "M": repr(float(sol.M[n])), "Q": repr(float(sol.Q[n])), "R": repr(float(sol.R[n]))}
            for n in range(args.modes)]
    buf = _csv_text(rows, ["n", "M", "Q", "R"])
    _emit(buf, args.out, "oracle.csv")
    return EXIT_OK


def cmd_fd_oracle(args) -> int:
    N = 250
    noise = noise_by_name(args.noise, N)
    x0 = PROBE_FUNCTIONS.get(args.x0)
    if x0 is None:
        x0 = probe_point(args.x0, N)
    try:
        res = fd_burgers_value(x0, noise=noise, gamma=args.gamma, grid_points=args.grid_points, dt=args.dt,
                               steps=args.steps, mc_count=args.paths, seed=args.seed or 0,
                               implicit=args.implicit, noise_fn=fd_noise_profile(args.noise))
    except FDDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    row = {"x0": args.x0, "noise": args.noise, "estimate": f"{res.estimate:.4f}",
           "std_error": f"{res.std_error:.4g}", "paths": res.paths, "runtime_s": f"{res.runtime:.2f}"}
    _emit(_csv_text([row], list(row)), args.out, "fd_oracle.csv")
    return EXIT_OK


def cmd_report(args) -> int:
    """Summary tables rebuilt from artifact directories alone (metrics.json, probes.csv)."""
    rows, probes = [], []
    for d in sorted(args.runs):
        p = Path(d)
        mpath = p / "metrics.json"
        if not mpath.exists():
            print(f"warning: {mpath} missing, skipped", file=sys.stderr)
            continue
        m = json.loads(mpath.read_text())
        v = m.get("value", {})
        der = m.get("derivatives", {})
        rows.append({"run": p.name, "problem": m["problem"], "gradient": m["gradient"], "seed": m["seed"],
                     "ME": _fmt(v.get("ME")), "RMSE": _fmt(v.get("RMSE")), "RE1": _fmt(v.get("RE1")),
                     "RE2": _fmt(v.get("RE2")), "residual_l2": _fmt(m.get("residual_l2")),
                     "hess_mu_mu": _fmt(der.get("hess_mu_mu_4")), "hess_op": _fmt(der.get("hess_op_4")),
                     "control_RE2": _fmt(m.get("control", {}).get("RE2"))})
        if (p / "probes.csv").exists():
            with open(p / "probes.csv") as fh:
                probes += [{"run": p.name, **r} for r in csv.DictReader(fh)]
    text = _table(rows, list(rows[0]) if rows else ["run"])
    if probes:
        text += "\n" + _table(probes, ["run", "point", "model", "oracle"])
    _emit(text, args.out, "report.md")
    return EXIT_OK


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6g}"


def _table(rows: list[dict], fields: list[str]) -> str:
    out = ["| " + " | ".join(fields) + " |", "|" + "---|" * len(fields)]
    for r in rows:
        out.append("| " + " | ".join(str(r.get(f, "")) for f in fields) + " |")
    return "\n".join(out) + "\n"


def _csv_text(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out: str | None, filename: str) -> None:
    sys.stdout.write(text)
    target = out or os.environ.get("DHG_OUT")
    if target:
        Path(target).mkdir(parents=True, exist_ok=True)
        (Path(target) / filename).write_text(text)


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dhg", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--checkpoint")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (overrides DHG_OUT)")

    p = sub.add_parser("train", help="train a critic (and actor on HJB problems)")
    common(p)
    p.add_argument("--no-eval", action="store_true", help="skip the final metric report")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="metrics of a checkpoint ('oracle' for the reference critic)")
    common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("oracle", help="closed-form LQ coefficients as CSV")
    common(p, config=False)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--noise", default="tcc", choices=["none", "tcc", "1d"])
    p.add_argument("--modes", type=int, default=10)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("fd-oracle", help="finite-difference Monte Carlo Burgers value")
    common(p, config=False)
    p.add_argument("--x0", required=True, help="probe name or inline sparse vector 'n,c;...'")
    p.add_argument("--noise", default="none", choices=["none", "tcc", "1d"])
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--grid-points", type=int, default=251)
    p.add_argument("--implicit", action="store_true")
    p.set_defaults(fn=cmd_fd_oracle)

    p = sub.add_parser("report", help="summary tables from run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
