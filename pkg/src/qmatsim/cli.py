"""Command line entry point: ``qmatsim {run,dof,quantizer-test,schedule}``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .harness import (
    ExperimentConfig,
    emit_plot_data,
    emit_results,
    parse_alpha_grid,
    run_experiment,
)
from .quantizer import agreement_probability, build_codebook
from .scheduler import build_round_schedule, dof_baselines, dof_qmat

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# config-file keys accepted besides the ExperimentConfig field names
_ALIASES = {"users": "K", "alpha": "alphas", "scheme": "scheme"}


class UsageError(ValueError):
    pass


def _powers(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid power list {text!r}") from None


def _alpha(text: str) -> float:
    try:
        a = float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"invalid alpha {text!r}") from None
    if not 0.0 <= a <= 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in [0, 1], got {text}")
    return a


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with defaults; flags override it")
    p.add_argument("--users", type=int, help="number of users K")
    p.add_argument("--alpha", type=_alpha, help="CSIT quality exponent in [0, 1]")
    p.add_argument("--alpha-grid", help="start:step:stop, inclusive")
    p.add_argument("--out", help="output path (stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qmatsim", description="Q-MAT broadcast channel simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo sum-rate sweep")
    _common(run)
    run.add_argument("--scheme", choices=["qmat", "mat", "zf", "tdma"])
    run.add_argument("--powers", type=_powers, help="comma separated P values, e.g. 1e2,1e4")
    run.add_argument("--trials", type=int)
    run.add_argument("--rounds", type=int)
    run.add_argument("--mode", choices=["sinr-exponent", "bit-true"])
    run.add_argument("--seed", type=int)
    run.add_argument("--format", choices=["csv", "json"])
    run.add_argument("--backoff", type=float, help="bit-true rate backoff")
    run.add_argument("--include-final", action="store_true", default=None,
                     help="count the auxiliary-only final round in the rate")

    dof = sub.add_parser("dof", help="closed-form DoF table or figure data")
    _common(dof)

    qt = sub.add_parser("quantizer-test", help="gap-enforced quantizer statistics")
    qt.add_argument("--beta1", type=float, default=1.0)
    qt.add_argument("--beta2", type=float, default=0.5)
    qt.add_argument("--powers", type=_powers, default=[1e2, 1e4, 1e6, 1e8])
    qt.add_argument("--trials", type=int, default=10_000)
    qt.add_argument("--seed", type=int, default=0)
    qt.add_argument("--out")

    sc = sub.add_parser("schedule", help="round / phase / slot bookkeeping")
    sc.add_argument("--users", type=int, required=True)
    sc.add_argument("--rounds", type=int, default=1)
    sc.add_argument("--alpha", type=_alpha)
    sc.add_argument("--out")
    return ap


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    out = {}
    fields = set(ExperimentConfig.__dataclass_fields__)
    for key, val in raw.items():
        name = _ALIASES.get(key, key.replace("-", "_"))
        if name == "alpha_grid":
            out["alphas"] = [float(a) for a in parse_alpha_grid(val)]
            continue
        if name not in fields:
            raise UsageError(f"unknown config key {key!r}")
        if name == "alphas" and not isinstance(val, list):
            val = [val]
        out[name] = val
    return out


def parse_cli(argv) -> tuple[str, ExperimentConfig, argparse.Namespace]:
    """Parse `argv` into (command, merged ExperimentConfig, raw namespace)."""
    args = build_parser().parse_args(argv)
    if args.command in ("quantizer-test", "schedule"):
        return args.command, ExperimentConfig(), args
    merged = _load_config(args.config)
    if args.users is not None:
        merged["K"] = args.users
    if args.alpha is not None:
        merged["alphas"] = [args.alpha]
    if args.alpha_grid is not None:
        merged["alphas"] = [float(a) for a in parse_alpha_grid(args.alpha_grid)]
    if args.out is not None:
        merged["out"] = args.out
    for name in ("scheme", "powers", "trials", "rounds", "mode", "seed", "format", "backoff",
                 "include_final"):
        val = getattr(args, name, None)
        if val is not None:
            merged[name] = val
    cfg = ExperimentConfig(**merged)
    cfg.validate()
    return args.command, cfg, args


def _write(text: str, out) -> None:
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {out}: {exc.strerror}") from exc
    else:
        sys.stdout.write(text)


def cmd_run(cfg: ExperimentConfig) -> None:
    table = run_experiment(cfg)
    if cfg.out:
        emit_results(table, cfg.out, cfg.format)
    else:
        tmp = [",".join(["scheme", "K", "alpha", "P", "trial", "sum_rate"])]
        tmp += [f"{r[0]},{r[1]},{r[2]!r},{r[3]!r},{r[4]},{r[5]!r}" for r in table.rows]
        sys.stdout.write("\n".join(tmp) + "\n")
    for (s, K, a), (d, res) in sorted(table.fitted.items()):
        target = float(dof_qmat(K, a))
        print(f"fit {s} K={K} alpha={a}: dof={d:.4f} residual={res:.4f} (qmat closed form {target:.4f})",
              file=sys.stderr)


def cmd_dof(cfg: ExperimentConfig, args) -> None:
    if args.alpha_grid:
        grid = parse_alpha_grid(args.alpha_grid)
    else:
        grid = [Fraction(a).limit_denominator(10**6) for a in cfg.alphas]
    doc = emit_plot_data(cfg.K, grid)
    if not cfg.out:
        # add the exact table when printing to a terminal
        doc["exact"] = [
            {"alpha": str(a), "qmat": str(dof_qmat(cfg.K, a)),
             **dict(zip(("mat", "zf", "tdma"), map(str, dof_baselines(cfg.K, a))))}
            for a in grid
        ]
    _write(json.dumps(doc, indent=1) + "\n", cfg.out)


def cmd_quantizer(args) -> None:
    rng = np.random.default_rng(args.seed)
    rows = []
    for P in args.powers:
        cb = build_codebook(args.beta1, args.beta2, P)
        gaps = np.diff(cb.points)
        rows.append({
            "P": P,
            "levels": int(cb.points.size),
            "rate_bits_per_dim": cb.rate,
            "agreement": agreement_probability(cb, args.beta2, P, args.trials, rng),
            "distortion": cb.distortion,
            "distortion_bound": 4 * math.log2(P) * P**args.beta2,
            "min_gap_ok": bool(np.all(gaps >= cb.min_distance)) if gaps.size else True,
        })
    _write(json.dumps({"beta1": args.beta1, "beta2": args.beta2, "rows": rows}, indent=1) + "\n",
           args.out)


def cmd_schedule(args) -> None:
    _write(build_round_schedule(args.users, args.rounds).to_json(args.alpha) + "\n", args.out)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        command, cfg, args = parse_cli(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_USAGE if exc.code else EXIT_OK
    except (UsageError, ValueError, TypeError) as exc:
        print(f"qmatsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if command == "run":
            cmd_run(cfg)
        elif command == "dof":
            cmd_dof(cfg, args)
        elif command == "quantizer-test":
            cmd_quantizer(args)
        else:
            cmd_schedule(args)
    except ValueError as exc:
        print(f"qmatsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"qmatsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
