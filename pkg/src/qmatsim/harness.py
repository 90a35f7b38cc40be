"""Monte Carlo sweeps, DoF slope fits and result files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .baselines import SCHEMES, scheme_rate
from .channel import MODES, SimParams
from .scheduler import dof_baselines, dof_qmat

__all__ = [
    "ExperimentConfig",
    "ResultsTable",
    "FitError",
    "run_experiment",
    "estimate_slope",
    "emit_results",
    "read_results",
    "emit_plot_data",
    "parse_alpha_grid",
    "CSV_HEADER",
]

CSV_HEADER = "scheme,K,alpha,P,trial,sum_rate"
FIELDS = CSV_HEADER.split(",")
DEFAULT_POWERS = tuple(10.0**e for e in range(2, 9))


class FitError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scheme: str = "qmat"
    K: int = 2
    alphas: list[float] = field(default_factory=lambda: [0.5])
    powers: list[float] = field(default_factory=lambda: list(DEFAULT_POWERS))
    trials: int = 10
    rounds: int = 6
    mode: str = "sinr-exponent"
    seed: int = 0
    out: str | None = None
    format: str = "csv"
    include_final: bool = False
    backoff: float = 0.2

    def validate(self) -> "ExperimentConfig":
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be an integer >= 1, got {self.K}")
        if not self.alphas:
            raise ValueError("at least one alpha is required")
        for a in self.alphas:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"alpha must lie in [0, 1], got {a}")
        if any(p <= 1.0 for p in self.powers):
            raise ValueError("every power P must be > 1")
        if any(b <= a for a, b in zip(self.powers, self.powers[1:])):
            raise ValueError("powers must be strictly increasing")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.format not in ("csv", "json"):
            raise ValueError(f"format must be csv or json, got {self.format!r}")
        if not 0.0 <= self.backoff < 1.0:
            raise ValueError(f"backoff must lie in [0, 1), got {self.backoff}")
        return self


@dataclass
class ResultsTable:
    rows: list[tuple] = field(default_factory=list)
    fitted: dict[tuple, tuple[float, float]] = field(default_factory=dict)

    def sort(self) -> "ResultsTable":
        self.rows.sort(key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
        return self

    def points(self, scheme: str, K: int, alpha: float) -> list[tuple[float, float]]:
        return [(r[3], r[5]) for r in self.rows if (r[0], r[1], r[2]) == (scheme, K, alpha)]

    def fit(self) -> "ResultsTable":
        self.fitted = {}
        for key in sorted({(r[0], r[1], r[2]) for r in self.rows}):
            pts = self.points(*key)
            if len({p for p, _ in pts}) >= 3:
                slope, _, resid = estimate_slope(pts)
                self.fitted[key] = (slope, resid)
        return self


def estimate_slope(points) -> tuple[float, float, float]:
    """Least-squares line ``rate = slope * log2(P) + intercept``.

    Returns ``(slope, intercept, rms residual)``.
    """
    pts = list(points)
    if len({p for p, _ in pts}) < 3:
        raise FitError("at least 3 distinct P values are needed for a slope fit")
    x = np.log2(np.array([p for p, _ in pts], dtype=float))
    y = np.array([r for _, r in pts], dtype=float)
    A = np.column_stack((x, np.ones_like(x)))
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ np.array([slope, intercept]) - y) ** 2)))
    return float(slope), float(intercept), resid


def _one(job):
    cfg, alpha, P, trial = job
    params = SimParams(K=cfg.K, P=P, alpha=alpha, rounds=cfg.rounds, mode=cfg.mode, seed=cfg.seed)
    rate = scheme_rate(cfg.scheme, params, trial, cfg.include_final, cfg.backoff)
    return (cfg.scheme, cfg.K, alpha, P, trial, float(rate))


def _workers() -> int:
    try:
        cap = int(os.environ.get("QMATSIM_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, os.cpu_count() or 1))


def run_experiment(config: ExperimentConfig) -> ResultsTable:
    config.validate()
    jobs = [(config, a, P, t) for a in config.alphas for P in config.powers for t in range(config.trials)]
    n = _workers()
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_one, jobs, chunksize=4))
    else:
        rows = [_one(j) for j in jobs]
    return ResultsTable(rows=rows).sort().fit()


def _fit_rows(table: ResultsTable):
    return [
        {"scheme": s, "K": K, "alpha": a, "dof_estimate": d, "residual": r}
        for (s, K, a), (d, r) in sorted(table.fitted.items())
    ]


def _companion(path: Path, fmt: str) -> Path:
    return path.with_name(f"{path.stem}.fit.{fmt}")


def emit_results(table: ResultsTable, path, format: str = "csv") -> Path:
    if not table.rows:
        raise ValueError("refusing to write an empty results table")
    path = Path(path)
    try:
        if format == "csv":
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(FIELDS)
            for r in table.rows:
                w.writerow([r[0], r[1], repr(float(r[2])), repr(float(r[3])), r[4], repr(float(r[5]))])
            path.write_text(buf.getvalue(), newline="")
            fits = _fit_rows(table)
            if fits:
                fb = io.StringIO()
                fw = csv.DictWriter(fb, fieldnames=list(fits[0]), lineterminator="\n")
                fw.writeheader()
                fw.writerows(fits)
                _companion(path, "csv").write_text(fb.getvalue(), newline="")
        elif format == "json":
            doc = [dict(zip(FIELDS, r)) for r in table.rows]
            path.write_text(json.dumps(doc, indent=1) + "\n")
            fits = _fit_rows(table)
            if fits:
                _companion(path, "json").write_text(json.dumps(fits, indent=1) + "\n")
        else:
            raise ValueError(f"format must be csv or json, got {format!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror or exc}") from exc
    return path


def read_results(path, format: str | None = None) -> ResultsTable:
    path = Path(path)
    fmt = format or path.suffix.lstrip(".")
    if fmt == "json":
        rows = [tuple(d[f] for f in FIELDS) for d in json.loads(path.read_text())]
    else:
        with path.open(newline="") as fh:
            rows = [
                (d["scheme"], int(d["K"]), float(d["alpha"]), float(d["P"]), int(d["trial"]),
                 float(d["sum_rate"]))
                for d in csv.DictReader(fh)
            ]
    return ResultsTable(rows=[tuple(r) for r in rows]).fit()


def parse_alpha_grid(text: str) -> list[Fraction]:
    """``"start:step:stop"`` (inclusive) as exact fractions."""
    try:
        start, step, stop = (Fraction(s) for s in text.split(":"))
    except ValueError as exc:
        raise ValueError(f"alpha grid must look like start:step:stop, got {text!r}") from exc
    if step <= 0:
        raise ValueError("alpha grid step must be positive")
    if not (0 <= start <= 1 and 0 <= stop <= 1):
        raise ValueError("alpha grid must lie within [0, 1]")
    n = math.floor((stop - start) / step)
    return [start + i * step for i in range(n + 1)]


def emit_plot_data(K: int, alpha_grid) -> dict:
    """Closed-form sum-DoF curves of all four schemes over `alpha_grid`."""
    alphas = [a if isinstance(a, Fraction) else Fraction(a).limit_denominator(10**6) for a in alpha_grid]
    if any(not 0 <= a <= 1 for a in alphas):
        raise ValueError("alpha grid must lie within [0, 1]")
    curves = {"qmat": [], "mat": [], "zf": [], "tdma": []}
    for a in alphas:
        mat, zf, tdma = dof_baselines(K, a)
        curves["qmat"].append(float(dof_qmat(K, a)))
        curves["mat"].append(float(mat))
        curves["zf"].append(float(zf))
        curves["tdma"].append(float(tdma))
    xs = [float(a) for a in alphas]
    return {"K": K, "curves": [{"label": k, "alpha": xs, "dof": v} for k, v in curves.items()]}


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
