"""Replicated experiments: run many seeded replicas, fold them into summary
tables and compare against the deterministic limits."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .census import run_totals, run_trajectory
from .rates import LambdaMeasure, parse_measure
from .theory import limit_constant, x_r

MODES = ("totals", "trajectory", "variance_scaling")
Z95 = 1.959963984540054


@dataclass
class ExperimentConfig:
    measure: str
    n_values: list[int]
    r_max: int = 4
    replicas: int = 100
    master_seed: int = 0
    mode: str = "totals"
    time_grid: list[float] = field(default_factory=list)
    output: str | None = None
    fmt: str = "csv"
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.measure, LambdaMeasure):
            self.measure = self.measure.spec()
        parse_measure(self.measure)
        self.n_values = [int(n) for n in self.n_values]
        self.time_grid = [float(t) for t in self.time_grid]
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")
        if not self.n_values or min(self.n_values) < 2:
            raise ValueError("n values must be at least 2")
        if any(self.r_max > n for n in self.n_values) or self.r_max < 2:
            raise ValueError(f"need 2 <= r_max <= min(n), got r_max={self.r_max}")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        if self.fmt not in ("csv", "jsonl"):
            raise ValueError(f"format must be csv or jsonl, got {self.fmt!r}")
        if self.mode == "trajectory":
            if not self.time_grid:
                raise ValueError("trajectory mode needs a time grid")
            if self.time_grid[0] < 0 or any(b <= a for a, b in zip(self.time_grid, self.time_grid[1:])):
                raise ValueError("time grid must be non-negative and strictly increasing")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @property
    def lambda_measure(self) -> LambdaMeasure:
        return parse_measure(self.measure)


@dataclass
class ReplicaResult:
    """Raw output of one replica.

    ``values`` maps ``r`` to ``xi_r / n`` in totals mode and to the list of
    ``X_r`` over the time grid in trajectory mode (``r = 0`` is ``X_0``).
    """

    n: int
    replica: int
    seed: int
    values: dict[int, object] | None
    events: int = 0
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _run_one(job) -> ReplicaResult:
    mode, spec, n, r_max, seed, replica, grid = job
    measure = parse_measure(spec)
    try:
        if mode == "totals":
            res = run_totals(n, measure, r_max, seed, replica)
            values = {r: res.xi[r] / n for r in range(2, r_max + 1)}
            return ReplicaResult(n, replica, seed, values, res.events)
        traj = run_trajectory(n, measure, r_max, grid, seed, replica)
        values = {r: traj.X[:, r].tolist() for r in range(r_max + 1)}
        return ReplicaResult(n, replica, seed, values)
    except Exception as exc:  # recorded, not raised: one bad replica must not sink the ensemble
        return ReplicaResult(n, replica, seed, None, error=f"{type(exc).__name__}: {exc}")


def _jobs(config: ExperimentConfig):
    mode = "trajectory" if config.mode == "trajectory" else "totals"
    for n in config.n_values:
        for j in range(config.replicas):
            yield (mode, config.measure, n, config.r_max, config.master_seed, j, config.time_grid)


def _map(fn, jobs, workers):
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (8 * workers))))


def run_ensemble(config: ExperimentConfig) -> list[ReplicaResult]:
    """Run every replica of every ``n``; replica ``j`` uses stream
    ``(master_seed, j)``.  Results come back sorted by ``(n, replica)``."""
    if config.mode == "variance_scaling":
        raise ValueError("use variance_scaling_probe for the variance mode")
    results = _map(_run_one, _jobs(config), config.workers)
    return sorted(results, key=lambda res: (res.n, res.replica))


@dataclass
class AggregateRow:
    n: int
    r: int
    t: float | None
    mean: float
    sd: float
    ci_low: float
    ci_high: float
    count: int
    target: float | None
    deviation: float | None
    degenerate: bool = False
    failures: int = 0


@dataclass
class AggregateResult:
    rows: list[AggregateRow]

    def row(self, n: int, r: int, t: float | None = None) -> AggregateRow:
        for row in self.rows:
            if row.n == n and row.r == r and row.t == t:
                return row
        raise KeyError((n, r, t))

    def as_dicts(self) -> list[dict]:
        return [asdict(row) for row in self.rows]


def summarize(values) -> tuple[float, float, float, float, bool]:
    """Mean, sample sd and the normal 95% interval ``mean +- 1.96 sd/sqrt(m)``.

    One value gives ``sd = 0`` and a degenerate interval at the mean.
    """
    xs = np.asarray(values, dtype=float)
    if xs.size == 0:
        raise ValueError("cannot summarize an empty sample")
    mean = math.fsum(xs) / xs.size
    if xs.size == 1:
        return mean, 0.0, mean, mean, True
    sd = float(np.std(xs, ddof=1))
    half = Z95 * sd / math.sqrt(xs.size)
    return mean, sd, mean - half, mean + half, False


def theory_target(measure: LambdaMeasure, r: int, t: float | None = None) -> float | None:
    """``limit_constant`` for totals (r >= 2); ``x_r(t)`` for trajectories."""
    if t is None:
        return limit_constant(measure.alpha, r) if r >= 2 else None
    return x_r(measure.alpha, r, t)


def aggregate(results, measure: LambdaMeasure | None = None, time_grid=None) -> AggregateResult:
    """Fold raw results into per-(n, r[, t]) summaries.

    Results are merged in sorted replica order, so the table does not depend
    on completion order.  With ``measure`` given, theory targets and
    absolute deviations are attached.
    """
    results = sorted(results, key=lambda res: (res.n, res.replica))
    if not results:
        raise ValueError("no results to aggregate")
    rows = []
    for n in sorted({res.n for res in results}):
        group = [res for res in results if res.n == n]
        ok = [res for res in group if not res.failed]
        failures = len(group) - len(ok)
        if not ok:
            raise ValueError(f"every replica failed at n={n}")
        keys = sorted(ok[0].values)
        trajectory = isinstance(ok[0].values[keys[0]], list)
        for r in keys:
            if trajectory:
                grid = time_grid if time_grid is not None else range(len(ok[0].values[r]))
                for i, t in enumerate(grid):
                    rows.append(_row(n, r, float(t), [res.values[r][i] for res in ok], measure, failures))
            else:
                rows.append(_row(n, r, None, [res.values[r] for res in ok], measure, failures))
    return AggregateResult(rows)


def _row(n, r, t, values, measure, failures) -> AggregateRow:
    mean, sd, lo, hi, degenerate = summarize(values)
    target = theory_target(measure, r, t) if measure is not None else None
    deviation = abs(mean - target) if target is not None else None
    return AggregateRow(n, r, t, mean, sd, lo, hi, len(values), target, deviation, degenerate, failures)


@dataclass
class VarianceProbe:
    """Replica variance of ``X_0(t0 + dt) - X_0(t0)`` at each n, and its
    least-squares log-log slope against n."""

    alpha: float
    n_grid: list[int]
    replicas: int
    t0: float
    dt: float
    variances: list[float]
    slope: float
    slope_se: float
    slope_se_robust: float
    intercept: float

    @property
    def reference_exponents(self) -> dict[str, float]:
        # alpha - 3 is the target stated for this check; 1 - alpha is the order of
        # the infinitesimal variance itself; 2/alpha - 2 fits finite-window increments.
        a = self.alpha
        return {"alpha-3": a - 3.0, "1-alpha": 1.0 - a, "2/alpha-2": 2.0 / a - 2.0}


def _increment_job(job):
    spec, n, seed, replica, grid = job
    traj = run_trajectory(n, parse_measure(spec), 2, grid, seed, replica)
    return traj.X[1, 0] - traj.X[0, 0]


def variance_scaling_probe(
    measure: LambdaMeasure,
    n_grid,
    seed: int,
    replicas: int = 100,
    t0: float = 0.5,
    dt: float = 0.1,
    workers: int = 1,
) -> VarianceProbe:
    """Fit ``log Var(X_0(t0+dt) - X_0(t0))`` against ``log n``.

    The slope's standard error propagates the sampling error of each
    log-variance through the least-squares weights: ``slope_se`` uses the
    normal-theory value ``2/(m-1)`` per point, ``slope_se_robust`` the
    kurtosis-corrected one.  Increments here are heavy-tailed, so the
    robust value is larger and itself noisy.
    """
    if measure.is_kingman or not 1.0 < measure.alpha < 2.0:
        raise ValueError("the variance probe needs alpha in (1, 2)")
    ns = sorted(int(n) for n in n_grid)
    if len(ns) < 2 or len(set(ns)) != len(ns) or math.log10(ns[-1] / ns[0]) < 2.0 - 1e-12:
        raise ValueError("n grid must hold distinct values spanning at least two decades")
    if replicas < 4:
        raise ValueError("need at least 4 replicas per n")
    if t0 < 0 or dt <= 0:
        raise ValueError("need t0 >= 0 and dt > 0")
    grid = [t0, t0 + dt]
    spec = measure.spec()
    jobs = [(spec, n, seed, j, grid) for n in ns for j in range(replicas)]
    increments = np.array(_map(_increment_job, jobs, workers)).reshape(len(ns), replicas)
    variances = increments.var(axis=1, ddof=1)
    if np.any(variances <= 0):
        raise ValueError("zero increment variance; widen the window")
    x = np.log(np.array(ns, dtype=float))
    y = np.log(variances)
    xc = x - x.mean()
    weights = xc / np.dot(xc, xc)
    slope = float(np.dot(weights, y))
    intercept = float(y.mean() - slope * x.mean())
    m = replicas
    slope_se = float(math.sqrt(np.dot(weights**2, np.full(len(ns), 2.0 / (m - 1)))))
    centred = increments - increments.mean(axis=1, keepdims=True)
    kurt = (centred**4).mean(axis=1) / (centred**2).mean(axis=1) ** 2
    var_log = np.maximum(kurt - (m - 3.0) / (m - 1.0), 0.0) / m
    robust = float(math.sqrt(np.dot(weights**2, var_log)))
    return VarianceProbe(measure.alpha, ns, replicas, t0, dt, variances.tolist(), slope, slope_se, robust, intercept)


def output_header(config: dict) -> dict:
    """Header carrying the tool version plus the resolved config."""
    return {"tool": "caterpillars", "version": __version__, **config}


def write_table(rows, columns, fh, fmt: str = "csv", header: dict | None = None) -> None:
    """Write ``rows`` (dicts) as CSV with ``#`` header lines, or as JSON lines
    with a leading ``{"header": ...}`` object."""
    header = header or {}
    if fmt == "csv":
        for key, value in header.items():
            fh.write(f"# {key}={json.dumps(value) if not isinstance(value, str) else value}\n")
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({col: _fmt(row.get(col)) for col in columns})
    elif fmt == "jsonl":
        fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps({col: row.get(col) for col in columns}) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else value


def read_csv_table(path) -> tuple[dict, list[dict]]:
    """Inverse of the CSV branch of :func:`write_table` (values stay strings)."""
    header = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            header[key] = value
        else:
            body.append(line)
    return header, list(csv.DictReader(body))


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)
