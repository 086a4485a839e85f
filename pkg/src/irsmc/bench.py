"""Monte Carlo benchmark harness.

Each experiment repeats ``runs`` independent Monte Carlo runs; run ``p``
draws all of its randomness from ``rng_stream(seed, p)``, so results do not
depend on scheduling and can be computed in worker processes.

Budget rule for the sequential benchmarks: with ``budget_matched`` the
classical filter uses ``N = (M**2 + M) / 2`` particles, which costs
``2N = M**2 + M`` sampling operations per step, the same as independent
resampling with ``M`` survivors out of ``M`` trajectories.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Optional

import numpy as np

from . import static as st
from .filters import run_filter
from .models import ArchModel, highdim_model, kalman_filter, simulate, static_gaussian_target, tracking_model
from .sampling import rng_stream

__all__ = [
    "ConfigError",
    "ShapeMismatch",
    "ExperimentConfig",
    "BenchReport",
    "CSV_HEADER",
    "METRICS",
    "rmse",
    "budget_matched_n",
    "load_config",
    "run_bench",
    "run_static_bench",
    "run_arch_bench",
    "run_tracking_bench",
    "run_highdim_bench",
]

CSV_HEADER = ("model", "algo", "N", "M", "run", "metric", "value")
METRICS = ("rmse_time_avg", "ess_norm_mean", "degenerate_steps", "sampling_ops", "wall_ms")
SCHEMA = 1


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class ShapeMismatch(ValueError):
    """Estimates and truths have different shapes."""


MODELS = {
    "static": dict(
        algorithms=("sir", "sir_w", "is", "isir", "sir2", "isir_w"),
        sizes=(20, 40, 60, 80, 100),
        params=dict(sigma_x2=10.0, sigma_y2=3.0),
    ),
    "arch": dict(
        algorithms=("fa", "apf", "isir", "isir_w"),
        sizes=(5, 10, 15, 25, 50),
        params=dict(beta0=3.0, beta1=0.75, R=1.0),
    ),
    "tracking": dict(
        algorithms=("sis", "isir", "isir_w"),
        sizes=(10, 20, 30, 40, 50),
        params=dict(sigma_q2=10.0, sigma_rho=0.25, sigma_theta=float(np.pi / 720)),
    ),
    "highdim": dict(
        algorithms=("sis", "isir", "isir_w", "kalman"),
        sizes=(100, 1000),
        params=dict(sigma_q2=25.0, sigma_x2=4.0, sigma_y2=4.0),
    ),
}

# estimator name -> filter kind producing it
_FILTER_OF = {
    "sis": "sir", "sir": "sir", "isir": "independent", "isir_w": "independent",
    "apf": "apf", "fa": "fa_apf",
}
_STATIC_ALGOS = ("is", "sir", "sir_w", "isir", "sir2", "isir_w")


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark campaign.

    ``sizes`` are final particle counts ``M`` (``N`` for the static bench).
    ``dims`` is the state-dimension sweep of the high-dimensional bench.
    """

    model: str
    algorithms: tuple = ()
    sizes: tuple = ()
    budget_matched: bool = True
    runs: int = 1000
    horizon: int = 50
    seed: int = 0
    params: dict = field(default_factory=dict)
    dims: tuple = (4, 8, 16, 32)
    out: Optional[str] = None
    format: str = "csv"
    timing: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        spec = MODELS[self.model]
        object.__setattr__(self, "algorithms", tuple(self.algorithms or spec["algorithms"]))
        object.__setattr__(self, "sizes", tuple(int(s) for s in (self.sizes or spec["sizes"])))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        params = dict(spec["params"])
        for key, value in self.params.items():
            if key not in params:
                raise ConfigError(f"unknown parameter {key!r} for model {self.model!r}")
            params[key] = float(value)
        object.__setattr__(self, "params", params)
        valid = _STATIC_ALGOS if self.model == "static" else tuple(_FILTER_OF) + ("kalman",)
        for a in self.algorithms:
            if a not in valid:
                raise ConfigError(f"unknown algorithm {a!r} for model {self.model!r}")
        if self.runs < 1 or self.horizon < 1 or min(self.sizes) < 1:
            raise ConfigError("runs, horizon and sizes must be positive")
        if self.model == "highdim" and any(d % 4 or d < 4 for d in self.dims):
            raise ConfigError("dims must be positive multiples of 4")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def config_hash(self) -> str:
        """Hash of everything that determines the numbers (not paths/format)."""
        d = asdict(self)
        for k in ("out", "format", "workers", "timing"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def budget_matched_n(m: int) -> int:
    """Particles of a classical filter with the sampling cost of ``M`` independent survivors."""
    return (m * m + m) // 2


_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def load_config(path: str, **overrides) -> ExperimentConfig:
    """Read a flat ``key = value`` config file (``#`` comments allowed).

    Recognized keys: ``schema`` (must be 1), ``model``, ``algorithms``,
    ``sizes``, ``dims`` (comma lists), ``budget_matched``, ``runs``,
    ``horizon``, ``seed``, ``out``, ``format``, ``timing``, ``workers``.
    Any other key is a model parameter.  Keyword overrides win over the file.
    """
    raw = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    if raw.pop("schema", None) != str(SCHEMA):
        raise ConfigError(f"config must declare schema={SCHEMA}")
    kwargs: dict = {"params": {}}
    try:
        for key, value in raw.items():
            if key in ("algorithms",):
                kwargs[key] = tuple(v.strip() for v in value.split(",") if v.strip())
            elif key in ("sizes", "dims"):
                kwargs[key] = tuple(int(v) for v in value.split(",") if v.strip())
            elif key in ("runs", "horizon", "seed", "workers"):
                kwargs[key] = int(value)
            elif key in ("budget_matched", "timing"):
                kwargs[key] = _BOOL[value.lower()]
            elif key in ("model", "out", "format"):
                kwargs[key] = value
            else:
                kwargs["params"][key] = float(value)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad value in {path}: {exc}") from exc
    params = {**kwargs.pop("params"), **overrides.pop("params", {})}
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    if "model" not in kwargs:
        raise ConfigError("config lacks a model")
    return ExperimentConfig(params=params, **kwargs)


def _sq_errors(estimates, truths) -> np.ndarray:
    estimates = np.asarray(estimates, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if estimates.shape != truths.shape:
        raise ShapeMismatch(f"{estimates.shape} != {truths.shape}")
    d = estimates - truths
    if d.ndim > 2:
        return (d**2).reshape(d.shape[0], d.shape[1], -1).sum(axis=2)
    return d**2


def _rmse_from_sq(sq: np.ndarray) -> float:
    return float(np.mean(np.sqrt(np.mean(sq, axis=0))))


def rmse(estimates, truths) -> float:
    """Time-averaged RMSE over Monte Carlo runs.

    ``estimates`` and ``truths`` have shape ``(P, T)`` or ``(P, T, dim)``;
    returns ``mean_k sqrt(mean_p ||est[p, k] - truth[p, k]||**2)``.
    """
    return _rmse_from_sq(_sq_errors(estimates, truths))


@dataclass
class _Cell:
    """Per-run results of one (algorithm, N, M) cell."""

    sq_err: np.ndarray
    ess: float = float("nan")
    degenerate: int = 0
    ops: int = 0
    wall_ms: float = 0.0


@dataclass
class BenchReport:
    """Rows ``(model, algo, N, M, run, metric, value)`` plus raw per-run errors.

    The ``model`` field is ``<label>@<config hash>`` so every row identifies
    the configuration that produced it.  ``run`` is the Monte Carlo run index
    for per-run rows and ``all`` for aggregates.
    """

    config: ExperimentConfig
    rows: list = field(default_factory=list)
    sq_errors: dict = field(default_factory=dict)

    def add(self, label, algo, n, m, run, metric, value):
        self.rows.append((f"{label}@{self.config.config_hash}", algo, int(n), int(m), run, metric, value))

    def metric(self, algo: str, m: int, metric: str = "rmse_time_avg", label: Optional[str] = None):
        """Aggregate value of ``metric`` for ``algo`` at final size ``m``."""
        for row in self.rows:
            if (row[1] == algo and row[3] == m and row[4] == "all" and row[5] == metric
                    and (label is None or row[0].split("@")[0] == label)):
                return row[6]
        raise KeyError((algo, m, metric, label))

    def rmse_samples(self, algo: str, m: int, label: Optional[str] = None) -> np.ndarray:
        """Per-run time-averaged errors ``mean_k ||est - truth||``."""
        return np.array([
            row[6] for row in self.rows
            if row[1] == algo and row[3] == m and row[4] != "all" and row[5] == "rmse_time_avg"
            and (label is None or row[0].split("@")[0] == label)
        ])

    @staticmethod
    def _fmt(v) -> str:
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return repr(float(v))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([*r[:6], self._fmt(r[6])])
        return buf.getvalue()

    def to_json(self) -> str:
        out = {
            "config_hash": self.config.config_hash,
            "columns": list(CSV_HEADER),
            "rows": [dict(zip(CSV_HEADER, r)) | {"config_hash": self.config.config_hash}
                     for r in self.rows],
        }
        return json.dumps(out, indent=1, default=float)

    def write(self, path: Optional[str] = None, fmt: Optional[str] = None) -> str:
        text = self.to_json() if (fmt or self.config.format) == "json" else self.to_csv()
        if path:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _collect(cfg: ExperimentConfig, label: str, per_run: list, report: BenchReport):
    """Fold per-run cell dicts (in run order) into report rows."""
    keys = list(per_run[0].keys())
    for key in keys:
        algo, n, m = key
        cells = [r[key] for r in per_run]
        sq = np.stack([c.sq_err for c in cells])
        report.sq_errors[(label, algo, m)] = sq
        for p, c in enumerate(cells):
            report.add(label, algo, n, m, p, "rmse_time_avg", float(np.mean(np.sqrt(c.sq_err))))
        report.add(label, algo, n, m, "all", "rmse_time_avg", _rmse_from_sq(sq))
        ess = [c.ess for c in cells]
        if not np.all(np.isnan(ess)):
            report.add(label, algo, n, m, "all", "ess_norm_mean", float(np.nanmean(ess)))
        report.add(label, algo, n, m, "all", "degenerate_steps", int(sum(c.degenerate for c in cells)))
        report.add(label, algo, n, m, "all", "sampling_ops", int(cells[0].ops))
        if cfg.timing:
            report.add(label, algo, n, m, "all", "wall_ms", float(sum(c.wall_ms for c in cells)))


def _map_runs(cfg: ExperimentConfig, fn) -> list:
    if cfg.workers == 1:
        return [fn(p) for p in range(cfg.runs)]
    with ProcessPoolExecutor(cfg.workers) as ex:
        return list(ex.map(fn, range(cfg.runs), chunksize=max(1, cfg.runs // (4 * cfg.workers))))


# -- static ------------------------------------------------------------------

def static_draw(cfg: ExperimentConfig, p: int) -> tuple:
    """The ``(x, y)`` pair of static run ``p``, drawn from the joint model."""
    rng = rng_stream(cfg.seed, p)
    x = np.sqrt(cfg.params["sigma_x2"]) * rng.standard_normal()
    y = x + np.sqrt(cfg.params["sigma_y2"]) * rng.standard_normal()
    return x, y


def _static_run(cfg: ExperimentConfig, p: int) -> dict:
    sx2, sy2 = cfg.params["sigma_x2"], cfg.params["sigma_y2"]
    x, y = static_draw(cfg, p)
    t = static_gaussian_target(sx2, sy2, y)
    out = {}
    for si, n in enumerate(cfg.sizes):
        rng = rng_stream(cfg.seed, p, si + 1)
        rows = None
        for algo in _STATIC_ALGOS:
            if algo not in cfg.algorithms:
                continue
            t0 = time.perf_counter()
            if algo == "is":
                e = st.estimate_is(t, n, rng)
            elif algo == "sir":
                e = st.estimate_sir(t, n, n, rng)
            elif algo == "sir_w":
                e = st.estimate_sir_w(t, n, n, rng)
            elif algo == "sir2":
                e = st.estimate_sir(t, n * n, n, rng, kind=st.EstimatorKind.SIR_2)
            else:
                if rows is None:
                    rows = st.sample_independent_sir(t, n, n, rng)
                e = st.estimate_isir(rows, t.f) if algo == "isir" else st.estimate_isir_w(rows, t)
            wall = 1e3 * (time.perf_counter() - t0)
            out[(algo, e.n_intermediate, e.n_final)] = _Cell(
                np.array([(e.value[0] - x) ** 2]), ops=e.sampling_ops, wall_ms=wall
            )
    return out


def run_static_bench(cfg: ExperimentConfig) -> BenchReport:
    """Static Gaussian experiment: per run draw ``(x, y)``, estimate ``E(X|y)``."""
    report = BenchReport(cfg)
    _collect(cfg, "static", _map_runs(cfg, partial(_static_run, cfg)), report)
    return report


# -- sequential ----------------------------------------------------------------

def _filter_cells(model, traj, algos, m, n_classical, seed, stream) -> dict:
    """Run the filters needed for ``algos`` on one trajectory."""
    out = {}
    truth = traj.states[1:]
    kinds = []
    for a in algos:
        if a != "kalman" and _FILTER_OF[a] not in kinds:
            kinds.append(_FILTER_OF[a])
    for ki, kind in enumerate(kinds):
        n = n_classical if kind == "sir" else m
        rng = rng_stream(seed, *stream, ki)
        t0 = time.perf_counter()
        res = run_filter(model, traj.observations, kind, n, rng)
        wall = 1e3 * (time.perf_counter() - t0)
        for a in algos:
            if a == "kalman" or _FILTER_OF[a] != kind:
                continue
            est = res.estimates[a][1:]
            weighted = a in ("sis", "isir_w", "apf", "fa")
            ess = float(res.ess_norm[1:].mean()) if weighted else float("nan")
            out[(a, n, m)] = _Cell(
                ((est - truth) ** 2).sum(axis=1), ess, res.degenerate_steps, res.sampling_ops, wall
            )
    if "kalman" in algos:
        means, _ = kalman_filter(model, traj.observations)
        out[("kalman", 0, 0)] = _Cell(((means[1:] - truth) ** 2).sum(axis=1))
    return out


def _sequential_run(cfg: ExperimentConfig, model, p: int, stream=()) -> dict:
    traj = simulate(model, cfg.horizon, rng_stream(cfg.seed, *stream, p))
    out = {}
    for si, m in enumerate(cfg.sizes):
        n_classical = budget_matched_n(m) if cfg.budget_matched else m
        cells = _filter_cells(model, traj, cfg.algorithms, m, n_classical, cfg.seed, (*stream, p, si + 1))
        if ("kalman", 0, 0) in cells and si > 0:
            cells.pop(("kalman", 0, 0))
        out.update(cells)
    return out


def _arch_model(cfg):
    return ArchModel(**cfg.params)


def run_arch_bench(cfg: ExperimentConfig) -> BenchReport:
    """ARCH model: FA-APF, APF, I-SIR and I-SIR-w at equal particle numbers.

    The ``ess_norm_mean`` of ``isir_w`` is the time-averaged normalized ESS of
    the second-stage weights.
    """
    report = BenchReport(cfg)
    model = _arch_model(cfg)
    _collect(cfg, "arch", _map_runs(cfg, partial(_sequential_run, cfg, model)), report)
    return report


def run_tracking_bench(cfg: ExperimentConfig) -> BenchReport:
    """Range-bearing tracking, classical SIS at ``N = (M**2+M)/2`` vs independent resampling."""
    report = BenchReport(cfg)
    model = tracking_model(**cfg.params)
    _collect(cfg, "tracking", _map_runs(cfg, partial(_sequential_run, cfg, model)), report)
    return report


def run_highdim_bench(cfg: ExperimentConfig) -> BenchReport:
    """Block linear-Gaussian model swept over state dimension, with the Kalman filter."""
    report = BenchReport(cfg)
    for di, dim in enumerate(cfg.dims):
        model = highdim_model(dim // 4, **cfg.params)
        per_run = _map_runs(cfg, partial(_sequential_run, cfg, model, stream=(10_000 + di,)))
        _collect(cfg, f"highdim_m{dim}", per_run, report)
    return report


RUNNERS = {
    "static": run_static_bench,
    "arch": run_arch_bench,
    "tracking": run_tracking_bench,
    "highdim": run_highdim_bench,
}


def run_bench(cfg: ExperimentConfig) -> BenchReport:
    return RUNNERS[cfg.model](cfg)
