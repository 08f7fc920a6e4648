"""Monte-Carlo sweeps: config parsing, per-trial solves and CSV output.

Every trial index owns its randomness: the geometry and channels come from
``default_rng([seed, trial])`` and the initial reflection vector from
``default_rng([seed, trial, 1])``. Points in a sweep that share a trial
index therefore see the same draw (up to array sizes), and all schemes
start from the same reflection vector.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
import yaml
from scipy import stats

from .ao import INIT_MODES, SCHEMES, TRACE_COLUMNS, AoConfig, init_theta, run_ao
from .channel import FadingParams, sample_channels, sample_geometry, with_normalized_error
from .passive import PASSIVE_OBJECTIVES
from .rates import check_feasibility

log = logging.getLogger(__name__)

DEFAULT_XI = (0.01, 0.02, 0.05, 0.1)

# nested sections and their allowed keys with defaults
_SECTIONS = {
    "dims": {"nt": None, "m": None, "ne": None},
    "geometry": {"d_BI": 50.0, "r_B": 2.0, "r_I": 2.0},
    "fading": {"alpha_irs": 2.0, "alpha_bs": 4.0, "min_distance": 1.0},
    "oracle": {"samples": 10_000, "ascent_samples": 16, "ascent_steps": 25, "tol": 1e-3},
}
_TOP = {
    "R_Q": 1.0, "R_M": 0.5, "xi_n": list(DEFAULT_XI), "schemes": ["ao"], "trials": 100,
    "seed": 0, "delta": 0.1, "max_outer_iters": 30, "init_theta": "random_phase",
    "solver_tol": 1e-8, "rank_tol": 1e-3, "passive_objective": "power", "cold_restart": True,
    "out": "results", "trace": False, "workers": 1,
}


class ConfigError(ValueError):
    pass


def _as_list(v, key, cast):
    vals = v if isinstance(v, (list, tuple)) else [v]
    if not vals:
        raise ConfigError(f"{key}: sweep list must be non-empty")
    try:
        return [cast(x) for x in vals]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: {e}") from None


@dataclass(frozen=True)
class SweepPoint:
    nt: int
    m: int
    ne: int
    R_Q: float
    R_M: float
    xi_n: float

    @property
    def dims(self):
        return (self.nt, self.m, self.ne)


POINT_KEYS = tuple(f.name for f in fields(SweepPoint))


@dataclass
class ExperimentConfig:
    nt: list
    m: list
    ne: list
    R_Q: list = field(default_factory=lambda: [1.0])
    R_M: list = field(default_factory=lambda: [0.5])
    xi_n: list = field(default_factory=lambda: list(DEFAULT_XI))
    schemes: list = field(default_factory=lambda: ["ao"])
    trials: int = 100
    seed: int = 0
    delta: float = 0.1
    max_outer_iters: int = 30
    init_theta: str = "random_phase"
    solver_tol: float = 1e-8
    rank_tol: float = 1e-3
    passive_objective: str = "power"
    cold_restart: bool = True
    geometry: dict = field(default_factory=lambda: dict(_SECTIONS["geometry"]))
    fading: dict = field(default_factory=lambda: dict(_SECTIONS["fading"]))
    oracle: dict = field(default_factory=lambda: dict(_SECTIONS["oracle"]))
    out: str = "results"
    trace: bool = False
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        for key in ("nt", "m", "ne"):
            if any(v < 1 for v in getattr(self, key)):
                raise ConfigError(f"dims.{key}: must be positive")
        if any(v < 0 for v in self.R_Q):
            raise ConfigError("R_Q: must be nonnegative")
        if any(v < 0 for v in self.R_M):
            raise ConfigError("R_M: must be nonnegative")
        if any(v < 0 for v in self.xi_n):
            raise ConfigError("xi_n: must be nonnegative")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad or not self.schemes:
            raise ConfigError(f"schemes: expected values in {SCHEMES}, got {self.schemes}")
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")
        if self.delta <= 0:
            raise ConfigError("delta: must be positive")
        if self.max_outer_iters < 1:
            raise ConfigError("max_outer_iters: must be >= 1")
        if self.passive_objective not in PASSIVE_OBJECTIVES:
            raise ConfigError(f"passive_objective: expected one of {PASSIVE_OBJECTIVES}")
        if self.init_theta not in INIT_MODES:
            raise ConfigError(f"init_theta: expected one of {INIT_MODES}")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        if self.oracle["samples"] < 0:
            raise ConfigError("oracle.samples: must be nonnegative")

    def points(self):
        return [SweepPoint(*p) for p in itertools.product(self.nt, self.m, self.ne, self.R_Q,
                                                          self.R_M, self.xi_n)]

    def ao_config(self, point, scheme):
        return AoConfig(R_Q=point.R_Q, R_M=point.R_M, delta=self.delta,
                        max_outer_iters=self.max_outer_iters, init_theta_mode=self.init_theta,
                        scheme=scheme, solver_tol=self.solver_tol, rank_tol=self.rank_tol,
                        passive_objective=self.passive_objective, cold_restart=self.cold_restart)


def config_from_dict(data):
    """Validate a parsed mapping and fill defaults. Unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    unknown = set(data) - set(_TOP) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
    if "dims" not in data:
        raise ConfigError("dims: required")
    sec = {}
    for name, allowed in _SECTIONS.items():
        given = data.get(name) or {}
        if not isinstance(given, dict):
            raise ConfigError(f"{name}: must be a mapping")
        extra = set(given) - set(allowed)
        if extra:
            raise ConfigError(f"{name}.{sorted(extra)[0]}: unknown key")
        sec[name] = {**allowed, **given}
    for k in ("nt", "m", "ne"):
        if sec["dims"][k] is None:
            raise ConfigError(f"dims.{k}: required")
    top = {**_TOP, **{k: v for k, v in data.items() if k in _TOP}}
    if isinstance(top["schemes"], str):
        top["schemes"] = [top["schemes"]]
    try:
        kw = dict(
            trials=int(top["trials"]), seed=int(top["seed"]), delta=float(top["delta"]),
            max_outer_iters=int(top["max_outer_iters"]), init_theta=str(top["init_theta"]),
            solver_tol=float(top["solver_tol"]), rank_tol=float(top["rank_tol"]),
            passive_objective=str(top["passive_objective"]), cold_restart=bool(top["cold_restart"]),
            out=str(top["out"]), trace=bool(top["trace"]), workers=int(top["workers"]),
        )
        geometry = {k: float(v) for k, v in sec["geometry"].items()}
        fading = {k: float(v) for k, v in sec["fading"].items()}
        oracle = {k: (float(v) if k == "tol" else int(v)) for k, v in sec["oracle"].items()}
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config: {e}") from None
    return ExperimentConfig(
        nt=_as_list(sec["dims"]["nt"], "dims.nt", int), m=_as_list(sec["dims"]["m"], "dims.m", int),
        ne=_as_list(sec["dims"]["ne"], "dims.ne", int),
        R_Q=_as_list(top["R_Q"], "R_Q", float), R_M=_as_list(top["R_M"], "R_M", float),
        xi_n=_as_list(top["xi_n"], "xi_n", float), schemes=list(top["schemes"]),
        geometry=geometry, fading=fading, oracle=oracle, **kw)


def parse_config(path):
    """Read a YAML experiment file; see :func:`config_from_dict` for the key set."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data if data is not None else {})


# -- trials -------------------------------------------------------------------

def trial_instance(cfg, point, trial):
    """Channel set (with error radii attached) and initial reflection vector."""
    rng = np.random.default_rng([cfg.seed, trial])
    geom = sample_geometry(rng, **cfg.geometry)
    cs = sample_channels(geom, FadingParams(**cfg.fading), point.dims, rng)
    cs = with_normalized_error(cs, point.xi_n)
    theta_rng = np.random.default_rng([cfg.seed, trial, 1])
    ao_cfg = cfg.ao_config(point, "ao")
    return cs, init_theta(ao_cfg, point.m, theta_rng)


RAW_COLUMNS = POINT_KEYS + (
    "scheme", "trial", "feasible", "status", "n_outer", "power", "power_db", "signal_power",
    "an_power", "tr_w1", "tr_w2", "w1_ratio", "w2_ratio", "u_ratio", "u_relaxed_ratio",
    "theta_clip", "r11", "r12", "r22", "re_max", "secrecy_margin", "oracle_ok",
)


def _db(x):
    return 10 * math.log10(x) if x > 0 else float("-inf")


def solve_trial(cfg, point, scheme, trial):
    """Run one scheme on one trial. Returns ``(row, AoResult, ChannelSet)``."""
    cs, theta0 = trial_instance(cfg, point, trial)
    res = run_ao(cs, cfg.ao_config(point, scheme), theta0=theta0)
    row = dict.fromkeys(RAW_COLUMNS, "")
    row.update({k: getattr(point, k) for k in POINT_KEYS})
    row.update(scheme=scheme, trial=trial, feasible=res.ok, status=res.status, n_outer=res.n_outer)
    if res.ok:
        sol = res.solution
        orc = cfg.oracle
        rep = check_feasibility(cs, sol, point.R_Q, point.R_M, tol=orc["tol"],
                                n_samples=orc["samples"], n_ascent_samples=orc["ascent_samples"],
                                n_ascent_steps=orc["ascent_steps"], seed=trial)
        re_max = max(rep.re1_wc, rep.re2_wc)
        row.update(
            power=res.power, power_db=_db(res.power), signal_power=sol.signal_power,
            an_power=sol.an_power, tr_w1=float(np.trace(sol.W1).real),
            tr_w2=float(np.trace(sol.W2).real), w1_ratio=sol.rank_ratio(1),
            w2_ratio=sol.rank_ratio(2), u_ratio=res.u_rank_ratio,
            u_relaxed_ratio=res.relaxed.rank_ratio if res.relaxed else "",
            theta_clip=res.relaxed.clip if res.relaxed else "", r11=rep.r11, r12=rep.r12,
            r22=rep.r22, re_max=re_max, secrecy_margin=point.R_M - re_max, oracle_ok=rep.feasible)
    return row, res, cs


def _job(args):
    cfg, point, scheme, trial = args
    row, res, _ = solve_trial(cfg, point, scheme, trial)
    return row, (res.trace.rows if cfg.trace else None)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def aggregate(rows):
    """Mean and 95% t-interval half-width per (point, scheme) over feasible trials."""
    groups = {}
    for r in rows:
        key = tuple(r[k] for k in POINT_KEYS) + (r["scheme"],)
        groups.setdefault(key, []).append(r)
    out = []
    for key, grp in groups.items():
        ok = [r for r in grp if r["feasible"] in (True, "True")]
        agg = dict(zip(POINT_KEYS + ("scheme",), key))
        agg.update(n_trials=len(grp), n_feasible=len(ok), n_infeasible=len(grp) - len(ok),
                   n_oracle_fail=sum(r["oracle_ok"] in (False, "False") for r in ok))
        for col in AGG_METRICS:
            vals = np.array([float(r[col]) for r in ok])
            agg[f"mean_{col}"], agg[f"ci95_{col}"] = mean_ci(vals)
        out.append(agg)
    return out


def mean_ci(vals, level=0.95):
    vals = np.asarray(vals, dtype=float)
    n = len(vals)
    if n == 0:
        return float("nan"), float("nan")
    mean = float(vals.mean())
    if n < 2:
        return mean, float("nan")
    half = stats.t.ppf(0.5 + level / 2, n - 1) * vals.std(ddof=1) / math.sqrt(n)
    return mean, float(half)


AGG_METRICS = ("power", "power_db", "signal_power", "an_power", "n_outer")
AGG_COLUMNS = POINT_KEYS + ("scheme", "n_trials", "n_feasible", "n_infeasible", "n_oracle_fail") + \
    tuple(f"{p}_{m}" for m in AGG_METRICS for p in ("mean", "ci95"))


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r[c]) for c in columns})


@dataclass
class ExperimentOutput:
    raw_path: str
    aggregate_path: str
    rows: list
    aggregates: list

    @property
    def all_points_feasible(self):
        return all(a["n_feasible"] >= 1 for a in self.aggregates)


def prepare_output(out_dir, trace=False):
    """Create the output directory and confirm it is writable. Raises OSError."""
    os.makedirs(out_dir, exist_ok=True)
    if trace:
        os.makedirs(os.path.join(out_dir, "traces"), exist_ok=True)
    paths = [os.path.join(out_dir, "raw.csv"), os.path.join(out_dir, "aggregate.csv")]
    for p in paths:
        with open(p, "a"):
            pass
    return paths


def run_experiment(cfg):
    """Solve every (point, scheme, trial) and write ``raw.csv`` and ``aggregate.csv``."""
    raw_path, agg_path = prepare_output(cfg.out, cfg.trace)
    jobs = [(cfg, p, s, t) for p in cfg.points() for s in cfg.schemes for t in range(cfg.trials)]
    log.info("running %d trial solves", len(jobs))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    rows = [r for r, _ in results]
    if cfg.trace:
        for (_, p, s, t), (_, trace_rows) in zip(jobs, results):
            name = "_".join(f"{k}{getattr(p, k)}" for k in POINT_KEYS) + f"_{s}_t{t}.csv"
            _write_trace(os.path.join(cfg.out, "traces", name), trace_rows)
    aggs = aggregate(rows)
    _write_csv(raw_path, RAW_COLUMNS, rows)
    _write_csv(agg_path, AGG_COLUMNS, aggs)
    return ExperimentOutput(raw_path, agg_path, rows, aggs)


def _write_trace(path, trace_rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows({c: _fmt(r[c]) for c in TRACE_COLUMNS} for r in trace_rows)
