"""Alternating optimization between the active and passive stages, plus baselines."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .active import ActiveParams, SrocrState, active_gains, agm_from_solution, run_algorithm1
from .channel import effective_channels
from .passive import PassiveParams, lift_channels, lift_matrix, run_passive
from .rates import principal_beam

log = logging.getLogger(__name__)

SCHEMES = ("ao", "random_phase", "epa")
INIT_MODES = ("random_phase", "all_ones")


@dataclass
class AoConfig:
    R_Q: float = 1.0
    R_M: float = 0.5
    delta: float = 0.1
    max_outer_iters: int = 30
    init_theta_mode: str = "random_phase"
    scheme: str = "ao"
    eps0: float = 0.1
    rank_tol: float = 1e-3
    solver_tol: float = 1e-8
    max_inner_iters: int = 30
    passive_objective: str = "power"
    cold_restart: bool = True

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.init_theta_mode not in INIT_MODES:
            raise ValueError(f"init_theta_mode must be one of {INIT_MODES}")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")

    def active_params(self, equal_power=None):
        return ActiveParams(R_Q=self.R_Q, R_M=self.R_M, delta=self.delta, eps0=self.eps0,
                            max_iters=self.max_inner_iters, rank_tol=self.rank_tol,
                            equal_power=self.scheme == "epa" if equal_power is None else equal_power,
                            solver_tol=self.solver_tol)

    def passive_params(self):
        return PassiveParams(R_Q=self.R_Q, R_M=self.R_M, eps0=self.eps0,
                             max_iters=self.max_inner_iters, rank_tol=self.rank_tol,
                             solver_tol=self.solver_tol,
                             objective=self.passive_objective)


def init_theta(config, M, rng=None):
    """Unit-modulus random phases or all ones."""
    if config.init_theta_mode == "all_ones":
        return np.ones(M, dtype=complex)
    rng = np.random.default_rng() if rng is None else rng
    return np.exp(1j * rng.uniform(0.0, 2 * np.pi, M))


TRACE_COLUMNS = ("outer_iter", "stage", "objective", "feasible", "w1_ratio", "w2_ratio",
                 "u_ratio", "n_solves", "wall_ms")


@dataclass
class IterationTrace:
    rows: list = field(default_factory=list)

    def add(self, **row):
        self.rows.append({c: row.get(c, "") for c in TRACE_COLUMNS})

    def powers(self):
        """Objective after each completed outer iteration (active-stage rows)."""
        return [r["objective"] for r in self.rows if r["stage"] == "active"]

    def is_monotone(self, tol):
        p = self.powers()
        return all(b <= a + tol for a, b in zip(p, p[1:]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
            w.writeheader()
            w.writerows(self.rows)


@dataclass
class AoResult:
    status: str
    solution: object = None
    trace: IterationTrace = field(default_factory=IterationTrace)
    theta0: np.ndarray | None = None
    n_outer: int = 0
    u_rank_ratio: float = 1.0
    relaxed: object = None
    active: object = None

    @property
    def ok(self):
        return self.solution is not None

    @property
    def power(self):
        return self.active.power if self.active is not None else float("nan")


def _active_row(trace, k, res, t0):
    ratios = [res.solution.rank_ratio(1), res.solution.rank_ratio(2)] if res.ok else ["", ""]
    trace.add(outer_iter=k, stage="active", objective=res.power if res.ok else float("nan"),
              feasible=res.ok, w1_ratio=ratios[0], w2_ratio=ratios[1], n_solves=res.n_solves,
              wall_ms=1e3 * (time.perf_counter() - t0))


def polish(cs, theta, prev, params, scale=1.0):
    """Rank-one re-solve at ``theta`` seeded by the beams of a previous solution.

    ``scale`` is the factor the passive stage certified: ``prev`` divided
    by it remains feasible at ``theta``, so the result never has more than
    ``prev.power / scale``.
    """
    W = {k: v / scale for k, v in prev.icp.W.items()}
    eff = effective_channels(cs, theta)
    agm = agm_from_solution(active_gains(eff.h1, eff.h2, W))
    vecs = [principal_beam(W[1]), principal_beam(W[2])]
    vecs = [v / max(np.linalg.norm(v), 1e-300) for v in vecs]
    srocr = SrocrState([1.0, 1.0], vecs, params.eps0)
    return run_algorithm1(cs, theta, params, warm=(srocr, agm))


def _finish(result, best, theta, U, relaxed=None):
    sol = best.solution
    sol.theta = np.asarray(theta)
    sol.U = U
    result.solution = sol
    result.active = best
    lam = np.linalg.eigvalsh(U)
    result.u_rank_ratio = float(lam[-1] / np.trace(U).real)
    result.relaxed = relaxed
    return result


def run_ao(cs, config, theta0=None, rng=None):
    """Alternate the passive and active stages until the power gap is at most ``delta``.

    Each outer iteration designs a new reflection vector for the current
    covariance matrices, then re-solves the active stage at that vector both
    from the previous beams and from scratch, keeping the cheaper result.
    """
    M = cs.dims[1]
    theta = init_theta(config, M, rng) if theta0 is None else np.asarray(theta0, dtype=complex)
    ap = config.active_params()
    pp = config.passive_params()
    trace = IterationTrace()
    result = AoResult(status="infeasible", trace=trace, theta0=theta.copy())
    t0 = time.perf_counter()
    best = run_algorithm1(cs, theta, ap)
    _active_row(trace, 0, best, t0)
    if not best.ok:
        return result
    U = lift_matrix(theta)
    if config.scheme == "random_phase":
        result.status = "converged"
        return _finish(result, best, theta, U)
    lc = lift_channels(cs)
    relaxed = None
    status = "max_iters"
    for k in range(1, config.max_outer_iters + 1):
        result.n_outer = k
        t0 = time.perf_counter()
        pas = run_passive(cs, best.icp.W, theta, pp, lc=lc)
        pobj = float("nan")
        if pas.icfp is not None:
            pobj = pas.icfp.scale if pp.objective == "power" else pas.icfp.slack
        trace.add(outer_iter=k, stage="passive", objective=pobj,
                  feasible=pas.ok, u_ratio=pas.extraction.rank_ratio if pas.extraction else "",
                  n_solves=pas.n_solves, wall_ms=1e3 * (time.perf_counter() - t0))
        if not pas.ok:
            status = "passive_failed"
            break
        t0 = time.perf_counter()
        cands = [polish(cs, pas.theta, best, ap, pas.scale)]
        if config.cold_restart:
            cands.append(run_algorithm1(cs, pas.theta, ap))
        cands = [c for c in cands if c.ok]
        if not cands:
            status = "active_failed"
            break
        nxt = min(cands, key=lambda c: c.power)
        nxt.n_solves = sum(c.n_solves for c in cands)
        gap = best.power - nxt.power
        if gap < 0:
            # the new reflection vector does not help; repeating would loop
            _active_row(trace, k, best, t0)
            status = "converged" if -gap <= config.delta else "no_improvement"
            break
        best, theta, U, relaxed = nxt, pas.theta, pas.U, pas.relaxed
        _active_row(trace, k, best, t0)
        if gap <= config.delta:
            status = "converged"
            break
    result.status = status
    log.debug("AO %s after %d outer iterations, P=%.4g", status, result.n_outer, best.power)
    return _finish(result, best, theta, U, relaxed)


def baseline_random_phase(cs, config, theta0=None, rng=None):
    """Active stage only, at the initial reflection vector."""
    return run_ao(cs, replace(config, scheme="random_phase"), theta0, rng)


def baseline_epa(cs, config, theta0=None, rng=None):
    """Full alternation with ``Tr(W1) = Tr(W2)`` imposed in the active stage."""
    return run_ao(cs, replace(config, scheme="epa"), theta0, rng)
