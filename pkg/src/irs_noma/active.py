"""Active beamforming for a fixed reflection vector.

Each iteration solves a convex program in ``(W1, W2, W_AN, tau, gamma_t, nu)``
that minimizes total power under QoS, the AGM/Taylor/Schur restriction of
the SIC condition, the S-procedure secrecy LMIs, and the sequential
rank-one (SROCR) trace-ratio constraints. Once a ratio reaches one the
matrix is parameterized as ``c e e^H`` directly, which is the exact
solution set of ``e^H W e >= Tr(W), W >= 0``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic
from .channel import effective_channels
from .rates import BeamformerSolution, principal_beam, rank_ratio
from .robustify import build_w_prime, gamma, reduced_nominal_lmi, reduced_sprocedure_lmi

log = logging.getLogger(__name__)

SIGNALS = (1, 2, "AN")


@dataclass
class ActiveParams:
    R_Q: float = 1.0
    R_M: float = 0.5
    delta: float = 0.1
    eps0: float = 0.1
    max_iters: int = 30
    rank_tol: float = 1e-3
    equal_power: bool = False
    solver_tol: float = 1e-8
    min_eps: float = 1e-6

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0 < self.rank_tol < 1:
            raise ValueError("rank_tol must lie in (0, 1)")


@dataclass
class SrocrState:
    ratios: list
    eigvecs: list
    eps_step: float
    iter: int = 0

    @classmethod
    def initial(cls, n, eps0, k=2):
        e = np.zeros(n, dtype=complex)
        e[0] = 1.0
        return cls([0.0] * k, [e.copy() for _ in range(k)], eps0)


@dataclass
class AgmTaylorState:
    varpi: float
    nu_tilde: float
    gamma_t_prev: float


# -- constraint families --------------------------------------------------
# Constraints are tuples: ("nonneg", e) for e >= 0, ("eq", e) for e == 0,
# ("soc", t, x) for ||x|| <= t and ("psd", M) for M >= 0.

def add_constraints(prob, cons):
    for c in cons:
        kind = c[0]
        if kind == "nonneg":
            prob.add_nonneg(c[1])
        elif kind == "eq":
            prob.add_eq(c[1])
        elif kind == "soc":
            prob.add_soc(c[1], conic.stack(c[2]))
        elif kind == "psd":
            prob.add_psd(c[1])
        else:
            raise ValueError(kind)


def channel_gain(h, W):
    """``h^H W h`` = ``Tr(h h^H W)`` for a constant or affine ``W``."""
    g = h.conj() @ W @ h
    return g.real if isinstance(g, conic.Affine) else float(np.real(g))


def active_gains(h1, h2, W):
    """``g[(rho, i)] = h_i^H W_rho h_i`` for every signal and user."""
    return {(rho, i): channel_gain(h, W[rho]) for rho in SIGNALS for i, h in ((1, h1), (2, h2))}


def qos_from_gains(g, gamma_q, slack=0.0, noise=1.0):
    return [
        ("nonneg", g[1, 1] - gamma_q * (g["AN", 1] + noise) - slack),
        ("nonneg", g[2, 2] - gamma_q * (g["AN", 2] + g[1, 2] + noise) - slack),
    ]


def qos_constraints(h1, h2, W1, W2, W_AN, R_Q):
    """QoS at both users, each returned as an expression that must be >= 0."""
    return qos_from_gains(active_gains(h1, h2, {1: W1, 2: W2, "AN": W_AN}), gamma(R_Q))


def agm_bound(a, gamma_t, varpi):
    """Right-hand side ``(a varpi)^2 + (gamma_t / varpi)^2`` of the AGM restriction."""
    return (a * varpi) ** 2 + (gamma_t / varpi) ** 2


def taylor_bound(nu, nu_tilde):
    """First-order lower bound ``2 nu_tilde nu - nu_tilde^2`` of ``nu^2``."""
    return 2 * nu_tilde * nu - nu_tilde ** 2


def schur_block(b, nu, gamma_t):
    """``[[b, nu], [nu, gamma_t]]``; PSD iff ``nu**2 <= b gamma_t`` with ``b, gamma_t >= 0``."""
    if any(isinstance(x, conic.Affine) for x in (b, nu, gamma_t)):
        return conic.bmat([[b, nu], [nu, gamma_t]])
    return np.array([[b, nu], [nu, gamma_t]], dtype=float)


def sic_from_gains(g, gamma_t, nu, state, noise=1.0):
    """Convex restriction of ``R_{1,2} >= R_{2,2}`` through ``gamma_t`` and ``nu``.

    ``2 g21 >= (a varpi)^2 + (gamma_t/varpi)^2`` is emitted as the cone
    ``||(2 a varpi, 2 gamma_t/varpi, z - 1)|| <= z + 1`` with ``z = 2 g21``.
    """
    a = g["AN", 1] + g[1, 1] + noise
    b = g["AN", 2] + g[1, 2] + noise
    w = state.varpi
    z = 2 * g[2, 1]
    return [
        ("soc", z + 1, [2 * w * a, 2 * gamma_t / w, z - 1]),
        ("nonneg", taylor_bound(nu, state.nu_tilde) - g[2, 2]),
        ("psd", schur_block(b, nu, gamma_t)),
    ]


def sic_constraints(h1, h2, W1, W2, W_AN, gamma_t, nu, state):
    return sic_from_gains(active_gains(h1, h2, {1: W1, 2: W2, "AN": W_AN}), gamma_t, nu, state)


def sic_fixed_gamma(g, gamma_t):
    """SIC with ``gamma_t`` held constant: both halves become linear."""
    return [
        ("nonneg", g[2, 1] - gamma_t * (g["AN", 1] + g[1, 1] + 1)),
        ("nonneg", gamma_t * (g["AN", 2] + g[1, 2] + 1) - g[2, 2]),
    ]


def sro_linear_constraint(W, eigvec, ratio):
    """``e^H W e - ratio * Tr(W)`` (must be >= 0)."""
    return channel_gain(eigvec, W) - ratio * (W.trace().real if isinstance(W, conic.Affine)
                                              else float(np.trace(W).real))


def srocr_variable(prob, name, n, eigvec, ratio):
    """PSD matrix variable carrying the trace-ratio constraint."""
    if ratio >= 1:
        c = prob.real(name + "_scale")
        prob.add_nonneg(c)
        e = eigvec / np.linalg.norm(eigvec)
        return c * np.outer(e, e.conj())
    W = prob.hermitian(name, n)
    prob.add_psd(W)
    if ratio > 0:
        prob.add_nonneg(sro_linear_constraint(W, eigvec, ratio))
    return W


def next_ratio(r, eps, rank_tol):
    """Trace-ratio target after an iterate with ratio ``r``.

    The step is ``eps`` but never more than a quarter of the remaining gap,
    so the principal direction keeps adapting. The exact rank-one target 1
    is issued only once ``r`` is within ``rank_tol`` of it.
    """
    if r >= 1 - rank_tol:
        return 1.0
    return min(r + eps, 1 - 0.25 * (1 - r))


def update_agm_taylor(g, gamma_t, nu, floor=1e-9):
    """AGM weight at its equality point and Taylor point at the solved ``nu``."""
    gamma_t = max(float(gamma_t), floor)
    a = float(g["AN", 1] + g[1, 1] + 1)
    return AgmTaylorState(varpi=float(np.sqrt(gamma_t / a)), nu_tilde=max(float(nu), floor),
                          gamma_t_prev=gamma_t)


def agm_from_solution(g, floor=1e-9):
    """State whose SIC restriction is satisfied by the point that produced ``g``.

    ``gamma_t`` is U2's SINR for ``s2`` and ``nu = sqrt(b gamma_t)``, so the
    Taylor and Schur constraints hold with equality.
    """
    b = float(g["AN", 2] + g[1, 2] + 1)
    gamma_t = max(float(g[2, 2]) / b, floor)
    return update_agm_taylor(g, gamma_t, np.sqrt(b * gamma_t), floor)


# -- one convex program ---------------------------------------------------

@dataclass
class IcpResult:
    status: str
    W1: np.ndarray | None = None
    W2: np.ndarray | None = None
    W_AN: np.ndarray | None = None
    tau1: float = 0.0
    tau2: float = 0.0
    gamma_t: float = float("nan")
    nu: float = float("nan")
    objective: float = float("nan")
    gains: dict = field(default_factory=dict)
    solve_time: float = 0.0

    @property
    def ok(self):
        return self.status == conic.OPTIMAL

    @property
    def W(self):
        return {1: self.W1, 2: self.W2, "AN": self.W_AN}


def solve_icp(cs, theta, srocr, agm, params, fixed_gamma_t=None):
    """Solve the power-minimization program at reflection ``theta``.

    With ``fixed_gamma_t`` the SIC condition is imposed linearly at that
    value and ``agm`` is ignored.
    """
    N_t, M, N_e = cs.dims
    eff = effective_channels(cs, theta)
    prob = conic.ConicProblem()
    W = {
        1: srocr_variable(prob, "W1", N_t, srocr.eigvecs[0], srocr.ratios[0]),
        2: srocr_variable(prob, "W2", N_t, srocr.eigvecs[1], srocr.ratios[1]),
        "AN": prob.hermitian("W_AN", N_t),
    }
    prob.add_psd(W["AN"])
    g = active_gains(eff.h1, eff.h2, W)
    add_constraints(prob, qos_from_gains(g, gamma(params.R_Q)))
    if fixed_gamma_t is None:
        gamma_t = prob.real("gamma_t")
        nu = prob.real("nu")
        add_constraints(prob, sic_from_gains(g, gamma_t, nu, agm))
    else:
        add_constraints(prob, sic_fixed_gamma(g, fixed_gamma_t))
    X_hat = cs.X_hat
    th = np.asarray(theta)
    for i in (1, 2):
        Wp = build_w_prime(W["AN"], W[i], params.R_M)
        if cs.eps_e > 0:
            tau = prob.real(f"tau{i}")
            prob.add_nonneg(tau)
            prob.add_psd(reduced_sprocedure_lmi(X_hat, th, cs.H_BI, Wp, params.R_M, cs.eps_e, tau))
        else:
            prob.add_psd(reduced_nominal_lmi(X_hat, th, cs.H_BI, Wp, params.R_M))
    tr = {k: W[k].trace().real for k in W}
    if params.equal_power:
        prob.add_eq(tr[1] - tr[2])
    prob.minimize(tr[1] + tr[2] + tr["AN"])
    sol = prob.solve(tol=params.solver_tol)
    res = IcpResult(status=sol.status, solve_time=sol.solve_time)
    if not sol.ok:
        return res
    Wv = {k: _hermitize(W[k].value(sol.raw)) for k in W}
    res.W1, res.W2, res.W_AN = Wv[1], Wv[2], Wv["AN"]
    res.tau1 = sol.values.get("tau1", 0.0)
    res.tau2 = sol.values.get("tau2", 0.0)
    res.gains = active_gains(eff.h1, eff.h2, Wv)
    if fixed_gamma_t is None:
        res.gamma_t, res.nu = sol["gamma_t"], sol["nu"]
    else:
        res.gamma_t = fixed_gamma_t
        res.nu = float(np.sqrt(fixed_gamma_t * (res.gains["AN", 2] + res.gains[1, 2] + 1)))
    res.objective = sol.objective
    return res


def _hermitize(X):
    return 0.5 * (X + X.conj().T)


# -- Algorithm-1 ------------------------------------------------------------

@dataclass
class ActiveResult:
    status: str
    solution: BeamformerSolution | None = None
    icp: IcpResult | None = None
    srocr: SrocrState | None = None
    agm: AgmTaylorState | None = None
    trace: list = field(default_factory=list)
    n_solves: int = 0
    rank_ok: bool = False

    @property
    def ok(self):
        return self.solution is not None

    @property
    def power(self):
        return self.icp.objective if self.icp is not None else float("nan")


def _ratio_and_vec(W):
    if np.trace(W).real <= 1e-12:
        e = np.zeros(W.shape[0], dtype=complex)
        e[0] = 1.0
        return 1.0, e
    lam, vec = np.linalg.eigh(W)
    return float(lam[-1] / np.trace(W).real), vec[:, -1]


def _advance(srocr, icp):
    ratios, vecs = [], []
    for W in (icp.W1, icp.W2):
        r, v = _ratio_and_vec(W)
        ratios.append(r)
        vecs.append(v)
    return ratios, vecs


def run_algorithm1(cs, theta, params, warm=None, fixed_gamma_t=None):
    """SROCR iterations of the active-beamforming program at fixed ``theta``.

    Without ``warm`` the first solve is the rank relaxation with the SIC
    condition linearized at ``fixed_gamma_t`` (default ``2**R_Q - 1``); its
    solution seeds the AGM weight, the Taylor point and the eigenvectors.
    ``warm=(srocr, agm)`` skips that bootstrap and continues from a carried
    state, e.g. the previous outer iteration.
    """
    trace = []
    n_solves = 0
    t_start = time.perf_counter()

    def record(it, icp, ratios, eps, feasible):
        trace.append({"iter": it, "objective": icp.objective if feasible else float("nan"),
                      "w1_ratio": ratios[0], "w2_ratio": ratios[1], "eps_step": eps,
                      "feasible": feasible, "wall_ms": 1e3 * icp.solve_time})

    if warm is None:
        srocr = SrocrState.initial(cs.dims[0], params.eps0)
        g0 = gamma(params.R_Q) if fixed_gamma_t is None else fixed_gamma_t
        icp = solve_icp(cs, theta, srocr, None, params, fixed_gamma_t=g0)
        n_solves += 1
        record(0, icp, srocr.ratios, srocr.eps_step, icp.ok)
        if not icp.ok:
            return ActiveResult(status="infeasible", trace=trace, n_solves=n_solves)
        agm = agm_from_solution(icp.gains)
        last = icp
        r, vecs = _advance(srocr, icp)
        srocr = SrocrState([next_ratio(x, srocr.eps_step, params.rank_tol) for x in r], vecs,
                           srocr.eps_step, 1)
        used_ratios = [0.0, 0.0]
    else:
        srocr, agm = warm
        srocr = replace(srocr, ratios=list(srocr.ratios), eigvecs=list(srocr.eigvecs))
        last = None
        r = list(srocr.ratios)
        used_ratios = None

    status = "max_iters"
    prev_power = last.objective if last is not None else None
    for n in range(1, params.max_iters + 1):
        used = list(srocr.ratios)
        icp = solve_icp(cs, theta, srocr, agm, params)
        n_solves += 1
        record(n, icp, used, srocr.eps_step, icp.ok)
        if icp.ok:
            agm = update_agm_taylor(icp.gains, icp.gamma_t, icp.nu)
            r, vecs = _advance(srocr, icp)
            done = (all(x >= 1 for x in used) and prev_power is not None
                    and abs(icp.objective - prev_power) <= params.delta)
            last, used_ratios, prev_power = icp, used, icp.objective
            srocr = SrocrState([next_ratio(x, srocr.eps_step, params.rank_tol) for x in r], vecs,
                               srocr.eps_step, srocr.iter + 1)
            if done:
                status = "converged"
                break
        else:
            if last is None:
                status = "infeasible"
                break
            if all(x >= 1 for x in used) and all(x >= 1 - 1e-12 for x in r):
                # the carried rank-one point itself failed; nothing left to relax
                status = "stalled"
                break
            eps = 0.5 * srocr.eps_step
            if eps < params.min_eps:
                status = "stalled"
                break
            srocr = SrocrState([next_ratio(x, eps, params.rank_tol) for x in r], srocr.eigvecs, eps,
                               srocr.iter + 1)

    if last is None:
        return ActiveResult(status="infeasible", trace=trace, n_solves=n_solves)
    if status == "max_iters":
        log.debug("Algorithm-1 hit max_iters=%d", params.max_iters)
    ratios = [rank_ratio(last.W1), rank_ratio(last.W2)]
    rank_ok = all(1 - x <= params.rank_tol for x in ratios)
    sol = BeamformerSolution(W1=last.W1, W2=last.W2, W_AN=last.W_AN, theta=np.asarray(theta),
                             tau1=last.tau1, tau2=last.tau2)
    if rank_ok:
        sol.w1, sol.w2 = principal_beam(last.W1), principal_beam(last.W2)
    elapsed = time.perf_counter() - t_start
    log.debug("Algorithm-1 %s after %d solves (%.2fs), P=%.4g", status, n_solves, elapsed,
              last.objective)
    return ActiveResult(status=status, solution=sol, icp=last, srocr=srocr, agm=agm, trace=trace,
                        n_solves=n_solves, rank_ok=rank_ok)
