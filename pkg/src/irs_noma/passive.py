"""Passive beamforming: reflection design for fixed covariance matrices.

The reflection vector is lifted to ``U = u u^H`` with ``u = [conj(theta); 1]``
so every received power, the channel-ordering condition and the secrecy
LMIs become affine in ``U``. Rank one is recovered with the same
trace-ratio schedule as the active stage.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .active import (SIGNALS, AgmTaylorState, active_gains, add_constraints, agm_from_solution,
                     next_ratio, qos_from_gains, sic_from_gains)
from .channel import effective_channels
from .robustify import (build_v_affine_in_u, build_w_prime, gamma, reduced_nominal_lmi,
                        reduced_sprocedure_lmi, secrecy_lmi, svd_outer_terms)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LiftedChannels:
    """``h_i^H W h_i = Tr(H_Ui W H_Ui^H U)`` and ``||h_i||^2`` in terms of ``U``."""

    H_U1: np.ndarray
    H_U2: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    J1: np.ndarray
    J2: np.ndarray
    hB1_sq: float

    @property
    def M(self):
        return self.Q1.shape[0]

    def H_U(self, i):
        return self.H_U1 if i == 1 else self.H_U2


def lift_channels(cs):
    N_t, M, _ = cs.dims
    Q1 = cs.h_I1.conj()[:, None] * cs.H_BI
    Q2 = cs.h_I2.conj()[:, None] * cs.H_BI
    H_U1 = np.vstack([Q1, cs.h_B1.conj()[None, :]])
    H_U2 = np.vstack([Q2, np.zeros((1, N_t))])
    J1 = np.zeros((M + 1, M + 1), dtype=complex)
    J1[:M, :M] = Q1 @ Q1.conj().T
    J1[:M, M] = Q1 @ cs.h_B1
    J1[M, :M] = J1[:M, M].conj()
    J2 = np.zeros((M + 1, M + 1), dtype=complex)
    J2[:M, :M] = Q2 @ Q2.conj().T
    return LiftedChannels(H_U1, H_U2, Q1, Q2, J1, J2, float(np.vdot(cs.h_B1, cs.h_B1).real))


def lift_theta(theta):
    """``u = [conj(theta); 1]``."""
    return np.concatenate([np.conj(np.asarray(theta, dtype=complex)), [1.0]])


def lift_matrix(theta):
    u = lift_theta(theta)
    return np.outer(u, u.conj())


def _tr(A, U):
    """``Tr(A U)`` for constant Hermitian ``A`` and constant or affine ``U``."""
    if isinstance(U, conic.Affine):
        return (U * A.T).sum().real
    return float(np.real(np.sum(A.T * U)))


def lifted_gains(lc, W, U):
    """``g[(rho, i)] = Tr(H_Ui W_rho H_Ui^H U)`` for every signal and user."""
    out = {}
    for rho in SIGNALS:
        for i in (1, 2):
            H = lc.H_U(i)
            out[rho, i] = _tr(H @ W[rho] @ H.conj().T, U)
    return out


def lifted_qos_sic_constraints(lc, W1, W2, W_AN, U, gamma_t, nu, state, R_Q, slack=0.0,
                               noise=1.0):
    """QoS and the AGM/Taylor/Schur SIC restriction with ``U`` as the variable."""
    g = lifted_gains(lc, {1: W1, 2: W2, "AN": W_AN}, U)
    return qos_from_gains(g, gamma(R_Q), slack, noise) + sic_from_gains(g, gamma_t, nu, state,
                                                                        noise)


def ordering_constraint(lc, U):
    """``Tr(J1 U) + ||h_B1||^2 - Tr(J2 U)`` (must be >= 0)."""
    return _tr(lc.J1, U) + lc.hB1_sq - _tr(lc.J2, U)


@dataclass
class PassiveParams:
    R_Q: float = 1.0
    R_M: float = 0.5
    eps0: float = 0.1
    max_iters: int = 30
    rank_tol: float = 1e-3
    solver_tol: float = 1e-8
    min_eps: float = 1e-6
    objective: str = "power"
    max_scale: float = 1e6
    local_ratios: tuple = (0.99, 0.999, 0.9999, 1 - 1e-6)
    backtrack: tuple = (0.5, 0.25, 0.125, 0.0625)


@dataclass
class ThetaExtraction:
    theta: np.ndarray
    ok: bool
    rank_ratio: float
    clip: float
    last_row: np.ndarray
    path_gap: float


def extract_theta(U, rank_tol=1e-3):
    """Reflection vector from a (near) rank-one lifted matrix.

    The eigen path takes ``sqrt(lambda_max)`` times the principal
    eigenvector, rotates its phase so the last entry is real positive and
    conjugates the first ``M`` entries. The last-row path reads
    ``U[M, :M]``. Magnitudes above one are clipped; ``clip`` is the largest
    amount removed.
    """
    U = 0.5 * (U + U.conj().T)
    M = U.shape[0] - 1
    lam, vec = np.linalg.eigh(U)
    tr = float(np.trace(U).real)
    ratio = float(lam[-1] / tr) if tr > 0 else 0.0
    u = np.sqrt(max(lam[-1], 0.0)) * vec[:, -1]
    if abs(u[M]) > 0:
        u = u * np.conj(u[M]) / abs(u[M])
    theta = np.conj(u[:M])
    last = U[M, :M].copy()
    mag = np.abs(theta)
    clip = float(max(0.0, (mag - 1).max(initial=0.0)))
    theta = np.where(mag > 1, theta / np.maximum(mag, 1e-300), theta)
    last = np.where(np.abs(last) > 1, last / np.maximum(np.abs(last), 1e-300), last)
    ok = bool(ratio >= 1 - rank_tol and abs(u[M]) > 0)
    return ThetaExtraction(theta, ok, ratio, clip, last, float(np.abs(theta - last).max()))


PASSIVE_OBJECTIVES = ("power", "slack", "feasibility")


@dataclass
class IcfpResult:
    status: str
    U: np.ndarray | None = None
    slack: float = float("nan")
    scale: float = 1.0
    gamma_t: float = float("nan")
    nu: float = float("nan")
    tau1: float = 0.0
    tau2: float = 0.0
    residual: float = float("nan")
    solve_time: float = 0.0

    @property
    def ok(self):
        return self.status == conic.OPTIMAL


def solve_icfp(cs, W, agm, params, u_ratio=0.0, eigvec=None, lc=None):
    """One lifted program in ``U`` with the covariance matrices ``W`` fixed.

    ``u_ratio >= 1`` pins ``U`` to ``eigvec eigvec^H`` scaled so the last
    diagonal entry is one. ``params.objective`` selects what is maximized:

    ``"power"``
        The noise power in every constraint is replaced by a variable
        ``x >= 1``. Since all constraints are homogeneous in ``(W, noise)``,
        ``W / x`` is then feasible at the new reflection vector with the
        true noise, so maximizing ``x`` minimizes the power reachable with
        the current beam shapes.
    ``"slack"``
        A common margin ``t >= 0`` on both QoS constraints.
    ``"feasibility"``
        Nothing; any feasible ``U``.
    """
    if params.objective not in PASSIVE_OBJECTIVES:
        raise ValueError(f"objective must be one of {PASSIVE_OBJECTIVES}")
    lc = lift_channels(cs) if lc is None else lc
    M = lc.M
    prob = conic.ConicProblem()
    if u_ratio >= 1:
        e = eigvec / eigvec[M]
        U = conic.as_affine(np.outer(e, e.conj()))
    else:
        U = prob.hermitian("U", M + 1)
        prob.add_psd(U)
        if u_ratio > 0:
            prob.add_nonneg(_tr(np.outer(eigvec, eigvec.conj()), U) - u_ratio * U.trace().real)
    for m in range(M):
        prob.add_nonneg(1 - U[m, m].real)
    prob.add_eq(U[M, M].real - 1)
    t, x = 0.0, 1.0
    if params.objective == "slack":
        t = prob.real("t")
        prob.add_nonneg(t)
        prob.maximize(t)
    elif params.objective == "power":
        x = prob.real("x")
        prob.add_nonneg(x - 1)
        prob.add_nonneg(params.max_scale - x)
        prob.maximize(x)
    else:
        prob.minimize(0.0 * U[M, M].real)
    gamma_t = prob.real("gamma_t")
    nu = prob.real("nu")
    add_constraints(prob, lifted_qos_sic_constraints(lc, W[1], W[2], W["AN"], U, gamma_t, nu, agm,
                                                     params.R_Q, slack=t, noise=x))
    prob.add_nonneg(ordering_constraint(lc, U))
    for i in (1, 2):
        Wp = build_w_prime(W["AN"], W[i], params.R_M)
        tau = None
        if cs.eps_e > 0:
            tau = prob.real(f"tau{i}")
            prob.add_nonneg(tau)
        if u_ratio >= 1:
            # U is fixed, so the LMI can be restricted to the range of [Theta H; I]
            theta = np.conj(e[:M])
            if tau is None:
                prob.add_psd(reduced_nominal_lmi(cs.X_hat, theta, cs.H_BI, Wp, params.R_M, x))
            else:
                prob.add_psd(reduced_sprocedure_lmi(cs.X_hat, theta, cs.H_BI, Wp, params.R_M,
                                                    cs.eps_e, tau, x))
            continue
        V = build_v_affine_in_u(U, cs.H_BI, Wp, svd_outer_terms(cs.H_BI, Wp))
        prob.add_psd(secrecy_lmi(cs.X_hat, V, params.R_M, cs.eps_e, tau, x))
    sol = prob.solve(tol=params.solver_tol)
    res = IcfpResult(status=sol.status, solve_time=sol.solve_time, residual=sol.residual)
    if not sol.ok:
        return res
    Uv = U.value(sol.raw) if isinstance(U, conic.Affine) and U.terms else U.const
    res.U = 0.5 * (Uv + Uv.conj().T)
    res.slack = sol["t"] if params.objective == "slack" else 0.0
    res.scale = sol["x"] if params.objective == "power" else 1.0
    res.gamma_t, res.nu = sol["gamma_t"], sol["nu"]
    res.tau1 = sol.values.get("tau1", 0.0)
    res.tau2 = sol.values.get("tau2", 0.0)
    return res


@dataclass
class PassiveResult:
    status: str
    theta: np.ndarray
    U: np.ndarray | None = None
    icfp: IcfpResult | None = None
    extraction: ThetaExtraction | None = None
    relaxed: ThetaExtraction | None = None
    agm: AgmTaylorState | None = None
    trace: list = field(default_factory=list)
    n_solves: int = 0

    @property
    def ok(self):
        return self.status in ("converged", "approximate", "kept")

    @property
    def scale(self):
        """Power reduction factor certified by a pinned solve (1 when none was)."""
        return self.icfp.scale if self.status in ("converged", "kept") else 1.0


def run_passive(cs, W, theta_prev, params, lc=None):
    """Trace-ratio iterations over ``U`` starting from the lift of ``theta_prev``.

    Stops at the first feasible solve with the ratio at one. If that pinned
    check fails, points on the segment from the incumbent towards the
    extracted vector are checked (``backtrack`` fractions). If none of them
    improves and the relaxed solution is rank one within ``rank_tol``, the
    extracted vector is returned with status ``"approximate"``. When the
    ratio schedule stalls, a short continuation around the incumbent is
    tried (``local_ratios``) and, failing that, the incumbent is re-verified
    and returned with status ``"kept"``. Only when
    even that check fails is a failure status reported.
    """
    lc = lift_channels(cs) if lc is None else lc
    M = lc.M
    theta_prev = np.asarray(theta_prev, dtype=complex)
    # AGM/Taylor point at which the current W's satisfy the SIC restriction
    eff = effective_channels(cs, theta_prev)
    agm = agm_from_solution(active_gains(eff.h1, eff.h2, W))
    u0 = lift_theta(theta_prev)
    eigvec = eigvec0 = u0 / np.linalg.norm(u0)
    pin = None
    pin_tried = False
    ratio, eps = 0.0, params.eps0
    last_ratio = 0.0
    trace = []
    n = 0
    status = "max_iters"
    last_ok = relaxed = None

    def attempt(u_ratio, vec):
        r = solve_icfp(cs, W, agm, params, u_ratio=u_ratio, eigvec=vec, lc=lc)
        obj = r.scale if params.objective == "power" else r.slack
        trace.append({"iter": len(trace), "objective": obj, "u_ratio": u_ratio,
                      "eps_step": eps, "feasible": r.ok, "wall_ms": 1e3 * r.solve_time})
        return r

    def done(r, how):
        ext = extract_theta(r.U, params.rank_tol)
        return PassiveResult(how, ext.theta, r.U, r, ext, relaxed, agm, trace, len(trace))

    def backtrack(target):
        # pinned checks on the segment from the incumbent towards ``target``;
        # the segment stays in the unit box
        for a in params.backtrack:
            r = attempt(1.0, lift_theta((1 - a) * theta_prev + a * target))
            if r.ok and (params.objective != "power" or r.scale > 1 + params.solver_tol):
                return r
        return None

    while len(trace) < params.max_iters:
        r = attempt(ratio, pin if ratio >= 1 else eigvec)
        if r.ok:
            if ratio >= 1:
                return done(r, "converged")
            last_ok = r
            relaxed = extract_theta(r.U, params.rank_tol)
            last_ratio = relaxed.rank_ratio
            eigvec = np.linalg.eigh(r.U)[1][:, -1]
            pin = lift_theta(relaxed.theta)
            pin_tried = False
            ratio = next_ratio(last_ratio, eps, params.rank_tol)
            continue
        if last_ok is None:
            status = "infeasible"
            break
        if ratio >= 1:
            if last_ratio >= 1 - params.rank_tol:
                rb = backtrack(relaxed.theta)
                if rb is not None:
                    return done(rb, "converged")
                # relaxed solution is rank one to tolerance; the pinned
                # point misses feasibility only by solver-level margins
                return PassiveResult("approximate", relaxed.theta, lift_matrix(relaxed.theta),
                                     last_ok, relaxed, relaxed, agm, trace, len(trace))
            pin_tried = True
        elif not pin_tried and len(trace) < params.max_iters:
            # before shrinking the step, try rounding the last relaxed solution
            pin_tried = True
            rp = attempt(1.0, pin)
            if rp.ok:
                return done(rp, "converged")
        eps *= 0.5
        if eps < params.min_eps:
            status = "stalled"
            break
        ratio = next_ratio(last_ratio, eps, params.rank_tol)
    if relaxed is not None:
        rb = backtrack(relaxed.theta)
        if rb is not None:
            return done(rb, "converged")
    if last_ok is not None:
        # local continuation around the incumbent: its lift satisfies the
        # ratio cut along u0 for every ratio, so each solve stays feasible
        for r_w in params.local_ratios:
            r = attempt(r_w, eigvec0)
            if not r.ok:
                break
            relaxed = extract_theta(r.U, params.rank_tol)
            rp = attempt(1.0, lift_theta(relaxed.theta))
            if rp.ok:
                return done(rp, "converged")
        # the incumbent itself is the last resort; it is feasible by construction
        rp = attempt(1.0, u0)
        if rp.ok:
            return done(rp, "kept")
    n = len(trace)
    log.debug("passive stage %s after %d solves", status, n)
    return PassiveResult(status, theta_prev, None, last_ok, None, relaxed, agm, trace, n)
