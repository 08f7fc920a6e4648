"""Acceptance suite: one printed PASS/FAIL line per criterion.

Each test prints ``criterion n: PASS|FAIL - detail`` before asserting, and a
summary of all lines appears at the end of the session. Solved trials are
memoized for the session because criteria 6, 7 and 10 audit the runs of
criteria 1 to 5. Set ``IRS_NOMA_ACCEPTANCE_CACHE`` to a directory to also
keep them on disk between sessions.

The complete suite solves several hundred instances and needs a few hours
on a single core.
"""
import os
import pickle
from pathlib import Path

import numpy as np
import pytest

from irs_noma.active import (active_gains, agm_from_solution, qos_constraints, run_algorithm1,
                             sic_constraints)
from irs_noma.ao import run_ao
from irs_noma.channel import (FadingParams, effective_channels, sample_channels, sample_geometry,
                              with_normalized_error)
from irs_noma.experiment import SweepPoint, config_from_dict, trial_instance
from irs_noma.passive import (extract_theta, lift_channels, lift_matrix, lifted_gains,
                              lifted_qos_sic_constraints, ordering_constraint)
from irs_noma.rates import check_feasibility
from irs_noma.robustify import build_joint_v, build_v_affine_in_u, build_w_prime

pytestmark = pytest.mark.acceptance

CFG = config_from_dict({"dims": {"nt": 8, "m": 10, "ne": 2}, "seed": 0})
CONVERGED = ("converged", "no_improvement")
CACHE = os.environ.get("IRS_NOMA_ACCEPTANCE_CACHE")
RESULTS = {}
_memo = {}
_terminal = None


@pytest.fixture(autouse=True)
def _terminal_writer(request):
    global _terminal
    _terminal = request.config.pluginmanager.getplugin("terminalreporter")


def report(n, passed, detail):
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}"
    RESULTS[n] = line
    if _terminal is not None:
        _terminal.write_line("")
        _terminal.write_line(line)
    else:
        print(line)
    return passed


def point(nt=8, m=10, ne=2, R_Q=1.0, R_M=0.5, xi_n=0.01):
    return SweepPoint(nt, m, ne, R_Q, R_M, xi_n)


def _record(p, scheme, trial):
    cs, theta0 = trial_instance(CFG, p, trial)
    res = run_ao(cs, CFG.ao_config(p, scheme), theta0=theta0)
    rec = {"point": p, "scheme": scheme, "trial": trial, "status": res.status, "ok": res.ok,
           "n_outer": res.n_outer, "powers": res.trace.powers()}
    if not res.ok:
        return rec
    sol = res.solution
    rep = check_feasibility(cs, sol, p.R_Q, p.R_M, n_samples=10_000, seed=trial)
    term = extract_theta(sol.U)
    rec.update(
        power=res.power, signal_power=sol.signal_power, an_power=sol.an_power,
        theta=sol.theta, oracle_ok=rep.feasible,
        r11=rep.r11, r12=rep.r12, r22=rep.r22, re1=rep.re1_wc, re2=rep.re2_wc,
        n1=rep.norm_h1_sq, n2=rep.norm_h2_sq,
        w1_ratio=sol.rank_ratio(1), w2_ratio=sol.rank_ratio(2), u_ratio=res.u_rank_ratio,
        path_gap=term.path_gap,
        relaxed_ratio=res.relaxed.rank_ratio if res.relaxed else None,
        relaxed_gap=res.relaxed.path_gap if res.relaxed else None)
    return rec


def solve(scheme, trial, **kw):
    p = point(**kw)
    key = (p, scheme, trial)
    if key in _memo:
        return _memo[key]
    path = None
    if CACHE:
        tag = "_".join(f"{v:g}" for v in (p.nt, p.m, p.ne, p.R_Q, p.R_M, p.xi_n))
        path = Path(CACHE) / f"{tag}_{scheme}_{trial}.pkl"
        if path.exists():
            _memo[key] = pickle.loads(path.read_bytes())
            return _memo[key]
    rec = _record(p, scheme, trial)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(pickle.dumps(rec))
    _memo[key] = rec
    return rec


def solve_many(scheme, trials, **kw):
    return [solve(scheme, t, **kw) for t in trials]


def paired_power(*groups, key="power"):
    """Values of ``key`` on the trials every group solved, one array per group."""
    keep = [i for i in range(len(groups[0])) if all(g[i]["ok"] for g in groups)]
    return keep, [np.array([g[i][key] for i in keep]) for g in groups]


def db(x):
    return 10 * np.log10(x)


# -- scenario runs ---------------------------------------------------------

BASE_TRIALS = range(20)
DOM_TRIALS = range(50)
EPA_TRIALS = range(20)
XI_GRID = (0.01, 0.05, 0.1)
SENS = {  # label -> overrides at M=5, xi_n=0.1
    "R_M=0.1": {"R_M": 0.1}, "R_M=0.5": {"R_M": 0.5}, "R_M=1.0": {"R_M": 1.0},
    "N_e=3": {"ne": 3}, "R_Q=2": {"R_Q": 2.0},
}


def runs_crit1():
    return solve_many("ao", BASE_TRIALS)


def runs_crit2():
    return solve_many("ao", BASE_TRIALS, nt=6)


def runs_crit3(m):
    return {"ao": solve_many("ao", DOM_TRIALS, m=m),
            "random_phase": solve_many("random_phase", DOM_TRIALS, m=m),
            "epa": solve_many("epa", EPA_TRIALS, m=m)}


def runs_crit4():
    return {xi: solve_many("ao", range(10), m=5, xi_n=xi) for xi in XI_GRID}


def runs_crit5():
    return {k: solve_many("ao", DOM_TRIALS, m=5, xi_n=0.1, **v) for k, v in SENS.items()}


def all_runs():
    out = runs_crit1() + runs_crit2()
    for m in (5, 10):
        for v in runs_crit3(m).values():
            out += v
    for v in runs_crit4().values():
        out += v
    for v in runs_crit5().values():
        out += v
    return out


# -- criteria --------------------------------------------------------------

def test_criterion_1_monotone_convergence():
    runs = runs_crit1()
    mono = [all(b <= a + 0.1 for a, b in zip(r["powers"], r["powers"][1:])) for r in runs]
    conv = [r["status"] in CONVERGED and r["n_outer"] <= 30 for r in runs]
    statuses = {s: sum(r["status"] == s for r in runs) for s in {r["status"] for r in runs}}
    iters = [r["n_outer"] for r in runs]
    ok = all(mono) and all(conv)
    report(1, ok, f"{sum(mono)}/20 monotone within 0.1, {sum(conv)}/20 terminated within 30 "
                  f"outer iterations (max {max(iters)}); statuses {statuses}")
    assert ok


def test_criterion_2_more_antennas_less_power():
    keep, (p8, p6) = paired_power(runs_crit1(), runs_crit2())
    ok = len(keep) > 0 and p8.mean() < p6.mean()
    report(2, ok, f"mean power N_t=8 {p8.mean():.4g} vs N_t=6 {p6.mean():.4g} "
                  f"over {len(keep)} paired trials ({db(p8.mean()):.2f} vs {db(p6.mean()):.2f} dB)")
    assert ok


def _dominance(m):
    r = runs_crit3(m)
    n_epa = len(EPA_TRIALS)
    ao, rp, epa = r["ao"], r["random_phase"], r["epa"]
    tol = 1e-4
    viol = []
    for i in range(len(ao)):
        if not ao[i]["ok"]:
            continue
        for name, other in (("rp", rp), ("epa", epa)):
            if i < len(other) and other[i]["ok"] and ao[i]["power"] > other[i]["power"] * (1 + tol):
                viol.append((name, i))
    keep, (pa, pe, pr) = paired_power(ao[:n_epa], epa, rp[:n_epa])
    keep50, (pa50, pr50) = paired_power(ao, rp)
    return {"viol": viol, "mean": (pa.mean(), pe.mean(), pr.mean()), "n": len(keep),
            "db_mean": (db(pa).mean(), db(pe).mean(), db(pr).mean()),
            "gap": db(pr50.mean() / pa50.mean()), "gap_db": (db(pr50) - db(pa50)).mean(),
            "n50": len(keep50), "infeasible": sum(not x["ok"] for x in ao + rp + epa)}


def test_criterion_3_ao_dominates_baselines():
    d5, d10 = _dominance(5), _dominance(10)
    order = all(d["mean"][2] >= d["mean"][1] >= d["mean"][0] for d in (d5, d10))
    viol = d5["viol"] + d10["viol"]
    grows = d10["gap"] > d5["gap"]
    ok = order and not viol and grows

    def fmt(d):
        a, e, r = d["mean"]
        adb, edb, rdb = d["db_mean"]
        return (f"mean AO/EPA/RP {a:.4g}/{e:.4g}/{r:.4g} ({adb:.2f}/{edb:.2f}/{rdb:.2f} dB-mean, "
                f"{d['n']} trials), RP-AO gap {d['gap']:.2f} dB (per-trial {d['gap_db']:.2f} dB, "
                f"{d['n50']} trials)")
    report(3, ok, f"M=5: {fmt(d5)}; M=10: {fmt(d10)}; per-seed violations {viol}; "
                  f"gap grows with M: {grows}")
    assert ok


def test_criterion_4_power_monotone_in_error():
    runs = runs_crit4()
    keep, powers = paired_power(*(runs[xi] for xi in XI_GRID))
    means = [p.mean() for p in powers]
    up = all(b >= a for a, b in zip(means, means[1:]))
    down = all(b <= a for a, b in zip(means, means[1:]))
    P = np.vstack(powers)
    inc = int(np.sum(np.all(np.diff(P, axis=0) >= 0, axis=0)))
    dec = int(np.sum(np.all(np.diff(P, axis=0) <= 0, axis=0)))
    direction = "increasing" if up else "decreasing" if down else "not monotone"
    ok = len(keep) == 10 and (up or down)
    report(4, ok, f"mean power at xi_n={XI_GRID}: {', '.join(f'{x:.4g}' for x in means)} "
                  f"({direction}); per instance {inc} increasing, {dec} decreasing, "
                  f"{len(keep) - inc - dec} mixed of {len(keep)} solved")
    assert ok


def test_criterion_5_an_allocation():
    runs = runs_crit5()
    labels = list(SENS)
    keep, an = paired_power(*(runs[k] for k in labels), key="an_power")
    _, sig = paired_power(*(runs[k] for k in labels), key="signal_power")
    an = dict(zip(labels, (x.mean() for x in an)))
    sig = dict(zip(labels, (x.mean() for x in sig)))
    sweep = [sig[k] for k in ("R_M=0.1", "R_M=0.5", "R_M=1.0")]
    spread = max(sweep) / min(sweep) - 1
    checks = {
        "AN decreasing in R_M": an["R_M=0.1"] > an["R_M=0.5"] > an["R_M=1.0"],
        "AN N_e=3 above N_e=2": an["N_e=3"] > an["R_M=0.5"],
        "signal spread < 20%": spread < 0.2,
        "R_Q=2 raises signal and AN": sig["R_Q=2"] > sig["R_M=0.5"] and an["R_Q=2"] > an["R_M=0.5"],
    }
    ok = len(keep) > 0 and all(checks.values())
    report(5, ok, "mean AN/signal power " + ", ".join(f"{k} {an[k]:.4g}/{sig[k]:.4g}" for k in labels)
           + f"; signal spread over R_M {100 * spread:.1f}%; {len(keep)} paired trials; "
           + ", ".join(f"{k}: {v}" for k, v in checks.items()))
    assert ok


def test_criterion_6_secrecy_oracle():
    runs = [r for r in all_runs() if r["ok"]]
    margins = [r["point"].R_M - max(r["re1"], r["re2"]) for r in runs]
    bad = sum(x < -1e-6 for x in margins)
    ok = bad == 0
    report(6, ok, f"{len(runs) - bad}/{len(runs)} solutions keep the worst-case eavesdropping "
                  f"rate within R_M + 1e-6; smallest margin {min(margins):.3g}")
    assert ok


def test_criterion_7_rank_one():
    runs = [r for r in all_runs() if r["ok"]]
    good = [min(r["w1_ratio"], r["w2_ratio"], r["u_ratio"]) >= 0.999 for r in runs]
    frac = np.mean(good)
    gap = max(r["path_gap"] for r in runs)
    rel = [r for r in runs if r["relaxed_ratio"] is not None]
    rel_ok = np.mean([r["relaxed_ratio"] >= 0.999 for r in rel]) if rel else float("nan")
    rel_gap = max((r["relaxed_gap"] for r in rel), default=float("nan"))
    ok = frac >= 0.95 and gap <= 1e-6
    report(7, ok, f"{sum(good)}/{len(runs)} ({100 * frac:.1f}%) with all ratios >= 0.999; "
                  f"max extraction path gap {gap:.2g}; final relaxed passive iterate: "
                  f"{100 * rel_ok:.1f}% ratio >= 0.999, max gap {rel_gap:.2g} ({len(rel)} runs)")
    assert ok


def _rel(a, b):
    a, b = np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def _flatten(cons):
    out = []
    for kind, *vals in cons:
        for v in vals:
            out.append(np.ravel(np.asarray(v, dtype=float)))
    return np.concatenate(out)


def test_criterion_8_lifting_is_exact():
    rng = np.random.default_rng(2024)
    worst = {"gains": 0.0, "qos_sic": 0.0, "ordering": 0.0, "V": 0.0}
    for _ in range(1000):
        dims = (int(rng.integers(2, 7)), int(rng.integers(1, 9)), int(rng.integers(1, 4)))
        cs = with_normalized_error(
            sample_channels(sample_geometry(rng), FadingParams(), dims, rng), 0.05)
        N_t, M, _ = dims
        theta = rng.uniform(0, 1, M) * np.exp(1j * rng.uniform(0, 2 * np.pi, M))
        U = lift_matrix(theta)
        W = {}
        for k in (1, 2, "AN"):
            A = rng.standard_normal((N_t, N_t)) + 1j * rng.standard_normal((N_t, N_t))
            W[k] = A @ A.conj().T
        eff = effective_channels(cs, theta)
        direct = active_gains(eff.h1, eff.h2, W)
        lc = lift_channels(cs)
        lifted = lifted_gains(lc, W, U)
        worst["gains"] = max(worst["gains"], max(abs(lifted[k] - direct[k]) / abs(direct[k])
                                                 for k in direct))
        agm = agm_from_solution(direct)
        gt, nu = 0.7 * agm.gamma_t_prev, 0.9 * agm.nu_tilde
        ref = _flatten(qos_constraints(eff.h1, eff.h2, W[1], W[2], W["AN"], 1.0)
                       + sic_constraints(eff.h1, eff.h2, W[1], W[2], W["AN"], gt, nu, agm))
        got = _flatten(lifted_qos_sic_constraints(lc, W[1], W[2], W["AN"], U, gt, nu, agm, 1.0))
        worst["qos_sic"] = max(worst["qos_sic"], _rel(got, ref))
        gap = np.vdot(eff.h1, eff.h1).real - np.vdot(eff.h2, eff.h2).real
        scale = np.vdot(eff.h1, eff.h1).real + np.vdot(eff.h2, eff.h2).real
        worst["ordering"] = max(worst["ordering"], abs(ordering_constraint(lc, U) - gap) / scale)
        for i in (1, 2):
            Wp = build_w_prime(W["AN"], W[i], 0.5)
            worst["V"] = max(worst["V"], _rel(build_v_affine_in_u(U, cs.H_BI, Wp),
                                              build_joint_v(theta, cs.H_BI, Wp)))
    ok = max(worst.values()) <= 1e-9
    report(8, ok, "largest relative deviation over 1000 random lifts: "
                  + ", ".join(f"{k} {v:.2g}" for k, v in worst.items()))
    assert ok


def test_criterion_9_grid_oracle():
    tiny = config_from_dict({"dims": {"nt": 2, "m": 2, "ne": 1}, "xi_n": 0.01})
    p = tiny.points()[0]
    phases = np.exp(2j * np.pi * np.arange(16) / 16)
    excess = []
    for seed in range(10):
        cs, theta0 = trial_instance(tiny, p, seed)
        ac = tiny.ao_config(p, "ao")
        res = run_ao(cs, ac, theta0=theta0)
        best = np.inf
        for a in phases:
            for b in phases:
                r = run_algorithm1(cs, np.array([a, b]), ac.active_params())
                if r.ok:
                    best = min(best, r.power)
        excess.append(res.power / best - 1 if res.ok else np.inf)
    excess = np.array(excess)
    within = excess <= 0.05
    ok = bool(np.all(within))
    report(9, ok, f"{int(within.sum())}/10 seeds within 5% of the 256-point grid optimum; "
                  f"excess per seed {np.round(excess, 4).tolist()}")
    assert ok


def test_criterion_10_qos_sic_ordering():
    runs = [r for r in all_runs() if r["ok"]]
    tol = 1e-3
    fails = {
        "qos": sum(min(r["r11"], r["r22"]) < r["point"].R_Q - tol for r in runs),
        "sic": sum(r["r12"] < r["r22"] - tol for r in runs),
        "ordering": sum(r["n1"] < r["n2"] * (1 - tol) for r in runs),
    }
    slack = min(min(r["r11"], r["r22"]) - r["point"].R_Q for r in runs)
    ok = not any(fails.values())
    report(10, ok, f"{len(runs)} solutions checked; violations {fails}; "
                   f"smallest QoS margin {slack:.2g} bps/Hz")
    assert ok
