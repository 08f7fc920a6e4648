"""Achievable rates, eavesdropping rates and post-hoc feasibility checks.

Noise power is normalized to one at every receiver, so powers are in SNR
units throughout.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import effective_channels, sample_uncertainty


@dataclass
class BeamformerSolution:
    W1: np.ndarray
    W2: np.ndarray
    W_AN: np.ndarray
    theta: np.ndarray
    w1: np.ndarray | None = None
    w2: np.ndarray | None = None
    tau1: float = 0.0
    tau2: float = 0.0
    U: np.ndarray | None = None

    def cov(self, i):
        """Signal covariance of user ``i``: ``w w^H`` when a beam was extracted."""
        w = self.w1 if i == 1 else self.w2
        if w is not None:
            return np.outer(w, w.conj())
        return self.W1 if i == 1 else self.W2

    @property
    def signal_power(self):
        return float(np.trace(self.cov(1)).real + np.trace(self.cov(2)).real)

    @property
    def an_power(self):
        return float(np.trace(self.W_AN).real)

    def rank_ratio(self, i):
        return rank_ratio(self.W1 if i == 1 else self.W2)


def rank_ratio(W):
    """``lambda_max(W) / Tr(W)``; 1 for the zero matrix."""
    tr = np.trace(W).real
    if tr <= 1e-300:
        return 1.0
    return float(np.linalg.eigvalsh(0.5 * (W + W.conj().T))[-1] / tr)


def principal_beam(W):
    """``sqrt(lambda_max) * v_max`` of a PSD matrix."""
    lam, vec = np.linalg.eigh(0.5 * (W + W.conj().T))
    return np.sqrt(max(lam[-1], 0.0)) * vec[:, -1]


def quad(h, X):
    """``h^H X h`` (real part)."""
    return float(np.vdot(h, X @ h).real)


def rate_u1_s1(h1, sol):
    return float(np.log2(1 + quad(h1, sol.cov(1)) / (quad(h1, sol.W_AN) + 1)))


def rate_u1_s2(h1, sol):
    return float(np.log2(1 + quad(h1, sol.cov(2)) / (quad(h1, sol.cov(1)) + quad(h1, sol.W_AN) + 1)))


def rate_u2_s2(h2, sol):
    return float(np.log2(1 + quad(h2, sol.cov(2)) / (quad(h2, sol.cov(1)) + quad(h2, sol.W_AN) + 1)))


def eaves_rate(G_e, sol, i):
    """``log2 det(I + Q^{-1} G^H W_i G)`` with ``Q = G^H W_AN G + I``.

    ``G_e`` may carry a leading batch axis, in which case an array of rates
    is returned.
    """
    G = np.asarray(G_e)
    GH = np.conj(np.swapaxes(G, -1, -2))
    n_e = G.shape[-1]
    Q = GH @ sol.W_AN @ G + np.eye(n_e)
    S = GH @ sol.cov(i) @ G
    _, ld_num = np.linalg.slogdet(Q + S)
    _, ld_den = np.linalg.slogdet(Q)
    out = (ld_num - ld_den) / np.log(2)
    return float(out) if np.ndim(out) == 0 else out


def sampled_eaves_rates(cs, sol, i, n_samples, rng, boundary=False):
    """Eavesdropping rates at ``n_samples`` perturbations drawn from the two balls."""
    dI, dB = sample_uncertainty(cs.eps_Ie, cs.eps_Be, cs.dims, rng, boundary=boundary,
                                size=n_samples)
    G = effective_channels(cs, sol.theta, (dI, dB)).G_e
    return eaves_rate(G, sol, i)


def _project(d, radius):
    norm = np.linalg.norm(d.reshape(d.shape[0], -1), axis=1)
    scale = np.where(norm > radius, radius / np.maximum(norm, 1e-300), 1.0)
    return d * scale.reshape((-1,) + (1,) * (d.ndim - 1))


def worst_case_eaves_rate(cs, sol, i, n_samples=16, n_ascent_steps=25, rng=None, seed=0):
    """Sampled lower bound on ``max over the uncertainty set`` of the eavesdropping rate.

    Starts from ``n_samples`` boundary draws of ``(dG_Ie, dG_Be)`` and refines
    each by projected gradient ascent with a central-difference gradient
    (step ``1e-6 * eps_e``). Every start is refined independently, so the
    result can only grow with ``n_samples`` for a shared seed.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if cs.eps_e == 0:
        return eaves_rate(effective_channels(cs, sol.theta).G_e, sol, i)
    rng = np.random.default_rng(seed) if rng is None else rng
    dI, dB = sample_uncertainty(cs.eps_Ie, cs.eps_Be, cs.dims, rng, boundary=True,
                                size=n_samples)

    def f(dI, dB):
        return eaves_rate(effective_channels(cs, sol.theta, (dI, dB)).G_e, sol, i)

    best = f(dI, dB)
    if n_ascent_steps <= 0:
        return float(best.max())
    S = n_samples
    nI, nB = dI[0].size, dB[0].size
    h = 1e-6 * cs.eps_e
    step = np.full(S, 0.25)
    cur = best.copy()
    for _ in range(n_ascent_steps):
        x = np.concatenate([dI.reshape(S, -1), dB.reshape(S, -1)], axis=1)
        n = x.shape[1]
        # real and imaginary coordinates, +h and -h
        E = np.concatenate([np.eye(n), 1j * np.eye(n)])
        pts = np.concatenate([x[:, None, :] + h * E, x[:, None, :] - h * E], axis=1)
        vals = f(pts[..., :nI].reshape((-1,) + dI.shape[1:]),
                 pts[..., nI:].reshape((-1,) + dB.shape[1:])).reshape(S, 2, 2 * n)
        g_parts = (vals[:, 0] - vals[:, 1]) / (2 * h)
        grad = g_parts[:, :n] + 1j * g_parts[:, n:]
        gI, gB = grad[:, :nI], grad[:, nI:]
        nrmI = np.maximum(np.linalg.norm(gI, axis=1, keepdims=True), 1e-300)
        nrmB = np.maximum(np.linalg.norm(gB, axis=1, keepdims=True), 1e-300)
        tI = x[:, :nI] + step[:, None] * cs.eps_Ie * gI / nrmI
        tB = x[:, nI:] + step[:, None] * cs.eps_Be * gB / nrmB
        tI = _project(tI.reshape(dI.shape), cs.eps_Ie)
        tB = _project(tB.reshape(dB.shape), cs.eps_Be)
        trial = f(tI, tB)
        up = trial > cur
        dI = np.where(up[:, None, None], tI, dI)
        dB = np.where(up[:, None, None], tB, dB)
        cur = np.where(up, trial, cur)
        step = np.where(up, step, 0.5 * step)
        best = np.maximum(best, cur)
    return float(best.max())


def total_power(sol):
    return float(np.trace(sol.cov(1)).real + np.trace(sol.cov(2)).real + np.trace(sol.W_AN).real)


CSV_COLUMNS = ("r11", "r12", "r22", "re1_wc", "re2_wc", "norm_h1_sq", "norm_h2_sq",
               "total_power", "reflection_ok", "psd_ok", "qos_ok", "sic_ok", "order_ok",
               "secrecy_ok", "feasible")


@dataclass
class FeasibilityReport:
    r11: float
    r12: float
    r22: float
    re1_wc: float
    re2_wc: float
    norm_h1_sq: float
    norm_h2_sq: float
    total_power: float
    reflection_ok: bool
    psd_ok: bool
    qos_ok: bool
    sic_ok: bool
    order_ok: bool
    secrecy_ok: bool
    details: dict = field(default_factory=dict, repr=False)

    @property
    def feasible(self):
        return all((self.reflection_ok, self.psd_ok, self.qos_ok, self.sic_ok, self.order_ok,
                    self.secrecy_ok))

    def to_row(self):
        """Values in :data:`CSV_COLUMNS` order."""
        d = asdict(self)
        d["feasible"] = self.feasible
        return [d[c] for c in CSV_COLUMNS]


def check_feasibility(cs, sol, R_Q, R_M, tol=1e-3, n_samples=10_000, n_ascent_samples=16,
                      n_ascent_steps=25, seed=0, psd_tol=1e-7):
    """Evaluate the QoS, SIC, ordering, secrecy, PSD and reflection constraints.

    Rate constraints use ``tol`` in bps/Hz. Secrecy takes the larger of the
    plain sampled maximum over ``n_samples`` perturbations and the
    ascent-refined oracle.
    """
    eff = effective_channels(cs, sol.theta)
    r11 = rate_u1_s1(eff.h1, sol)
    r12 = rate_u1_s2(eff.h1, sol)
    r22 = rate_u2_s2(eff.h2, sol)
    n1 = float(np.vdot(eff.h1, eff.h1).real)
    n2 = float(np.vdot(eff.h2, eff.h2).real)
    rng = np.random.default_rng(seed)
    re = []
    sampled = []
    for i in (1, 2):
        if cs.eps_e > 0 and n_samples > 0:
            s = float(np.max(sampled_eaves_rates(cs, sol, i, n_samples, rng)))
        else:
            s = eaves_rate(eff.G_e, sol, i)
        wc = worst_case_eaves_rate(cs, sol, i, n_ascent_samples, n_ascent_steps, seed=seed + i)
        sampled.append(s)
        re.append(max(s, wc))
    psd_min = min(np.linalg.eigvalsh(0.5 * (X + X.conj().T))[0]
                  for X in (sol.W1, sol.W2, sol.W_AN))
    scale = max(1.0, total_power(sol))
    return FeasibilityReport(
        r11=r11, r12=r12, r22=r22, re1_wc=re[0], re2_wc=re[1],
        norm_h1_sq=n1, norm_h2_sq=n2, total_power=total_power(sol),
        reflection_ok=bool(np.all(np.abs(sol.theta) <= 1 + 1e-9)),
        psd_ok=bool(psd_min >= -psd_tol * scale),
        qos_ok=bool(r11 >= R_Q - tol and r22 >= R_Q - tol),
        sic_ok=bool(r12 >= r22 - tol),
        order_ok=bool(n1 >= n2 * (1 - tol)),
        secrecy_ok=bool(max(re) <= R_M + tol),
        details={"sampled_max": sampled, "psd_min": float(psd_min)},
    )
