"""Finite LMIs certifying the worst-case eavesdropping constraint.

The semi-infinite condition ``G_e^H W' G_e + gamma_M I >= 0`` over the
uncertainty set is rewritten with the stacked channel ``X = [G_Ie; G_Be]``
and the joint matrix ``V = [Theta H; I] W' [Theta H; I]^H``, then replaced
by an S-procedure LMI in ``(V, tau)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic import Affine, bmat


@dataclass(frozen=True)
class StackedChannel:
    X_hat: np.ndarray
    eps_e: float


def stack_channel(cs):
    """IRS block first: ``X_hat^H = [G_Ie_hat^H, G_Be_hat^H]``."""
    return StackedChannel(cs.X_hat, cs.eps_e)


def gamma(rate):
    return 2.0 ** rate - 1.0


def build_w_prime(W_AN, W_i, R_M):
    """``(2**R_M - 1) W_AN - W_i``; works on arrays and affine expressions."""
    return W_AN * gamma(R_M) - W_i


def build_joint_v(theta, H_BI, W_prime):
    """Joint beamforming matrix of size (M + N_t).

    ``[[T W' T^H, T W'], [W' T^H, W']]`` with ``T = diag(theta) H_BI``.
    """
    theta = np.asarray(theta)
    M, N_t = H_BI.shape
    if theta.shape != (M,):
        raise ValueError(f"theta must have length {M}")
    if W_prime.shape != (N_t, N_t):
        raise ValueError(f"W' must be {N_t}x{N_t}")
    T = theta[:, None] * H_BI
    TW = T @ W_prime
    if isinstance(W_prime, Affine):
        return bmat([[TW @ T.conj().T, TW], [W_prime @ T.conj().T, W_prime]])
    return np.block([[TW @ T.conj().T, TW], [W_prime @ T.conj().T, W_prime]])


def build_sprocedure_lmi(X_hat, V, R_M, eps_e, tau, noise=1.0):
    """S-procedure LMI ``[[X^H V X + (g - tau) I, X^H V], [V X, V + tau/eps^2 I]]``.

    The lower-right identity has the row dimension of ``X_hat`` (M + N_t).
    ``V``, ``tau`` and ``noise`` may be constants or affine expressions;
    ``g = gamma_M * noise``.
    """
    if not eps_e > 0:
        raise ValueError("degenerate uncertainty radius; use the nominal constraint")
    n, n_e = X_hat.shape
    XH = X_hat.conj().T
    XV = XH @ V
    top_left = XV @ X_hat + (noise * gamma(R_M)) * np.eye(n_e) - tau * np.eye(n_e)
    bottom_right = V + tau * np.eye(n) / eps_e ** 2
    blocks = [[top_left, XV], [V @ X_hat, bottom_right]]
    if any(isinstance(b, Affine) for row in blocks for b in row):
        return bmat(blocks)
    return np.block(blocks)


def nominal_lmi(X_hat, V, R_M, noise=1.0):
    """``X^H V X + gamma_M noise I`` for a zero-radius uncertainty set."""
    return X_hat.conj().T @ V @ X_hat + (noise * gamma(R_M)) * np.eye(X_hat.shape[1])


def secrecy_lmi(X_hat, V, R_M, eps_e, tau=None, noise=1.0):
    if eps_e > 0:
        return build_sprocedure_lmi(X_hat, V, R_M, eps_e, tau, noise)
    return nominal_lmi(X_hat, V, R_M, noise)


@dataclass(frozen=True)
class SvdTerms:
    """Pairs ``(s_p, d_p)`` with ``sum_p s_p d_p^H = H_BI W' H_BI^H``."""

    terms: tuple

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def reconstruct(self, M):
        out = np.zeros((M, M), dtype=complex)
        for s, d in self.terms:
            out += np.outer(s, d.conj())
        return out


def svd_outer_terms(H_BI, W_prime, rtol=1e-12):
    B = H_BI @ np.asarray(W_prime) @ H_BI.conj().T
    u, sv, vh = np.linalg.svd(B)
    if sv.size == 0 or sv[0] == 0:
        return SvdTerms(())
    keep = sv > rtol * sv[0]
    return SvdTerms(tuple((sv[p] * u[:, p], vh[p].conj()) for p in np.flatnonzero(keep)))


def build_v_affine_in_u(U, H_BI, W_prime, terms=None):
    """Joint matrix as an affine function of the lifted variable ``U``.

    The top-left block is ``sum_p S_p U^T D_p`` with ``S_p = [diag(s_p), 0]``
    and ``D_p = [diag(conj d_p); 0]``; the off-diagonal blocks read the
    reflection coefficients from the last row of ``U``. For ``U = u u^H``
    with ``u = [conj(theta); 1]`` this equals :func:`build_joint_v`.
    """
    M, N_t = H_BI.shape
    if terms is None:
        terms = svd_outer_terms(H_BI, W_prime)
    UT = U.T
    zero_col = np.zeros((M, 1))
    top_left = None
    for s, d in terms:
        S = np.hstack([np.diag(s), zero_col])
        D = np.vstack([np.diag(d.conj()), zero_col.T])
        blk = S @ UT @ D
        top_left = blk if top_left is None else top_left + blk
    if top_left is None:
        top_left = np.zeros((M, M))
    row = U[M, :M]
    HW = H_BI @ W_prime
    off = row[:, None] * HW
    blocks = [[top_left, off], [off.conj().T, W_prime]]
    if any(isinstance(b, Affine) for r in blocks for b in r):
        return bmat(blocks)
    return np.block(blocks)


def reduced_sprocedure_lmi(X_hat, theta, H_BI, W_prime, R_M, eps_e, tau, noise=1.0):
    """S-procedure LMI restricted to the range of ``P = [diag(theta) H_BI; I]``.

    ``V = P W' P^H`` vanishes on the orthogonal complement of ``range(P)``,
    where the full LMI reduces to ``tau / eps**2 I >= 0``. With the thin QR
    factorization ``P = Q R`` the remaining block is
    ``[[B W' B^H + (g - tau) I, B W' R^H], [R W' B^H, R W' R^H + tau/eps^2 I]]``
    with ``B = X^H P``; size ``N_e + N_t`` instead of ``N_e + M + N_t``.
    Together with ``tau >= 0`` it is equivalent to :func:`build_sprocedure_lmi`.
    """
    if not eps_e > 0:
        raise ValueError("degenerate uncertainty radius; use the nominal constraint")
    theta = np.asarray(theta)
    M, N_t = H_BI.shape
    n_e = X_hat.shape[1]
    P = np.vstack([theta[:, None] * H_BI, np.eye(N_t)])
    R = np.linalg.qr(P, mode="r")
    B = X_hat.conj().T @ P
    BW = B @ W_prime
    RW = R @ W_prime
    blocks = [[BW @ B.conj().T + (noise * gamma(R_M)) * np.eye(n_e) - tau * np.eye(n_e),
               BW @ R.conj().T],
              [RW @ B.conj().T, RW @ R.conj().T + tau * np.eye(N_t) / eps_e ** 2]]
    if any(isinstance(b, Affine) for row in blocks for b in row):
        return bmat(blocks)
    return np.block(blocks)


def reduced_nominal_lmi(X_hat, theta, H_BI, W_prime, R_M, noise=1.0):
    """``B W' B^H + gamma_M noise I`` with ``B = X^H [diag(theta) H_BI; I]``."""
    theta = np.asarray(theta)
    P = np.vstack([theta[:, None] * H_BI, np.eye(H_BI.shape[1])])
    B = X_hat.conj().T @ P
    return B @ W_prime @ B.conj().T + (noise * gamma(R_M)) * np.eye(X_hat.shape[1])
