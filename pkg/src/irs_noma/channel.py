"""Node geometry, path-loss/Rayleigh channels and eavesdropper CSI error."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr


@dataclass(frozen=True)
class Geometry:
    """Node positions in meters.

    The BS sits at the origin and the IRS ``d_BI`` meters away on the x-axis.
    U1 and E lie in a disk of radius ``r_B`` around the BS, U2 in a disk of
    radius ``r_I`` around the IRS.
    """

    bs_pos: np.ndarray
    irs_pos: np.ndarray
    u1_pos: np.ndarray
    u2_pos: np.ndarray
    e_pos: np.ndarray
    d_BI: float = 50.0
    r_B: float = 2.0
    r_I: float = 2.0

    def __post_init__(self):
        if self.d_BI <= 0:
            raise ValueError("d_BI must be positive")
        pts = [self.bs_pos, self.irs_pos, self.u1_pos, self.u2_pos, self.e_pos]
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if np.linalg.norm(np.subtract(pts[i], pts[j])) <= 0:
                    raise ValueError("node positions must be distinct")

    def distance(self, a, b):
        return float(np.linalg.norm(np.subtract(getattr(self, a + "_pos"), getattr(self, b + "_pos"))))


def _in_disk(rng, center, radius):
    r = radius * np.sqrt(rng.uniform())
    phi = rng.uniform(0, 2 * np.pi)
    return np.asarray(center, dtype=float) + r * np.array([np.cos(phi), np.sin(phi)])


def sample_geometry(rng, d_BI=50.0, r_B=2.0, r_I=2.0):
    """Draw U1/E uniformly around the BS and U2 uniformly around the IRS."""
    bs = np.zeros(2)
    irs = np.array([d_BI, 0.0])
    u1 = _in_disk(rng, bs, r_B)
    e = _in_disk(rng, bs, r_B)
    u2 = _in_disk(rng, irs, r_I)
    return Geometry(bs, irs, u1, u2, e, d_BI=d_BI, r_B=r_B, r_I=r_I)


@dataclass(frozen=True)
class FadingParams:
    alpha_irs: float = 2.0
    alpha_bs: float = 4.0
    min_distance: float = 1.0
    rng_seed: int | None = None

    def __post_init__(self):
        if self.alpha_irs < 0 or self.alpha_bs < 0:
            raise ValueError("path-loss exponents must be nonnegative")


@dataclass(frozen=True)
class ChannelSet:
    """Legitimate channels plus the estimated eavesdropper channels.

    Shapes: ``h_I1, h_I2`` (M,), ``h_B1`` (N_t,), ``H_BI`` (M, N_t),
    ``G_Be_hat`` (N_t, N_e), ``G_Ie_hat`` (M, N_e).
    """

    h_I1: np.ndarray
    h_I2: np.ndarray
    h_B1: np.ndarray
    H_BI: np.ndarray
    G_Be_hat: np.ndarray
    G_Ie_hat: np.ndarray
    eps_Ie: float = 0.0
    eps_Be: float = 0.0

    def __post_init__(self):
        M, N_t = self.H_BI.shape
        N_e = self.G_Be_hat.shape[1]
        if (self.h_I1.shape != (M,) or self.h_I2.shape != (M,) or self.h_B1.shape != (N_t,)
                or self.G_Be_hat.shape != (N_t, N_e) or self.G_Ie_hat.shape != (M, N_e)):
            raise ValueError("inconsistent channel dimensions")
        if self.eps_Ie < 0 or self.eps_Be < 0:
            raise ValueError("uncertainty radii must be nonnegative")

    @property
    def dims(self):
        """(N_t, M, N_e)"""
        M, N_t = self.H_BI.shape
        return N_t, M, self.G_Be_hat.shape[1]

    @property
    def eps_e(self):
        return self.eps_Ie + self.eps_Be

    @property
    def X_hat(self):
        """Stacked estimate ``[G_Ie_hat; G_Be_hat]`` of shape (M + N_t, N_e)."""
        return np.vstack([self.G_Ie_hat, self.G_Be_hat])


@dataclass(frozen=True)
class EffectiveChannels:
    h1: np.ndarray
    h2: np.ndarray
    G_e: np.ndarray


def _check_dims(dims):
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) <= 0:
        raise ValueError(f"dimensions must be three positive integers, got {dims}")
    return dims


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def path_gain(d, alpha, min_distance=0.0):
    """Amplitude factor ``d**(-alpha/2)`` with distances clamped at ``min_distance``."""
    return max(d, min_distance) ** (-alpha / 2)


def sample_channels(geom, fading, dims, rng=None):
    """Draw every link as ``d**(-alpha/2)`` times unit-variance CN(0, 1) entries."""
    N_t, M, N_e = _check_dims(dims)
    if rng is None:
        rng = np.random.default_rng(fading.rng_seed)
    d = geom.distance
    a_i, a_b, dmin = fading.alpha_irs, fading.alpha_bs, fading.min_distance
    h_I1 = path_gain(d("irs", "u1"), a_i, dmin) * _cn(rng, (M,))
    h_I2 = path_gain(d("irs", "u2"), a_i, dmin) * _cn(rng, (M,))
    h_B1 = path_gain(d("bs", "u1"), a_b, dmin) * _cn(rng, (N_t,))
    H_BI = path_gain(d("bs", "irs"), a_i, dmin) * _cn(rng, (M, N_t))
    G_Be = path_gain(d("bs", "e"), a_b, dmin) * _cn(rng, (N_t, N_e))
    G_Ie = path_gain(d("irs", "e"), a_i, dmin) * _cn(rng, (M, N_e))
    return ChannelSet(h_I1, h_I2, h_B1, H_BI, G_Be, G_Ie)


def radius_from_normalized_error(xi_n, X_hat):
    if xi_n < 0:
        raise ValueError("xi_n must be nonnegative")
    return float(xi_n * np.linalg.norm(X_hat))


def with_normalized_error(cs, xi_n):
    """Attach radii for normalized error ``xi_n``.

    The combined radius is split between the IRS-E and BS-E blocks in
    proportion to the Frobenius norms of the two estimates.
    """
    eps_e = radius_from_normalized_error(xi_n, cs.X_hat)
    nI = np.linalg.norm(cs.G_Ie_hat)
    nB = np.linalg.norm(cs.G_Be_hat)
    share = nI / (nI + nB) if nI + nB > 0 else 0.5
    eps_Ie = eps_e * share
    return replace(cs, eps_Ie=eps_Ie, eps_Be=eps_e - eps_Ie)


def _to_ball(g, u, radius, boundary, dim):
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    norm[norm == 0] = 1.0
    r = radius if boundary else radius * u[..., None] ** (1.0 / (2 * dim))
    return r * g / norm


def sample_uncertainty(eps_Ie, eps_Be, dims, rng, boundary=False, size=None):
    """Uniform draws from the two Frobenius balls (or their spheres).

    Returns ``(dG_Ie, dG_Be)`` with shapes (M, N_e) and (N_t, N_e), or a
    leading batch axis when ``size`` is given. Each draw consumes one row of
    a single random block, so the first ``n`` draws of a batch of ``n + k``
    coincide with a batch of ``n`` from the same generator state.
    """
    N_t, M, N_e = _check_dims(dims)
    if eps_Ie < 0 or eps_Be < 0:
        raise ValueError("radii must be nonnegative")
    nI, nB = M * N_e, N_t * N_e
    lead = () if size is None else (size,)
    raw = rng.standard_normal(lead + (2 * (nI + nB) + 2,))
    g = (raw[..., 0:nI + nB] + 1j * raw[..., nI + nB:2 * (nI + nB)]) / np.sqrt(2)
    # ndtr maps the trailing normals to uniforms without a second stream
    u = ndtr(raw[..., -2:])
    dI = _to_ball(g[..., :nI], u[..., 0], eps_Ie, boundary, nI)
    dB = _to_ball(g[..., nI:], u[..., 1], eps_Be, boundary, nB)
    return dI.reshape(lead + (M, N_e)), dB.reshape(lead + (N_t, N_e))


def _theta_vector(theta, M):
    theta = np.asarray(theta, dtype=complex)
    if theta.ndim == 2:
        if theta.shape != (M, M):
            raise ValueError(f"reflection matrix must be {M}x{M}")
        theta = np.diag(theta).copy()
    if theta.shape != (M,):
        raise ValueError(f"reflection vector must have length {M}")
    return theta


def effective_channels(cs, theta, delta=None):
    """Cascaded channels ``h1, h2, G_e`` for reflection ``theta``.

    ``delta`` is an optional ``(dG_Ie, dG_Be)`` pair added to the
    eavesdropper estimates; a leading batch axis on both is allowed and
    produces a batch of ``G_e`` matrices.
    """
    M = cs.H_BI.shape[0]
    th = _theta_vector(theta, M)
    A = cs.H_BI.conj().T * th.conj()  # H^H Theta^H, (N_t, M)
    h1 = A @ cs.h_I1 + cs.h_B1
    h2 = A @ cs.h_I2
    G_Ie, G_Be = cs.G_Ie_hat, cs.G_Be_hat
    if delta is not None:
        dI, dB = delta
        if dI.shape[-2:] != G_Ie.shape or dB.shape[-2:] != G_Be.shape:
            raise ValueError("perturbation shape does not match the channel")
        G_Ie = G_Ie + dI
        G_Be = G_Be + dB
    G_e = A @ G_Ie + G_Be
    return EffectiveChannels(h1, h2, G_e)


def check_ordering(cs, theta, tol=0.0):
    """True when ``||h1||^2 >= ||h2||^2`` (ties allowed)."""
    eff = effective_channels(cs, theta)
    return bool(np.vdot(eff.h1, eff.h1).real >= np.vdot(eff.h2, eff.h2).real - tol)
