import numpy as np
import pytest

from irs_noma import conic
from irs_noma.channel import effective_channels
from irs_noma.rates import BeamformerSolution, eaves_rate, sampled_eaves_rates
from irs_noma.robustify import (build_joint_v, build_sprocedure_lmi, build_v_affine_in_u,
                                build_w_prime, gamma, nominal_lmi, reduced_nominal_lmi,
                                reduced_sprocedure_lmi, secrecy_lmi, svd_outer_terms)

from conftest import random_hermitian


def test_gamma_values():
    assert gamma(0.0) == 0.0
    assert gamma(1.0) == 1.0
    assert gamma(0.5) == pytest.approx(np.sqrt(2) - 1)


def test_w_prime_definition(rng):
    A, B = random_hermitian(rng, 3), random_hermitian(rng, 3)
    np.testing.assert_allclose(build_w_prime(A, B, 1.0), A - B)


def _instance(rng, M=3, N_t=4, N_e=2):
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, M))
    H = rng.standard_normal((M, N_t)) + 1j * rng.standard_normal((M, N_t))
    X = rng.standard_normal((M + N_t, N_e)) + 1j * rng.standard_normal((M + N_t, N_e))
    return theta, H, X


def test_joint_v_is_p_w_p_h(rng):
    theta, H, _ = _instance(rng)
    Wp = random_hermitian(rng, 4)
    P = np.vstack([np.diag(theta) @ H, np.eye(4)])
    np.testing.assert_allclose(build_joint_v(theta, H, Wp), P @ Wp @ P.conj().T, atol=1e-12)


def test_quadratic_form_through_stacked_channel(small_cs, rng):
    cs = small_cs
    N_t, M, _ = cs.dims
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, M))
    Wp = random_hermitian(rng, N_t)
    G = effective_channels(cs, theta).G_e
    V = build_joint_v(theta, cs.H_BI, Wp)
    np.testing.assert_allclose(G.conj().T @ Wp @ G, cs.X_hat.conj().T @ V @ cs.X_hat, atol=1e-12)


@pytest.mark.parametrize("seed", range(30))
def test_nominal_lmi_matches_rate_cap_for_rank_one(seed):
    rng = np.random.default_rng(seed)
    n_t, n_e = 4, 2
    w = rng.standard_normal(n_t) + 1j * rng.standard_normal(n_t)
    W_AN = random_hermitian(rng, n_t, psd=True) * rng.uniform(0.01, 2)
    G = rng.standard_normal((n_t, n_e)) + 1j * rng.standard_normal((n_t, n_e))
    R_M = 0.5
    sol = BeamformerSolution(W1=np.outer(w, w.conj()), W2=0 * W_AN, W_AN=W_AN, theta=np.zeros(1))
    Wp = build_w_prime(W_AN, sol.W1, R_M)
    lmi_ok = np.linalg.eigvalsh(G.conj().T @ Wp @ G + gamma(R_M) * np.eye(n_e))[0] >= 0
    assert lmi_ok == (eaves_rate(G, sol, 1) <= R_M)


@pytest.mark.parametrize("seed", range(10))
def test_reduced_nominal_equals_full(seed):
    rng = np.random.default_rng(seed)
    theta, H, X = _instance(rng)
    Wp = random_hermitian(rng, 4)
    V = build_joint_v(theta, H, Wp)
    np.testing.assert_allclose(reduced_nominal_lmi(X, theta, H, Wp, 0.5), nominal_lmi(X, V, 0.5),
                               atol=1e-10)


def test_reduced_sprocedure_equivalent_pointwise():
    rng = np.random.default_rng(0)
    agree = checked = 0
    for _ in range(400):
        theta, H, X = _instance(rng)
        w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        W_AN = random_hermitian(rng, 4, psd=True) * rng.uniform(0.05, 3)
        Wp = build_w_prime(W_AN, np.outer(w, w.conj()), 0.5)
        eps = rng.uniform(0.01, 0.5)
        tau = rng.uniform(0, 3)
        full = build_sprocedure_lmi(X, build_joint_v(theta, H, Wp), 0.5, eps, tau)
        red = reduced_sprocedure_lmi(X, theta, H, Wp, 0.5, eps, tau)
        a, b = np.linalg.eigvalsh(full)[0], np.linalg.eigvalsh(red)[0]
        if min(abs(a), abs(b)) < 1e-9:
            continue
        checked += 1
        agree += (a >= 0) == (b >= 0)
    assert checked > 300 and agree == checked


def test_sprocedure_certificate_is_sound(small_cs):
    # a design certified by the LMI must keep every sampled eavesdropping rate below the cap
    cs = small_cs
    N_t, M, _ = cs.dims
    R_M = 0.5
    theta = np.ones(M, complex)
    eff = effective_channels(cs, theta)
    w = 3 * eff.h1 / np.linalg.norm(eff.h1)
    W1 = np.outer(w, w.conj())
    prob = conic.ConicProblem()
    s = prob.real("s")
    tau = prob.real("tau")
    prob.add_nonneg(tau)
    prob.add_nonneg(s)
    W_AN = s * np.eye(N_t)
    Wp = build_w_prime(W_AN, W1, R_M)
    prob.add_psd(reduced_sprocedure_lmi(cs.X_hat, theta, cs.H_BI, Wp, R_M, cs.eps_e, tau))
    prob.minimize(s)
    res = prob.solve()
    assert res.ok
    sol = BeamformerSolution(W1=W1, W2=0 * W1, W_AN=res["s"] * np.eye(N_t), theta=theta)
    rates = sampled_eaves_rates(cs, sol, 1, 10_000, np.random.default_rng(0), boundary=True)
    assert rates.max() <= R_M + 1e-6
    # the nominal constraint alone allows less AN, so robustness has a visible cost
    prob2 = conic.ConicProblem()
    s2 = prob2.real("s")
    prob2.add_nonneg(s2)
    prob2.add_psd(reduced_nominal_lmi(cs.X_hat, theta, cs.H_BI,
                                      build_w_prime(s2 * np.eye(N_t), W1, R_M), R_M))
    prob2.minimize(s2)
    assert prob2.solve()["s"] <= res["s"] + 1e-7


def test_secrecy_lmi_dispatch(rng):
    theta, H, X = _instance(rng)
    V = build_joint_v(theta, H, random_hermitian(rng, 4))
    np.testing.assert_allclose(secrecy_lmi(X, V, 0.5, 0.0), nominal_lmi(X, V, 0.5))
    np.testing.assert_allclose(secrecy_lmi(X, V, 0.5, 0.1, 0.3),
                               build_sprocedure_lmi(X, V, 0.5, 0.1, 0.3))


def test_reduced_lmi_needs_positive_radius(rng):
    theta, H, X = _instance(rng)
    with pytest.raises(ValueError):
        reduced_sprocedure_lmi(X, theta, H, np.eye(4), 0.5, 0.0, 1.0)


def test_svd_terms_reconstruct(rng):
    H = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    Wp = random_hermitian(rng, 4)
    terms = svd_outer_terms(H, Wp)
    np.testing.assert_allclose(terms.reconstruct(3), H @ Wp @ H.conj().T, atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_v_affine_in_u_matches_theta_form(seed):
    rng = np.random.default_rng(seed)
    theta, H, _ = _instance(rng)
    theta = theta * rng.uniform(0, 1, theta.shape)
    Wp = random_hermitian(rng, 4)
    u = np.concatenate([theta.conj(), [1.0]])
    V = build_v_affine_in_u(np.outer(u, u.conj()), H, Wp)
    np.testing.assert_allclose(V, build_joint_v(theta, H, Wp), atol=1e-10)
