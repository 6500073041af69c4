"""Tests for the cascaded one-photon no-count dynamics.

The key oracle lives in `dense_generator`: the cascaded master equation is
built from scratch on the full tensor space (source qubit, two cavities,
mechanics) with kron operators, and its no-count generator is exponentiated
with scipy. The per-number-block implementation must reproduce every
amplitude of that dense evolution.
"""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from phonocount import (
    MechanicalState,
    ModelParams,
    SubspaceAmplitudes,
    ZeroRateError,
    analytic_dip_time_g0,
    analytic_rate_g0,
    apply_jump,
    coherent_state,
    detection_rate,
    evolve_no_count,
    filter_values,
    fock_state,
    generator_matrix,
    no_count_probability,
    no_count_trajectory,
    rate_decomposition,
)

REFERENCE = ModelParams(g=1.0, kappa1=0.2, kappa2=1.0, gamma=0.9)


# ---------------------------------------------------------------------------
# Independent dense oracle on the full tensor space
# ---------------------------------------------------------------------------

def dense_generator(params: ModelParams, mech_dim: int):
    """No-count generator on qubit (x) cav1 (x) cav2 (x) mechanics.

    Built directly from the cascaded master equation: collective jump
    J = sqrt(gamma) sm + sqrt(kappa2) a2, cascade Hamiltonian
    (i/2) sqrt(gamma kappa2) (sp a2 - sm a2dag), photon-phonon exchange
    g (a1dag a2 bdag + a2dag a1 b), plus kappa1 and kappa2' losses.
    """
    def low(dim):
        m = np.zeros((dim, dim))
        idx = np.arange(1, dim)
        m[idx - 1, idx] = np.sqrt(idx)
        return m

    i2 = np.eye(2)
    im = np.eye(mech_dim)
    two = low(2)

    def lift(q, c1, c2, m):
        return np.kron(np.kron(np.kron(q, c1), c2), m)

    sm = lift(two, i2, i2, im)
    a1 = lift(i2, two, i2, im)
    a2 = lift(i2, i2, two, im)
    b = lift(i2, i2, i2, low(mech_dim))

    g, k1, k2, k2p, gam = (params.g, params.kappa1, params.kappa2,
                           params.kappa2_prime, params.gamma)
    J = math.sqrt(gam) * sm + math.sqrt(k2) * a2
    H = g * (a1.conj().T @ a2 @ b.conj().T + a2.conj().T @ a1 @ b)
    H = H + 0.5j * math.sqrt(gam * k2) * (sm.conj().T @ a2 - sm @ a2.conj().T)
    K = (-1j * H - 0.5 * (J.conj().T @ J)
         - 0.5 * k1 * (a1.conj().T @ a1) - 0.5 * k2p * (a2.conj().T @ a2))
    return K, (sm, a1, a2, b)


def dense_indices(n_max: int, mech_dim: int):
    """Flat tensor indices of (excited source, n), (photon in cav2, n), (photon in cav1, n+1)."""
    def flat(q, c1, c2, m):
        return ((q * 2 + c1) * 2 + c2) * mech_dim + m

    src = [flat(1, 0, 0, n) for n in range(n_max + 1)]
    cav2 = [flat(0, 0, 1, n) for n in range(n_max + 1)]
    cav1 = [flat(0, 1, 0, n + 1) for n in range(n_max + 1)]
    return np.array(src), np.array(cav2), np.array(cav1)


def dense_initial(beta: np.ndarray, mech_dim: int) -> np.ndarray:
    n_max = len(beta) - 1
    psi = np.zeros(8 * mech_dim, dtype=complex)
    src, _, _ = dense_indices(n_max, mech_dim)
    psi[src] = beta
    return psi


def test_block_generator_matches_dense_oracle():
    params = ModelParams(g=1.0, kappa1=0.2, kappa2=1.0, kappa2_prime=0.1, gamma=0.9)
    n_max = 5
    mech_dim = n_max + 2
    K, _ = dense_generator(params, mech_dim)
    src, cav2, cav1 = dense_indices(n_max, mech_dim)

    rng = np.random.default_rng(3)
    beta = rng.normal(size=n_max + 1) + 1j * rng.normal(size=n_max + 1)
    beta /= np.linalg.norm(beta)

    state = SubspaceAmplitudes.from_mechanical(
        MechanicalState(beta), params)
    psi0 = dense_initial(beta, mech_dim)

    for t in (0.1, 0.5, 1.3, 3.0, 7.0):
        psi = expm(K * t) @ psi0
        evolved = evolve_no_count(state, t)
        np.testing.assert_allclose(evolved.c[:, 0], psi[src], atol=1e-10)
        np.testing.assert_allclose(evolved.c[:, 1], psi[cav2], atol=1e-10)
        np.testing.assert_allclose(evolved.c[:, 2], psi[cav1], atol=1e-10)
        # nothing leaks outside the tracked one-excitation components
        tracked = (np.abs(psi[src]) ** 2 + np.abs(psi[cav2]) ** 2
                   + np.abs(psi[cav1]) ** 2).sum()
        assert abs(float(np.vdot(psi, psi).real) - tracked) < 1e-12


def test_generator_entries():
    params = ModelParams(g=1.3, kappa1=0.25, kappa2=1.1, kappa2_prime=0.07, gamma=0.8)
    n = 4
    A = generator_matrix(n, params)
    root = math.sqrt(n + 1.0)
    expected = np.array([
        [-0.4, 0.0, 0.0],
        [-math.sqrt(0.8 * 1.1), -(1.1 + 0.07) / 2.0, -1.3j * root],
        [0.0, -1.3j * root, -0.125],
    ], dtype=complex)
    np.testing.assert_allclose(A, expected, atol=1e-15)
    with pytest.raises(ValueError):
        generator_matrix(-1, params)


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(kappa2=0.0)
    with pytest.raises(ValueError):
        ModelParams(gamma=-0.1)
    # a source that never fires and an uncoupled mechanics are both legal
    ModelParams(gamma=0.0)
    ModelParams(g=0.0)


def test_evolution_semigroup_property():
    st = SubspaceAmplitudes.from_mechanical(coherent_state(1.3, 14), REFERENCE)
    one = evolve_no_count(st, 2.1)
    two = evolve_no_count(evolve_no_count(st, 0.9), 1.2)
    np.testing.assert_allclose(one.c, two.c, atol=1e-12)
    assert one.t == pytest.approx(2.1, abs=1e-15)


def test_evolution_phase_covariance():
    # blocks are diagonal in n, so number-dependent phases commute through
    st = coherent_state(1.1 + 0.4j, 12)
    phases = np.exp(1j * 0.37 * np.arange(13))
    plain = evolve_no_count(SubspaceAmplitudes.from_mechanical(st, REFERENCE), 1.7)
    rotated = evolve_no_count(SubspaceAmplitudes(
        (st.amplitudes * phases)[:, None] * np.array([1.0, 0.0, 0.0]), REFERENCE), 1.7)
    np.testing.assert_allclose(rotated.c, plain.c * phases[:, None], atol=1e-12)


def test_block_matrices_match_scipy_expm():
    params = ModelParams(g=0.7, kappa1=0.3, kappa2=1.2, kappa2_prime=0.05, gamma=0.6)
    from phonocount.cascaded import _propagator
    prop = _propagator(params, 6)
    E = prop.block_matrices(0.8)
    for n in range(6):
        np.testing.assert_allclose(E[n], expm(generator_matrix(n, params) * 0.8),
                                   atol=1e-12)


def test_degenerate_rates_use_expm_fallback():
    # g = 0, gamma = kappa2 makes the upper 2x2 block defective
    params = ModelParams(g=0.0, kappa1=0.0, kappa2=1.0, gamma=1.0)
    st = SubspaceAmplitudes.from_mechanical(fock_state(0, 2), params)
    ev = evolve_no_count(st, 1.5)
    A = generator_matrix(0, params)
    expected = expm(A * 1.5) @ np.array([1.0, 0.0, 0.0], dtype=complex)
    np.testing.assert_allclose(ev.c[0], expected, atol=1e-12)
    assert np.all(np.isfinite(ev.c.view(float)))


def test_norm_never_increases():
    st = SubspaceAmplitudes.from_mechanical(coherent_state(1.5, 16), REFERENCE)
    norms = [no_count_probability(evolve_no_count(st, t))
             for t in np.linspace(0.0, 12.0, 25)]
    assert norms[0] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(norms) <= 1e-12)


def test_rate_decomposition_identity():
    st = evolve_no_count(
        SubspaceAmplitudes.from_mechanical(coherent_state(2.0, 22), REFERENCE), 0.9)
    source, cavity, interference = rate_decomposition(st)
    assert source >= 0.0 and cavity >= 0.0
    assert source + cavity + interference == pytest.approx(
        detection_rate(st), abs=1e-14)


def test_analytic_rate_matches_numeric():
    params = ModelParams(g=0.0, kappa1=0.0, kappa2=1.0, gamma=0.9)
    st = SubspaceAmplitudes.from_mechanical(fock_state(0, 2), params)
    for t in np.linspace(0.01, 20.0, 60):
        numeric = detection_rate(evolve_no_count(st, float(t)))
        assert numeric == pytest.approx(analytic_rate_g0(float(t), 0.9, 1.0),
                                        abs=1e-10)


def test_analytic_rate_array_and_t0():
    r = analytic_rate_g0(np.array([0.0, 1.0]), 0.9, 1.0)
    assert r[0] == pytest.approx(0.9, abs=1e-14)  # only the source emits at t=0
    assert r.shape == (2,)


def test_analytic_pole_raises():
    with pytest.raises(ValueError):
        analytic_rate_g0(1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        analytic_dip_time_g0(1.0, 1.0)


def test_dip_time_is_exact_zero():
    t_star = analytic_dip_time_g0(0.9, 1.0)
    assert t_star == pytest.approx(1.0258658877510098, abs=1e-12)
    assert analytic_rate_g0(t_star, 0.9, 1.0) == pytest.approx(0.0, abs=1e-13)
    assert analytic_rate_g0(t_star - 0.05, 0.9, 1.0) > 0.0
    assert analytic_rate_g0(t_star + 0.05, 0.9, 1.0) > 0.0


def test_apply_jump_combines_source_and_cavity():
    c = np.zeros((4, 3), dtype=complex)
    c[1, 0] = 0.3
    c[1, 1] = 0.2j
    c[2, 0] = 0.1
    st = SubspaceAmplitudes(c, REFERENCE)
    result = apply_jump(st)
    raw = np.zeros(4, dtype=complex)
    raw[1] = math.sqrt(0.9) * 0.3 + 1.0 * 0.2j
    raw[2] = math.sqrt(0.9) * 0.1
    norm2 = float(np.vdot(raw, raw).real)
    assert result.jump_norm == pytest.approx(norm2, abs=1e-14)
    assert result.jump_norm == pytest.approx(detection_rate(st), abs=1e-14)
    np.testing.assert_allclose(result.mech_state.amplitudes,
                               raw / math.sqrt(norm2), atol=1e-14)


def test_apply_jump_zero_rate_raises():
    c = np.zeros((3, 3), dtype=complex)
    c[:, 2] = 0.5  # population only in the lossy cavity: nothing to detect
    with pytest.raises(ZeroRateError):
        apply_jump(SubspaceAmplitudes(c, REFERENCE))


def test_filter_is_number_independent_without_coupling():
    params = ModelParams(g=0.0, kappa1=0.0, kappa2=1.0, gamma=0.9)
    f = filter_values(params, 12, 1.7)
    assert np.max(np.abs(f - f[0])) < 1e-12 * max(f[0], 1e-30)


def test_filter_matches_jump_distribution():
    # blocks start at (beta_n, 0, 0), so the post-click distribution is the
    # initial one multiplied by the unit-start filter
    st = coherent_state(1.4, 14)
    amps = SubspaceAmplitudes.from_mechanical(st, REFERENCE)
    t = 1.1
    clicked = apply_jump(evolve_no_count(amps, t)).mech_state
    f = filter_values(REFERENCE, 14, t)
    expected = f * np.abs(st.amplitudes) ** 2
    expected /= expected.sum()
    np.testing.assert_allclose(clicked.number_distribution().probs, expected,
                               atol=1e-12)


def test_probability_bookkeeping():
    # survival + detected + lost = 1 at every time
    traj = no_count_trajectory(
        SubspaceAmplitudes.from_mechanical(coherent_state(2.0, 22), REFERENCE),
        dt=0.005, t_max=30.0)
    for t in (2.0, 10.0, 30.0):
        idx = int(round(t / 0.005))
        total = (traj.survival[idx] + traj.integrated_rate(t)
                 + traj.error_probability(t))
        assert total == pytest.approx(1.0, abs=1e-6)


def test_trajectory_state_at_matches_direct_evolution():
    initial = SubspaceAmplitudes.from_mechanical(coherent_state(1.0, 12), REFERENCE)
    traj = no_count_trajectory(initial, t_max=5.0)
    st = traj.state_at(2.345)
    direct = evolve_no_count(initial, 2.345)
    np.testing.assert_allclose(st.c, direct.c, atol=1e-13)
    # grid rows agree with direct propagation too
    k = 200
    np.testing.assert_allclose(traj.amps[k],
                               evolve_no_count(initial, traj.times[k]).c,
                               atol=1e-12)


def test_trajectory_extends_until_rate_decays():
    initial = SubspaceAmplitudes.from_mechanical(fock_state(1, 6), REFERENCE)
    traj = no_count_trajectory(initial)
    assert traj.rates[-1] < 0.5e-3 * traj.rates.max()
    assert traj.times[0] == 0.0
    dt = np.diff(traj.times)
    np.testing.assert_allclose(dt, dt[0], atol=1e-12)


def test_trajectory_rate_grid_is_accurate():
    # linear interpolation of the stored rate vs exact rate at midpoints
    initial = SubspaceAmplitudes.from_mechanical(fock_state(0, 4), REFERENCE)
    traj = no_count_trajectory(initial, dt=0.005, t_max=8.0)
    rng = np.random.default_rng(1)
    rmax = traj.rates.max()
    for _ in range(12):
        t = float(rng.uniform(0.05, 7.9))
        idx = int(t / 0.005)
        frac = (t - traj.times[idx]) / 0.005
        interp = (1 - frac) * traj.rates[idx] + frac * traj.rates[idx + 1]
        exact = detection_rate(traj.state_at(t))
        assert abs(interp - exact) < 1e-4 * rmax


def test_loss_rates_track_norm_derivative():
    params = ModelParams(g=1.0, kappa1=0.2, kappa2=1.0, kappa2_prime=0.15, gamma=0.9)
    st = SubspaceAmplitudes.from_mechanical(coherent_state(1.2, 13), params)
    t, h = 1.4, 1e-5
    plus = no_count_probability(evolve_no_count(st, t + h))
    minus = no_count_probability(evolve_no_count(st, t - h))
    mid = evolve_no_count(st, t)
    drain = (detection_rate(mid)
             + params.kappa1 * float(np.vdot(mid.c[:, 2], mid.c[:, 2]).real)
             + params.kappa2_prime * float(np.vdot(mid.c[:, 1], mid.c[:, 1]).real))
    assert (plus - minus) / (2 * h) == pytest.approx(-drain, abs=1e-8)
