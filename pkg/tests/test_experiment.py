"""Tests for the repeated-measurement drivers and their bookkeeping."""

import math
from dataclasses import replace

import numpy as np
import pytest

from phonocount import (
    ConfigError,
    ExperimentConfig,
    HistoryUnderflowError,
    ImpossibleOutcomeError,
    ModelParams,
    collapse_metrics,
    constant_theta_distribution,
    fock_state,
    filter_values,
    poisson_distribution,
    rate_profile_report,
    run_cascaded_collapse,
    run_damped_sweep,
    run_jc_protocol,
)

REFERENCE = ModelParams(g=1.0, kappa1=0.2, kappa2=1.0, gamma=0.9)


# ---------------------------------------------------------------------------
# Configuration validation
# ---------------------------------------------------------------------------

def test_config_rejects_unknown_mode():
    with pytest.raises(ConfigError, match="mode"):
        ExperimentConfig(mode="collapse")


def test_config_initial_state_must_be_unique():
    with pytest.raises(ConfigError, match="over-specified"):
        ExperimentConfig(mode="cascaded_collapse", beta=2.0, fock_n=1)
    with pytest.raises(ConfigError, match="initial state missing"):
        ExperimentConfig(mode="cascaded_collapse")
    # rate_profile defaults to the ground state without an explicit initial
    ExperimentConfig(mode="rate_profile")


def test_config_named_field_errors():
    base = dict(mode="cascaded_collapse", beta=2.0)
    for kwargs, key in (
        (dict(r_max=-1), "r_max"),
        (dict(seed=-2), "seed"),
        (dict(dt=0.0), "dt"),
        (dict(delta=0.0), "delta"),
        (dict(epsilon=1.5), "epsilon"),
        (dict(n_max=0), "n_max"),
        (dict(idle_time=-0.1), "idle_time"),
        (dict(threads=0), "threads"),
        (dict(max_restarts=0), "max_restarts"),
    ):
        with pytest.raises(ConfigError, match=key):
            ExperimentConfig(**{**base, **kwargs})
    with pytest.raises(ConfigError, match="fock_n"):
        ExperimentConfig(mode="cascaded_collapse", fock_n=-1)
    with pytest.raises(ConfigError, match="N_bar"):
        ExperimentConfig(mode="damped_sweep", N_bar=-1.0, gamma_m_values=(0.0,))


def test_config_damped_sweep_requirements():
    with pytest.raises(ConfigError, match="gamma_m_values"):
        ExperimentConfig(mode="damped_sweep", N_bar=4.0)
    with pytest.raises(ConfigError, match="thermal"):
        ExperimentConfig(mode="damped_sweep", fock_n=2, gamma_m_values=(0.0,))
    with pytest.raises(ConfigError, match="gamma_m_values"):
        ExperimentConfig(mode="damped_sweep", N_bar=4.0, gamma_m_values=(-1e-4,))


def test_config_jc_schedule_exclusivity():
    with pytest.raises(ConfigError, match="thetas or theta"):
        ExperimentConfig(mode="jc_protocol", beta=2.0, thetas=(0.1,), theta=0.2)


def test_cascaded_requires_undamped_params():
    cfg = ExperimentConfig(mode="cascaded_collapse", beta=1.0,
                           params=ModelParams(gamma_m=1e-3, N_bar=1.0))
    with pytest.raises(ConfigError, match="gamma_m"):
        run_cascaded_collapse(cfg)


# ---------------------------------------------------------------------------
# Collapse metrics
# ---------------------------------------------------------------------------

def test_collapse_metrics_number_state():
    dist = fock_state(2, 6).number_distribution()
    m = collapse_metrics(dist)
    assert m["is_fock"] is True
    assert m["variance"] == pytest.approx(0.0, abs=1e-12)
    assert m["argmax"] == 2
    assert m["max_prob"] == pytest.approx(1.0, abs=1e-12)


def test_collapse_metrics_poisson():
    m = collapse_metrics(poisson_distribution(2.0, 25))
    assert m["is_fock"] is False
    assert m["variance"] == pytest.approx(4.0, abs=1e-5)


def test_collapse_metrics_threshold_override():
    dist = poisson_distribution(0.3, 8)  # P(0) ~ 0.914
    assert collapse_metrics(dist)["is_fock"] is True
    assert collapse_metrics(dist, threshold=0.99)["is_fock"] is False


# ---------------------------------------------------------------------------
# Cascaded collapse driver
# ---------------------------------------------------------------------------

def test_cascaded_r_max_zero_returns_initial_only():
    cfg = ExperimentConfig(mode="cascaded_collapse", beta=2.0, r_max=0)
    tr = run_cascaded_collapse(cfg)
    assert len(tr.distributions) == 1
    assert len(tr.records) == 0
    m = collapse_metrics(poisson_distribution(2.0, 18, tail_tol=1e-3))
    assert tr.metrics[0]["variance"] == pytest.approx(m["variance"], abs=1e-12)


def test_cascaded_uncoupled_measurements_learn_nothing():
    params = ModelParams(g=0.0, kappa1=0.0, kappa2=1.0, gamma=0.9)
    cfg = ExperimentConfig(mode="cascaded_collapse", beta=1.5, n_max=16,
                           params=params, r_max=3, seed=1)
    tr = run_cascaded_collapse(cfg)
    for dist in tr.distributions[1:]:
        np.testing.assert_allclose(dist.probs, tr.initial.probs, atol=1e-12)


def test_cascaded_recursion_consistency():
    cfg = ExperimentConfig(mode="cascaded_collapse", beta=2.0, params=REFERENCE,
                           r_max=10, seed=7)
    tr = run_cascaded_collapse(cfg)
    assert tr.recursion_max_error < 1e-10
    # independent recompute of the distribution recursion from the records
    p = tr.initial.probs.copy()
    for r, rec in enumerate(tr.records, start=1):
        p = p * filter_values(REFERENCE, len(p) - 1, rec.t_r)
        p = p / p.sum()
        assert np.max(np.abs(p - tr.distributions[r].probs)) < 1e-10


def test_cascaded_run_is_deterministic():
    cfg = ExperimentConfig(mode="cascaded_collapse", beta=2.0, params=REFERENCE,
                           r_max=8, seed=3)
    a = run_cascaded_collapse(cfg)
    b = run_cascaded_collapse(cfg)
    assert [r.t_r for r in a.records] == [r.t_r for r in b.records]
    for da, db in zip(a.distributions, b.distributions):
        assert np.array_equal(da.probs, db.probs)
    assert a.restart_total == b.restart_total


def test_cascaded_number_state_is_fixed_point():
    cfg = ExperimentConfig(mode="cascaded_collapse", fock_n=3, n_max=12,
                           params=REFERENCE, r_max=5, seed=0)
    tr = run_cascaded_collapse(cfg)
    for dist, m in zip(tr.distributions, tr.metrics):
        assert m["argmax"] == 3
        assert m["max_prob"] == pytest.approx(1.0, abs=1e-12)
    assert tr.bimodal is False


def test_cascaded_argmax_locks_after_collapse():
    cfg = ExperimentConfig(mode="cascaded_collapse", beta=2.0, params=REFERENCE,
                           r_max=100, seed=7)
    tr = run_cascaded_collapse(cfg)
    locked = None
    for m in tr.metrics:
        if m["max_prob"] > 1.0 - 1e-6:
            if locked is None:
                locked = m["argmax"]
            assert m["argmax"] == locked
    assert locked is not None  # this seed does collapse that far


def test_cascaded_window_diagnostics_and_snapshots():
    cfg = ExperimentConfig(mode="cascaded_collapse", beta=2.0, params=REFERENCE,
                           r_max=4, seed=2, wigner_r=(0, 2))
    tr = run_cascaded_collapse(cfg)
    assert len(tr.window_diagnostics) == 4
    for d in tr.window_diagnostics:
        assert d["kind"] == "post_dip"
        assert 0.0 < d["in_window_mass"] <= 1.0
        assert d["t_start"] < d["t_end"]
    assert set(tr.wigner.keys()) == {0, 2, 4}
    grid = tr.wigner[0]
    assert grid.W.shape == (81, 81)

    quiet = replace(cfg, wigner_r=())
    tr2 = run_cascaded_collapse(quiet)
    assert tr2.wigner == {}


def test_cascaded_restart_cap_raises_with_partial_trace():
    # a window pushed deep into the rate tail has almost no detection mass,
    # so the Bernoulli acceptance loop exhausts its restart budget
    cfg = ExperimentConfig(mode="cascaded_collapse", beta=2.0, params=REFERENCE,
                           r_max=3, seed=0, delta=6.0, max_restarts=1)
    with pytest.raises(HistoryUnderflowError) as exc:
        run_cascaded_collapse(cfg)
    partial = exc.value.partial_trace
    assert len(partial.distributions) == 1
    assert len(partial.records) == 0


# ---------------------------------------------------------------------------
# Idealized readout driver
# ---------------------------------------------------------------------------

def test_jc_constant_angle_matches_closed_form():
    cfg = ExperimentConfig(mode="jc_protocol", beta=3.0, n_max=40,
                           theta=math.pi / 3.0, r_max=50)
    tr = run_jc_protocol(cfg)
    closed = constant_theta_distribution(tr.initial, math.pi / 3.0, 50)
    np.testing.assert_allclose(tr.final_distribution().probs, closed.probs,
                               atol=1e-10)
    # history probability equals the product of per-round outcome sums
    p = tr.initial.probs.copy()
    root = np.sqrt(np.arange(len(p)) + 1.0)
    hist = 1.0
    for _ in range(50):
        p = p * np.cos(math.pi / 3.0 * root) ** 2
        hist *= p.sum()
        p = p / p.sum()
    assert tr.history_probability == pytest.approx(hist, rel=1e-10)
    assert tr.metrics[-1]["history_probability"] == pytest.approx(hist, rel=1e-10)


def test_jc_zero_angle_changes_nothing():
    cfg = ExperimentConfig(mode="jc_protocol", beta=2.0, theta=0.0, r_max=6)
    tr = run_jc_protocol(cfg)
    for dist in tr.distributions:
        np.testing.assert_allclose(dist.probs, tr.initial.probs, atol=1e-14)
    assert tr.history_probability == pytest.approx(1.0, abs=1e-12)


def test_jc_explicit_schedule_is_used_and_validated():
    thetas = (0.3, 0.7, 1.1)
    cfg = ExperimentConfig(mode="jc_protocol", beta=1.0, thetas=thetas, r_max=3)
    tr = run_jc_protocol(cfg)
    assert tr.thetas == list(thetas)
    assert tr.outcomes == [1, 1, 1]
    short = ExperimentConfig(mode="jc_protocol", beta=1.0, thetas=(0.3,), r_max=3)
    with pytest.raises(ConfigError, match="thetas"):
        run_jc_protocol(short)


def test_jc_random_schedule_is_seeded():
    cfg = ExperimentConfig(mode="jc_protocol", beta=2.0, r_max=10, seed=11)
    a = run_jc_protocol(cfg)
    b = run_jc_protocol(cfg)
    assert a.thetas == b.thetas
    assert all(math.pi / 8 <= th <= math.pi / 2 for th in a.thetas)


def test_jc_sampled_outcomes():
    cfg = ExperimentConfig(mode="jc_protocol", beta=2.0, r_max=25, seed=4,
                           jc_sample_outcomes=True)
    tr = run_jc_protocol(cfg)
    assert set(tr.outcomes) <= {0, 1}
    assert 0 in tr.outcomes  # this seed draws both outcomes
    assert 0.0 < tr.history_probability < 1.0
    b = run_jc_protocol(cfg)
    assert tr.outcomes == b.outcomes


def test_jc_impossible_postselection_raises():
    # the ground state cannot stay excited at a quarter-period angle
    cfg = ExperimentConfig(mode="jc_protocol", beta=0.0, theta=math.pi / 2.0,
                           r_max=5)
    with pytest.raises(ImpossibleOutcomeError):
        run_jc_protocol(cfg)


def test_jc_collapse_round_scales_quadratically_with_occupation():
    # with the interaction angle aligned to the mean occupation
    # (theta = pi / sqrt(n_bar + 1)), the readouts needed to reach a
    # number state grow like n_bar^2 (within a factor of 3)
    firsts = {}
    for beta in (1.0, 1.5, 2.0):
        theta = math.pi / math.sqrt(beta ** 2 + 1.0)
        cfg = ExperimentConfig(mode="jc_protocol", beta=beta, theta=theta,
                               r_max=60)
        tr = run_jc_protocol(cfg)
        firsts[beta] = tr.first_fock_r()
    assert firsts[1.0] is not None and firsts[2.0] is not None
    for beta in (1.5, 2.0):
        expected = (beta ** 2 / 1.0 ** 2) ** 2
        observed = firsts[beta] / firsts[1.0]
        assert expected / 3.0 <= observed <= expected * 3.0


# ---------------------------------------------------------------------------
# Damped sweep driver
# ---------------------------------------------------------------------------

def test_damped_sweep_structure_and_shared_stream():
    cfg = ExperimentConfig(mode="damped_sweep", params=REFERENCE, N_bar=1.0,
                           n_max=20, r_max=4, seed=5,
                           gamma_m_values=(0.0, 0.0, 1e-3))
    traces = run_damped_sweep(cfg)
    assert [t.gamma_m for t in traces] == [0.0, 0.0, 1e-3]
    a, b, c = traces
    np.testing.assert_allclose(a.initial.probs, c.initial.probs, atol=1e-15)
    # identical damping consumes identical draws: bitwise-equal runs
    assert [r.t_r for r in a.records] == [r.t_r for r in b.records]
    for da, db in zip(a.distributions, b.distributions):
        assert np.array_equal(da.probs, db.probs)
    # a different damping rate reshapes the profile, so times differ
    assert [r.t_r for r in a.records] != [r.t_r for r in c.records]
    assert all(len(t.records) == 4 for t in traces)
    assert all("purity" in m for t in traces for m in t.metrics)
    assert "thermal_truncated_tail" in a.tail_audit


def test_damped_sweep_undamped_entry_follows_filter_recursion():
    cfg = ExperimentConfig(mode="damped_sweep", params=REFERENCE, N_bar=1.0,
                           n_max=20, r_max=4, seed=5, gamma_m_values=(0.0,))
    (tr,) = run_damped_sweep(cfg)
    p = tr.initial.probs.copy()
    for r, rec in enumerate(tr.records, start=1):
        p = p * filter_values(REFERENCE, 20, rec.t_r)
        p = p / p.sum()
        assert np.max(np.abs(p - tr.distributions[r].probs)) < 1e-8


def test_damped_sweep_threads_match_serial():
    kwargs = dict(mode="damped_sweep", params=REFERENCE, N_bar=1.0, n_max=20,
                  r_max=3, seed=5, gamma_m_values=(0.0, 1e-3))
    serial = run_damped_sweep(ExperimentConfig(**kwargs))
    threaded = run_damped_sweep(ExperimentConfig(**kwargs, threads=2))
    for s, t in zip(serial, threaded):
        assert np.array_equal(s.final_distribution().probs,
                              t.final_distribution().probs)
        assert [r.t_r for r in s.records] == [r.t_r for r in t.records]


def test_damped_sweep_mode_guard():
    cfg = ExperimentConfig(mode="cascaded_collapse", beta=2.0)
    with pytest.raises(ConfigError, match="damped_sweep"):
        run_damped_sweep(cfg)


# ---------------------------------------------------------------------------
# Rate-profile report
# ---------------------------------------------------------------------------

def test_rate_report_decomposition_identity():
    cfg = ExperimentConfig(mode="rate_profile", fock_n=0, n_max=4, params=REFERENCE,
                           t_max=20.0)
    rep = rate_profile_report(cfg)
    assert rep.decomposition_error < 1e-12
    total = rep.source + rep.cavity + rep.interference
    np.testing.assert_allclose(total, rep.profile.rates, atol=1e-12)
    # the emission starts entirely from the source
    assert rep.source[0] == pytest.approx(REFERENCE.gamma, abs=1e-12)
    assert rep.cavity[0] == pytest.approx(0.0, abs=1e-14)
    assert rep.interference[0] == pytest.approx(0.0, abs=1e-14)
    # destructive interference digs the dip
    assert rep.interference.min() < 0.0
    assert rep.dip_time is not None
    assert rep.window is not None
    assert rep.analytic is None  # coupled model has no closed form


def test_rate_report_analytic_overlay():
    params = ModelParams(g=0.0, kappa1=0.0, kappa2=1.0, gamma=0.9)
    cfg = ExperimentConfig(mode="rate_profile", fock_n=0, n_max=2,
                           params=params, t_max=20.0)
    rep = rate_profile_report(cfg)
    assert rep.analytic is not None
    assert rep.max_analytic_error < 1e-8
    assert rep.dip_time == pytest.approx(2.0 * math.log(2.0 / 1.9) / 0.1,
                                         abs=1e-4)


def test_rate_report_skips_overlay_at_the_pole():
    params = ModelParams(g=0.0, kappa1=0.0, kappa2=1.0, gamma=1.0)
    cfg = ExperimentConfig(mode="rate_profile", fock_n=0, n_max=2,
                           params=params, t_max=20.0)
    rep = rate_profile_report(cfg)
    assert rep.analytic is None
    assert rep.profile.rates.min() >= 0.0


def test_rate_report_rejects_damped_params():
    cfg = ExperimentConfig(mode="rate_profile", fock_n=0,
                           params=ModelParams(gamma_m=1e-4, N_bar=1.0))
    with pytest.raises(ConfigError, match="gamma_m"):
        rate_profile_report(cfg)
