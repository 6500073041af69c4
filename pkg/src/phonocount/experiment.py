"""Repeated-measurement protocols and their bookkeeping.

Three drivers share a common shape: prepare the mechanics, load a photon,
evolve without a click, draw a detection time from the rate profile,
collapse, repeat. run_cascaded_collapse does this with pure states,
run_damped_sweep with density matrices over a list of mechanical damping
rates (same random stream per rate for comparability), and
run_jc_protocol replaces the cascade with the idealized two-outcome
interaction-time readout.

Every driver returns a CollapseTrace holding the per-measurement number
distributions, detection records, collapse metrics and optional Wigner
snapshots, plus cross-check diagnostics (distribution-recursion error,
restart counts, tail audits).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cascaded import (DetectionRecord, ModelParams, SubspaceAmplitudes,
                       analytic_rate_g0, apply_jump, filter_values,
                       no_count_trajectory)
from .damped import (MechanicalDensity, apply_jump_damped,
                     damped_no_count_trajectory, evolve_mechanics,
                     rearm_source)
from .errors import (ConfigError, HistoryUnderflowError, NoDipError,
                     NumericalFailure)
from .fock import (FockCutoff, MechanicalState, NumberDistribution,
                   coherent_state, default_cutoff, fock_state, number_moments,
                   thermal_distribution, wigner_transform)
from .jc import apply_jc_measurement, sample_jc_outcome
from .sampling import (SamplingWindow, _cumulative_mass, find_window,
                       sample_detection_time)

MODES = ("jc_protocol", "cascaded_collapse", "damped_sweep", "rate_profile",
         "wigner_series")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run (or sweep) bit-identically."""

    mode: str
    params: ModelParams = ModelParams()
    beta: complex = None
    N_bar: float = None
    fock_n: int = None
    n_max: int = None
    r_max: int = 100
    seed: int = 0
    dt: float = 0.005
    delta: float = 0.05
    epsilon: float = 1e-3
    t_max: float = None
    gamma_m_values: tuple = None
    thetas: tuple = None
    theta: float = None
    jc_sample_outcomes: bool = False
    idle_time: float = 0.0
    wigner_r: tuple = (0, 10, 30, 50)
    wigner_resolution: int = 81
    max_restarts: int = 200
    threads: int = 1
    tail_tol: float = 1e-3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("mode must be one of %s, got %r" % (", ".join(MODES), self.mode))
        given = [k for k in ("beta", "N_bar", "fock_n") if getattr(self, k) is not None]
        if len(given) > 1:
            raise ConfigError("initial state over-specified: give only one of %s"
                              % " / ".join(given))
        if not given and self.mode != "rate_profile":
            raise ConfigError("initial state missing: set one of beta / N_bar / fock_n")
        if self.r_max < 0:
            raise ConfigError("r_max must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.dt <= 0:
            raise ConfigError("dt must be > 0")
        if self.delta <= 0:
            raise ConfigError("delta must be > 0")
        if not (0 < self.epsilon < 1):
            raise ConfigError("epsilon must be in (0, 1)")
        if self.n_max is not None and self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if self.idle_time < 0:
            raise ConfigError("idle_time must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.max_restarts < 1:
            raise ConfigError("max_restarts must be >= 1")
        if self.mode == "damped_sweep":
            if not self.gamma_m_values:
                raise ConfigError("damped_sweep requires gamma_m_values")
            if self.N_bar is None:
                raise ConfigError("damped_sweep requires a thermal initial state (N_bar)")
            if any(g < 0 for g in self.gamma_m_values):
                raise ConfigError("gamma_m_values must be >= 0")
        if self.mode == "jc_protocol":
            if self.thetas is not None and self.theta is not None:
                raise ConfigError("give either thetas or theta, not both")
        if self.fock_n is not None and self.fock_n < 0:
            raise ConfigError("fock_n must be >= 0")
        if self.N_bar is not None and self.N_bar < 0:
            raise ConfigError("N_bar must be >= 0")


def _config_cutoff(config: ExperimentConfig) -> FockCutoff:
    if config.n_max is not None:
        return FockCutoff(config.n_max)
    if config.beta is not None:
        return default_cutoff(abs(config.beta) ** 2)
    if config.N_bar is not None:
        return default_cutoff(config.N_bar)
    if config.fock_n is not None:
        return default_cutoff(float(config.fock_n))
    return default_cutoff(0.0)


def _initial_pure_state(config: ExperimentConfig) -> MechanicalState:
    cutoff = _config_cutoff(config)
    if config.beta is not None:
        return coherent_state(config.beta, cutoff, tail_tol=config.tail_tol)
    if config.fock_n is not None:
        return fock_state(config.fock_n, cutoff)
    if config.N_bar is not None:
        raise ConfigError("N_bar initial state needs the density-matrix path "
                          "(mode damped_sweep)")
    return fock_state(0, cutoff)


def collapse_metrics(dist: NumberDistribution, threshold: float = 0.9) -> dict:
    """Entropy, variance, argmax, max_prob and the Fock-proximity flag."""
    m = number_moments(dist)
    return {"entropy": m.entropy, "variance": m.variance, "argmax": m.argmax,
            "max_prob": m.max_prob, "is_fock": bool(m.max_prob >= threshold)}


@dataclass
class CollapseTrace:
    """Full record of one repeated-measurement run."""

    config: ExperimentConfig
    gamma_m: float
    initial: NumberDistribution
    distributions: list = field(default_factory=list)
    records: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    wigner: dict = field(default_factory=dict)
    thetas: list = None
    outcomes: list = None
    history_probability: float = 1.0
    recursion_max_error: float = 0.0
    restart_total: int = 0
    bimodal: bool = False
    tail_audit: dict = field(default_factory=dict)
    window_diagnostics: list = field(default_factory=list)

    def first_fock_r(self, threshold: float = 0.9):
        """First measurement index whose max_prob reaches threshold, or None."""
        for r, m in enumerate(self.metrics):
            if m["max_prob"] >= threshold:
                return r
        return None

    def final_distribution(self) -> NumberDistribution:
        return self.distributions[-1]


def _mark_bimodal(trace: CollapseTrace) -> bool:
    locked = None
    for m in trace.metrics:
        if m["max_prob"] >= 0.8:
            if locked is None:
                locked = m["argmax"]
            elif m["argmax"] != locked:
                return True
    p = np.sort(trace.distributions[-1].probs)
    return bool(len(p) >= 2 and p[-2] >= 0.25)


def _wigner_rounds(config: ExperimentConfig) -> set:
    if not config.wigner_r:
        return set()
    rounds = {r for r in config.wigner_r if 0 <= r <= config.r_max}
    rounds.add(config.r_max)
    return rounds


def _fallback_window(profile) -> SamplingWindow:
    """Whole-profile window for rate curves without an interference dip."""
    t = profile.times
    cum = _cumulative_mass(t, profile.rates)
    total = float(cum[-1])
    t_start = float(t[1])
    mass = total - float(np.interp(t_start, t, cum))
    return SamplingWindow(t_start, float(t[-1]), mass, total)


def _draw_window_acceptance(window: SamplingWindow, rng, config: ExperimentConfig,
                            trace: CollapseTrace) -> int:
    """Bernoulli draws until the photon is detected inside the window.

    A failed draw models a discarded run (photon lost or detected outside
    the useful window); the mechanics are kept and a fresh photon loaded.
    """
    restarts = 0
    while rng.random() >= window.in_window_mass:
        restarts += 1
        if restarts > config.max_restarts:
            err = HistoryUnderflowError(
                "window detection probability %.3e: exceeded %d restarts"
                % (window.in_window_mass, config.max_restarts))
            err.partial_trace = trace
            raise err
    return restarts


def run_cascaded_collapse(config: ExperimentConfig) -> CollapseTrace:
    """Repeated single-photon readout of a pure mechanical state.

    Each round re-arms the source around the current mechanics, evolves
    the no-count amplitudes, samples a click time from the post-dip
    window, and applies the jump. The returned trace also carries the
    largest deviation between the state-vector path and the number
    distribution recursion P^r(n) ∝ P^{r-1}(n) P(n, t_r).
    """
    if config.params.gamma_m != 0:
        raise ConfigError("gamma_m must be 0 for the pure-state path "
                          "(use mode damped_sweep)")
    mech = _initial_pure_state(config)
    cutoff = mech.cutoff
    dist0 = mech.number_distribution()
    trace = CollapseTrace(config, 0.0, dist0)
    trace.tail_audit["initial_tail_mass"] = float(dist0.tail_mass())
    trace.distributions.append(dist0)
    trace.metrics.append(collapse_metrics(dist0))
    snap = _wigner_rounds(config)
    if 0 in snap:
        trace.wigner[0] = wigner_transform(mech, resolution=config.wigner_resolution)

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    p_rec = dist0.probs.copy()

    for r in range(1, config.r_max + 1):
        amp0 = SubspaceAmplitudes.from_mechanical(mech, config.params)
        traj = no_count_trajectory(amp0, dt=config.dt, t_max=config.t_max)
        profile = traj.rate_profile()
        try:
            window = find_window(profile, config.delta, config.epsilon)
            kind = "post_dip"
        except NoDipError:
            window = _fallback_window(profile)
            kind = "full_profile"
        restarts = _draw_window_acceptance(window, rng, config, trace)
        trace.restart_total += restarts
        t_r = sample_detection_time(profile, window, rng)

        state_r = traj.state_at(t_r)
        survival = state_r.norm_squared()
        if survival < 1e-280:
            err = HistoryUnderflowError("no-count survival underflow at r=%d" % r)
            err.partial_trace = trace
            raise err
        jump = apply_jump(state_r)
        mech = jump.mech_state
        dist_r = mech.number_distribution()

        p_rec = p_rec * filter_values(config.params, cutoff, t_r)
        s = p_rec.sum()
        if s < 1e-280:
            err = HistoryUnderflowError("distribution recursion underflow at r=%d" % r)
            err.partial_trace = trace
            raise err
        p_rec = p_rec / s
        trace.recursion_max_error = max(
            trace.recursion_max_error,
            float(np.max(np.abs(p_rec - dist_r.probs))))

        trace.records.append(DetectionRecord(r, t_r, survival, jump.jump_norm,
                                             mech, traj.error_probability(t_r),
                                             restarts))
        trace.distributions.append(dist_r)
        trace.metrics.append(collapse_metrics(dist_r))
        trace.window_diagnostics.append({
            "r": r, "kind": kind, "t_start": window.t_start,
            "t_end": window.t_end, "in_window_mass": window.in_window_mass,
            "discarded_fraction": window.discarded_fraction})
        if r in snap:
            trace.wigner[r] = wigner_transform(mech, resolution=config.wigner_resolution)

    trace.bimodal = _mark_bimodal(trace)
    return trace


def _run_damped_collapse(config: ExperimentConfig, params: ModelParams) -> CollapseTrace:
    cutoff = _config_cutoff(config)
    dist0 = thermal_distribution(config.N_bar, cutoff, tail_tol=config.tail_tol)
    mech = MechanicalDensity.from_distribution(dist0)
    trace = CollapseTrace(config, params.gamma_m, dist0)
    trace.tail_audit["initial_tail_mass"] = float(dist0.tail_mass())
    trace.tail_audit["thermal_truncated_tail"] = float(
        (config.N_bar / (1.0 + config.N_bar)) ** (cutoff.n_max + 1))
    trace.distributions.append(dist0)
    m0 = collapse_metrics(dist0)
    m0["purity"] = mech.purity()
    trace.metrics.append(m0)
    snap = _wigner_rounds(config)
    if 0 in snap:
        trace.wigner[0] = wigner_transform(mech.rho_m, resolution=config.wigner_resolution)

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))

    for r in range(1, config.r_max + 1):
        cond = rearm_source(mech, params)
        traj = damped_no_count_trajectory(cond, t_max=config.t_max)
        profile = traj.rate_profile()
        try:
            window = find_window(profile, config.delta, config.epsilon)
            kind = "post_dip"
        except NoDipError:
            window = _fallback_window(profile)
            kind = "full_profile"
        restarts = _draw_window_acceptance(window, rng, config, trace)
        trace.restart_total += restarts
        t_r = sample_detection_time(profile, window, rng)

        dens_r = traj.density_at(t_r)
        survival = dens_r.trace()
        if survival < 1e-280:
            err = HistoryUnderflowError("no-count survival underflow at r=%d" % r)
            err.partial_trace = trace
            raise err
        jump = apply_jump_damped(dens_r)
        mech = jump.mech_density
        low = mech.min_eigenvalue()
        if low < -1e-10:
            err = NumericalFailure("post-measurement density lost positivity "
                                   "(min eigenvalue %.3e at r=%d)" % (low, r))
            err.partial_trace = trace
            raise err
        if config.idle_time > 0:
            mech = evolve_mechanics(mech, config.idle_time, params)

        dist_r = mech.diagonal()
        trace.records.append(DetectionRecord(r, t_r, survival, jump.jump_norm,
                                             mech, 0.0, restarts))
        trace.distributions.append(dist_r)
        mr = collapse_metrics(dist_r)
        mr["purity"] = mech.purity()
        trace.metrics.append(mr)
        trace.window_diagnostics.append({
            "r": r, "kind": kind, "t_start": window.t_start,
            "t_end": window.t_end, "in_window_mass": window.in_window_mass,
            "discarded_fraction": window.discarded_fraction})
        if r in snap:
            trace.wigner[r] = wigner_transform(mech.rho_m,
                                               resolution=config.wigner_resolution)

    trace.bimodal = _mark_bimodal(trace)
    return trace


def run_damped_sweep(config: ExperimentConfig) -> list:
    """One damped collapse run per gamma_m value, sharing the random stream.

    Every entry starts from the same thermal state and consumes the same
    seed-derived uniform draws, so differences between entries reflect
    the damping rate, not sampling noise.
    """
    if config.mode != "damped_sweep":
        raise ConfigError("mode must be damped_sweep, got %r" % config.mode)

    def one(gm: float) -> CollapseTrace:
        params = replace(config.params, gamma_m=gm, N_bar=config.N_bar)
        return _run_damped_collapse(config, params)

    values = list(config.gamma_m_values)
    if config.threads > 1 and len(values) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            return list(pool.map(one, values))
    return [one(gm) for gm in values]


def run_jc_protocol(config: ExperimentConfig) -> CollapseTrace:
    """Idealized interaction-time readout, repeated r_max times.

    The qubit is prepared excited, interacts for an angle θ_r and is
    measured. By default every readout postselects the excited outcome
    (x = 1) and the trace records the cumulative history probability;
    with jc_sample_outcomes the outcome is drawn from the Born rule
    instead.
    """
    if config.mode != "jc_protocol":
        raise ConfigError("mode must be jc_protocol, got %r" % config.mode)
    mech = _initial_pure_state(config)
    dist0 = mech.number_distribution()
    trace = CollapseTrace(config, 0.0, dist0)
    trace.tail_audit["initial_tail_mass"] = float(dist0.tail_mass())
    trace.distributions.append(dist0)
    m0 = collapse_metrics(dist0)
    m0["history_probability"] = 1.0
    trace.metrics.append(m0)
    trace.thetas = []
    trace.outcomes = []
    snap = _wigner_rounds(config)
    if 0 in snap:
        trace.wigner[0] = wigner_transform(mech, resolution=config.wigner_resolution)

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    if config.thetas is not None:
        if len(config.thetas) < config.r_max:
            raise ConfigError("thetas has %d entries but r_max is %d"
                              % (len(config.thetas), config.r_max))
        schedule = np.asarray(config.thetas, dtype=float)[: config.r_max]
    elif config.theta is not None:
        schedule = np.full(config.r_max, float(config.theta))
    else:
        schedule = rng.uniform(np.pi / 8, np.pi / 2, size=config.r_max)

    for r in range(1, config.r_max + 1):
        theta = float(schedule[r - 1])
        if config.jc_sample_outcomes:
            outcome = sample_jc_outcome(mech, theta, rng)
            x, mech = outcome.x, outcome.post_state
            trace.history_probability *= outcome.probability
        else:
            x = 1
            res = apply_jc_measurement(mech, theta, 1)
            mech = res.post_state
            trace.history_probability *= res.probability
        trace.thetas.append(theta)
        trace.outcomes.append(x)
        dist_r = mech.number_distribution()
        trace.distributions.append(dist_r)
        mr = collapse_metrics(dist_r)
        mr["history_probability"] = trace.history_probability
        trace.metrics.append(mr)
        if r in snap:
            trace.wigner[r] = wigner_transform(mech, resolution=config.wigner_resolution)

    trace.bimodal = _mark_bimodal(trace)
    return trace


@dataclass
class RateProfileReport:
    """R(t), its source/cavity/interference split and optional analytic overlay."""

    profile: object
    source: np.ndarray
    cavity: np.ndarray
    interference: np.ndarray
    loss_kappa1: np.ndarray
    loss_kappa2_prime: np.ndarray
    analytic: np.ndarray = None
    max_analytic_error: float = None
    decomposition_error: float = 0.0
    dip_time: float = None
    window: SamplingWindow = None


def rate_profile_report(config: ExperimentConfig) -> RateProfileReport:
    """No-count rate profile from the configured initial state.

    The three decomposition terms sum to R(t) identically; when g = 0 and
    κ₁ = 0 (and γ ≠ κ₂) the closed-form rate is evaluated alongside and
    the maximum deviation recorded.
    """
    if config.params.gamma_m != 0:
        raise ConfigError("rate_profile uses the pure-state path; gamma_m must be 0")
    mech = _initial_pure_state(config)
    p = config.params
    amp0 = SubspaceAmplitudes.from_mechanical(mech, p)
    traj = no_count_trajectory(amp0, dt=config.dt, t_max=config.t_max)
    c1 = traj.amps[:, :, 0]
    c2 = traj.amps[:, :, 1]
    source = p.gamma * (np.abs(c1) ** 2).sum(axis=1)
    cavity = p.kappa2 * (np.abs(c2) ** 2).sum(axis=1)
    interference = 2.0 * np.sqrt(p.gamma * p.kappa2) * (c1.conj() * c2).real.sum(axis=1)
    report = RateProfileReport(
        profile=traj.rate_profile(), source=source, cavity=cavity,
        interference=interference, loss_kappa1=traj.loss_kappa1,
        loss_kappa2_prime=traj.loss_kappa2_prime)
    report.decomposition_error = float(
        np.max(np.abs(source + cavity + interference - traj.rates)))
    if p.g == 0 and p.kappa1 == 0 and abs(p.gamma - p.kappa2) > 1e-12 * p.kappa2:
        report.analytic = analytic_rate_g0(traj.times, p.gamma, p.kappa2)
        report.max_analytic_error = float(np.max(np.abs(report.analytic - traj.rates)))
    try:
        from .sampling import dip_time as _dip
        report.dip_time = _dip(report.profile)
        report.window = find_window(report.profile, config.delta, config.epsilon)
    except NoDipError:
        pass
    return report
