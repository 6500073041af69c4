"""Single-photon trajectory model of the source → cavity → detector cascade.

One photon is emitted by a source cavity (rate γ), drives the optical
cavity a₂ one-way (cascade coupling √(γκ₂)), and can be converted by the
opto-mechanical coupling g into a photon in a₁ plus one phonon. Given no
detector click, the joint state stays in a three-dimensional subspace per
phonon number n, spanned by

    |1>_n = |1,0,0,n>   photon still in the source
    |2>_n = |0,0,1,n>   photon in cavity a₂
    |3>_n = |0,1,0,n+1> photon in cavity a₁, one phonon added

(order: source, cavity 1, cavity 2, mechanics). The no-count evolution of
the block amplitudes c = (c1, c2, c3) is d c/dt = A_n c with the 3×3
generator built below; a detector click applies the jump operator
J = √γ c + √κ₂ a₂ whose two terms interfere.
"""

import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import expm

from .errors import NumericalFailure, ZeroRateError
from .fock import FockCutoff, MechanicalState, as_cutoff

_EIG_COND_LIMIT = 1e6


@dataclass(frozen=True)
class ModelParams:
    """Rates of the cascaded model, in units of kappa2 (conventionally 1).

    gamma_m and N_bar only act in the density-matrix path; they are
    carried here so one parameter object describes a full experiment.
    """

    g: float = 1.0
    kappa1: float = 0.2
    kappa2: float = 1.0
    kappa2_prime: float = 0.0
    gamma: float = 0.9
    gamma_m: float = 0.0
    N_bar: float = 0.0

    def __post_init__(self):
        if self.kappa2 <= 0:
            raise ValueError("kappa2 must be > 0")
        for name in ("g", "kappa1", "kappa2_prime", "gamma", "gamma_m", "N_bar"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError("%s must be finite and >= 0, got %r" % (name, v))


def generator_matrix(n: int, params: ModelParams) -> np.ndarray:
    """Generator A_n of the no-count block equation d c/dt = A_n c.

    Row order (c1, c2, c3). The cascade enters only as c1 → c2 (no
    back-action); the opto-mechanical coupling g√(n+1) mixes c2 and c3.
    All eigenvalues have non-positive real parts.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    return _generator_stack(params, n + 1)[n]


def _generator_stack(params: ModelParams, n_blocks: int) -> np.ndarray:
    n = np.arange(n_blocks, dtype=float)
    A = np.zeros((n_blocks, 3, 3), dtype=complex)
    A[:, 0, 0] = -params.gamma / 2.0
    A[:, 1, 0] = -np.sqrt(params.gamma * params.kappa2)
    A[:, 1, 1] = -(params.kappa2 + params.kappa2_prime) / 2.0
    A[:, 1, 2] = -1j * params.g * np.sqrt(n + 1.0)
    A[:, 2, 1] = -1j * params.g * np.sqrt(n + 1.0)
    A[:, 2, 2] = -params.kappa1 / 2.0
    return A


class _Propagator:
    """Exact per-block propagation c(t) = exp(A_n t) c(0).

    Diagonalizes every block once; falls back to scipy expm for blocks
    whose eigenvector matrix is ill-conditioned (degenerate rate choices
    such as gamma = kappa2 at g = 0).
    """

    def __init__(self, params: ModelParams, n_blocks: int):
        self.A = _generator_stack(params, n_blocks)
        self.n_blocks = n_blocks
        w, V = np.linalg.eig(self.A)
        conds = np.linalg.cond(V)
        self._bad = conds > _EIG_COND_LIMIT
        if np.any(self._bad):
            # keep eig results only where trustworthy
            w = w.copy()
            w[self._bad] = 0.0
        self.w = w
        self.V = V
        self.Vinv = np.linalg.inv(V)

    def _expm_blocks(self, t: float) -> np.ndarray:
        out = np.empty_like(self.A)
        for i in np.nonzero(self._bad)[0]:
            out[i] = expm(self.A[i] * t)
        return out

    def at(self, c0: np.ndarray, t: float) -> np.ndarray:
        """Amplitudes at a single time t, shape (n_blocks, 3)."""
        alpha = np.einsum("nij,nj->ni", self.Vinv, c0)
        c = np.einsum("nij,nj->ni", self.V, np.exp(self.w * t) * alpha)
        if np.any(self._bad):
            E = self._expm_blocks(t)
            for i in np.nonzero(self._bad)[0]:
                c[i] = E[i] @ c0[i]
        return c

    def grid(self, c0: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Amplitudes on a whole time grid, shape (len(times), n_blocks, 3)."""
        alpha = np.einsum("nij,nj->ni", self.Vinv, c0)
        phases = np.exp(self.w[None, :, :] * times[:, None, None])
        c = np.einsum("nij,tnj->tni", self.V, phases * alpha[None])
        if np.any(self._bad):
            for i in np.nonzero(self._bad)[0]:
                for k, t in enumerate(times):
                    c[k, i] = expm(self.A[i] * t) @ c0[i]
        return c

    def block_matrices(self, t: float) -> np.ndarray:
        """exp(A_n t) for every block, shape (n_blocks, 3, 3)."""
        phases = np.exp(self.w * t)
        E = np.einsum("nij,nj,njk->nik", self.V, phases, self.Vinv)
        if np.any(self._bad):
            for i in np.nonzero(self._bad)[0]:
                E[i] = expm(self.A[i] * t)
        return E


@functools.lru_cache(maxsize=64)
def _propagator(params: ModelParams, n_blocks: int) -> _Propagator:
    return _Propagator(params, n_blocks)


@dataclass(frozen=True)
class SubspaceAmplitudes:
    """Unnormalized no-count amplitudes c_k^n at time t.

    c has shape (n_max+1, 3); from the standard initial state
    c1^n = beta_n and c2 = c3 = 0. The squared norm is the no-count
    probability and never increases.
    """

    c: np.ndarray
    params: ModelParams
    t: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.c, dtype=complex)
        if c.ndim != 2 or c.shape[1] != 3:
            raise ValueError("amplitudes must have shape (n_max+1, 3)")
        c = np.ascontiguousarray(c)
        c.flags.writeable = False
        object.__setattr__(self, "c", c)

    @classmethod
    def from_mechanical(cls, state: MechanicalState, params: ModelParams) -> "SubspaceAmplitudes":
        c = np.zeros((len(state.amplitudes), 3), dtype=complex)
        c[:, 0] = state.amplitudes
        return cls(c, params)

    @property
    def cutoff(self) -> FockCutoff:
        return FockCutoff(self.c.shape[0] - 1)

    def norm_squared(self) -> float:
        return float(np.vdot(self.c, self.c).real)


def evolve_no_count(state: SubspaceAmplitudes, dt: float) -> SubspaceAmplitudes:
    """Advance every block by exp(A_n dt); exact for the time-independent A_n."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return state
    prop = _propagator(state.params, state.c.shape[0])
    c = prop.at(state.c, dt)
    if not np.all(np.isfinite(c.view(float))):
        raise NumericalFailure("non-finite amplitudes after no-count step")
    return SubspaceAmplitudes(c, state.params, state.t + dt)


def _jump_amplitudes(state: SubspaceAmplitudes) -> np.ndarray:
    p = state.params
    return np.sqrt(p.gamma) * state.c[:, 0] + np.sqrt(p.kappa2) * state.c[:, 1]


def detection_rate(state: SubspaceAmplitudes) -> float:
    """Click rate at the detector: R = Σ_n |√γ c1^n + √κ₂ c2^n|²."""
    a = _jump_amplitudes(state)
    return float(np.vdot(a, a).real)


def rate_decomposition(state: SubspaceAmplitudes) -> tuple:
    """(source, cavity, interference) terms of the detection rate.

    source = γ Σ|c1|², cavity = κ₂ Σ|c2|², interference
    = 2√(γκ₂) Σ Re(c1* c2); they sum to detection_rate exactly.
    """
    p = state.params
    c1, c2 = state.c[:, 0], state.c[:, 1]
    source = p.gamma * float(np.vdot(c1, c1).real)
    cavity = p.kappa2 * float(np.vdot(c2, c2).real)
    interference = 2.0 * np.sqrt(p.gamma * p.kappa2) * float(np.vdot(c1, c2).real)
    return source, cavity, interference


def no_count_probability(state: SubspaceAmplitudes) -> float:
    """Probability that no photon has been detected or lost: the squared norm."""
    return state.norm_squared()


def analytic_rate_g0(t, gamma: float, kappa2: float):
    """Closed-form detection rate for g = 0, κ₁ = 0.

    R(t) = γe^{−γt} + κ₂ n₂(t) − [4γκ₂/(κ₂−γ)] e^{−γt/2}(e^{−γt/2} − e^{−κ₂t/2}),
    n₂(t) = [4γκ₂/(κ₂−γ)²](e^{−γt/2} − e^{−κ₂t/2})².

    The formula has a pole at γ = κ₂; that point is served by the numeric
    path only.
    """
    if abs(gamma - kappa2) < 1e-12 * max(gamma, kappa2):
        raise ValueError("gamma = kappa2 is a pole of the closed form; "
                         "use the numeric no-count path")
    t = np.asarray(t, dtype=float)
    eg = np.exp(-gamma * t / 2.0)
    ek = np.exp(-kappa2 * t / 2.0)
    n2 = 4.0 * gamma * kappa2 / (kappa2 - gamma) ** 2 * (eg - ek) ** 2
    r = gamma * eg ** 2 + kappa2 * n2 - 4.0 * gamma * kappa2 / (kappa2 - gamma) * eg * (eg - ek)
    return r if r.ndim else float(r)


def analytic_dip_time_g0(gamma: float, kappa2: float) -> float:
    """Time of the exact zero of analytic_rate_g0: the interference dip."""
    if abs(gamma - kappa2) < 1e-12 * max(gamma, kappa2):
        raise ValueError("gamma = kappa2 is a pole of the closed form")
    return 2.0 * np.log(2.0 * kappa2 / (kappa2 + gamma)) / (kappa2 - gamma)


class JumpResult(NamedTuple):
    mech_state: MechanicalState
    jump_norm: float


def apply_jump(state: SubspaceAmplitudes) -> JumpResult:
    """Collapse on a detector click: β_n ∝ √γ c1^n + √κ₂ c2^n.

    jump_norm is the raw squared norm of J applied to the state as given
    (the detection rate); the returned mechanical state is normalized.
    """
    a = _jump_amplitudes(state)
    norm2 = float(np.vdot(a, a).real)
    if norm2 <= 1e-15:
        raise ZeroRateError("detection applied at (near-)zero rate %.3e" % norm2)
    return JumpResult(MechanicalState(a / np.sqrt(norm2)), norm2)


def filter_values(params: ModelParams, cutoff, t: float) -> np.ndarray:
    """Unnormalized filter P(n, t) ∝ |√γ c1^n(t) + √κ₂ c2^n(t)|² for unit c1 start.

    A detection at time t multiplies the number distribution by this
    vector (then renormalize).
    """
    cut = as_cutoff(cutoff)
    prop = _propagator(params, cut.dim)
    c0 = np.zeros((cut.dim, 3), dtype=complex)
    c0[:, 0] = 1.0
    c = prop.at(c0, t)
    a = np.sqrt(params.gamma) * c[:, 0] + np.sqrt(params.kappa2) * c[:, 1]
    return np.abs(a) ** 2


# ---------------------------------------------------------------------------
# Stored trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionRecord:
    """One conditioned detection: when it fired and what it did to the state."""

    r: int
    t_r: float
    survival: float
    jump_norm: float
    post_state: MechanicalState
    error_probability: float
    restarts: int = 0


class NoCountTrajectory:
    """No-count amplitudes stored on a time grid, with rate bookkeeping.

    The grid is dense enough (dt = 0.005/κ₂ by default) that linear
    interpolation of R keeps relative error well under 1e-4; exact states
    at off-grid times come from re-propagating the initial amplitudes.
    """

    def __init__(self, initial: SubspaceAmplitudes, times: np.ndarray, amps: np.ndarray):
        self.initial = initial
        self.params = initial.params
        self.times = times
        self.amps = amps
        p = self.params
        a = np.sqrt(p.gamma) * amps[:, :, 0] + np.sqrt(p.kappa2) * amps[:, :, 1]
        self.rates = (np.abs(a) ** 2).sum(axis=1)
        self.survival = (np.abs(amps) ** 2).sum(axis=(1, 2))
        self.loss_kappa1 = p.kappa1 * (np.abs(amps[:, :, 2]) ** 2).sum(axis=1)
        self.loss_kappa2_prime = p.kappa2_prime * (np.abs(amps[:, :, 1]) ** 2).sum(axis=1)

    def state_at(self, t: float) -> SubspaceAmplitudes:
        prop = _propagator(self.params, self.initial.c.shape[0])
        return SubspaceAmplitudes(prop.at(self.initial.c, t), self.params,
                                  self.initial.t + t)

    def rate_profile(self):
        from .sampling import RateProfile
        return RateProfile(self.times, self.rates, self.survival)

    def error_probability(self, t: float = None) -> float:
        """Accumulated loss probability p_err(t) = κ₁∫Σ|c3|² + κ₂′∫Σ|c2|².

        Simpson quadrature over the stored grid up to t (default: the
        full grid).
        """
        integrand = self.loss_kappa1 + self.loss_kappa2_prime
        if t is None:
            return float(simpson(integrand, x=self.times))
        if t <= self.times[0]:
            return 0.0
        idx = int(np.searchsorted(self.times, t * (1 + 1e-12), side="right")) - 1
        total = float(simpson(integrand[: idx + 1], x=self.times[: idx + 1])) if idx >= 1 else 0.0
        if t > self.times[idx] + 1e-15:
            p = self.params
            mid = self.state_at(0.5 * (self.times[idx] + t))
            end = self.state_at(t)
            f = lambda s: (p.kappa1 * float(np.vdot(s.c[:, 2], s.c[:, 2]).real)
                           + p.kappa2_prime * float(np.vdot(s.c[:, 1], s.c[:, 1]).real))
            h = t - self.times[idx]
            total += h / 6.0 * (integrand[idx] + 4.0 * f(mid) + f(end))
        return total

    def integrated_rate(self, t: float = None) -> float:
        """∫ R ds over the stored grid (Simpson), up to t or the grid end."""
        if t is None:
            return float(simpson(self.rates, x=self.times))
        idx = int(np.searchsorted(self.times, t * (1 + 1e-12), side="right")) - 1
        total = float(simpson(self.rates[: idx + 1], x=self.times[: idx + 1])) if idx >= 1 else 0.0
        if t > self.times[idx] + 1e-15:
            mid = self.state_at(0.5 * (self.times[idx] + t))
            end = self.state_at(t)
            h = t - self.times[idx]
            total += h / 6.0 * (self.rates[idx] + 4.0 * detection_rate(mid)
                                + detection_rate(end))
        return total


def no_count_trajectory(initial: SubspaceAmplitudes, dt: float = 0.005,
                        t_max: float = None) -> NoCountTrajectory:
    """Propagate the no-count state on a uniform grid.

    If t_max is omitted the grid extends (in chunks) until the rate has
    fallen below half the windowing threshold, 0.5e-3 of its running
    maximum, so that a sampling window always fits inside the grid.
    """
    prop = _propagator(initial.params, initial.c.shape[0])
    kappa2 = initial.params.kappa2
    if t_max is not None:
        times = np.arange(0.0, t_max + dt / 2, dt)
        return NoCountTrajectory(initial, times, prop.grid(initial.c, times))
    chunk = 20.0 / kappa2
    t_cap = 400.0 / kappa2
    t_end = chunk
    while True:
        times = np.arange(0.0, t_end + dt / 2, dt)
        amps = prop.grid(initial.c, times)
        p = initial.params
        a = np.sqrt(p.gamma) * amps[:, :, 0] + np.sqrt(p.kappa2) * amps[:, :, 1]
        rates = (np.abs(a) ** 2).sum(axis=1)
        rmax = rates.max()
        if rmax <= 0 or rates[-1] < 0.5e-3 * rmax or t_end >= t_cap:
            return NoCountTrajectory(initial, times, amps)
        t_end += chunk
