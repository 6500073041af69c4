"""Conditional density-matrix evolution with mechanical damping.

With the mechanics coupled to a thermal bath (rate gamma_m, occupancy
N_bar), the no-count state is no longer pure. The density matrix lives on
the same per-phonon ladder as the amplitude model: index pair (n, k) with
k in {source, cavity a2, cavity a1}, whose mechanical levels are
(n, n, n+1). Mechanical damping from the (0, a1) state (one phonon,
photon still in a1) leaves the ladder into the inert state
|photon in a1, zero phonons>; its population is carried as the scalar
`edge` (coherences to it are dropped, and nothing feeds them back into
tracked populations: the detector jump annihilates the edge state and the
coupling g cannot act on it).

Trace is the no-count survival probability and never increases; losses go
to kappa1, kappa2_prime and the detector.
"""

import functools
from dataclasses import dataclass

import numpy as np

from .cascaded import ModelParams, _generator_stack, _propagator
from .errors import NumericalFailure, StepperError, ZeroRateError
from .fock import FockCutoff, MechanicalState, NumberDistribution, _frozen, as_cutoff, thermal_distribution

_HERM_TOL = 1e-9


@dataclass(frozen=True)
class MechanicalDensity:
    """Mechanical density matrix (n_max+1, n_max+1); hermitian, unit trace."""

    rho_m: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rho_m, dtype=complex)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("mechanical density must be square")
        asym = np.max(np.abs(r - r.conj().T))
        if asym > _HERM_TOL:
            raise ValueError("mechanical density not hermitian (asymmetry %.2e)" % asym)
        r = 0.5 * (r + r.conj().T)
        tr = float(np.trace(r).real)
        if abs(tr - 1.0) > 1e-8:
            if tr <= 0:
                raise ValueError("mechanical density has non-positive trace")
            r = r / tr
        object.__setattr__(self, "rho_m", _frozen(r))

    @classmethod
    def from_state(cls, state: MechanicalState) -> "MechanicalDensity":
        a = state.amplitudes
        return cls(np.outer(a, a.conj()))

    @classmethod
    def from_distribution(cls, dist: NumberDistribution) -> "MechanicalDensity":
        return cls(np.diag(dist.probs.astype(complex)))

    @property
    def cutoff(self) -> FockCutoff:
        return FockCutoff(self.rho_m.shape[0] - 1)

    def diagonal(self) -> NumberDistribution:
        return NumberDistribution(self.rho_m.diagonal().real)

    def purity(self) -> float:
        return float(np.sum(np.abs(self.rho_m) ** 2))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.rho_m)[0])


def thermal_density(N_bar: float, cutoff, tail_tol: float = 1e-6) -> MechanicalDensity:
    return MechanicalDensity.from_distribution(
        thermal_distribution(N_bar, cutoff, tail_tol=tail_tol))


@dataclass(frozen=True)
class ConditionalDensity:
    """No-count conditional density on the (n, k) ladder plus the edge scalar.

    rho has shape (n_max+1, 3, n_max+1, 3); trace(rho) + edge is the
    survival probability (<= 1).
    """

    rho: np.ndarray
    edge: float
    params: ModelParams
    t: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.rho, dtype=complex)
        if r.ndim != 4 or r.shape[1] != 3 or r.shape[3] != 3 or r.shape[0] != r.shape[2]:
            raise ValueError("rho must have shape (n_max+1, 3, n_max+1, 3)")
        d = r.shape[0] * 3
        flat = r.reshape(d, d)
        asym = np.max(np.abs(flat - flat.conj().T))
        scale = max(float(np.abs(flat).max()), 1e-30)
        if asym > _HERM_TOL * max(1.0, scale):
            raise NumericalFailure("conditional density lost hermiticity (%.2e)" % asym)
        flat = 0.5 * (flat + flat.conj().T)
        r = flat.reshape(r.shape)
        if self.edge < -1e-12:
            raise NumericalFailure("edge population went negative (%.2e)" % self.edge)
        tr = float(np.einsum("nknk->", r).real) + max(self.edge, 0.0)
        if tr > 1.0 + 1e-8:
            raise NumericalFailure("survival probability exceeds 1 (%.12f)" % tr)
        object.__setattr__(self, "rho", _frozen(r))
        object.__setattr__(self, "edge", float(max(self.edge, 0.0)))

    @property
    def cutoff(self) -> FockCutoff:
        return FockCutoff(self.rho.shape[0] - 1)

    def trace(self) -> float:
        return float(np.einsum("nknk->", self.rho).real) + self.edge

    def ladder_matrix(self) -> np.ndarray:
        d = self.rho.shape[0] * 3
        return self.rho.reshape(d, d)

    def min_eigenvalue(self) -> float:
        return min(float(np.linalg.eigvalsh(self.ladder_matrix())[0]), self.edge)


def rearm_source(mech: MechanicalDensity, params: ModelParams) -> ConditionalDensity:
    """Load a fresh photon into the source around the current mechanics."""
    dim = mech.rho_m.shape[0]
    rho = np.zeros((dim, 3, dim, 3), dtype=complex)
    rho[:, 0, :, 0] = mech.rho_m
    return ConditionalDensity(rho, 0.0, params)


@functools.lru_cache(maxsize=32)
def _damping_cache(params: ModelParams, dim: int) -> dict:
    """Time-independent arrays for the damped stepper, built once per shape.

    Mechanical levels of the (n, k) basis are (n, n, n+1); both Lindblad
    terms act as uniform shifts along n with level-dependent weights, so
    the weight products and the combined loss coefficient can be frozen.
    """
    A = _generator_stack(params, dim)
    cache = {"A": A}
    gm, Nb = params.gamma_m, params.N_bar
    if gm > 0:
        lev = np.empty((dim, 3))
        n = np.arange(dim, dtype=float)
        lev[:, 0] = n
        lev[:, 1] = n
        lev[:, 2] = n + 1.0
        wdn = np.sqrt(lev)
        wup = np.sqrt(lev + 1.0)
        cache["Wdn"] = gm * (Nb + 1.0) * (wdn[:, :, None, None] * wdn[None, None, :, :])
        cache["Wup"] = gm * Nb * (wup[:, :, None, None] * wup[None, None, :, :])
        loss = gm * (Nb + 1.0) * 0.5 * (lev[:, :, None, None] + lev[None, None, :, :])
        loss = loss + gm * Nb * 0.5 * ((lev + 1.0)[:, :, None, None]
                                       + (lev + 1.0)[None, None, :, :])
        cache["L"] = loss
    return cache


def _rhs(rho: np.ndarray, edge: float, params: ModelParams, cache: dict):
    """d(rho, edge)/dt for the no-count conditional density."""
    A = cache["A"]
    d = np.einsum("nij,njmk->nimk", A, rho)
    d += np.einsum("nimj,mkj->nimk", rho, A.conj())
    gm, Nb, k1 = params.gamma_m, params.N_bar, params.kappa1
    if gm > 0:
        M = rho.shape[0] - 1
        d -= cache["L"] * rho
        d[:M, :, :M, :] += rho[1:, :, 1:, :] * cache["Wdn"][1:, :, 1:, :]
        if Nb > 0:
            d[1:, :, 1:, :] += rho[:M, :, :M, :] * cache["Wup"][:M, :, :M, :]
    dedge = -(k1 + gm * Nb) * edge
    if gm > 0:
        dedge += gm * (Nb + 1.0) * rho[0, 2, 0, 2].real
        if Nb > 0:
            d[0, 2, 0, 2] += gm * Nb * edge
    return d, dedge


def _rk4_march(rho: np.ndarray, edge: float, params: ModelParams, cache: dict,
               h: float, n_steps: int):
    for _ in range(n_steps):
        k1r, k1e = _rhs(rho, edge, params, cache)
        k2r, k2e = _rhs(rho + 0.5 * h * k1r, edge + 0.5 * h * k1e, params, cache)
        k3r, k3e = _rhs(rho + 0.5 * h * k2r, edge + 0.5 * h * k2e, params, cache)
        k4r, k4e = _rhs(rho + h * k3r, edge + h * k3e, params, cache)
        rho = rho + (h / 6.0) * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
        edge = edge + (h / 6.0) * (k1e + 2.0 * k2e + 2.0 * k3e + k4e)
    return rho, edge


def _step_size(params: ModelParams, dim: int) -> float:
    h = 0.02 / params.kappa2
    if params.gamma_m > 0:
        h = min(h, 0.1 / (params.gamma_m * (params.N_bar + 1.0) * dim))
    return h


@functools.lru_cache(maxsize=64)
def _cached_blocks(params: ModelParams, dim: int, dt: float) -> np.ndarray:
    return _propagator(params, dim).block_matrices(dt)


def _exact_step_gm0(rho: np.ndarray, E: np.ndarray) -> np.ndarray:
    tmp = np.einsum("nij,njmk->nimk", E, rho)
    return np.einsum("nimk,mlk->niml", tmp, E.conj())


def evolve_no_count_damped(state: ConditionalDensity, dt: float,
                           params: ModelParams = None) -> ConditionalDensity:
    """Advance the conditional density by dt without a click.

    gamma_m = 0 dispatches to the exact per-block propagator (the same
    eigendecomposition as the amplitude path); otherwise classical RK4 on
    the full generator with step size bounded by both the optical and the
    mechanical rates.
    """
    if params is None:
        params = state.params
    elif params != state.params:
        state = ConditionalDensity(state.rho, state.edge, params, state.t)
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return state
    dim = state.rho.shape[0]
    if params.gamma_m == 0:
        E = _cached_blocks(params, dim, dt)
        rho = _exact_step_gm0(np.asarray(state.rho), E)
        edge = state.edge * np.exp(-params.kappa1 * dt)
        return ConditionalDensity(rho, float(edge), params, state.t + dt)

    cache = _damping_cache(params, dim)
    n_steps = max(1, int(np.ceil(dt / _step_size(params, dim))))
    rho, edge = _rk4_march(np.array(state.rho), state.edge, params, cache,
                           dt / n_steps, n_steps)
    if not np.all(np.isfinite(rho.view(float))):
        raise StepperError("non-finite density after damped no-count step")
    return ConditionalDensity(rho, float(edge), params, state.t + dt)


def stepper_error_estimate(state: ConditionalDensity, dt: float) -> float:
    """Step-halving (Richardson) estimate of the local RK4 error over dt."""
    coarse = evolve_no_count_damped(state, dt)
    half = evolve_no_count_damped(evolve_no_count_damped(state, dt / 2), dt / 2)
    err = float(np.max(np.abs(coarse.rho - half.rho)))
    return max(err, abs(coarse.edge - half.edge))


def detection_rate_damped(state: ConditionalDensity) -> float:
    """Click rate tr(J rho J†) with J = √γ c + √κ₂ a₂."""
    p = state.params
    r_ss = np.einsum("nn->", state.rho[:, 0, :, 0]).real
    r_cc = np.einsum("nn->", state.rho[:, 1, :, 1]).real
    r_sc = np.einsum("nn->", state.rho[:, 0, :, 1]).real
    return float(p.gamma * r_ss + p.kappa2 * r_cc
                 + 2.0 * np.sqrt(p.gamma * p.kappa2) * r_sc)


class DampedJumpResult:
    __slots__ = ("mech_density", "jump_norm")

    def __init__(self, mech_density: MechanicalDensity, jump_norm: float):
        self.mech_density = mech_density
        self.jump_norm = jump_norm


def apply_jump_damped(state: ConditionalDensity) -> DampedJumpResult:
    """Collapse on a click: rho_m = J rho J† restricted to the mechanics.

    The a1 column and the edge state carry no detectable photon, so only
    the source and a2 columns (and their cross terms) contribute.
    """
    p = state.params
    g_ss = p.gamma * state.rho[:, 0, :, 0]
    g_cc = p.kappa2 * state.rho[:, 1, :, 1]
    cross = np.sqrt(p.gamma * p.kappa2) * (state.rho[:, 0, :, 1] + state.rho[:, 1, :, 0])
    rho_m = g_ss + g_cc + cross
    norm = float(np.trace(rho_m).real)
    if norm <= 1e-15:
        raise ZeroRateError("detection applied at (near-)zero rate %.3e" % norm)
    return DampedJumpResult(MechanicalDensity(rho_m / norm), norm)


def evolve_mechanics(mech: MechanicalDensity, dt: float,
                     params: ModelParams) -> MechanicalDensity:
    """Damp the bare mechanics (no photon anywhere) for a time dt.

    Standard thermal-contact evolution at rate gamma_m, occupancy N_bar;
    used for idle time between measurements. RK4 with the same step
    bound as the full stepper.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    gm, Nb = params.gamma_m, params.N_bar
    if dt == 0 or gm == 0:
        return mech
    dim = mech.rho_m.shape[0]
    n = np.arange(dim, dtype=float)
    dn = np.sqrt(n)
    up = np.sqrt(n + 1.0)

    def rhs(r):
        d = np.zeros_like(r)
        d[:-1, :-1] += r[1:, 1:] * dn[1:, None] * dn[None, 1:]
        d -= 0.5 * (n[:, None] + n[None, :]) * r
        d *= gm * (Nb + 1.0)
        if Nb > 0:
            d2 = np.zeros_like(r)
            d2[1:, 1:] += r[:-1, :-1] * up[:-1, None] * up[None, :-1]
            d2 -= 0.5 * ((n + 1.0)[:, None] + (n + 1.0)[None, :]) * r
            d += gm * Nb * d2
        return d

    n_steps = max(1, int(np.ceil(dt / min(0.1 / (gm * (Nb + 1.0) * dim), dt))))
    h = dt / n_steps
    r = np.array(mech.rho_m)
    for _ in range(n_steps):
        k1 = rhs(r)
        k2 = rhs(r + 0.5 * h * k1)
        k3 = rhs(r + 0.5 * h * k2)
        k4 = rhs(r + h * k3)
        r += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return MechanicalDensity(r)


class DampedTrajectory:
    """No-count damped evolution sampled on a step grid, with checkpoints.

    Densities are only stored every `checkpoint_every` grid points;
    density_at(t) re-integrates from the nearest stored checkpoint.
    """

    def __init__(self, initial: ConditionalDensity, times, rates, survival,
                 checkpoints):
        self.initial = initial
        self.params = initial.params
        self.times = np.asarray(times)
        self.rates = np.asarray(rates)
        self.survival = np.asarray(survival)
        self._checkpoints = checkpoints

    def rate_profile(self):
        from .sampling import RateProfile
        return RateProfile(self.times, self.rates, self.survival)

    def density_at(self, t: float) -> ConditionalDensity:
        if t < 0:
            raise ValueError("time %.6f precedes the trajectory start" % t)
        best_rel, best = 0.0, self.initial
        for tc, state in self._checkpoints:
            if tc <= t * (1 + 1e-12) and tc > best_rel:
                best_rel, best = tc, state
        return evolve_no_count_damped(best, max(t - best_rel, 0.0))


def _rate_raw(rho: np.ndarray, params: ModelParams) -> float:
    r_ss = np.einsum("nn->", rho[:, 0, :, 0]).real
    r_cc = np.einsum("nn->", rho[:, 1, :, 1]).real
    r_sc = np.einsum("nn->", rho[:, 0, :, 1]).real
    return float(params.gamma * r_ss + params.kappa2 * r_cc
                 + 2.0 * np.sqrt(params.gamma * params.kappa2) * r_sc)


def damped_no_count_trajectory(initial: ConditionalDensity, dt: float = None,
                               t_max: float = None,
                               checkpoint_every: int = 50) -> DampedTrajectory:
    """March the damped no-count state forward, recording the click rate.

    The grid step defaults to the stepper's own stability bound, so each
    recorded point costs one RK4 step (for gamma_m = 0, one exact block
    step). Without t_max the grid extends until the rate falls below half
    the windowing threshold, as in the amplitude path. The marching works
    on raw arrays; invariants are validated at the stored checkpoints.
    """
    params = initial.params
    dim = initial.rho.shape[0]
    if dt is None:
        dt = _step_size(params, dim)
    t_cap = (400.0 / params.kappa2) if t_max is None else t_max
    exact = params.gamma_m == 0
    E = _cached_blocks(params, dim, dt) if exact else None
    cache = None if exact else _damping_cache(params, dim)
    edge_decay = np.exp(-params.kappa1 * dt)

    rho = np.array(initial.rho)
    edge = initial.edge
    times = [0.0]
    rates = [_rate_raw(rho, params)]
    survival = [float(np.einsum("nknk->", rho).real) + edge]
    checkpoints = []
    rmax = rates[0]
    k = 0
    while times[-1] < t_cap - dt / 2:
        if exact:
            rho = _exact_step_gm0(rho, E)
            edge = edge * edge_decay
        else:
            rho, edge = _rk4_march(rho, edge, params, cache, dt, 1)
        k += 1
        times.append(k * dt)
        r = _rate_raw(rho, params)
        rates.append(r)
        survival.append(float(np.einsum("nknk->", rho).real) + edge)
        rmax = max(rmax, r)
        if k % checkpoint_every == 0:
            checkpoints.append((k * dt, ConditionalDensity(
                rho.copy(), edge, params, initial.t + k * dt)))
        if t_max is None and times[-1] > 20.0 / params.kappa2 and rmax > 0 \
                and r < 0.5e-3 * rmax:
            break
    if not np.all(np.isfinite(rho.view(float))):
        raise StepperError("non-finite density while marching the no-count grid")
    return DampedTrajectory(initial, times, rates, survival, checkpoints)
