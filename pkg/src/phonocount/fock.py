"""Truncated Fock-space primitives for a mechanical oscillator.

States and distributions live on the number basis {|0>, ..., |n_max>}.
Constructors renormalize over the truncation and audit the tail mass they
dropped. The Wigner transform uses the number-basis Laguerre kernel with
the convention

    x = (b + b†)/√2,   p = i(b† − b)/√2,   ∬ W(x, p) dx dp = 1,

so the vacuum gives W(0,0) = 1/π.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TruncationError

WIGNER_CONVENTION = "x=(b+b^dag)/sqrt(2); integral of W over dx dp = 1"


@dataclass(frozen=True)
class FockCutoff:
    """Highest retained phonon number n_max (dimension n_max + 1)."""

    n_max: int

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError("n_max must be an integer >= 1, got %r" % (self.n_max,))

    @property
    def dim(self) -> int:
        return self.n_max + 1


def as_cutoff(cutoff) -> FockCutoff:
    """Coerce an int or FockCutoff to FockCutoff."""
    if isinstance(cutoff, FockCutoff):
        return cutoff
    return FockCutoff(int(cutoff))


def default_cutoff(n_bar: float) -> FockCutoff:
    """Default cutoff rule ceil(n̄ + 6√(n̄+1)) for Poissonian-width states."""
    return FockCutoff(max(1, math.ceil(n_bar + 6.0 * math.sqrt(n_bar + 1.0))))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MechanicalState:
    """Pure mechanical state: amplitudes β_n on the number basis."""

    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.ndim != 1 or amps.size < 2:
            raise ValueError("amplitudes must be a vector of length n_max+1 >= 2")
        object.__setattr__(self, "amplitudes", _frozen(amps))
        if self.normalized:
            norm = np.linalg.norm(amps)
            if abs(norm - 1.0) > 1e-12:
                object.__setattr__(self, "amplitudes", _frozen(amps / norm))

    @property
    def cutoff(self) -> FockCutoff:
        return FockCutoff(len(self.amplitudes) - 1)

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def number_distribution(self) -> "NumberDistribution":
        p = np.abs(self.amplitudes) ** 2
        return NumberDistribution(p / p.sum())


@dataclass(frozen=True)
class NumberDistribution:
    """Probability vector P(n) over the truncated number basis."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("probs must be a vector of length n_max+1 >= 2")
        if p.min() < -1e-14:
            raise ValueError("negative probability %g" % p.min())
        p = np.clip(p, 0.0, None)
        s = p.sum()
        if not np.isfinite(s) or s <= 0:
            raise ValueError("probabilities must have positive finite sum")
        if abs(s - 1.0) > 1e-10:
            p = p / s
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def cutoff(self) -> FockCutoff:
        return FockCutoff(len(self.probs) - 1)

    def tail_mass(self, levels: int = 2) -> float:
        """Probability sitting on the top `levels` retained number states."""
        return float(self.probs[-levels:].sum())


def fock_state(n: int, cutoff) -> MechanicalState:
    """Number eigenstate |n> on the truncated basis."""
    cut = as_cutoff(cutoff)
    if not 0 <= n <= cut.n_max:
        raise ValueError("Fock index %d outside [0, %d]" % (n, cut.n_max))
    amps = np.zeros(cut.dim, dtype=complex)
    amps[n] = 1.0
    return MechanicalState(amps)


def coherent_amplitudes(beta: complex, cutoff) -> np.ndarray:
    """Raw (un-renormalized) coherent amplitudes e^{−|β|²/2} β^n/√(n!).

    Evaluated by the stable ratio recursion β_{n} = β_{n-1}·β/√n.
    """
    cut = as_cutoff(cutoff)
    amps = np.empty(cut.dim, dtype=complex)
    amps[0] = math.exp(-abs(beta) ** 2 / 2.0)
    for n in range(1, cut.dim):
        amps[n] = amps[n - 1] * beta / math.sqrt(n)
    return amps


def coherent_state(beta: complex, cutoff, tail_tol: float = 1e-8) -> MechanicalState:
    """Coherent state |β> renormalized over the truncation.

    Raises TruncationError when |β|² > n_max/3 or when the dropped tail
    exceeds tail_tol. The default-cutoff rule leaves a tail slightly
    above 1e-8 around n̄ = 4, so callers working at the default cutoff
    pass their audit tolerance here.
    """
    cut = as_cutoff(cutoff)
    nbar = abs(beta) ** 2
    if nbar > cut.n_max / 3.0:
        raise TruncationError(
            "coherent |beta|^2 = %g exceeds n_max/3 = %g" % (nbar, cut.n_max / 3.0))
    amps = coherent_amplitudes(beta, cut)
    kept = float(np.vdot(amps, amps).real)
    if 1.0 - kept > tail_tol:
        raise TruncationError(
            "coherent-state truncation tail %.3e exceeds %g" % (1.0 - kept, tail_tol))
    return MechanicalState(amps / math.sqrt(kept))


def poisson_distribution(beta_abs: float, cutoff,
                         tail_tol: float = 1e-8) -> NumberDistribution:
    """Poisson number distribution P_0(n) = e^{−|β|²}|β|^{2n}/n!, renormalized."""
    amps = coherent_state(abs(beta_abs), cutoff, tail_tol=tail_tol).amplitudes
    return NumberDistribution(np.abs(amps) ** 2)


def thermal_distribution(N_bar: float, cutoff, tail_tol: float = 1e-6) -> NumberDistribution:
    """Thermal (Bose–Einstein) distribution P(n) = N̄^n/(1+N̄)^{n+1}.

    The geometric tail above n_max is exact: (N̄/(1+N̄))^{n_max+1}. It must
    not exceed tail_tol; pass a larger tolerance explicitly to work at
    heavy thermal occupation with a pinned cutoff.
    """
    cut = as_cutoff(cutoff)
    if N_bar < 0:
        raise ValueError("N_bar must be >= 0")
    if N_bar > cut.n_max / 4.0:
        raise TruncationError("N_bar = %g exceeds n_max/4 = %g" % (N_bar, cut.n_max / 4.0))
    if N_bar == 0:
        p = np.zeros(cut.dim)
        p[0] = 1.0
        return NumberDistribution(p)
    q = N_bar / (1.0 + N_bar)
    tail = q ** cut.dim
    if tail > tail_tol:
        raise TruncationError(
            "thermal truncation tail %.3e exceeds %.1e (n_max=%d, N_bar=%g)"
            % (tail, tail_tol, cut.n_max, N_bar))
    p = q ** np.arange(cut.dim) / (1.0 + N_bar)
    return NumberDistribution(p / p.sum())


@dataclass(frozen=True)
class Moments:
    mean: float
    variance: float
    entropy: float
    argmax: int
    max_prob: float


def number_moments(dist: NumberDistribution) -> Moments:
    """Mean, variance, Shannon entropy (nats), argmax and its probability."""
    p = dist.probs
    n = np.arange(len(p), dtype=float)
    mean = float(n @ p)
    variance = float(((n - mean) ** 2) @ p)
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    argmax = int(np.argmax(p))
    return Moments(mean, variance, entropy, argmax, float(p[argmax]))


def lowering_matrix(cutoff) -> np.ndarray:
    """Annihilation operator b on the truncated basis (dense)."""
    cut = as_cutoff(cutoff)
    b = np.zeros((cut.dim, cut.dim))
    idx = np.arange(1, cut.dim)
    b[idx - 1, idx] = np.sqrt(idx)
    return b


# ---------------------------------------------------------------------------
# Wigner transform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Wigner function W(x, p) sampled on a rectangular grid.

    W[i, j] corresponds to (x[i], p[j]). meta carries the convention
    string, tail-mass audit and any coarse-grid warnings.
    """

    x: np.ndarray
    p: np.ndarray
    W: np.ndarray
    meta: dict = field(default_factory=dict)

    def integral(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.W, self.p, axis=1), self.x))


def _as_density(state_or_density) -> np.ndarray:
    if isinstance(state_or_density, MechanicalState):
        c = state_or_density.amplitudes
        return np.outer(c, c.conj())
    rho = np.asarray(state_or_density, dtype=complex)
    if rho.ndim == 1:
        return np.outer(rho, rho.conj())
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density must be a square matrix")
    return rho


def wigner_values(state_or_density, x, p) -> np.ndarray:
    """W at arbitrary points, same shape as x and p.

    Number-basis kernel, for m = n + d with d ≥ 0:

        W_{mn}(x,p) = (1/π) e^{−r²} (−1)^n √(2^d n!/m!) (x−ip)^d L_n^d(2r²)

    with r² = x² + p², plus the conjugate term for m < n. Laguerre
    polynomials and the coefficient ratios are evaluated by recursion so
    the kernel stays accurate up to n ≈ 100.
    """
    rho = _as_density(state_or_density)
    dim = rho.shape[0]
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    shape = np.broadcast_shapes(x.shape, p.shape)
    xf = np.broadcast_to(x, shape).reshape(-1)
    pf = np.broadcast_to(p, shape).reshape(-1)
    r2 = xf ** 2 + pf ** 2
    z = 2.0 * r2
    pref = np.exp(-r2) / np.pi
    xmip = xf - 1j * pf
    W = np.zeros(xf.shape, dtype=float)
    for d in range(dim):
        diag = np.diagonal(rho, offset=-d)  # rho[n+d, n]
        if not np.any(diag):
            continue
        # C(n, d) = (−1)^n sqrt(2^d n!/(n+d)!), by ratio recursion in n
        c0 = 1.0
        for k in range(1, d + 1):
            c0 *= 2.0 / k
        coef = math.sqrt(c0)
        phase = np.ones_like(z) if d == 0 else xmip ** d
        acc = np.zeros(xf.shape, dtype=complex)
        Lm1 = np.zeros_like(z)
        L = np.ones_like(z)  # L_0^d
        for n in range(dim - d):
            if diag[n] != 0:
                acc += (diag[n] * coef) * L
            coef *= -math.sqrt((n + 1.0) / (n + 1.0 + d))
            # L_{n+1}^d from (L_n^d, L_{n-1}^d)
            Lnext = ((2 * n + 1 + d - z) * L - (n + d) * Lm1) / (n + 1.0)
            Lm1, L = L, Lnext
        term = pref * phase * acc
        W += term.real if d == 0 else 2.0 * term.real
    return W.reshape(shape)


def wigner_transform(state_or_density, x_range=None, p_range=None,
                     resolution: int = 121) -> PhaseSpaceGrid:
    """Wigner function on a rectangular grid.

    Default ranges cover ±4.5√(n̄+1); narrower user ranges or coarse
    resolutions are flagged in meta["warnings"] rather than rejected.
    """
    rho = _as_density(state_or_density)
    probs = np.clip(np.diagonal(rho).real, 0.0, None)
    total = probs.sum()
    nbar = float(np.arange(len(probs)) @ probs / total) if total > 0 else 0.0
    span = 4.0 * math.sqrt(nbar + 1.0)
    if x_range is None:
        x_range = (-1.125 * span, 1.125 * span)
    if p_range is None:
        p_range = (-1.125 * span, 1.125 * span)
    warnings = []
    if resolution < 32:
        warnings.append("resolution %d is coarse; quadrature checks may fail" % resolution)
    if (x_range[1] - x_range[0]) < 2 * span or (p_range[1] - p_range[0]) < 2 * span:
        warnings.append("grid narrower than 4*sqrt(nbar+1) in some quadrature")
    x = np.linspace(x_range[0], x_range[1], resolution)
    p = np.linspace(p_range[0], p_range[1], resolution)
    W = wigner_values(rho, x[:, None], p[None, :])
    meta = {
        "convention": WIGNER_CONVENTION,
        "n_max": rho.shape[0] - 1,
        "tail_mass": float(probs[-2:].sum() / total) if total > 0 else 0.0,
        "warnings": warnings,
    }
    return PhaseSpaceGrid(_frozen(x), _frozen(p), _frozen(W), meta)
