"""Binary-outcome phonon measurement through a Jaynes–Cummings interaction.

A qubit prepared in its excited state couples to the mechanical mode for
a fixed time, giving the interaction angle θ = gτ. Reading the qubit out
in the energy basis applies one of two measurement operators to the
mechanics:

    x = 1:  E(1)|n> = cos(θ√(n+1)) |n>
    x = 0:  E(0)|n> = −i sin(θ√(n+1)) |n+1>

E†(0)E(0) + E†(1)E(1) = 1 on the truncated space (for n ≤ n_max−1).
Conditioning repeatedly on x = 1 multiplies the number distribution by a
cos² comb and collapses it toward a number state.
"""

from typing import NamedTuple, Sequence

import numpy as np

from .errors import HistoryUnderflowError, ImpossibleOutcomeError
from .fock import MechanicalState, NumberDistribution

PROB_FLOOR = 1e-15


def _cos_factors(theta: float, dim: int) -> np.ndarray:
    n = np.arange(dim, dtype=float)
    return np.cos(theta * np.sqrt(n + 1.0))


class MeasurementResult(NamedTuple):
    post_state: MechanicalState
    probability: float


def apply_jc_measurement(state: MechanicalState, theta: float, x: int) -> MeasurementResult:
    """Condition the mechanical state on qubit readout x ∈ {0, 1}.

    Returns the normalized post-measurement state and the outcome
    probability. Raises ImpossibleOutcomeError below probability 1e-15.
    For x = 0 the population is shifted up by one; any amplitude pushed
    past the cutoff is dropped (negligible for well-truncated states).
    """
    if x not in (0, 1):
        raise ValueError("outcome x must be 0 or 1")
    amps = state.amplitudes
    dim = len(amps)
    cos = _cos_factors(theta, dim)
    if x == 1:
        post = amps * cos
    else:
        sin = np.sin(theta * np.sqrt(np.arange(dim, dtype=float) + 1.0))
        post = np.zeros(dim, dtype=complex)
        post[1:] = -1j * sin[:-1] * amps[:-1]
    prob = float(np.vdot(post, post).real)
    if prob < PROB_FLOOR:
        raise ImpossibleOutcomeError(
            "outcome x=%d has probability %.3e < %.0e" % (x, prob, PROB_FLOOR))
    return MeasurementResult(MechanicalState(post / np.sqrt(prob)), prob)


def outcome_probability_curve(state, theta_grid) -> np.ndarray:
    """p(x=1)(θ) = Σ_n cos²(θ√(n+1)) P(n) for each θ in the grid."""
    if isinstance(state, MechanicalState):
        probs = state.number_distribution().probs
    elif isinstance(state, NumberDistribution):
        probs = state.probs
    else:
        probs = np.asarray(state, dtype=float)
    thetas = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    root = np.sqrt(np.arange(len(probs), dtype=float) + 1.0)
    return np.cos(thetas[:, None] * root[None, :]) ** 2 @ probs


def repeated_conditional_distribution(initial: NumberDistribution,
                                      thetas: Sequence[float]) -> list:
    """Distributions after conditioning every readout on x = 1.

    Element 0 is the initial distribution; element r the distribution
    after the first r angles. Raises HistoryUnderflowError if the
    cumulative history probability underflows below 1e-300.
    """
    seq = [initial]
    p = initial.probs.copy()
    history = 1.0
    root = np.sqrt(np.arange(len(p), dtype=float) + 1.0)
    for r, theta in enumerate(thetas):
        p = p * np.cos(theta * root) ** 2
        step = p.sum()
        history *= step
        if history < 1e-300:
            raise HistoryUnderflowError(
                "history probability underflowed after %d readouts; "
                "use fewer repetitions" % (r + 1))
        p = p / step
        seq.append(NumberDistribution(p))
    return seq


def constant_theta_distribution(initial: NumberDistribution, theta: float,
                                n_rounds: int) -> NumberDistribution:
    """Closed form after N identical x=1 readouts: P_N(n) ∝ cos^{2N}(θ√(n+1)) P_0(n)."""
    n = np.arange(len(initial.probs), dtype=float)
    comb = np.cos(theta * np.sqrt(n + 1.0)) ** (2 * n_rounds)
    p = comb * initial.probs
    s = p.sum()
    if s < 1e-300:
        raise HistoryUnderflowError("closed-form history probability underflowed")
    return NumberDistribution(p / s)


def gaussian_width_estimate(n_bar: float, N: int) -> float:
    """Printed Gaussian-width estimate 2n̄²/(πN) for a comb aligned at θ√n̄ = π."""
    if n_bar <= 0 or N < 1:
        raise ValueError("require n_bar > 0 and N >= 1")
    return 2.0 * n_bar ** 2 / (np.pi * N)


class SampledOutcome(NamedTuple):
    x: int
    post_state: MechanicalState
    probability: float


def sample_jc_outcome(state: MechanicalState, theta: float,
                      rng: np.random.Generator) -> SampledOutcome:
    """Draw a readout x with its Born probability and collapse the state."""
    p1 = float(outcome_probability_curve(state, [theta])[0])
    x = 1 if rng.random() < p1 else 0
    result = apply_jc_measurement(state, theta, x)
    return SampledOutcome(x, result.post_state, result.probability)
