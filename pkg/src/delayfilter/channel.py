"""Lossy measurement link with Poisson-distributed random delays.

At each receive step ``k`` the link draws a delay ``d`` from a Poisson
distribution. The measurement generated ``d`` steps ago is delivered if (a)
the delay does not exceed the usable window ``min(max_delay, k - 1)`` and
(b) that particular measurement has not been delivered at an earlier step.
Otherwise nothing arrives: a packet dropout. A measurement is therefore
delivered at most once, and the delivery probabilities

    gamma_k^0 = pmf(lam_k, 0)
    gamma_k^j = pmf(lam_k, j) * prod_{i=1..j} (1 - pmf(lam_{k-i}, j - i))

sum to less than one, the deficit being the dropout probability.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .backend import get_kernels

__all__ = [
    "ChannelEvent",
    "ChannelState",
    "DelayProbabilities",
    "DelayProfile",
    "LagCovariance",
    "channel_step",
    "delay_probabilities",
    "delay_probability_table",
    "effective_noise_cov",
    "modified_noise_autocovariance",
    "poisson_pmf",
    "simulate_channel",
]


def poisson_pmf(lam, j):
    """Poisson probability mass ``exp(-lam) lam^j / j!``.

    Evaluated in log space so large ``j`` underflows gracefully instead of
    overflowing the factorial. ``lam = 0`` concentrates all mass at 0.
    """
    if lam < 0:
        raise ValueError(f"rate must be non-negative, got {lam}")
    j = int(j)
    if j < 0:
        return 0.0
    if lam == 0.0:
        return 1.0 if j == 0 else 0.0
    return math.exp(-lam + j * math.log(lam) - math.lgamma(j + 1))


@dataclass(frozen=True)
class DelayProfile:
    """Delay law of the link.

    Parameters
    ----------
    rate : float or callable
        Poisson rate, either constant or a function of the receive step
        ``k`` (1-based).
    max_delay : int
        Largest usable delay ``N``; draws beyond it are dropped.
    """

    rate: Union[float, Callable[[int], float]]
    max_delay: int

    def __post_init__(self):
        if self.max_delay < 0:
            raise ValueError("max_delay must be >= 0")
        if not callable(self.rate) and self.rate < 0:
            raise ValueError("rate must be >= 0")

    def lam(self, k):
        """Poisson rate at receive step ``k``."""
        return float(self.rate(k)) if callable(self.rate) else float(self.rate)

    def nbar(self, k):
        """Effective maximum delay at step ``k``: ``min(N, k - 1)``."""
        if k < 1:
            raise ValueError("steps are 1-based")
        return min(self.max_delay, k - 1)


@dataclass(frozen=True)
class DelayProbabilities:
    """Delivery pmf over delays 0..nbar at one step, plus the dropout mass."""

    gamma: np.ndarray
    gamma_bar: np.ndarray
    dropout: float

    @property
    def nbar(self):
        return len(self.gamma) - 1


def delay_probabilities(profile, k):
    """Delivery probabilities ``gamma_k^j`` for ``j = 0..min(N, k-1)``.

    The unnormalised ``gamma`` are the joint probabilities that the step-k
    draw targets lag ``j`` and no earlier draw already consumed that
    measurement; ``gamma_bar`` renormalises them over the delivery event.
    """
    if k < 1:
        raise ValueError("steps are 1-based")
    nbar = profile.nbar(k)
    gamma = np.empty(nbar + 1)
    gamma[0] = poisson_pmf(profile.lam(k), 0)
    for j in range(1, nbar + 1):
        g = poisson_pmf(profile.lam(k), j)
        for i in range(1, j + 1):
            g *= 1.0 - poisson_pmf(profile.lam(k - i), j - i)
        gamma[j] = g
    total = float(gamma.sum())
    if total <= 0.0:
        raise ValueError("degenerate delay law: delivery probability is zero")
    dropout = max(0.0, 1.0 - total)
    return DelayProbabilities(gamma=gamma, gamma_bar=gamma / total, dropout=dropout)


def delay_probability_table(profile, steps):
    """Per-step :func:`delay_probabilities` for steps ``1..steps``.

    With a constant rate the law stops changing once the window is full
    (``k > N``), so only ``N + 1`` distinct entries are computed and the last
    one is shared. Time-varying rates are evaluated at every step.
    """
    static = not callable(profile.rate)
    table = []
    for t in range(steps):
        k = t + 1
        if static and k > profile.max_delay + 1:
            table.append(table[-1])
        else:
            table.append(delay_probabilities(profile, k))
    return table


@dataclass(frozen=True)
class ChannelEvent:
    """Outcome of one receive step.

    ``value`` is the delivered measurement or ``None`` on a dropout;
    ``true_delay`` is the realised delay (``None`` on a dropout).
    """

    step: int
    value: Optional[np.ndarray]
    true_delay: Optional[int]

    @property
    def delivered(self):
        return self.value is not None


@dataclass
class ChannelState:
    """Rolling link state for step-by-step simulation.

    Keeps at most ``max_delay + 1`` recent measurements together with their
    delivered flags; older entries can never be claimed again and are pruned.
    """

    profile: DelayProfile
    buffer: dict = field(default_factory=dict)
    delivered_steps: set = field(default_factory=set)
    last_step: int = 0

    def push(self, k, z):
        if k != self.last_step + 1:
            raise ValueError(f"expected step {self.last_step + 1}, got {k}")
        self.buffer[k] = np.asarray(z, dtype=float)
        self.last_step = k
        horizon = k - self.profile.max_delay
        for s in [s for s in self.buffer if s < horizon]:
            del self.buffer[s]
            self.delivered_steps.discard(s)


def channel_step(state, profile, k, z_k, rng, draw=None):
    """Advance the link one step and return the receive-side event.

    ``z_k`` is the sensor measurement generated at step ``k``. The Poisson
    delay is drawn from ``rng`` unless an explicit ``draw`` is injected
    (used by tests that replay fixed delay sequences).
    """
    state.push(k, z_k)
    d = int(rng.poisson(profile.lam(k))) if draw is None else int(draw)
    if d > profile.nbar(k):
        return ChannelEvent(step=k, value=None, true_delay=None)
    src = k - d
    if src in state.delivered_steps:
        return ChannelEvent(step=k, value=None, true_delay=None)
    state.delivered_steps.add(src)
    return ChannelEvent(step=k, value=state.buffer[src].copy(), true_delay=d)


def simulate_channel(profile, zs, rng, draws=None):
    """Pass a whole measurement sequence through the link.

    Parameters
    ----------
    profile : DelayProfile
    zs : ndarray, shape (steps, nz)
        Sensor measurements for steps 1..steps.
    rng : numpy.random.Generator
        Consumed once, for the vectorised Poisson draws.
    draws : ndarray of int, optional
        Pre-drawn delays replacing the Poisson sampling (testing hook).

    Returns
    -------
    list of ChannelEvent
    """
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    steps = zs.shape[0]
    if draws is None:
        lams = np.array([profile.lam(k) for k in range(1, steps + 1)])
        draws = rng.poisson(lams).astype(np.int64)
    else:
        draws = np.asarray(draws, dtype=np.int64)
        if draws.shape != (steps,):
            raise ValueError("draws must have one entry per step")
        if np.any(draws < 0):
            raise ValueError("delays must be non-negative")
    kern = get_kernels()
    delivered, delay = kern.channel_deliver(draws, profile.max_delay)
    events = []
    for t in range(steps):
        if delivered[t]:
            d = int(delay[t])
            events.append(ChannelEvent(step=t + 1, value=zs[t - d].copy(), true_delay=d))
        else:
            events.append(ChannelEvent(step=t + 1, value=None, true_delay=None))
    return events


def effective_noise_cov(profile, meas_cov, k):
    """Second moment of the effective measurement noise at step ``k``.

    The received noise is the true sensor noise of the delivered lag on
    delivery steps and zero on dropouts, so its lag-0 autocovariance is the
    delivery-weighted sum ``sum_j gamma_k^j R``; at positive lags it
    vanishes because no measurement is delivered twice.
    """
    probs = delay_probabilities(profile, k)
    return float(probs.gamma.sum()) * np.asarray(meas_cov, dtype=float)


@dataclass(frozen=True)
class LagCovariance:
    """Empirical autocovariance of the effective noise at one lag."""

    lag: int
    value: np.ndarray
    se: np.ndarray
    n_terms: int


def modified_noise_autocovariance(events, noises, max_lag, burn_in=None):
    """Empirical autocovariance of the effective measurement noise.

    Parameters
    ----------
    events : sequence of ChannelEvent
    noises : ndarray, shape (steps, nz)
        The iid sensor noises attached to the measurements, indexed by
        generation step.
    max_lag : int
        Largest lag to evaluate.
    burn_in : int, optional
        Steps discarded at the front, where the usable delay window is still
        growing; defaults to ``min(10, steps // 10)``.

    Returns
    -------
    list of LagCovariance
        Entry ``a`` holds the componentwise average of ``nu_k * nu_{k+a}``
        (the diagonal of the lag-``a`` autocovariance) with a standard error
        estimated by batch means, since products closer than the maximum
        delay share draws.
    """
    noises = np.atleast_2d(np.asarray(noises, dtype=float))
    steps, nz = noises.shape
    nu = np.zeros((steps, nz))
    for ev in events:
        if ev.delivered:
            nu[ev.step - 1] = noises[ev.step - 1 - ev.true_delay]
    if burn_in is None:
        burn_in = min(10, steps // 10)
    out = []
    for lag in range(max_lag + 1):
        prod = nu[burn_in : steps - lag] * nu[burn_in + lag :]
        n = prod.shape[0]
        value = prod.mean(axis=0)
        nbatch = max(2, min(64, n // 32))
        usable = (n // nbatch) * nbatch
        batches = prod[:usable].reshape(nbatch, -1, nz).mean(axis=1)
        se = batches.std(axis=0, ddof=1) / math.sqrt(nbatch)
        out.append(LagCovariance(lag=lag, value=value, se=se, n_terms=n))
    return out
