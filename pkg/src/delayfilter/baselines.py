"""Baseline particle filters for comparison with the delay-grouped SMC.

``standard_pf_run`` is the plain bootstrap filter: it treats every received
measurement as if it had been generated at the current step, so delays and
dropouts are simply ignored (a dropout step carries the weights forward).

``pf_rd_run`` weights each particle by a *mixture* of likelihoods over its
own state history, mixing with the normalised delivery probabilities. It
accounts for the delay distribution but, unlike the delay-grouped filter,
neither commits to a delay hypothesis nor enforces the rule that a
measurement cannot be consumed twice.

Both filters draw random numbers in the same per-step order as
:func:`delayfilter.smc.smc_run` (propagation noise, then one resampling
uniform per delivery), so with ``max_delay = 0`` all three reduce to the
same bootstrap filter, random draw for random draw.
"""

from dataclasses import dataclass

import numpy as np

from .backend import compiled, get_kernels
from .channel import delay_probability_table
from .models import sqrt_psd
from .smc import _gauss_constants, _wrap_innovations

__all__ = ["ParticleResult", "pf_rd_run", "standard_pf_run"]


@dataclass(frozen=True)
class ParticleResult:
    """Per-step output of a baseline particle filter run."""

    means: np.ndarray
    var: np.ndarray
    ess: np.ndarray
    collapsed: np.ndarray

    @property
    def collapse_count(self):
        return int(self.collapsed.sum())


def _baseline_run(model, profile, events, n_particles, rng, kern, mixture):
    n = int(n_particles)
    if n < 1:
        raise ValueError("n_particles must be >= 1")
    nx, nz = model.state_dim, model.meas_dim
    steps = len(events)
    f = compiled(model.transition, kern)
    h = compiled(model.measurement, kern)
    rinv, lognorm = _gauss_constants(model.meas_cov)
    sqrt_q = sqrt_psd(model.process_cov)
    sqrt_p0 = sqrt_psd(model.initial_cov)
    nmax = profile.max_delay if mixture else 0
    if mixture:
        prob_table = delay_probability_table(profile, steps)
        log_gbars = [np.log(p.gamma_bar) for p in prob_table]

    states = model.initial_mean + rng.standard_normal((n, nx)) @ sqrt_p0.T
    # Lag-major history: history[j] is every particle's state j steps back.
    history = np.zeros((nmax + 1, n, nx))
    history[0] = states
    weights = np.full(n, 1.0 / n)

    means = np.zeros((steps, nx))
    var = np.zeros((steps, nx))
    ess_arr = np.zeros(steps)
    collapsed_arr = np.zeros(steps, dtype=np.bool_)

    for t in range(steps):
        k = t + 1
        ev = events[t]
        if ev.step != k:
            raise ValueError("events must be contiguous and 1-based")
        noise = rng.standard_normal((n, nx))
        states = np.asarray(f(states, k)) + noise @ sqrt_q.T
        if mixture:
            for j in range(nmax, 0, -1):
                history[j] = history[j - 1]
            history[0] = states

        if ev.delivered:
            if mixture:
                nbar = prob_table[t].nbar
                logls = np.empty((n, nbar + 1))
                for j in range(nbar + 1):
                    innov = _wrap_innovations(
                        ev.value - np.asarray(h(history[j], k - j)), model.angle_components
                    )
                    logls[:, j] = kern.gauss_loglik(innov, rinv, lognorm)
                logl = kern.mixture_loglik(logls, log_gbars[t])
            else:
                innov = _wrap_innovations(
                    ev.value - np.asarray(h(states, k)), model.angle_components
                )
                logl = kern.gauss_loglik(innov, rinv, lognorm)
            weights, coll = kern.update_weights(weights, logl)
            collapsed_arr[t] = coll
            means[t] = weights @ states
            var[t] = weights @ (states - means[t]) ** 2
            ess_arr[t] = kern.ess(weights)
            u0 = rng.random()
            idx = kern.systematic_resample(weights, u0)
            states = states[idx]
            if mixture:
                history = np.take(history, idx, axis=1)
            weights = np.full(n, 1.0 / n)
        else:
            means[t] = weights @ states
            var[t] = weights @ (states - means[t]) ** 2
            ess_arr[t] = kern.ess(weights)

    return ParticleResult(means=means, var=var, ess=ess_arr, collapsed=collapsed_arr)


def standard_pf_run(model, events, n_particles, rng, kernels=None):
    """Bootstrap particle filter that ignores delays and dropouts.

    Received measurements are matched against the current state; dropout
    steps propagate only. This is the delay-ignorant reference whose error
    grows once delays are frequent.
    """
    from .channel import DelayProfile

    kern = kernels or get_kernels()
    profile = DelayProfile(rate=0.0, max_delay=0)
    return _baseline_run(model, profile, events, n_particles, rng, kern, mixture=False)


def pf_rd_run(model, profile, events, n_particles, rng, kernels=None):
    """Randomized-delay particle filter (likelihood mixture over lags).

    Each particle's weight multiplies the delivery-probability-weighted
    average of the likelihoods of the received value against its own lagged
    states.
    """
    kern = kernels or get_kernels()
    return _baseline_run(model, profile, events, n_particles, rng, kern, mixture=True)
