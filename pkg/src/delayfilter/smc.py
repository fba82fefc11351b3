"""Delay-grouped sequential Monte Carlo filter.

Each particle carries, besides its state trajectory over the delay window, a
record of which delays it assumed at previous delivery steps. On a new
delivery the particle samples a delay hypothesis from the delivery pmf with
*excluded* candidates removed: assuming delay ``j`` at step ``k`` would reuse
a measurement already consumed ``tau`` steps ago whenever ``j`` equals that
earlier assignment plus ``tau``. The particle is then weighted by the
likelihood of the received value against its own lag-``j`` state, so the
delay uncertainty enters through the sampled assignment rather than a
mixture weight. Dropout steps deliver no information: weights are carried
and no resampling happens. Resampling is systematic, at every delivery.

The filter also exposes a per-step delay posterior: each group accumulates
its members' weights times their own assignment probabilities, and the
result is renormalised over groups. Its argmax is the MAP delay; the
weighted mean of the assigned delays is the mean-delay point estimate.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .backend import compiled, get_kernels
from .channel import delay_probability_table
from .models import sqrt_psd, wrap_angle

__all__ = ["DelayPosterior", "SmcResult", "smc_run"]


@dataclass(frozen=True)
class DelayPosterior:
    """Posterior over the delay of the measurement received at one step."""

    step: int
    pmf: np.ndarray
    map_delay: int
    mean_delay: float


@dataclass(frozen=True)
class SmcResult:
    """Output of one delay-grouped SMC run.

    Per-step arrays are indexed by step - 1. Delay fields hold the sentinel
    -1 / NaN on dropout steps, where no measurement delay exists.
    """

    means: np.ndarray
    var: np.ndarray
    ess: np.ndarray
    collapsed: np.ndarray
    delay_map: np.ndarray
    delay_mean: np.ndarray
    delay_pmfs: List[Optional[np.ndarray]]
    group_counts: np.ndarray
    post_resample_counts: np.ndarray
    fallback_count: int
    invariant_violations: int

    @property
    def collapse_count(self):
        return int(self.collapsed.sum())

    def delay_posterior(self, step):
        """The delay posterior at a delivery step, or None on a dropout."""
        pmf = self.delay_pmfs[step - 1]
        if pmf is None:
            return None
        return DelayPosterior(
            step=step,
            pmf=pmf,
            map_delay=int(self.delay_map[step - 1]),
            mean_delay=float(self.delay_mean[step - 1]),
        )


def _gauss_constants(meas_cov):
    rinv = np.linalg.inv(meas_cov)
    sign, logdet = np.linalg.slogdet(meas_cov)
    if sign <= 0:
        raise ValueError("measurement covariance must be positive definite")
    nz = meas_cov.shape[0]
    return rinv, -0.5 * (nz * np.log(2.0 * np.pi) + logdet)


def _wrap_innovations(innov, angle_components):
    for i in angle_components:
        innov[:, i] = wrap_angle(innov[:, i])
    return innov


def smc_run(
    model,
    profile,
    events,
    n_particles,
    rng,
    kernels=None,
    check_invariants=False,
):
    """Run the delay-grouped particle filter over a channel event sequence.

    Parameters
    ----------
    model : SystemModel
    profile : DelayProfile
    events : sequence of ChannelEvent
        One per step, 1-based and contiguous.
    n_particles : int
    rng : numpy.random.Generator
        Consumed in a fixed order (per step: propagation noise; on delivery
        with a non-trivial window also one uniform per particle for the
        delay assignment, then one uniform for resampling), so runs are
        reproducible from the seed.
    kernels : module, optional
        Kernel namespace override (backend selection).
    check_invariants : bool
        When True, verify weight normalisation, delay-group closure and
        exclusion soundness every step; violations are counted, not raised.

    Returns
    -------
    SmcResult
    """
    kern = kernels or get_kernels()
    n = int(n_particles)
    if n < 1:
        raise ValueError("n_particles must be >= 1")
    nx, nz = model.state_dim, model.meas_dim
    nmax = profile.max_delay
    steps = len(events)
    f = compiled(model.transition, kern)
    h = compiled(model.measurement, kern)
    rinv, lognorm = _gauss_constants(model.meas_cov)
    sqrt_q = sqrt_psd(model.process_cov)
    sqrt_p0 = sqrt_psd(model.initial_cov)
    prob_table = delay_probability_table(profile, steps)

    states = model.initial_mean + rng.standard_normal((n, nx)) @ sqrt_p0.T
    # Lag-major history: history[j] is every particle's state j steps back.
    history = np.zeros((nmax + 1, n, nx))
    history[0] = states
    delay_hist = np.full((n, nmax), -1, dtype=np.int64) if nmax > 0 else np.zeros((n, 0), dtype=np.int64)
    last_assign = np.full(n, -1, dtype=np.int64)
    weights = np.full(n, 1.0 / n)
    rows = np.arange(n)

    means = np.zeros((steps, nx))
    var = np.zeros((steps, nx))
    ess_arr = np.zeros(steps)
    collapsed_arr = np.zeros(steps, dtype=np.bool_)
    delay_map = np.full(steps, -1, dtype=np.int64)
    delay_mean = np.full(steps, np.nan)
    delay_pmfs: List[Optional[np.ndarray]] = [None] * steps
    group_counts = np.zeros((steps, nmax + 1), dtype=np.int64)
    post_counts = np.zeros((steps, nmax + 1), dtype=np.int64)
    fallback_count = 0
    violations = 0

    for t in range(steps):
        k = t + 1
        ev = events[t]
        if ev.step != k:
            raise ValueError("events must be contiguous and 1-based")
        noise = rng.standard_normal((n, nx))
        states = np.asarray(f(states, k)) + noise @ sqrt_q.T
        for j in range(nmax, 0, -1):
            history[j] = history[j - 1]
        history[0] = states
        if nmax > 0:
            for j in range(nmax - 1, 0, -1):
                delay_hist[:, j] = delay_hist[:, j - 1]
            delay_hist[:, 0] = last_assign

        if ev.delivered:
            probs = prob_table[t]
            gbar = probs.gamma_bar
            nbar = probs.nbar
            if nbar > 0:
                us = rng.random(n)
                delays, normprobs, nfb = kern.assign_delays(delay_hist[:, :nbar], gbar, us)
                fallback_count += int(nfb)
            else:
                delays = np.zeros(n, dtype=np.int64)
                normprobs = np.ones((n, 1))
            if model.time_invariant_measurement:
                lagged = history[delays, rows]
                z = np.asarray(h(lagged, k))
            else:
                z = np.empty((n, nz))
                for j in range(nbar + 1):
                    mask = delays == j
                    if mask.any():
                        z[mask] = h(history[j, mask], k - j)
            innov = _wrap_innovations(ev.value - z, model.angle_components)
            logl = kern.gauss_loglik(innov, rinv, lognorm)
            weights, coll = kern.update_weights(weights, logl)
            collapsed_arr[t] = coll

            means[t] = weights @ states
            var[t] = weights @ (states - means[t]) ** 2
            ess_arr[t] = kern.ess(weights)
            pmf, mp, mn = kern.delay_posterior_stats(weights, delays, normprobs)
            delay_pmfs[t] = pmf
            delay_map[t] = mp
            delay_mean[t] = mn
            group_counts[t, : nbar + 1] = np.bincount(delays, minlength=nbar + 1)

            if check_invariants:
                if abs(weights.sum() - 1.0) > 1e-9:
                    violations += 1
                if int(group_counts[t].sum()) != n:
                    violations += 1
                for tau in range(1, nbar + 1):
                    prev = delay_hist[:, tau - 1]
                    if np.any((prev >= 0) & (delays == prev + tau)):
                        violations += 1

            u0 = rng.random()
            idx = kern.systematic_resample(weights, u0)
            states = states[idx]
            history = np.take(history, idx, axis=1)
            if nmax > 0:
                delay_hist = delay_hist[idx]
            last_assign = delays[idx]
            post_counts[t, : nbar + 1] = np.bincount(last_assign, minlength=nbar + 1)
            weights = np.full(n, 1.0 / n)
        else:
            # Dropout: no information, weights carried, lineage untouched.
            last_assign = np.full(n, -1, dtype=np.int64)
            means[t] = weights @ states
            var[t] = weights @ (states - means[t]) ** 2
            ess_arr[t] = kern.ess(weights)

    return SmcResult(
        means=means,
        var=var,
        ess=ess_arr,
        collapsed=collapsed_arr,
        delay_map=delay_map,
        delay_mean=delay_mean,
        delay_pmfs=delay_pmfs,
        group_counts=group_counts,
        post_resample_counts=post_counts,
        fallback_count=fallback_count,
        invariant_violations=violations,
    )
