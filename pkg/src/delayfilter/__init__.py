"""State estimation for systems whose measurements arrive through a lossy
network link that can delay each packet by a random number of steps or drop
it outright.

The package is organised around a small set of building blocks:

``channel``
    Poisson-delay link model: per-step delay probabilities, dropout
    probability, and a simulator that enforces the no-repetition rule
    (a measurement is delivered at most once).
``models``
    Benchmark state-space models (scalar growth model, coordinated-turn
    radar tracking) expressed as batched transition/measurement callables.
``gaussfilter``
    Gaussian approximated filter over a fixed-lag window of states, using
    a third-degree spherical-radial cubature rule.
``smc``
    Delay-grouped particle filter that samples a delay hypothesis per
    particle and exposes the per-step delay posterior.
``baselines``
    Delay-ignorant bootstrap particle filter and a randomized-delay
    particle filter that mixes likelihoods over each particle's own
    history.
``harness``
    Monte Carlo campaign runner, channel diagnostics, CSV/JSON export.

Heavy numeric loops live in :mod:`delayfilter.kernels` and are compiled
with numba when available; set ``DELAYFILTER_BACKEND=numpy`` to force the
pure-numpy fallback (see :mod:`delayfilter.backend`).
"""

from .backend import active_backend, get_kernels
from .channel import (
    ChannelEvent,
    ChannelState,
    DelayProfile,
    channel_step,
    delay_probabilities,
    poisson_pmf,
    simulate_channel,
)
from .exceptions import ConfigError, FilterDivergence
from .gaussfilter import GaussianBelief, WindowBelief, gaf_run
from .models import SystemModel, coordinated_turn_model, growth_model, simulate_truth
from .smc import smc_run
from .baselines import pf_rd_run, standard_pf_run
from .harness import ScenarioConfig, channel_diagnostics, load_config, run_campaign

__version__ = "0.1.0"

__all__ = [
    "ChannelEvent",
    "ChannelState",
    "ConfigError",
    "DelayProfile",
    "FilterDivergence",
    "GaussianBelief",
    "ScenarioConfig",
    "SystemModel",
    "WindowBelief",
    "active_backend",
    "channel_diagnostics",
    "channel_step",
    "coordinated_turn_model",
    "delay_probabilities",
    "gaf_run",
    "get_kernels",
    "growth_model",
    "load_config",
    "pf_rd_run",
    "poisson_pmf",
    "run_campaign",
    "simulate_channel",
    "simulate_truth",
    "smc_run",
    "standard_pf_run",
]
