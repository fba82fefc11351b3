"""Monte Carlo benchmark harness: scenario configs, campaigns, diagnostics.

A *campaign* repeats the same experiment over independent Monte Carlo runs:
simulate a truth trajectory, pass its measurements through the delay
channel once, then hand the identical event sequence to every filter in the
roster. Per-filter RMSE curves, wall-clock times, divergence records and
delay-estimation errors are aggregated into a :class:`CampaignResult` and
optionally exported as CSV files plus a ``summary.json``.

Randomness is organised as a seed tree: the scenario seed spawns one branch
per run, and each run branch spawns fixed children for the truth, the
channel and each filter slot, so results are a pure function of (config,
seed) regardless of which filters are enabled. All exported artifacts are
byte-deterministic except the ``timing`` section of the summary.
"""

import json
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import stats as _sps

from .backend import get_kernels
from .baselines import pf_rd_run, standard_pf_run
from .channel import (
    DelayProfile,
    delay_probabilities,
    modified_noise_autocovariance,
    simulate_channel,
)
from .exceptions import ConfigError, FilterDivergence
from .gaussfilter import gaf_run
from .models import (
    CoordinatedTurnParams,
    GrowthModelParams,
    coordinated_turn_model,
    growth_model,
    simulate_truth,
)
from .smc import smc_run

__all__ = [
    "CampaignResult",
    "ChannelDiagnostics",
    "ScenarioConfig",
    "build_model",
    "build_profile",
    "channel_diagnostics",
    "load_config",
    "problem1_config",
    "problem2_config",
    "rmse_selectors",
    "run_campaign",
    "write_outputs",
]

FILTER_ORDER = ("gaf", "smc", "standard_pf", "pf_rd")

_MODEL_PARAMS = {
    "growth": GrowthModelParams,
    "coordinated_turn": CoordinatedTurnParams,
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one benchmark scenario.

    Mirrors the JSON layout accepted by :func:`load_config`; every field has
    a strict type and unknown JSON keys are rejected.
    """

    model_name: str
    model_params: Tuple[Tuple[str, object], ...]
    rate: float
    max_delay: int
    steps: int
    mc_runs: int
    particles: int
    filters: Tuple[str, ...] = FILTER_ORDER
    dropout_policy: str = "predicted"
    seed: int = 0
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.model_name not in _MODEL_PARAMS:
            raise ConfigError(f"unknown model {self.model_name!r}")
        if self.rate < 0:
            raise ConfigError("channel lambda must be >= 0")
        if self.max_delay < 0:
            raise ConfigError("max_delay must be >= 0")
        for name, lo in (("steps", 1), ("mc_runs", 1), ("particles", 1)):
            if getattr(self, name) < lo:
                raise ConfigError(f"{name} must be >= {lo}")
        if not self.filters:
            raise ConfigError("filters must be non-empty")
        for f in self.filters:
            if f not in FILTER_ORDER:
                raise ConfigError(f"unknown filter {f!r}; choose from {FILTER_ORDER}")
        if len(set(self.filters)) != len(self.filters):
            raise ConfigError("filters must be unique")
        if self.dropout_policy not in ("predicted", "skip"):
            raise ConfigError("dropout_policy must be 'predicted' or 'skip'")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")

    def to_dict(self):
        return {
            "model": {"name": self.model_name, "params": dict(self.model_params)},
            "channel": {"lambda": self.rate, "max_delay": self.max_delay},
            "steps": self.steps,
            "mc_runs": self.mc_runs,
            "particles": self.particles,
            "filters": list(self.filters),
            "dropout_policy": self.dropout_policy,
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, data):
        data = _expect_mapping(data, "config")
        allowed = {
            "model",
            "channel",
            "steps",
            "mc_runs",
            "particles",
            "filters",
            "dropout_policy",
            "seed",
            "out_dir",
        }
        _reject_unknown(data, allowed, "config")
        model = _expect_mapping(data.get("model"), "model")
        _reject_unknown(model, {"name", "params"}, "model")
        name = model.get("name")
        if not isinstance(name, str):
            raise ConfigError("model.name must be a string")
        params = model.get("params", {})
        params = _expect_mapping(params, "model.params")
        params_cls = _MODEL_PARAMS.get(name)
        if params_cls is None:
            raise ConfigError(f"unknown model {name!r}")
        valid = {f.name for f in fields(params_cls)}
        _reject_unknown(params, valid, "model.params")
        norm_params = tuple(
            (k, tuple(v) if isinstance(v, list) else v) for k, v in sorted(params.items())
        )
        chan = _expect_mapping(data.get("channel"), "channel")
        _reject_unknown(chan, {"lambda", "max_delay"}, "channel")
        filters = data.get("filters", list(FILTER_ORDER))
        if not isinstance(filters, (list, tuple)):
            raise ConfigError("filters must be a list")
        try:
            return cls(
                model_name=name,
                model_params=norm_params,
                rate=_expect_number(chan.get("lambda"), "channel.lambda"),
                max_delay=_expect_int(chan.get("max_delay"), "channel.max_delay"),
                steps=_expect_int(data.get("steps"), "steps"),
                mc_runs=_expect_int(data.get("mc_runs"), "mc_runs"),
                particles=_expect_int(data.get("particles"), "particles"),
                filters=tuple(filters),
                dropout_policy=data.get("dropout_policy", "predicted"),
                seed=_expect_int(data.get("seed", 0), "seed"),
                out_dir=data.get("out_dir"),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _expect_mapping(value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a JSON object")
    return value


def _reject_unknown(mapping, allowed, where):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _expect_number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number")
    return float(value)


def _expect_int(value, where):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer")
    return int(value)


def load_config(path):
    """Parse a scenario config from a JSON file, strictly."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return ScenarioConfig.from_dict(data)


def problem1_config(**overrides):
    """Growth-model benchmark scenario (50 steps, 100 runs, 500 particles)."""
    cfg = ScenarioConfig(
        model_name="growth",
        model_params=(),
        rate=0.8,
        max_delay=3,
        steps=50,
        mc_runs=100,
        particles=500,
        seed=20260823,
    )
    return replace(cfg, **overrides) if overrides else cfg


def problem2_config(**overrides):
    """Coordinated-turn benchmark scenario (100 steps, 25 runs, 5000 particles)."""
    cfg = ScenarioConfig(
        model_name="coordinated_turn",
        model_params=(),
        rate=0.9,
        max_delay=3,
        steps=100,
        mc_runs=25,
        particles=5000,
        seed=20260824,
    )
    return replace(cfg, **overrides) if overrides else cfg


def build_model(config):
    """Instantiate the SystemModel described by a config."""
    params_cls = _MODEL_PARAMS[config.model_name]
    try:
        params = params_cls(**dict(config.model_params))
    except TypeError as exc:
        raise ConfigError(f"bad model params: {exc}") from exc
    if config.model_name == "growth":
        return growth_model(params)
    return coordinated_turn_model(params)


def build_profile(config):
    return DelayProfile(rate=config.rate, max_delay=config.max_delay)


def rmse_selectors(model_name):
    """Named index groups over which RMSE is reported for a model."""
    if model_name == "growth":
        return {"state": (0,)}
    if model_name == "coordinated_turn":
        return {"position": (0, 2), "velocity": (1, 3), "turn_rate": (4,)}
    raise ConfigError(f"unknown model {model_name!r}")


# ---------------------------------------------------------------------------
# Campaign
# ---------------------------------------------------------------------------


@dataclass
class CampaignResult:
    """Aggregated output of a Monte Carlo campaign.

    ``rmse[filter][selector]`` is the per-step RMSE over the non-diverged
    runs of that filter; ``time_avg_rmse`` averages it over steps. The
    ``timing`` block is the only non-deterministic part of the result.
    """

    config: ScenarioConfig
    backend: str
    selectors: Dict[str, Tuple[int, ...]]
    rmse: Dict[str, Dict[str, np.ndarray]]
    time_avg_rmse: Dict[str, Dict[str, float]]
    timing: Dict[str, Dict[str, Optional[float]]]
    divergence: Dict[str, List[int]]
    collapse: Dict[str, int]
    delay_rmse: Dict[str, np.ndarray]
    delay_time_avg: Dict[str, float]
    delivered_per_step: np.ndarray
    channel: Dict[str, object]
    invariant_violations: int = 0

    def to_dict(self):
        def arr(a):
            return np.asarray(a).tolist()

        return {
            "config": self.config.to_dict(),
            "backend": self.backend,
            "selectors": {k: list(v) for k, v in self.selectors.items()},
            "rmse": {f: {s: arr(v) for s, v in sel.items()} for f, sel in self.rmse.items()},
            "time_avg_rmse": self.time_avg_rmse,
            "timing": self.timing,
            "divergence": self.divergence,
            "collapse": self.collapse,
            "delay_rmse": {k: arr(v) for k, v in self.delay_rmse.items()},
            "delay_time_avg": self.delay_time_avg,
            "delivered_per_step": arr(self.delivered_per_step),
            "channel": self.channel,
            "invariant_violations": self.invariant_violations,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            config=ScenarioConfig.from_dict(data["config"]),
            backend=data["backend"],
            selectors={k: tuple(v) for k, v in data["selectors"].items()},
            rmse={
                f: {s: np.asarray(v) for s, v in sel.items()}
                for f, sel in data["rmse"].items()
            },
            time_avg_rmse=data["time_avg_rmse"],
            timing=data["timing"],
            divergence=data["divergence"],
            collapse=data["collapse"],
            delay_rmse={k: np.asarray(v) for k, v in data["delay_rmse"].items()},
            delay_time_avg=data["delay_time_avg"],
            delivered_per_step=np.asarray(data["delivered_per_step"]),
            channel=data["channel"],
            invariant_violations=data["invariant_violations"],
        )

    @property
    def failed(self):
        """True when some filter produced no usable run at all."""
        return any(
            len(runs) >= self.config.mc_runs for runs in self.divergence.values()
        ) or any(
            not np.all(np.isfinite(v))
            for sel in self.rmse.values()
            for v in sel.values()
        )


_WARMED = set()


def _spawned_rngs(run_ss):
    """Fixed-slot child generators: truth, channel, then one per filter name."""
    children = run_ss.spawn(2 + len(FILTER_ORDER))
    rngs = {
        "truth": np.random.default_rng(children[0]),
        "channel": np.random.default_rng(children[1]),
    }
    for i, name in enumerate(FILTER_ORDER):
        rngs[name] = np.random.default_rng(children[2 + i])
    return rngs


def _call_filter(name, model, profile, events, config, rng, kern, check):
    if name == "gaf":
        return gaf_run(
            model, profile, events, dropout_policy=config.dropout_policy, kernels=kern
        )
    if name == "smc":
        return smc_run(
            model, profile, events, config.particles, rng, kernels=kern, check_invariants=check
        )
    if name == "standard_pf":
        return standard_pf_run(model, events, config.particles, rng, kernels=kern)
    if name == "pf_rd":
        return pf_rd_run(model, profile, events, config.particles, rng, kernels=kern)
    raise ConfigError(f"unknown filter {name!r}")


def _warmup(config, model, profile, kern):
    """Run every filter once on a tiny scenario so JIT compilation happens
    outside the timed region."""
    key = (config.model_name, tuple(sorted(config.filters)), config.dropout_policy, kern.BACKEND)
    if key in _WARMED:
        return
    tiny = replace(config, steps=3, mc_runs=1, particles=8)
    rngs = _spawned_rngs(np.random.SeedSequence(0))
    _, zs = simulate_truth(model, tiny.steps, rngs["truth"])
    events = simulate_channel(profile, zs, rngs["channel"])
    for name in tiny.filters:
        try:
            _call_filter(name, model, profile, events, tiny, rngs[name], kern, False)
        except FilterDivergence:
            pass
    _WARMED.add(key)


def run_campaign(config, kernels=None, check_invariants=False, progress=None):
    """Execute a full Monte Carlo campaign for one scenario.

    Parameters
    ----------
    config : ScenarioConfig
    kernels : module, optional
        Kernel namespace (backend) shared by all filters.
    check_invariants : bool
        Forward per-step invariant checking to the SMC filter.
    progress : callable, optional
        Called with ``(run_index, mc_runs)`` after each run.

    Returns
    -------
    CampaignResult
    """
    kern = kernels or get_kernels()
    model = build_model(config)
    profile = build_profile(config)
    selectors = rmse_selectors(config.model_name)
    steps = config.steps
    roster = [f for f in FILTER_ORDER if f in config.filters]

    _warmup(config, model, profile, kern)

    sq_acc = {f: {s: np.zeros(steps) for s in selectors} for f in roster}
    ok_runs = {f: 0 for f in roster}
    timing_acc = {f: 0.0 for f in roster}
    diverged = {f: [] for f in roster}
    collapse = {f: 0 for f in roster}
    delay_sq = {"map": np.zeros(steps), "mean": np.zeros(steps)}
    delay_cnt = np.zeros(steps, dtype=np.int64)
    delivered_acc = np.zeros(steps, dtype=np.int64)
    true_delay_hist = np.zeros(profile.max_delay + 1, dtype=np.int64)
    violations = 0

    root = np.random.SeedSequence(config.seed)
    run_seeds = root.spawn(config.mc_runs)
    for r in range(config.mc_runs):
        rngs = _spawned_rngs(run_seeds[r])
        truth, zs = simulate_truth(model, steps, rngs["truth"])
        events = simulate_channel(profile, zs, rngs["channel"])
        for t, ev in enumerate(events):
            if ev.delivered:
                delivered_acc[t] += 1
                true_delay_hist[ev.true_delay] += 1
        for name in roster:
            t0 = time.perf_counter()
            try:
                res = _call_filter(name, model, profile, events, config, rngs[name], kern, check_invariants)
            except FilterDivergence:
                timing_acc[name] += time.perf_counter() - t0
                diverged[name].append(r)
                continue
            timing_acc[name] += time.perf_counter() - t0
            est = res.means
            if not np.all(np.isfinite(est)):
                diverged[name].append(r)
                continue
            ok_runs[name] += 1
            err = est - truth
            for s, idx in selectors.items():
                sq_acc[name][s] += np.sum(err[:, list(idx)] ** 2, axis=1)
            if hasattr(res, "collapse_count"):
                collapse[name] += res.collapse_count
            if name == "smc":
                violations += res.invariant_violations
                for t, ev in enumerate(events):
                    if ev.delivered:
                        delay_cnt[t] += 1
                        delay_sq["map"][t] += (res.delay_map[t] - ev.true_delay) ** 2
                        delay_sq["mean"][t] += (res.delay_mean[t] - ev.true_delay) ** 2
        if progress is not None:
            progress(r + 1, config.mc_runs)

    rmse = {}
    time_avg = {}
    for name in roster:
        rmse[name] = {}
        time_avg[name] = {}
        m = ok_runs[name]
        for s in selectors:
            curve = np.sqrt(sq_acc[name][s] / m) if m else np.full(steps, np.nan)
            rmse[name][s] = curve
            time_avg[name][s] = float(np.mean(curve))

    # Delay-estimation RMSE only averages delivery steps: on a dropout there
    # is no true delay to compare against.
    delay_rmse = {}
    delay_time_avg = {}
    if "smc" in roster:
        for k, v in delay_sq.items():
            curve = np.sqrt(np.where(delay_cnt > 0, v / np.maximum(delay_cnt, 1), np.nan))
            delay_rmse[k] = curve
            delay_time_avg[k] = float(np.nanmean(curve)) if np.any(delay_cnt > 0) else float("nan")

    base = timing_acc.get("standard_pf")
    timing = {}
    for name in roster:
        per_run = timing_acc[name] / config.mc_runs
        timing[name] = {
            "total_s": timing_acc[name],
            "per_run_s": per_run,
            "relative_to_standard_pf": (timing_acc[name] / base) if base else None,
        }

    probs_end = delay_probabilities(profile, steps) if steps > profile.max_delay else None
    total_delivered = int(delivered_acc.sum())
    total_steps = steps * config.mc_runs
    channel_stats = {
        "delivered_rate": total_delivered / total_steps,
        "dropout_rate": 1.0 - total_delivered / total_steps,
        "true_delay_hist": true_delay_hist.tolist(),
        "expected_steady_gamma": probs_end.gamma.tolist() if probs_end else None,
        "expected_steady_dropout": probs_end.dropout if probs_end else None,
    }

    return CampaignResult(
        config=config,
        backend=kern.BACKEND,
        selectors=selectors,
        rmse=rmse,
        time_avg_rmse=time_avg,
        timing=timing,
        divergence=diverged,
        collapse=collapse,
        delay_rmse=delay_rmse if "smc" in roster else {},
        delay_time_avg=delay_time_avg if "smc" in roster else {},
        delivered_per_step=delivered_acc,
        channel=channel_stats,
        invariant_violations=violations,
    )


def run_single(config, run_index=0, kernels=None):
    """Reproduce one Monte Carlo run of a campaign and keep full traces.

    Returns ``(truth, events, results)`` where ``results`` maps filter name
    to its raw result object (or a FilterDivergence instance). The seed tree
    matches :func:`run_campaign`, so run ``r`` here is bit-identical to run
    ``r`` inside the campaign.
    """
    kern = kernels or get_kernels()
    model = build_model(config)
    profile = build_profile(config)
    root = np.random.SeedSequence(config.seed)
    run_ss = root.spawn(config.mc_runs)[run_index]
    rngs = _spawned_rngs(run_ss)
    truth, zs = simulate_truth(model, config.steps, rngs["truth"])
    events = simulate_channel(profile, zs, rngs["channel"])
    results = {}
    for name in [f for f in FILTER_ORDER if f in config.filters]:
        try:
            results[name] = _call_filter(name, model, profile, events, config, rngs[name], kern, False)
        except FilterDivergence as exc:
            results[name] = exc
    return truth, events, results


# ---------------------------------------------------------------------------
# Channel diagnostics
# ---------------------------------------------------------------------------


@dataclass
class ChannelDiagnostics:
    """Statistical comparison of a simulated channel against its law.

    The chi-square and dropout checks are computed on a stride-``(N+1)``
    subsample of steady-state steps: outcomes further apart than the maximum
    delay share no Poisson draws, so the subsample is iid and the classical
    tests apply exactly.
    """

    samples: int
    strided_n: int
    observed: np.ndarray
    expected: np.ndarray
    chi2: float
    chi2_dof: int
    chi2_pvalue: float
    dropout_rate: float
    dropout_expected: float
    dropout_zscore: float
    whiteness: List[Dict[str, float]]
    full_hist: np.ndarray

    def to_dict(self):
        return {
            "samples": self.samples,
            "strided_n": self.strided_n,
            "observed": self.observed.tolist(),
            "expected": self.expected.tolist(),
            "chi2": self.chi2,
            "chi2_dof": self.chi2_dof,
            "chi2_pvalue": self.chi2_pvalue,
            "dropout_rate": self.dropout_rate,
            "dropout_expected": self.dropout_expected,
            "dropout_zscore": self.dropout_zscore,
            "whiteness": self.whiteness,
            "full_hist": self.full_hist.tolist(),
        }


def channel_diagnostics(profile, samples, seed=0, meas_cov=None, max_lag=3, kernels=None):
    """Simulate the channel law and test it against the predicted pmf.

    Parameters
    ----------
    profile : DelayProfile
    samples : int
        Number of receive steps to simulate.
    seed : int
    meas_cov : ndarray, optional
        Sensor noise covariance for the whiteness check (identity default).
    max_lag : int
        Largest autocovariance lag to report.

    Returns
    -------
    ChannelDiagnostics
    """
    kern = kernels or get_kernels()
    n = profile.max_delay
    if samples < (n + 1) * 50:
        raise ValueError("samples too small for meaningful diagnostics")
    rng = np.random.default_rng(seed)
    lams = np.array([profile.lam(k) for k in range(1, samples + 1)])
    draws = rng.poisson(lams).astype(np.int64)
    delivered, delay = kern.channel_deliver(draws, n)

    # Steady-state stride: start past the window build-up, step N+1.
    start = n + 1
    sel = np.arange(start, samples, n + 1)
    out = np.where(delivered[sel], delay[sel], n + 1)  # category n+1 = dropout
    observed = np.bincount(out, minlength=n + 2).astype(float)
    probs = delay_probabilities(profile, samples)
    expected_p = np.concatenate([probs.gamma, [probs.dropout]])
    expected = expected_p * sel.size
    mask = expected > 0
    chi2 = float(np.sum((observed[mask] - expected[mask]) ** 2 / expected[mask]))
    dof = int(mask.sum() - 1)
    pvalue = float(_sps.chi2.sf(chi2, dof))

    p = probs.dropout
    drop_obs = float(np.mean(out == n + 1))
    if 0.0 < p < 1.0:
        z = (drop_obs - p) / math.sqrt(p * (1 - p) / sel.size)
    else:
        z = 0.0

    nz = 1 if meas_cov is None else np.asarray(meas_cov).shape[0]
    r = np.eye(nz) if meas_cov is None else np.asarray(meas_cov, dtype=float)
    noises = rng.standard_normal((samples, nz)) @ np.linalg.cholesky(r).T
    from .channel import ChannelEvent

    events = [
        ChannelEvent(
            step=t + 1,
            value=np.zeros(nz) if delivered[t] else None,
            true_delay=int(delay[t]) if delivered[t] else None,
        )
        for t in range(samples)
    ]
    lag_stats = modified_noise_autocovariance(events, noises, max_lag, burn_in=start)
    target0 = float(probs.gamma.sum()) * np.diag(r)
    whiteness = []
    for st in lag_stats:
        target = target0 if st.lag == 0 else np.zeros(nz)
        whiteness.append(
            {
                "lag": st.lag,
                "value": st.value.tolist(),
                "se": st.se.tolist(),
                "target": np.asarray(target).tolist(),
                "n_terms": st.n_terms,
            }
        )

    full_sel = delivered & (np.arange(1, samples + 1) > n)
    full_hist = np.bincount(delay[full_sel], minlength=n + 1)

    return ChannelDiagnostics(
        samples=samples,
        strided_n=int(sel.size),
        observed=observed,
        expected=expected,
        chi2=chi2,
        chi2_dof=dof,
        chi2_pvalue=pvalue,
        dropout_rate=drop_obs,
        dropout_expected=p,
        dropout_zscore=float(z),
        whiteness=whiteness,
        full_hist=full_hist,
    )


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_outputs(result, out_dir):
    """Write ``rmse_<filter>.csv``, ``channel.csv`` and ``summary.json``.

    Returns the list of written paths. Numbers are formatted with 17
    significant digits so files round-trip exactly and are byte-stable
    across identical runs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    steps = result.config.steps
    for name, sel in result.rmse.items():
        path = out / f"rmse_{name}.csv"
        cols = list(sel)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("k," + ",".join(cols) + "\n")
            for t in range(steps):
                fh.write(",".join([str(t + 1)] + [_fmt(sel[c][t]) for c in cols]) + "\n")
        written.append(path)

    path = out / "channel.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k,delivered_runs,delivered_rate\n")
        for t in range(steps):
            rate = result.delivered_per_step[t] / result.config.mc_runs
            fh.write(f"{t + 1},{int(result.delivered_per_step[t])},{_fmt(rate)}\n")
    written.append(path)

    path = out / "summary.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2)
        fh.write("\n")
    written.append(path)
    return written


def write_trace(events, out_path, meas_dim):
    """Per-step channel trace CSV: ``k,delivered,true_delay,y...``.

    Dropped steps carry ``-1`` for the delay and NaN measurement columns.
    """
    with open(out_path, "w", encoding="utf-8") as fh:
        ycols = ",".join(f"y{i}" for i in range(meas_dim))
        fh.write(f"k,delivered,true_delay,{ycols}\n")
        for ev in events:
            if ev.delivered:
                vals = ",".join(_fmt(v) for v in np.atleast_1d(ev.value))
                fh.write(f"{ev.step},1,{ev.true_delay},{vals}\n")
            else:
                vals = ",".join("nan" for _ in range(meas_dim))
                fh.write(f"{ev.step},0,-1,{vals}\n")


def write_estimates(means, variances, out_path):
    """Per-step estimate CSV: ``k,xhat...,vardiag...``."""
    steps, nx = means.shape
    with open(out_path, "w", encoding="utf-8") as fh:
        head = [f"xhat{i}" for i in range(nx)] + [f"var{i}" for i in range(nx)]
        fh.write("k," + ",".join(head) + "\n")
        for t in range(steps):
            row = [str(t + 1)] + [_fmt(v) for v in means[t]] + [_fmt(v) for v in variances[t]]
            fh.write(",".join(row) + "\n")


def write_smc_diagnostics(res, out_path):
    """Per-step SMC diagnostics CSV: ESS, collapse flag, delay groups and
    the two delay point estimates (sentinels -1/NaN on dropout steps)."""
    steps, ngroups = res.group_counts.shape
    with open(out_path, "w", encoding="utf-8") as fh:
        groups = ",".join(f"group{j}" for j in range(ngroups))
        fh.write(f"k,ess,collapse_flag,{groups},jhat_map,dhat_mean\n")
        for t in range(steps):
            row = [
                str(t + 1),
                _fmt(res.ess[t]),
                str(int(res.collapsed[t])),
                *[str(int(c)) for c in res.group_counts[t]],
                str(int(res.delay_map[t])),
                _fmt(res.delay_mean[t]),
            ]
            fh.write(",".join(row) + "\n")
