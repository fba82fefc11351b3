"""Benchmark state-space models.

Models are expressed with *batched* callables: ``transition(x, k)`` and
``measurement(x, k)`` map an ``(m, state_dim)`` array of states to ``(m,
state_dim)`` / ``(m, meas_dim)`` arrays. Batching keeps particle propagation
and cubature-point evaluation vectorised, and the callables are written in
the numba-compatible numpy subset so the compiled backend can inline them.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

__all__ = [
    "CoordinatedTurnParams",
    "GrowthModelParams",
    "SystemModel",
    "coordinated_turn_model",
    "growth_model",
    "simulate_truth",
    "sqrt_psd",
    "wrap_angle",
]


def wrap_angle(x):
    """Wrap angles into ``(-pi, pi]`` elementwise."""
    out = (np.asarray(x, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def sqrt_psd(a):
    """Matrix square root of a symmetric PSD matrix.

    Uses Cholesky when the matrix is definite and falls back to an
    eigendecomposition for singular covariances (e.g. noise-free axes).
    """
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(a)
        w = np.clip(w, 0.0, None)
        return v * np.sqrt(w)


def _check_cov(name, a, dim):
    a = np.asarray(a, dtype=float)
    if a.shape != (dim, dim):
        raise ValueError(f"{name} must have shape {(dim, dim)}, got {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(a).min() < -1e-10 * max(1.0, np.trace(a)):
        raise ValueError(f"{name} must be positive semidefinite")
    return a


@dataclass(frozen=True)
class SystemModel:
    """A discrete-time state-space model with additive Gaussian noises.

    Attributes
    ----------
    state_dim, meas_dim : int
    transition, measurement : callable
        Batched maps ``(x, k) -> array``; ``x`` has shape ``(m, state_dim)``
        and ``k`` is the 1-based destination (transition) or generation
        (measurement) step.
    process_cov, meas_cov : ndarray
    initial_mean, initial_cov : ndarray
        Prior on the state before the first transition.
    angle_components : tuple of int
        Indices of measurement components that live on the circle; their
        innovations are wrapped into ``(-pi, pi]``.
    time_invariant_measurement : bool
        True when ``measurement`` ignores ``k``, enabling a faster grouped
        evaluation in the particle filters.
    """

    name: str
    state_dim: int
    meas_dim: int
    transition: Callable
    measurement: Callable
    process_cov: np.ndarray
    meas_cov: np.ndarray
    initial_mean: np.ndarray
    initial_cov: np.ndarray
    angle_components: Tuple[int, ...] = ()
    time_invariant_measurement: bool = True

    def __post_init__(self):
        object.__setattr__(self, "process_cov", _check_cov("process_cov", self.process_cov, self.state_dim))
        object.__setattr__(self, "meas_cov", _check_cov("meas_cov", self.meas_cov, self.meas_dim))
        object.__setattr__(self, "initial_cov", _check_cov("initial_cov", self.initial_cov, self.state_dim))
        mean = np.asarray(self.initial_mean, dtype=float)
        if mean.shape != (self.state_dim,):
            raise ValueError(f"initial_mean must have shape ({self.state_dim},)")
        object.__setattr__(self, "initial_mean", mean)
        if any(i < 0 or i >= self.meas_dim for i in self.angle_components):
            raise ValueError("angle_components out of range")

    @property
    def angle_mask(self):
        mask = np.zeros(self.meas_dim, dtype=np.bool_)
        for i in self.angle_components:
            mask[i] = True
        return mask


# ---------------------------------------------------------------------------
# Univariate growth model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthModelParams:
    """Parameters of the scalar growth benchmark."""

    process_var: float = 10.0
    meas_var: float = 1.0
    initial_mean: float = 0.0
    initial_var: float = 1.0


def _growth_f(x, k):
    return 0.5 * x + 25.0 * x / (1.0 + x * x) + 8.0 * math.cos(1.2 * k)


def _growth_h(x, k):
    return x * x / 20.0


def growth_model(params=None):
    """Scalar growth model with strong nonlinearity and bimodal likelihood.

    ``x_k = x/2 + 25 x / (1 + x^2) + 8 cos(1.2 k) + w`` observed through
    ``z = x^2 / 20 + v``. The squared measurement makes the sign of the
    state nearly unobservable, which is what stresses the filters.
    """
    p = params or GrowthModelParams()
    return SystemModel(
        name="growth",
        state_dim=1,
        meas_dim=1,
        transition=_growth_f,
        measurement=_growth_h,
        process_cov=np.array([[p.process_var]]),
        meas_cov=np.array([[p.meas_var]]),
        initial_mean=np.array([p.initial_mean]),
        initial_cov=np.array([[p.initial_var]]),
    )


# ---------------------------------------------------------------------------
# Coordinated-turn radar tracking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoordinatedTurnParams:
    """Parameters of the 2-D coordinated-turn benchmark.

    State is ``[x, xdot, y, ydot, omega]`` with positions in metres and the
    turn rate in rad/s; the radar at the origin measures range and bearing.
    ``turn_rate_deg`` only sets the simulated truth / prior mean; it is
    unknown to the filters beyond the prior.
    """

    sample_time: float = 0.125
    turn_rate_deg: float = -3.0
    q1: float = 0.1
    q2: float = 1.75e-4
    sigma_range: float = 10.0
    sigma_bearing: float = math.sqrt(10.0) * 1e-3
    initial_mean: Tuple[float, ...] = (1000.0, 300.0, 1000.0, 0.0, math.radians(-3.0))
    initial_var: Tuple[float, ...] = (100.0, 10.0, 100.0, 10.0, 1e-4)


_CT_CACHE = {}


def _make_ct_transition(T):
    def ct_f(x, k):
        m = x.shape[0]
        om = x[:, 4]
        a = om * T
        s = np.sin(a)
        c = np.cos(a)
        # Exact zero-rate limits: sin(wT)/w -> T and (1-cos(wT))/w -> 0.
        tiny = np.abs(om) < 1e-12
        om_safe = np.where(tiny, 1.0, om)
        sw = np.where(tiny, T, s / om_safe)
        cw = np.where(tiny, 0.0, (1.0 - c) / om_safe)
        out = np.empty((m, 5))
        out[:, 0] = x[:, 0] + sw * x[:, 1] - cw * x[:, 3]
        out[:, 1] = c * x[:, 1] - s * x[:, 3]
        out[:, 2] = cw * x[:, 1] + x[:, 2] + sw * x[:, 3]
        out[:, 3] = s * x[:, 1] + c * x[:, 3]
        out[:, 4] = om
        return out

    return ct_f


def _ct_h(x, k):
    m = x.shape[0]
    out = np.empty((m, 2))
    out[:, 0] = np.sqrt(x[:, 0] * x[:, 0] + x[:, 2] * x[:, 2])
    out[:, 1] = np.arctan2(x[:, 2], x[:, 0])
    return out


def coordinated_turn_model(params=None):
    """Coordinated-turn target observed by a range/bearing radar.

    Process noise couples position/velocity per axis through the standard
    discretised white-acceleration block ``[[T^3/3, T^2/2], [T^2/2, T]]``
    scaled by ``q1``, plus ``q2 * T`` on the turn rate.
    """
    p = params or CoordinatedTurnParams()
    T = p.sample_time
    # The transition closure is cached by sample time so identical models
    # reuse one (possibly compiled) callable.
    f = _CT_CACHE.get(T)
    if f is None:
        f = _make_ct_transition(T)
        _CT_CACHE[T] = f
    m_blk = np.array([[T**3 / 3.0, T**2 / 2.0], [T**2 / 2.0, T]])
    q = np.zeros((5, 5))
    q[0:2, 0:2] = p.q1 * m_blk
    q[2:4, 2:4] = p.q1 * m_blk
    q[4, 4] = p.q2 * T
    r = np.diag([p.sigma_range**2, p.sigma_bearing**2])
    return SystemModel(
        name="coordinated_turn",
        state_dim=5,
        meas_dim=2,
        transition=f,
        measurement=_ct_h,
        process_cov=q,
        meas_cov=r,
        initial_mean=np.array(p.initial_mean),
        initial_cov=np.diag(p.initial_var),
        angle_components=(1,),
    )


# ---------------------------------------------------------------------------
# Truth simulation
# ---------------------------------------------------------------------------


def simulate_truth(model, steps, rng, initial_state=None):
    """Draw one state/measurement trajectory for steps 1..steps.

    The initial state is sampled from the model prior unless given. Draw
    order per step is process noise then measurement noise, so trajectories
    are reproducible from the generator state.

    Returns
    -------
    states : ndarray, shape (steps, state_dim)
    measurements : ndarray, shape (steps, meas_dim)
    """
    nx, nz = model.state_dim, model.meas_dim
    sq = sqrt_psd(model.process_cov)
    sr = sqrt_psd(model.meas_cov)
    if initial_state is None:
        x = model.initial_mean + sqrt_psd(model.initial_cov) @ rng.standard_normal(nx)
    else:
        x = np.asarray(initial_state, dtype=float).copy()
    states = np.empty((steps, nx))
    meas = np.empty((steps, nz))
    for t in range(steps):
        x = model.transition(x[None, :], t + 1)[0] + sq @ rng.standard_normal(nx)
        z = model.measurement(x[None, :], t + 1)[0] + sr @ rng.standard_normal(nz)
        states[t] = x
        meas[t] = z
    return states, meas
