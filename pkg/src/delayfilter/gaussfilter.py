"""Gaussian approximated filtering over a fixed-lag window of states.

Because a measurement received at step ``k`` may have been generated at any
of the steps ``k - j`` for ``j`` up to the delay bound, the filter tracks a
joint Gaussian over the window ``[x_k; x_{k-1}; ...; x_{k-nbar}]``. The time
update propagates the newest block through the dynamics and shifts the rest;
the measurement update mixes per-lag predicted measurements with the
normalised delivery probabilities and applies a single joint update to the
whole window. Moments are propagated with the third-degree spherical-radial
cubature rule (2n equally weighted points).
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .backend import compiled, get_kernels
from .channel import delay_probabilities, delay_probability_table
from .exceptions import FilterDivergence

__all__ = [
    "GafResult",
    "GaussianBelief",
    "MeasurementPrediction",
    "PerLagMoments",
    "WindowBelief",
    "cubature_rule",
    "cubature_transform",
    "gaf_run",
    "initial_window",
    "predict",
    "predict_measurement",
    "update",
]


def cubature_rule(n):
    """Unit third-degree spherical-radial cubature rule in ``n`` dimensions.

    Returns ``(points, weights)`` with ``points`` of shape ``(2n, n)``
    holding ``+sqrt(n) e_i`` then ``-sqrt(n) e_i``, and uniform weights
    ``1 / 2n``. The rule integrates polynomials of total degree <= 3
    exactly against the standard Gaussian.
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    eye = np.sqrt(n) * np.eye(n)
    return np.vstack([eye, -eye]), np.full(2 * n, 1.0 / (2 * n))


@dataclass(frozen=True)
class GaussianBelief:
    """Gaussian marginal over the current state at one step."""

    mean: np.ndarray
    cov: np.ndarray
    step: int


@dataclass(frozen=True)
class WindowBelief:
    """Joint Gaussian over ``[x_step; x_{step-1}; ...; x_{step-depth}]``.

    ``mean`` has length ``(depth + 1) * state_dim``; block ``s`` of ``cov``
    is the marginal covariance of the state ``s`` steps back.
    """

    mean: np.ndarray
    cov: np.ndarray
    step: int
    state_dim: int

    def __post_init__(self):
        m = self.mean.shape[0]
        if m % self.state_dim != 0 or self.cov.shape != (m, m):
            raise ValueError("window mean/cov shapes are inconsistent")
        asym = np.abs(self.cov - self.cov.T).max()
        scale = max(1.0, np.abs(self.cov).max())
        if asym > 1e-9 * scale:
            raise ValueError("window covariance must be symmetric")

    @property
    def depth(self):
        return self.mean.shape[0] // self.state_dim - 1

    def block(self, s):
        """Marginal belief over the state ``s`` steps back."""
        nx = self.state_dim
        sl = slice(s * nx, (s + 1) * nx)
        return GaussianBelief(mean=self.mean[sl].copy(), cov=self.cov[sl, sl].copy(), step=self.step - s)

    @property
    def current(self):
        return self.block(0)


def initial_window(model):
    """Depth-0 window holding the model prior (before the first transition)."""
    return WindowBelief(
        mean=model.initial_mean.copy(),
        cov=model.initial_cov.copy(),
        step=0,
        state_dim=model.state_dim,
    )


@dataclass(frozen=True)
class PerLagMoments:
    """Predicted measurement moments for one candidate delay."""

    lag: int
    z_hat: np.ndarray
    innovation_cov: np.ndarray
    cross_cov: np.ndarray


@dataclass(frozen=True)
class MeasurementPrediction:
    """Delay-mixture measurement prediction at one step.

    ``cross_cov`` couples the *whole window* with the predicted measurement;
    ``per_lag[s].cross_cov`` is restricted to the current-state block.
    """

    step: int
    y_hat: np.ndarray
    innovation_cov: np.ndarray
    cross_cov: np.ndarray
    gamma_bar: np.ndarray
    per_lag: List[PerLagMoments]


def cubature_transform(mean, cov, fn, k=0, kernels=None):
    """Propagate a Gaussian through ``fn`` with the cubature rule.

    ``fn`` is a batched map ``(m, n) -> (m, p)``. Returns the transformed
    mean, covariance (without any additive noise) and the input/output
    cross-covariance.
    """
    kern = kernels or get_kernels()
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    pts, ok = kern.cubature_points(mean, cov)
    if not ok:
        raise FilterDivergence(0, "covariance is not positive definite")
    vals = np.asarray(compiled(fn, kern)(pts, k), dtype=float)
    out_mean, out_cov, dv = kern.sample_moments(vals)
    cross = kern.cross_moment(pts - mean, dv)
    return out_mean, out_cov, cross


def predict(window, model, profile, kernels=None):
    """Time update of the window belief to ``window.step + 1``.

    The new window depth follows the effective delay bound of ``profile`` at
    the destination step, so the window grows during start-up and then slides.
    """
    kern = kernels or get_kernels()
    k = window.step + 1
    nbar = profile.nbar(k)
    f = compiled(model.transition, kern)
    mean, cov, ok = kern.gaf_predict_core(
        window.mean, window.cov, f, model.process_cov, k, nbar
    )
    if not ok:
        raise FilterDivergence(k, f"time update failed at step {k}")
    return WindowBelief(mean=mean, cov=cov, step=k, state_dim=model.state_dim)


def predict_measurement(window, model, probs, kernels=None):
    """Mixture measurement prediction for the received value at ``window.step``.

    ``probs`` must carry one delivery weight per window block. The combined
    innovation covariance adds a spread term ``g (1 - g) z_hat z_hat^T`` per
    lag on top of the weighted per-lag covariances.
    """
    kern = kernels or get_kernels()
    gbar = np.asarray(probs.gamma_bar, dtype=float)
    if gbar.shape[0] != window.depth + 1:
        raise ValueError(
            f"probs cover {gbar.shape[0]} lags but window has depth {window.depth}"
        )
    h = compiled(model.measurement, kern)
    yhat, s_mat, cw, zhats, pzzs, pxzs, ok = kern.gaf_measure_core(
        window.mean, window.cov, h, model.meas_cov, window.step, gbar
    )
    if not ok:
        raise FilterDivergence(window.step, f"measurement prediction failed at step {window.step}")
    nx = model.state_dim
    per_lag = [
        PerLagMoments(lag=s, z_hat=zhats[s], innovation_cov=pzzs[s], cross_cov=pxzs[s][:nx])
        for s in range(gbar.shape[0])
    ]
    return MeasurementPrediction(
        step=window.step,
        y_hat=yhat,
        innovation_cov=s_mat,
        cross_cov=cw,
        gamma_bar=gbar,
        per_lag=per_lag,
    )


def update(window, pred, event, dropout_policy="predicted", angle_mask=None, kernels=None):
    """Measurement update of the window with one channel event.

    On a delivered measurement the joint window belief is corrected through
    the mixture innovation. On a dropout, policy ``"predicted"`` substitutes
    the predicted measurement (zero innovation: the mean is kept but the
    covariance still contracts), while ``"skip"`` returns the prediction
    unchanged. ``angle_mask`` marks circular measurement components whose
    innovations are wrapped.
    """
    if dropout_policy not in ("predicted", "skip"):
        raise ValueError(f"unknown dropout_policy {dropout_policy!r}")
    kern = kernels or get_kernels()
    if event is not None and event.step != window.step:
        raise ValueError(f"event step {event.step} does not match window step {window.step}")
    delivered = event is not None and event.delivered
    if not delivered and dropout_policy == "skip":
        return window
    nz = pred.y_hat.shape[0]
    if angle_mask is None:
        angle_mask = np.zeros(nz, dtype=np.bool_)
    y = np.asarray(event.value, dtype=float) if delivered else pred.y_hat
    mean, cov, ok = kern.gaf_update_core(
        window.mean,
        window.cov,
        pred.y_hat,
        pred.innovation_cov,
        pred.cross_cov,
        y,
        np.asarray(angle_mask, dtype=np.bool_),
    )
    if not ok:
        raise FilterDivergence(window.step, f"measurement update failed at step {window.step}")
    return WindowBelief(mean=mean, cov=cov, step=window.step, state_dim=window.state_dim)


@dataclass(frozen=True)
class GafResult:
    """Per-step current-state marginals of one filter run."""

    means: np.ndarray
    covs: np.ndarray
    dropout_policy: str
    diverged_at: Optional[int] = None

    def beliefs(self):
        """Iterate per-step :class:`GaussianBelief` views."""
        for t in range(self.means.shape[0]):
            yield GaussianBelief(mean=self.means[t], cov=self.covs[t], step=t + 1)


def gaf_run(model, profile, events, dropout_policy="predicted", kernels=None, raise_on_divergence=True):
    """Run the window filter over a full channel event sequence.

    Parameters
    ----------
    model : SystemModel
    profile : DelayProfile
    events : sequence of ChannelEvent
        One per step, 1-based and contiguous.
    dropout_policy : {"predicted", "skip"}
        How dropouts are absorbed; see :func:`update`.
    kernels : module, optional
        Kernel namespace override (backend selection).
    raise_on_divergence : bool
        When False, a numerical failure returns the partial result with
        ``diverged_at`` set instead of raising :class:`FilterDivergence`.

    Returns
    -------
    GafResult
    """
    if dropout_policy not in ("predicted", "skip"):
        raise ValueError(f"unknown dropout_policy {dropout_policy!r}")
    kern = kernels or get_kernels()
    steps = len(events)
    nx, nz = model.state_dim, model.meas_dim
    gbar_all = np.zeros((steps, profile.max_delay + 1))
    nbars = np.zeros(steps, dtype=np.int64)
    delivered = np.zeros(steps, dtype=np.bool_)
    ys = np.zeros((steps, nz))
    table = delay_probability_table(profile, steps)
    for t, ev in enumerate(events):
        if ev.step != t + 1:
            raise ValueError("events must be contiguous and 1-based")
        probs = table[t]
        nbars[t] = probs.nbar
        gbar_all[t, : probs.nbar + 1] = probs.gamma_bar
        if ev.delivered:
            delivered[t] = True
            ys[t] = ev.value
    f = compiled(model.transition, kern)
    h = compiled(model.measurement, kern)
    means, covs, status = kern.gaf_run_core(
        f,
        h,
        model.initial_mean,
        model.initial_cov,
        model.process_cov,
        model.meas_cov,
        gbar_all,
        nbars,
        delivered,
        ys,
        dropout_policy == "skip",
        model.angle_mask,
    )
    result = GafResult(
        means=means,
        covs=covs,
        dropout_policy=dropout_policy,
        diverged_at=int(status) if status else None,
    )
    if status and raise_on_divergence:
        raise FilterDivergence(int(status), result=result)
    return result
