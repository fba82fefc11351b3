"""Shared fixtures and reference implementations for the test suite."""

import numpy as np
import pytest

from delayfilter.backend import available_backends, get_kernels
from delayfilter.channel import ChannelEvent
from delayfilter.models import SystemModel

BACKENDS = available_backends()


@pytest.fixture(params=BACKENDS)
def kern(request):
    """Kernel namespace, parametrized over every loadable backend."""
    return get_kernels(request.param)


@pytest.fixture()
def kern_numpy():
    return get_kernels("numpy")


def scalar_lg_model(a=0.9, c=1.0, q=0.25, r=0.16, m0=0.0, p0=1.0):
    """Scalar linear-Gaussian model x' = a x + w, z = c x + v."""

    def f(x, k):
        return a * x

    def h(x, k):
        return c * x

    return SystemModel(
        name="scalar_lg",
        state_dim=1,
        meas_dim=1,
        transition=f,
        measurement=h,
        process_cov=np.array([[q]]),
        meas_cov=np.array([[r]]),
        initial_mean=np.array([m0]),
        initial_cov=np.array([[p0]]),
    )


def kalman_run(model, events, dropout_policy="predicted"):
    """Reference scalar Kalman filter over a channel event sequence.

    Assumes every delivered measurement has delay 0. Dropouts follow the
    same policies as the window filter: ``predicted`` applies a
    zero-innovation update (mean kept, covariance contracted), ``skip``
    leaves the prediction untouched.
    """
    a = float(model.transition(np.ones((1, 1)), 1)[0, 0])
    c = float(model.measurement(np.ones((1, 1)), 1)[0, 0])
    q = float(model.process_cov[0, 0])
    r = float(model.meas_cov[0, 0])
    m = float(model.initial_mean[0])
    p = float(model.initial_cov[0, 0])
    means = np.zeros(len(events))
    covs = np.zeros(len(events))
    for t, ev in enumerate(events):
        m = a * m
        p = a * p * a + q
        s = c * p * c + r
        k_gain = p * c / s
        if ev.delivered:
            m = m + k_gain * (float(ev.value[0]) - c * m)
            p = p - k_gain * s * k_gain
        elif dropout_policy == "predicted":
            p = p - k_gain * s * k_gain
        means[t] = m
        covs[t] = p
    return means, covs


def delivered_events(ys):
    """Channel events delivering every measurement with zero delay."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    return [
        ChannelEvent(step=t + 1, value=ys[t].copy(), true_delay=0)
        for t in range(ys.shape[0])
    ]


def mixed_events(values):
    """Events from a list of (value-or-None, true_delay-or-None) pairs."""
    out = []
    for t, (v, d) in enumerate(values):
        if v is None:
            out.append(ChannelEvent(step=t + 1, value=None, true_delay=None))
        else:
            out.append(
                ChannelEvent(
                    step=t + 1,
                    value=np.atleast_1d(np.asarray(v, dtype=float)),
                    true_delay=d,
                )
            )
    return out
