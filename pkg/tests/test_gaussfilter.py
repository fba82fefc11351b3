"""Window filter tests: cubature rule, window algebra, closed-form oracles.

The linear-Gaussian cases have exact references (the cubature rule is exact
for affine maps), so those comparisons run at near machine precision. The
mixture measurement prediction is validated against a Monte Carlo oracle in
a zero-mean configuration where its covariance formula is exact.
"""

import numpy as np
import pytest

from delayfilter.channel import (
    ChannelEvent,
    DelayProfile,
    delay_probabilities,
    simulate_channel,
)
from delayfilter.exceptions import FilterDivergence
from delayfilter.gaussfilter import (
    WindowBelief,
    cubature_rule,
    cubature_transform,
    gaf_run,
    initial_window,
    predict,
    predict_measurement,
    update,
)
from delayfilter.models import coordinated_turn_model, growth_model, simulate_truth

from conftest import delivered_events, kalman_run, mixed_events, scalar_lg_model


def test_cubature_rule_moments():
    pts, w = cubature_rule(3)
    assert pts.shape == (6, 3) and w.shape == (6,)
    assert w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose((w[:, None] * pts).sum(axis=0), 0.0, atol=1e-14)
    np.testing.assert_allclose(pts.T @ (w[:, None] * pts), np.eye(3), atol=1e-12)
    # Odd monomials of degree 3 vanish by symmetry.
    np.testing.assert_allclose((w * pts[:, 0] ** 3).sum(), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        cubature_rule(0)


def test_cubature_transform_affine_exact():
    rng = np.random.default_rng(0)
    mean = rng.standard_normal(3)
    b = rng.standard_normal((3, 3))
    cov = b @ b.T + 3 * np.eye(3)
    A = rng.standard_normal((2, 3))
    off = rng.standard_normal(2)

    def fn(x, k):
        return x @ A.T + off

    m, c, cross = cubature_transform(mean, cov, fn)
    np.testing.assert_allclose(m, A @ mean + off, rtol=1e-12)
    np.testing.assert_allclose(c, A @ cov @ A.T, rtol=1e-10)
    np.testing.assert_allclose(cross, cov @ A.T, rtol=1e-10)


def test_window_belief_blocks():
    mean = np.array([1.0, 2.0, 3.0])
    cov = np.diag([1.0, 2.0, 3.0])
    w = WindowBelief(mean=mean, cov=cov, step=5, state_dim=1)
    assert w.depth == 2
    assert w.current.mean[0] == 1.0 and w.current.step == 5
    b = w.block(2)
    assert b.mean[0] == 3.0 and b.cov[0, 0] == 3.0 and b.step == 3


def test_window_belief_rejects_bad_shapes():
    with pytest.raises(ValueError):
        WindowBelief(mean=np.zeros(3), cov=np.eye(2), step=1, state_dim=1)
    bad = np.eye(2)
    bad[0, 1] = 0.5  # asymmetric
    with pytest.raises(ValueError):
        WindowBelief(mean=np.zeros(2), cov=bad, step=1, state_dim=1)


def test_initial_window_is_model_prior():
    m = growth_model()
    w = initial_window(m)
    assert w.depth == 0 and w.step == 0
    np.testing.assert_array_equal(w.mean, m.initial_mean)
    np.testing.assert_array_equal(w.cov, m.initial_cov)


def test_predict_linear_matches_closed_form():
    a, q = 0.9, 0.25
    model = scalar_lg_model(a=a, q=q, m0=1.0, p0=2.0)
    profile = DelayProfile(rate=0.5, max_delay=1)
    w0 = initial_window(model)
    w1 = predict(w0, model, profile)
    assert w1.depth == 0 and w1.step == 1  # window cannot reach before step 1
    p1 = a * 2.0 * a + q
    assert w1.mean[0] == pytest.approx(a * 1.0, rel=1e-14)
    assert w1.cov[0, 0] == pytest.approx(p1, rel=1e-12)
    w2 = predict(w1, model, profile)
    assert w2.depth == 1  # now the previous state joins the window
    m1 = a * 1.0
    np.testing.assert_allclose(w2.mean, [a * m1, m1], rtol=1e-13)
    np.testing.assert_allclose(
        w2.cov, [[a * p1 * a + q, a * p1], [a * p1, p1]], rtol=1e-11
    )


def test_predict_measurement_linear_closed_form():
    a, c, q, r = 0.9, 1.3, 0.25, 0.16
    model = scalar_lg_model(a=a, c=c, q=q, r=r, m0=1.0, p0=2.0)
    profile = DelayProfile(rate=0.5, max_delay=1)
    probs_k2 = delay_probabilities(profile, 2)
    w = predict(predict(initial_window(model), model, profile), model, profile)
    pred = predict_measurement(w, model, probs_k2)
    g = probs_k2.gamma_bar
    zh = c * w.mean
    np.testing.assert_allclose([p.z_hat[0] for p in pred.per_lag], zh, rtol=1e-12)
    for s in range(2):
        assert pred.per_lag[s].innovation_cov[0, 0] == pytest.approx(
            c * w.cov[s, s] * c + r, rel=1e-11
        )
        np.testing.assert_allclose(
            pred.per_lag[s].cross_cov[:, 0], c * w.cov[0, s], rtol=1e-11
        )
    assert pred.y_hat[0] == pytest.approx(g @ zh, rel=1e-12)
    # Combined innovation covariance: weighted per-lag terms plus the
    # uncentred spread term g (1 - g) z_hat^2 per lag.
    s_ref = sum(
        g[s] * pred.per_lag[s].innovation_cov[0, 0] + g[s] * (1 - g[s]) * zh[s] ** 2
        for s in range(2)
    )
    assert pred.innovation_cov[0, 0] == pytest.approx(s_ref, rel=1e-12)


def test_predict_measurement_checks_lag_count():
    model = scalar_lg_model()
    profile = DelayProfile(rate=0.5, max_delay=2)
    w = initial_window(model)  # depth 0
    with pytest.raises(ValueError):
        predict_measurement(w, model, delay_probabilities(profile, 5))


def test_mixture_prediction_monte_carlo_zero_mean():
    # Zero-mean window: the spread term vanishes, so the predicted moments
    # are the exact mixture moments and a direct simulation must agree.
    rng = np.random.default_rng(1)
    c, r = 1.3, 0.16
    model = scalar_lg_model(c=c, r=r)
    cov = np.array([[1.5, 0.6], [0.6, 1.1]])
    w = WindowBelief(mean=np.zeros(2), cov=cov, step=4, state_dim=1)
    gbar = np.array([0.7, 0.3])
    probs = type("P", (), {"gamma_bar": gbar})()
    pred = predict_measurement(w, model, probs)

    n = 400_000
    xs = rng.multivariate_normal(np.zeros(2), cov, size=n)
    lag = rng.random(n) < gbar[1]
    y = c * np.where(lag, xs[:, 1], xs[:, 0]) + rng.standard_normal(n) * np.sqrt(r)
    se_mean = y.std() / np.sqrt(n)
    assert abs(pred.y_hat[0] - y.mean()) < 4 * se_mean
    se_var = y.var() * np.sqrt(2.0 / n)
    assert abs(pred.innovation_cov[0, 0] - y.var()) < 4 * se_var


def test_delay_free_linear_run_equals_kalman():
    model = scalar_lg_model(a=0.92, c=1.1, q=0.3, r=0.2, m0=0.4, p0=1.5)
    profile = DelayProfile(rate=0.0, max_delay=0)
    rng = np.random.default_rng(2)
    _, zs = simulate_truth(model, 100, rng)
    events = simulate_channel(profile, zs, rng)
    assert all(ev.delivered for ev in events)
    res = gaf_run(model, profile, events)
    km, kp = kalman_run(model, events)
    np.testing.assert_allclose(res.means[:, 0], km, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(res.covs[:, 0, 0], kp, rtol=1e-11, atol=1e-13)


@pytest.mark.parametrize("policy", ["predicted", "skip"])
def test_dropout_policies_match_kalman_reference(policy):
    model = scalar_lg_model(a=0.95, c=1.0, q=0.2, r=0.3, m0=0.0, p0=1.0)
    profile = DelayProfile(rate=0.0, max_delay=0)
    rng = np.random.default_rng(3)
    _, zs = simulate_truth(model, 40, rng)
    pattern = [
        (zs[t] if t % 3 != 2 else None, 0 if t % 3 != 2 else None) for t in range(40)
    ]
    events = mixed_events(pattern)
    res = gaf_run(model, profile, events, dropout_policy=policy)
    km, kp = kalman_run(model, events, dropout_policy=policy)
    np.testing.assert_allclose(res.means[:, 0], km, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(res.covs[:, 0, 0], kp, rtol=1e-10, atol=1e-13)


def test_run_matches_stepwise_public_api():
    # The fused run must reproduce the explicit step loop built from the
    # public predict / predict_measurement / update functions.
    model = growth_model()
    profile = DelayProfile(rate=0.8, max_delay=3)
    rng = np.random.default_rng(4)
    _, zs = simulate_truth(model, 30, rng)
    events = simulate_channel(profile, zs, rng)
    assert any(not ev.delivered for ev in events)
    res = gaf_run(model, profile, events)

    w = initial_window(model)
    for t, ev in enumerate(events):
        w = predict(w, model, profile)
        probs = delay_probabilities(profile, t + 1)
        pred = predict_measurement(w, model, probs)
        w = update(w, pred, ev, dropout_policy="predicted", angle_mask=model.angle_mask)
        np.testing.assert_array_equal(res.means[t], w.mean[:1])
        np.testing.assert_array_equal(res.covs[t], w.cov[:1, :1])


def test_update_validates_event_step():
    model = scalar_lg_model()
    profile = DelayProfile(rate=0.3, max_delay=0)
    w = predict(initial_window(model), model, profile)
    pred = predict_measurement(w, model, delay_probabilities(profile, 1))
    bad = ChannelEvent(step=7, value=np.array([0.1]), true_delay=0)
    with pytest.raises(ValueError):
        update(w, pred, bad)
    with pytest.raises(ValueError):
        update(w, pred, None, dropout_policy="nonsense")


def test_gaf_run_validates_inputs():
    model = scalar_lg_model()
    profile = DelayProfile(rate=0.3, max_delay=0)
    events = delivered_events(np.zeros((3, 1)))
    with pytest.raises(ValueError):
        gaf_run(model, profile, events, dropout_policy="sometimes")
    shuffled = [events[1], events[0], events[2]]
    with pytest.raises(ValueError):
        gaf_run(model, profile, shuffled)


def test_divergence_reporting():
    bad = scalar_lg_model()

    def nan_after_two(x, k):
        return x * np.where(k >= 3, np.nan, 1.0)

    model = type(bad)(
        name="bad",
        state_dim=1,
        meas_dim=1,
        transition=nan_after_two,
        measurement=bad.measurement,
        process_cov=bad.process_cov,
        meas_cov=bad.meas_cov,
        initial_mean=bad.initial_mean,
        initial_cov=bad.initial_cov,
    )
    profile = DelayProfile(rate=0.0, max_delay=0)
    events = delivered_events(np.zeros((6, 1)))
    with pytest.raises(FilterDivergence) as exc:
        gaf_run(model, profile, events)
    assert exc.value.step == 3
    res = gaf_run(model, profile, events, raise_on_divergence=False)
    assert res.diverged_at == 3
    assert np.all(np.isfinite(res.means[:2]))
    assert np.all(np.isnan(res.means[2:]))


def test_coordinated_turn_run_stays_finite():
    model = coordinated_turn_model()
    profile = DelayProfile(rate=0.9, max_delay=3)
    rng = np.random.default_rng(5)
    _, zs = simulate_truth(model, 30, rng)
    events = simulate_channel(profile, zs, rng)
    res = gaf_run(model, profile, events)
    assert np.all(np.isfinite(res.means))
    assert np.all(res.covs[:, np.arange(5), np.arange(5)] > 0)
    beliefs = list(res.beliefs())
    assert len(beliefs) == 30 and beliefs[-1].step == 30
