"""Hot numeric kernels, written once and optionally compiled with numba.

Every function in this module is restricted to the numpy subset that numba's
nopython mode supports, so the same source serves both backends.  At import
time the module inspects the ``DELAYFILTER_BACKEND`` environment variable:

``auto`` (default)
    compile with numba when it is importable, otherwise run as plain numpy;
``numba``
    require numba, fail loudly if missing;
``numpy``
    skip compilation entirely.

:func:`delayfilter.backend.get_kernels` can materialise a second instance of
this module under the other backend in the same process, which is how the
equivalence tests and the backend benchmark compare the two paths.

Conventions: random numbers are always drawn by the caller and passed in as
arrays, so kernels are pure functions of their inputs; matrices are C
contiguous ``float64``; batches of points are stored row-wise ``(n, dim)``.
The Gaussian-filter cores use explicit loops for their small fixed-size
linear algebra: the matrices involved are at most ``(N+1) * state_dim``
square, where BLAS dispatch overhead would dominate the arithmetic.  The
``_*_into`` helpers write results into caller-provided buffers; the public
cores are thin allocating wrappers around them, and :func:`gaf_run_core`
reuses one set of workspaces across the whole run.
"""

import math
import os

import numpy as np

ENV_VAR = "DELAYFILTER_BACKEND"

try:
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _numba = None
    HAVE_NUMBA = False

_requested = os.environ.get(ENV_VAR, "auto").strip().lower() or "auto"
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"{ENV_VAR} must be one of 'auto', 'numba', 'numpy'; got {_requested!r}"
    )
if _requested == "numba" and not HAVE_NUMBA:
    raise RuntimeError(f"{ENV_VAR}=numba but numba is not importable")

USE_NUMBA = HAVE_NUMBA and _requested != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"


def _jit(cache=True):
    """Return the compiling decorator for the active backend.

    ``cache=False`` is used for kernels taking function-typed arguments,
    whose specialisations cannot be cached to disk.
    """
    if USE_NUMBA:
        return _numba.njit(cache=cache, fastmath=False)
    return lambda fn: fn


# ---------------------------------------------------------------------------
# Linear algebra helpers
# ---------------------------------------------------------------------------


@_jit()
def _chol_into(a, L):
    """Lower Cholesky factor of ``a`` written into ``L`` (upper part zeroed).

    Returns False when a non-positive pivot is hit; ``L`` then holds a
    partial factor that callers must not use.
    """
    n = a.shape[0]
    for j in range(n):
        for i in range(j):
            L[i, j] = 0.0
    for j in range(n):
        s = a[j, j]
        for p in range(j):
            s -= L[j, p] * L[j, p]
        if s <= 0.0 or np.isnan(s):
            return False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            s2 = a[i, j]
            for p in range(j):
                s2 -= L[i, p] * L[j, p]
            L[i, j] = s2 / d
    return True


@_jit()
def _chol_jitter_into(a, L, scratch):
    """Cholesky with escalating diagonal jitter, into ``L``.

    On failure, retries on ``scratch = a + eps * I`` with ``eps`` starting at
    ``1e-12 * tr/n`` and doubling up to ``1e-6 * tr/n``.  Returns
    ``(eps_used, ok)``; ``ok=False`` means even the capped jitter could not
    restore positive definiteness.
    """
    if _chol_into(a, L):
        return 0.0, True
    n = a.shape[0]
    base = abs(np.trace(a)) / n
    if base <= 0.0 or np.isnan(base):
        base = 1.0
    eps = 1e-12 * base
    cap = 1e-6 * base
    while eps <= cap:
        for i in range(n):
            for j in range(n):
                scratch[i, j] = a[i, j]
            scratch[i, i] += eps
        if _chol_into(scratch, L):
            return eps, True
        eps *= 2.0
    return eps, False


@_jit()
def _spd_solve_into(a, b, L, scratch, x):
    """Solve ``a @ x = b`` (SPD ``a``, matrix ``b``) into ``x``. Returns ok."""
    _, ok = _chol_jitter_into(a, L, scratch)
    if not ok:
        return False
    n = a.shape[0]
    m = b.shape[1]
    for col in range(m):
        for i in range(n):
            s = b[i, col]
            for p in range(i):
                s -= L[i, p] * x[p, col]
            x[i, col] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = x[i, col]
            for p in range(i + 1, n):
                s -= L[p, i] * x[p, col]
            x[i, col] = s / L[i, i]
    return True


@_jit()
def chol_lower(a):
    """Lower Cholesky factor of ``a`` with an explicit success flag.

    Returns ``(L, ok)`` instead of raising so it can run inside compiled
    callers. ``ok`` is False when a non-positive pivot is hit.
    """
    L = np.zeros_like(a)
    ok = _chol_into(a, L)
    return L, ok


@_jit()
def chol_jitter(a):
    """Cholesky with escalating diagonal jitter.

    On failure, adds ``eps * I`` with ``eps`` starting at ``1e-12 * tr/n``
    and doubling up to ``1e-6 * tr/n``. Returns ``(L, eps_used, ok)``;
    ``ok=False`` means even the capped jitter could not restore positive
    definiteness and the caller should treat the step as divergent.
    """
    L = np.zeros_like(a)
    scratch = np.empty_like(a)
    eps, ok = _chol_jitter_into(a, L, scratch)
    return L, eps, ok


@_jit()
def spd_solve(a, b):
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    ``b`` is a matrix right-hand side. Returns ``(x, ok)``.
    """
    x = np.zeros_like(b)
    L = np.empty_like(a)
    scratch = np.empty_like(a)
    ok = _spd_solve_into(a, b, L, scratch, x)
    return x, ok


# ---------------------------------------------------------------------------
# Cubature primitives
# ---------------------------------------------------------------------------


@_jit()
def _cubature_into(mean, cov, L, scratch, pts):
    """Fill ``pts`` (shape ``(2n, n)``) with cubature points of N(mean, cov)."""
    _, ok = _chol_jitter_into(cov, L, scratch)
    if not ok:
        return False
    n = mean.shape[0]
    r = math.sqrt(n)
    for i in range(n):
        for j in range(n):
            d = r * L[j, i]
            pts[i, j] = mean[j] + d
            pts[n + i, j] = mean[j] - d
    return True


@_jit()
def cubature_points(mean, cov):
    """Third-degree spherical-radial cubature points for ``N(mean, cov)``.

    Returns ``(pts, ok)`` with ``pts`` of shape ``(2n, n)``: the mean plus
    and minus ``sqrt(n)`` times each column of the Cholesky factor. All
    points carry equal weight ``1/(2n)``.
    """
    n = mean.shape[0]
    pts = np.empty((2 * n, n))
    L = np.empty_like(cov)
    scratch = np.empty_like(cov)
    ok = _cubature_into(mean, cov, L, scratch, pts)
    return pts, ok


@_jit()
def sample_moments(pts):
    """Equal-weight mean, covariance and centred deviations of a point set."""
    npts = pts.shape[0]
    mean = np.sum(pts, 0) / npts
    d = pts - mean
    cov = np.ascontiguousarray(d.T) @ d / npts
    return mean, cov, d


@_jit()
def cross_moment(da, db):
    """Equal-weight cross-covariance of two centred point sets."""
    return np.ascontiguousarray(da.T) @ db / da.shape[0]


# ---------------------------------------------------------------------------
# Gaussian filter cores (take model callables; not disk-cached)
# ---------------------------------------------------------------------------


@_jit(cache=False)
def _predict_into(wmean, wcov, f, q, k, L, scratch, pts, work, out_mean, out_cov):
    """Window time update into caller buffers.

    ``pts`` must be ``(2m, m)`` for the incoming window dimension ``m`` and
    ``work`` ``(2m, mnew)`` for the outgoing one.  ``out_mean``/``out_cov``
    may alias ``wmean``/``wcov``: the old belief is fully consumed into
    ``pts`` before any output is written.
    """
    nx = q.shape[0]
    mo = wmean.shape[0]
    mnew = out_mean.shape[0]
    keep = mnew - nx
    if not _cubature_into(wmean, wcov, L, scratch, pts):
        return False
    npts = 2 * mo
    fx = f(pts[:, :nx], k)
    for i in range(npts):
        for j in range(nx):
            work[i, j] = fx[i, j]
        for j in range(keep):
            work[i, nx + j] = pts[i, j]
    inv = 1.0 / npts
    for j in range(mnew):
        s = 0.0
        for i in range(npts):
            s += work[i, j]
        out_mean[j] = s * inv
    for i in range(npts):
        for j in range(mnew):
            work[i, j] -= out_mean[j]
    for j in range(mnew):
        for l in range(j + 1):
            s = 0.0
            for i in range(npts):
                s += work[i, j] * work[i, l]
            v = s * inv
            out_cov[j, l] = v
            out_cov[l, j] = v
    for i in range(nx):
        for j in range(nx):
            out_cov[i, j] += q[i, j]
    return True


@_jit(cache=False)
def _measure_into(
    wmean, wcov, h, r, k, gbar, L, scratch, pts, zm, pz,
    yhat, s_mat, cw, zhats, pzzs, pxzs, want_stacks,
):
    """Delay-mixture measurement prediction into caller buffers.

    Accumulates ``yhat``, ``s_mat`` and ``cw``; the per-lag stacks are only
    written when ``want_stacks`` is True (pass 1-element dummies otherwise).
    """
    m = wmean.shape[0]
    nb1 = gbar.shape[0]
    nx = m // nb1
    nz = r.shape[0]
    if not _cubature_into(wmean, wcov, L, scratch, pts):
        return False
    npts = 2 * m
    inv = 1.0 / npts
    for a in range(nz):
        yhat[a] = 0.0
        for b in range(nz):
            s_mat[a, b] = 0.0
    for j in range(m):
        for a in range(nz):
            cw[j, a] = 0.0
    for s in range(nb1):
        z = h(pts[:, s * nx : (s + 1) * nx], k - s)
        g = gbar[s]
        for a in range(nz):
            t = 0.0
            for i in range(npts):
                t += z[i, a]
            zm[a] = t * inv
        for i in range(npts):
            for a in range(nz):
                z[i, a] -= zm[a]
        for a in range(nz):
            for b in range(a + 1):
                v = 0.0
                for i in range(npts):
                    v += z[i, a] * z[i, b]
                v = v * inv + r[a, b]
                pz[a, b] = v
                pz[b, a] = v
        for j in range(m):
            for a in range(nz):
                v = 0.0
                for i in range(npts):
                    v += (pts[i, j] - wmean[j]) * z[i, a]
                v *= inv
                cw[j, a] += g * v
                if want_stacks:
                    pxzs[s, j, a] = v
        for a in range(nz):
            yhat[a] += g * zm[a]
            for b in range(nz):
                s_mat[a, b] += g * pz[a, b] + (g * (1.0 - g)) * zm[a] * zm[b]
        if want_stacks:
            for a in range(nz):
                zhats[s, a] = zm[a]
                for b in range(nz):
                    pzzs[s, a, b] = pz[a, b]
    return True


@_jit()
def _update_into(
    wmean, wcov, yhat, s_mat, cw, y, angle_mask,
    innov, bt, kt, tmp, sl, ss, out_mean, out_cov,
):
    """Joint window measurement update into caller buffers.

    ``out_mean``/``out_cov`` may alias ``wmean``/``wcov``: every output
    element depends only on inputs read at the same index before the write.
    On a solve failure nothing is written and False is returned.
    """
    m = wmean.shape[0]
    nz = y.shape[0]
    for i in range(nz):
        d = y[i] - yhat[i]
        if angle_mask[i]:
            d = (d + np.pi) % (2.0 * np.pi) - np.pi
            if d == -np.pi:
                d = np.pi
        innov[i] = d
    for i in range(nz):
        for j in range(m):
            bt[i, j] = cw[j, i]
    if not _spd_solve_into(s_mat, bt, sl, ss, kt):  # kt[i, j] = gain[j, i]
        return False
    for j in range(m):
        s = wmean[j]
        for i in range(nz):
            s += kt[i, j] * innov[i]
        out_mean[j] = s
    # cov -= K S K^T, using tmp = S K^T
    for i in range(nz):
        for j in range(m):
            s = 0.0
            for p in range(nz):
                s += s_mat[i, p] * kt[p, j]
            tmp[i, j] = s
    for a in range(m):
        for b in range(a + 1):
            s = 0.0
            for i in range(nz):
                s += kt[i, a] * tmp[i, b]
            v = 0.5 * (wcov[a, b] + wcov[b, a]) - s
            out_cov[a, b] = v
            out_cov[b, a] = v
    return True


@_jit(cache=False)
def gaf_predict_core(wmean, wcov, f, q, k, nbar_new):
    """Window time update: propagate the newest block, shift the rest.

    The window mean/covariance describe ``[x_{k-1}; ...]``; the returned pair
    describes ``[x_k; x_{k-1}; ...]`` truncated to ``nbar_new + 1`` blocks,
    with process noise ``q`` added to the leading block.
    """
    nx = q.shape[0]
    mo = wmean.shape[0]
    mnew = (nbar_new + 1) * nx
    mean = np.zeros(mnew)
    cov = np.zeros((mnew, mnew))
    L = np.empty((mo, mo))
    scratch = np.empty((mo, mo))
    pts = np.empty((2 * mo, mo))
    work = np.empty((2 * mo, mnew))
    ok = _predict_into(wmean, wcov, f, q, k, L, scratch, pts, work, mean, cov)
    return mean, cov, ok


@_jit(cache=False)
def gaf_measure_core(wmean, wcov, h, r, k, gbar):
    """Delay-mixture measurement prediction over the window.

    For each candidate delay ``s`` the measurement function is applied to the
    lag-``s`` block of the cubature points, giving per-lag moments; these are
    combined with the normalised delay weights ``gbar``:

    - predicted measurement: weighted sum of per-lag means,
    - innovation covariance: weighted sum of per-lag covariances plus a
      ``g (1 - g)`` spread term built from the uncentred per-lag means,
    - window/measurement cross-covariance: weighted sum of per-lag
      cross-covariances.

    Returns ``(yhat, s_mat, cw, zhats, pzzs, pxzs, ok)`` where ``cw`` is the
    full-window cross-covariance ``(m, nz)`` and the last three stack the
    per-lag moments.
    """
    m = wmean.shape[0]
    nb1 = gbar.shape[0]
    nz = r.shape[0]
    yhat = np.zeros(nz)
    s_mat = np.zeros((nz, nz))
    cw = np.zeros((m, nz))
    zhats = np.zeros((nb1, nz))
    pzzs = np.zeros((nb1, nz, nz))
    pxzs = np.zeros((nb1, m, nz))
    L = np.empty((m, m))
    scratch = np.empty((m, m))
    pts = np.empty((2 * m, m))
    zm = np.empty(nz)
    pz = np.empty((nz, nz))
    ok = _measure_into(
        wmean, wcov, h, r, k, gbar, L, scratch, pts, zm, pz,
        yhat, s_mat, cw, zhats, pzzs, pxzs, True,
    )
    return yhat, s_mat, cw, zhats, pzzs, pxzs, ok


@_jit()
def gaf_update_core(wmean, wcov, yhat, s_mat, cw, y, angle_mask):
    """Joint window measurement update with angle-aware innovation."""
    m = wmean.shape[0]
    nz = y.shape[0]
    mean = np.empty(m)
    cov = np.empty((m, m))
    innov = np.empty(nz)
    bt = np.empty((nz, m))
    kt = np.empty((nz, m))
    tmp = np.empty((nz, m))
    sl = np.empty((nz, nz))
    ss = np.empty((nz, nz))
    ok = _update_into(
        wmean, wcov, yhat, s_mat, cw, y, angle_mask,
        innov, bt, kt, tmp, sl, ss, mean, cov,
    )
    if not ok:
        return wmean, wcov, False
    return mean, cov, True


@_jit(cache=False)
def gaf_run_core(f, h, x0, p0, q, r, gbar_all, nbars, delivered, ys, policy_skip, angle_mask):
    """Full filter run over a measurement record.

    Parameters are plain arrays so the whole loop stays compiled:
    ``gbar_all`` holds the normalised delay weights per step (padded rows),
    ``nbars`` the effective window depth, ``delivered`` the per-step arrival
    flags and ``ys`` the received values (unused rows arbitrary).  When
    ``policy_skip`` is True a dropout leaves the belief at its prediction;
    otherwise the update is applied with a zero innovation, which keeps the
    mean but still contracts the covariance.

    Returns ``(means, covs, status)`` for the current-state marginal;
    ``status`` is 0 on success or the 1-based step of the first numerical
    failure (remaining rows are NaN).

    All intermediate buffers are allocated once and the belief is updated in
    place; the per-step helpers tolerate the aliasing (see their docstrings).
    """
    steps = delivered.shape[0]
    nx = q.shape[0]
    nz = r.shape[0]
    means = np.zeros((steps, nx))
    covs = np.zeros((steps, nx, nx))
    nbmax = 0
    for t in range(steps):
        if nbars[t] > nbmax:
            nbmax = nbars[t]
    mmax = (nbmax + 1) * nx
    if x0.shape[0] > mmax:
        mmax = x0.shape[0]
    bmean = np.empty(mmax)
    bcov = np.empty((mmax, mmax))
    mo = x0.shape[0]
    for i in range(mo):
        bmean[i] = x0[i]
        for j in range(mo):
            bcov[i, j] = p0[i, j]
    L = np.empty((mmax, mmax))
    scratch = np.empty((mmax, mmax))
    pts = np.empty((2 * mmax, mmax))
    work = np.empty((2 * mmax, mmax))
    yhat = np.empty(nz)
    s_mat = np.empty((nz, nz))
    cw = np.empty((mmax, nz))
    zm = np.empty(nz)
    pz = np.empty((nz, nz))
    innov = np.empty(nz)
    bt = np.empty((nz, mmax))
    kt = np.empty((nz, mmax))
    tmp = np.empty((nz, mmax))
    sl = np.empty((nz, nz))
    ss = np.empty((nz, nz))
    dummy2 = np.empty((1, 1))
    dummy3 = np.empty((1, 1, 1))
    status = 0
    for t in range(steps):
        k = t + 1
        nbar = nbars[t]
        mnew = (nbar + 1) * nx
        ok = _predict_into(
            bmean[:mo], bcov[:mo, :mo], f, q, k,
            L[:mo, :mo], scratch[:mo, :mo], pts[: 2 * mo, :mo],
            work[: 2 * mo, :mnew], bmean[:mnew], bcov[:mnew, :mnew],
        )
        if not ok:
            status = k
            break
        mo = mnew
        if delivered[t] or not policy_skip:
            ok = _measure_into(
                bmean[:mo], bcov[:mo, :mo], h, r, k, gbar_all[t, : nbar + 1],
                L[:mo, :mo], scratch[:mo, :mo], pts[: 2 * mo, :mo], zm, pz,
                yhat, s_mat, cw[:mo], dummy2, dummy3, dummy3, False,
            )
            if not ok:
                status = k
                break
            if delivered[t]:
                yk = ys[t]
            else:
                yk = yhat
            ok = _update_into(
                bmean[:mo], bcov[:mo, :mo], yhat, s_mat, cw[:mo], yk, angle_mask,
                innov, bt[:, :mo], kt[:, :mo], tmp[:, :mo], sl, ss,
                bmean[:mo], bcov[:mo, :mo],
            )
            if not ok:
                status = k
                break
        for i in range(nx):
            means[t, i] = bmean[i]
            for j in range(nx):
                covs[t, i, j] = bcov[i, j]
    if status != 0:
        for t2 in range(status - 1, steps):
            for i in range(nx):
                means[t2, i] = np.nan
                for j2 in range(nx):
                    covs[t2, i, j2] = np.nan
    return means, covs, status


# ---------------------------------------------------------------------------
# Particle filter kernels
# ---------------------------------------------------------------------------


@_jit()
def systematic_resample(w, u0):
    """Systematic resampling indices for normalised weights ``w``.

    A single uniform ``u0`` in [0, 1) places the comb ``(u0 + i) / n``;
    uniform weights therefore map every particle to exactly one offspring.
    Returns an int64 index array of length ``n``.
    """
    n = w.shape[0]
    c = np.cumsum(w)
    pos = (u0 + np.arange(n)) / n
    idx = np.searchsorted(c, pos)
    return np.minimum(idx, n - 1)


@_jit()
def normalize_log_weights(logw):
    """Exponentiate and normalise log weights.

    Returns ``(w, collapsed)``; ``collapsed`` is True when every weight
    underflowed or went non-finite, in which case ``w`` is reset uniform.
    """
    n = logw.shape[0]
    m = np.max(logw)
    if not np.isfinite(m):
        return np.full(n, 1.0 / n), True
    w = np.exp(logw - m)
    s = np.sum(w)
    if s <= 0.0 or not np.isfinite(s):
        return np.full(n, 1.0 / n), True
    return w / s, False


@_jit()
def update_weights(w, logl):
    """Bayes-update normalised weights with per-particle log likelihoods.

    Zero weights stay zero (log handled in a masked way so no warnings or
    NaNs appear). Returns ``(w_new, collapsed)`` like
    :func:`normalize_log_weights`.
    """
    safe = np.where(w > 0.0, w, 1.0)
    logw = np.where(w > 0.0, np.log(safe), -np.inf) + logl
    return normalize_log_weights(logw)


@_jit()
def gauss_loglik(innov, rinv, lognorm):
    """Multivariate normal log-density of innovation rows.

    ``lognorm`` is the precomputed ``-0.5 * (nz log 2 pi + log det R)``.
    """
    return lognorm - 0.5 * np.sum((innov @ rinv) * innov, 1)


@_jit()
def mixture_loglik(logls, log_gbar):
    """Row-wise log-sum-exp of per-lag log likelihoods with mixture weights."""
    n, nb1 = logls.shape
    m = logls + log_gbar
    rowmax = m[:, 0].copy()
    for j in range(1, nb1):
        rowmax = np.maximum(rowmax, m[:, j])
    s = np.zeros(n)
    for j in range(nb1):
        s += np.exp(m[:, j] - rowmax)
    return rowmax + np.log(s)


@_jit()
def assign_delays(hist, gbar, us):
    """Sample one delay hypothesis per particle from the exclusion-pruned pmf.

    ``hist[i, tau - 1]`` holds particle ``i``'s delay assignment at step
    ``k - tau`` (-1 when that step delivered nothing). A candidate delay
    ``j = hist[i, tau-1] + tau`` is excluded: it would reuse the measurement
    already consumed ``tau`` steps ago. Remaining mass is renormalised and
    sampled by inverse CDF with the provided uniforms. ``gbar`` must be the
    normalised delivery pmf.

    Delay 0 is never excludable, so the renormalised pmf cannot vanish; a
    uniform-reset fallback is kept as a guard and counted.

    Returns ``(delays, normprobs, n_fallback)`` where row ``i`` of
    ``normprobs`` is particle ``i``'s exclusion-renormalised delay pmf (the
    ingredient of the delay posterior).
    """
    n = us.shape[0]
    nb1 = gbar.shape[0]
    nbar = hist.shape[1]
    probs = np.empty((n, nb1))
    delays = np.empty(n, np.int64)
    n_fallback = 0
    for i in range(n):
        for j in range(nb1):
            probs[i, j] = gbar[j]
        for tau in range(1, nbar + 1):
            d = hist[i, tau - 1]
            if d >= 0 and d + tau < nb1:
                probs[i, d + tau] = 0.0
        tot = 0.0
        for j in range(nb1):
            tot += probs[i, j]
        if tot <= 0.0:
            for j in range(nb1):
                probs[i, j] = gbar[j]
            tot = 1.0
            n_fallback += 1
        target = us[i] * tot
        acc = 0.0
        chosen = nb1 - 1
        for j in range(nb1 - 1):
            acc += probs[i, j]
            if acc > target:
                chosen = j
                break
        delays[i] = chosen
        inv = 1.0 / tot
        for j in range(nb1):
            probs[i, j] *= inv
    return delays, probs, n_fallback


@_jit()
def delay_posterior_stats(w, delays, normprobs):
    """Group-restricted delay posterior with its argmax, plus the mean delay.

    ``pmf[j]`` accumulates ``w[i] * normprobs[i, j]`` over the particles
    *assigned* delay ``j`` (their own renormalised probability of that
    assignment), then renormalises. The mean is the weighted average of the
    assigned delays themselves. Returns ``(pmf, map_delay, mean_delay)``;
    ties on the argmax resolve to the smallest delay.
    """
    n = w.shape[0]
    nb1 = normprobs.shape[1]
    pmf = np.zeros(nb1)
    mean = 0.0
    for i in range(n):
        d = delays[i]
        pmf[d] += w[i] * normprobs[i, d]
        mean += w[i] * d
    tot = 0.0
    for j in range(nb1):
        tot += pmf[j]
    if tot > 0.0:
        for j in range(nb1):
            pmf[j] /= tot
    else:
        for j in range(nb1):
            pmf[j] = 1.0 / nb1
    best = 0
    for j in range(1, nb1):
        if pmf[j] > pmf[best]:
            best = j
    return pmf, best, mean


@_jit()
def ess(w):
    """Effective sample size ``1 / sum(w^2)`` of normalised weights."""
    return 1.0 / np.sum(w * w)


# ---------------------------------------------------------------------------
# Channel kernel
# ---------------------------------------------------------------------------


@_jit()
def channel_deliver(draws, max_delay):
    """Resolve delivery for a whole trajectory of raw delay draws.

    ``draws[t]`` is the Poisson delay drawn at receive step ``t + 1``. A draw
    is deliverable when it does not exceed ``min(max_delay, k - 1)`` and the
    targeted source measurement has not been delivered before; otherwise the
    step is a dropout. Returns ``(delivered, delay)`` with ``delay[t] = -1``
    on dropouts.
    """
    steps = draws.shape[0]
    delivered = np.zeros(steps, np.bool_)
    delay = np.full(steps, -1, np.int64)
    claimed = np.zeros(steps + 1, np.bool_)
    for t in range(steps):
        k = t + 1
        nbar = max_delay if max_delay < k - 1 else k - 1
        d = draws[t]
        if d <= nbar:
            src = k - d
            if not claimed[src]:
                claimed[src] = True
                delivered[t] = True
                delay[t] = d
    return delivered, delay


KERNELS = (
    "chol_lower",
    "chol_jitter",
    "spd_solve",
    "cubature_points",
    "sample_moments",
    "cross_moment",
    "gaf_predict_core",
    "gaf_measure_core",
    "gaf_update_core",
    "gaf_run_core",
    "systematic_resample",
    "normalize_log_weights",
    "update_weights",
    "gauss_loglik",
    "mixture_loglik",
    "assign_delays",
    "delay_posterior_stats",
    "ess",
    "channel_deliver",
)
