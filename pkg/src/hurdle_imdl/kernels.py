"""Hot numeric kernels, each in a numpy and a numba flavour.

The public names (``hurdle_nll``, ``graded_tallies``, ``gaussian_loglik_grid``)
dispatch to the numba versions unless ``HURDLE_IMDL_NUMBA=0``.  Both flavours
stay importable as ``*_numpy`` / ``*_numba`` for tests and benchmarks.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Hurdle-lognormal negative log-likelihood, per sample
# ---------------------------------------------------------------------------

def hurdle_nll_numpy(labels, logits, mu, sigma, lmu, lsigma, eps,
                     use_p, use_mu, use_corr):
    """Per-sample NLL and its gradients w.r.t. the p-logit and mu.

    Parameters
    ----------
    labels : ndarray
        Rain rates, ``>= 0``.
    logits : ndarray
        Pre-sigmoid dry-probability outputs.
    mu : ndarray
        Location of the ideal lognormal.
    sigma, lmu, lsigma : float
        Fixed scale and marginal-prior parameters.
    eps : float
        Clamp for p inside the logarithms.
    use_p, use_mu, use_corr : bool
        Which of the DryT/WetT, LogNormT and CorrT terms to include.

    Returns
    -------
    loss, d_logit, d_mu : ndarray
    """
    labels = np.asarray(labels, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    n = labels.shape[0]
    wet = labels > 0.0
    loss = np.zeros(n)
    d_logit = np.zeros(n)
    d_mu = np.zeros(n)

    if use_p:
        p = 1.0 / (1.0 + np.exp(-logits))
        p = np.clip(p, eps, 1.0 - eps)
        loss += np.where(wet, -np.log1p(-p), -np.log(p))
        d_logit += np.where(wet, p, p - 1.0)

    if use_mu or use_corr:
        s2 = sigma * sigma
        logr = np.log(np.where(wet, labels, 1.0))
        if use_mu:
            resid = logr - mu
            loss += np.where(wet, resid * resid / (2.0 * s2) + math.log(sigma), 0.0)
            d_mu += np.where(wet, -resid / s2, 0.0)
        if use_corr:
            l2 = lsigma * lsigma
            tot = l2 + s2
            num = lmu * lmu + mu * mu + l2 * (2.0 * mu - s2) + 2.0 * lmu * (s2 - mu)
            corr = -num / (2.0 * tot) - 0.5 * math.log(tot)
            loss += np.where(wet, corr, 0.0)
            d_mu += np.where(wet, -(mu + l2 - lmu) / tot, 0.0)
    return loss, d_logit, d_mu


@njit
def hurdle_nll_numba(labels, logits, mu, sigma, lmu, lsigma, eps,
                     use_p, use_mu, use_corr):
    n = labels.shape[0]
    loss = np.zeros(n)
    d_logit = np.zeros(n)
    d_mu = np.zeros(n)
    s2 = sigma * sigma
    l2 = lsigma * lsigma
    tot = l2 + s2
    log_sigma = math.log(sigma)
    half_log_tot = 0.5 * math.log(tot)
    for i in range(n):
        r = labels[i]
        wet = r > 0.0
        if use_p:
            p = 1.0 / (1.0 + math.exp(-logits[i]))
            if p < eps:
                p = eps
            elif p > 1.0 - eps:
                p = 1.0 - eps
            if wet:
                loss[i] += -math.log1p(-p)
                d_logit[i] += p
            else:
                loss[i] += -math.log(p)
                d_logit[i] += p - 1.0
        if wet:
            m = mu[i]
            if use_mu:
                resid = math.log(r) - m
                loss[i] += resid * resid / (2.0 * s2) + log_sigma
                d_mu[i] += -resid / s2
            if use_corr:
                num = lmu * lmu + m * m + l2 * (2.0 * m - s2) + 2.0 * lmu * (s2 - m)
                loss[i] += -num / (2.0 * tot) - half_log_tot
                d_mu[i] += -(m + l2 - lmu) / tot
    return loss, d_logit, d_mu


# ---------------------------------------------------------------------------
# Confusion matrices and graded residual sums over many thresholds
# ---------------------------------------------------------------------------

def graded_tallies_numpy(retrievals, observations, thresholds):
    """Counts and residual sums for every threshold.

    Returns
    -------
    counts : ndarray of int64, shape (k, 4)
        Columns tp, fp, fn, tn.
    grade_n : ndarray of int64, shape (k,)
        Samples with observation >= threshold.
    sum_res, sum_sq : ndarray, shape (k,)
        Sum of (retrieval - observation) and its square over each grade.
    """
    ret = np.asarray(retrievals, dtype=np.float64)
    obs = np.asarray(observations, dtype=np.float64)
    th = np.asarray(thresholds, dtype=np.float64)
    r_hi = ret[None, :] >= th[:, None]
    o_hi = obs[None, :] >= th[:, None]
    tp = np.sum(r_hi & o_hi, axis=1)
    fp = np.sum(r_hi & ~o_hi, axis=1)
    fn = np.sum(~r_hi & o_hi, axis=1)
    tn = ret.shape[0] - tp - fp - fn
    counts = np.stack([tp, fp, fn, tn], axis=1).astype(np.int64)
    res = ret - obs
    grade_n = o_hi.sum(axis=1).astype(np.int64)
    sum_res = np.where(o_hi, res[None, :], 0.0).sum(axis=1)
    sum_sq = np.where(o_hi, (res * res)[None, :], 0.0).sum(axis=1)
    return counts, grade_n, sum_res, sum_sq


@njit
def graded_tallies_numba(retrievals, observations, thresholds):
    k = thresholds.shape[0]
    n = retrievals.shape[0]
    counts = np.zeros((k, 4), dtype=np.int64)
    grade_n = np.zeros(k, dtype=np.int64)
    sum_res = np.zeros(k)
    sum_sq = np.zeros(k)
    for j in range(k):
        t = thresholds[j]
        for i in range(n):
            r_hi = retrievals[i] >= t
            o_hi = observations[i] >= t
            if r_hi and o_hi:
                counts[j, 0] += 1
            elif r_hi:
                counts[j, 1] += 1
            elif o_hi:
                counts[j, 2] += 1
            else:
                counts[j, 3] += 1
            if o_hi:
                d = retrievals[i] - observations[i]
                grade_n[j] += 1
                sum_res[j] += d
                sum_sq[j] += d * d
    return counts, grade_n, sum_res, sum_sq


# ---------------------------------------------------------------------------
# Gaussian forward-model log-likelihood on a rate grid
# ---------------------------------------------------------------------------

def gaussian_loglik_grid_numpy(signals, means, noise_sigma):
    """log F(signal | rate) for every (signal row, grid rate) pair.

    ``signals`` has shape (m, c); ``means`` (g, c) holds the noise-free
    signal at each grid rate.  Channels are independent.
    """
    signals = np.asarray(signals, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    c = signals.shape[1]
    out = np.zeros((signals.shape[0], means.shape[0]))
    for ch in range(c):
        z = (signals[:, ch][:, None] - means[:, ch][None, :]) / noise_sigma
        out -= 0.5 * z * z
    out -= c * (math.log(noise_sigma) + _HALF_LOG_2PI)
    return out


@njit
def gaussian_loglik_grid_numba(signals, means, noise_sigma):
    m, c = signals.shape
    g = means.shape[0]
    out = np.empty((m, g))
    const = c * (math.log(noise_sigma) + 0.5 * math.log(2.0 * math.pi))
    inv = 1.0 / noise_sigma
    for i in range(m):
        for j in range(g):
            acc = 0.0
            for ch in range(c):
                z = (signals[i, ch] - means[j, ch]) * inv
                acc -= 0.5 * z * z
            out[i, j] = acc - const
    return out


def hurdle_nll(labels, logits, mu, sigma, lmu, lsigma, eps,
               use_p=True, use_mu=True, use_corr=True):
    args = (np.ascontiguousarray(labels, dtype=np.float64),
            np.ascontiguousarray(logits, dtype=np.float64),
            np.ascontiguousarray(mu, dtype=np.float64),
            float(sigma), float(lmu), float(lsigma), float(eps),
            bool(use_p), bool(use_mu), bool(use_corr))
    if USE_NUMBA:
        return hurdle_nll_numba(*args)
    return hurdle_nll_numpy(*args)


def graded_tallies(retrievals, observations, thresholds):
    args = (np.ascontiguousarray(retrievals, dtype=np.float64),
            np.ascontiguousarray(observations, dtype=np.float64),
            np.ascontiguousarray(thresholds, dtype=np.float64))
    if USE_NUMBA:
        return graded_tallies_numba(*args)
    return graded_tallies_numpy(*args)


def gaussian_loglik_grid(signals, means, noise_sigma):
    args = (np.ascontiguousarray(signals, dtype=np.float64),
            np.ascontiguousarray(means, dtype=np.float64),
            float(noise_sigma))
    if USE_NUMBA:
        return gaussian_loglik_grid_numba(*args)
    return gaussian_loglik_grid_numpy(*args)
