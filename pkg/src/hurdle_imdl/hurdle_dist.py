"""Hurdle-lognormal densities and the ideal-to-biased debiasing transform.

Everything is evaluated in log space and exponentiated only when a caller
asks for a plain density.  Integrals over (0, inf) are taken on the log-rate
axis, ``x = ln r``, where lognormal products become Gaussian-weighted.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NumericalError

SIGMA_MIN = 1e-3
P_EPS = 1e-7
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

__all__ = [
    "SIGMA_MIN", "P_EPS", "HALF_LOG_2PI",
    "LognormalParams", "MarginalPrior", "HurdleParams",
    "lognormal_logpdf", "lognormal_pdf", "hurdle_pdf",
    "log_product_integral", "product_lognormal",
    "log_density_fn", "integrate_log_axis", "debias_transform", "debias_on_grid",
    "trapezoid_weights", "hurdle_expectation", "hurdle_mean", "sample_hurdle",
]


@dataclass(frozen=True)
class LognormalParams:
    """Location and scale of ``ln R``."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise DomainError(f"mu must be finite, got {self.mu!r}")
        if not (self.sigma >= SIGMA_MIN and math.isfinite(self.sigma)):
            raise DomainError(f"sigma must be >= {SIGMA_MIN}, got {self.sigma!r}")


@dataclass(frozen=True)
class MarginalPrior:
    """Long-tailed label marginal: lognormal wet part plus dry mass ``p0``."""

    lmu: float
    lsigma: float
    p0: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.lmu):
            raise DomainError(f"lmu must be finite, got {self.lmu!r}")
        if not (self.lsigma > 0 and math.isfinite(self.lsigma)):
            raise DomainError(f"lsigma must be > 0, got {self.lsigma!r}")
        if not 0.0 <= self.p0 <= 1.0:
            raise DomainError(f"p0 must lie in [0, 1], got {self.p0!r}")

    @property
    def wet(self):
        """The wet-rate lognormal as ``LognormalParams``."""
        return LognormalParams(self.lmu, max(self.lsigma, SIGMA_MIN))

    @classmethod
    def from_labels(cls, labels):
        """Estimate the marginal from rain-rate labels."""
        labels = np.asarray(labels, dtype=np.float64)
        if labels.size == 0:
            raise DomainError("cannot estimate a prior from zero labels")
        wet = labels[labels > 0]
        if wet.size < 2:
            raise DomainError("need at least two wet labels to estimate lmu, lsigma")
        logs = np.log(wet)
        return cls(float(logs.mean()), float(logs.std()),
                   float(np.mean(labels == 0)))

    def to_dict(self):
        return {"lmu": self.lmu, "lsigma": self.lsigma, "p0": self.p0}


@dataclass(frozen=True)
class HurdleParams:
    """Conditional dry probability ``p`` and the wet-rate lognormal."""

    p: float
    dist: LognormalParams

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"p must lie in [0, 1], got {self.p!r}")


def _as_lognormal(obj):
    if isinstance(obj, LognormalParams):
        return obj
    if isinstance(obj, MarginalPrior):
        return obj.wet
    return None


def lognormal_logpdf(r, params):
    """Log density of a lognormal at positive ``r``."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(~(r > 0)):
        raise DomainError("lognormal density requires r > 0")
    x = np.log(r)
    z = (x - params.mu) / params.sigma
    out = -0.5 * z * z - x - math.log(params.sigma) - HALF_LOG_2PI
    return out[()] if out.ndim == 0 else out


def lognormal_pdf(r, params):
    return np.exp(lognormal_logpdf(r, params))


def hurdle_pdf(r, hp):
    """Mass ``p`` at zero, ``(1 - p)`` times the lognormal density above it."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise DomainError("hurdle density requires r >= 0")
    wet = r > 0
    out = np.full(r.shape, float(hp.p))
    if np.any(wet):
        out[wet] = (1.0 - hp.p) * lognormal_pdf(r[wet], hp.dist)
    return out[()] if out.ndim == 0 else out


def log_product_integral(a, b):
    """Closed-form ``ln ∫_0^∞ pdf_a(r) pdf_b(r) dr`` for two lognormals.

    On the log axis the integrand is a product of two Gaussians times
    ``exp(-x)``; the Gaussian product collapses to a scaled Gaussian with
    variance ``(1/sa^2 + 1/sb^2)^-1`` and the exponential tilt integrates to
    its moment generating function at -1.
    """
    va = a.sigma * a.sigma
    vb = b.sigma * b.sigma
    vsum = va + vb
    vc = 1.0 / (1.0 / va + 1.0 / vb)
    mc = vc * (a.mu / va + b.mu / vb)
    d = a.mu - b.mu
    return (-d * d / (2.0 * vsum) - HALF_LOG_2PI - 0.5 * math.log(vsum)
            - mc + 0.5 * vc)


def product_lognormal(a, b):
    """The normalized pointwise product of two lognormal densities.

    It is again lognormal, with scale ``sc`` from the precision sum and
    location shifted down by ``sc^2`` relative to the Gaussian-product mean.
    """
    va = a.sigma * a.sigma
    vb = b.sigma * b.sigma
    vc = 1.0 / (1.0 / va + 1.0 / vb)
    mc = vc * (a.mu / va + b.mu / vb)
    return LognormalParams(mc - vc, math.sqrt(vc))


def log_density_fn(obj):
    """Map a density spec onto a vectorized ``log f(r)``."""
    ln = _as_lognormal(obj)
    if ln is not None:
        return lambda r: lognormal_logpdf(r, ln)
    if callable(obj):
        def logf(r):
            with np.errstate(divide="ignore"):
                return np.log(np.asarray(obj(r), dtype=np.float64))
        return logf
    raise TypeError(f"expected LognormalParams, MarginalPrior or callable, got {type(obj)!r}")


def _default_log_support(*objs):
    spans = []
    for obj in objs:
        ln = _as_lognormal(obj)
        if ln is not None:
            spans.append((ln.mu, ln.sigma))
    if not spans:
        raise DomainError("log_support is required when no component is lognormal")
    # truncation at +-10 scales of the wider component, around both centres
    wide = max(s for _, s in spans)
    centres = [m for m, _ in spans]
    return min(centres) - 10.0 * wide, max(centres) + 10.0 * wide


def integrate_log_axis(log_f, lo, hi, n_scan=2001):
    """``ln ∫ f(r) dr`` over ``r in [e^lo, e^hi]`` by adaptive quadrature.

    The integrand is rescaled by its maximum on a scan grid so that tail
    parameter sets whose integral underflows in linear space still resolve.
    """
    xs = np.linspace(lo, hi, n_scan)
    scan = log_f(np.exp(xs)) + xs
    finite = np.isfinite(scan)
    if not np.any(finite):
        raise NumericalError("integrand is zero or non-finite on the whole support")
    shift = float(np.max(scan[finite]))
    peak = float(xs[np.argmax(np.where(finite, scan, -np.inf))])

    def integrand(x):
        v = float(log_f(np.exp(x))) + x - shift
        return math.exp(v) if v > -745.0 else 0.0

    pts = [peak] if lo < peak < hi else None
    val, _ = integrate.quad(integrand, lo, hi, points=pts, limit=400,
                            epsabs=0.0, epsrel=1e-13)
    if not (val > 0 and math.isfinite(val)):
        raise NumericalError(f"quadrature returned {val!r}")
    return math.log(val) + shift


def debias_transform(ideal_pdf, prior, log_support=None):
    """Map an ideal (uniform-prior) inversion density to the biased one.

    Returns ``r -> ideal(r) F(r) / ∫ ideal(r') F(r') dr'`` where ``F`` is the
    label marginal.  ``ideal_pdf`` and ``prior`` may each be a
    ``LognormalParams``, a ``MarginalPrior`` (its wet lognormal is used) or a
    plain vectorized density callable.

    Raises
    ------
    NumericalError
        If the normalizing integral underflows; the message carries both
        parameter sets.
    """
    log_ideal = log_density_fn(ideal_pdf)
    log_prior = log_density_fn(prior)
    if log_support is None:
        log_support = _default_log_support(ideal_pdf, prior)
    lo, hi = log_support

    a, b = _as_lognormal(ideal_pdf), _as_lognormal(prior)
    try:
        log_den = integrate_log_axis(lambda r: log_ideal(r) + log_prior(r), lo, hi)
    except NumericalError as exc:
        raise NumericalError(
            f"debias normalizer underflowed for ideal={a or ideal_pdf!r}, "
            f"prior={b or prior!r}: {exc}") from exc

    def biased(r):
        r = np.asarray(r, dtype=np.float64)
        out = np.exp(log_ideal(r) + log_prior(r) - log_den)
        return out[()] if np.ndim(out) == 0 else out

    biased.log_normalizer = log_den
    return biased


def trapezoid_weights(grid):
    """Trapezoid-rule quadrature weights for a sorted, nonuniform grid."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be 1-D, strictly increasing, length >= 2")
    w = np.empty_like(grid)
    d = np.diff(grid)
    w[0] = 0.5 * d[0]
    w[-1] = 0.5 * d[-1]
    w[1:-1] = 0.5 * (d[:-1] + d[1:])
    return w


def debias_on_grid(ideal_density, grid, prior, log_input=False):
    """Discrete debiasing transform on a rate grid.

    ``ideal_density`` rows (last axis aligned with ``grid``) are multiplied
    by the marginal and renormalized with the grid's trapezoid rule, so the
    result is comparable to any posterior normalized with the same rule.
    """
    grid = np.asarray(grid, dtype=np.float64)
    log_w = np.log(trapezoid_weights(grid))
    if log_input:
        log_ideal = np.asarray(ideal_density, dtype=np.float64)
    else:
        with np.errstate(divide="ignore"):
            log_ideal = np.log(np.asarray(ideal_density, dtype=np.float64))
    log_num = log_ideal + log_density_fn(prior)(grid)
    log_z = special.logsumexp(log_num + log_w, axis=-1, keepdims=True)
    if np.any(~np.isfinite(log_z)):
        raise NumericalError(f"grid normalizer underflowed for prior={prior!r}")
    return np.exp(log_num - log_z)


def hurdle_expectation(hp):
    """Conditional mean rain rate ``(1 - p) exp(mu + sigma^2 / 2)``."""
    return (1.0 - hp.p) * math.exp(hp.dist.mu + 0.5 * hp.dist.sigma ** 2)


def hurdle_mean(p, mu, sigma):
    """Vectorized ``hurdle_expectation`` for network head outputs."""
    p = np.asarray(p, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    return (1.0 - p) * np.exp(mu + 0.5 * sigma * sigma)


def sample_hurdle(hp, seed, size=None):
    """Draw rain rates: zero with probability ``p``, else ``exp(mu + sigma z)``."""
    rng = np.random.default_rng(seed)
    u = rng.random(size)
    z = rng.standard_normal(size)
    out = np.where(u < hp.p, 0.0, np.exp(hp.dist.mu + hp.dist.sigma * z))
    return float(out) if size is None else out
