"""Hurdle-IMDL negative log-likelihood and the MSE-family baselines.

Per sample the NLL splits into four pieces::

    dry     = -[r = 0] ln p
    wet     = -[r > 0] ln(1 - p)
    lognorm =  [r > 0] ((ln r - mu)^2 / (2 sigma^2) + ln sigma)
    corr    =  [r > 0] (log-normalizer of ideal x marginal) + ln(2 pi) / 2

``corr`` is what turns conventional lognormal fitting into debiased
fitting; dropping it gives the plain hurdle objective.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, UnfittedError
from .hurdle_dist import P_EPS, MarginalPrior

__all__ = [
    "NllTerms", "LossGrad", "BatchNll", "WeightScheme",
    "nll_terms", "nll_grad", "batch_nll", "weighted_mse",
    "HurdleObjective", "MSEObjective", "mean_fsum",
]


def mean_fsum(values):
    """Correctly rounded mean; independent of summation order."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise DomainError("mean of an empty batch")
    return math.fsum(values.tolist()) / values.size


@dataclass(frozen=True)
class NllTerms:
    dry: float
    wet: float
    lognorm: float
    corr: float

    @property
    def total(self):
        return self.dry + self.wet + self.lognorm + self.corr


@dataclass(frozen=True)
class LossGrad:
    d_p: float
    d_mu: float


def _clamp_p(p):
    return min(max(float(p), P_EPS), 1.0 - P_EPS)


def _check_label(label):
    if not label >= 0:
        raise DomainError(f"label must be >= 0, got {label!r}")


def _check_sigma(sigma):
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma!r}")


def corr_term(mu, sigma, prior):
    """Closed-form correction term for one wet sample."""
    lmu, lsig = prior.lmu, prior.lsigma
    s2, l2 = sigma * sigma, lsig * lsig
    num = lmu * lmu + mu * mu + l2 * (2.0 * mu - s2) + 2.0 * lmu * (s2 - mu)
    return -num / (2.0 * (l2 + s2)) - 0.5 * math.log(l2 + s2)


def nll_terms(label, p, mu, sigma, prior):
    """The four NLL pieces for one sample."""
    _check_label(label)
    _check_sigma(sigma)
    p = _clamp_p(p)
    if label == 0:
        return NllTerms(-math.log(p), 0.0, 0.0, 0.0)
    resid = math.log(label) - mu
    lognorm = resid * resid / (2.0 * sigma * sigma) + math.log(sigma)
    return NllTerms(0.0, -math.log1p(-p), lognorm, corr_term(mu, sigma, prior))


def nll_grad(label, p, mu, sigma, prior):
    """Partial derivatives of the per-sample NLL w.r.t. ``p`` and ``mu``."""
    _check_label(label)
    _check_sigma(sigma)
    p = _clamp_p(p)
    if label == 0:
        return LossGrad(-1.0 / p, 0.0)
    l2 = prior.lsigma ** 2
    d_mu = (-(math.log(label) - mu) / sigma ** 2
            - (mu + l2 - prior.lmu) / (l2 + sigma ** 2))
    return LossGrad(1.0 / (1.0 - p), d_mu)


@dataclass(frozen=True)
class BatchNll:
    """Mean NLL over a batch.

    ``d_p`` and ``d_mu`` are gradients of the *mean* loss with respect to
    each sample's own parameters, i.e. per-sample gradients divided by n.
    """

    loss: float
    d_p: np.ndarray
    d_mu: np.ndarray


def batch_nll(labels, p, mu, sigma, prior, use_corr=True):
    labels = np.asarray(labels, dtype=np.float64)
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), labels.shape)
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), labels.shape)
    if labels.ndim != 1 or labels.size == 0:
        raise DomainError("batch must be a non-empty 1-D array")
    if np.any(~(labels >= 0)):
        raise DomainError("labels must be >= 0")
    _check_sigma(sigma)
    n = labels.size
    wet = labels > 0
    pc = np.clip(p, P_EPS, 1.0 - P_EPS)
    logr = np.log(np.where(wet, labels, 1.0))
    s2, l2 = sigma * sigma, prior.lsigma ** 2
    total = np.where(wet, -np.log1p(-pc), -np.log(pc))
    total = total + np.where(wet, (logr - mu) ** 2 / (2 * s2) + math.log(sigma), 0.0)
    d_p = np.where(wet, 1.0 / (1.0 - pc), -1.0 / pc)
    d_mu = np.where(wet, -(logr - mu) / s2, 0.0)
    if use_corr:
        lmu = prior.lmu
        num = lmu * lmu + mu * mu + l2 * (2.0 * mu - s2) + 2.0 * lmu * (s2 - mu)
        total = total + np.where(wet, -num / (2 * (l2 + s2)) - 0.5 * math.log(l2 + s2), 0.0)
        d_mu = d_mu + np.where(wet, -(mu + l2 - lmu) / (l2 + s2), 0.0)
    return BatchNll(mean_fsum(total), d_p / n, d_mu / n)


# ---------------------------------------------------------------------------
# Baseline weighting schemes
# ---------------------------------------------------------------------------

@dataclass
class WeightScheme:
    """Per-sample MSE weights: ``omse`` (1), ``lwmse`` (1 + beta r), ``nwmse``.

    ``nwmse`` uses capped inverse bin frequencies over ``n_bins`` log-spaced
    wet bins plus one dry bin, rescaled to unit mean over the fitted labels.
    Call :meth:`fit` on training labels before use.
    """

    kind: str = "omse"
    beta: float = 1.0
    n_bins: int = 30
    w_max: float = 100.0
    log_edges: np.ndarray = field(default=None, repr=False)
    bin_weights: np.ndarray = field(default=None, repr=False)
    dry_weight: float = None

    def __post_init__(self):
        if self.kind not in ("omse", "lwmse", "nwmse"):
            raise DomainError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "lwmse" and not self.beta >= 0:
            raise DomainError("lwmse slope must be >= 0")

    @property
    def fitted(self):
        return self.kind != "nwmse" or self.bin_weights is not None

    def fit(self, labels):
        if self.kind != "nwmse":
            return self
        labels = np.asarray(labels, dtype=np.float64)
        wet = labels[labels > 0]
        if wet.size == 0:
            raise DomainError("nwmse needs wet labels to fit")
        logs = np.log(wet)
        lo, hi = float(logs.min()), float(logs.max())
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, self.n_bins + 1)
        counts = np.bincount(self._bin(logs, edges), minlength=self.n_bins)
        n = labels.size
        with np.errstate(divide="ignore"):
            raw = np.minimum(n / counts.astype(np.float64), self.w_max)
        n_dry = n - wet.size
        raw_dry = min(n / n_dry, self.w_max) if n_dry else self.w_max
        mean_w = (np.sum(raw * counts) + raw_dry * n_dry) / n
        self.log_edges = edges
        self.bin_weights = raw / mean_w
        self.dry_weight = raw_dry / mean_w
        return self

    @staticmethod
    def _bin(logs, edges):
        idx = np.searchsorted(edges, logs, side="right") - 1
        return np.clip(idx, 0, edges.size - 2)

    def weights(self, labels):
        labels = np.asarray(labels, dtype=np.float64)
        if self.kind == "omse":
            return np.ones_like(labels)
        if self.kind == "lwmse":
            return 1.0 + self.beta * labels
        if not self.fitted:
            raise UnfittedError("nwmse frequency table has not been fitted")
        wet = labels > 0
        out = np.full(labels.shape, self.dry_weight)
        if np.any(wet):
            out[wet] = self.bin_weights[self._bin(np.log(labels[wet]), self.log_edges)]
        return out

    def to_dict(self):
        d = {"kind": self.kind, "beta": self.beta, "n_bins": self.n_bins,
             "w_max": self.w_max}
        if self.kind == "nwmse" and self.fitted:
            d["log_edges"] = self.log_edges.tolist()
            d["bin_weights"] = self.bin_weights.tolist()
            d["dry_weight"] = self.dry_weight
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        edges = d.pop("log_edges", None)
        bw = d.pop("bin_weights", None)
        dry = d.pop("dry_weight", None)
        s = cls(**d)
        if edges is not None:
            s.log_edges = np.asarray(edges, dtype=np.float64)
            s.bin_weights = np.asarray(bw, dtype=np.float64)
            s.dry_weight = float(dry)
        return s


def weighted_mse(prediction, label, scheme):
    """Mean weighted squared error and its gradient w.r.t. ``prediction``.

    The gradient is that of the mean, so it already carries the 1/n factor.
    """
    pred = np.asarray(prediction, dtype=np.float64)
    lab = np.asarray(label, dtype=np.float64)
    if pred.shape != lab.shape:
        raise DomainError("prediction and label shapes differ")
    w = scheme.weights(lab)
    if np.any(~(w > 0)) or np.any(~np.isfinite(w)):
        raise DomainError("weights must be finite and positive")
    resid = pred - lab
    loss = mean_fsum(w * resid * resid)
    return loss, 2.0 * w * resid / pred.size


# ---------------------------------------------------------------------------
# Objectives plugged into the training loop
# ---------------------------------------------------------------------------

class HurdleObjective:
    """Hurdle NLL over raw network outputs.

    ``parts`` selects the head layout: ``"joint"`` (columns p-logit, mu),
    ``"p"`` (p-logit only, DryT + WetT) or ``"mu"`` (mu only, LogNormT plus
    CorrT when ``use_corr``; meant for wet-only training sets).
    """

    def __init__(self, prior, sigma, use_corr=True, parts="joint"):
        if parts not in ("joint", "p", "mu"):
            raise DomainError(f"unknown parts {parts!r}")
        _check_sigma(sigma)
        self.prior = prior
        self.sigma = float(sigma)
        self.use_corr = bool(use_corr)
        self.parts = parts

    @property
    def n_outputs(self):
        return 2 if self.parts == "joint" else 1

    def _split(self, outputs):
        n = outputs.shape[0]
        if self.parts == "joint":
            return outputs[:, 0], outputs[:, 1]
        if self.parts == "p":
            return outputs[:, 0], np.zeros(n)
        return np.zeros(n), outputs[:, 0]

    def per_sample(self, outputs, labels):
        logit, mu = self._split(outputs)
        return kernels.hurdle_nll(
            labels, logit, mu, self.sigma, self.prior.lmu, self.prior.lsigma,
            P_EPS, use_p=self.parts != "mu", use_mu=self.parts != "p",
            use_corr=self.use_corr and self.parts != "p")

    def __call__(self, outputs, labels):
        loss, d_logit, d_mu = self.per_sample(outputs, labels)
        n = labels.shape[0]
        if self.parts == "joint":
            grad = np.stack([d_logit, d_mu], axis=1) / n
        elif self.parts == "p":
            grad = d_logit[:, None] / n
        else:
            grad = d_mu[:, None] / n
        return mean_fsum(loss), grad

    def evaluate(self, outputs, labels):
        return mean_fsum(self.per_sample(outputs, labels)[0])

    def describe(self):
        return {"objective": "hurdle", "sigma": self.sigma,
                "use_corr": self.use_corr, "parts": self.parts,
                "prior": MarginalPrior.to_dict(self.prior)}


class MSEObjective:
    """Weighted MSE on the raw rain rate, single output column."""

    n_outputs = 1

    def __init__(self, scheme):
        if not scheme.fitted:
            raise UnfittedError("weight scheme must be fitted before training")
        self.scheme = scheme

    def __call__(self, outputs, labels):
        loss, grad = weighted_mse(outputs[:, 0], labels, self.scheme)
        return loss, grad[:, None]

    def evaluate(self, outputs, labels):
        return weighted_mse(outputs[:, 0], labels, self.scheme)[0]

    def describe(self):
        return {"objective": "mse", "scheme": self.scheme.to_dict()}
