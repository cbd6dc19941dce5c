"""Synthetic zero-inflated, long-tailed retrieval problems with a known forward model.

Wet samples emit ``S_c = gain_c * ln(1 + R) + noise``; dry samples emit
signals from a separate Gaussian that overlaps the light-rain range.  Because
F(S | R) is known exactly, both the biased Bayes posterior (label marginal as
prior) and the ideal posterior (uniform rate prior) can be evaluated on a grid.
"""
import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import kernels
from .errors import CheckpointError, DomainError, NumericalError, VersionMismatchError
from .hurdle_dist import MarginalPrior, log_density_fn, trapezoid_weights

WET_DRY_RATIO = 3.6
DEFAULT_PRIOR = MarginalPrior(lmu=0.46, lsigma=1.28, p0=1.0 / (1.0 + WET_DRY_RATIO))
SIX_CHANNEL_GAINS = (-10.0, -8.0, -6.0, -4.0, -3.0, -2.0)
SPLITS = ("train", "val", "test")
GRID_SIZE = 2048

DATASET_MAGIC = b"HIMDLDAT"
DATASET_VERSION = 1


@dataclass(frozen=True)
class ForwardModel:
    """Signal generation per channel.

    ``dry_signal_mu`` defaults to the noise-free signal of a 0.1 mm/h rate and
    ``dry_signal_sigma`` to ``noise_sigma``.
    """

    gain: tuple = (-10.0,)
    noise_sigma: float = 9.0
    dry_signal_mu: tuple = None
    dry_signal_sigma: float = None

    def __post_init__(self):
        gain = tuple(float(g) for g in np.atleast_1d(self.gain))
        if not gain or any(g == 0 for g in gain):
            raise DomainError("need at least one channel with nonzero gain")
        object.__setattr__(self, "gain", gain)
        if not self.noise_sigma > 0:
            raise DomainError("noise_sigma must be > 0")
        if self.dry_signal_mu is None:
            dmu = tuple(g * math.log1p(0.1) for g in gain)
        else:
            dmu = tuple(float(m) for m in np.atleast_1d(self.dry_signal_mu))
            if len(dmu) == 1:
                dmu = dmu * len(gain)
        if len(dmu) != len(gain):
            raise DomainError("dry_signal_mu needs one value per channel")
        object.__setattr__(self, "dry_signal_mu", dmu)
        if self.dry_signal_sigma is None:
            object.__setattr__(self, "dry_signal_sigma", float(self.noise_sigma))
        elif not self.dry_signal_sigma > 0:
            raise DomainError("dry_signal_sigma must be > 0")

    @property
    def channels(self):
        return len(self.gain)

    @classmethod
    def six_channel(cls, noise_sigma=9.0):
        return cls(gain=SIX_CHANNEL_GAINS, noise_sigma=noise_sigma)

    def mean_signal(self, rates):
        """Noise-free signal for each rate, shape (n, channels)."""
        rates = np.asarray(rates, dtype=np.float64)
        return np.log1p(rates)[:, None] * np.asarray(self.gain)[None, :]

    def to_dict(self):
        return {"gain": list(self.gain), "noise_sigma": self.noise_sigma,
                "dry_signal_mu": list(self.dry_signal_mu),
                "dry_signal_sigma": self.dry_signal_sigma}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    seed: int
    prior: MarginalPrior
    forward_model: ForwardModel

    def __post_init__(self):
        if not self.features.shape[0] == self.labels.shape[0] == self.split.shape[0]:
            raise DomainError("features, labels and split tags must align")
        if np.any(self.labels < 0):
            raise DomainError("labels must be >= 0")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, name):
        """``(features, labels)`` for one split."""
        mask = self.split == SPLITS.index(name)
        return self.features[mask], self.labels[mask]

    def split_sizes(self):
        return {name: int(np.sum(self.split == i)) for i, name in enumerate(SPLITS)}

    def fingerprint(self, name=None):
        """SHA-256 over the features and labels of one split (or all)."""
        if name is None:
            x, y = self.features, self.labels
        else:
            x, y = self.subset(name)
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(x, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(y, dtype="<f8").tobytes())
        return h.hexdigest()


def _draw(prior, fm, n, rng):
    u = rng.random(n)
    z = rng.standard_normal(n)
    eps = rng.standard_normal((n, fm.channels))
    dry = u < prior.p0
    labels = np.where(dry, 0.0, np.exp(prior.lmu + prior.lsigma * z))
    wet_sig = fm.mean_signal(labels) + fm.noise_sigma * eps
    dry_sig = np.asarray(fm.dry_signal_mu)[None, :] + fm.dry_signal_sigma * eps
    features = np.where(dry[:, None], dry_sig, wet_sig)
    return features, labels


def generate(prior=DEFAULT_PRIOR, fm=None, n=1000, seed=0, split="train"):
    """Draw ``n`` samples for a single split; deterministic in ``seed``."""
    if n < 1:
        raise DomainError("n must be positive")
    fm = ForwardModel() if fm is None else fm
    features, labels = _draw(prior, fm, n, np.random.default_rng(seed))
    tag = np.full(n, SPLITS.index(split), dtype=np.uint8)
    return Dataset(features, labels, tag, seed, prior, fm)


def generate_splits(prior=DEFAULT_PRIOR, fm=None, sizes=(200_000, 25_000, 25_000), seed=42):
    """Train/val/test splits from independent child streams of ``seed``."""
    fm = ForwardModel() if fm is None else fm
    children = np.random.SeedSequence(seed).spawn(len(SPLITS))
    feats, labs, tags = [], [], []
    for i, (n, ss) in enumerate(zip(sizes, children)):
        if n < 1:
            raise DomainError("every split needs at least one sample")
        x, y = _draw(prior, fm, int(n), np.random.default_rng(ss))
        feats.append(x)
        labs.append(y)
        tags.append(np.full(int(n), i, dtype=np.uint8))
    return Dataset(np.concatenate(feats), np.concatenate(labs), np.concatenate(tags),
                   seed, prior, fm)


# ---------------------------------------------------------------------------
# Posterior grids
# ---------------------------------------------------------------------------

@dataclass
class PosteriorGrid:
    rates: np.ndarray
    density: np.ndarray
    mean: np.ndarray

    @property
    def weights(self):
        return trapezoid_weights(self.rates)


def rate_grid(prior=DEFAULT_PRIOR, size=GRID_SIZE, width=6.0):
    """Log-spaced rates covering ``exp(lmu +- width * lsigma)``."""
    return np.exp(np.linspace(prior.lmu - width * prior.lsigma,
                              prior.lmu + width * prior.lsigma, size))


def _signals_2d(fm, signal):
    s = np.asarray(signal, dtype=np.float64)
    if s.ndim == 0:
        s = s.reshape(1, 1)
    elif s.ndim == 1:
        s = s.reshape(1, -1) if s.size == fm.channels and fm.channels > 1 else s.reshape(-1, 1)
    if s.shape[1] != fm.channels:
        raise DomainError(f"signal has {s.shape[1]} channels, model has {fm.channels}")
    return s


def _normalize_rows(log_num, grid):
    log_w = np.log(trapezoid_weights(grid))
    log_z = special.logsumexp(log_num + log_w, axis=1, keepdims=True)
    if np.any(~np.isfinite(log_z)):
        raise NumericalError("posterior normalizer is not finite for some signal")
    density = np.exp(log_num - log_z)
    mean = density @ (np.exp(log_w) * grid)
    return density, mean


def forward_loglik(fm, signal, grid):
    """``log F(signal | r)`` on the grid, one row per signal."""
    s = _signals_2d(fm, signal)
    return kernels.gaussian_loglik_grid(s, fm.mean_signal(grid), fm.noise_sigma)


def ideal_posterior(fm, signal, grid):
    """Posterior under a uniform rate prior: proportional to the likelihood."""
    grid = np.asarray(grid, dtype=np.float64)
    density, mean = _normalize_rows(forward_loglik(fm, signal, grid), grid)
    return PosteriorGrid(grid, density, mean)


def biased_posterior(fm, prior, signal, grid):
    """Bayes posterior with the label marginal's wet lognormal as prior."""
    grid = np.asarray(grid, dtype=np.float64)
    log_num = forward_loglik(fm, signal, grid) + log_density_fn(prior)(grid)[None, :]
    density, mean = _normalize_rows(log_num, grid)
    return PosteriorGrid(grid, density, mean)


# ---------------------------------------------------------------------------
# Dataset files
#
#   <path>          magic "HIMDLDAT" | u32 version | u64 n | u32 channels |
#                   features (channel-major f8 LE) | labels (f8 LE) | split (u8)
#   <path>.json     human-readable metadata, including the binary's SHA-256
# ---------------------------------------------------------------------------

def sidecar_path(path):
    return f"{path}.json"


def save_dataset(ds, path):
    n, c = ds.features.shape
    body = (np.ascontiguousarray(ds.features.T, dtype="<f8").tobytes()
            + np.ascontiguousarray(ds.labels, dtype="<f8").tobytes()
            + np.ascontiguousarray(ds.split, dtype=np.uint8).tobytes())
    blob = DATASET_MAGIC + struct.pack("<IQI", DATASET_VERSION, n, c) + body
    with open(path, "wb") as fh:
        fh.write(blob)
    meta = {
        "format": "hurdle-imdl dataset",
        "version": DATASET_VERSION,
        "n": n,
        "channels": c,
        "seed": ds.seed,
        "prior": ds.prior.to_dict(),
        "forward_model": ds.forward_model.to_dict(),
        "splits": ds.split_sizes(),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    with open(sidecar_path(path)) as fh:
        meta = json.load(fh)
    if blob[:8] != DATASET_MAGIC:
        raise CheckpointError(f"{path}: not a dataset file (bad magic)")
    version, n, c = struct.unpack("<IQI", blob[8:24])
    if version != DATASET_VERSION:
        raise VersionMismatchError(f"{path}: dataset version {version}")
    if hashlib.sha256(blob).hexdigest() != meta.get("sha256"):
        raise CheckpointError(f"{path}: checksum does not match sidecar")
    off = 24
    feats = np.frombuffer(blob, dtype="<f8", count=n * c, offset=off).reshape(c, n).T
    off += 8 * n * c
    labels = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
    off += 8 * n
    split = np.frombuffer(blob, dtype=np.uint8, count=n, offset=off)
    if off + n != len(blob):
        raise CheckpointError(f"{path}: unexpected file length")
    return Dataset(np.array(feats, dtype=np.float64), labels.astype(np.float64),
                   split.copy(), meta["seed"], MarginalPrior(**meta["prior"]),
                   ForwardModel.from_dict(meta["forward_model"]))
