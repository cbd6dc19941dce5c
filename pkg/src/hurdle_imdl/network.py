"""Small fully connected network with hurdle output heads, trained by Adam.

Head layouts::

    joint    -> [p-logit, mu]
    p_only   -> [p-logit]
    mu_only  -> [mu]          (also used as the raw-rate head of MSE baselines)

sigma is never predicted; it is a fixed training hyperparameter.
"""
import copy
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (CheckpointError, DivergenceError, DomainError,
                     StaleActivationError, VersionMismatchError)
from .hurdle_dist import SIGMA_MIN
from .losses import HurdleObjective, mean_fsum

HEAD_OUTPUTS = {"joint": 2, "p_only": 1, "mu_only": 1}

CHECKPOINT_MAGIC = b"HIMDLCKP"
CHECKPOINT_VERSION = 1


@dataclass
class NetConfig:
    input_dim: int
    hidden: tuple = (64, 64)
    seed: int = 0
    heads: str = "joint"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise DomainError("layer widths must be positive")
        if self.heads not in HEAD_OUTPUTS:
            raise DomainError(f"heads must be one of {sorted(HEAD_OUTPUTS)}")

    @property
    def n_outputs(self):
        return HEAD_OUTPUTS[self.heads]

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 1024
    max_epochs: int = 100
    patience: int = 10
    sigma: float = 0.5

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.weight_decay >= 0):
            raise DomainError("learning_rate must be > 0 and weight_decay >= 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise DomainError("batch_size, max_epochs must be >= 1, patience >= 0")
        if self.patience > self.max_epochs:
            raise DomainError("patience must not exceed max_epochs")
        if not self.sigma >= SIGMA_MIN:
            raise DomainError(f"sigma must be >= {SIGMA_MIN}")

    def to_dict(self):
        return asdict(self)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MLP:
    """ReLU multilayer perceptron with Kaiming fan-in initialization."""

    def __init__(self, config, params=None):
        self.config = config
        widths = (config.input_dim,) + config.hidden + (config.n_outputs,)
        if params is None:
            rng = np.random.default_rng(config.seed)
            params = []
            for fan_in, fan_out in zip(widths[:-1], widths[1:]):
                params.append(rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in))
                params.append(np.zeros(fan_out))
        else:
            params = [np.array(p, dtype=np.float64) for p in params]
            for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
                if params[2 * i].shape != (fan_in, fan_out) or params[2 * i + 1].shape != (fan_out,):
                    raise DomainError("parameter shapes do not match the config")
        self.params = params
        self._cache = None

    @property
    def n_layers(self):
        return len(self.params) // 2

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise DomainError(
                f"expected features of shape (n, {self.config.input_dim}), got {x.shape}")
        acts = [x]
        pres = []
        a = x
        for i in range(self.n_layers):
            z = a @ self.params[2 * i] + self.params[2 * i + 1]
            if i < self.n_layers - 1:
                pres.append(z)
                a = np.maximum(z, 0.0)
                acts.append(a)
            else:
                a = z
        self._cache = (x, acts, pres)
        return a

    def backward(self, x, grad_out):
        """Parameter gradients given d(loss)/d(outputs) for the cached batch."""
        if self._cache is None:
            raise StaleActivationError("backward called before forward")
        cx, acts, pres = self._cache
        if x is not cx and not (np.shape(x) == cx.shape and np.array_equal(x, cx)):
            raise StaleActivationError("backward features differ from the last forward pass")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != (cx.shape[0], self.config.n_outputs):
            raise DomainError("head gradient shape does not match the forward batch")
        grads = [None] * len(self.params)
        for i in range(self.n_layers - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.params[2 * i].T) * (pres[i - 1] > 0)
        return grads


def heads(net, outputs):
    """Split raw outputs into ``(p, mu)``; absent heads come back as None."""
    kind = net.config.heads if isinstance(net, MLP) else net
    if kind == "joint":
        return sigmoid(outputs[:, 0]), outputs[:, 1].copy()
    if kind == "p_only":
        return sigmoid(outputs[:, 0]), None
    return None, outputs[:, 0].copy()


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params, lr=1e-3, weight_decay=0.0, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.wd:
                g = g + self.wd * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class Checkpoint:
    net_config: NetConfig
    train_config: TrainConfig
    params: list
    norm_mean: np.ndarray
    norm_std: np.ndarray
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def network(self):
        return MLP(self.net_config, self.params)

    def normalize(self, features):
        return (np.asarray(features, dtype=np.float64) - self.norm_mean) / self.norm_std

    def outputs(self, features):
        return self.network().forward(self.normalize(features))

    def equals(self, other):
        """Bitwise equality of every array plus the JSON-able fields."""
        if not isinstance(other, Checkpoint):
            return False
        arrs = self._arrays()
        oarrs = other._arrays()
        if [n for n, _ in arrs] != [n for n, _ in oarrs]:
            return False
        for (_, a), (_, b) in zip(arrs, oarrs):
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return self._header_fields() == other._header_fields()

    __eq__ = equals

    def _arrays(self):
        out = [("norm_mean", self.norm_mean), ("norm_std", self.norm_std)]
        for i, p in enumerate(self.params):
            out.append((f"param{i}", p))
        return out

    def _header_fields(self):
        return {
            "net_config": self.net_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "history": self.history,
            "meta": self.meta,
        }


def fit_normalizer(features):
    features = np.asarray(features, dtype=np.float64)
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def _eval_loss(net, x, labels, objective, chunk=65536):
    # chunked so full validation sets do not allocate huge activations
    losses = []
    for lo in range(0, x.shape[0], chunk):
        out = net.forward(x[lo:lo + chunk])
        losses.append(_per_sample(objective, out, labels[lo:lo + chunk]))
    net._cache = None
    return mean_fsum(np.concatenate(losses))


def _per_sample(objective, outputs, labels):
    if hasattr(objective, "per_sample"):
        return objective.per_sample(outputs, labels)[0]
    w = objective.scheme.weights(labels)
    r = outputs[:, 0] - labels
    return w * r * r


def train(net, train_set, val_set, config, objective, log=None):
    """Mini-batch Adam with early stopping on the validation objective.

    Parameters
    ----------
    net : MLP
        Initialized network; its parameters are updated in place.
    train_set, val_set : tuple of (features, labels)
    config : TrainConfig
    objective : HurdleObjective or MSEObjective
        Must emit as many output columns as ``net`` has.
    log : callable, optional
        Receives one history dict per epoch.

    Returns
    -------
    Checkpoint
        Parameters from the epoch with the lowest validation loss.
    """
    xtr, ytr = (np.asarray(a, dtype=np.float64) for a in train_set)
    xva, yva = (np.asarray(a, dtype=np.float64) for a in val_set)
    if ytr.size == 0 or yva.size == 0:
        raise DomainError("training and validation sets must be non-empty")
    if objective.n_outputs != net.config.n_outputs:
        raise DomainError("objective and network head layout disagree")
    mean, std = fit_normalizer(xtr)
    xtr = (xtr - mean) / std
    xva = (xva - mean) / std

    opt = Adam(net.params, lr=config.learning_rate, weight_decay=config.weight_decay)
    rng = np.random.default_rng([net.config.seed, 0x5EED])
    n = ytr.size
    bs = config.batch_size

    best = math.inf
    best_params = [p.copy() for p in net.params]
    best_epoch = 0
    bad_epochs = 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for b, lo in enumerate(range(0, n, bs)):
            idx = order[lo:lo + bs]
            xb = xtr[idx]
            out = net.forward(xb)
            loss, g_out = objective(out, ytr[idx])
            if not math.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            grads = net.backward(xb, g_out)
            opt.step(net.params, grads)
            batch_losses.append(loss)
        val = _eval_loss(net, xva, yva, objective)
        if not math.isfinite(val):
            raise DivergenceError(epoch, -1, val)
        improved = val < best
        if improved:
            best = val
            best_params = [p.copy() for p in net.params]
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
        rec = {"epoch": epoch, "train_loss": mean_fsum(batch_losses),
               "val_loss": val, "improved": improved}
        history.append(rec)
        if log is not None:
            log(rec)
        if bad_epochs > config.patience:
            break

    net.params = best_params
    net._cache = None
    meta = {"best_epoch": best_epoch, "best_val_loss": best}
    if hasattr(objective, "describe"):
        meta["objective"] = objective.describe()
    return Checkpoint(copy.deepcopy(net.config), copy.deepcopy(config),
                      [p.copy() for p in best_params], mean, std, history, meta)


def two_model_train(p_net, mu_net, train_set, val_set, config, prior,
                    use_corr=True, log=None):
    """Fit p and mu with two separate networks.

    The p network sees every sample under DryT + WetT; the mu network sees
    wet samples only under LogNormT (+ CorrT).
    """
    if p_net.config.heads != "p_only" or mu_net.config.heads != "mu_only":
        raise DomainError("two-model training needs a p_only and a mu_only network")
    ck_p = train(p_net, train_set, val_set, config,
                 HurdleObjective(prior, config.sigma, parts="p"), log=log)
    (xtr, ytr), (xva, yva) = train_set, val_set
    wtr, wva = np.asarray(ytr) > 0, np.asarray(yva) > 0
    if not wtr.any() or not wva.any():
        raise DomainError("two-model training needs wet samples in both splits")
    ck_mu = train(mu_net, (np.asarray(xtr)[wtr], np.asarray(ytr)[wtr]),
                  (np.asarray(xva)[wva], np.asarray(yva)[wva]), config,
                  HurdleObjective(prior, config.sigma, use_corr=use_corr, parts="mu"),
                  log=log)
    return ck_p, ck_mu


# ---------------------------------------------------------------------------
# Checkpoint file format
#
#   magic "HIMDLCKP" | u32 version | u64 header length | UTF-8 JSON header |
#   float64 little-endian arrays, in header["arrays"] order
#
# header["sha256"] covers the array payload.
# ---------------------------------------------------------------------------

def save(checkpoint, path):
    arrays = checkpoint._arrays()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    header = checkpoint._header_fields()
    header["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    header["sha256"] = hashlib.sha256(payload).hexdigest()
    hbytes = json.dumps(header, sort_keys=True, allow_nan=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    if len(blob) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    try:
        header = json.loads(blob[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = blob[20 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    arrays = {}
    off = 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        arrays[spec["name"]] = np.frombuffer(
            payload[off:off + nbytes], dtype="<f8").reshape(shape).astype(np.float64)
        off += nbytes
    if off != len(payload):
        raise CheckpointError(f"{path}: payload length mismatch")
    nc = header["net_config"]
    n_params = sum(1 for k in arrays if k.startswith("param"))
    return Checkpoint(
        NetConfig(nc["input_dim"], tuple(nc["hidden"]), nc["seed"], nc["heads"]),
        TrainConfig(**header["train_config"]),
        [arrays[f"param{i}"] for i in range(n_params)],
        arrays["norm_mean"], arrays["norm_std"],
        header["history"], header["meta"])
