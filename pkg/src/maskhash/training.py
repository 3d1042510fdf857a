"""Joint classification + intra-pair training with hand-written backprop.

For an intra-pair ``(a, b)`` with label ``y`` the objective is::

    inter = (CE(p_a, y) + CE(p_b, y)) / 2
    intra = max(||ip_a - ip_b||^2 - margin, 0)
    total = alpha * inter + beta * intra

and a batch minimises the mean of ``total`` over its pairs.
"""

import configparser
import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_int, check_real
from .dataset import sample_intra_pair, stack_frame_sets
from .errors import ConfigError, ContractError, NumericError, TrainingError
from .model import SIGMOID_CLIP, ModelParams, forward_batch, init_params

PROB_FLOOR = 1e-12
DEFAULT_OPTIMIZER = "adam(0.9,0.999,1e-8)"
TRAIN_CONFIG_KEYS = (
    "alpha",
    "beta",
    "margin",
    "learning_rate",
    "batch_size",
    "iterations",
    "seed",
    "optimizer",
)

_OPTIMIZER_RE = re.compile(r"^\s*(sgd_momentum|sgd|adam)\s*(?:\(([^)]*)\))?\s*$")


def parse_optimizer(text):
    """Parse ``sgd``, ``sgd_momentum(mu)`` or ``adam(b1,b2,eps)``.

    Returns ``(name, args)``. Missing arguments take the usual defaults.
    """
    m = _OPTIMIZER_RE.match(str(text))
    if not m:
        raise ConfigError(f"unknown optimizer {text!r}")
    name, raw = m.group(1), m.group(2)
    try:
        args = tuple(float(a) for a in raw.split(",")) if raw and raw.strip() else ()
    except ValueError:
        raise ConfigError(f"bad optimizer arguments in {text!r}") from None
    defaults = {"sgd": (), "sgd_momentum": (0.9,), "adam": (0.9, 0.999, 1e-8)}[name]
    if args and len(args) != len(defaults):
        raise ConfigError(f"{name} takes {len(defaults)} argument(s), got {text!r}")
    args = args or defaults
    if not all(math.isfinite(a) for a in args):
        raise ConfigError(f"optimizer arguments must be finite: {text!r}")
    return name, args


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 1.0
    margin: float = 2.0
    learning_rate: float = 1e-3
    batch_size: int = 16
    iterations: int = 2000
    seed: int = 0
    optimizer: str = DEFAULT_OPTIMIZER

    def __post_init__(self):
        check_real(self.alpha, "alpha", 0.0)
        check_real(self.beta, "beta", 0.0)
        if self.alpha + self.beta <= 0:
            raise ConfigError("alpha + beta must be positive")
        check_real(self.margin, "margin", 0.0)
        check_real(self.learning_rate, "learning_rate", 0.0)
        check_int(self.batch_size, "batch_size", 1)
        check_int(self.iterations, "iterations", 1)
        check_int(self.seed, "seed", 0)
        parse_optimizer(self.optimizer)

    @classmethod
    def from_mapping(cls, values):
        """Build from string values (as read from a key=value file)."""
        kwargs = {}
        for key in TRAIN_CONFIG_KEYS:
            if key not in values:
                continue
            raw = values[key]
            if key == "optimizer":
                kwargs[key] = str(raw).strip()
                continue
            try:
                kwargs[key] = int(raw) if key in ("batch_size", "iterations", "seed") else float(raw)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        """Read ``key=value`` lines; ``#`` starts a comment. Unknown keys are ignored."""
        return cls.from_mapping(read_key_values(path))


def read_key_values(path):
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",),
        interpolation=None,
    )
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + Path(path).read_text())
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from None
    return dict(parser["run"])


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    inter: float
    intra: float


def classification_loss(class_probs, label):
    """Cross-entropy against a one-hot label, ``-log max(p[y], 1e-12)``."""
    class_probs = np.asarray(class_probs, dtype=np.float64)
    if isinstance(label, bool) or not 0 <= int(label) < class_probs.shape[0]:
        raise ContractError(f"label {label!r} outside [0, {class_probs.shape[0]})")
    return float(-np.log(max(class_probs[int(label)], PROB_FLOOR)))


def intra_pair_loss(ip1, ip2, margin):
    """``max(||ip1 - ip2||^2 - margin, 0)``."""
    ip1 = np.asarray(ip1, dtype=np.float64)
    ip2 = np.asarray(ip2, dtype=np.float64)
    if ip1.shape != ip2.shape:
        raise ContractError(f"binary-like vectors differ in shape: {ip1.shape} vs {ip2.shape}")
    return max(float(np.sum((ip1 - ip2) ** 2)) - margin, 0.0)


def _batch_objective(params, Xa, Xb, y, config, need_grad):
    """Per-pair losses and, optionally, the gradient of their batch mean."""
    B = Xa.shape[0]
    cache = forward_batch(params, np.concatenate([Xa, Xb]))
    probs, code = cache["probs"], cache["code"]
    yy = np.concatenate([y, y])
    p_true = probs[np.arange(2 * B), yy]
    ce = -np.log(np.maximum(p_true, PROB_FLOOR))
    inter = 0.5 * (ce[:B] + ce[B:])
    diff = code[:B] - code[B:]
    dist2 = np.sum(diff * diff, axis=1)
    active = dist2 > config.margin
    intra = np.where(active, dist2 - config.margin, 0.0)
    total = config.alpha * inter + config.beta * intra
    if not need_grad:
        return total, inter, intra, None

    scale = 1.0 / B
    dlogits = probs.copy()
    dlogits[np.arange(2 * B), yy] -= 1.0
    dlogits *= (0.5 * config.alpha * scale) * (p_true > PROB_FLOOR)[:, None]
    dcode = dlogits @ params.cls_w
    pull = (2.0 * config.beta * scale) * diff * active[:, None]
    dcode[:B] += pull
    dcode[B:] -= pull
    unclipped = np.abs(cache["enc_pre"]) < SIGMOID_CLIP
    denc = dcode * code * (1.0 - code) * unclipped
    drepr = (denc @ params.enc_w) * (cache["repr_pre"] > 0)
    dfused = drepr @ params.repr_w
    dembed = params.fusion[None, :, None] * dfused[:, None, :] * (cache["embed_pre"] > 0)
    grads = ModelParams(
        fusion=np.einsum("bnh,bh->n", cache["embed"], dfused),
        embed_w=np.einsum("bnh,bnd->hd", dembed, cache["x"]),
        embed_b=dembed.sum(axis=(0, 1)),
        repr_w=drepr.T @ cache["fused"],
        repr_b=drepr.sum(axis=0),
        enc_w=denc.T @ cache["repr"],
        enc_b=denc.sum(axis=0),
        cls_w=dlogits.T @ code,
        cls_b=dlogits.sum(axis=0),
    )
    return total, inter, intra, grads


def _pair_arrays(pairs):
    Xa = stack_frame_sets([p.a for p in pairs])
    Xb = stack_frame_sets([p.b for p in pairs])
    y = np.array([p.label for p in pairs], dtype=np.int64)
    return Xa, Xb, y


def total_loss(params, intra_pair, config):
    total, inter, intra, _ = _batch_objective(params, *_pair_arrays([intra_pair]), config, False)
    return LossBreakdown(total=float(total[0]), inter=float(inter[0]), intra=float(intra[0]))


def backward(params, intra_pair, config):
    """Exact gradient of :func:`total_loss` for one pair, as a ``ModelParams``."""
    _, _, _, grads = _batch_objective(params, *_pair_arrays([intra_pair]), config, True)
    for name, g in zip(ModelParams.names(), grads.arrays()):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    return grads


def grad_check(params, intra_pair, config, epsilon=1e-4, analytic=None):
    """Largest relative error between analytic and central-difference gradients.

    Relative error per parameter is ``|a - n| / max(|a|, |n|, 1e-8)``.
    ``analytic`` defaults to :func:`backward`; pass a tampered gradient to
    test the checker itself.
    """
    if analytic is None:
        analytic = backward(params, intra_pair, config)
    Xa, Xb, y = _pair_arrays([intra_pair])
    probe = params.copy()
    worst = 0.0
    for name in ModelParams.names():
        values = getattr(probe, name).reshape(-1)
        expected = getattr(analytic, name).reshape(-1)
        for i in range(values.size):
            keep = values[i]
            values[i] = keep + epsilon
            plus = _batch_objective(probe, Xa, Xb, y, config, False)[0][0]
            values[i] = keep - epsilon
            minus = _batch_objective(probe, Xa, Xb, y, config, False)[0][0]
            values[i] = keep
            numeric = (plus - minus) / (2.0 * epsilon)
            a = expected[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def kink_distance(params, intra_pair, config):
    """Smallest distance of any ReLU pre-activation or the hinge argument from its kink.

    Central differences are only a valid oracle when every kink is farther
    away than the perturbation can move it.
    """
    Xa, Xb, _ = _pair_arrays([intra_pair])
    cache = forward_batch(params, np.concatenate([Xa, Xb]))
    diff = cache["code"][0] - cache["code"][1]
    return min(
        float(np.min(np.abs(cache["embed_pre"]))),
        float(np.min(np.abs(cache["repr_pre"]))),
        abs(float(diff @ diff) - config.margin),
    )


class _Optimizer:
    def __init__(self, name, args, learning_rate, params):
        self.name = name
        self.args = args
        self.lr = learning_rate
        self.t = 0
        self.m = [np.zeros_like(p) for p in params.arrays()]
        self.v = [np.zeros_like(p) for p in params.arrays()]

    def step(self, params, grads):
        """Update ``params`` in place."""
        self.t += 1
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.m, self.v):
            if self.name == "sgd":
                p -= self.lr * g
            elif self.name == "sgd_momentum":
                (mu,) = self.args
                m *= mu
                m += g
                p -= self.lr * m
            else:
                b1, b2, eps = self.args
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                m_hat = m / (1.0 - b1**self.t)
                v_hat = v / (1.0 - b2**self.t)
                p -= self.lr * m_hat / (np.sqrt(v_hat) + eps)


def _check_trainable(dataset, arch):
    if dataset.feature_dim != arch.feature_dim:
        raise ContractError(
            f"dataset feature_dim {dataset.feature_dim} != architecture {arch.feature_dim}"
        )
    if dataset.num_classes > arch.num_classes:
        raise ContractError(
            f"dataset has {dataset.num_classes} classes, architecture {arch.num_classes}"
        )
    short = [v.id for v in dataset.videos if v.num_frames < 2 * arch.n_frames]
    if short:
        raise ContractError(
            f"videos {short[:5]} have fewer than {2 * arch.n_frames} frames"
        )


def train(dataset, arch, config, params=None):
    """Optimise the joint objective with mini-batches of intra-pairs.

    Videos are visited in shuffled epochs; a batch may straddle an epoch
    boundary. Everything is driven by ``config.seed``, so repeated calls give
    bit-identical parameters and histories.

    Returns ``(params, history)`` where ``history`` holds one batch-mean
    :class:`LossBreakdown` per iteration.
    """
    _check_trainable(dataset, arch)
    if params is None:
        params = init_params(arch, config.seed)
    else:
        params = params.copy()
    params.check(arch)
    name, args = parse_optimizer(config.optimizer)
    opt = _Optimizer(name, args, config.learning_rate, params)
    rng = np.random.default_rng([config.seed, 1])
    order = rng.permutation(len(dataset))
    cursor = 0
    history = []
    for it in range(config.iterations):
        pairs = []
        while len(pairs) < config.batch_size:
            if cursor == len(order):
                order = rng.permutation(len(dataset))
                cursor = 0
            video = dataset.videos[order[cursor]]
            cursor += 1
            pairs.append(sample_intra_pair(video, arch.n_frames, rng))
        try:
            total, inter, intra, grads = _batch_objective(
                params, *_pair_arrays(pairs), config, True
            )
        except NumericError as exc:
            raise TrainingError(f"iteration {it}: {exc}") from None
        record = LossBreakdown(
            total=float(total.mean()), inter=float(inter.mean()), intra=float(intra.mean())
        )
        if not math.isfinite(record.total):
            raise TrainingError(f"iteration {it}: loss diverged ({record.total})")
        history.append(record)
        opt.step(params, grads)
    return params, history


def write_loss_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "total", "inter", "intra"])
        for i, rec in enumerate(history):
            w.writerow([i, repr(rec.total), repr(rec.inter), repr(rec.intra)])
