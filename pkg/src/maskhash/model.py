"""Forward pass of the hash network and its checkpoint format.

Pipeline for one frame set of ``N`` frames, each a ``D``-vector::

    per-frame embedding   E_i = relu(W_e x_i + b_e)            (N, H)
    weighted fusion       f   = sum_i w_i E_i                  (H,)
    representation        r   = relu(W_r f + b_r)              (R,)
    binary-like code      ip  = sigmoid(W_c r + b_c)           (L,)
    class probabilities   p   = softmax(W_k ip + b_k)          (K,)

Everything is computed on batches of frame sets ``(B, N, D)``; the single
frame-set entry points wrap a batch of one.
"""

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.special import expit, softmax

from ._validation import check_int, check_vector
from .errors import ContractError, FormatError, NumericError

CHECKPOINT_MAGIC = b"MHM1"
# Pre-activations are clipped here so that float64 sigmoid stays inside (0, 1).
SIGMOID_CLIP = 36.0


@dataclass(frozen=True)
class Architecture:
    feature_dim: int
    embed_dim: int
    repr_dim: int
    code_length: int
    num_classes: int
    n_frames: int

    def __post_init__(self):
        for f in fields(self):
            check_int(getattr(self, f.name), f.name, 1)
        if self.num_classes < 2:
            raise ContractError(f"num_classes must be >= 2, got {self.num_classes}")

    def param_shapes(self):
        d, h, r, l, k, n = (
            self.feature_dim,
            self.embed_dim,
            self.repr_dim,
            self.code_length,
            self.num_classes,
            self.n_frames,
        )
        return {
            "fusion": (n,),
            "embed_w": (h, d),
            "embed_b": (h,),
            "repr_w": (r, h),
            "repr_b": (r,),
            "enc_w": (l, r),
            "enc_b": (l,),
            "cls_w": (k, l),
            "cls_b": (k,),
        }


@dataclass
class ModelParams:
    """Network parameters; weight matrices are stored ``(out, in)``.

    ``cls_w`` is the ``K x L`` softmax-layer weight matrix: row ``k`` connects
    every code bit to class ``k``. Gradients use the same container.
    """

    fusion: np.ndarray
    embed_w: np.ndarray
    embed_b: np.ndarray
    repr_w: np.ndarray
    repr_b: np.ndarray
    enc_w: np.ndarray
    enc_b: np.ndarray
    cls_w: np.ndarray
    cls_b: np.ndarray

    @classmethod
    def names(cls):
        return tuple(f.name for f in fields(cls))

    def arrays(self):
        return [getattr(self, name) for name in self.names()]

    def copy(self):
        return ModelParams(*(a.copy() for a in self.arrays()))

    def architecture(self):
        return Architecture(
            feature_dim=self.embed_w.shape[1],
            embed_dim=self.embed_w.shape[0],
            repr_dim=self.repr_w.shape[0],
            code_length=self.enc_w.shape[0],
            num_classes=self.cls_w.shape[0],
            n_frames=self.fusion.shape[0],
        )

    def check(self, arch):
        for name, shape in arch.param_shapes().items():
            a = getattr(self, name)
            if a.shape != shape:
                raise ContractError(f"parameter {name} has shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise NumericError(f"parameter {name} is not finite")

    def equals(self, other):
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.arrays(), other.arrays())
        )


def init_params(arch, seed):
    """Fusion weights ``1/N``; Glorot-uniform weights; zero biases."""
    rng = np.random.default_rng(seed)
    values = {}
    for name, shape in arch.param_shapes().items():
        if name == "fusion":
            values[name] = np.full(shape, 1.0 / arch.n_frames)
        elif name.endswith("_b"):
            values[name] = np.zeros(shape)
        else:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            values[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(**values)


def fuse(embeddings, fusion_weights):
    """Weighted sum of per-frame embeddings: ``sum_i w_i E[i]``."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    fusion_weights = np.asarray(fusion_weights, dtype=np.float64)
    if embeddings.ndim != 2 or fusion_weights.shape != (embeddings.shape[0],):
        raise ContractError(
            f"cannot fuse embeddings of shape {embeddings.shape} with weights of "
            f"shape {fusion_weights.shape}"
        )
    return fusion_weights @ embeddings


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return expit(np.clip(x, -SIGMOID_CLIP, SIGMOID_CLIP))


def _finite(name, a):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {name} layer")
    return a


def forward_batch(params, X):
    """Run a ``(B, N, D)`` batch of frame sets; returns every intermediate.

    Keys: ``x``, ``embed_pre``, ``embed``, ``fused``, ``repr_pre``, ``repr``,
    ``enc_pre``, ``code``, ``logits``, ``probs``. The training module reuses
    this cache for back-propagation.
    """
    X = np.asarray(X, dtype=np.float64)
    n = params.fusion.shape[0]
    d = params.embed_w.shape[1]
    if X.ndim != 3 or X.shape[1:] != (n, d):
        raise ContractError(f"frame batch has shape {X.shape}, expected (B, {n}, {d})")
    cache = {"x": X}
    cache["embed_pre"] = _finite("embed", X @ params.embed_w.T + params.embed_b)
    cache["embed"] = relu(cache["embed_pre"])
    cache["fused"] = _finite("fusion", np.einsum("n,bnh->bh", params.fusion, cache["embed"]))
    cache["repr_pre"] = _finite("repr", cache["fused"] @ params.repr_w.T + params.repr_b)
    cache["repr"] = relu(cache["repr_pre"])
    cache["enc_pre"] = _finite("encode", cache["repr"] @ params.enc_w.T + params.enc_b)
    cache["code"] = sigmoid(cache["enc_pre"])
    cache["logits"] = _finite("softmax", cache["code"] @ params.cls_w.T + params.cls_b)
    cache["probs"] = softmax(cache["logits"], axis=1)
    return cache


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    embeddings: np.ndarray
    fused: np.ndarray
    representation: np.ndarray
    binary_like: np.ndarray
    class_probs: np.ndarray


def forward(params, frame_set):
    """Forward one frame set (a :class:`FrameSet` or an ``(N, D)`` matrix)."""
    features = getattr(frame_set, "features", frame_set)
    cache = forward_batch(params, np.asarray(features, dtype=np.float64)[None])
    return ForwardTrace(
        embeddings=cache["embed"][0],
        fused=cache["fused"][0],
        representation=cache["repr"][0],
        binary_like=cache["code"][0],
        class_probs=cache["probs"][0],
    )


def predict_class(class_probs):
    """Argmax with ties going to the lowest index."""
    class_probs = check_vector(class_probs, "class_probs")
    if class_probs.size == 0:
        raise ContractError("class_probs is empty")
    return int(np.argmax(class_probs))


def binarize(binary_like):
    """Bit ``i`` is 1 iff ``binary_like[i] > 0.5``. Works on any array shape."""
    binary_like = np.asarray(binary_like, dtype=np.float64)
    if not np.all((binary_like >= 0.0) & (binary_like <= 1.0)):
        raise ContractError("binary-like values must lie in [0, 1]")
    return (binary_like > 0.5).astype(np.uint8)


def save_checkpoint(params, path):
    arch = params.architecture()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<6I",
                arch.feature_dim,
                arch.embed_dim,
                arch.repr_dim,
                arch.code_length,
                arch.num_classes,
                arch.n_frames,
            )
        )
        for a in params.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Return ``(arch, params)``; parameters come back as float64."""
    data = Path(path).read_bytes()
    if len(data) < 28 or data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint (magic {data[:4]!r})")
    try:
        arch = Architecture(*struct.unpack_from("<6I", data, 4))
    except ContractError as exc:
        raise FormatError(f"{path}: bad architecture header: {exc}") from None
    offset = 28
    values = {}
    for name, shape in arch.param_shapes().items():
        count = int(np.prod(shape))
        if offset + 4 * count > len(data):
            raise FormatError(f"{path}: truncated in tensor {name} at offset {offset}")
        values[name] = (
            np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += 4 * count
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after last tensor")
    return arch, ModelParams(**values)
