"""Bit-packed code database searched by category-masked Hamming distance.

The distance between query ``q`` and entry ``d`` under mask row ``m`` is
``popcount((q XOR d) AND m)``, evaluated one 64-bit word at a time. The mask row
is picked by the class the network predicts for the query.
"""

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bits import num_words, pack_rows, popcount, unpack_rows
from .dataset import sample_frame_set, stack_frame_sets, video_rng
from .errors import ContractError, FormatError
from .mask import CategoryMask, read_mask_block, stored_ratio, write_mask_block
from .model import binarize, forward_batch

INDEX_MAGIC = b"MHI1"


@dataclass(frozen=True, eq=False)
class PackedCode:
    words: np.ndarray
    length: int


def pack(code):
    """Pack a 0/1 sequence of length ``L``."""
    code = np.asarray(code, dtype=np.uint8).reshape(1, -1)
    return PackedCode(words=pack_rows(code)[0], length=code.shape[1])


def unpack(packed):
    return unpack_rows(packed.words.reshape(1, -1), packed.length)[0]


def masked_hamming(q, d, mask_row):
    """``sum_i ((q[i] XOR d[i]) AND mask_row[i])`` on packed codes."""
    if not q.length == d.length == mask_row.length:
        raise ContractError(
            f"code lengths differ: query {q.length}, entry {d.length}, mask {mask_row.length}"
        )
    return int(popcount((q.words ^ d.words) & mask_row.words))


@dataclass(frozen=True, eq=False)
class PackedIndex:
    code_length: int
    num_classes: int
    video_ids: np.ndarray
    labels: np.ndarray
    codes: np.ndarray
    mask: CategoryMask

    def __post_init__(self):
        n = self.codes.shape[0]
        if self.codes.shape != (n, num_words(self.code_length)):
            raise ContractError(f"codes have shape {self.codes.shape} for L={self.code_length}")
        if self.video_ids.shape != (n,) or self.labels.shape != (n,):
            raise ContractError("video_ids and labels must have one entry per code")
        if (self.mask.num_classes, self.mask.code_length) != (self.num_classes, self.code_length):
            raise ContractError(
                f"mask is {self.mask.num_classes}x{self.mask.code_length}, index expects "
                f"{self.num_classes}x{self.code_length}"
            )
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.codes.shape[0]

    def with_mask(self, mask):
        return PackedIndex(
            code_length=self.code_length,
            num_classes=self.num_classes,
            video_ids=self.video_ids,
            labels=self.labels,
            codes=self.codes,
            mask=mask,
        )

    def entry_code(self, i):
        return PackedCode(words=self.codes[i], length=self.code_length)

    def to_bytes(self):
        buf = io.BytesIO()
        _write_index(buf, self)
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class RankedResult:
    """Entries in ascending distance; equal distances keep insertion order."""

    video_ids: np.ndarray
    labels: np.ndarray
    distances: np.ndarray
    predicted_class: int

    def __len__(self):
        return len(self.distances)

    def __iter__(self):
        for vid, label, dist in zip(self.video_ids, self.labels, self.distances):
            yield int(vid), int(label), int(dist)


def encode(params, frame_batch):
    """Forward a ``(B, N, D)`` batch; returns ``(bits (B, L), predicted classes (B,))``."""
    cache = forward_batch(params, frame_batch)
    # argmax already breaks ties toward the lower index
    return binarize(cache["code"]), np.argmax(cache["probs"], axis=1)


def sample_frame_sets(dataset, n_frames, seed):
    """One frame set per video, seeded by ``(seed, video id)``."""
    return [sample_frame_set(v, n_frames, video_rng(seed, v.id)) for v in dataset.videos]


def build_index(params, train_dataset, mask, n_frames, seed):
    """Encode one sampled frame set per video and store codes in dataset order."""
    arch = params.architecture()
    if n_frames != arch.n_frames:
        raise ContractError(f"n_frames {n_frames} != model n_frames {arch.n_frames}")
    if (mask.num_classes, mask.code_length) != (arch.num_classes, arch.code_length):
        raise ContractError(
            f"mask is {mask.num_classes}x{mask.code_length}, model is "
            f"{arch.num_classes}x{arch.code_length}"
        )
    frame_sets = sample_frame_sets(train_dataset, n_frames, seed)
    bits, _ = encode(params, stack_frame_sets(frame_sets))
    return PackedIndex(
        code_length=arch.code_length,
        num_classes=arch.num_classes,
        video_ids=train_dataset.ids.astype(np.uint32),
        labels=train_dataset.labels.astype(np.uint32),
        codes=pack_rows(bits),
        mask=mask,
    )


def distance_matrix(index, query_words, mask_classes):
    """``(Q, n)`` masked distances for packed queries and their mask rows."""
    query_words = np.asarray(query_words, dtype=np.uint64).reshape(-1, index.codes.shape[1])
    mask_words = index.mask.words[np.asarray(mask_classes, dtype=np.int64)]
    diff = index.codes[None, :, :] ^ query_words[:, None, :]
    return popcount(diff & mask_words[:, None, :])


def search(index, query_words, mask_classes, top_n):
    """Rank the index for packed queries; returns a list of :class:`RankedResult`."""
    if top_n < 1:
        raise ContractError(f"top_n must be >= 1, got {top_n}")
    mask_classes = np.asarray(mask_classes, dtype=np.int64).reshape(-1)
    if np.any((mask_classes < 0) | (mask_classes >= index.num_classes)):
        raise ContractError("mask class out of range")
    dist = distance_matrix(index, query_words, mask_classes)
    order = np.argsort(dist, axis=1, kind="stable")[:, :top_n]
    return [
        RankedResult(
            video_ids=index.video_ids[o],
            labels=index.labels[o],
            distances=d[o],
            predicted_class=int(k),
        )
        for o, d, k in zip(order, dist, mask_classes)
    ]


def query_batch(index, params, frame_batch, top_n, mask_classes=None):
    """Rank the index for each frame set of a ``(B, N, D)`` batch.

    The mask row is the predicted class unless ``mask_classes`` overrides it
    (ground-truth masking, for diagnostics).
    """
    if params.architecture().code_length != index.code_length:
        raise ContractError("model code length does not match the index")
    bits, predicted = encode(params, frame_batch)
    results = search(
        index, pack_rows(bits), predicted if mask_classes is None else mask_classes, top_n
    )
    if mask_classes is not None:
        results = [
            RankedResult(r.video_ids, r.labels, r.distances, int(k))
            for r, k in zip(results, predicted)
        ]
    return results


def query(index, params, frame_set, top_n, mask_class=None):
    """Rank the index against one frame set."""
    features = np.asarray(getattr(frame_set, "features", frame_set), dtype=np.float64)
    classes = None if mask_class is None else [mask_class]
    return query_batch(index, params, features[None], top_n, classes)[0]


def _write_index(fh, index):
    fh.write(INDEX_MAGIC)
    fh.write(
        struct.pack("<IIIf", index.code_length, index.num_classes, len(index), index.mask.ratio)
    )
    write_mask_block(fh, index.mask)
    record = np.dtype([("id", "<u4"), ("label", "<u4"), ("words", "<u8", (index.codes.shape[1],))])
    entries = np.zeros(len(index), dtype=record)
    entries["id"] = index.video_ids
    entries["label"] = index.labels
    entries["words"] = index.codes
    fh.write(entries.tobytes())


def save_index(index, path):
    with open(path, "wb") as fh:
        _write_index(fh, index)


def load_index(path):
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != INDEX_MAGIC:
        raise FormatError(f"{path}: not an index file (magic {data[:4]!r})")
    length, k, n, ratio = struct.unpack_from("<IIIf", data, 4)
    ratio = stored_ratio(ratio)
    if length == 0 or k == 0 or not 0.0 < ratio <= 1.0:
        raise FormatError(f"{path}: bad header L={length} K={k} ratio={ratio}")
    mask, offset = read_mask_block(data, 20, k, length, ratio, path)
    width = num_words(length)
    record = np.dtype([("id", "<u4"), ("label", "<u4"), ("words", "<u8", (width,))])
    needed = offset + n * record.itemsize
    if len(data) < needed:
        entry = (len(data) - offset) // record.itemsize
        raise FormatError(
            f"{path}: truncated in entry {entry} of {n} at offset "
            f"{offset + entry * record.itemsize} (file has {len(data)} bytes, needs {needed})"
        )
    if len(data) > needed:
        raise FormatError(f"{path}: {len(data) - needed} trailing bytes")
    entries = np.frombuffer(data, dtype=record, count=n, offset=offset)
    codes = np.ascontiguousarray(entries["words"], dtype=np.uint64).reshape(n, width)
    if np.any(pack_rows(unpack_rows(codes, length)) != codes):
        raise FormatError(f"{path}: stored codes have padding bits set")
    labels = entries["label"].astype(np.uint32)
    if n and labels.max() >= k:
        bad = int(np.argmax(labels >= k))
        raise FormatError(f"{path}: entry {bad} has label {labels[bad]} >= K={k}")
    return PackedIndex(
        code_length=length,
        num_classes=k,
        video_ids=entries["id"].astype(np.uint32),
        labels=labels,
        codes=codes,
        mask=mask,
    )
