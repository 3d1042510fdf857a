"""Per-category bit masks derived from the softmax-layer weights.

For class ``k`` the mask row keeps the ``n = max(1, round(r * L))`` code bits
whose softmax weights into class ``k`` have the largest magnitude. Ties go to
the lower bit index, so the selection at a smaller ratio is always a subset of
the selection at a larger one.
"""

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_matrix, check_ratio
from .bits import num_words, pack_rows, unpack_rows
from .errors import ContractError, FormatError

MASK_MAGIC = b"MHK1"


def selected_count(ratio, length):
    """``max(1, round(ratio * length))`` with halves rounded up."""
    # the epsilon absorbs products like 0.3 * 5 landing just below x.5
    return max(1, math.floor(ratio * length + 0.5 + 1e-9))


def category_vector(weight_row, ratio):
    """0/1 row selecting the top-|weight| entries of one softmax weight row."""
    row = np.asarray(weight_row, dtype=np.float64)
    if row.ndim != 1 or row.size == 0:
        raise ContractError(f"weight row must be a non-empty vector, got shape {row.shape}")
    if not np.all(np.isfinite(row)):
        raise ContractError("weight row contains non-finite values")
    ratio = check_ratio(ratio, error=ContractError)
    n = selected_count(ratio, row.size)
    order = np.argsort(-np.abs(row), kind="stable")
    v = np.zeros(row.size, dtype=np.uint8)
    v[order[:n]] = 1
    return v


@dataclass(frozen=True, eq=False)
class CategoryMask:
    ratio: float
    rows: np.ndarray
    selected_count: int

    @property
    def num_classes(self):
        return self.rows.shape[0]

    @property
    def code_length(self):
        return self.rows.shape[1]

    @property
    def words(self):
        return pack_rows(self.rows)

    def equals(self, other):
        return (
            np.float32(self.ratio) == np.float32(other.ratio)
            and self.selected_count == other.selected_count
            and np.array_equal(self.rows, other.rows)
        )


def build_mask(softmax_weights, ratio):
    """Stack :func:`category_vector` over the ``K x L`` softmax weights.

    The softmax bias plays no part.
    """
    W = check_matrix(softmax_weights, "softmax_weights")
    ratio = check_ratio(ratio, error=ContractError)
    rows = np.stack([category_vector(w, ratio) for w in W])
    rows.flags.writeable = False
    return CategoryMask(ratio=ratio, rows=rows, selected_count=selected_count(ratio, W.shape[1]))


def bit_contribution(mask):
    """Number of categories whose mask keeps each bit (column sums)."""
    return mask.rows.sum(axis=0, dtype=np.int64)


def _contribution_path(map_path):
    p = Path(map_path)
    return p.with_name(p.stem + "_contribution" + p.suffix)


def export_bit_map(mask, output_path, contribution_path=None):
    """Write the category-by-bit 0/1 table and the per-bit contribution table.

    The first CSV has a header of bit indices and one row per category. The
    second has, per bit, the contribution ``s``, the mean of ``s`` (which is
    ``K * n / L`` by construction) and ``r * L`` for comparison. The default
    second path is ``<stem>_contribution.csv`` next to the first.
    """
    contribution_path = contribution_path or _contribution_path(output_path)
    length = mask.code_length
    with open(output_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category"] + list(range(length)))
        for k, row in enumerate(mask.rows):
            w.writerow([k] + [int(b) for b in row])
    s = bit_contribution(mask)
    mean_s = repr(mask.num_classes * mask.selected_count / length)
    ratio_times_length = repr(mask.ratio * length)
    with open(contribution_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bit", "contribution", "mean_contribution", "ratio_times_length"])
        for i, value in enumerate(s):
            w.writerow([i, int(value), mean_s, ratio_times_length])
    return Path(output_path), Path(contribution_path)


def read_bit_map(path):
    """Parse the category-by-bit CSV back into a ``(K, L)`` uint8 matrix."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["category"]:
        raise FormatError(f"{path}: missing header")
    length = len(rows[0]) - 1
    out = []
    for i, row in enumerate(rows[1:]):
        if len(row) != length + 1:
            raise FormatError(f"{path}: row {i + 1} has {len(row) - 1} bits, expected {length}")
        out.append([int(x) for x in row[1:]])
    return np.array(out, dtype=np.uint8).reshape(-1, length)


def write_mask_block(fh, mask):
    fh.write(pack_rows(mask.rows).astype("<u8").tobytes())


def read_mask_block(data, offset, num_classes, length, ratio, path):
    nbytes = num_classes * num_words(length) * 8
    if offset + nbytes > len(data):
        raise FormatError(f"{path}: truncated inside mask rows at offset {offset}")
    words = np.frombuffer(data, dtype="<u8", count=nbytes // 8, offset=offset)
    rows = unpack_rows(words.reshape(num_classes, num_words(length)), length)
    if np.any(pack_rows(rows) != words.reshape(num_classes, -1)):
        raise FormatError(f"{path}: mask rows have padding bits set")
    counts = rows.sum(axis=1)
    n = selected_count(ratio, length)
    if num_classes and np.any(counts != n):
        raise FormatError(
            f"{path}: mask rows keep {sorted(set(counts.tolist()))} bits, ratio {ratio} implies {n}"
        )
    rows.flags.writeable = False
    return CategoryMask(ratio=ratio, rows=rows, selected_count=n), offset + nbytes


def stored_ratio(value):
    """Ratio as read back from a float32 field: the shortest decimal that round-trips."""
    return float(str(np.float32(value)))


def save_mask(mask, path):
    with open(path, "wb") as fh:
        fh.write(MASK_MAGIC)
        fh.write(struct.pack("<IIf", mask.num_classes, mask.code_length, mask.ratio))
        write_mask_block(fh, mask)


def load_mask(path):
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MASK_MAGIC:
        raise FormatError(f"{path}: not a mask file (magic {data[:4]!r})")
    k, length, ratio = struct.unpack_from("<IIf", data, 4)
    ratio = stored_ratio(ratio)
    if k == 0 or length == 0 or not 0.0 < ratio <= 1.0:
        raise FormatError(f"{path}: bad header K={k} L={length} ratio={ratio}")
    mask, end = read_mask_block(data, 16, k, length, ratio, path)
    if end != len(data):
        raise FormatError(f"{path}: {len(data) - end} trailing bytes")
    return mask
