"""Retrieval metrics over masked Hamming rankings.

Relevance is label equality between query and database entry. Rankings are
the full stable ordering produced by :mod:`maskhash.index`; equal distances
stay in insertion order and no tie averaging is applied. Queries whose label
never occurs in the database are left out of every average and counted in
``num_queries_excluded``.
"""

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._validation import check_ratio
from .bits import pack_rows
from .dataset import stack_frame_sets
from .errors import ConfigError, ContractError
from .index import build_index, encode, sample_frame_sets, search
from .mask import build_mask

PR_LEVELS = np.linspace(0.0, 1.0, 101)
DEFAULT_MAX_N = 60
DEFAULT_MAP_AT_N = 100


def _precision_sum(hit_flags, denominator):
    """``sum(hits(<=p) / p over hit ranks p) / denominator``, correctly rounded.

    Summed over the common denominator ``lcm(ranks)`` in integers, so the
    result does not depend on floating-point summation order.
    """
    ranks = (np.flatnonzero(hit_flags) + 1).tolist()
    if not ranks:
        return 0.0
    common = math.lcm(*ranks)
    numerator = sum(h * (common // p) for h, p in enumerate(ranks, start=1))
    return float(Fraction(numerator, common * int(denominator)))


def average_precision(relevance, total_relevant):
    """AP of one ranking: ``(1/R) * sum over hits at rank p of hits(<=p) / p``.

    Returns ``None`` when ``total_relevant`` is 0 (the query is excluded).
    """
    if total_relevant <= 0:
        return None
    return _precision_sum(np.asarray(relevance).astype(bool), total_relevant)


def average_precision_at_n(relevance, total_relevant, n):
    """AP of the first ``n`` ranks with denominator ``min(total_relevant, n)``."""
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    if total_relevant <= 0:
        return None
    return _precision_sum(np.asarray(relevance)[:n].astype(bool), min(total_relevant, n))


@dataclass
class Judgments:
    """Relevance flags of every query's full ranking, in query order."""

    relevance: np.ndarray
    total_relevant: np.ndarray
    predicted: np.ndarray = field(default=None)

    @property
    def included(self):
        return self.total_relevant > 0

    @property
    def num_excluded(self):
        return int(np.sum(~self.included))


@dataclass
class MetricReport:
    map: float
    map_at_n: float
    n: int
    precision_at: list
    pr_curve: list
    num_queries: int
    num_queries_excluded: int


def judge_results(results, query_labels, db_labels):
    relevance = np.stack([r.labels == y for r, y in zip(results, query_labels)]).astype(np.uint8)
    totals = np.array([int(np.sum(db_labels == y)) for y in query_labels], dtype=np.int64)
    predicted = np.array([r.predicted_class for r in results], dtype=np.int64)
    return Judgments(relevance=relevance, total_relevant=totals, predicted=predicted)


def _encode_queries(params, query_dataset, n_frames, seed):
    if len(query_dataset) == 0:
        raise ContractError("query set is empty")
    frame_sets = sample_frame_sets(query_dataset, n_frames, seed)
    bits, predicted = encode(params, stack_frame_sets(frame_sets))
    return pack_rows(bits), predicted


def judge_queries(index, params, query_dataset, n_frames, seed, mask=None, ground_truth_mask=False):
    """Rank the whole index for one frame set per query video.

    Each query's frame set is drawn with the same ``(seed, video id)`` rule
    used at index time. ``mask`` replaces the index's mask when given.
    ``ground_truth_mask`` selects mask rows by the true label (diagnostic only).
    """
    if mask is not None:
        index = index.with_mask(mask)
    words, predicted = _encode_queries(params, query_dataset, n_frames, seed)
    classes = query_dataset.labels if ground_truth_mask else predicted
    results = search(index, words, classes, len(index))
    judged = judge_results(results, query_dataset.labels, index.labels)
    judged.predicted = predicted
    return judged


def mean_ap(judged):
    aps = [
        average_precision(r, t)
        for r, t in zip(judged.relevance, judged.total_relevant)
        if t > 0
    ]
    return math.fsum(aps) / len(aps) if aps else 0.0


def mean_ap_at_n(judged, n):
    aps = [
        average_precision_at_n(r, t, n)
        for r, t in zip(judged.relevance, judged.total_relevant)
        if t > 0
    ]
    return math.fsum(aps) / len(aps) if aps else 0.0


def precision_at_n_curve(judged, max_n=DEFAULT_MAX_N):
    """``[(n, mean precision of the top n)]`` for ``n = 1..max_n``."""
    if max_n < 1:
        raise ContractError(f"max_n must be >= 1, got {max_n}")
    rel = judged.relevance[judged.included].astype(np.int64)
    if rel.shape[0] == 0:
        return [(n, 0.0) for n in range(1, max_n + 1)]
    hits = np.cumsum(rel[:, :max_n], axis=1)
    if hits.shape[1] < max_n:
        pad = np.repeat(hits[:, -1:], max_n - hits.shape[1], axis=1)
        hits = np.concatenate([hits, pad], axis=1)
    ns = np.arange(1, max_n + 1)
    return [(int(n), float(p)) for n, p in zip(ns, (hits / ns).mean(axis=0))]


def interpolated_pr_curve(judged):
    """Mean interpolated precision at recall levels 0, 0.01, ..., 1.

    Interpolated precision at level ``rho`` is the highest precision at any
    rank whose recall is at least ``rho``.
    """
    keep = judged.included
    rel = judged.relevance[keep].astype(np.int64)
    totals = judged.total_relevant[keep]
    if rel.shape[0] == 0:
        return [(float(r), 0.0) for r in PR_LEVELS]
    curves = []
    ranks = np.arange(1, rel.shape[1] + 1)
    for row, total in zip(rel, totals):
        hits = np.cumsum(row)
        precision = hits / ranks
        recall = hits / total
        # best precision at or after each rank, then look up the first rank reaching each level
        best_after = np.maximum.accumulate(precision[::-1])[::-1]
        first = np.searchsorted(recall, PR_LEVELS - 1e-12, side="left")
        curves.append(np.where(first < len(row), best_after[np.minimum(first, len(row) - 1)], 0.0))
    mean = np.mean(curves, axis=0)
    return [(float(r), float(p)) for r, p in zip(PR_LEVELS, mean)]


def report(judged, n=DEFAULT_MAP_AT_N, max_n=DEFAULT_MAX_N):
    return MetricReport(
        map=mean_ap(judged),
        map_at_n=mean_ap_at_n(judged, n),
        n=n,
        precision_at=precision_at_n_curve(judged, max_n),
        pr_curve=interpolated_pr_curve(judged),
        num_queries=len(judged.total_relevant),
        num_queries_excluded=judged.num_excluded,
    )


def map_hamming(index, params, query_dataset, mask, n_frames, seed, n=DEFAULT_MAP_AT_N,
                max_n=DEFAULT_MAX_N):
    """Full :class:`MetricReport` for a query set, mAP over the full Hamming ranking."""
    judged = judge_queries(index, params, query_dataset, n_frames, seed, mask=mask)
    return report(judged, n=n, max_n=max_n)


def map_at_n(index, params, query_dataset, mask, n_frames, seed, n):
    judged = judge_queries(index, params, query_dataset, n_frames, seed, mask=mask)
    return mean_ap_at_n(judged, n)


def precision_curve(index, params, query_dataset, mask, n_frames, seed, max_n=DEFAULT_MAX_N):
    judged = judge_queries(index, params, query_dataset, n_frames, seed, mask=mask)
    return precision_at_n_curve(judged, max_n)


def pr_curve(index, params, query_dataset, mask, n_frames, seed):
    judged = judge_queries(index, params, query_dataset, n_frames, seed, mask=mask)
    return interpolated_pr_curve(judged)


@dataclass
class SweepResult:
    rows: list
    best_ratio: float
    best_map: float
    unmasked_map: float

    @property
    def interior_improves(self):
        """True when some ratio below 1.0 beats the unmasked mAP strictly."""
        return any(m > self.unmasked_map for r, m in self.rows if r < 1.0)


def _check_grid(ratios):
    ratios = [check_ratio(r, error=ConfigError) for r in ratios]
    if not ratios:
        raise ConfigError("ratio grid is empty")
    if 1.0 not in ratios:
        raise ConfigError("ratio grid must include 1.0")
    return ratios


def sweep_index(index, params, query_dataset, ratios, n_frames, seed):
    """Ratio sweep reusing the codes already stored in ``index``.

    Codes do not depend on the mask, so only the mask rows change per ratio.
    """
    ratios = _check_grid(ratios)
    words, predicted = _encode_queries(params, query_dataset, n_frames, seed)
    rows = []
    for r in ratios:
        masked = index.with_mask(build_mask(params.cls_w, r))
        results = search(masked, words, predicted, len(masked))
        rows.append((r, mean_ap(judge_results(results, query_dataset.labels, index.labels))))
    best = max(range(len(rows)), key=lambda i: (rows[i][1], -i))
    unmasked = next(m for r, m in rows if r == 1.0)
    return SweepResult(rows=rows, best_ratio=rows[best][0], best_map=rows[best][1],
                       unmasked_map=unmasked)


def ratio_sweep(params, train_dataset, query_dataset, ratios, arch, seed):
    """mAP for one mask per ratio, all from the same trained parameters.

    The grid must contain 1.0. The best ratio is the first one reaching the
    highest mAP in grid order.
    """
    ratios = _check_grid(ratios)
    index = build_index(params, train_dataset, build_mask(params.cls_w, 1.0), arch.n_frames, seed)
    return sweep_index(index, params, query_dataset, ratios, arch.n_frames, seed)


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_map_report(rep, path):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["map", repr(rep.map)])
        w.writerow([f"map_at_{rep.n}", repr(rep.map_at_n)])
        w.writerow(["num_queries", rep.num_queries])
        w.writerow(["num_queries_excluded", rep.num_queries_excluded])


def write_precision_curve(curve, path):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["n", "precision"])
        for n, p in curve:
            w.writerow([n, repr(p)])


def write_pr_curve(curve, path):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["recall", "precision"])
        for r, p in curve:
            w.writerow([f"{r:.2f}", repr(p)])


def write_sweep(result, path):
    """One row per ratio; ``best`` flags the argmax, ``beats_unmasked`` a strict gain over 1.0."""
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["ratio", "map", "best", "beats_unmasked"])
        best_seen = False
        for r, m in result.rows:
            is_best = not best_seen and r == result.best_ratio and m == result.best_map
            best_seen = best_seen or is_best
            w.writerow([repr(r), repr(m), int(is_best), int(r < 1.0 and m > result.unmasked_map)])
