"""Command line: ``maskhash <command> [options]``.

Commands run the pipeline in stages, exchanging files inside ``--out``::

    gen -> train -> mask -> index -> query / eval / sweep

plus ``gradcheck`` and ``pipeline`` (all stages in one go). Errors print one
line ``error[<kind>]: <message>`` to stderr and exit with 2 (config),
3 (data or file format) or 4 (numeric).
"""

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluation
from .config import RunConfig
from .dataset import Video, sample_frame_set, sample_intra_pair, save_dataset, video_rng
from .errors import ConfigError, ContractError, MaskHashError
from .index import build_index, load_index, query, save_index
from .mask import build_mask, export_bit_map, load_mask, save_mask
from .model import Architecture, init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, grad_check, kink_distance, train, write_loss_history

FEATURES = "features.mhf"
LABELS = "labels.txt"
CHECKPOINT = "model.mhm"
LOSS = "loss.csv"
MASK = "mask.mhk"
BIT_MAP = "bit_map.csv"
BIT_CONTRIBUTION = "bit_contribution.csv"
INDEX = "index.mhi"
QUERY = "query.csv"
MAP_REPORT = "map_report.csv"
PRECISION_AT_N = "precision_at_n.csv"
PR_CURVE = "pr_curve.csv"
RATIO_SWEEP = "ratio_sweep.csv"
GRADCHECK_LIMIT = 1e-3


def _config(args, required=True):
    if args.config:
        return RunConfig.from_file(args.config, seed=args.seed)
    if required:
        raise ConfigError("--config is required for this command")
    return RunConfig.empty(seed=args.seed)


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _in(args, attr, default_name):
    value = getattr(args, attr, None)
    return Path(value) if value else Path(args.out) / default_name


def _say(msg):
    print(msg)


def cmd_gen(args):
    cfg = _config(args)
    dataset = cfg.synthetic_dataset()
    out = _out(args)
    save_dataset(dataset, out / FEATURES, out / LABELS)
    _say(f"wrote {len(dataset)} videos ({dataset.num_classes} classes) to {out}")


def cmd_train(args):
    cfg = _config(args)
    train_set, _ = cfg.datasets()
    arch = cfg.architecture(train_set.feature_dim, train_set.num_classes)
    params, history = train(train_set, arch, cfg.train_config())
    out = _out(args)
    save_checkpoint(params, out / CHECKPOINT)
    write_loss_history(history, out / LOSS)
    _say(
        f"trained {len(history)} iterations: loss {history[0].total:.4f} -> "
        f"{history[-1].total:.4f}; checkpoint {out / CHECKPOINT}"
    )


def _ratio(args, cfg):
    r = args.ratio if args.ratio is not None else cfg.get("ratio", 1.0)
    if not 0.0 < r <= 1.0:
        raise ConfigError(f"ratio must lie in (0, 1], got {r}")
    return r


def cmd_mask(args):
    cfg = _config(args, required=False)
    ratio = _ratio(args, cfg)
    _, params = load_checkpoint(_in(args, "checkpoint", CHECKPOINT))
    mask = build_mask(params.cls_w, ratio)
    out = _out(args)
    save_mask(mask, out / MASK)
    export_bit_map(mask, out / BIT_MAP, out / BIT_CONTRIBUTION)
    _say(f"mask ratio {ratio}: {mask.selected_count}/{mask.code_length} bits per class")


def _check_dataset(dataset, arch):
    if dataset.feature_dim != arch.feature_dim:
        raise ContractError(
            f"dataset feature_dim {dataset.feature_dim} does not match model {arch.feature_dim}"
        )


def cmd_index(args):
    cfg = _config(args)
    arch, params = load_checkpoint(_in(args, "checkpoint", CHECKPOINT))
    mask = load_mask(_in(args, "mask", MASK))
    train_set, _ = cfg.datasets()
    _check_dataset(train_set, arch)
    index = build_index(params, train_set, mask, arch.n_frames, cfg.seed)
    out = _out(args)
    save_index(index, out / INDEX)
    _say(f"indexed {len(index)} videos at {arch.code_length} bits, ratio {mask.ratio}")


def _load_retrieval(args):
    arch, params = load_checkpoint(_in(args, "checkpoint", CHECKPOINT))
    index = load_index(_in(args, "index", INDEX))
    if (index.code_length, index.num_classes) != (arch.code_length, arch.num_classes):
        raise ContractError(
            f"index is {index.num_classes}x{index.code_length}, model is "
            f"{arch.num_classes}x{arch.code_length}"
        )
    return arch, params, index


def cmd_query(args):
    cfg = _config(args)
    arch, params, index = _load_retrieval(args)
    _, query_set = cfg.datasets()
    _check_dataset(query_set, arch)
    try:
        video = query_set.by_id(args.video_id)
    except KeyError:
        raise ContractError(f"unknown query video id {args.video_id}") from None
    frame_set = sample_frame_set(video, arch.n_frames, video_rng(cfg.seed, video.id))
    mask_class = video.label if args.ground_truth_mask else None
    result = query(index, params, frame_set, args.top_n, mask_class=mask_class)
    out = _out(args)
    with open(out / QUERY, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "video_id", "label", "distance"])
        for rank, (vid, label, dist) in enumerate(result, start=1):
            w.writerow([rank, vid, label, dist])
    _say(
        f"query video {video.id} (label {video.label}, predicted {result.predicted_class}): "
        f"{len(result)} results in {out / QUERY}"
    )


def _grid(cfg, args):
    ratios = list(args.ratios) if getattr(args, "ratios", None) else list(cfg.ratios())
    if 1.0 not in ratios:
        print("warning: ratio grid lacks 1.0; appending it", file=sys.stderr)
        ratios.append(1.0)
    return ratios


def cmd_eval(args):
    cfg = _config(args)
    arch, params, index = _load_retrieval(args)
    _, query_set = cfg.datasets()
    _check_dataset(query_set, arch)
    if len(query_set) == 0:
        raise ContractError("query set is empty")
    seed = cfg.seed
    rep = evaluation.map_hamming(
        index, params, query_set, None, arch.n_frames, seed,
        n=cfg.get("map_top_n", evaluation.DEFAULT_MAP_AT_N),
        max_n=cfg.get("max_n", evaluation.DEFAULT_MAX_N),
    )
    sweep = evaluation.sweep_index(index, params, query_set, _grid(cfg, args), arch.n_frames, seed)
    out = _out(args)
    evaluation.write_map_report(rep, out / MAP_REPORT)
    evaluation.write_precision_curve(rep.precision_at, out / PRECISION_AT_N)
    evaluation.write_pr_curve(rep.pr_curve, out / PR_CURVE)
    evaluation.write_sweep(sweep, out / RATIO_SWEEP)
    _say(
        f"mAP {rep.map:.4f} (ratio {index.mask.ratio}) over {rep.num_queries} queries, "
        f"{rep.num_queries_excluded} excluded"
    )


def cmd_sweep(args):
    cfg = _config(args)
    arch, params = load_checkpoint(_in(args, "checkpoint", CHECKPOINT))
    train_set, query_set = cfg.datasets()
    _check_dataset(train_set, arch)
    result = evaluation.ratio_sweep(params, train_set, query_set, _grid(cfg, args), arch, cfg.seed)
    out = _out(args)
    evaluation.write_sweep(result, out / RATIO_SWEEP)
    for r, m in result.rows:
        flag = " *" if r == result.best_ratio else ""
        _say(f"ratio {r:.2f}  mAP {m:.4f}{flag}")
    _say(f"interior ratio beats unmasked: {'yes' if result.interior_improves else 'no'}")


def gradcheck_instances(arch, config, instances, seed, kink_tol=1e-3):
    """Yield ``(params, pair, config)`` random small problems; margin alternates 0 and 2.

    Draws that put a ReLU or the hinge within ``kink_tol`` of its kink are
    redrawn, since finite differences are meaningless there.
    """
    rng = np.random.default_rng(seed)
    i = 0
    while i < instances:
        params = init_params(arch, int(rng.integers(2**31)))
        for a in params.arrays():
            a += rng.normal(0.0, 0.3, size=a.shape)
        frames = rng.normal(size=(2 * arch.n_frames + 4, arch.feature_dim)).astype(np.float32)
        video = Video(id=i, label=int(rng.integers(arch.num_classes)), frames=frames)
        pair = sample_intra_pair(video, arch.n_frames, rng)
        cfg = TrainConfig(alpha=config.alpha, beta=config.beta, margin=(0.0, 2.0)[i % 2])
        if kink_distance(params, pair, cfg) < kink_tol:
            continue
        yield params, pair, cfg
        i += 1


def cmd_gradcheck(args):
    cfg = _config(args, required=False)
    arch = Architecture(
        feature_dim=cfg.get("feature_dim", 8),
        embed_dim=cfg.get("embed_dim", 16),
        repr_dim=cfg.get("repr_dim", 8),
        code_length=cfg.get("code_length", 8),
        num_classes=cfg.get("num_classes", 4),
        n_frames=cfg.get("n_frames", 3),
    )
    start = time.perf_counter()
    worst = max(
        grad_check(p, pair, c, epsilon=args.epsilon)
        for p, pair, c in gradcheck_instances(arch, cfg.train_config(), args.instances, cfg.seed)
    )
    _say(f"max_relative_error={worst:.3e} instances={args.instances} "
         f"seconds={time.perf_counter() - start:.2f}")
    if worst > GRADCHECK_LIMIT:
        print(f"error[numeric]: gradient check failed ({worst:.3e} > {GRADCHECK_LIMIT})",
              file=sys.stderr)
        return 4
    return 0


def cmd_pipeline(args):
    cfg = _config(args)
    if cfg.source() == "synthetic":
        cmd_gen(args)
    cmd_train(args)
    cmd_mask(args)
    cmd_index(args)
    cmd_eval(args)


def _ratio_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="maskhash", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--out", default=".", help="directory for inputs and outputs")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--threads", type=int, default=0,
                        help="worker threads (0 = auto); computation is single-threaded")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    add("gen", cmd_gen, "write a synthetic dataset")
    add("train", cmd_train, "train and write checkpoint + loss CSV")
    p = add("mask", cmd_mask, "build a category mask and its analysis CSVs")
    p.add_argument("--checkpoint")
    p.add_argument("--ratio", type=float)
    p = add("index", cmd_index, "encode the database videos")
    p.add_argument("--checkpoint")
    p.add_argument("--mask")
    p = add("query", cmd_query, "rank the index for one query video")
    p.add_argument("--checkpoint")
    p.add_argument("--index")
    p.add_argument("--video-id", type=int, required=True)
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--ground-truth-mask", action="store_true",
                   help="pick the mask row by true label (diagnostic)")
    p = add("eval", cmd_eval, "write mAP, precision@N, PR and ratio-sweep CSVs")
    p.add_argument("--checkpoint")
    p.add_argument("--index")
    p.add_argument("--ratios", type=_ratio_list)
    p = add("sweep", cmd_sweep, "mAP for each mask ratio")
    p.add_argument("--checkpoint")
    p.add_argument("--ratios", type=_ratio_list)
    p = add("gradcheck", cmd_gradcheck, "compare analytic and numeric gradients")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p = add("pipeline", cmd_pipeline, "gen (if synthetic), train, mask, index, eval")
    p.add_argument("--ratio", type=float)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 0:
        parser.error("--threads must be >= 0")
    if getattr(args, "top_n", 1) < 1:
        parser.error("--top-n must be >= 1")
    try:
        return args.func(args) or 0
    except MaskHashError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error[{exc.kind}]: {msg}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error[io]: {exc}".replace("\n", " "), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
