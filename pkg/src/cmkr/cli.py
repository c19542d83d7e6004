"""Command-line entry point: ``cmkr {synth,rerank,eval,textiou,jrm-check}``.

Exit status: 0 on success, 1 for runtime/data errors, 2 for usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .distance import load_dist, save_dist
from .evaluation import (ProtocolError, evaluate_block, grid_search, multi_trial_eval,
                         rank, raw_distance, sample_gallery_single_shot, write_rank_list)
from .jrm import invariant_report
from .rerank import ConfigError, RerankConfig, cmkr_pipeline
from .store import (DatasetError, load_descriptions, load_embeddings, save_descriptions,
                    save_embeddings)
from .synth import SynthConfig, generate
from .textiou import ColorLexicon, extract_colors, iou_matrix, normalize_targets


class UsageError(Exception):
    pass


def read_kv_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _digest(path) -> dict:
    files = [path] if os.path.isfile(path) else [
        os.path.join(path, name) for name in sorted(os.listdir(path))
        if os.path.isfile(os.path.join(path, name))]
    out = {}
    for f in files:
        with open(f, "rb") as fh:
            out[f] = hashlib.sha256(fh.read()).hexdigest()
    return out


def _manifest(command, config, inputs, started) -> dict:
    digests = {}
    for p in inputs:
        if p:
            digests.update(_digest(p))
    return {
        "command": command,
        "config": config,
        "inputs": digests,
        "version": __version__,
        "duration_s": round(time.time() - started, 6),
    }


def _emit(doc, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(doc) + "\n")
    stream.flush()


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {value!r}")


def _cast(kind, key, value):
    try:
        return kind(value)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {value!r}") from None


def _rerank_config(args) -> RerankConfig:
    values = read_kv_config(args.config) if getattr(args, "config", None) else {}
    for key in ("k1", "k2", "k3", "lambda_jaccard", "strategy",
                "use_neighbor_expansion", "use_ma_lqe", "gaussian_weights"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    kwargs = {}
    for key, value in values.items():
        if key in ("k1", "k2", "k3"):
            kwargs[key] = _cast(int, key, value)
        elif key == "lambda_jaccard":
            kwargs[key] = _cast(float, key, value)
        elif key == "strategy":
            kwargs[key] = str(value)
        elif key in ("use_neighbor_expansion", "use_ma_lqe", "gaussian_weights"):
            kwargs[key] = _parse_bool(value)
        elif key not in ("normalize", "threads"):
            raise UsageError(f"unknown re-ranking option {key!r}")
    return RerankConfig(**kwargs)


def _add_rerank_flags(p):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--strategy", choices=("baseline", "constrained", "divided", "extended"))
    p.add_argument("--k1", type=int)
    p.add_argument("--k2", type=int)
    p.add_argument("--k3", type=int)
    p.add_argument("--lambda-jaccard", dest="lambda_jaccard", type=float)
    p.add_argument("--no-expansion", dest="use_neighbor_expansion", action="store_const", const=False)
    p.add_argument("--ma-lqe", dest="use_ma_lqe", action="store_const", const=True)
    p.add_argument("--no-ma-lqe", dest="use_ma_lqe", action="store_const", const=False)
    p.add_argument("--no-gaussian", dest="gaussian_weights", action="store_const", const=False,
                   help="unit neighbor weights instead of exp(-d)")
    p.add_argument("--no-normalize", dest="normalize", action="store_false",
                   help="skip L2 normalization of features")
    p.add_argument("--threads", type=int, default=1)


# -- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    started = time.time()
    values = read_kv_config(args.config) if args.config else {}
    for key in ("n_ids", "per_modality", "dim", "modality_offset", "intra_noise",
                "n_cameras", "palette_size", "seed"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    try:
        cfg = SynthConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    ds = generate(cfg)
    save_embeddings(ds.visible, os.path.join(args.out, "visible"))
    save_embeddings(ds.infrared, os.path.join(args.out, "infrared"))
    save_descriptions(ds.descriptions, os.path.join(args.out, "descriptions.tsv"))
    with open(os.path.join(args.out, "ground_truth.json"), "w", encoding="utf-8") as fh:
        json.dump(ds.ground_truth, fh)
        fh.write("\n")
    manifest = _manifest("synth", asdict(cfg), [args.config], started)
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh)
        fh.write("\n")
    _emit(manifest)
    return 0


def cmd_rerank(args) -> int:
    started = time.time()
    cfg = _rerank_config(args)
    query, gallery = load_embeddings(args.query), load_embeddings(args.gallery)
    final = cmkr_pipeline(query, gallery, cfg, args.normalize, args.threads)
    meta = dict(n_query=len(query), n_gallery=len(gallery), strategy=cfg.strategy,
                config=cfg.to_dict(), normalized=args.normalize)
    save_dist(final, args.out, **meta)
    manifest = _manifest("rerank", {**cfg.to_dict(), "normalize": args.normalize},
                         [args.query, args.gallery, args.config], started)
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh)
        fh.write("\n")
    _emit(manifest)
    return 0


def _parse_grid(text: str) -> dict:
    grid = {}
    if text == "default":
        return grid
    names = {"k1": "k1s", "k2": "k2s", "k3": "k3s", "lambda": "lambdas", "lambda_jaccard": "lambdas"}
    for part in text.split(";"):
        if not part.strip():
            continue
        key, _, values = part.partition("=")
        key = key.strip().replace("-", "_")
        if key not in names or not values.strip():
            raise UsageError(f"bad grid entry {part!r}; use e.g. 'k1=10,20;lambda=0.3,0.7'")
        cast = float if names[key] == "lambdas" else int
        grid[names[key]] = tuple(cast(v) for v in values.split(","))
    return grid


def _load_block(path, query, gallery) -> np.ndarray:
    try:
        values, meta = load_dist(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid distance file: {exc}") from None
    if (meta["n_query"], meta["n_gallery"]) != (len(query), len(gallery)):
        raise UsageError(
            f"distance file is {meta['n_query']}x{meta['n_gallery']}, "
            f"datasets are {len(query)}x{len(gallery)}")
    if values.shape != (len(query), len(gallery)):
        values = values[: len(query), len(query):]
    return values


def cmd_eval(args) -> int:
    started = time.time()
    query, gallery = load_embeddings(args.query), load_embeddings(args.gallery)
    cfg = _rerank_config(args) if args.rerank or args.grid else None
    config = {"trials": args.trials, "seed": args.seed, "max_rank": args.max_rank,
              "rerank": cfg.to_dict() if cfg else None, "dist": args.dist}
    if args.grid:
        best_cfg, best, rows = grid_search(
            query, gallery, cfg, max_rank=args.max_rank, normalize=args.normalize,
            threads=args.threads, **_parse_grid(args.grid))
        report = best.to_dict()
        report["grid_best"] = best_cfg.to_dict()
        report["grid"] = rows
    elif args.dist:
        block = _load_block(args.dist, query, gallery)
        if args.trials > 1:
            per_trial = []
            for t in range(args.trials):
                idx = sample_gallery_single_shot(gallery, args.seed + t)
                rep = evaluate_block(block[:, idx], query, gallery.subset(idx), args.max_rank)
                per_trial.append(dict(rep.to_dict(), seed=args.seed + t))
            report = {
                "cmc": list(np.mean([p["cmc"] for p in per_trial], axis=0)),
                "map": float(np.mean([p["map"] for p in per_trial])),
                "delta_mu": float(np.mean([p["delta_mu"] for p in per_trial])),
                "n_queries_evaluated": len(query),
                "per_trial": per_trial,
            }
        else:
            report = evaluate_block(block, query, gallery, args.max_rank).to_dict()
    elif args.trials > 1:
        report = multi_trial_eval(query, gallery, cfg, args.trials, args.seed, args.max_rank,
                                  args.normalize, args.threads).to_dict()
    else:
        if cfg is None:
            block = raw_distance(query, gallery, args.normalize, args.threads)
        else:
            block = cmkr_pipeline(query, gallery, cfg, args.normalize, args.threads)
        report = evaluate_block(block, query, gallery, args.max_rank).to_dict()
        if args.rank_list:
            keys_q = query.keys or [str(i) for i in range(len(query))]
            keys_g = gallery.keys or [str(i) for i in range(len(gallery))]
            write_rank_list(args.rank_list, block, rank(block), keys_q, keys_g, args.max_rank)
            report["rank_list_path"] = args.rank_list
    if "mean" not in report and "per_trial" in report:
        report["mean"] = {k: report[k] for k in ("cmc", "map", "delta_mu")}
    text = json.dumps(report) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    _emit(_manifest("eval", config, [args.query, args.gallery, args.dist], started), sys.stderr)
    return 0


def cmd_textiou(args) -> int:
    started = time.time()
    try:
        lexicon = ColorLexicon.from_file(args.lexicon) if args.lexicon else ColorLexicon.default()
    except ValueError as exc:
        raise UsageError(f"lexicon: {exc}") from None
    descriptions = load_descriptions(args.descriptions)
    ids = sorted(descriptions.entries)
    sets = [extract_colors(descriptions.entries[i], lexicon) for i in ids]
    iou = iou_matrix(sets)
    targets = normalize_targets(iou)
    os.makedirs(args.out, exist_ok=True)
    if args.format == "csv":
        for name, values in (("iou", iou), ("targets", targets)):
            with open(os.path.join(args.out, f"{name}.csv"), "w", encoding="utf-8") as fh:
                fh.write("id," + ",".join(str(i) for i in ids) + "\n")
                for ident, row in zip(ids, values):
                    fh.write(f"{ident}," + ",".join(repr(float(x)) for x in row) + "\n")
    else:
        for name, values in (("iou", iou), ("targets", targets)):
            save_dist(values, args.out, name=name, ids=ids)
    manifest = _manifest("textiou", {"format": args.format, "lexicon": args.lexicon},
                         [args.descriptions, args.lexicon], started)
    _emit(manifest)
    return 0


def cmd_jrm_check(args) -> int:
    try:
        dims = tuple(int(x) for x in args.dims.split(","))
    except ValueError:
        raise UsageError(f"--dims must be B,C,H,W integers, got {args.dims!r}") from None
    if len(dims) != 4 or min(dims) < 1:
        raise UsageError("--dims needs four positive integers B,C,H,W")
    report = invariant_report(args.seed, dims)
    _emit(report)
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmkr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic visible/infrared benchmark")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--n-ids", dest="n_ids", type=int)
    p.add_argument("--per-modality", dest="per_modality", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--modality-offset", dest="modality_offset", type=float)
    p.add_argument("--intra-noise", dest="intra_noise", type=float)
    p.add_argument("--n-cameras", dest="n_cameras", type=int)
    p.add_argument("--palette-size", dest="palette_size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rerank", help="re-rank query x gallery distances")
    p.add_argument("--query", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--out", required=True)
    _add_rerank_flags(p)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="CMC / mAP evaluation")
    p.add_argument("--query", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--dist", help="directory holding dist.bin / dist.meta.json")
    p.add_argument("--rerank", action="store_true", help="re-rank before evaluating")
    p.add_argument("--grid", nargs="?", const="default",
                   help="grid search, e.g. 'k1=10,20;k2=3,6;k3=1,2;lambda=0.3,0.7'")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-rank", dest="max_rank", type=int, default=20)
    p.add_argument("--out", help="also write the report to this file")
    p.add_argument("--rank-list", dest="rank_list", help="CSV dump of ranking lists")
    _add_rerank_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("textiou", help="text-IoU and regularization targets")
    p.add_argument("--descriptions", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.set_defaults(func=cmd_textiou)

    p = sub.add_parser("jrm-check", help="joint relation module invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="2,4,3,2")
    p.set_defaults(func=cmd_jrm_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "trials", 1) < 1:
        parser.error("--trials must be >= 1")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"cmkr {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, ProtocolError, OSError, ValueError) as exc:
        print(f"cmkr {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
