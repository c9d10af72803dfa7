"""Command-line entry point.

Subcommands: ``annotate`` (score and label positive-bag instances),
``evaluate`` (overlap-based report plus optional PR curve), ``synth``
(seeded dataset generation), and ``compare`` (all methods on one dataset
at matched detection counts).

Results files embed a manifest of every result-affecting parameter, so a
rerun with the same flags reproduces the file byte for byte.  Runtime
facts that do not affect results (wall-clock duration, thread count) are
reported on stderr instead of in the file.

Exit codes: 0 success, 2 parse error, 3 validation error, 4 degenerate
class collapse.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .backends import active_backend, set_threads
from .baselines import (
    BaselineScores,
    crane_scores,
    negmin_scores,
    negvote_scores,
    top_k_select,
)
from .data import Dataset, load_dataset, write_dataset
from .ekde import EkdeConfig, EkdeResult, ScoreTable, margin_table, run_ekde
from .errors import DegenerateClassError, ParseError, ValidationError
from .evaluation import (
    OVERLAP_THRESHOLD_IMAGE,
    OVERLAP_THRESHOLD_VIDEO,
    average_precision,
    pr_curve,
)
from .kernels import DEFAULT_BANDWIDTH_GRID, KernelConfig, select_bandwidths
from .refinement import build_adjacency, refine_scores
from .synth import generate, load_synth_config

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_DEGENERATE = 4

METHODS = ("ekde", "negmin", "crane", "negvote")


def _grid_type(text: str):
    try:
        values = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma list of numbers: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("bandwidth grid must be non-empty")
    return values


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for the numba backend (clamped to the machine cap)")
    common.add_argument("--output", type=Path, default=None,
                        help="output file path (subcommand-specific default otherwise)")
    common.add_argument("--quiet", action="store_true",
                        help="suppress informational stderr output")

    parser = argparse.ArgumentParser(
        prog="bagvote",
        description="Annotate instances inside weakly labeled bags by similarity voting.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ann = sub.add_parser("annotate", parents=[common],
                           help="score and label positive-bag instances")
    p_ann.add_argument("--input", type=Path, required=True, help="dataset JSON file")
    p_ann.add_argument("--method", choices=METHODS, default="ekde")
    p_ann.add_argument("--no-normalize", action="store_true",
                       help="skip L2 feature normalization at ingestion")
    p_ann.add_argument("--epsilon", type=float, default=1e-6,
                       help="soft-label convergence tolerance (ekde)")
    p_ann.add_argument("--max-iter", type=int, default=100,
                       help="soft-label iteration cap (ekde)")
    p_ann.add_argument("--sigma-pos", type=float, default=None,
                       help="positive-class bandwidth; overrides grid selection (ekde)")
    p_ann.add_argument("--sigma-neg", type=float, default=None,
                       help="negative-class bandwidth; overrides grid selection (ekde)")
    p_ann.add_argument("--bandwidth-grid", type=_grid_type, default=DEFAULT_BANDWIDTH_GRID,
                       help="comma list of candidate bandwidths (ekde)")
    p_ann.add_argument("--unnormalized-kernel", action="store_true",
                       help="drop the Gaussian density constant inside ekde")
    p_ann.add_argument("--sigma", type=float, default=1.0,
                       help="similarity bandwidth for the baselines")
    p_ann.add_argument("--top-k", type=int, default=None,
                       help="label the k best-scored instances +1 (crane/negvote)")
    p_ann.add_argument("--refine", action="store_true",
                       help="smooth scores over the region adjacency graph")
    p_ann.add_argument("--alpha", type=float, default=0.5,
                       help="neighbor-mean blend weight for --refine")

    p_eval = sub.add_parser("evaluate", parents=[common],
                            help="overlap-based evaluation of a results file")
    p_eval.add_argument("--input", type=Path, required=True, help="dataset JSON file")
    p_eval.add_argument("--results", type=Path, required=True, help="results JSON file")
    p_eval.add_argument("--media", choices=("image", "video"), default="image",
                        help="selects the default overlap threshold (0.5 / 0.125)")
    p_eval.add_argument("--threshold", type=float, default=None,
                        help="explicit overlap threshold, overrides --media")
    p_eval.add_argument("--pr", type=Path, default=None,
                        help="also write a threshold,precision,recall CSV here")

    p_synth = sub.add_parser("synth", parents=[common],
                             help="generate a seeded synthetic dataset")
    p_synth.add_argument("--config", type=Path, required=True, help="generator config JSON")
    p_synth.add_argument("--out", type=Path, required=True, help="dataset JSON to write")

    p_cmp = sub.add_parser("compare", parents=[common],
                           help="run all methods on one dataset at matched detection counts")
    p_cmp.add_argument("--input", type=Path, required=True, help="dataset JSON with gt flags")
    p_cmp.add_argument("--methods", default=",".join(METHODS),
                       help="comma list from {ekde,negmin,crane,negvote}")
    p_cmp.add_argument("--no-normalize", action="store_true")
    p_cmp.add_argument("--epsilon", type=float, default=1e-6)
    p_cmp.add_argument("--max-iter", type=int, default=100)
    p_cmp.add_argument("--sigma-pos", type=float, default=None)
    p_cmp.add_argument("--sigma-neg", type=float, default=None)
    p_cmp.add_argument("--bandwidth-grid", type=_grid_type, default=DEFAULT_BANDWIDTH_GRID)
    p_cmp.add_argument("--unnormalized-kernel", action="store_true")
    p_cmp.add_argument("--sigma", type=float, default=1.0,
                       help="similarity bandwidth for the baselines")
    p_cmp.add_argument("--media", choices=("image", "video"), default="image")
    p_cmp.add_argument("--threshold", type=float, default=None)
    return parser


def _write_json_atomic(obj, path: Path):
    """Write JSON via a temp file + rename so partial files never remain."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _info(args, message: str):
    if not args.quiet:
        print(message, file=sys.stderr)


def _resolve_ekde_kernel(args, dataset: Dataset):
    normalized = not args.unnormalized_kernel
    if args.sigma_pos is not None or args.sigma_neg is not None:
        sp = args.sigma_pos if args.sigma_pos is not None else args.sigma_neg
        sn = args.sigma_neg if args.sigma_neg is not None else args.sigma_pos
        return KernelConfig(sp, sn, normalized), None
    kernel = select_bandwidths(dataset, args.bandwidth_grid, normalized)
    return kernel, list(args.bandwidth_grid)


def _argmax_labels_per_bag(table: ScoreTable, dataset: Dataset) -> dict:
    """negmin decision rule: exactly one +1 per positive bag (first-max)."""
    scores = table.score_map()
    labels = {}
    for bag in dataset.positive_bags:
        best_id = None
        best = -np.inf
        for inst in bag.instances:
            s = scores[(bag.id, inst.id)]
            if s > best:
                best = s
                best_id = inst.id
        for inst in bag.instances:
            labels[(bag.id, inst.id)] = 1 if inst.id == best_id else -1
    return labels


def _annotate_dataset(args, dataset: Dataset):
    """Shared by annotate and compare: returns (table, labels, w_map, manifest_bits)."""
    refine = getattr(args, "refine", False)
    alpha = getattr(args, "alpha", 0.5)
    top_k = getattr(args, "top_k", None)
    method = args.method

    extra = {"iterations": None, "converged": None}
    w_map = None
    if method == "ekde":
        kernel, grid_used = _resolve_ekde_kernel(args, dataset)
        config = EkdeConfig(kernel=kernel, epsilon=args.epsilon, max_iter=args.max_iter)
        result: EkdeResult = run_ekde(dataset, config)
        if refine:
            # Refinement blends neighbor scores, so hand it the bounded
            # posterior margin: raw voting masses span orders of magnitude
            # and a single background neighbor would swamp the blend.
            table = margin_table(dataset, result.soft_labels, kernel)
        else:
            table = result.score_table
        params = {
            "sigma_pos": kernel.sigma_pos,
            "sigma_neg": kernel.sigma_neg,
            "normalized_kernel": kernel.normalized,
            "epsilon": args.epsilon,
            "max_iter": args.max_iter,
            "bandwidth_grid": grid_used,
        }
        extra = {"iterations": result.iterations, "converged": result.converged}
        w_map = result.soft_labels.as_dict()
    else:
        dataset.require_annotatable()
        scorer = {"negmin": negmin_scores, "crane": crane_scores, "negvote": negvote_scores}[method]
        base = scorer(dataset, args.sigma)
        table = ScoreTable.from_scores(base.index, base.scores)
        params = {"sigma": args.sigma, "top_k": top_k}

    params["refine"] = bool(refine)
    params["alpha"] = alpha if refine else None
    if refine:
        graph = build_adjacency(dataset)
        table = refine_scores(table, graph, alpha)

    # Method-specific decision rule, applied to the (possibly refined) scores.
    if method == "negmin":
        labels = _argmax_labels_per_bag(table, dataset)
    elif method in ("crane", "negvote") and top_k is not None:
        base = BaselineScores(method=method, index=table.index, scores=table.scores)
        labels = top_k_select(base, top_k)
    else:
        labels = table.label_map()
    return table, labels, w_map, params, extra


def _results_payload(args, method, table, labels, w_map, params, extra):
    results = []
    score_map = table.score_map()
    for bag_id, inst_id in table.index:
        entry = {
            "bag": bag_id,
            "instance": inst_id,
            "score": score_map[(bag_id, inst_id)],
            "label": int(labels[(bag_id, inst_id)]),
        }
        if w_map is not None:
            entry["w"] = float(w_map[(bag_id, inst_id)])
        results.append(entry)
    manifest = {
        "tool": "bagvote",
        "version": __version__,
        "method": method,
        "input": str(args.input),
        "normalize": not args.no_normalize,
        "backend": active_backend(),
        "params": params,
        "iterations": extra["iterations"],
        "converged": extra["converged"],
    }
    return {"manifest": manifest, "results": results}


def _cmd_annotate(args) -> int:
    started = time.perf_counter()
    dataset = load_dataset(args.input, normalize=not args.no_normalize)
    table, labels, w_map, params, extra = _annotate_dataset(args, dataset)
    payload = _results_payload(args, args.method, table, labels, w_map, params, extra)
    out = args.output or args.input.with_suffix("").with_suffix(".results.json")
    _write_json_atomic(payload, out)
    detected = sum(1 for v in labels.values() if v == 1)
    _info(args, f"annotate method={args.method} backend={active_backend()} "
                f"detected={detected} duration={time.perf_counter() - started:.3f}s -> {out}")
    return EXIT_OK


def _read_results_file(path: Path):
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read results file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or not isinstance(obj.get("results"), list):
        raise ParseError(f"{path}: expected an object with a 'results' list")
    labels = {}
    scores = {}
    for i, entry in enumerate(obj["results"]):
        if not isinstance(entry, dict):
            raise ParseError(f"{path}: results[{i}] is not an object")
        try:
            key = (entry["bag"], entry["instance"])
            labels[key] = int(entry["label"])
            scores[key] = float(entry["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: results[{i}] malformed: {exc}") from exc
    return labels, scores


def _cmd_evaluate(args) -> int:
    # Features are unused by the overlap metrics, so skip normalization
    # (and its zero-vector rejection) when loading.
    dataset = load_dataset(args.input, normalize=False)
    labels, scores = _read_results_file(args.results)
    threshold = args.threshold
    if threshold is None:
        threshold = (OVERLAP_THRESHOLD_IMAGE if args.media == "image"
                     else OVERLAP_THRESHOLD_VIDEO)
    report = average_precision(labels, dataset, threshold)
    payload = {
        "input": str(args.input),
        "results": str(args.results),
        "media": args.media,
        "threshold": report.threshold_used,
        "ap": report.ap,
        "detected_count": report.detected_count,
        "per_bag": [
            {"bag": o.bag_id, "overlap": o.overlap, "correct": o.correct}
            for o in report.per_bag
        ],
    }
    if args.pr is not None:
        curve = pr_curve(scores, dataset)
        lines = ["threshold,precision,recall"]
        lines += [f"{p.threshold!r},{p.precision!r},{p.recall!r}" for p in curve.points]
        args.pr.parent.mkdir(parents=True, exist_ok=True)
        args.pr.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.output is not None:
        _write_json_atomic(payload, args.output)
        _info(args, f"evaluate ap={report.ap:.4f} -> {args.output}")
    else:
        print(json.dumps(payload, indent=2))
    return EXIT_OK


def _cmd_synth(args) -> int:
    config = load_synth_config(args.config)
    result = generate(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=out.parent, prefix=out.name, suffix=".tmp")
    os.close(fd)
    try:
        write_dataset(result.dataset, tmp_name)
        os.replace(tmp_name, out)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    _write_json_atomic(result.meta, out.with_name(out.name + ".meta.json"))
    _info(args, f"synth bags={config.n_pos_bags}+{config.n_neg_bags} "
                f"instances={result.dataset.total_instances} -> {out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r}; choose from {METHODS}")
    dataset = load_dataset(args.input, normalize=not args.no_normalize)
    threshold = args.threshold
    if threshold is None:
        threshold = (OVERLAP_THRESHOLD_IMAGE if args.media == "image"
                     else OVERLAP_THRESHOLD_VIDEO)

    # eKDE sets the detection budget for the rank-only baselines, so run
    # it whenever a budget is needed even if its row was not requested.
    need_budget = any(m in ("crane", "negvote") for m in methods)
    ekde_labels = None
    ekde_detected = None
    if "ekde" in methods or need_budget:
        kernel, _ = _resolve_ekde_kernel(args, dataset)
        config = EkdeConfig(kernel=kernel, epsilon=args.epsilon, max_iter=args.max_iter)
        result = run_ekde(dataset, config)
        ekde_labels = result.score_table.label_map()
        ekde_detected = sum(1 for v in ekde_labels.values() if v == 1)

    rows = []
    for method in methods:
        if method == "ekde":
            labels = ekde_labels
        elif method == "negmin":
            base = negmin_scores(dataset, args.sigma)
            table = ScoreTable.from_scores(base.index, base.scores)
            labels = _argmax_labels_per_bag(table, dataset)
        else:
            scorer = {"crane": crane_scores, "negvote": negvote_scores}[method]
            labels = top_k_select(scorer(dataset, args.sigma), ekde_detected)
        report = average_precision(labels, dataset, threshold)
        rows.append({
            "method": method,
            "ap": report.ap,
            "detected": report.detected_count,
        })

    payload = {
        "input": str(args.input),
        "threshold": threshold,
        "ekde_detected": ekde_detected,
        "methods": rows,
    }
    out = args.output or args.input.with_suffix("").with_suffix(".compare.json")
    _write_json_atomic(payload, out)
    if not args.quiet:
        print(f"{'method':<10} {'AP':>7} {'detected':>9}", file=sys.stderr)
        for row in rows:
            print(f"{row['method']:<10} {row['ap']:>7.4f} {row['detected']:>9}",
                  file=sys.stderr)
    _info(args, f"compare -> {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            parser.error("--threads must be >= 1")
        set_threads(args.threads)
    handler = {
        "annotate": _cmd_annotate,
        "evaluate": _cmd_evaluate,
        "synth": _cmd_synth,
        "compare": _cmd_compare,
    }[args.command]
    try:
        return handler(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DegenerateClassError as exc:
        where = f" (iteration {exc.iteration})" if exc.iteration is not None else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
