"""Command-line pipelines over the library modules.

Every command writes a self-describing JSON report: the resolved
configuration (seeds included), sha256 digests of all input files, a
timestamp, and the result. Re-running a report's configuration reproduces it
byte-identically apart from the timestamp. Exit codes: 0 success, 2 invalid
input, 3 computation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, datasets, formats, fusion, kernels, metrics, rerank
from .embeddings import (
    DISTANCE_FUNCTIONS,
    DistanceMatrix,
    EmbeddingSet,
    load_embeddings,
)
from .errors import ComputationError, ReidkitError, ValidationError

DEFAULT_MAX_POINTS = 6000


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require_files(*paths: Path) -> dict[str, str]:
    digests = {}
    for path in paths:
        if not path.is_file():
            raise ValidationError(f"input file not found: {path}")
        digests[str(path)] = _digest(path)
    return digests


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _write_report(out: Path | None, command: str, config: dict, inputs: dict, result: dict) -> dict:
    report = {
        "command": command,
        "version": __version__,
        "config": _jsonable(config),
        "inputs": inputs,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "result": _jsonable(result),
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    return report


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise ValidationError(f"{flag} expects comma-separated integers, got {text!r}") from None


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise ValidationError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def _load_pair(args) -> tuple[EmbeddingSet, EmbeddingSet, dict[str, str]]:
    from .embeddings import sidecar_path

    query_path = Path(args.query)
    gallery_path = Path(args.gallery)
    digests = _require_files(
        query_path, sidecar_path(query_path), gallery_path, sidecar_path(gallery_path)
    )
    return load_embeddings(query_path), load_embeddings(gallery_path), digests


def _distance_blocks(query: EmbeddingSet, gallery: EmbeddingSet, args):
    fn = DISTANCE_FUNCTIONS[args.distance]
    kwargs = {"backend": args.backend, "threads": args.threads}
    return (
        fn(query, gallery, **kwargs).values,
        fn(query, query, **kwargs).values,
        fn(gallery, gallery, **kwargs).values,
    )


def _eval_config(args) -> metrics.EvalProtocolConfig:
    return metrics.EvalProtocolConfig(
        cross_camera=not args.single_camera,
        junk_id=args.junk_id,
        ranks_reported=tuple(_parse_int_list(args.ranks, "--ranks")),
    )


def _common_config(args, **extra) -> dict:
    config = {
        "backend": args.backend or kernels.default_backend(),
        "threads": args.threads,
    }
    config.update(extra)
    return config


def cmd_eval(args) -> int:
    query, gallery, digests = _load_pair(args)
    config = _eval_config(args)
    if args.distances:
        dist_path = Path(args.distances)
        digests.update(_require_files(dist_path))
        values = formats.read_matrix(dist_path)
        if values.shape != (query.n, gallery.n):
            raise ValidationError(
                f"distance matrix shape {values.shape} does not match "
                f"{query.n} queries x {gallery.n} gallery entries"
            )
        dist = DistanceMatrix(values, query.image_ids, gallery.image_ids)
        distance_name = "precomputed"
    else:
        dist = DISTANCE_FUNCTIONS[args.distance](
            query, gallery, backend=args.backend, threads=args.threads
        )
        distance_name = args.distance
    report = metrics.evaluate(
        dist, query.person_ids, query.camera_ids,
        gallery.person_ids, gallery.camera_ids, config,
    )
    out = Path(args.out) if args.out else None
    resolved = _common_config(
        args,
        distance=distance_name,
        junk_id=config.junk_id,
        cross_camera=config.cross_camera,
        ranks=list(config.ranks_reported),
    )
    _write_report(out, "eval", resolved, digests, report.to_json_dict())
    if out is not None:
        out.with_suffix(".csv").write_text(report.to_csv())
    return 0


def cmd_rerank(args) -> int:
    query, gallery, digests = _load_pair(args)
    union = query.n + gallery.n
    if union > args.max_points:
        raise ValidationError(
            f"instance too large: union of {union} points exceeds the "
            f"--max-points cap of {args.max_points}"
        )
    dist_qg, dist_qq, dist_gg = _distance_blocks(query, gallery, args)
    if args.method == "k-reciprocal":
        params = rerank.KReciprocalParams(k1=args.k1, k2=args.k2, lam=getattr(args, "lambda"))
        values = rerank.k_reciprocal_rerank(
            dist_qg, dist_qq, dist_gg, params, backend=args.backend, threads=args.threads
        )
        param_dict = {"k1": params.k1, "k2": params.k2, "lambda": params.lam}
    else:
        params = rerank.EcnParams(t=args.t, mode=args.mode)
        values = rerank.ecn_rerank(
            dist_qg, dist_qq, dist_gg, params, backend=args.backend, threads=args.threads
        )
        param_dict = {"t": params.t, "mode": params.mode}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_matrix(out, values)
    resolved = _common_config(
        args, method=args.method, distance=args.distance,
        max_points=args.max_points, **param_dict,
    )
    result = {
        "matrix": str(out),
        "shape": list(values.shape),
        "matrix_sha256": _digest(out),
    }
    _write_report(Path(str(out) + ".json"), "rerank", resolved, digests, result)
    return 0


def cmd_scalability(args) -> int:
    query, gallery, digests = _load_pair(args)
    from .embeddings import sidecar_path

    pool_path = Path(args.pool)
    digests.update(_require_files(pool_path, sidecar_path(pool_path)))
    pool = load_embeddings(pool_path)
    junk = args.junk_id
    if pool.n and not np.all(pool.person_ids == junk):
        bad = pool.image_ids[int(np.flatnonzero(pool.person_ids != junk)[0])]
        raise ValidationError(
            f"distractor pool must carry person_id {junk} everywhere, "
            f"first offender: {bad!r}"
        )
    steps = _parse_int_list(args.steps, "--steps")
    if not steps or steps != sorted(steps) or any(s < 0 for s in steps):
        raise ValidationError(f"--steps must be ascending and >= 0, got {steps}")
    if steps[-1] > pool.n:
        raise ValidationError(
            f"largest step {steps[-1]} exceeds the pool size {pool.n}"
        )
    config = _eval_config(args)
    if 1 not in config.ranks_reported:
        raise ValidationError("scalability reporting needs rank 1 in --ranks")
    fn = DISTANCE_FUNCTIONS[args.distance]

    rows = []
    base: dict[str, float] | None = None
    for n in steps:
        indices = datasets.sample_distractor_indices(pool.n, n, args.seed)
        merged = EmbeddingSet(
            np.vstack([gallery.vectors, pool.vectors[list(indices)]]),
            gallery.image_ids + tuple(pool.image_ids[i] for i in indices),
            np.concatenate([gallery.person_ids, pool.person_ids[list(indices)]]),
            np.concatenate([gallery.camera_ids, pool.camera_ids[list(indices)]]),
        )
        dist = fn(query, merged, backend=args.backend, threads=args.threads)
        report = metrics.evaluate(
            dist, query.person_ids, query.camera_ids,
            merged.person_ids, merged.camera_ids, config,
        )
        point = {"n": n, "map": report.map, "r1": report.cmc.get(1)}
        if base is None:
            base = point
        point["map_drop_pct"] = metrics.relative_drop(base["map"], point["map"])
        point["r1_drop_pct"] = metrics.relative_drop(base["r1"], point["r1"])
        rows.append(point)

    out = Path(args.out) if args.out else None
    resolved = _common_config(
        args, distance=args.distance, seed=args.seed, steps=steps,
        junk_id=config.junk_id, ranks=list(config.ranks_reported),
    )
    _write_report(out, "scalability", resolved, digests, {"rows": rows})
    if out is not None:
        lines = ["n,map,r1,map_drop_pct,r1_drop_pct"]
        for point in rows:
            lines.append(
                f"{point['n']},{point['map']:.6f},{point['r1']:.6f},"
                f"{point['map_drop_pct']:.1f},{point['r1_drop_pct']:.1f}"
            )
        out.with_suffix(".csv").write_text("\n".join(lines) + "\n")
    return 0


def cmd_xmars_split(args) -> int:
    source_path = Path(args.source)
    reference_path = Path(args.reference)
    digests = _require_files(source_path, reference_path)
    source = datasets.load_manifest(source_path)
    reference = datasets.load_manifest(reference_path)
    spec = datasets.generate_xmars_split(
        source, reference.train_ids, reference.test_ids, args.seed
    )
    out = Path(args.out) if args.out else None
    _write_report(out, "xmars-split", {"seed": args.seed}, digests, spec.to_json_dict())
    return 0


def cmd_overlap(args) -> int:
    a_path, b_path = Path(args.a), Path(args.b)
    digests = _require_files(a_path, b_path)
    a = datasets.load_manifest(a_path)
    b = datasets.load_manifest(b_path)
    matrix = datasets.overlap_report(a, b)
    result = {
        "rows": [f"{a.name}-train", f"{a.name}-test"],
        "cols": [f"{b.name}-train", f"{b.name}-test"],
        "matrix": matrix,
    }
    _write_report(Path(args.out) if args.out else None, "overlap", {}, digests, result)
    return 0


def cmd_sweep(args) -> int:
    manifest_path = Path(args.manifest)
    digests = _require_files(manifest_path)
    manifest = datasets.load_manifest(manifest_path)
    targets = _parse_float_list(args.targets, "--targets")
    points = datasets.threshold_sweep(manifest, args.num_frames, targets)
    out = Path(args.out) if args.out else None
    rows = []
    for point in points:
        row = {
            "target": point.target,
            "threshold": point.threshold,
            "kept": point.kept,
            "achieved_average": point.achieved_average,
        }
        if out is not None:
            target_tag = f"{point.target:g}".replace(".", "p")
            manifest_out = out.with_name(f"{out.stem}_target_{target_tag}.csv")
            datasets.save_manifest(point.manifest, manifest_out)
            row["manifest"] = str(manifest_out)
        rows.append(row)
    resolved = {"num_frames": args.num_frames, "targets": targets}
    _write_report(out, "sweep", resolved, digests, {"points": rows})
    return 0


def cmd_gradcheck(args) -> int:
    report = fusion.gradient_check(
        seed=args.seed, num_instances=args.instances, step=args.step
    )
    resolved = {"seed": args.seed, "instances": args.instances, "step": args.step}
    _write_report(
        Path(args.out) if args.out else None, "gradcheck", resolved, {},
        report.to_json_dict(),
    )
    return 0


def cmd_fuse_demo(args) -> int:
    digests = {}
    if args.stack:
        stack_path = Path(args.stack)
        digests = _require_files(stack_path)
        stack = formats.read_tensor(stack_path).astype(np.float64)
        if stack.ndim < 2:
            raise ValidationError(
                f"view-unit stack must have rank >= 2, got shape {stack.shape}"
            )
    else:
        rng = np.random.default_rng(args.seed)
        stack = rng.normal(size=(3, 4, 3, 3))
    if args.logits:
        logits = np.array(_parse_float_list(args.logits, "--logits"))
    else:
        logits = np.random.default_rng(args.seed + 1).normal(size=stack.shape[0])
    if logits.shape[0] != stack.shape[0]:
        raise ValidationError(
            f"{logits.shape[0]} logits for a stack of {stack.shape[0]} maps"
        )
    weights = fusion.softmax_view_weights(logits)
    fused = fusion.fuse_view_units(stack, weights)
    grad_report = fusion.gradient_check(seed=args.seed, num_instances=5, step=args.step)
    result = {
        "weights": weights.tolist(),
        "map_norms": [float(np.linalg.norm(m)) for m in stack],
        "fused_norm": float(np.linalg.norm(fused)),
        "gradient_check": grad_report.to_json_dict(),
    }
    resolved = {"seed": args.seed, "step": args.step, "logits": logits.tolist()}
    _write_report(Path(args.out) if args.out else None, "fuse-demo", resolved, digests, result)
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--threads", type=int, default=0,
                        help="worker threads for distance/re-rank stages (0 = all cores)")
    parser.add_argument("--backend", choices=("native", "numpy"), default=None,
                        help="kernel backend (default: native when built)")
    parser.add_argument("--out", default=None, help="report path (default: stdout)")


def _add_eval_protocol(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--distance", choices=sorted(DISTANCE_FUNCTIONS), default="euclidean")
    parser.add_argument("--ranks", default="1,5,10,50", help="comma-separated CMC ranks")
    parser.add_argument("--junk-id", type=int, default=-1)
    parser.add_argument("--single-camera", action="store_true",
                        help="disable same-camera masking")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reidkit",
        description="Evaluate, re-rank and probe person re-identification embeddings.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="rank a gallery against queries and score mAP/CMC")
    p.add_argument("--query", required=True, help="query embedding file (REID + .csv sidecar)")
    p.add_argument("--gallery", required=True, help="gallery embedding file")
    p.add_argument("--distances", default=None,
                   help="optional precomputed RDMX matrix (skips distance computation)")
    _add_eval_protocol(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rerank", help="re-rank distances and emit an RDMX matrix")
    p.add_argument("--query", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--method", choices=("k-reciprocal", "ecn"), default="k-reciprocal")
    p.add_argument("--distance", choices=sorted(DISTANCE_FUNCTIONS), default="euclidean")
    p.add_argument("--k1", type=int, default=20)
    p.add_argument("--k2", type=int, default=6)
    p.add_argument("--lambda", type=float, default=0.3, dest="lambda")
    p.add_argument("--t", type=int, default=4)
    p.add_argument("--mode", choices=rerank.ECN_MODES, default="rank-dist")
    p.add_argument("--max-points", type=int, default=DEFAULT_MAX_POINTS,
                   help="refuse unions larger than this many points")
    p.add_argument("--threads", type=int, default=0)
    p.add_argument("--backend", choices=("native", "numpy"), default=None)
    p.add_argument("--out", required=True, help="output RDMX path (report at <out>.json)")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("scalability", help="evaluate with growing injected distractor galleries")
    p.add_argument("--query", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--pool", required=True, help="distractor embedding file (junk ids)")
    p.add_argument("--steps", required=True, help="comma-separated distractor counts")
    p.add_argument("--seed", type=int, required=True)
    _add_eval_protocol(p)
    _add_common(p)
    p.set_defaults(func=cmd_scalability)

    p = sub.add_parser("xmars-split", help="reorder a tracklet dataset split to follow a reference split")
    p.add_argument("--source", required=True, help="tracklet dataset manifest CSV")
    p.add_argument("--reference", required=True, help="manifest whose train/test ids to follow")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_xmars_split)

    p = sub.add_parser("overlap", help="count identities shared between two datasets")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_overlap)

    p = sub.add_parser("sweep", help="filter detections by confidence toward per-frame targets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--num-frames", type=int, required=True)
    p.add_argument("--targets", default="3,5,10,20")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the fusion backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fuse-demo", help="print view weights, fused-map norms and a gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stack", default=None, help="optional RTEN stack of view-unit maps")
    p.add_argument("--logits", default=None, help="comma-separated view logits")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fuse_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ComputationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ReidkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
