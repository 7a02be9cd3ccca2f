"""``spnclust`` command line: synth, extract, cluster, eval, bench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Configuration comes from a JSON file (``--config`` or ``$SPNCLUST_CONFIG``)
with command-line flags taking precedence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .admm import constrained_lasso
from .config import AdmmConfig, PipelineConfig
from .errors import (
    CapacityExceeded,
    EmptyOutput,
    FormatError,
    IdMismatch,
    NumericalFailure,
    SpnClustError,
)
from .fingerprint import (
    FingerprintMatrix,
    GaussianDenoiser,
    SynthCameraSet,
    extract_residual,
    is_dark,
    normalize,
    synthesize,
)
from .io import (
    SpnfSource,
    align_truth,
    load_image,
    read_labels,
    read_result,
    read_spnf,
    write_labels,
    write_result,
    write_spnf,
)
from .largescale import ls_ssc
from .metrics import append_metrics_csv, evaluate
from .spectral import ClusteringResult, ssc_nc, spectral_cluster, estimate_num_clusters, symmetrize

log = logging.getLogger("spnclust")

CONFIG_ENV = "SPNCLUST_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".ppm", ".pgm"}

# flag dest -> PipelineConfig field
CONFIG_FLAGS = {
    "mode": "mode",
    "gamma": "gamma",
    "eta": "eta",
    "epsilon": "epsilon",
    "max_iters": "max_iters",
    "batch_size": "batch_size",
    "knn": "knn",
    "recycle": "recycle_steps",
    "pfa": "pfa",
    "card_cap": "card_cap",
    "kappa_max": "kappa_max",
    "single_solve_cap": "single_solve_cap",
    "spn_size": "spn_size",
    "seed": "seed",
    "workers": "workers",
    "trace": "trace",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _KeyValueFormatter(logging.Formatter):
    def format(self, record):
        return f"level={record.levelname.lower()} logger={record.name} {record.getMessage()}"


def _setup_logging(verbosity: int) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_KeyValueFormatter())
    root = logging.getLogger("spnclust")
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING - 10 * min(verbosity, 2))
    root.propagate = False


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def load_config(args) -> PipelineConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    data = {}
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        with open(path, encoding="utf-8") as fh:
            data.update(json.load(fh))
    for flag, key in CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None and value is not False:
            data[key] = value
    try:
        return PipelineConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _add_config_flags(p):
    p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    p.add_argument("--mode", choices=("ssc-nc", "ls-ssc"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--knn", type=int)
    p.add_argument("--recycle", type=int, help="recycling rounds (default floor(B/2))")
    p.add_argument("--pfa", type=float)
    p.add_argument("--card-cap", type=int)
    p.add_argument("--kappa-max", type=int)
    p.add_argument("--single-solve-cap", type=int)
    p.add_argument("--spn-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--trace", action="store_true", default=None,
                   help="write per-iteration ADMM trace CSV (ssc-nc mode)")


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    params = SynthCameraSet(
        num_cameras=args.cameras,
        images_per_camera=args.images,
        d=args.side * args.side,
        k_variance=args.k_variance,
        theta_variance=args.theta_variance,
        base_intensity=args.base,
        rng_seed=args.seed,
    )
    fm, labels = synthesize(params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_spnf(out, fm)
    labels_path = Path(args.labels) if args.labels else out.with_suffix(".labels.csv")
    write_labels(labels_path, fm.ids, labels)
    log.info("event=synth n=%d d=%d cameras=%d out=%s labels=%s",
             fm.n, fm.d, params.num_cameras, out, labels_path)
    return EXIT_OK


# -- extract -----------------------------------------------------------------

def _extract_one(path: Path, crop: int, denoiser):
    """Return ``(fingerprint, None)`` or ``(None, reason)``."""
    try:
        if path.suffix.lower() == ".npy":
            residual = np.load(path)
            if residual.ndim != 2:
                return None, "residual-not-2d"
            return normalize(residual[:crop, :crop] if crop else residual), None
        img = load_image(path)
        if crop:
            img = img.crop(crop)
        if is_dark(img):
            return None, "dark"
        return normalize(extract_residual(img, denoiser)), None
    except (OSError, ValueError, SpnClustError) as exc:
        return None, f"unreadable:{type(exc).__name__}"


def cmd_extract(args) -> int:
    src = Path(args.images)
    if not src.is_dir():
        raise FormatError(f"{src} is not a directory")
    files = sorted(p for p in src.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES or p.suffix.lower() == ".npy")
    denoiser = None if args.denoiser == "gaussian" else _identity_denoiser
    work = lambda p: _extract_one(p, args.crop, denoiser)  # noqa: E731
    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as ex:
            results = list(ex.map(work, files))
    else:
        results = [work(p) for p in files]
    cols, ids, skipped = [], [], 0
    for path, (vec, reason) in zip(files, results):
        if vec is None:
            skipped += 1
            log.warning("event=skip file=%s reason=%s", path.name, reason)
            continue
        if cols and vec.shape != cols[0].shape:
            skipped += 1
            log.warning("event=skip file=%s reason=size-mismatch", path.name)
            continue
        cols.append(vec)
        ids.append(path.stem)
    if not cols:
        raise EmptyOutput("no usable images (all dark, unreadable or empty directory)")
    fm = FingerprintMatrix(np.column_stack(cols), tuple(ids))
    write_spnf(args.out, fm)
    log.info("event=extract kept=%d skipped=%d d=%d out=%s", fm.n, skipped, fm.d, args.out)
    return EXIT_OK


def _identity_denoiser(channel):
    """Zero smoothing; the image itself is treated as the residual."""
    return np.zeros_like(channel)


# -- cluster -----------------------------------------------------------------

def _summary_from_members(result: ClusteringResult, fm_source, card_cap: int):
    rows = []
    for lab in range(result.num_clusters):
        cols = np.flatnonzero(result.labels == lab)
        bounded = cols[:card_cap].tolist()
        with fm_source.loaded(bounded) as Xb:
            G = np.asarray(Xb).T @ np.asarray(Xb)
        m = len(bounded)
        rho = 0.0 if m < 2 else float((G.sum() - np.trace(G)) / (m * (m - 1)))
        rows.append((lab, len(cols), rho))
    return rows


def run_cluster(input_path, cfg: PipelineConfig, out_dir, *, checkpoint=True) -> dict:
    """Cluster an SPNF file and write result, summary and manifest files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    t_start = time.perf_counter()
    source = SpnfSource(input_path)
    n = source.n
    phases = {}
    num_batches = 1
    if cfg.mode == "ssc-nc":
        if n > cfg.single_solve_cap:
            raise CapacityExceeded(
                f"n={n} exceeds the single-solve cap {cfg.single_solve_cap}; rerun with --mode ls-ssc"
            )
        t0 = time.perf_counter()
        with source.loaded(range(n)) as X:
            X = np.asarray(X, dtype=np.float64)
        phases["load"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        if cfg.trace:
            with open(out / "trace.csv", "w", encoding="utf-8") as trace:
                result = ssc_nc(X, cfg.admm(), cfg.kappa_max, cfg.seed, ids=source.ids,
                                single_solve_cap=cfg.single_solve_cap, trace=trace)
        else:
            result = ssc_nc(X, cfg.admm(), cfg.kappa_max, cfg.seed, ids=source.ids,
                            single_solve_cap=cfg.single_solve_cap)
        del X
        phases["ssc_nc"] = time.perf_counter() - t0
        summary = _summary_from_members(result, source, cfg.card_cap)
        peak = n
        recycle_steps = 0
    else:
        ls_cfg = cfg.ls()
        res = ls_ssc(source, ls_cfg, cfg.seed, workers=cfg.workers,
                     checkpoint_dir=(out / "checkpoints") if checkpoint else None)
        result = res.result
        phases.update(res.timings)
        summary = res.summary_rows()
        num_batches = res.num_batches
        recycle_steps = res.recycle_steps
        peak = res.peak_resident

    write_result(out / "result.json", result)
    with open(out / "clusters.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "cardinality", "rho"])
        for lab, card, rho in summary:
            w.writerow([lab, card, f"{rho:.6f}"])
    manifest = {
        "tool": "spnclust",
        "version": __version__,
        "command": "cluster",
        "input": {"path": str(Path(input_path).resolve()), "sha256": _sha256(input_path),
                  "n": n, "d": source.d},
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "phase_seconds": {k: round(v, 6) for k, v in phases.items()},
        "total_seconds": round(time.perf_counter() - t_start, 6),
        "counts": {
            "n": n,
            "batches": num_batches,
            "recycle_steps": recycle_steps,
            "clusters": int(result.num_clusters),
            "unclustered": int(np.sum(result.labels < 0)),
            "peak_resident_fingerprints": int(peak),
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    log.info("event=cluster mode=%s n=%d clusters=%d unclustered=%d out=%s",
             cfg.mode, n, result.num_clusters, manifest["counts"]["unclustered"], out)
    return manifest


def cmd_cluster(args) -> int:
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text(encoding="utf-8"))
        cfg = PipelineConfig.from_dict(manifest["config"])
        input_path = args.input or manifest["input"]["path"]
        if _sha256(input_path) != manifest["input"]["sha256"]:
            raise FormatError(f"{input_path} does not match the manifest checksum")
    else:
        if not args.input:
            raise UsageError("an input SPNF file is required")
        cfg = load_config(args)
        input_path = args.input
    run_cluster(input_path, cfg, args.out, checkpoint=not args.no_checkpoint)
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def cmd_eval(args) -> int:
    result = read_result(args.result)
    truth = align_truth(result.ids, read_labels(args.labels))
    report = evaluate(result, truth)
    text = report.to_text()
    print(text)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    if args.csv:
        append_metrics_csv(args.csv, args.run or Path(args.result).stem, report)
    return EXIT_OK


# -- bench -------------------------------------------------------------------

BENCH_FIELDS = ("n", "synth_s", "lasso_s", "spectral_s", "iterations", "total_s")


def bench_rows(sizes, gamma: float, side: int = 64, seed: int = 0, kappa_max: int = 50):
    rows = []
    for n in sizes:
        t0 = time.perf_counter()
        cams = 5
        fm, _ = synthesize(SynthCameraSet(num_cameras=cams, images_per_camera=math.ceil(n / cams),
                                          d=side * side, rng_seed=seed))
        X = fm.X[:, :n]
        t1 = time.perf_counter()
        rep = constrained_lasso(X, AdmmConfig(gamma=gamma))
        t2 = time.perf_counter()
        G = symmetrize(rep)
        kappa = estimate_num_clusters(G, min(kappa_max, n - 1))
        spectral_cluster(G, kappa, seed)
        t3 = time.perf_counter()
        rows.append({"n": n, "synth_s": t1 - t0, "lasso_s": t2 - t1, "spectral_s": t3 - t2,
                     "iterations": rep.iterations, "total_s": t3 - t0})
    return rows


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()] if args.sizes else []
    if any(s < 2 for s in sizes):
        raise UsageError("benchmark sizes must be >= 2")
    rows = bench_rows(sizes, args.gamma, args.side, args.seed)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spnclust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic fingerprints")
    p.add_argument("--cameras", type=int, default=5)
    p.add_argument("--images", type=int, default=100, help="images per camera")
    p.add_argument("--side", type=int, default=64, help="image side in pixels (d = side^2)")
    p.add_argument("--k-variance", type=float, default=0.001)
    p.add_argument("--theta-variance", type=float, default=0.1)
    p.add_argument("--base", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="SPNF output path")
    p.add_argument("--labels", help="label table path (default: <out>.labels.csv)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="fingerprints from a directory of images")
    p.add_argument("images")
    p.add_argument("--crop", type=int, default=512, help="top-left square crop side (0: none)")
    p.add_argument("--denoiser", choices=("gaussian", "none"), default="gaussian")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("cluster", help="cluster an SPNF file")
    p.add_argument("input", nargs="?")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--from-manifest", help="replay the configuration of a previous run")
    p.add_argument("--no-checkpoint", action="store_true")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="score a result against ground truth")
    p.add_argument("result")
    p.add_argument("labels")
    p.add_argument("--report", help="also write the report to this file")
    p.add_argument("--csv", help="append a metrics row to this CSV")
    p.add_argument("--run", help="run name for the CSV row")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the single-solve pipeline")
    p.add_argument("--sizes", default="100,200,400", help="comma-separated n values")
    p.add_argument("--gamma", type=float, default=0.02)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("event=usage-error msg=%s", exc)
        return EXIT_USAGE
    except NumericalFailure as exc:
        log.error("event=numerical-failure msg=%s", exc)
        return EXIT_NUMERIC
    except (FormatError, IdMismatch, EmptyOutput, CapacityExceeded, OSError, KeyError, ValueError) as exc:
        log.error("event=data-error type=%s msg=%s", type(exc).__name__, exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
