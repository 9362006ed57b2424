"""Command-line runner: the synthetic noise sweep and adaptation from embedding files.

Config files are flat ``key = value`` text; ``#`` starts a comment. Keys::

    transform      emd | semd | sinkhorn | sinkhorn_lpl1 | sinkhorn_l1l2 | coral | identity  (sinkhorn)
    metric         comma list of CC, PC, MMD, kMMD, HoMM, CORAL, CORAL_Jeff, CORAL_Stein  (kMMD)
    bounds         comma list of selected, oracle_upper, none_lower  (all three)
    b_grid         comma list from 0.0, 0.1, ..., 1.9, or "all"  (all)
    seeds          comma list of nonnegative ints, or "a-b" for a range  (0-9)
    classifier     nearest_centroid | linear_softmax  (nearest_centroid)
    cost_metric    sqeuclidean | euclidean | cityblock | cosine | minkowski  (sqeuclidean)
    minkowski_p    float > 0  (2)
    normalization  median | max | log | loglog | none  (loglog)
    epsilon        entropic weight, > 0  (0.1)
    eta            class-regularization weight, >= 0  (0.5)
    reg_lap        Laplacian-regularization weight, >= 0  (0.1)
    max_iter, tol, outer_iter, max_cg_iter   solver budgets  (10000, 1e-6, 10, 10)
    oos_mode       residual | barycentric  (residual)
    bandwidth      kMMD kernel width, or "auto" for the median heuristic  (auto)
    homm_order, homm_cap                      (3, 1000000)
    ridge          covariance ridge, or "auto"  (auto)
    n_target, n_adapt, n_val                  samples per class in the sweep  (100, 50, 50)

Exit codes: 0 success, 2 bad config or input, 3 numerical failure (results
so far are still written), 4 output directory not writable.
"""

import argparse
import dataclasses
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import report
from .data import MAX_NOISE, read_embeddings_file, synthetic_splits, write_embeddings_file
from .errors import ConfigError, NumericalFailure, ParseError, TsdaptError
from .metrics import TAGS, MetricKind
from .ot import METRICS, NORMALIZATIONS
from .pipeline import (
    BOUNDS,
    CLASSIFIERS,
    TRANSFORM_KINDS,
    OtParams,
    bound_embeddings,
    fit_class_transforms,
    fit_classifier,
    label_space_size,
    make_report,
    resolve_metric,
)

log = logging.getLogger("tsdapt")

B_GRID = tuple(i / 10 for i in range(20))

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OUTPUT = 0, 2, 3, 4


@dataclass(frozen=True)
class ExperimentConfig:
    transform: str = "sinkhorn"
    metrics: tuple = ("kMMD",)
    bounds: tuple = BOUNDS
    b_grid: tuple = B_GRID
    seeds: tuple = tuple(range(10))
    classifier: str = "nearest_centroid"
    cost_metric: str = "sqeuclidean"
    minkowski_p: float = 2.0
    normalization: str = "loglog"
    epsilon: float = 0.1
    eta: float = 0.5
    reg_lap: float = 0.1
    max_iter: int = 10_000
    tol: float = 1e-6
    outer_iter: int = 10
    max_cg_iter: int = 10
    oos_mode: str = "residual"
    bandwidth: object = None
    homm_order: int = 3
    homm_cap: int = 1_000_000
    ridge: object = None
    n_target: int = 100
    n_adapt: int = 50
    n_val: int = 50

    def ot_params(self):
        return OtParams(
            self.cost_metric, self.minkowski_p, self.normalization, self.epsilon, self.eta,
            self.reg_lap, self.max_iter, self.tol, self.outer_iter, self.max_cg_iter, self.oos_mode,
        )

    def metric_kind(self, tag):
        return MetricKind(tag, self.bandwidth, self.homm_order, self.homm_cap, self.ridge)


# ---------------------------------------------------------------------------
# config parsing


def _words(text):
    items = tuple(w.strip() for w in text.split(",") if w.strip())
    if not items:
        raise ValueError("empty list")
    return items


def _choice_list(allowed):
    def parse(text):
        items = _words(text)
        bad = [w for w in items if w not in allowed]
        if bad:
            raise ValueError(f"{bad[0]!r} not in {', '.join(allowed)}")
        return tuple(dict.fromkeys(items))

    return parse


def _choice(allowed):
    def parse(text):
        if text not in allowed:
            raise ValueError(f"{text!r} not in {', '.join(allowed)}")
        return text

    return parse


def _b_grid(text):
    if text == "all":
        return B_GRID
    out = []
    for w in _words(text):
        b = float(w)
        k = round(b * 10)
        if not (0 <= k <= 19 and abs(b - k / 10) < 1e-9):
            raise ValueError(f"b={w} is not one of 0.0, 0.1, ..., {MAX_NOISE}")
        out.append(k / 10)
    return tuple(sorted(set(out)))


def _seeds(text):
    out = []
    for w in _words(text):
        if "-" in w:
            lo, hi = (int(v) for v in w.split("-", 1))
            if hi < lo:
                raise ValueError(f"empty seed range {w!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(w))
    if any(s < 0 for s in out):
        raise ValueError("seeds must be nonnegative")
    return tuple(sorted(set(out)))


def _positive(cast):
    def parse(text):
        v = cast(text)
        if not v > 0:
            raise ValueError(f"must be > 0, got {text}")
        return v

    return parse


def _nonnegative(text):
    v = float(text)
    if not v >= 0:
        raise ValueError(f"must be >= 0, got {text}")
    return v


def _auto_or(parse):
    return lambda text: None if text == "auto" else parse(text)


_KEYS = {
    "transform": ("transform", _choice(TRANSFORM_KINDS)),
    "metric": ("metrics", _choice_list(TAGS)),
    "bounds": ("bounds", _choice_list(BOUNDS)),
    "b_grid": ("b_grid", _b_grid),
    "seeds": ("seeds", _seeds),
    "classifier": ("classifier", _choice(CLASSIFIERS)),
    "cost_metric": ("cost_metric", _choice(METRICS)),
    "minkowski_p": ("minkowski_p", _positive(float)),
    "normalization": ("normalization", _choice(NORMALIZATIONS)),
    "epsilon": ("epsilon", _positive(float)),
    "eta": ("eta", _nonnegative),
    "reg_lap": ("reg_lap", _nonnegative),
    "max_iter": ("max_iter", _positive(int)),
    "tol": ("tol", _positive(float)),
    "outer_iter": ("outer_iter", _positive(int)),
    "max_cg_iter": ("max_cg_iter", _positive(int)),
    "oos_mode": ("oos_mode", _choice(("residual", "barycentric"))),
    "bandwidth": ("bandwidth", _auto_or(_positive(float))),
    "homm_order": ("homm_order", _positive(int)),
    "homm_cap": ("homm_cap", _positive(int)),
    "ridge": ("ridge", _auto_or(_nonnegative)),
    "n_target": ("n_target", _positive(int)),
    "n_adapt": ("n_adapt", _positive(int)),
    "n_val": ("n_val", _positive(int)),
}


def parse_config_text(text, source="<config>"):
    """Parse flat ``key = value`` lines into an :class:`ExperimentConfig`.

    Raises
    ------
    ConfigError
        Unknown or repeated key, malformed line, or invalid value.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        field_name, parse = _KEYS[key]
        if field_name in values:
            raise ConfigError(f"{source}:{lineno}: key {key!r} given twice")
        try:
            values[field_name] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return ExperimentConfig(**values)


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config_text(text, str(path))


def apply_overrides(cfg, seed=None, transform=None, metric=None):
    """Command-line overrides, validated like config values."""
    changes = {}
    try:
        if seed is not None:
            changes["seeds"] = _seeds(str(seed))
        if transform is not None:
            changes["transform"] = _choice(TRANSFORM_KINDS)(transform)
        if metric is not None:
            changes["metrics"] = _choice_list(TAGS)(metric)
    except ValueError as exc:
        raise ConfigError(f"bad override: {exc}") from None
    return dataclasses.replace(cfg, **changes)


# ---------------------------------------------------------------------------
# runs


def run_point(cfg, b, seed):
    """Evaluate one (b, seed) grid point; returns its result rows."""
    splits = synthetic_splits(b, seed, cfg.n_target, cfg.n_adapt, cfg.n_val)
    transforms = fit_class_transforms(splits.target_train, splits.source_adapt, cfg.transform, cfg.ot_params(), cfg.ridge)
    clf = fit_classifier(splits.target_train, cfg.classifier, seed)
    K = label_space_size(splits.source_val, splits.target_train, clf)
    rows = []
    for bound in cfg.bounds:
        # the two bounds do not depend on the selection metric
        tags = cfg.metrics if bound == "selected" else cfg.metrics[:1]
        for tag in tags:
            Z = bound_embeddings(splits.source_val, transforms, splits.target_train, cfg.metric_kind(tag), bound)
            acc = make_report(splits.source_val.y, clf.predict(Z), bound, K).accuracy
            labels = cfg.metrics if bound != "selected" else (tag,)
            rows.extend(report.ResultRow(b, seed, bound, m, cfg.transform, acc) for m in labels)
    return rows


def _threads():
    raw = os.environ.get("TSDAPT_THREADS", "")
    try:
        n = int(raw) if raw.strip() else (os.cpu_count() or 1)
    except ValueError:
        raise ConfigError(f"TSDAPT_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def run_synthetic_sweep(cfg, out_dir, threads=1):
    """Run every (b, seed) point and write the report.

    Raises :class:`NumericalFailure` after flushing the rows finished so far.
    """
    points = [(b, s) for b in cfg.b_grid for s in cfg.seeds]
    rows = []
    start = time.perf_counter()
    try:
        if threads > 1 and len(points) > 1:
            with ProcessPoolExecutor(max_workers=min(threads, len(points))) as pool:
                futures = [pool.submit(run_point, cfg, b, s) for b, s in points]
                for fut in futures:
                    rows.extend(fut.result())
        else:
            for b, s in points:
                rows.extend(run_point(cfg, b, s))
                log.debug("b=%s seed=%d done", report.format_b(b), s)
    except NumericalFailure:
        if rows:
            report.write_results(rows, out_dir)
        raise
    log.info("sweep: %d points in %.1f s", len(points), time.perf_counter() - start)
    report.emit_report(rows, out_dir)
    return rows


def _read_input(path, what):
    if not Path(path).is_file():
        raise ConfigError(f"{what} file not found: {path}")
    return read_embeddings_file(path)


def run_from_files(cfg, target_path, adapt_path, val_path, out_dir):
    """Adapt from three embedding files; writes accuracy, per-class and confusion CSVs.

    Returns ``{(bound, metric): EvalReport}``.
    """
    target = _read_input(target_path, "target")
    adapt = _read_input(adapt_path, "adapt")
    val = _read_input(val_path, "val")
    for name, data in (("adapt", adapt), ("val", val)):
        if data.dim != target.dim:
            raise ConfigError(f"dimension mismatch: target has d={target.dim}, {name} has d={data.dim}")
        if data.n_classes != target.n_classes:
            raise ConfigError(f"class count mismatch: target has K={target.n_classes}, {name} has K={data.n_classes}")
    seed = cfg.seeds[0]

    timings = {}
    t = time.perf_counter()
    transforms = fit_class_transforms(target, adapt, cfg.transform, cfg.ot_params(), cfg.ridge)
    clf = fit_classifier(target, cfg.classifier, seed)
    timings["fit"] = time.perf_counter() - t
    K = label_space_size(val, target, clf)

    reports = {}
    timings["select"] = timings["classify"] = 0.0
    for bound in cfg.bounds:
        for tag in cfg.metrics if bound == "selected" else cfg.metrics[:1]:
            metric = resolve_metric(cfg.metric_kind(tag), target)
            t = time.perf_counter()
            Z = bound_embeddings(val, transforms, target, metric, bound)
            t1 = time.perf_counter()
            pred = clf.predict(Z) if len(val) else np.empty(0, dtype=np.int64)
            t2 = time.perf_counter()
            timings["select"] += t1 - t
            timings["classify"] += t2 - t1
            reports[(bound, tag if bound == "selected" else "")] = make_report(val.y, pred, bound, K)
    for phase, sec in timings.items():
        log.info("%s: %.4f s", phase, sec)

    out = Path(out_dir)
    lines = ["bound,metric,transform,accuracy"]
    for (bound, tag), rep in sorted(reports.items()):
        lines.append(f"{bound},{tag},{cfg.transform},{rep.accuracy!r}")
        stem = f"{bound}_{tag}" if tag else bound
        per_class = ["class,count,accuracy"]
        for c in range(K):
            per_class.append(f"{c},{int(rep.confusion[c].sum())},{rep.per_class_accuracy[c]!r}")
        report._write(out / f"per_class_{stem}.csv", per_class)
        confusion = ["true\\pred," + ",".join(str(c) for c in range(K))]
        for c in range(K):
            confusion.append(f"{c}," + ",".join(str(v) for v in rep.confusion[c]))
        report._write(out / f"confusion_{stem}.csv", confusion)
    report._write(out / "accuracy.csv", lines)
    report._write(out / "timings.csv", ["phase,seconds"] + [f"{p},{s!r}" for p, s in timings.items()])
    return reports


def export_synthetic(b, seed, out_dir, n_target=100, n_adapt=50, n_val=50):
    """Write one synthetic (b, seed) point as three embedding files."""
    splits = synthetic_splits(b, seed, n_target, n_adapt, n_val)
    out = Path(out_dir)
    paths = {}
    for name, data in (("target", splits.target_train), ("adapt", splits.source_adapt), ("val", splits.source_val)):
        paths[name] = out / f"{name}.csv"
        write_embeddings_file(paths[name], data)
    return paths


# ---------------------------------------------------------------------------
# entry point


def _prepare_out(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".tsdapt-write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise PermissionError(f"output directory {out} is not writable: {exc.strerror or exc}") from None
    return out


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    parser = argparse.ArgumentParser(prog="tsdapt", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--seed", help="override the seeds key (int or a-b range)")
        p.add_argument("--transform", help="override the transform key")
        p.add_argument("--metric", help="override the metric key")

    sweep = sub.add_parser("sweep", help="synthetic noise sweep", parents=[common])
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out", required=True)
    overrides(sweep)

    adapt = sub.add_parser("adapt", help="adapt from embedding files", parents=[common])
    adapt.add_argument("--config", required=True)
    adapt.add_argument("--target", required=True)
    adapt.add_argument("--adapt", required=True)
    adapt.add_argument("--val", required=True)
    adapt.add_argument("--out", required=True)
    overrides(adapt)

    export = sub.add_parser("export-synthetic", help="write one synthetic point as embedding files", parents=[common])
    export.add_argument("--b", type=float, required=True)
    export.add_argument("--seed", type=int, default=0)
    export.add_argument("--out", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="tsdapt: %(message)s", stream=sys.stderr, force=True)
    try:
        if args.command == "export-synthetic":
            out = _prepare_out(args.out)
            export_synthetic(args.b, args.seed, out)
            return EXIT_OK
        cfg = apply_overrides(load_config(args.config), args.seed, args.transform, args.metric)
        threads = _threads()
        out = _prepare_out(args.out)
        if args.command == "sweep":
            run_synthetic_sweep(cfg, out, threads)
        else:
            run_from_files(cfg, args.target, args.adapt, args.val, out)
    except (ConfigError, ParseError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except PermissionError as exc:
        log.error("%s", exc)
        return EXIT_OUTPUT
    except OSError as exc:
        log.error("cannot write output: %s", exc)
        return EXIT_OUTPUT
    except TsdaptError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    return EXIT_OK


def entry():
    sys.exit(main())
