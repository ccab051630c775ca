"""Batch experiment runner: ``jaffardkit {pointset,matrix,check,spectral,invert,run,compare}``.

Configuration precedence is command-line flags > ``--config`` JSON > built-in defaults.
``JAFFARDKIT_THREADS`` caps how many tasks of one run execute concurrently.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .blockop import (
    BlockMatrix,
    column_pnorm_bound,
    entry_sup,
    involve,
    load_matrix,
    multiply,
    operator_norm_l2,
    save_matrix,
)
from .errors import JaffardKitError, ParameterError
from .inversion import inverse_closedness_experiment, write_decay_csv
from .jaffard import algebra_norm_bracket, hermitize, jaffard_norm, random_jaffard, triangle_weight_check
from .pointset import (
    PointSet,
    convolution_constant,
    counting_constant,
    load_pointset,
    make_jittered,
    make_lattice,
    neighbor_partition,
    point_sum_constant,
    save_pointset,
    tail_sum,
)
from .spectral import (
    embedding_constant,
    gamma_check,
    gamma_constant,
    radius_comparison,
    true_radius_selfadjoint,
)

logger = logging.getLogger("jaffardkit")

SCHEMA_VERSION = 1
OUTPUT_KEYS = ("out", "format")
TASKS = ("norms", "lemma-constants", "gamma", "radius", "invert")

DEFAULT_CONFIG = {
    "pointset": {"kind": "lattice", "dim": 1, "extent": 32, "spacing": 1.0, "jitter": 0.0, "seed": 0, "path": None},
    "matrix": {"kind": "random", "block_dim": 2, "s": 2.0, "amplitude": 1.0, "seed": 0, "hermitize": False, "path": None},
    "task": "all",
    "tolerances": {
        "chain": 1e-8,
        "radius_gap": 0.1,
        "radius_oracle": 1e-3,
        "residual": 1e-6,
        "agreement": 1e-6,
        "exponent_slack": 0.5,
    },
    "settings": {"k_max": 6, "bracket_samples": 50, "perturbation": 0.5, "interior_margin": None},
    "out": "jaffardkit-out",
    "format": "both",
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def make_config(overrides=None) -> dict:
    cfg = _merge(DEFAULT_CONFIG, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg) -> None:
    task = cfg["task"]
    allowed = set(TASKS) | {"all", "check"}
    if task not in allowed:
        raise ParameterError(f"unknown task {task!r}; expected one of {sorted(allowed)}")
    ps, mx = cfg["pointset"], cfg["matrix"]
    if ps["kind"] not in ("lattice", "jittered", "file"):
        raise ParameterError(f"unknown pointset kind {ps['kind']!r}")
    if mx["kind"] not in ("random", "identity", "file"):
        raise ParameterError(f"unknown matrix kind {mx['kind']!r}")
    for name, value in (("pointset.seed", ps["seed"]), ("matrix.seed", mx["seed"])):
        if not isinstance(value, int) or not 0 <= value < 2**64:
            raise ParameterError(f"{name} must be an integer in [0, 2^64)")
    if not isinstance(mx["block_dim"], int) or mx["block_dim"] < 1:
        raise ParameterError("matrix.block_dim must be a positive integer")
    if cfg["format"] not in ("json", "csv", "both"):
        raise ParameterError(f"unknown format {cfg['format']!r}")


def build_pointset(cfg) -> PointSet:
    ps = cfg["pointset"]
    if ps["kind"] == "file":
        return load_pointset(ps["path"])
    if ps["kind"] == "jittered":
        return make_jittered(ps["dim"], ps["extent"], ps["spacing"], ps["jitter"], ps["seed"])
    return make_lattice(ps["dim"], ps["extent"], ps["spacing"])


def build_matrix(cfg, X: PointSet) -> BlockMatrix:
    mx = cfg["matrix"]
    if mx["kind"] == "file":
        return load_matrix(mx["path"])
    if mx["kind"] == "identity":
        return BlockMatrix.identity(X, mx["block_dim"])
    A = random_jaffard(X, mx["block_dim"], mx["s"], mx["amplitude"], mx["seed"])
    return hermitize(A) if mx["hermitize"] else A


def _fragment(anchor, values, checks=None):
    return {"anchor": anchor, "values": values, "checks": checks or {}}


def task_norms(cfg, X, A, side):
    s = cfg["matrix"]["s"]
    tol = cfg["tolerances"]["chain"]
    jn = jaffard_norm(A, s)
    op = operator_norm_l2(A)
    es = entry_sup(A)
    col = column_pnorm_bound(A, 2)
    K = embedding_constant(X, s)
    C = convolution_constant(X, s)
    bracket = algebra_norm_bracket(A, s, cfg["settings"]["bracket_samples"], cfg["matrix"]["seed"])
    AA = multiply(A, involve(A))
    return [
        _fragment(
            "jaffard-norm",
            {"jaffard_norm": jn, "jaffard_norm_involution": jaffard_norm(involve(A), s)},
            {"isometric_involution": abs(jaffard_norm(involve(A), s) - jn) <= 1e-12 * jn},
        ),
        _fragment(
            "operator-norm-inequalities",
            {"entry_sup": es, "column_bound_p2": col, "operator_norm_l2": op},
            {"entry_le_column": es <= col + tol, "column_le_operator": col <= op + tol},
        ),
        _fragment(
            "embedding",
            {"operator_norm_l2": op, "embedding_constant": K, "majorant": K * jn},
            {"operator_le_majorant": op <= K * jn * (1 + 1e-12)},
        ),
        _fragment(
            "submultiplicativity",
            {"product_norm": jaffard_norm(AA, s), "convolution_constant": C, "majorant": C * jn * jn},
            {"product_le_majorant": jaffard_norm(AA, s) <= C * jn * jn * (1 + 1e-9)},
        ),
        _fragment(
            "algebra-norm-equivalence",
            bracket.to_json(),
            {"bracket_ordered": bracket.lower <= bracket.upper, "jaffard_le_upper": jn <= bracket.upper},
        ),
    ]


def task_lemma_constants(cfg, X, A, side):
    s = cfg["matrix"]["s"]
    d = X.dim
    rho = X.relsep_count
    center = int(np.argmin(np.sum((X.points - X.points.mean(axis=0)) ** 2, axis=1)))
    taus = [1, 2, 4, 8]
    near = [len(neighbor_partition(X, center, t).near) for t in taus]
    tails = [tail_sum(X, center, t, s) for t in taus]
    near_bound = 2**d * rho * 2**d
    scaled_tails = [tl * t ** (s - d) for tl, t in zip(tails, taus)]
    triangle = triangle_weight_check(X, s, trials=20000, seed=cfg["pointset"]["seed"])
    return [
        _fragment("relative-separation", X.describe(), {"relsep_positive": rho >= 1}),
        _fragment("point-sum-bound", {"point_sum_constant": point_sum_constant(X, s), "extent": X.extent}),
        _fragment("convolution-bound", {"convolution_constant": convolution_constant(X, s), "extent": X.extent}),
        _fragment(
            "counting-lemma",
            {
                "center": center,
                "tau": taus,
                "near_counts": near,
                "tail_sums": tails,
                "scaled_tails": scaled_tails,
                "counting_constant_tau_ge_1": counting_constant(X, s, 1.0),
            },
            {"near_count_law": all(n / t**d <= near_bound for n, t in zip(near, taus))},
        ),
        _fragment("weight-triangle-inequality", {"max_ratio": triangle, "bound": 2.0**s}, {"below_bound": triangle < 2.0**s}),
    ]


def task_gamma(cfg, X, A, side):
    s = cfg["matrix"]["s"]
    rep = gamma_check(A, s)
    bound = gamma_constant(X, s)
    return [_fragment("squaring-inequality", {**rep.to_json(), "constant": bound}, {"ratio_le_constant": rep.ratio <= bound})]


def task_radius(cfg, X, A, side):
    s = cfg["matrix"]["s"]
    tol = cfg["tolerances"]
    H = hermitize(A)
    cmp = radius_comparison(H, s, cfg["settings"]["k_max"])
    oracle = true_radius_selfadjoint(H)
    side["gelfand_jaffard.csv"] = cmp.jaffard_sequence.write_csv
    side["gelfand_l2.csv"] = cmp.l2_sequence.write_csv
    rel_gap = abs(cmp.gap) / cmp.r_l2 if cmp.r_l2 > 0 else 0.0
    oracle_err = abs(cmp.r_l2 - oracle) / oracle if oracle > 0 else abs(cmp.r_l2)
    return [
        _fragment(
            "radius-comparison",
            {
                "r_jaffard": cmp.r_jaffard,
                "r_l2": cmp.r_l2,
                "gap": cmp.gap,
                "oracle_radius": oracle,
                "jaffard_sequence": cmp.jaffard_sequence.to_json(),
                "l2_sequence": cmp.l2_sequence.to_json(),
            },
            {"relative_gap_ok": rel_gap <= tol["radius_gap"], "oracle_agreement_ok": oracle_err <= tol["radius_oracle"]},
        )
    ]


def task_invert(cfg, X, A, side):
    mx, st, tol = cfg["matrix"], cfg["settings"], cfg["tolerances"]
    rep = inverse_closedness_experiment(X, mx["block_dim"], mx["s"], st["perturbation"], mx["seed"], st["interior_margin"])
    side["decay_pairs.csv"] = lambda path: write_decay_csv(rep, path)
    checks = {
        "residual_certificate": rep.residual <= tol["residual"] and rep.neumann_residual <= tol["residual"],
        "methods_agree": rep.method_agreement <= tol["agreement"],
    }
    if rep.inverse_envelope is not None:
        checks["inverse_decay"] = rep.inverse_envelope.exponent >= mx["s"] - tol["exponent_slack"]
    return [_fragment("inverse-closedness", rep.to_json(), checks)]


TASK_FUNCS = {
    "norms": task_norms,
    "lemma-constants": task_lemma_constants,
    "gamma": task_gamma,
    "radius": task_radius,
    "invert": task_invert,
}


def _selected_tasks(task):
    if task == "all":
        return list(TASKS)
    if task == "check":
        return ["norms", "lemma-constants", "gamma"]
    return [task]


def _threads():
    try:
        return max(1, int(os.environ.get("JAFFARDKIT_THREADS", "1")))
    except ValueError:
        return 1


def run(config: dict, write: bool = True) -> dict:
    """Execute the configured tasks and return the report; optionally write it under ``config['out']``."""
    cfg = make_config(config)
    X = build_pointset(cfg)
    A = build_matrix(cfg, X)
    tasks = _selected_tasks(cfg["task"])
    side_files = {}

    def execute(name):
        side = {}
        start = time.perf_counter()
        try:
            result = TASK_FUNCS[name](cfg, X, A, side)
            error = None
        except JaffardKitError as exc:
            result, error = None, f"{type(exc).__name__}: {exc}"
        return name, result, error, side, time.perf_counter() - start

    with ThreadPoolExecutor(max_workers=min(_threads(), len(tasks))) as pool:
        outcomes = list(pool.map(execute, tasks))

    results, errors, timings = {}, {}, {}
    for name, result, error, side, elapsed in outcomes:
        timings[name] = elapsed
        if error is not None:
            errors[name] = error
        else:
            results[name] = result
            side_files.update(side)
    passed = not errors and all(all(frag["checks"].values()) for frags in results.values() for frag in frags)
    report = {
        "schema_version": SCHEMA_VERSION,
        "toolkit_version": __version__,
        "config": cfg,
        "results": results,
        "errors": errors,
        "passed": passed,
        "timings": timings,
    }
    if write:
        write_report(report, cfg["out"], cfg["format"], side_files)
    return report


def _atomic_write(path: Path, writer) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _flatten(prefix, obj, rows):
    if isinstance(obj, dict):
        for key, value in obj.items():
            _flatten(f"{prefix}.{key}" if prefix else str(key), value, rows)
    elif isinstance(obj, list) and any(isinstance(v, (dict, list)) for v in obj):
        for i, value in enumerate(obj):
            _flatten(f"{prefix}[{i}]", value, rows)
    else:
        rows.append((prefix, obj))


def write_report(report: dict, out_dir, fmt: str = "both", side_files=None) -> None:
    out = Path(out_dir)
    if fmt in ("json", "both"):
        _atomic_write(out / "report.json", lambda p: Path(p).write_text(json.dumps(report, indent=2, sort_keys=True)))
    if fmt in ("csv", "both"):
        def summary(p):
            rows = []
            for task, frags in report["results"].items():
                for frag in frags:
                    _flatten(f"{task}.{frag['anchor']}", {"values": frag["values"], "checks": frag["checks"]}, rows)
            with open(p, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["field", "value"])
                writer.writerows((k, json.dumps(v)) for k, v in rows)

        _atomic_write(out / "summary.csv", summary)
        for name, writer in (side_files or {}).items():
            _atomic_write(out / name, writer)


def _numeric(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_fragment_list(x):
    return isinstance(x, list) and bool(x) and all(isinstance(f, dict) and "anchor" in f for f in x)


def compare_runs(report_a: dict, report_b: dict, tolerances: dict | None = None, default_rtol: float = 0.0) -> dict:
    """Numeric differences between two reports' results and configs (timings are ignored).

    ``tolerances`` maps a field-path prefix to a relative tolerance; the longest
    matching prefix wins.
    """
    va, vb = report_a.get("schema_version"), report_b.get("schema_version")
    if va != vb or va is None:
        raise ParameterError(f"report schemas differ or are missing: {va!r} vs {vb!r}")
    tolerances = tolerances or {}
    diffs, mismatched = [], []

    def rtol_for(path):
        hits = [p for p in tolerances if path.startswith(p)]
        return tolerances[max(hits, key=len)] if hits else default_rtol

    def walk(path, a, b):
        if isinstance(a, dict) and isinstance(b, dict):
            for key in sorted(set(a) | set(b)):
                sub = f"{path}.{key}" if path else key
                if key not in a or key not in b:
                    mismatched.append(sub)
                else:
                    walk(sub, a[key], b[key])
        elif _is_fragment_list(a) and _is_fragment_list(b):
            walk(path, {f["anchor"]: f for f in a}, {f["anchor"]: f for f in b})
        elif isinstance(a, list) and isinstance(b, list):
            if len(a) != len(b):
                mismatched.append(path)
            for i, (x, y) in enumerate(zip(a, b)):
                walk(f"{path}[{i}]", x, y)
        elif _numeric(a) and _numeric(b):
            if a == b or (math.isnan(a) and math.isnan(b)):
                return
            delta = abs(a - b)
            scale = max(abs(a), abs(b))
            if delta > rtol_for(path) * scale:
                diffs.append({"field": path, "a": a, "b": b, "abs": delta, "rel": delta / scale if scale else math.inf})
        elif a != b:
            mismatched.append(path)

    strip = lambda cfg: {k: v for k, v in (cfg or {}).items() if k not in OUTPUT_KEYS}
    walk("config", strip(report_a.get("config")), strip(report_b.get("config")))
    for section in ("results", "errors", "passed"):
        walk(section, report_a.get(section), report_b.get(section))
    return {"identical": not diffs and not mismatched, "diffs": diffs, "mismatched": mismatched}


def _parent_parser():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON config document")
    p.add_argument("--task", help="norms | lemma-constants | gamma | radius | invert | all | check")
    p.add_argument("--seed", type=int, help="seed for both the point set and the matrix")
    p.add_argument("--extent", type=int, help="lattice extent L")
    p.add_argument("--s", type=float, dest="s", help="decay exponent")
    p.add_argument("--block-dim", type=int, help="block dimension m")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("json", "csv", "both"))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    parent = _parent_parser()
    parser = argparse.ArgumentParser(prog="jaffardkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pointset", parents=[parent], help="generate a point set and print its constants")
    sub.add_parser("matrix", parents=[parent], help="generate a decaying block matrix file")
    sub.add_parser("check", parents=[parent], help="norm, lemma-constant and squaring-inequality checks")
    sub.add_parser("spectral", parents=[parent], help="spectral radius comparison")
    sub.add_parser("invert", parents=[parent], help="inverse decay experiment")
    sub.add_parser("run", parents=[parent], help="run the configured task(s)")
    cmp = sub.add_parser("compare", parents=[parent], help="diff two report.json files")
    cmp.add_argument("report_a", type=Path)
    cmp.add_argument("report_b", type=Path)
    cmp.add_argument("--rtol", type=float, default=0.0)
    return parser


def config_from_args(args) -> dict:
    cfg = json.loads(args.config.read_text()) if args.config else {}
    cfg = _merge(DEFAULT_CONFIG, cfg)
    if args.seed is not None:
        cfg["pointset"]["seed"] = args.seed
        cfg["matrix"]["seed"] = args.seed
    if args.extent is not None:
        cfg["pointset"]["extent"] = args.extent
    if args.s is not None:
        cfg["matrix"]["s"] = args.s
    if args.block_dim is not None:
        cfg["matrix"]["block_dim"] = args.block_dim
    if args.out is not None:
        cfg["out"] = args.out
    if args.format is not None:
        cfg["format"] = args.format
    fixed = {"check": "check", "spectral": "radius", "invert": "invert"}
    if args.command in fixed:
        cfg["task"] = fixed[args.command]
    elif args.task is not None:
        cfg["task"] = args.task
    validate_config(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            a = json.loads(args.report_a.read_text())
            b = json.loads(args.report_b.read_text())
            diff = compare_runs(a, b, default_rtol=args.rtol)
            print(json.dumps(diff, indent=2))
            return 0 if diff["identical"] else 1
        cfg = config_from_args(args)
        out = Path(cfg["out"])
        if args.command == "pointset":
            X = build_pointset(cfg)
            _atomic_write(out / "pointset.json", lambda p: save_pointset(X, p))
            print(json.dumps(X.describe()))
            return 0
        if args.command == "matrix":
            X = build_pointset(cfg)
            A = build_matrix(cfg, X)
            fmt = "json" if cfg["format"] == "json" and len(X) * A.block_dim <= 64 else "binary"
            out.mkdir(parents=True, exist_ok=True)
            save_matrix(A, out / "matrix.json", fmt)
            print(json.dumps({"jaffard_norm": jaffard_norm(A, cfg["matrix"]["s"]), "operator_norm_l2": operator_norm_l2(A)}))
            return 0
        report = run(cfg)
    except (JaffardKitError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    status = "PASS" if report["passed"] else "FAIL"
    for name, frags in report["results"].items():
        for frag in frags:
            failed = [k for k, ok in frag["checks"].items() if not ok]
            print(f"{name:16s} {frag['anchor']:28s} {'FAIL ' + ','.join(failed) if failed else 'ok'}")
    for name, err in report["errors"].items():
        print(f"{name:16s} ERROR {err}")
    print(f"{status} -> {Path(cfg['out']).resolve()}")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
