"""Command-line interface: ``lhr {synth,recover,lrr,phase,cluster,replay}``.

Every run writes its outputs plus one ``manifest.json`` into ``--out-dir``.
The manifest records the resolved arguments, so ``lhr replay`` can rerun a
command and compare output digests.

Exit codes: 0 success, 1 usage or I/O error, 2 solver did not converge.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .admm import SolverConfig
from .cluster import (
    DEFAULT_PCA_DIMS,
    DEFAULT_WINDOW,
    cluster_points,
    pca_reduce,
    read_labels,
    read_stock_csv,
    stock_features,
)
from .matcore import MatrixError, format_matrix_csv, read_matrix_csv
from .mm import SolveError, lhr_solve_lrr, lhr_solve_rpca, lrr_solve, pcp_solve
from .synth import FEASIBLE_TOL, phase_scan, planted_instance, relative_error

logger = logging.getLogger("lhr")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2
MANIFEST_NAME = "manifest.json"
WORKERS_ENV = "LHR_NUM_WORKERS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers -----------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Outputs:
    """Collects output files in memory and writes them all at the end.

    Nothing touches the output directory until every input has been read
    and validated.
    """

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        if os.sep in name or name == MANIFEST_NAME:
            raise ValueError(f"invalid output name {name!r}")
        self.files[name] = text

    def write(self, manifest: dict) -> dict:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        digests = {}
        for name, text in self.files.items():
            _atomic_write(self.out_dir / name, text)
            digests[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()
        manifest["outputs"] = {n: {"path": n, "sha256": d} for n, d in digests.items()}
        _atomic_write(self.out_dir / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def _read_matrix(path) -> np.ndarray:
    try:
        return read_matrix_csv(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None
    except MatrixError as exc:
        raise UsageError(str(exc)) from None


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    conv.__name__ = kind.__name__
    return conv


def _gamma(text):
    if text == "auto":
        return text
    return _positive(float)(text)


def _scale(text):
    if text in ("median", "mean", "none"):
        return text
    return _positive(float)(text)


def _add_solver_flags(p: argparse.ArgumentParser, lam_help: str) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--lambda", dest="lam", type=_positive(float), default=None, help=lam_help)
    g.add_argument("--delta1", type=_positive(float), default=None,
                   help="log-sum offset for E in data-scale units (default 0.3, LRR 1.0)")
    g.add_argument("--delta2", type=_positive(float), default=None,
                   help="log-sum offset for singular values (default 0.3, LRR 1.0)")
    g.add_argument("--outer-tol", type=_positive(float), default=1e-5)
    g.add_argument("--outer-max", type=_positive(int), default=10)
    g.add_argument("--inner-tol", type=_positive(float), default=1e-7)
    g.add_argument("--inner-max", type=_positive(int), default=500)
    g.add_argument("--mu0", type=_positive(float), default=None, help="initial penalty (default 1.25/||P||_2)")
    g.add_argument("--rho", type=float, default=1.1, help="penalty growth factor (> 1)")
    g.add_argument("--gamma", type=_gamma, default="auto", help="gradient A-step size or 'auto'")
    g.add_argument("--a-step", choices=("exact", "gradient"), default="exact")
    g.add_argument("--scale", type=_scale, default="median",
                   help="data scale: median, mean, none or a number")


def _config(args) -> SolverConfig:
    try:
        return SolverConfig(
            lam=args.lam, delta1=args.delta1, delta2=args.delta2, mu0=args.mu0, rho=args.rho,
            gamma=args.gamma, a_step=args.a_step, inner_tol=args.inner_tol,
            inner_max_iters=args.inner_max, outer_tol=args.outer_tol,
            outer_max_iters=args.outer_max, scale=args.scale,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _base_manifest(args, command: str, inputs: dict) -> dict:
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "out_dir", "verbose")}
    return {
        "command": command,
        "version": __version__,
        "args": resolved,
        "seed": getattr(args, "seed", None),
        "inputs": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in inputs.items()},
    }


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    if not (0 <= args.rank <= min(args.rows, args.cols)):
        raise UsageError(f"--rank must be in [0, {min(args.rows, args.cols)}]")
    if not 0.0 <= args.error_rate <= 1.0:
        raise UsageError("--error-rate must be in [0, 1]")
    tic = time.perf_counter()
    inst = planted_instance(args.rows, args.cols, args.rank, args.error_rate, args.seed)
    out = Outputs(args.out_dir)
    out.add("P.csv", format_matrix_csv(inst.p))
    out.add("Astar.csv", format_matrix_csv(inst.a_star))
    out.add("Estar.csv", format_matrix_csv(inst.e_star))
    man = _base_manifest(args, "synth", {})
    man["summary"] = {"rank": args.rank, "error_count": int(np.count_nonzero(inst.e_star))}
    man["config"] = None
    man["wall_time"] = time.perf_counter() - tic
    out.write(man)
    print(f"wrote P.csv, Astar.csv, Estar.csv to {args.out_dir} "
          f"(rank {args.rank}, {man['summary']['error_count']} errors)")
    return EXIT_OK


def _solve_and_write(args, command: str, solver: Callable, method: str) -> int:
    p = _read_matrix(args.input)
    inputs = {"input": args.input}
    truth = None
    if args.truth is not None:
        truth = _read_matrix(args.truth)
        inputs["truth"] = args.truth
    cfg = _config(args)
    lrr = command == "lrr"
    if truth is not None:
        want = (p.shape[1], p.shape[1]) if lrr else p.shape
        if truth.shape != want:
            raise UsageError(f"truth shape {truth.shape} does not match expected {want}")

    tic = time.perf_counter()
    try:
        res = solver(p, cfg)
        failure = None
    except SolveError as exc:
        res, failure = exc.partial, str(exc)
    wall = time.perf_counter() - tic

    result = res.to_manifest()
    result["method"] = method
    result["failure"] = failure
    if truth is not None:
        result["rel_error"] = relative_error(res.a, truth)
    if lrr:
        result["residual"] = float(np.linalg.norm(p - p @ res.a - res.e) / max(np.linalg.norm(p), 1e-300))
    out = Outputs(args.out_dir)
    out.add("A.csv", format_matrix_csv(res.a))
    out.add("E.csv", format_matrix_csv(res.e))
    out.add("result.json", json.dumps(_json_safe(result), indent=2, sort_keys=True) + "\n")
    man = _base_manifest(args, command, inputs)
    man["config"] = res.config.to_dict() if res.config is not None else cfg.to_dict()
    man["wall_time"] = wall
    out.write(man)

    msg = f"{method}: rank(A)={res.rank_of_a} card(E)={res.card_of_e} outer={res.outer_iterations}"
    if "rel_error" in result:
        msg += f" rel_error={result['rel_error']:.3e}"
    print(msg)
    if failure or not res.converged:
        print(f"warning: solver did not converge{': ' + failure if failure else ''}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_recover(args) -> int:
    solver = lhr_solve_rpca if args.method == "lhr" else pcp_solve
    return _solve_and_write(args, "recover", solver, args.method)


def cmd_lrr(args) -> int:
    solver = lhr_solve_lrr if args.method == "lhr" else lrr_solve
    return _solve_and_write(args, "lrr", solver, "lhr-lrr" if args.method == "lhr" else "lrr")


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise UsageError(f"{WORKERS_ENV} must be a positive integer, got {env!r}")
        return n
    return 1


def cmd_phase(args) -> int:
    cfg = _config(args)
    workers = _workers(args)
    methods = ["pcp", "lhr"] if args.method == "both" else [args.method]
    for step in (args.eta_step, args.xi_step):
        n = round(1.0 / step) if step > 0 else 0
        if not (0 < step <= 1) or abs(n * step - 1.0) > 1e-9:
            raise UsageError(f"grid step {step} must be positive and divide 1")
    tic = time.perf_counter()
    out = Outputs(args.out_dir)
    grids = {}
    for method in methods:
        def progress(done, total, method=method):
            if args.verbose:
                print(f"{method}: {done}/{total} cells", file=sys.stderr)

        grid = phase_scan(
            args.size, args.size, args.eta_step, args.xi_step, args.trials, method,
            cfg=cfg, seed=args.seed, workers=workers, progress=progress,
        )
        grids[method] = grid
        out.add(f"phase_{method}.csv", grid.to_csv())
        out.add(f"phase_{method}.json", grid.to_json(indent=1) + "\n")
    man = _base_manifest(args, "phase", {})
    man["args"]["workers"] = workers
    man["config"] = cfg.to_dict()
    man["summary"] = {
        m: {"feasible_cells": len(g.feasible_cells()), "feasible_tol": FEASIBLE_TOL}
        for m, g in grids.items()
    }
    man["wall_time"] = time.perf_counter() - tic
    out.write(man)
    for m, g in grids.items():
        cells = g.feasible_cells()
        reach = max((e + x for e, x in cells), default=float("nan"))
        print(f"{m}: {len(cells)} feasible cells, max eta+xi {reach:.2f}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    cfg = _config(args)
    inputs = {"input": args.input}
    flagged = 0
    try:
        if args.no_normalize:
            x = _read_matrix(args.input)
            names = [str(i) for i in range(x.shape[1])]
            if args.dims is not None:
                x = pca_reduce(x, args.dims)
        else:
            table = read_stock_csv(args.input)
            names = table.assets
            x, flagged = stock_features(
                table, args.window, args.dims if args.dims is not None else DEFAULT_PCA_DIMS,
                drop_prefix=args.drop_prefix,
            )
        labels = None
        if args.truth is not None:
            labels = read_labels(args.truth, None if args.no_normalize else names)
            inputs["truth"] = args.truth
    except OSError as exc:
        raise UsageError(f"cannot read input: {exc}") from None
    except ValueError as exc:  # includes MatrixError / StockCsvError
        raise UsageError(str(exc)) from None
    if not 1 <= args.k <= x.shape[1]:
        raise UsageError(f"--k must be in [1, {x.shape[1]}]")
    if labels is not None and (len(labels) != x.shape[1] or labels.min() < 0 or labels.max() >= args.k):
        raise UsageError(f"labels must give one value in [0, {args.k}) per sample")

    tic = time.perf_counter()
    try:
        res = cluster_points(x, args.k, labels, cfg, seed=args.seed, weighted=args.method == "lhr")
    except SolveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    wall = time.perf_counter() - tic

    out = Outputs(args.out_dir)
    out.add("assignments.csv", "sample,cluster\n" + "".join(
        f"{n},{int(c)}\n" for n, c in zip(names, res.assignments)))
    summary = {
        "k": args.k,
        "samples": len(names),
        "error_rate": res.error_rate,
        "isolated_samples": res.isolated,
        "flagged_entries": flagged,
        "recovery": res.recovery.to_manifest(),
    }
    out.add("result.json", json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n")
    man = _base_manifest(args, "cluster", inputs)
    man["config"] = res.recovery.config.to_dict()
    man["wall_time"] = wall
    out.write(man)
    msg = f"{args.method}: {args.k} clusters over {len(names)} samples"
    if res.error_rate is not None:
        msg += f", clustering error {res.error_rate:.4f}"
    print(msg)
    if not res.recovery.converged:
        print("warning: LRR solve did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_replay(args) -> int:
    """Rerun the command recorded in a manifest and compare output digests."""
    try:
        with open(args.manifest) as fh:
            man = json.load(fh)
        command, recorded = man["command"], man["args"]
        outputs = man["outputs"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load manifest {args.manifest}: {exc}") from None
    if command not in COMMANDS or command == "replay":
        raise UsageError(f"manifest command {command!r} cannot be replayed")
    ns = argparse.Namespace(**recorded)
    ns.out_dir = args.out_dir
    ns.verbose = False
    ns.func = COMMANDS[command]
    code = ns.func(ns)
    mismatched = []
    for name, info in outputs.items():
        path = Path(args.out_dir) / name
        if not path.exists() or sha256_file(path) != info["sha256"]:
            mismatched.append(name)
    if mismatched:
        print(f"replay differs in: {', '.join(sorted(mismatched))}", file=sys.stderr)
        return EXIT_USAGE
    print(f"replay of {command}: {len(outputs)} outputs identical")
    return code


COMMANDS = {
    "synth": cmd_synth,
    "recover": cmd_recover,
    "lrr": cmd_lrr,
    "phase": cmd_phase,
    "cluster": cmd_cluster,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lhr", description="Log-sum heuristic low-rank recovery")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a planted low-rank + sparse instance")
    p.add_argument("--rows", type=_positive(int), required=True)
    p.add_argument("--cols", type=_positive(int), required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--error-rate", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("recover", help="recover P = A + E")
    p.add_argument("--input", required=True, help="matrix-csv file holding P")
    p.add_argument("--truth", help="matrix-csv of the true A, for scoring")
    p.add_argument("--method", choices=("lhr", "pcp"), default="lhr")
    p.add_argument("--seed", type=int, default=0, help="recorded only; the solvers are deterministic")
    p.add_argument("--out-dir", required=True)
    _add_solver_flags(p, "l1 weight (default 1/sqrt(max(m, n)))")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("lrr", help="low-rank representation P = P A + E")
    p.add_argument("--input", required=True, help="matrix-csv file, one sample per column")
    p.add_argument("--truth", help="matrix-csv of a reference representation, for scoring")
    p.add_argument("--method", choices=("lhr", "lrr"), default="lhr")
    p.add_argument("--seed", type=int, default=0, help="recorded only; the solvers are deterministic")
    p.add_argument("--out-dir", required=True)
    _add_solver_flags(p, "weight of ||E||_1 / ||P||_2 (default 0.4)")
    p.set_defaults(func=cmd_lrr)

    p = sub.add_parser("phase", help="feasible-region scan over rank and error rates")
    p.add_argument("--method", choices=("lhr", "pcp", "both"), default="both")
    p.add_argument("--size", type=_positive(int), default=100)
    p.add_argument("--eta-step", type=float, default=0.1)
    p.add_argument("--xi-step", type=float, default=0.1)
    p.add_argument("--trials", type=_positive(int), default=5)
    p.add_argument("--workers", type=_positive(int), default=None,
                   help=f"process pool size (default ${WORKERS_ENV} or 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    _add_solver_flags(p, "l1 weight (default 1/sqrt(size))")
    p.set_defaults(func=cmd_phase)

    p = sub.add_parser("cluster", help="subspace clustering of stock prices or points")
    p.add_argument("--input", required=True,
                   help="stock CSV (date column + one column per asset) or, with --no-normalize, matrix-csv points")
    p.add_argument("--truth", "--labels", dest="truth", help="label file: one integer per line or name,label rows")
    p.add_argument("--k", type=_positive(int), required=True)
    p.add_argument("--no-normalize", action="store_true", help="input is a matrix-csv of column samples")
    p.add_argument("--window", type=_positive(int), default=DEFAULT_WINDOW, help="normalization window")
    p.add_argument("--drop-prefix", action="store_true", help="drop the first --window rows after normalizing")
    p.add_argument("--dims", type=_positive(int), default=None,
                   help=f"PCA dimensions (default {DEFAULT_PCA_DIMS} for stock input, none for points)")
    p.add_argument("--method", choices=("lhr", "lrr"), default="lhr")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    _add_solver_flags(p, "weight of ||E||_1 / ||P||_2 (default 0.4)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("replay", help="rerun a manifest and check outputs are identical")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
