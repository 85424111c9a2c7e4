"""Command-line interface: simulate, fit, select-k, render and rerun.

Every command writes its outputs plus ``manifest.json`` into ``--out``. The
manifest stores the resolved arguments, seeds, version, timings and a SHA-256
of every output file; ``sbsgm rerun manifest.json`` repeats the run and
``--check`` verifies the outputs are byte-identical.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .em import FitConfig, FitResult, IsolatedNodesError, em_fit, select_k
from .gibbs import GibbsConfig
from .graphon import sample_network
from .io import InputError, load_model, read_edge_list, read_positions, save_model, write_csv, write_edge_list, write_positions
from .mstep import DEFAULT_LAMBDA_GRID, LAMBDA_INF

log = logging.getLogger("sbsgm")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 2, 3
MANIFEST = "manifest.json"


def _lambda_grid(text: str) -> tuple:
    try:
        vals = tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid lambda grid {text!r}") from exc
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("lambda grid needs nonnegative values")
    return vals


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--edges", required=True, help="edge list, two node indices per line")
    p.add_argument("--index-base", type=int, choices=(0, 1), default=0)
    p.add_argument("--knots", type=int, default=None, help="total knot budget L (default max(2K, sqrt(N)/2))")
    p.add_argument("--em-iters", type=int, default=25)
    p.add_argument("--gibbs-nu", type=float, default=0.8)
    p.add_argument("--gibbs-sigma", type=float, default=1.0)
    p.add_argument("--burn-in", type=int, default=50)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--keep", type=int, default=200)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-grid", type=_lambda_grid, default=None,
                   help="comma separated smoothing parameters (default 12 logspaced values 1e-2..1e6 plus 1e12)")
    p.add_argument("--lambda-inf", action="store_true", help="use only lambda = 1e12 (piecewise constant, SBM mode)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbsgm", description="Stochastic block smooth graphon models")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a network from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--index-base", type=int, choices=(0, 1), default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit a model with K communities")
    _add_fit_options(p)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("select-k", help="fit every K in [kmin, kmax] and pick the lowest criterion")
    _add_fit_options(p)
    p.add_argument("--kmin", type=int, default=1)
    p.add_argument("--kmax", type=int, default=3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="heat map of a model as SVG")
    p.add_argument("--model", required=True)
    p.add_argument("--positions", default=None)
    p.add_argument("--index-base", type=int, choices=(0, 1), default=0)
    p.add_argument("--log-scale", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="output directory (default: the original one)")
    p.add_argument("--check", action="store_true", help="fail unless outputs match the recorded hashes")
    return parser


def _config_from_args(args, K: int) -> FitConfig:
    if args.lambda_inf:
        grid = (LAMBDA_INF,)
    elif args.lambda_grid is not None:
        grid = args.lambda_grid
    else:
        grid = DEFAULT_LAMBDA_GRID
    threads = int(os.environ.get("SBSGM_THREADS", "1") or 1)
    try:
        gibbs = GibbsConfig(nu=args.gibbs_nu, sigma=args.gibbs_sigma, burn_in=args.burn_in,
                            thin=args.thin, keep=args.keep)
        return FitConfig(K=K, em_iterations=args.em_iters, gibbs=gibbs, lambda_grid=grid, n_knots=args.knots,
                         restarts=args.restarts, seed=args.seed, threads=max(1, threads))
    except ValueError as exc:
        raise InputError(f"invalid configuration: {exc}") from exc


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _fit_summary(fit: FitResult) -> dict:
    return {
        "K": fit.K, "N": fit.N,
        "zeta": [float(z) for z in fit.model.zeta],
        "lambda_hat": fit.lambda_hat.tolist(),
        "df": fit.df, "df_grid": fit.df_grid.tolist(),
        "log_likelihood": fit.log_likelihood, "aic": fit.aic, "criterion": fit.criterion,
        "converged": bool(fit.converged),
        "restart_criteria": [float(c) for c in fit.restart_criteria],
        "em_iterations_run": len(fit.trace) - 1,
    }


def _write_trace(path: Path, trace) -> None:
    header = ["iteration", "delta", "zeta", "accept_within", "accept_switch", "loglik", "df", "aic",
              "criterion", "empty_community_clamped", "mstep_converged"]
    rows = [[r["iteration"], r["delta"], ";".join(repr(z) for z in r["zeta"]), r["accept_within"],
             r["accept_switch"], r["loglik"], r["df"], r["aic"], r["criterion"],
             int(r["empty_community_clamped"]), int(r["mstep_converged"])] for r in trace]
    write_csv(path, header, rows)


def _write_fit(out: Path, fit: FitResult, index_base: int) -> list[str]:
    save_model(fit.model, out / "model.json")
    write_positions(out / "positions.csv", fit.positions, fit.labels, index_base)
    _write_trace(out / "trace.csv", fit.trace)
    _json_dump(_fit_summary(fit), out / "fit.json")
    return ["model.json", "positions.csv", "trace.csv", "fit.json"]


def cmd_simulate(args, out: Path, timings: dict):
    model = load_model(args.model)
    if args.n < 2:
        raise InputError("--n must be at least 2")
    t = time.perf_counter()
    net, state = sample_network(model, args.n, args.seed)
    timings["simulate"] = time.perf_counter() - t
    write_edge_list(net, out / "edges.txt", args.index_base)
    write_positions(out / "positions.csv", state.u, state.labels, args.index_base)
    info = {"seeds": {"seed": args.seed}, "inputs": {"model": args.model}}
    return ["edges.txt", "positions.csv"], info, EXIT_OK


def cmd_fit(args, out: Path, timings: dict):
    net = read_edge_list(args.edges, args.index_base)
    config = _config_from_args(args, args.k)
    t = time.perf_counter()
    fit = em_fit(net, config)
    timings["em_fit"] = time.perf_counter() - t
    files = _write_fit(out, fit, args.index_base)
    info = {"config": config.to_dict(), "inputs": {"edges": args.edges},
            "seeds": {"seed": config.seed, "restart_spawn_keys": [list(s.spawn_key) for s in
                                                                   np.random.SeedSequence(config.seed).spawn(config.restarts)]}}
    if not fit.converged:
        log.warning("fit did not converge; outputs written anyway")
    return files, info, EXIT_OK if fit.converged else EXIT_NONCONVERGED


def cmd_select_k(args, out: Path, timings: dict):
    if not 1 <= args.kmin <= args.kmax:
        raise InputError("need 1 <= kmin <= kmax")
    net = read_edge_list(args.edges, args.index_base)
    config = _config_from_args(args, args.kmin)
    t = time.perf_counter()
    best_K, table, fits = select_k(net, range(args.kmin, args.kmax + 1), config)
    timings["select_k"] = time.perf_counter() - t
    write_csv(out / "criterion.csv", ["K", "minus_2_loglik", "df", "criterion"], table)
    files = ["criterion.csv"] + _write_fit(out, fits[best_K], args.index_base)
    info = {"config": config.to_dict(), "inputs": {"edges": args.edges}, "best_K": best_K,
            "seeds": {"seed": config.seed}}
    ok = all(f.converged for f in fits.values())
    return files, info, EXIT_OK if ok else EXIT_NONCONVERGED


def cmd_render(args, out: Path, timings: dict):
    from .render import render_svg

    model = load_model(args.model)
    positions = read_positions(args.positions, args.index_base) if args.positions else None
    t = time.perf_counter()
    render_svg(model, out / "heatmap.svg", positions=positions, log_scale=args.log_scale)
    timings["render"] = time.perf_counter() - t
    inputs = {"model": args.model}
    if args.positions:
        inputs["positions"] = args.positions
    return ["heatmap.svg"], {"inputs": inputs}, EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select-k": cmd_select_k, "render": cmd_render}
_PATH_ARGS = ("model", "edges", "positions", "out")


def _resolved_arguments(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    for key in _PATH_ARGS:
        if d.get(key) is not None:
            d[key] = str(Path(d[key]).resolve())
    if isinstance(d.get("lambda_grid"), tuple):
        d["lambda_grid"] = list(d["lambda_grid"])
    return d


def _argv_from_arguments(arguments: dict) -> list[str]:
    argv = [arguments["command"]]
    for key, value in arguments.items():
        if key == "command" or value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
        elif isinstance(value, list):
            argv += [flag, ",".join(repr(float(v)) for v in value)]
        else:
            argv += [flag, str(value)]
    return argv


def run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    start = time.perf_counter()
    files, info, code = COMMANDS[args.command](args, out, timings)
    timings["total"] = time.perf_counter() - start
    manifest = {
        "command": args.command,
        "arguments": _resolved_arguments(args),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        **info,
        "outputs": {name: _sha256(out / name) for name in files},
        "exit_code": code,
        "timings_seconds": timings,
    }
    _json_dump(manifest, out / MANIFEST)
    return code


def rerun(args) -> int:
    path = Path(args.manifest)
    try:
        manifest = json.loads(path.read_text())
        arguments = dict(manifest["arguments"])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"{path}: not a readable run manifest ({exc})") from exc
    if args.out is not None:
        arguments["out"] = str(Path(args.out).resolve())
    new_args = build_parser().parse_args(_argv_from_arguments(arguments))
    code = run(new_args)
    if args.check:
        out = Path(new_args.out)
        bad = [name for name, digest in manifest["outputs"].items() if _sha256(out / name) != digest]
        if bad:
            print(f"outputs differ from the manifest: {', '.join(bad)}", file=sys.stderr)
            return 1
        print(f"all {len(manifest['outputs'])} outputs reproduced byte-identically")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return rerun(args) if args.command == "rerun" else run(args)
    except (InputError, IsolatedNodesError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
