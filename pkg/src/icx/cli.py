"""Experiment runner: code search, single runs, grid sweeps, audits.

Subcommands:
  codesearch  search/verify generator files for the windowed and block codes
  run         one simulation; emits the summary metrics JSON (exit 0 iff
              success, and zero audit violations when --audit is on)
  sweep       Monte-Carlo grid over (eps, strategy, seeds); emits CSV

Every emitted artifact embeds the resolved configuration and a
git-describe-style version string.  ICX_THREADS caps sweep parallelism.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import version_string
from .analysis import (
    PotentialConstants,
    audit_trace,
    classify_snapshot,
    final_progress_check,
    summarize,
)
from .codes import (
    CodeSearchParams,
    SearchExhausted,
    gv_search,
    rateless_search,
    save_code,
    verify_code_file,
)
from .engine import EngineConfig, run_rateless, run_simulation
from .protocol import Inputs, load_protocol, make_native_blocked, random_blocked_protocol
from .warmup import blocked_random_simulate, trivial_simulate_protocol

__all__ = ["main", "cmd_codesearch", "cmd_run", "cmd_sweep"]


def _engine_config(args, eps: float) -> EngineConfig:
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    overrides.setdefault("eps", eps)
    if args.eps_prime is not None:
        overrides["eps_prime"] = args.eps_prime
    if args.scheme == "rateless":
        overrides["exchange"] = "public"
    fields = EngineConfig.__dataclass_fields__
    return EngineConfig(**{k: v for k, v in overrides.items() if k in fields})


def _protocol(args, cfg: EngineConfig, seed: int):
    if args.protocol:
        tree = load_protocol(args.protocol)
        from .protocol import blocking_transform
        return blocking_transform(tree, cfg.B)
    n_blocks = max(1, args.rounds // cfg.B)
    return random_blocked_protocol(n_blocks, cfg.B, seed=seed)


def _single_run(args, eps: float, strategy, seed: int) -> dict:
    cfg = _engine_config(args, eps)
    proto = _protocol(args, cfg, seed)
    inputs = Inputs(2 * seed + 1, 2 * seed + 2)
    if args.scheme == "rateless":
        res = run_rateless(proto, inputs, cfg.eps_prime_val, eps, strategy,
                           cfg, seed)
    elif args.scheme == "trivial":
        out = trivial_simulate_protocol(proto.tree, eps, seed)
        return {"success": out.success, "rounds": out.coded_rounds,
                "rate": out.rate, "counts": {}, "phi_final": None}
    elif args.scheme == "blocked-random":
        out = blocked_random_simulate(proto.tree, eps, seed=seed)
        return {"success": out.success, "rounds": out.coded_rounds,
                "rate": out.rate, "counts": {}, "phi_final": None,
                "detail": out.detail}
    else:
        res = run_simulation(proto, inputs, eps, None, args.channel, strategy,
                             cfg, seed)
    metrics = summarize(res)
    if args.audit:
        rep = audit_trace(res.states, res.events, PotentialConstants(),
                          max(eps, 1e-4), cfg.b, cfg.B)
        cert, lb = final_progress_check(
            rep.phi_final, classify_snapshot(res.states[-1]), res.n_prime,
            eps, PotentialConstants(), cfg.b, cfg.B)
        metrics["audit"] = rep.to_dict()
        metrics["progress_certified"] = bool(cert)
    return metrics


def cmd_codesearch(args) -> int:
    params = CodeSearchParams(max_attempts=args.attempts, rng_seed=args.seed)
    try:
        if args.kind == "rateless":
            code = rateless_search(args.s, args.b, params)
        else:
            code = gv_search(args.k, args.n, args.d, params,
                             systematic=args.systematic)
    except SearchExhausted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    save_code(code, args.out)
    ok = verify_code_file(args.out)
    meta = {"file": str(args.out), "verified": bool(ok),
            "version": version_string()}
    print(json.dumps(meta))
    return 0 if ok else 1


def cmd_run(args) -> int:
    strategy = args.strategy if args.strategy != "none" else None
    metrics = _single_run(args, args.eps, strategy, args.seed)
    metrics["version"] = version_string()
    out = json.dumps(metrics, indent=2, sort_keys=True, default=_js)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out + "\n")
    print(out)
    ok = metrics["success"]
    if args.audit and "audit" in metrics:
        ok = ok and metrics["audit"]["ok"]
    return 0 if ok else 1


def _sweep_cell(payload):
    args_dict, eps, strategy, seed = payload
    args = argparse.Namespace(**args_dict)
    m = _single_run(args, eps, None if strategy == "none" else strategy, seed)
    return eps, strategy, seed, m


def cmd_sweep(args) -> int:
    eps_grid = [float(x) for x in args.eps.split(",")]
    strategies = args.strategy.split(",")
    seeds = list(range(args.runs))
    args_dict = {k: v for k, v in vars(args).items() if k != "fn"}
    cells = [(args_dict, eps, strat, seed)
             for eps in eps_grid for strat in strategies for seed in seeds]
    workers = int(os.environ.get("ICX_THREADS", "1"))
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, cells, chunksize=4))
    else:
        results = [_sweep_cell(c) for c in cells]

    rows = []
    for eps in eps_grid:
        for strat in strategies:
            cell = [m for (e, s, _, m) in results if e == eps and s == strat]
            n = len(cell)
            rows.append({
                "eps": eps,
                "strategy": strat,
                "runs": n,
                "success_rate": sum(m["success"] for m in cell) / n,
                "mean_rate": sum(m["rate"] for m in cell) / n,
                "mean_overhead": sum(1 / m["rate"] - 1 for m in cell) / n,
                "sound": sum(m["counts"].get("sound", 0) for m in cell),
                "invalid": sum(m["counts"].get("invalid", 0) for m in cell),
                "malicious": sum(m["counts"].get("malicious", 0) for m in cell),
            })
    header = list(rows[0].keys())
    dest = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(dest, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)
        cfg_echo = {k: v for k, v in vars(args).items() if k != "fn"}
        dest.write(f"# config={json.dumps(cfg_echo, default=str, sort_keys=True)}\n")
        dest.write(f"# version={version_string()}\n")
    finally:
        if args.out:
            dest.close()
    return 0


def _js(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(str(type(v)))


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="icx", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="cmd", required=True)

    cs = sub.add_parser("codesearch", help="search and emit verified generator files")
    cs.add_argument("--kind", choices=["rateless", "block"], default="rateless")
    cs.add_argument("--s", type=int, default=2)
    cs.add_argument("--b", type=int, default=4)
    cs.add_argument("--k", type=int, default=4)
    cs.add_argument("--n", type=int, default=8)
    cs.add_argument("--d", type=int, default=4)
    cs.add_argument("--systematic", action="store_true")
    cs.add_argument("--attempts", type=int, default=100000)
    cs.add_argument("--seed", type=int, default=0)
    cs.add_argument("--out", required=True)
    cs.set_defaults(fn=cmd_codesearch)

    def common(p):
        p.add_argument("--scheme", choices=["oblivious", "rateless", "trivial",
                                            "blocked-random"], default="oblivious")
        p.add_argument("--config", help="JSON file with EngineConfig overrides")
        p.add_argument("--protocol", help="protocol description JSON (file or inline)")
        p.add_argument("--rounds", type=int, default=4096)
        p.add_argument("--eps-prime", type=float, default=None)
        p.add_argument("--channel", choices=["oblivious", "bsc"], default="oblivious")
        p.add_argument("--audit", action="store_true")
        p.add_argument("--out")

    rn = sub.add_parser("run", help="single simulation, metrics JSON to stdout")
    common(rn)
    rn.add_argument("--eps", type=float, default=0.02)
    rn.add_argument("--strategy", default="uniform_random")
    rn.add_argument("--seed", type=int, default=0)
    rn.set_defaults(fn=cmd_run)

    sw = sub.add_parser("sweep", help="Monte-Carlo grid, CSV output")
    common(sw)
    sw.add_argument("--eps", default="0.005,0.01,0.02")
    sw.add_argument("--strategy", default="uniform_random,burst,redundancy_window")
    sw.add_argument("--runs", type=int, default=10)
    sw.add_argument("--seed", type=int, default=0)
    sw.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
