"""Command-line entry point: ``gcbandit {run,sweep,audit,lowerbound,complexity}``."""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys

import numpy as np

from . import complexity as cx
from . import experiment as ex
from . import lowerbound as lb
from .agents import AgentConfig, make_agent
from .errors import ConfigInvalid, GcbError
from .scm import LinearClass, NeuralNetClass, NodeFunction, PolynomialClass

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _load(args) -> dict:
    cfg = ex.load_config(args.config)
    if args.seed is not None:
        cfg.setdefault("run", {})["seed"] = args.seed
    if args.out_dir is not None:
        cfg.setdefault("output", {})["dir"] = str(args.out_dir)
    ex.validate_config(cfg)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    summary = ex.run_experiment(cfg, plots=False if args.no_plots else None, workers=args.workers)
    sys.stdout.write(summary.to_csv())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    summary = ex.run_sweep(cfg, plots=False if args.no_plots else None, workers=args.workers)
    sys.stdout.write(summary.to_csv())
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = _load(args)
    rep = ex.coverage_audit(cfg, args.delta, args.replicates)
    print(f"failures {rep.failures} / {rep.checks}  rate {rep.rate:.6g}  "
          f"threshold 2*delta+3se {rep.threshold:.6g}  {'PASS' if rep.passed else 'FAIL'}")
    return EXIT_OK


def _agent_factory(name: str, T: int):
    if name == "constant":
        return None
    if name == "uniform":
        return lb.uniform_factory
    return lambda env, arms, rng: make_agent(name, env, T, AgentConfig(), rng, arms)


def cmd_lowerbound(args) -> int:
    delta = args.delta if args.delta is not None else 1.0 / math.sqrt(args.T)
    pair = lb.build_pair(args.cls, args.d, args.L, delta)
    factory = _agent_factory(args.agent, args.T) or lb.constant_factory(pair.astar_g1)
    rep = lb.minimax_stress(factory, pair, args.T, args.replicates, args.seed or 0)
    row = {
        "class": args.cls, "d": args.d, "L": args.L, "T": args.T, "delta": delta,
        "agent": args.agent, "gap": pair.gap, "exact_gap": pair.exact_gap,
        "kl_bound": lb.kl_bound(pair, args.T),
        "regret_g1": rep.mean_g1, "regret_g2": rep.mean_g2,
        "floor_exact": rep.floor.exact if rep.floor else math.nan,
        "floor_simplified": rep.floor.simplified if rep.floor else math.nan,
    }
    print(f"pair {args.cls} d={args.d} L={args.L} delta={delta:.6g}")
    print(f"  a*_G1 = {pair.astar_g1.tolist()}  a*_G2 = {pair.astar_g2.tolist()}")
    print(f"  gap = {pair.gap:.6g} (exact {pair.exact_gap:.6g})  KL bound = {row['kl_bound']:.6g}")
    print(f"  {args.agent}: R_G1 = {rep.mean_g1:.6g}  R_G2 = {rep.mean_g2:.6g}  max = {rep.max_mean:.6g}")
    if rep.floor:
        print(f"  floor exact = {rep.floor.exact:.6g}  simplified = {rep.floor.simplified:.6g}")
    else:
        print("  floor undefined (needs T >= 5 and delta = 1/sqrt(T))")
    sys.stdout.write(_csv([row]))
    return EXIT_OK


def _random_members(kind: str, arity: int, n: int, width: int, rng: np.random.Generator) -> list[NodeFunction]:
    members = []
    for _ in range(n):
        if kind == "linear":
            cls = LinearClass(arity)
            params = {"theta": rng.uniform(-1, 1, arity), "theta_bar": rng.uniform(-1, 1, arity)}
        elif kind == "quadratic":
            cls = PolynomialClass(arity, 2)
            params = {"theta": rng.uniform(-1, 1, arity + 1)}
        else:
            cls = NeuralNetClass(arity, width)
            params = {"W1": rng.uniform(-1, 1, (width, arity + 1)), "w2": rng.uniform(-1, 1, width)}
        members.append(NodeFunction(cls, params))
    return members


def cmd_complexity(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    width = args.width or args.arity + 1
    axis = np.linspace(0.0, 1.0, args.grid)
    xs = np.stack(np.meshgrid(*([axis] * args.arity), indexing="ij"), -1).reshape(-1, args.arity)
    inputs = [(tuple(x), a) for x in xs for a in (0.0, 1.0)]
    sample = cx.FiniteClassSample.from_functions(
        _random_members(args.cls, args.arity, args.members, width, rng), inputs)
    eluder = cx.eluder_dimension_search(sample, args.eps, args.restarts, rng)
    cover = cx.covering_number_greedy(sample, args.alpha)
    cls = {"linear": LinearClass(args.arity, args.K),
           "quadratic": PolynomialClass(args.arity, 2, args.K),
           "neural": NeuralNetClass(args.arity, width, lipschitz_bound=args.K)}[args.cls]
    theory = cx.theoretical_dim_and_cn(cls, args.T)
    print(f"class {args.cls} arity={args.arity}: {sample.n_functions} functions on {sample.n_inputs} inputs")
    for rep in (eluder, cover):
        how = "exact" if rep.exact else "search bound"
        print(f"  {rep.measure} = {rep.value} ({how}, parameter {rep.epsilon:g})")
    print(f"  closed form at T={args.T}: dim = {theory.dim:.6g}  ln N = {theory.log_cn:.6g}  [{theory.note}]")
    sys.stdout.write(_csv([eluder.as_row(), cover.as_row()]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcbandit", description="Causal bandits with unknown SCMs.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the base seed")
    common.add_argument("--workers", type=int, default=None, help="parallel replicate workers")
    common.add_argument("--out-dir", default=None, help="directory for config copy, CSVs and SVGs")
    common.add_argument("--no-plots", action="store_true", help="skip SVG rendering")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, help_ in (("run", cmd_run, "run one experiment config"),
                            ("sweep", cmd_sweep, "run every point of the config's sweep axes"),
                            ("audit", cmd_audit, "confidence-set coverage audit (GCB-UCB)")):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("config", help="TOML config file")
        sp.set_defaults(func=fn)
        if name == "audit":
            sp.add_argument("--delta", type=float, default=None)
            sp.add_argument("--replicates", type=int, default=None)

    sp = sub.add_parser("lowerbound", parents=[common], help="adversarial instance pair report")
    sp.add_argument("--class", dest="cls", choices=("linear", "poly", "nn"), required=True)
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--T", type=int, required=True)
    sp.add_argument("--agent", default="constant",
                    choices=("constant", "uniform", "gcb-ts", "gcb-ucb", "ucb", "linsem"))
    sp.add_argument("--delta", type=float, default=None, help="defaults to 1/sqrt(T)")
    sp.add_argument("--replicates", type=int, default=5)
    sp.set_defaults(func=cmd_lowerbound)

    sp = sub.add_parser("complexity", parents=[common], help="eluder dimension and covering number")
    sp.add_argument("--class", dest="cls", choices=("linear", "quadratic", "neural"), default="linear")
    sp.add_argument("--arity", type=int, default=1)
    sp.add_argument("--members", type=int, default=6, help="random class members to tabulate")
    sp.add_argument("--grid", type=int, default=3, help="points per parent coordinate on [0, 1]")
    sp.add_argument("--width", type=int, default=None)
    sp.add_argument("--eps", type=float, default=0.5)
    sp.add_argument("--alpha", type=float, default=0.25)
    sp.add_argument("--restarts", type=int, default=16)
    sp.add_argument("--K", type=float, default=1.0, help="Lipschitz bound for the closed form")
    sp.add_argument("--T", type=int, default=100)
    sp.set_defaults(func=cmd_complexity)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GcbError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
