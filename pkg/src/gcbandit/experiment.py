"""Declarative experiments: config parsing, seeded replication, traces and summaries.

Config files are TOML with tables ``[graph]``, ``[scm]`` (defaults plus
``[scm.nodes.<id>]`` overrides), ``[agent]``, ``[run]``, ``[sweep]`` and
``[output]``. Every output row carries the config hash and the base seed.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import complexity as cx
from .agents import AgentConfig, GcbAgent, RegretTrace, coverage_failures, make_agent, run_agent
from .errors import ConfigInvalid, GcbError
from .graph import Dag, compute_stats, hierarchical_graph
from .scm import (
    GaussianNoise,
    InterventionSpace,
    LinearClass,
    NeuralNetClass,
    NodeFunction,
    OracleTable,
    PolynomialClass,
    RademacherNoise,
    Scm,
    ZeroNoise,
    oracle_table,
)

CSV_COLUMNS = ("config_hash", "seed", "replicate", "t", "a_vec", "reward", "inst_regret", "cum_regret")
PURPOSE = {"prior": 0, "env": 1, "agent": 2, "oracle": 3}
CLASSES = ("linear", "quadratic", "neural")
DEFAULT_RUN = {"T": 1000, "replicates": 20, "seed": 0, "oracle_rollouts": 20000, "workers": 1}


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigInvalid("<file>", f"no such config file: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid("<file>", f"TOML parse error: {exc}") from None
    validate_config(cfg)
    return cfg


def parse_config(text: str) -> dict:
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid("<file>", f"TOML parse error: {exc}") from None
    validate_config(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def run_section(cfg: dict) -> dict:
    out = dict(DEFAULT_RUN)
    out.update(cfg.get("run", {}))
    return out


def _expect(cond, path, msg):
    if not cond:
        raise ConfigInvalid(path, msg)


def validate_config(cfg: dict) -> None:
    g = cfg.get("graph")
    _expect(isinstance(g, dict), "graph", "missing [graph] table")
    kind = g.get("kind", "hierarchical")
    if kind == "hierarchical":
        for k in ("d", "L"):
            _expect(isinstance(g.get(k), int) and g[k] >= 1, f"graph.{k}", "must be an integer >= 1")
    elif kind == "edges":
        _expect(isinstance(g.get("nodes"), int) and g["nodes"] >= 1, "graph.nodes", "must be an integer >= 1")
        _expect(isinstance(g.get("edges", []), list), "graph.edges", "must be a list of [from, to] pairs")
    else:
        raise ConfigInvalid("graph.kind", f"unknown graph kind {kind!r}")
    s = cfg.get("scm", {})
    _expect(isinstance(s, dict), "scm", "must be a table")
    _validate_node_spec(s, "scm")
    for nid, spec in s.get("nodes", {}).items():
        _expect(str(nid).isdigit(), f"scm.nodes.{nid}", "node keys must be integer ids")
        _validate_node_spec(spec, f"scm.nodes.{nid}")
    _expect(s.get("mode", "soft") in ("soft", "do"), "scm.mode", "must be 'soft' or 'do'")
    a = cfg.get("agent", {})
    _expect(a.get("name", "gcb-ts") in ("gcb-ucb", "gcb-ts", "ucb", "linsem"), "agent.name",
            "must be one of gcb-ucb, gcb-ts, ucb, linsem")
    names = {f.name for f in fields(AgentConfig)}
    for k in a:
        _expect(k == "name" or k in names, f"agent.{k}", "unknown agent setting")
    try:
        _agent_config(cfg)
    except ValueError as exc:
        raise ConfigInvalid("agent", str(exc)) from None
    r = run_section(cfg)
    _expect(isinstance(r["T"], int) and r["T"] >= 1, "run.T", "must be an integer >= 1")
    _expect(isinstance(r["replicates"], int) and r["replicates"] >= 1, "run.replicates", "must be >= 1")
    _expect(isinstance(r["seed"], int) and r["seed"] >= 0, "run.seed", "must be a nonnegative integer")
    for k, v in cfg.get("sweep", {}).items():
        _expect(k in ("T", "d", "L", "agent"), f"sweep.{k}", "sweep axes are T, d, L, agent")
        _expect(isinstance(v, list) and len(v) > 0, f"sweep.{k}", "axis must be a nonempty list")


def _validate_node_spec(spec: dict, path: str):
    if "class" in spec:
        _expect(spec["class"] in CLASSES, f"{path}.class", f"must be one of {', '.join(CLASSES)}")
    if "space" in spec:
        _expect(spec["space"] in ("binary", "interval", "finite"), f"{path}.space", "must be binary, interval or finite")
    if "noise" in spec:
        nz = spec["noise"]
        _expect(isinstance(nz, dict) and nz.get("kind") in ("gaussian", "rademacher", "zero"),
                f"{path}.noise", "noise needs kind = gaussian | rademacher | zero")
        if nz.get("kind") == "gaussian":
            _expect(nz.get("variance", 1.0) >= 0, f"{path}.noise.variance", "must be >= 0")
    if "resolution" in spec:
        _expect(isinstance(spec["resolution"], int) and spec["resolution"] >= 2, f"{path}.resolution", "must be >= 2")


def _agent_config(cfg: dict) -> AgentConfig:
    a = {k: v for k, v in cfg.get("agent", {}).items() if k != "name"}
    return AgentConfig(**a)


def build_dag(cfg: dict) -> Dag:
    g = cfg["graph"]
    if g.get("kind", "hierarchical") == "hierarchical":
        return hierarchical_graph(g["d"], g["L"])
    try:
        return Dag.from_edges(g["nodes"], g.get("edges", []))
    except (ValueError, GcbError) as exc:
        raise ConfigInvalid("graph.edges", str(exc)) from None


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------

def _node_spec(cfg: dict, i: int, is_root: bool) -> dict:
    s = cfg.get("scm", {})
    spec = {k: v for k, v in s.items() if k != "nodes"}
    if is_root and "root_noise" in s:
        spec["noise"] = s["root_noise"]
    spec.update(s.get("nodes", {}).get(str(i), {}))
    return spec


def _noise(spec: dict):
    nz = spec.get("noise", {"kind": "gaussian", "variance": 1.0})
    if nz["kind"] == "gaussian":
        return GaussianNoise(float(nz.get("variance", 1.0)), float(nz.get("mean", 0.0)))
    if nz["kind"] == "rademacher":
        return RademacherNoise()
    return ZeroNoise()


# Neural instances act on a coarse interval grid so the joint arm set stays enumerable.
DEFAULT_RESOLUTION = {"linear": 11, "quadratic": 11, "neural": 3}


def _space(spec: dict, default: str, kind_of_class: str = "linear") -> InterventionSpace:
    kind = spec.get("space", default)
    if kind == "finite":
        return InterventionSpace("finite", values=tuple(spec.get("values", (0.0, 1.0))))
    return InterventionSpace(kind, int(spec.get("resolution", DEFAULT_RESOLUTION.get(kind_of_class, 11))))


def prior_defaults(kind: str, d: int) -> tuple[float, float]:
    """Prior (mean, sd) of every weight for the default protocol of each class."""
    if kind == "quadratic":
        m = 1.0 / (d + 1)
    elif kind == "neural":
        m = 1.0 / (2.0 * math.sqrt(d + 1))
    else:
        m = 1.0 / max(d, 1)
    return m, 0.1 * m


def _draw(shape, spec: dict, kind: str, d: int, rng: np.random.Generator, key: str = "prior"):
    prior = spec.get(key, {})
    m0, sd0 = prior_defaults(kind, d)
    m = float(prior.get("mean", m0))
    sd = float(prior.get("sd", 0.1 * abs(m) if "mean" in prior else sd0))
    return m + sd * rng.standard_normal(shape)


def build_instance(cfg: dict, replicate: int = 0, base_seed: int | None = None) -> Scm:
    """The SCM for one replicate: explicit parameters or a draw from the weight prior."""
    dag = build_dag(cfg)
    stats = compute_stats(dag)
    d = stats.max_in_degree
    seed = run_section(cfg)["seed"] if base_seed is None else base_seed
    mode = cfg.get("scm", {}).get("mode", "soft")
    fns, noises, spaces = [], [], []
    for i in range(1, dag.node_count + 1):
        di = len(dag.parents_of(i))
        spec = _node_spec(cfg, i, di == 0)
        path = f"scm.nodes.{i}"
        kind = spec.get("class", "linear")
        rng = stream(seed, replicate, i, "prior")
        params = spec.get("params")
        K = float(spec.get("K", math.inf))
        C = float(spec.get("C", 1.0))
        try:
            if kind == "linear":
                cls = LinearClass(di, K, C)
                if params is None:
                    params = {"theta": _draw(di, spec, kind, d, rng),
                              "theta_bar": _draw(di, spec, kind, d, rng, "prior_bar" if "prior_bar" in spec else "prior")}
                fn = NodeFunction(cls, {k: np.asarray(v, float) for k, v in params.items()})
                default_space = "binary"
            elif kind == "quadratic":
                cls = PolynomialClass(di, 2, K, C, degree_bound=d)
                if params is None:
                    params = {"theta": _draw(di + 1, spec, kind, d, rng)}
                fn = NodeFunction(cls, {"theta": np.asarray(params["theta"], float)})
                default_space = "binary"
            else:
                s = int(spec.get("width", d + 1))
                sp, sn = spec.get("slopes", [1.0, 0.1])
                cls = NeuralNetClass(di, s, float(sp), float(sn), K, C)
                if params is None:
                    params = {"W1": _draw((s, di + 1), spec, kind, d, rng), "w2": _draw(s, spec, kind, d, rng)}
                fn = NodeFunction(cls, {"W1": np.asarray(params["W1"], float).reshape(s, di + 1),
                                        "w2": np.asarray(params["w2"], float)})
                default_space = "interval"
            fns.append(fn)
            noises.append(_noise(spec))
            spaces.append(_space(spec, default_space, kind))
        except GcbError as exc:
            raise ConfigInvalid(path, str(exc)) from None
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigInvalid(path, f"bad node specification: {exc}") from None
    return Scm(dag, fns, noises, spaces, mode=mode, clamp=bool(cfg.get("scm", {}).get("clamp", False)))


def stream(base_seed: int, replicate: int, node: int, purpose: str) -> np.random.Generator:
    """Independent generator for ``(base, replicate, node, purpose)``."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(replicate, node, PURPOSE[purpose]))
    return np.random.default_rng(ss)


def instance_oracle(env: Scm, cfg: dict, replicate: int, seed: int) -> OracleTable:
    agent_cfg = _agent_config(cfg)
    return oracle_table(
        env,
        rng=stream(seed, replicate, 0, "oracle"),
        rollouts=int(run_section(cfg)["oracle_rollouts"]),
        resolution=agent_cfg.grid_resolution,
    )


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def run_replicate(cfg: dict, replicate: int) -> RegretTrace:
    run = run_section(cfg)
    seed, T = run["seed"], run["T"]
    env = build_instance(cfg, replicate, seed)
    oracle = instance_oracle(env, cfg, replicate, seed)
    name = cfg.get("agent", {}).get("name", "gcb-ts")
    agent = make_agent(name, env, T, _agent_config(cfg), stream(seed, replicate, 0, "agent"), arms=oracle.arms)
    trace = run_agent(agent, env, T, stream(seed, replicate, 0, "env"), oracle,
                      {"seed": seed, "replicate": replicate, "agent": name, "mu_star": oracle.best_value})
    return trace


def _run_replicate_star(args):
    return run_replicate(*args)


def iter_replicates(cfg: dict, workers: int | None = None):
    """Yield replicate traces in replicate order, in parallel when ``workers > 1``."""
    run = run_section(cfg)
    workers = run["workers"] if workers is None else workers
    jobs = [(cfg, r) for r in range(run["replicates"])]
    if workers <= 1:
        for j in jobs:
            yield run_replicate(*j)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_run_replicate_star, jobs)


def run_replicates(cfg: dict, workers: int | None = None) -> list[RegretTrace]:
    return list(iter_replicates(cfg, workers))


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def traces_csv(traces: list[RegretTrace], chash: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for tr in traces:
        seed, rep = tr.meta["seed"], tr.meta["replicate"]
        for t in range(len(tr)):
            w.writerow([
                chash, seed, rep, t + 1,
                ";".join(format(float(v), "g") for v in tr.arms[t]),
                format_float(tr.reward[t]),
                format_float(tr.inst_regret[t]),
                format_float(tr.cum_regret[t]),
            ])
    return buf.getvalue()


def loglog_slope(curve: np.ndarray) -> float:
    """OLS slope of ``ln R(t)`` on ``ln t`` over ``t in [T/2, T]`` (positive entries only)."""
    curve = np.asarray(curve, dtype=float)
    T = curve.size
    t = np.arange(1, T + 1, dtype=float)
    sel = (t >= T / 2.0) & (curve > 0)
    if sel.sum() < 2:
        return math.nan
    x, y = np.log(t[sel]), np.log(curve[sel])
    x0 = x - x.mean()
    return float((x0 * (y - y.mean())).sum() / (x0 * x0).sum())


@dataclass
class SummaryRow:
    label: str
    agent: str
    cls: str
    d: int
    L: int
    N: int
    T: int
    replicates: int
    mean_final: float
    se_final: float
    slope: float
    upper_bound: float
    lower_bound: float
    config_hash: str
    seed: int


@dataclass
class SummaryTable:
    rows: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)
    overlays: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def extend(self, other: "SummaryTable"):
        self.rows.extend(other.rows)
        self.curves.update(other.curves)
        self.overlays.update(other.overlays)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(SummaryRow)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for r in self.rows:
            w.writerow([format_float(v) if isinstance(v, float) else v for v in (getattr(r, n) for n in names)])
        return buf.getvalue()


def summarize(traces: list[RegretTrace], cfg: dict, label: str = "run") -> SummaryTable:
    cum = np.stack([tr.cum_regret for tr in traces])
    mean = cum.mean(axis=0)
    se = cum.std(axis=0, ddof=1) / math.sqrt(cum.shape[0]) if cum.shape[0] > 1 else np.zeros_like(mean)
    dag = build_dag(cfg)
    st = compute_stats(dag)
    kind = cfg.get("scm", {}).get("class", "linear")
    T = mean.size
    bound_kind = {"linear": "linear", "quadratic": "quadratic", "neural": "neural"}[kind]
    K = float(cfg.get("agent", {}).get("K", 1.0))
    curves_T = np.unique(np.linspace(1, T, min(T, 200)).astype(int))
    rows = cx.regret_bound_curves(bound_kind, K, max(st.max_in_degree, 1), st.max_depth, dag.node_count, curves_T)
    up = rows[-1][1] if rows else math.nan
    lo = rows[-1][2] if rows else math.nan
    run = run_section(cfg)
    row = SummaryRow(label, cfg.get("agent", {}).get("name", "gcb-ts"), kind, st.max_in_degree, st.max_depth,
                     dag.node_count, T, cum.shape[0], float(mean[-1]), float(se[-1]), loglog_slope(mean),
                     float(up), float(lo), config_hash(cfg), run["seed"])
    return SummaryTable([row], {label: (mean, se)}, {label: np.array(rows)})


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _output_dir(cfg: dict, out_dir) -> Path | None:
    if out_dir is not None:
        return Path(out_dir)
    o = cfg.get("output", {}).get("dir")
    return Path(o) if o else None


def run_experiment(cfg: dict, out_dir=None, plots: bool | None = None, workers: int | None = None,
                   label: str = "run") -> SummaryTable:
    """Run all replicates, persist config/traces/summary (and plots), return the summary."""
    traces: list[RegretTrace] = []
    target = _output_dir(cfg, out_dir)
    chash = config_hash(cfg)
    try:
        for tr in iter_replicates(cfg, workers):
            traces.append(tr)
    except KeyboardInterrupt:
        if target is not None and traces:
            _write(target / f"traces_{label}.partial.csv", traces_csv(traces, chash))
        raise
    summary = summarize(traces, cfg, label)
    if target is not None:
        _write(target / "config.json", json.dumps(cfg, sort_keys=True, indent=2, default=str) + "\n")
        _write(target / f"traces_{label}.csv", traces_csv(traces, chash))
        _write(target / "summary.csv", summary.to_csv())
        if plots if plots is not None else cfg.get("output", {}).get("plots", True):
            from .plotting import emit_plots

            emit_plots(summary, target, overlay=cfg.get("output", {}).get("overlay", True), config_hash=chash)
    return summary


def sweep_points(cfg: dict) -> list[tuple[str, dict]]:
    axes = cfg.get("sweep", {})
    if not axes:
        return [("run", cfg)]
    keys = [k for k in ("agent", "d", "L", "T") if k in axes]
    points = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        c = copy.deepcopy(cfg)
        c.pop("sweep", None)
        parts = []
        for k, v in zip(keys, combo):
            if k == "agent":
                c.setdefault("agent", {})["name"] = v
            elif k == "T":
                c.setdefault("run", {})["T"] = v
            else:
                if c["graph"].get("kind", "hierarchical") != "hierarchical":
                    raise ConfigInvalid(f"sweep.{k}", "d/L axes need a hierarchical graph")
                c["graph"][k] = v
            parts.append(f"{k}={v}")
        validate_config(c)
        points.append(("_".join(parts), c))
    return points


def run_sweep(cfg: dict, out_dir=None, plots: bool | None = None, workers: int | None = None) -> SummaryTable:
    points = sweep_points(cfg)
    if len(points) == 1 and points[0][0] == "run":
        return run_experiment(cfg, out_dir, plots, workers)
    target = _output_dir(cfg, out_dir)
    total = SummaryTable()
    for label, c in points:
        total.extend(run_experiment(c, target, False, workers, label))
    if target is not None:
        _write(target / "config.json", json.dumps(cfg, sort_keys=True, indent=2, default=str) + "\n")
        _write(target / "summary.csv", total.to_csv())
        if plots if plots is not None else cfg.get("output", {}).get("plots", True):
            from .plotting import emit_plots

            emit_plots(total, target, overlay=cfg.get("output", {}).get("overlay", True), config_hash=config_hash(cfg))
    return total


# ---------------------------------------------------------------------------
# Coverage audit
# ---------------------------------------------------------------------------

@dataclass
class CoverageReport:
    failures: int
    checks: int
    delta: float

    @property
    def rate(self) -> float:
        return self.failures / self.checks if self.checks else 0.0

    @property
    def se(self) -> float:
        p = self.rate
        return math.sqrt(p * (1 - p) / self.checks) if self.checks else 0.0

    @property
    def threshold(self) -> float:
        return 2 * self.delta + 3 * self.se

    @property
    def passed(self) -> bool:
        return self.rate <= self.threshold


def coverage_audit(cfg: dict, delta: float | None = None, replicates: int | None = None) -> CoverageReport:
    """Fraction of (replicate, node, round) triples where the true mechanism leaves its confidence set.

    Nodes without parameters (roots of a linear model) are not counted.
    """
    run = run_section(cfg)
    seed, T = run["seed"], run["T"]
    R = replicates if replicates is not None else run["replicates"]
    acfg = _agent_config(cfg)
    if delta is not None:
        acfg.delta = delta
    delta_used = acfg.delta if acfg.delta is not None else None
    fails = checks = 0
    for r in range(R):
        env = build_instance(cfg, r, seed)
        agent = GcbAgent(env, T, acfg, stream(seed, r, 0, "agent"), "ucb")
        env_rng = stream(seed, r, 0, "env")
        for t in range(1, T + 1):
            i = agent.select(t)
            X = env.sample_one(agent.arms[i], env_rng.random(env.n))
            agent.observe(i, X)
            live = np.array([lr.dim > 0 for lr in agent.learners])
            bad = coverage_failures(agent, env)
            fails += int(bad[live].sum())
            checks += int(live.sum())
        if delta_used is None:
            delta_used = agent.delta
    return CoverageReport(fails, checks, float(delta_used))
