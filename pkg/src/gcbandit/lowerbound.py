"""Two-instance lower-bound constructions on hierarchical graphs.

Both instances of a pair share graph and mechanisms; they differ only in the
node-1 noise, which is ``Bern(1/2 + delta)`` on one side of the node-1
intervention threshold and ``Bern(1/2)`` on the other, with the sides swapped
between ``g1`` and ``g2``. Node 1 is a root, so ``X_1 = eps_1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .agents import Agent, ConstantAgent, UniformAgent, run_agent
from .errors import DeltaMismatch, InvalidDelta, InvalidSlopes
from .graph import compute_stats, hierarchical_graph
from .scm import (
    BINARY,
    InterventionSpace,
    NeuralNetClass,
    NodeFunction,
    OracleTable,
    RademacherNoise,
    Scm,
    ShiftedBernoulliNoise,
    ZeroNoise,
    linear,
    oracle_table,
    polynomial,
    reward_table,
)

FLOOR_CONSTANT = 0.2**5 / 8.0


@dataclass(frozen=True, eq=False)
class InstancePair:
    kind: str
    g1: Scm
    g2: Scm
    delta: float
    gap: float
    d: int
    L: int
    K_levels: tuple
    astar_g1: np.ndarray
    astar_g2: np.ndarray
    exact_gap: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def gap_per_delta(self) -> float:
        return self.gap / self.delta if self.delta > 0 else self.extras.get("gap_per_delta", 0.0)

    @property
    def threshold(self) -> float:
        return self.g1.noises[0].threshold


def _check_delta(delta: float):
    if not 0.0 <= delta < 0.5:
        raise InvalidDelta(f"delta must lie in [0, 1/2), got {delta}")


def _levels(K_levels, L) -> tuple:
    if K_levels is None:
        return (1.0,) * L
    if np.isscalar(K_levels):
        return (float(K_levels),) * L
    ks = tuple(float(k) for k in K_levels)
    if len(ks) != L:
        raise ValueError(f"need {L} per-level Lipschitz constants, got {len(ks)}")
    return ks


def _node1_noises(delta: float, threshold: float):
    hi = ShiftedBernoulliNoise(0.5 + delta, 0.5, threshold)
    return hi, hi.swapped()


def _stated_optima(N: int, spaces) -> tuple[np.ndarray, np.ndarray]:
    a1 = np.zeros(N)
    a2 = np.zeros(N)
    a2[0] = 1.0
    return a1, a2


def _exact_gap(g1: Scm, a1: np.ndarray, a2: np.ndarray) -> float | None:
    if g1.n > 20:
        return None
    mu, _ = reward_table(g1, np.stack([a1, a2]))
    return float(mu[0] - mu[1])


def build_linear_pair(d: int, L: int, K_levels=None, delta: float = 0.1) -> InstancePair:
    """Linear pair: ``theta_i = K^(L_i)/sqrt(d_i)``, ``theta_bar_i = theta_i - delta``, binary spaces."""
    _check_delta(delta)
    ks = _levels(K_levels, L)
    dag = hierarchical_graph(d, L)
    depths = compute_stats(dag).depths
    N = dag.node_count
    fns = []
    for i in range(1, N + 1):
        di = len(dag.parents_of(i))
        if di == 0:
            fns.append(linear(np.zeros(0), np.zeros(0)))
            continue
        k = ks[depths[i - 1] - 1]
        theta = np.full(di, k / math.sqrt(di))
        fns.append(linear(theta, theta - delta, K=max(ks)))
    n1a, n1b = _node1_noises(delta, 0.0)
    rest = [RademacherNoise()] * (N - 1)
    spaces = [BINARY] * N
    g1 = Scm(dag, fns, [n1a] + rest, spaces)
    g2 = Scm(dag, fns, [n1b] + rest, spaces)
    a1, a2 = _stated_optima(N, spaces)
    gap = d ** (L / 2 - 1) * delta * math.prod(ks)
    return InstancePair("linear", g1, g2, delta, gap, d, L, ks, a1, a2, _exact_gap(g1, a1, a2),
                        {"gap_per_delta": d ** (L / 2 - 1) * math.prod(ks)})


def poly_beta(d: int, L: int, p: int) -> float:
    return (p**L * d ** (L * (p - 0.5))) ** (-(p**L) - p)


def poly_level_value(beta: float, d: int, p: int, depth: int) -> float:
    """Nonzero value of ``X_i`` at causal depth ``depth >= 1`` when ``eps_1 = 1``."""
    return beta ** ((p**depth - 1) / (p - 1)) * d ** (p * (p ** (depth - 1) - 1) / (p - 1))


def poly_lipschitz(beta: float, d: int, L: int, p: int, depth: int) -> float:
    return p * beta ** (p**L) * d ** (p ** (depth - 1) - p + 0.5)


def build_poly_pair(d: int, L: int, p: int = 2, delta: float = 0.1, resolution: int = 3) -> InstancePair:
    """Polynomial pair: ``f_i = beta (sum_j X_j)^p`` with noiseless non-root nodes.

    ``gap`` is the exact reward gap ``v_L * delta``; ``extras['gap_k_form']``
    holds ``delta * prod_{l=2}^{L} K^(l)`` computed from the stored node
    Lipschitz constants.
    """
    _check_delta(delta)
    if int(p) != p or p < 2:
        raise ValueError("p must be an integer >= 2")
    p = int(p)
    beta = poly_beta(d, L, p)
    dag = hierarchical_graph(d, L)
    depths = compute_stats(dag).depths
    N = dag.node_count
    fns, node_K = [], []
    for i in range(1, N + 1):
        di = len(dag.parents_of(i))
        if di == 0:
            fns.append(polynomial(np.zeros(1), degree=p))
            node_K.append(0.0)
            continue
        theta = np.concatenate([np.full(di, beta ** (1.0 / p)), [0.0]])
        fns.append(polynomial(theta, degree=p))
        node_K.append(poly_lipschitz(beta, d, L, p, depths[i - 1]))
    n1a, n1b = _node1_noises(delta, 0.5)
    rest = [ZeroNoise()] * (N - 1)
    spaces = [InterventionSpace("interval", resolution)] * N
    g1 = Scm(dag, fns, [n1a] + rest, spaces)
    g2 = Scm(dag, fns, [n1b] + rest, spaces)
    a1, a2 = _stated_optima(N, spaces)
    vL = poly_level_value(beta, d, p, L)
    level_K = tuple(poly_lipschitz(beta, d, L, p, ell) for ell in range(1, L + 1))
    K_prod = math.prod(level_K[1:])
    extras = {
        "beta": beta,
        "p": p,
        "node_K": tuple(node_K),
        "level_values": tuple(poly_level_value(beta, d, p, ell) for ell in range(1, L + 1)),
        "gap_k_form": K_prod * delta,
        "gap_per_delta": vL,
    }
    return InstancePair("poly", g1, g2, delta, vL * delta, d, L, level_K, a1, a2, _exact_gap(g1, a1, a2), extras)


def build_nn_pair(
    d: int,
    L: int,
    s: int = 1,
    slopes: tuple[float, float] = (1.0, 0.1),
    delta: float = 0.1,
    K_levels=None,
    resolution: int = 3,
) -> InstancePair:
    """Neural pair: intervention column of ``W1`` zero, every other weight ``sqrt(K^(L_i)) / (beta_s sqrt(s))``.

    ``gap`` is the closed-form value; ``exact_gap`` is the enumerated one, which
    differs once Rademacher inputs reach the negative branch of the activation.
    """
    _check_delta(delta)
    beta_s, alpha_s = slopes
    if not beta_s > alpha_s > 0:
        raise InvalidSlopes(f"need beta > alpha > 0, got {slopes}")
    if s < 1:
        raise ValueError("width s must be >= 1")
    ks = _levels(K_levels, L)
    dag = hierarchical_graph(d, L)
    depths = compute_stats(dag).depths
    N = dag.node_count
    fns = []
    for i in range(1, N + 1):
        di = len(dag.parents_of(i))
        cls = NeuralNetClass(di, s, beta_s, alpha_s)
        if di == 0:
            fns.append(NodeFunction(cls, {"W1": np.zeros((s, 1)), "w2": np.zeros(s)}))
            continue
        w = math.sqrt(ks[depths[i - 1] - 1]) / (beta_s * math.sqrt(s))
        W1 = np.full((s, di + 1), w)
        W1[:, 0] = 0.0
        fns.append(NodeFunction(cls, {"W1": W1, "w2": np.full(s, w)}))
    n1a, n1b = _node1_noises(delta, 0.5)
    rest = [RademacherNoise()] * (N - 1)
    spaces = [InterventionSpace("interval", resolution)] * N
    g1 = Scm(dag, fns, [n1a] + rest, spaces)
    g2 = Scm(dag, fns, [n1b] + rest, spaces)
    a1, a2 = _stated_optima(N, spaces)
    gpd = d ** (L / 2 - 1) * math.prod(ks)
    return InstancePair("nn", g1, g2, delta, gpd * delta, d, L, ks, a1, a2, _exact_gap(g1, a1, a2),
                        {"s": s, "slopes": (beta_s, alpha_s), "gap_per_delta": gpd})


def build_pair(kind: str, d: int, L: int, delta: float, **kw) -> InstancePair:
    if kind == "linear":
        return build_linear_pair(d, L, kw.get("K_levels"), delta)
    if kind == "poly":
        return build_poly_pair(d, L, kw.get("p", 2), delta, kw.get("resolution", 3))
    if kind == "nn":
        return build_nn_pair(d, L, kw.get("s", 1), kw.get("slopes", (1.0, 0.1)), delta,
                             kw.get("K_levels"), kw.get("resolution", 3))
    raise ValueError(f"unknown pair kind {kind!r}")


def kl_bound(pair_or_delta, T: int) -> float:
    """``T ln(1 / ((1 + 2 delta)(1 - 2 delta)))``."""
    delta = pair_or_delta.delta if isinstance(pair_or_delta, InstancePair) else float(pair_or_delta)
    if T < 1:
        raise ValueError("T must be >= 1")
    return T * -math.log((1 + 2 * delta) * (1 - 2 * delta))


@dataclass(frozen=True)
class RegretFloor:
    exact: float
    simplified: float


def regret_floor(pair: InstancePair, T: int) -> RegretFloor:
    """Max-over-pair regret floor at the balancing choice ``delta = 1/sqrt(T)``.

    ``exact = (T/8) gap (1 - 4 delta^2)^T`` using the pair's true gap;
    ``simplified = c (gap/delta) sqrt(T)`` with ``c = 0.2^5 / 8``.
    """
    if T < 5:
        raise DeltaMismatch(f"the floor needs T >= 5, got T={T}")
    if not math.isclose(pair.delta, 1 / math.sqrt(T), rel_tol=1e-9):
        raise DeltaMismatch(f"pair built with delta={pair.delta}, floor needs 1/sqrt(T)={1 / math.sqrt(T)}")
    gap = pair.exact_gap if pair.exact_gap is not None else pair.gap
    d2 = pair.delta**2
    exact = T / 8.0 * gap * (1 - 4 * d2) ** T
    simplified = FLOOR_CONSTANT * pair.gap_per_delta * math.sqrt(T)
    return RegretFloor(exact, simplified)


def _bern_kl(p, q):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    q = np.clip(q, 1e-12, 1 - 1e-12)
    return p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q))


def empirical_node1_kl(
    pair: InstancePair,
    a1_sequence: Sequence[float],
    rng: np.random.Generator,
    samples: int = 10_000,
) -> tuple[float, float]:
    """Plug-in KL between node-1 observation laws over a fixed action sequence, with a delta-method SE.

    Node-1 draws for both instances are seed-coupled on each intervention branch.
    """
    a1_sequence = np.asarray(a1_sequence, dtype=float)
    thr = pair.threshold
    below = a1_sequence <= thr
    counts = np.array([below.sum(), (~below).sum()], dtype=float)
    branch_a = np.array([thr if thr >= 0 else 0.0, 1.0])
    total, var = 0.0, 0.0
    for b in range(2):
        if counts[b] == 0:
            continue
        u = rng.random(samples)
        p1 = float(pair.g1.noises[0].transform(u, branch_a[b]).mean())
        p2 = float(pair.g2.noises[0].transform(u, branch_a[b]).mean())
        p1c, p2c = np.clip([p1, p2], 1e-12, 1 - 1e-12)
        total += counts[b] * float(_bern_kl(p1c, p2c))
        g1 = math.log(p1c / p2c) - math.log((1 - p1c) / (1 - p2c))
        g2 = -p1c / p2c + (1 - p1c) / (1 - p2c)
        var_b = (g1 * g1 * p1c * (1 - p1c) + g2 * g2 * p2c * (1 - p2c)) / samples
        var += counts[b] ** 2 * var_b
    return total, math.sqrt(var)


@dataclass
class StressReport:
    mean_g1: float
    mean_g2: float
    se_g1: float
    se_g2: float
    floor: RegretFloor | None

    @property
    def max_mean(self) -> float:
        return max(self.mean_g1, self.mean_g2)


def pair_tables(pair: InstancePair, cap: int = 10**6) -> tuple[OracleTable, OracleTable]:
    return oracle_table(pair.g1, cap=cap), oracle_table(pair.g2, cap=cap)


def reference_regret(pair: InstancePair, T: int, policy: str, tables=None) -> tuple[float, float]:
    """Expected cumulative regret on (g1, g2) of a reference policy, evaluated exactly.

    ``constant`` pulls the stated ``a*_{G1}`` every round; ``uniform`` draws
    arms uniformly from the grid.
    """
    t1, t2 = tables if tables is not None else pair_tables(pair)
    if policy == "constant":
        idx = int(np.flatnonzero((t1.arms == pair.astar_g1).all(axis=1))[0])
        return T * t1.regret(idx), T * t2.regret(idx)
    if policy == "uniform":
        return T * float(np.mean(t1.best_value - t1.mu)), T * float(np.mean(t2.best_value - t2.mu))
    raise ValueError(f"unknown reference policy {policy!r}")


def minimax_stress(
    agent_factory: Callable[[Scm, np.ndarray, np.random.Generator], Agent],
    pair: InstancePair,
    T: int,
    replicates: int,
    seed: int = 0,
    tables=None,
) -> StressReport:
    """Run an agent independently on both instances and compare with the floor."""
    tabs = tables if tables is not None else pair_tables(pair)
    finals = [[], []]
    for k, (env, tab) in enumerate(zip((pair.g1, pair.g2), tabs)):
        for r in range(replicates):
            ss = np.random.SeedSequence(seed, spawn_key=(k, r))
            env_rng, agent_rng = (np.random.default_rng(c) for c in ss.spawn(2))
            agent = agent_factory(env, tab.arms, agent_rng)
            trace = run_agent(agent, env, T, env_rng, tab)
            finals[k].append(trace.cum_regret[-1])
    f1, f2 = (np.array(f) for f in finals)
    se = lambda f: float(f.std(ddof=1) / math.sqrt(f.size)) if f.size > 1 else 0.0
    try:
        floor = regret_floor(pair, T)
    except DeltaMismatch:
        floor = None
    return StressReport(float(f1.mean()), float(f2.mean()), se(f1), se(f2), floor)


def constant_factory(arm: np.ndarray):
    def make(env, arms, rng):
        return ConstantAgent(int(np.flatnonzero((arms == arm).all(axis=1))[0]))
    return make


def uniform_factory(env, arms, rng):
    return UniformAgent(arms.shape[0], rng)
