import math

import numpy as np
import pytest

from gcbandit import agents as ag
from gcbandit import experiment as ex
from gcbandit.graph import Dag
from gcbandit.scm import (
    GaussianNoise,
    InterventionSpace,
    LinearClass,
    PolynomialClass,
    Scm,
    ShiftedBernoulliNoise,
    ZeroNoise,
    linear,
    oracle_table,
    polynomial,
    zero_function,
)


def _history(xs, acts, ys):
    h = ag.NodeHistory(np.asarray(xs).shape[1])
    for x, a, y in zip(xs, acts, ys):
        h.append(x, a, y)
    return h


def _two_arm(p0=0.6, p1=0.5):
    """One reward node whose mean is ``p0`` under a=0 and ``p1`` under a=1."""
    dag = Dag.from_edges(1, [])
    return Scm(dag, [zero_function(0)], [ShiftedBernoulliNoise(p0, p1)], [InterventionSpace("binary")])


def _chain(noise=None, mode="soft"):
    dag = Dag.from_edges(2, [(1, 2)])
    fns = [zero_function(0), linear([0.8], [-0.3])]
    noises = [noise or GaussianNoise(1.0, 1.0), GaussianNoise(1.0)]
    return Scm(dag, fns, noises, [InterventionSpace("binary")] * 2, mode=mode)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def test_fit_linear_noiseless_within_ridge_bias():
    rng = np.random.default_rng(0)
    theta, theta_bar = np.array([0.5, -0.2, 0.3]), np.array([0.1, 0.4, -0.6])
    f = linear(theta, theta_bar)
    xs = rng.normal(size=(60, 3))
    acts = rng.integers(0, 2, 60).astype(float)
    ys = f(xs, acts)
    fit = ag.fit_node(_history(xs, acts, ys), LinearClass(3), ag.AgentConfig(ridge=1.0))
    w = np.concatenate([theta, theta_bar])
    lam_min = np.linalg.eigvalsh(fit.gram - np.eye(6)).min()
    bias = 1.0 * np.linalg.norm(w) / (1.0 + lam_min)
    assert np.linalg.norm(fit.params - w) <= bias
    assert fit.feature_dim == 6
    assert np.allclose(fit.gram, fit.gram.T)
    assert np.linalg.eigvalsh(fit.gram).min() > 0


@pytest.mark.parametrize("cls", [LinearClass(2), PolynomialClass(2, 2)])
def test_fit_empty_history_is_zero_member(cls):
    fit = ag.fit_node(ag.NodeHistory(2), cls)
    assert fit.residual_sse == 0.0
    assert np.all(fit.params == 0)
    assert fit.estimate(np.ones((4, 2)), np.ones(4)) == pytest.approx(np.zeros(4))


def test_fit_quadratic_reproduces_training_outputs():
    rng = np.random.default_rng(1)
    f = polynomial([0.7, -0.4, 0.9])
    xs = rng.uniform(-1, 1, size=(40, 2))
    acts = rng.integers(0, 2, 40).astype(float)
    ys = f(xs, acts)
    fit = ag.fit_node(_history(xs, acts, ys), PolynomialClass(2, 2), ag.AgentConfig(ridge=1e-12))
    assert fit.residual_sse <= 1e-8
    # independent dense solve on the monomials of z = [x, a]
    z = np.column_stack([xs, acts])
    mono = np.column_stack([z[:, j] * z[:, k] for j in range(3) for k in range(j, 3)])
    coef, *_ = np.linalg.lstsq(mono, ys, rcond=None)
    assert np.allclose(fit.estimate(xs, acts), mono @ coef, atol=1e-6)


def test_nn_fit_reduces_loss():
    from gcbandit.scm import NeuralNetClass

    rng = np.random.default_rng(2)
    cls = NeuralNetClass(2, 3)
    true = ag.NodeFunction(cls, {"W1": rng.uniform(0, 1, (3, 3)), "w2": rng.uniform(0, 1, 3)})
    xs = rng.uniform(0, 1, (64, 2))
    acts = rng.integers(0, 2, 64).astype(float)
    ys = true(xs, acts)
    lr = ag.make_learner(cls, ag.AgentConfig(sgd_epochs=200, sgd_lr=0.05), np.random.default_rng(3))
    for x, a, y in zip(xs, acts, ys):
        lr.add(x, a, y)
    sse0 = lr.residual_sse()
    lr.refit()
    assert lr.residual_sse() < sse0


# ---------------------------------------------------------------------------
# Confidence sets
# ---------------------------------------------------------------------------

def _fitted_linear(n=30, seed=0):
    rng = np.random.default_rng(seed)
    lr = ag.make_learner(LinearClass(2), ag.AgentConfig(), rng)
    for _ in range(n):
        x, a = rng.normal(size=2), float(rng.integers(0, 2))
        lr.add(x, a, 0.3 * x[0] - 0.2 * x[1] * (1 - a) + 0.5 * rng.normal())
    lr.refit()
    return lr


def test_membership_examples():
    lr = _fitted_linear()
    cs = ag.ConfidenceSet(lr.fit_result(), 0.5, lr.history)
    assert ag.in_confidence_set(cs.center.estimate, cs)
    other = lr.features.to_function(lr.center + np.array([0.0, 0.0, 1e-3, 0.0]))
    assert not ag.in_confidence_set(other, ag.ConfidenceSet(lr.fit_result(), 0.0, lr.history))
    far = linear([100.0, 100.0], [-100.0, 100.0])
    assert ag.in_confidence_set(far, ag.ConfidenceSet(lr.fit_result(), math.inf, lr.history))


def test_confidence_draws():
    lr = _fitted_linear()
    rng = np.random.default_rng(5)
    one = lr.confidence_draws(rng, 2.0, 1)
    assert np.array_equal(one, lr.center[None, :])
    flat = lr.confidence_draws(rng, 0.0, 6)
    assert np.array_equal(flat, np.repeat(lr.center[None, :], 6, axis=0))
    draws = lr.confidence_draws(rng, 2.0, 32)
    assert np.array_equal(draws[0], lr.center)
    cs = ag.ConfidenceSet(lr.fit_result(), 2.0, lr.history)
    for w in draws:
        assert ag.in_confidence_set(lr.features.to_function(w), cs)
    assert np.ptp(draws[1:], axis=0).max() > 0


def test_posterior_concentrates_with_large_ridge():
    rng = np.random.default_rng(0)
    lr = ag.make_learner(LinearClass(2), ag.AgentConfig(ridge=1e12), rng)
    lr.add(np.ones(2), 0.0, 1.0)
    lr.refit()
    draws = np.vstack([lr.posterior_draw(rng, 1.0) for _ in range(50)])
    assert np.abs(draws - lr.center).max() < 1e-5


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

def test_two_arm_collapsed_ucb_picks_arm_zero():
    env = _two_arm()
    agent = ag.GcbAgent(env, 10, ag.AgentConfig(beta_scale=0.0), np.random.default_rng(0), "ucb")
    assert agent.select(1) == 0
    assert oracle_table(env).best_index == 0


def test_collapsed_ucb_with_exact_estimates_finds_oracle_arm():
    dag = Dag.from_edges(3, [(1, 3), (2, 3)])
    fns = [zero_function(0), zero_function(0), linear([0.5, -1.0], [-0.7, 0.4])]
    noises = [GaussianNoise(1.0, 1.0), GaussianNoise(1.0, 2.0), ZeroNoise()]
    env = Scm(dag, fns, noises, [InterventionSpace("binary")] * 3)
    cfg = ag.AgentConfig(beta_scale=0.0, ridge=1e-10)
    agent = ag.GcbAgent(env, 50, cfg, np.random.default_rng(0), "ucb")
    rng = np.random.default_rng(1)
    for t in range(1, 41):
        i = t % agent.arms.shape[0]
        agent.observe(i, env.sample_one(agent.arms[i], rng.random(3)))
    assert agent.select(41) == oracle_table(env).best_index


def test_certainty_equivalence_ucb_and_ts_agree():
    cfg = {"graph": {"d": 2, "L": 2}, "scm": {"class": "quadratic"}, "run": {"T": 60}}
    env = ex.build_instance(cfg, 0, 0)
    oracle = oracle_table(env, rng=np.random.default_rng(9), rollouts=2000)
    traces = []
    for name, acfg in (("ucb", ag.AgentConfig(n_candidates=1)), ("ts", ag.AgentConfig(posterior_scale=0.0))):
        agent = ag.GcbAgent(env, 60, acfg, np.random.default_rng(4), name, arms=oracle.arms)
        traces.append(ag.run_agent(agent, env, 60, np.random.default_rng(5), oracle))
    assert np.array_equal(traces[0].arm_index, traces[1].arm_index)


def test_ts_symmetric_arms_split_evenly():
    dag = Dag.from_edges(2, [(1, 2)])
    env = Scm(dag, [zero_function(0), linear([0.5], [0.5])], [GaussianNoise(1.0, 1.0), GaussianNoise(1.0)],
              [InterventionSpace("finite", values=(0.0,)), InterventionSpace("binary")])
    agent = ag.GcbAgent(env, 1000, ag.AgentConfig(), np.random.default_rng(11), "ts")
    rng = np.random.default_rng(12)
    for _ in range(10):
        x = 1.0 + rng.normal()
        for a in (0.0, 1.0):
            agent.observe(int(a), np.array([x, 0.5 * x]))
    picks = np.array([agent.select(11) for _ in range(1000)])
    assert abs((picks == 0).mean() - 0.5) <= 0.05


def test_do_mode_excludes_hard_set_rounds():
    env = _chain(mode="do")
    rng = np.random.default_rng(0)
    a_all = ag.GcbAgent(env, 50, ag.AgentConfig(), np.random.default_rng(1), "ucb")
    a_obs = ag.GcbAgent(env, 50, ag.AgentConfig(), np.random.default_rng(1), "ucb")
    for t in range(40):
        i = t % 4
        X = env.sample_one(a_all.arms[i], rng.random(2))
        a_all.observe(i, X)
        if a_all.arms[i][1] == 0:
            a_obs.observe(i, X)
    # node 2 only learns from rounds where it was not hard-set
    assert len(a_all.learners[1].history) == 20
    assert np.array_equal(a_all.learners[1].gram, a_obs.learners[1].gram)
    assert np.array_equal(a_all.learners[1].center, a_obs.learners[1].center)


# ---------------------------------------------------------------------------
# Rounds and traces
# ---------------------------------------------------------------------------

def test_cold_start_and_optimal_pull():
    env = _chain()
    oracle = oracle_table(env)
    agent = ag.GcbAgent(env, 5, ag.AgentConfig(), np.random.default_rng(0), "ts", arms=oracle.arms)
    a, X, r = ag.step(agent, env, 1, np.random.default_rng(1), oracle)
    assert X.shape == (2,) and r >= 0
    best = ag.ConstantAgent(oracle.best_index)
    tr = ag.run_agent(best, env, 10, np.random.default_rng(2), oracle)
    assert np.all(tr.inst_regret == 0.0)


@pytest.mark.parametrize("name", ["gcb-ucb", "gcb-ts", "ucb", "linsem"])
def test_seeded_run_is_reproducible(name):
    cfg = {"graph": {"d": 2, "L": 1}, "scm": {"class": "quadratic"}, "agent": {"name": name},
           "run": {"T": 30, "oracle_rollouts": 500}}
    t1, t2 = ex.run_replicate(cfg, 0), ex.run_replicate(cfg, 0)
    for f in ("arm_index", "reward", "inst_regret", "cum_regret"):
        assert np.array_equal(getattr(t1, f), getattr(t2, f))


def test_regret_nonnegative_up_to_oracle_error():
    cfg = {"graph": {"d": 2, "L": 1}, "scm": {"class": "quadratic"}, "run": {"T": 40, "oracle_rollouts": 2000}}
    env = ex.build_instance(cfg, 0, 0)
    oracle = ex.instance_oracle(env, cfg, 0, 0)
    tr = ex.run_replicate(cfg, 0)
    assert np.all(tr.inst_regret >= -4 * oracle.se.max())


def test_regret_exactly_nonnegative_with_analytic_rewards():
    cfg = {"graph": {"d": 2, "L": 2}, "scm": {"class": "linear"}, "run": {"T": 40}}
    tr = ex.run_replicate(cfg, 0)
    assert np.all(tr.inst_regret >= 0.0)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def test_vanilla_ucb_pulls_each_arm_first():
    cfg = {"graph": {"d": 2, "L": 1}, "scm": {"class": "linear"}}
    env = ex.build_instance(cfg, 0, 0)
    agent = ag.VanillaUcbAgent(env)
    n = agent.arms.shape[0]
    rng = np.random.default_rng(0)
    seen = []
    for t in range(1, n + 1):
        i = agent.select(t)
        seen.append(i)
        agent.observe(i, env.sample_one(agent.arms[i], rng.random(env.n)))
    assert sorted(seen) == list(range(n))


def test_vanilla_ucb_logarithmic_on_bernoulli_pair():
    from gcbandit.experiment import loglog_slope

    env = _two_arm(0.6, 0.5)
    oracle = oracle_table(env)
    tr = ag.run_agent(ag.VanillaUcbAgent(env), env, 5000, np.random.default_rng(0), oracle)
    assert loglog_slope(tr.cum_regret) < 0.7


def test_linsem_matches_gcb_ucb_center_on_linear_scm():
    cfg = {"graph": {"d": 2, "L": 2}, "scm": {"class": "linear"}}
    env = ex.build_instance(cfg, 0, 0)
    gcb = ag.make_agent("gcb-ucb", env, 50, ag.AgentConfig(), np.random.default_rng(0))
    lin = ag.make_agent("linsem", env, 50, ag.AgentConfig(), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for t in range(30):
        i = int(rng.integers(gcb.arms.shape[0]))
        X = env.sample_one(gcb.arms[i], rng.random(env.n))
        gcb.observe(i, X)
        lin.observe(i, X)
    for lg, ll in zip(gcb.learners, lin.learners):
        assert np.array_equal(lg.center, ll.center)


# ---------------------------------------------------------------------------
# Compounding-error probe
# ---------------------------------------------------------------------------

def _probe_setup(T=25):
    cfg = {"graph": {"d": 2, "L": 2}, "scm": {"class": "linear"}, "agent": {"name": "gcb-ucb"}, "run": {"T": T}}
    env = ex.build_instance(cfg, 0, 0)
    oracle = ex.instance_oracle(env, cfg, 0, 0)
    agent = ag.GcbAgent(env, T, ag.AgentConfig(), np.random.default_rng(0), "ucb", arms=oracle.arms)
    tr = ag.run_agent(agent, env, T, np.random.default_rng(1), oracle)
    return env, agent, tr


def test_probe_roots_zero_and_monotone():
    env, agent, tr = _probe_setup()
    series = ag.compounding_error_probe(tr, env, agent, np.random.default_rng(2))
    roots = [i - 1 for i in env.dag.order if not env.dag.parents_of(i)]
    assert np.all(series[:, roots] == 0.0)
    assert np.all(np.diff(series, axis=0) >= 0)
    assert series[-1, -1] > 0


def test_probe_vanishes_for_true_functions():
    env, agent, tr = _probe_setup()
    truth = []
    for f, lr in zip(env.functions, agent.learners):
        if lr.dim == 0:
            truth.append(lr.center_params(1))
        else:
            truth.append(np.concatenate([f.params["theta"], f.params["theta_bar"]])[None, :])
    agent.chosen_params = [truth] * len(tr)
    series = ag.compounding_error_probe(tr, env, agent, np.random.default_rng(2))
    assert np.abs(series).max() < 1e-9


def test_probe_reference_grows_with_depth():
    env, _, _ = _probe_setup(5)
    ref = ag.compounding_reference(env, 1.0, [1.0, 2.0, 2.0])
    roots = [i - 1 for i in env.dag.order if not env.dag.parents_of(i)]
    assert np.all(ref[roots] == 0.0)
    assert ref[-1] == ref.max() > 0
