"""Per-node learners, confidence sets and the causal bandit agents.

Agents work on arm indices into the lexicographic arm grid of the template
SCM. Each round they evaluate ``E_a[X_N | f]`` for candidate function vectors
``f`` by propagating the known noise model through the estimated mechanisms,
with common random numbers across arms and candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import complexity as cx
from .errors import NonFiniteLoss
from .graph import compute_stats
from .scm import (
    LinearClass,
    NeuralNetClass,
    NodeFunction,
    PolynomialClass,
    Scm,
    ancestor_groups,
    arm_grid,
    from_callable,
    leaky_relu,
)


@dataclass
class AgentConfig:
    delta: float | None = None
    ridge: float = 1.0
    n_candidates: int = 32
    rollouts: int = 64
    grid_resolution: int | None = None
    sgd_lr: float = 0.01
    sgd_epochs: int = 50
    sgd_batch: int = 32
    sgd_steps: int = 4
    warm_start: bool = True
    posterior_scale: float = 1.0
    beta_scale: float = 1.0
    K: float = 1.0
    C: float = 1.0
    dim_constant: float = 1.0
    noise_sd: float = 1.0
    nn_init_mean: float | None = None

    def __post_init__(self):
        if self.delta is not None and not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        for name in ("ridge", "n_candidates", "rollouts", "sgd_lr", "sgd_epochs", "sgd_batch", "K"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("posterior_scale", "beta_scale", "C", "sgd_steps", "noise_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


# ---------------------------------------------------------------------------
# Histories
# ---------------------------------------------------------------------------

class NodeHistory:
    """Growing buffers of ``Z_i(s) = (x_pa(s), a_i(s))`` and outputs ``X_i(s)``."""

    def __init__(self, arity: int, capacity: int = 64):
        self.arity = arity
        self._x = np.empty((capacity, arity))
        self._a = np.empty(capacity)
        self._y = np.empty(capacity)
        self.n = 0

    def append(self, x_pa, a: float, y: float):
        if self.n == self._a.size:
            cap = 2 * self._a.size
            self._x = np.resize(self._x, (cap, self.arity)) if self.arity else np.empty((cap, 0))
            self._a = np.resize(self._a, cap)
            self._y = np.resize(self._y, cap)
        self._x[self.n] = x_pa
        self._a[self.n] = a
        self._y[self.n] = y
        self.n += 1

    @property
    def inputs(self) -> np.ndarray:
        return self._x[: self.n]

    @property
    def actions(self) -> np.ndarray:
        return self._a[: self.n]

    @property
    def outputs(self) -> np.ndarray:
        return self._y[: self.n]

    def __len__(self):
        return self.n


# ---------------------------------------------------------------------------
# Feature maps for learners that are linear in their parameters
# ---------------------------------------------------------------------------

class LinearFeatures:
    """``phi(x, a) = [(1 - a) x ; a x]``."""

    affine = True

    def __init__(self, d: int):
        self.d = d
        self.dim = 2 * d

    def __call__(self, x, a):
        a = np.asarray(a, dtype=float)[..., None]
        return np.concatenate([(1.0 - a) * x, a * x], axis=-1)

    def evaluate(self, W, x, a):
        d = self.d
        base = np.einsum("kamd,kd->kam", x, W[:, :d])
        bar = np.einsum("kamd,kd->kam", x, W[:, d:2 * d])
        a = a[None, :, None]
        return (1.0 - a) * base + a * bar

    def to_function(self, w) -> NodeFunction:
        return NodeFunction(LinearClass(self.d), {"theta": w[: self.d].copy(), "theta_bar": w[self.d:].copy()})


class QuadraticFeatures:
    """Monomials ``z_j z_k`` (``j <= k``) of ``z = [x, a]``: the lifted quadratic class."""

    affine = False

    def __init__(self, d: int):
        self.d = d
        self.q = d + 1
        self.pairs = [(j, k) for j in range(self.q) for k in range(j, self.q)]
        self.dim = len(self.pairs)
        self._j = np.array([p[0] for p in self.pairs])
        self._k = np.array([p[1] for p in self.pairs])

    def _z(self, x, a):
        a = np.broadcast_to(np.asarray(a, dtype=float), x.shape[:-1])
        return np.concatenate([x, a[..., None]], axis=-1)

    def __call__(self, x, a):
        z = self._z(np.asarray(x, dtype=float), a)
        return z[..., self._j] * z[..., self._k]

    def symmetric(self, W) -> np.ndarray:
        """Map monomial weights (k, p) to symmetric matrices (k, q, q)."""
        k = W.shape[0]
        S = np.zeros((k, self.q, self.q))
        half = np.where(self._j == self._k, 1.0, 0.5)
        S[:, self._j, self._k] += W * half
        S[:, self._k, self._j] += W * half
        return S

    def evaluate(self, W, x, a):
        k, A, M = x.shape[0], x.shape[1], x.shape[2]
        z = np.empty((k, A, M, self.q))
        z[..., : self.d] = x
        z[..., self.d] = a[None, :, None]
        S = self.symmetric(W)
        zS = np.matmul(z.reshape(k, A * M, self.q), S).reshape(z.shape)
        return np.einsum("kamq,kamq->kam", zS, z)

    def to_function(self, w) -> NodeFunction:
        feats = self

        def fn(x, a):
            return feats(x, a) @ w

        return from_callable(self.d, fn)


# ---------------------------------------------------------------------------
# Fits and confidence sets
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    estimate: NodeFunction
    gram: np.ndarray
    residual_sse: float
    feature_dim: int
    params: object = None


@dataclass
class ConfidenceSet:
    center: FitResult
    radius_sq: float
    history: NodeHistory


def in_confidence_set(candidate, cset: ConfidenceSet) -> bool:
    """``sum_s (g(Z_s) - f_center(Z_s))^2 <= radius_sq`` over the node history."""
    if math.isinf(cset.radius_sq):
        return True
    h = cset.history
    if h.n == 0:
        return cset.radius_sq >= 0
    g = np.asarray(candidate(h.inputs, h.actions), dtype=float)
    f = np.asarray(cset.center.estimate(h.inputs, h.actions), dtype=float)
    return float(((g - f) ** 2).sum()) <= cset.radius_sq


class RidgeLearner:
    """Incremental ridge regression in a fixed feature space.

    ``V = ridge I + sum phi phi^T`` is the regularised Gram; the unregularised
    part ``Phi`` gives exact empirical distances ``sum_s (phi_s^T Delta)^2``.
    """

    def __init__(self, features, ridge: float = 1.0):
        self.features = features
        self.ridge = ridge
        p = features.dim
        self.Phi = np.zeros((p, p))
        self.b = np.zeros(p)
        self.yy = 0.0
        self.history = NodeHistory(features.d)
        self._w = np.zeros(p)
        self._chol = None

    @property
    def dim(self) -> int:
        return self.features.dim

    @property
    def affine(self) -> bool:
        return self.features.affine

    @property
    def gram(self) -> np.ndarray:
        return self.Phi + self.ridge * np.eye(self.dim)

    def add(self, x_pa, a: float, y: float):
        phi = self.features(np.asarray(x_pa, dtype=float), a)
        self.Phi += np.outer(phi, phi)
        self.b += y * phi
        self.yy += y * y
        self.history.append(x_pa, a, y)
        self._chol = None

    def refit(self, rng=None):
        if self.dim == 0:
            return
        self._chol = np.linalg.cholesky(self.gram)
        self._w = _chol_solve(self._chol, self.b)

    @property
    def center(self) -> np.ndarray:
        return self._w

    def chol(self) -> np.ndarray:
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.gram)
        return self._chol

    def residual_sse(self, w=None) -> float:
        w = self._w if w is None else w
        return float(max(self.yy - 2 * w @ self.b + w @ self.Phi @ w, 0.0))

    def distance_sq(self, W) -> np.ndarray:
        D = np.atleast_2d(W) - self._w
        return np.einsum("kp,pq,kq->k", D, self.Phi, D)

    def fit_result(self) -> FitResult:
        return FitResult(self.features.to_function(self._w), self.gram, self.residual_sse(), self.dim, self._w.copy())

    def stack(self, W) -> np.ndarray:
        return np.atleast_2d(W)

    def center_params(self, k: int = 1):
        return np.repeat(self._w[None, :], k, axis=0)

    def posterior_draw(self, rng: np.random.Generator, scale: float):
        if scale == 0 or self.dim == 0:
            return self.center_params(1)
        g = rng.standard_normal(self.dim)
        return (self._w + scale * _upper_solve(self.chol(), g))[None, :]

    def confidence_draws(self, rng: np.random.Generator, beta: float, k: int):
        """Center plus ``k - 1`` points on the Gram ellipsoid of radius ``sqrt(beta)``.

        With ``Phi <= V`` every such point is a member of the confidence set; the
        radial shrink only guards against rounding at the boundary.
        """
        out = self.center_params(k)
        if k == 1 or beta <= 0 or self.dim == 0:
            return out
        u = rng.standard_normal((k - 1, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        steps = _upper_solve(self.chol(), u.T).T * math.sqrt(beta)
        for _ in range(60):
            dist = self.distance_sq(self._w + steps)
            bad = dist > beta
            if not bad.any():
                break
            steps[bad] *= 0.5
        out[1:] = self._w + steps
        return out

    def evaluate(self, W, x, a):
        if self.dim == 0:
            return np.zeros(x.shape[:3])
        return self.features.evaluate(W, x, a)

    def take(self, W, idx):
        return W[idx: idx + 1]


def _chol_solve(Lc, b):
    y = np.linalg.solve(Lc, b)
    return np.linalg.solve(Lc.T, y)


def _upper_solve(Lc, g):
    """Solve ``L^T v = g`` so that ``v ~ N(0, V^-1)`` when ``g ~ N(0, I)``."""
    from scipy.linalg import solve_triangular

    return solve_triangular(Lc, g, lower=True, trans="T")


class NeuralLearner:
    """Two-layer leaky-ReLU regression fitted by warm-started SGD.

    Each round runs ``sgd_steps`` minibatch steps; whenever the sample count hits
    a power of two a full ``sgd_epochs`` pass is made (unless warm starts are off,
    in which case the network is re-initialised and refitted each round).
    """

    affine = False

    def __init__(self, cls: NeuralNetClass, cfg: AgentConfig, rng: np.random.Generator):
        self.cls = cls
        self.cfg = cfg
        self.rng = rng
        s, d = cls.width, cls.arity
        mean = cfg.nn_init_mean if cfg.nn_init_mean is not None else 1.0 / (2.0 * math.sqrt(d + 1))
        self._init_mean = mean
        self.W1, self.w2 = self._initial()
        self.history = NodeHistory(d)
        self.G = cfg.ridge * np.eye(d + 1)

    def _initial(self):
        s, d, m = self.cls.width, self.cls.arity, self._init_mean
        W1 = m + 0.1 * m * self.rng.standard_normal((s, d + 1))
        w2 = m + 0.1 * m * self.rng.standard_normal(s)
        return W1, w2

    @property
    def dim(self) -> int:
        return self.W1.size + self.w2.size

    def _u(self, x, a):
        return np.concatenate([np.asarray(a, dtype=float)[..., None], x], axis=-1)

    def add(self, x_pa, a: float, y: float):
        u = self._u(np.asarray(x_pa, dtype=float)[None, :], np.array([a]))[0]
        self.G += np.outer(u, u)
        self.history.append(x_pa, a, y)

    def _sgd(self, idx_batches):
        h = self.history
        U = self._u(h.inputs, h.actions)
        Y = h.outputs
        sp, sn, lr = self.cls.slope_pos, self.cls.slope_neg, self.cfg.sgd_lr
        W1, w2 = self.W1, self.w2
        for idx in idx_batches:
            u, y = U[idx], Y[idx]
            pre = u @ W1.T
            hid = np.where(pre >= 0, sp * pre, sn * pre)
            o = hid @ w2
            f = np.where(o >= 0, sp * o, sn * o)
            g_o = (f - y) * np.where(o >= 0, sp, sn)
            g_w2 = g_o @ hid / len(idx)
            g_pre = g_o[:, None] * w2[None, :] * np.where(pre >= 0, sp, sn)
            g_W1 = g_pre.T @ u / len(idx)
            W1 = W1 - lr * g_W1
            w2 = w2 - lr * g_w2
        if not (np.isfinite(W1).all() and np.isfinite(w2).all()):
            raise NonFiniteLoss("SGD diverged; reduce the step size")
        self.W1, self.w2 = W1, w2

    def refit(self, rng=None):
        n = self.history.n
        if n == 0:
            return
        B = min(self.cfg.sgd_batch, n)
        batches = []
        full = (n & (n - 1)) == 0 or not self.cfg.warm_start
        if not self.cfg.warm_start:
            self.W1, self.w2 = self._initial()
        if full:
            for _ in range(self.cfg.sgd_epochs):
                perm = self.rng.permutation(n)
                batches.extend(perm[s:s + B] for s in range(0, n, B))
        for _ in range(self.cfg.sgd_steps):
            batches.append(self.rng.integers(0, n, size=B))
        self._sgd(batches)

    def predict(self, W1, w2, x, a):
        pre = self._u(x, a) @ W1.T
        return leaky_relu(leaky_relu(pre, self.cls.slope_pos, self.cls.slope_neg) @ w2,
                          self.cls.slope_pos, self.cls.slope_neg)

    def residual_sse(self) -> float:
        h = self.history
        if h.n == 0:
            return 0.0
        r = self.predict(self.W1, self.w2, h.inputs, h.actions) - h.outputs
        return float(r @ r)

    def fit_result(self) -> FitResult:
        fn = NodeFunction(self.cls, {"W1": self.W1.copy(), "w2": self.w2.copy()})
        return FitResult(fn, self.G.copy(), self.residual_sse(), self.dim, (self.W1.copy(), self.w2.copy()))

    def center_params(self, k: int = 1):
        return (np.repeat(self.W1[None], k, axis=0), np.repeat(self.w2[None], k, axis=0))

    def posterior_draw(self, rng: np.random.Generator, scale: float):
        """Perturb each hidden row of ``W1`` with covariance ``scale^2 G^-1`` (G: Gram of ``[a, x]``)."""
        W1, w2 = self.center_params(1)
        if scale == 0:
            return W1, w2
        Lc = np.linalg.cholesky(self.G)
        g = rng.standard_normal((self.cls.arity + 1, self.cls.width))
        W1 = W1 + scale * _upper_solve(Lc, g).T[None]
        return W1, w2

    def distance_sq(self, W1, w2) -> np.ndarray:
        h = self.history
        if h.n == 0:
            return np.zeros(W1.shape[0])
        base = self.predict(self.W1, self.w2, h.inputs, h.actions)
        out = np.empty(W1.shape[0])
        for j in range(W1.shape[0]):
            diff = self.predict(W1[j], w2[j], h.inputs, h.actions) - base
            out[j] = diff @ diff
        return out

    def confidence_draws(self, rng: np.random.Generator, beta: float, k: int):
        """Final-layer perturbations scaled by the hidden-feature Gram, shrunk into the set."""
        W1, w2 = self.center_params(k)
        if k == 1 or beta <= 0:
            return W1, w2
        h = self.history
        hid = leaky_relu(self._u(h.inputs, h.actions) @ self.W1.T, self.cls.slope_pos, self.cls.slope_neg)
        H = self.cfg.ridge * np.eye(self.cls.width) + hid.T @ hid
        u = rng.standard_normal((k - 1, self.cls.width))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        steps = _upper_solve(np.linalg.cholesky(H), u.T).T * math.sqrt(beta)
        for _ in range(60):
            dist = self.distance_sq(W1[1:], self.w2 + steps)
            bad = dist > beta
            if not bad.any():
                break
            steps[bad] *= 0.5
        w2[1:] = self.w2 + steps
        return W1, w2

    def evaluate(self, params, x, a):
        W1, w2 = params
        sp, sn = self.cls.slope_pos, self.cls.slope_neg
        pre = a[None, :, None, None] * W1[:, None, None, :, 0] + np.einsum("kamd,ksd->kams", x, W1[:, :, 1:])
        hid = leaky_relu(pre, sp, sn)
        return leaky_relu(np.einsum("kams,ks->kam", hid, w2), sp, sn)

    def take(self, params, idx):
        return params[0][idx: idx + 1], params[1][idx: idx + 1]


def make_learner(cls, cfg: AgentConfig, rng: np.random.Generator, kind: str | None = None):
    if kind == "linear" or (kind is None and isinstance(cls, LinearClass)):
        return RidgeLearner(LinearFeatures(cls.arity), cfg.ridge)
    if isinstance(cls, PolynomialClass):
        if cls.degree != 2:
            raise ValueError("polynomial fitting is implemented for degree 2 only")
        return RidgeLearner(QuadraticFeatures(cls.arity), cfg.ridge)
    if isinstance(cls, NeuralNetClass):
        return NeuralLearner(cls, cfg, rng)
    raise ValueError(f"no learner for class {type(cls).__name__}")


def fit_node(history: NodeHistory, cls, cfg: AgentConfig | None = None, rng=None) -> FitResult:
    """Least-squares fit of one node from scratch (empty history: default member)."""
    cfg = cfg or AgentConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    learner = make_learner(cls, cfg, rng)
    for x, a, y in zip(history.inputs, history.actions, history.outputs):
        learner.add(x, a, y)
    learner.refit()
    return learner.fit_result()


# ---------------------------------------------------------------------------
# Model evaluation
# ---------------------------------------------------------------------------

def noise_values(template: Scm, arms: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Known-template noise values from base uniforms ``u`` (M, N).

    Shape (A, M, N) when some noise depends on the intervention, else (1, M, N).
    """
    M, N = u.shape[0], template.n
    if not any(nz.action_dependent for nz in template.noises):
        eps = np.empty((1, M, N))
        for i, nz in enumerate(template.noises):
            eps[0, :, i] = nz.transform(u[:, i], 0.0)
        return eps
    eps = np.empty((arms.shape[0], M, N))
    for i, nz in enumerate(template.noises):
        eps[:, :, i] = nz.transform(u[None, :, i], arms[:, i][:, None])
    return eps


def noise_means(template: Scm, arms: np.ndarray) -> np.ndarray:
    return np.stack([nz.mean_value(arms[:, i]) for i, nz in enumerate(template.noises)], axis=1)[:, None, :]


def model_node_values(template: Scm, learners, params, arms: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """X (k, A, M, N) under candidate parameters, one entry per node in ``params``."""
    k = _batch_size(params[0])
    A, M, N = arms.shape[0], eps.shape[1], eps.shape[2]
    X = np.empty((k, A, M, N))
    do = template.mode == "do"
    for i in template.dag.order:
        pa = [p - 1 for p in template.dag.parents_of(i)]
        a = arms[:, i - 1]
        lr = learners[i - 1]
        x = X[..., pa]
        if do:
            val = lr.evaluate(params[i - 1], x, np.zeros_like(a)) + eps[None, :, :, i - 1]
            X[..., i - 1] = np.where((a != 0)[None, :, None], a[None, :, None], val)
        else:
            X[..., i - 1] = lr.evaluate(params[i - 1], x, a) + eps[None, :, :, i - 1]
    return X


def model_reward_values(template: Scm, learners, params, arms: np.ndarray, eps: np.ndarray,
                        groups: dict | None = None) -> np.ndarray:
    """X_N (k, A, M) under candidate parameters; same values as ``model_node_values``.

    Nodes are evaluated once per distinct ancestor intervention (see ``ancestor_groups``).
    """
    groups = groups if groups is not None else ancestor_groups(template.dag, arms)
    k = _batch_size(params[0])
    M = eps.shape[1]
    do = template.mode == "do"
    vals = {}
    for i in template.dag.order:
        rep, _ = groups[i]
        pa = template.dag.parents_of(i)
        x = np.empty((k, rep.size, M, len(pa)))
        for j, p in enumerate(pa):
            x[..., j] = vals[p][:, groups[p][1][rep]]
        a = arms[rep, i - 1]
        e = eps[None, :, :, i - 1] if eps.shape[0] == 1 else eps[rep][None, :, :, i - 1]
        lr = learners[i - 1]
        if do:
            val = lr.evaluate(params[i - 1], x, np.zeros_like(a)) + e
            vals[i] = np.where((a != 0)[None, :, None], a[None, :, None], val)
        else:
            vals[i] = lr.evaluate(params[i - 1], x, a) + e
    N = template.n
    return vals[N][:, groups[N][1]]


def _batch_size(p) -> int:
    return p[0].shape[0] if isinstance(p, tuple) else p.shape[0]


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------

class Agent:
    name = "agent"
    records_candidates = False

    def select(self, t: int) -> int:
        raise NotImplementedError

    def observe(self, arm_index: int, X: np.ndarray):
        raise NotImplementedError


class GcbAgent(Agent):
    """GCB-UCB (``policy='ucb'``) or GCB-TS (``policy='ts'``) over a template SCM.

    The template supplies graph, function classes, noise models, spaces and
    mode; its concrete functions are never read.
    """

    def __init__(
        self,
        template: Scm,
        T: int,
        cfg: AgentConfig | None = None,
        rng: np.random.Generator | None = None,
        policy: str = "ucb",
        learner_kind: str | None = None,
        arms: np.ndarray | None = None,
    ):
        if policy not in ("ucb", "ts"):
            raise ValueError("policy must be 'ucb' or 'ts'")
        self.template = template
        self.T = T
        self.cfg = cfg or AgentConfig()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.policy = policy
        self.name = f"gcb-{policy}"
        self.records_candidates = policy == "ucb"
        self.arms = arm_grid(template.spaces, self.cfg.grid_resolution) if arms is None else arms
        N = template.n
        self.delta = self.cfg.delta if self.cfg.delta is not None else 1.0 / (N * T)
        seeds = self.rng.spawn(N)
        self.learners = [make_learner(f.cls, self.cfg, seeds[i], learner_kind)
                         for i, f in enumerate(template.functions)]
        self.affine = all(getattr(lr, "affine", False) for lr in self.learners)
        self.t = 0
        self._groups = None
        self.chosen_params: list = []
        self._log_cn = [self._node_log_cn(f.cls, lr) for f, lr in zip(template.functions, self.learners)]

    def _node_log_cn(self, cls, learner) -> float:
        if isinstance(learner, RidgeLearner) and isinstance(learner.features, LinearFeatures):
            cls = LinearClass(cls.arity)
        if cls.arity == 0 and not isinstance(cls, (PolynomialClass, NeuralNetClass)):
            return 0.0
        return cx.theoretical_dim_and_cn(
            cls, self.T, K=self.cfg.K, C=self.cfg.C, constant=self.cfg.dim_constant
        ).log_cn

    def beta(self, i: int, t: int) -> float:
        """Squared confidence radius for node ``i`` (0-based) at round ``t``."""
        lcn = self._log_cn[i]
        b = cx.beta_radius(max(t, 1), 1.0, self.delta, 1.0 / self.T, self.cfg.C, log_cn=lcn)
        return self.cfg.beta_scale * b

    def confidence_set(self, i: int) -> ConfidenceSet:
        lr = self.learners[i]
        return ConfidenceSet(lr.fit_result(), self.beta(i, max(self.t, 1)), lr.history)

    def _draw_u(self):
        return self.rng.random((1 if self.affine else self.cfg.rollouts, self.template.n))

    def candidate_values(self, params) -> np.ndarray:
        """Estimated rewards (k, A) for stacked candidate parameters."""
        if self.affine:
            eps = noise_means(self.template, self.arms)
        else:
            eps = noise_values(self.template, self.arms, self._u)
        if self._groups is None:
            self._groups = ancestor_groups(self.template.dag, self.arms)
        return model_reward_values(self.template, self.learners, params, self.arms, eps, self._groups).mean(axis=2)

    def select(self, t: int) -> int:
        self._u = self._draw_u()
        if self.policy == "ts":
            params = [lr.posterior_draw(self.rng, self.cfg.posterior_scale) for lr in self.learners]
        else:
            k = self.cfg.n_candidates
            params = [lr.confidence_draws(self.rng, self.beta(i, t), k) for i, lr in enumerate(self.learners)]
        values = self.candidate_values(params)
        per_arm = values.max(axis=0)
        arm = int(np.argmax(per_arm))
        cand = int(np.argmax(values[:, arm]))
        if self.records_candidates:
            self.chosen_params.append([lr.take(p, cand) for lr, p in zip(self.learners, params)])
        return arm

    def observe(self, arm_index: int, X: np.ndarray):
        a = self.arms[arm_index]
        do = self.template.mode == "do"
        for i in range(1, self.template.n + 1):
            if do and a[i - 1] != 0:
                continue
            pa = [p - 1 for p in self.template.dag.parents_of(i)]
            self.learners[i - 1].add(X[pa], a[i - 1], X[i - 1])
        for lr in self.learners:
            lr.refit()
        self.t += 1


def oful_beta(learner: RidgeLearner, delta: float, cfg: AgentConfig) -> float:
    """Self-normalised ellipsoid radius squared for a ridge learner."""
    p = max(learner.dim, 1)
    n = learner.history.n
    root = cfg.noise_sd * math.sqrt(2 * math.log(1 / delta) + p * math.log(1 + n / (cfg.ridge * p)))
    root += math.sqrt(cfg.ridge) * cfg.K
    return root * root


class LinSemAgent(GcbAgent):
    """Linear-SEM UCB baseline: the linear per-node fit with an ellipsoid bonus, whatever the true class."""

    def __init__(self, template: Scm, T: int, cfg: AgentConfig | None = None, rng=None, arms=None):
        super().__init__(template, T, cfg, rng, policy="ucb", learner_kind="linear", arms=arms)
        self.name = "linsem"
        self.records_candidates = False

    def beta(self, i: int, t: int) -> float:
        return self.cfg.beta_scale * oful_beta(self.learners[i], self.delta, self.cfg)


class VanillaUcbAgent(Agent):
    """UCB1 over the arm grid: each arm once, then mean + sqrt(2 ln t / n)."""

    name = "ucb"

    def __init__(self, template: Scm, T: int | None = None, cfg: AgentConfig | None = None, rng=None, arms=None):
        cfg = cfg or AgentConfig()
        self.arms = arm_grid(template.spaces, cfg.grid_resolution) if arms is None else arms
        self.counts = np.zeros(self.arms.shape[0])
        self.sums = np.zeros(self.arms.shape[0])

    def select(self, t: int) -> int:
        unpulled = np.flatnonzero(self.counts == 0)
        if unpulled.size:
            return int(unpulled[0])
        score = self.sums / self.counts + np.sqrt(2.0 * math.log(max(t, 1)) / self.counts)
        return int(np.argmax(score))

    def observe(self, arm_index: int, X: np.ndarray):
        self.counts[arm_index] += 1
        self.sums[arm_index] += X[-1]


class ConstantAgent(Agent):
    name = "constant"

    def __init__(self, arm_index: int):
        self.arm_index = arm_index

    def select(self, t: int) -> int:
        return self.arm_index

    def observe(self, arm_index, X):
        pass


class UniformAgent(Agent):
    name = "uniform"

    def __init__(self, n_arms: int, rng: np.random.Generator):
        self.n_arms = n_arms
        self.rng = rng

    def select(self, t: int) -> int:
        return int(self.rng.integers(self.n_arms))

    def observe(self, arm_index, X):
        pass


AGENTS = {"gcb-ucb", "gcb-ts", "ucb", "linsem"}


def make_agent(name: str, template: Scm, T: int, cfg: AgentConfig, rng: np.random.Generator, arms=None) -> Agent:
    if name == "gcb-ucb":
        return GcbAgent(template, T, cfg, rng, "ucb", arms=arms)
    if name == "gcb-ts":
        return GcbAgent(template, T, cfg, rng, "ts", arms=arms)
    if name == "ucb":
        return VanillaUcbAgent(template, T, cfg, rng, arms=arms)
    if name == "linsem":
        return LinSemAgent(template, T, cfg, rng, arms=arms)
    raise ValueError(f"unknown agent {name!r}; choose from {sorted(AGENTS)}")


# ---------------------------------------------------------------------------
# Interaction loop
# ---------------------------------------------------------------------------

@dataclass
class RegretTrace:
    arm_index: np.ndarray
    arms: np.ndarray
    reward: np.ndarray
    inst_regret: np.ndarray
    cum_regret: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.reward.size


def step(agent: Agent, env: Scm, t: int, rng: np.random.Generator, oracle) -> tuple[np.ndarray, np.ndarray, float]:
    """One round: select, pull, observe, and score against the oracle table."""
    idx = agent.select(t)
    a = oracle.arms[idx]
    X = env.sample_one(a, rng.random(env.n))
    agent.observe(idx, X)
    return a, X, oracle.regret(idx)


def run_agent(agent: Agent, env: Scm, T: int, rng: np.random.Generator, oracle, meta: dict | None = None) -> RegretTrace:
    idx = np.empty(T, dtype=int)
    reward = np.empty(T)
    regret = np.empty(T)
    for t in range(1, T + 1):
        i = agent.select(t)
        a = oracle.arms[i]
        X = env.sample_one(a, rng.random(env.n))
        agent.observe(i, X)
        idx[t - 1] = i
        reward[t - 1] = X[-1]
        regret[t - 1] = oracle.regret(i)
    cum = np.add.accumulate(regret)
    return RegretTrace(idx, oracle.arms[idx], reward, regret, cum, dict(meta or {}))


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def compounding_error_probe(
    trace: RegretTrace,
    env: Scm,
    agent: GcbAgent,
    rng: np.random.Generator,
    rollouts: int = 256,
) -> np.ndarray:
    """Cumulative ``|E_a(t)[X_i | f_bar_t] - E_a(t)[X_i | f]|`` per node, shape (T, N).

    Both conditional means use the same noise draws each round.
    """
    T = len(trace)
    if len(agent.chosen_params) < T:
        raise ValueError("agent did not record its optimistic candidates")
    diffs = np.zeros((T, env.n))
    for t in range(T):
        a = trace.arms[t][None, :]
        u = rng.random((rollouts, env.n))
        true_mean = env.forward(a, u)[0].mean(axis=0)
        eps = noise_values(agent.template, a, u)
        model = model_node_values(agent.template, agent.learners, agent.chosen_params[t], a, eps)
        diffs[t] = np.abs(model[0, 0].mean(axis=0) - true_mean)
    return np.add.accumulate(diffs, axis=0)


def compounding_reference(env: Scm, B: float, K_levels: Sequence[float]) -> np.ndarray:
    """Per-node right-hand side ``B * sum_{l=1}^{L_i} d^(l-1) prod_{k=2}^{l} K^(k)``."""
    stats = compute_stats(env.dag)
    return np.array([cx.compounding_reference(B, stats.max_in_degree, K_levels, L_i) for L_i in stats.depths])


def coverage_failures(agent: GcbAgent, env: Scm) -> np.ndarray:
    """Boolean per node: the true mechanism lies outside its current confidence set."""
    out = np.zeros(env.n, dtype=bool)
    for i in range(env.n):
        if agent.learners[i].dim == 0:
            continue
        cs = agent.confidence_set(i)
        out[i] = not in_confidence_set(env.functions[i], cs)
    return out
