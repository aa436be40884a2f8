"""Structural causal models under soft or do interventions.

Every node evaluates ``X_i = f_i(X_Pa(i); a_i) + eps_i`` in topological order,
with ``a_i = 0`` denoting the observational mechanism. Function classes are
vectorised: ``x`` carries the parent values in its last axis and ``a`` matches
the leading axes of ``x``.

Noise is generated from uniform base variates through an inverse CDF so that
common random numbers can be shared across arms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import (
    AnalyticUnsupported,
    ArityMismatch,
    ConstraintViolation,
    GridTooLarge,
    InvalidIntervention,
)
from .graph import Dag

DEFAULT_GRID = 11
DEFAULT_ARM_CAP = 10**6
DEFAULT_ROLLOUTS = 256

_NORM_TOL = 1e-9


# ---------------------------------------------------------------------------
# Activation
# ---------------------------------------------------------------------------

def leaky_relu(u, slope_pos=1.0, slope_neg=0.1):
    if slope_pos >= slope_neg >= 0:
        return np.maximum(slope_pos * u, slope_neg * u)
    return np.where(u >= 0, slope_pos * u, slope_neg * u)


# ---------------------------------------------------------------------------
# Function classes
# ---------------------------------------------------------------------------

def _check_arity(x: np.ndarray, arity: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != arity:
        got = 0 if x.ndim == 0 else x.shape[-1]
        raise ArityMismatch(f"expected {arity} parent values, got {got}")
    return x


@dataclass(frozen=True)
class LinearClass:
    """``f(x; a) = <theta (1 - a) + a theta_bar, x>`` with both norms bounded by K."""

    arity: int
    lipschitz_bound: float = math.inf
    output_bound: float = 1.0
    kind = "linear"

    def param_names(self):
        return ("theta", "theta_bar")

    def zero_params(self):
        return {"theta": np.zeros(self.arity), "theta_bar": np.zeros(self.arity)}

    def validate(self, params):
        for name in self.param_names():
            v = np.asarray(params[name], dtype=float)
            if v.shape != (self.arity,):
                raise ArityMismatch(f"{name} must have shape ({self.arity},), got {v.shape}")
            if np.linalg.norm(v) > self.lipschitz_bound * (1 + _NORM_TOL):
                raise ConstraintViolation(
                    f"||{name}|| = {np.linalg.norm(v):.6g} exceeds K = {self.lipschitz_bound}"
                )

    def evaluate(self, params, x, a):
        x = _check_arity(x, self.arity)
        a = np.asarray(a, dtype=float)
        base = x @ np.asarray(params["theta"], dtype=float)
        bar = x @ np.asarray(params["theta_bar"], dtype=float)
        return (1.0 - a) * base + a * bar

    def norm_bound(self):
        return self.lipschitz_bound


@dataclass(frozen=True)
class PolynomialClass:
    """``f(x; a) = <theta, [x, a]>^p`` with ``||theta|| <= K^(1/p) / (p^(1/p) (d C + 1))``.

    ``degree_bound`` is the graph-level degree ``d`` entering the norm bound and
    defaults to the node arity. Fitting is only supported for ``degree == 2``.
    """

    arity: int
    degree: int = 2
    lipschitz_bound: float = math.inf
    output_bound: float = 1.0
    degree_bound: int | None = None

    kind = "polynomial"

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("polynomial degree must be >= 1")

    def param_names(self):
        return ("theta",)

    def zero_params(self):
        return {"theta": np.zeros(self.arity + 1)}

    def norm_bound(self):
        p = self.degree
        dd = self.arity if self.degree_bound is None else self.degree_bound
        return self.lipschitz_bound ** (1.0 / p) / (p ** (1.0 / p) * (dd * self.output_bound + 1.0))

    def validate(self, params):
        v = np.asarray(params["theta"], dtype=float)
        if v.shape != (self.arity + 1,):
            raise ArityMismatch(f"theta must have shape ({self.arity + 1},), got {v.shape}")
        bound = self.norm_bound()
        if np.linalg.norm(v) > bound * (1 + _NORM_TOL):
            raise ConstraintViolation(f"||theta|| = {np.linalg.norm(v):.6g} exceeds {bound:.6g}")

    def evaluate(self, params, x, a):
        x = _check_arity(x, self.arity)
        theta = np.asarray(params["theta"], dtype=float)
        inner = x @ theta[:-1] + np.asarray(a, dtype=float) * theta[-1]
        return inner**self.degree


def QuadraticClass(arity: int, **kwargs) -> PolynomialClass:
    return PolynomialClass(arity, degree=2, **kwargs)


@dataclass(frozen=True)
class NeuralNetClass:
    """Two-layer net ``sigma(W2 . sigma(W1 [a, x]))`` with a leaky-ReLU activation."""

    arity: int
    width: int
    slope_pos: float = 1.0
    slope_neg: float = 0.1
    lipschitz_bound: float = math.inf
    output_bound: float = 1.0

    kind = "neural"

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if not (self.slope_pos > 0 and self.slope_neg >= 0):
            raise ValueError("activation must be increasing: slope_pos > 0, slope_neg >= 0")

    def param_names(self):
        return ("W1", "w2")

    def zero_params(self):
        return {"W1": np.zeros((self.width, self.arity + 1)), "w2": np.zeros(self.width)}

    def validate(self, params):
        W1 = np.asarray(params["W1"], dtype=float)
        w2 = np.asarray(params["w2"], dtype=float)
        if W1.shape != (self.width, self.arity + 1):
            raise ArityMismatch(f"W1 must have shape {(self.width, self.arity + 1)}, got {W1.shape}")
        if w2.shape != (self.width,):
            raise ArityMismatch(f"w2 must have shape ({self.width},), got {w2.shape}")

    def activation(self, u):
        return leaky_relu(u, self.slope_pos, self.slope_neg)

    @property
    def gradient_ratio(self) -> float:
        hi = max(self.slope_pos, self.slope_neg)
        lo = min(self.slope_pos, self.slope_neg)
        return math.inf if lo == 0 else hi / lo

    def evaluate(self, params, x, a):
        x = _check_arity(x, self.arity)
        W1 = np.asarray(params["W1"], dtype=float)
        w2 = np.asarray(params["w2"], dtype=float)
        a = np.asarray(a, dtype=float)
        # [a, x] @ W1.T without materialising the concatenation
        pre = a[..., None] * W1[:, 0] + x @ W1[:, 1:].T
        hidden = self.activation(pre)
        return self.activation(hidden @ w2)


@dataclass(frozen=True)
class CallableClass:
    """Wraps an arbitrary vectorised ``fn(x, a)``; used for enumerated classes."""

    arity: int
    output_bound: float = 1.0
    lipschitz_bound: float = math.inf
    kind = "callable"

    def param_names(self):
        return ("fn",)

    def validate(self, params):
        if not callable(params.get("fn")):
            raise ValueError("callable class needs a 'fn' parameter")

    def evaluate(self, params, x, a):
        x = _check_arity(x, self.arity)
        out = params["fn"](x, np.asarray(a, dtype=float))
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x[..., 0] if self.arity else np.asarray(a), np.asarray(a)).shape)


@dataclass(frozen=True)
class FiniteClass:
    """An explicitly enumerated class, with the input domain its sup-norm is taken over."""

    arity: int
    members: tuple
    inputs: tuple = ()
    kind = "finite"

    @property
    def lipschitz_bound(self):
        return max((lipschitz_estimate(m) for m in self.members), default=0.0)

    @property
    def output_bound(self):
        return max((m.cls.output_bound for m in self.members), default=0.0)


@dataclass(frozen=True, eq=False)
class NodeFunction:
    """A concrete member ``f_i(.; a_i)`` of a function class."""

    cls: object
    params: dict = field(default_factory=dict)
    do_form: bool = False

    def __post_init__(self):
        if hasattr(self.cls, "validate"):
            self.cls.validate(self.params)

    @property
    def arity(self) -> int:
        return self.cls.arity

    def __call__(self, x, a):
        if self.do_form:
            a = np.asarray(a, dtype=float)
            base = self.cls.evaluate(self.params, x, np.zeros_like(a))
            return np.where(a != 0, a, base)
        return self.cls.evaluate(self.params, x, a)


def evaluate(f: NodeFunction, x_pa, a) -> float | np.ndarray:
    x = np.asarray(x_pa, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != f.arity:
        raise ArityMismatch(f"node function takes {f.arity} parent values, got {x.shape[-1]}")
    out = f(x, a)
    return float(out) if np.ndim(out) == 0 else out


def linear(theta, theta_bar, K=math.inf, C=1.0) -> NodeFunction:
    theta = np.asarray(theta, dtype=float)
    return NodeFunction(LinearClass(theta.size, K, C), {"theta": theta, "theta_bar": np.asarray(theta_bar, float)})


def polynomial(theta, degree=2, K=math.inf, C=1.0, degree_bound=None) -> NodeFunction:
    theta = np.asarray(theta, dtype=float)
    cls = PolynomialClass(theta.size - 1, degree, K, C, degree_bound)
    return NodeFunction(cls, {"theta": theta})


def neural(W1, w2, slope_pos=1.0, slope_neg=0.1, K=math.inf, C=1.0) -> NodeFunction:
    W1 = np.atleast_2d(np.asarray(W1, dtype=float))
    w2 = np.asarray(w2, dtype=float).reshape(-1)
    cls = NeuralNetClass(W1.shape[1] - 1, W1.shape[0], slope_pos, slope_neg, K, C)
    return NodeFunction(cls, {"W1": W1, "w2": w2})


def from_callable(arity: int, fn: Callable, C: float = 1.0) -> NodeFunction:
    return NodeFunction(CallableClass(arity, C), {"fn": fn})


def zero_function(arity: int) -> NodeFunction:
    return linear(np.zeros(arity), np.zeros(arity))


def do_intervention_form(f: NodeFunction) -> NodeFunction:
    """``a`` if ``a != 0`` else ``f(x; 0)``: the soft-form view of a do intervention."""
    return NodeFunction(f.cls, f.params, do_form=True)


def lipschitz_estimate(f: NodeFunction, input_norm: float | None = None) -> float:
    """Upper bound on the Lipschitz constant of ``f`` in its parent inputs.

    Polynomial members use ``p ||theta||^p sup||[x, a]||^(p-1)`` over the ball of
    radius ``input_norm`` (default ``sqrt(arity C^2 + 1)``); neural members use
    ``(sup sigma')^2 ||W2|| ||W1||_op``.
    """
    cls = f.cls
    if isinstance(cls, LinearClass):
        return float(max(np.linalg.norm(f.params["theta"]), np.linalg.norm(f.params["theta_bar"]), 0.0))
    if isinstance(cls, PolynomialClass):
        if input_norm is None:
            input_norm = math.sqrt(cls.arity * cls.output_bound**2 + 1.0)
        p = cls.degree
        th = float(np.linalg.norm(f.params["theta"]))
        return p * th**p * input_norm ** (p - 1)
    if isinstance(cls, NeuralNetClass):
        s = max(cls.slope_pos, cls.slope_neg)
        return s * s * float(np.linalg.norm(f.params["w2"])) * float(np.linalg.norm(f.params["W1"], 2))
    raise AnalyticUnsupported(f"no Lipschitz estimate for class {getattr(cls, 'kind', cls)!r}")


# ---------------------------------------------------------------------------
# Noise models
# ---------------------------------------------------------------------------

def _clip_u(u):
    return np.clip(u, 1e-300, 1.0 - 1e-16)


@dataclass(frozen=True)
class GaussianNoise:
    variance: float = 1.0
    mean: float = 0.0
    kind = "gaussian"
    action_dependent = False

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("Gaussian variance must be >= 0")

    def transform(self, u, a):
        z = ndtri(_clip_u(u))
        return self.mean + math.sqrt(self.variance) * np.broadcast_to(z, np.broadcast(u, a).shape)

    def mean_value(self, a):
        return np.full(np.shape(a), self.mean, dtype=float)

    def support(self):
        return None if self.variance > 0 else ((self.mean, 1.0),)

    def is_zero_mean(self):
        return self.mean == 0.0


@dataclass(frozen=True)
class RademacherNoise:
    kind = "rademacher"
    action_dependent = False

    def transform(self, u, a):
        return np.broadcast_to(np.where(np.asarray(u) < 0.5, -1.0, 1.0), np.broadcast(u, a).shape)

    def mean_value(self, a):
        return np.zeros(np.shape(a))

    def support(self):
        return ((-1.0, 0.5), (1.0, 0.5))

    def is_zero_mean(self):
        return True


@dataclass(frozen=True)
class ShiftedBernoulliNoise:
    """``Bern(p_if)`` when the node's own intervention satisfies ``a <= threshold``, else ``Bern(p_else)``.

    The only intervention-dependent noise in the package; it realises the node-1
    noise of the two-instance lower-bound constructions.
    """

    p_if: float
    p_else: float
    threshold: float = 0.0
    kind = "bernoulli"
    action_dependent = True

    def __post_init__(self):
        for p in (self.p_if, self.p_else):
            if not 0.0 <= p <= 1.0:
                raise ValueError("Bernoulli probabilities must lie in [0, 1]")

    def prob(self, a):
        return np.where(np.asarray(a, dtype=float) <= self.threshold, self.p_if, self.p_else)

    def transform(self, u, a):
        return (np.asarray(u) < self.prob(a)).astype(float)

    def mean_value(self, a):
        return self.prob(a).astype(float)

    def support(self):
        return "bernoulli"

    def is_zero_mean(self):
        return self.p_if == 0.0 and self.p_else == 0.0

    def swapped(self) -> "ShiftedBernoulliNoise":
        return ShiftedBernoulliNoise(self.p_else, self.p_if, self.threshold)


@dataclass(frozen=True)
class ZeroNoise:
    kind = "zero"
    action_dependent = False

    def transform(self, u, a):
        return np.zeros(np.broadcast(u, a).shape)

    def mean_value(self, a):
        return np.zeros(np.shape(a))

    def support(self):
        return ((0.0, 1.0),)

    def is_zero_mean(self):
        return True


def _support_for(noise, a):
    """Finite support of ``noise`` at intervention ``a`` as (values, probs) arrays, or None."""
    sup = noise.support()
    if sup is None:
        return None
    if sup == "bernoulli":
        p = noise.prob(a)
        return np.array([0.0, 1.0]), np.stack([1.0 - p, p], axis=-1)
    vals = np.array([v for v, _ in sup])
    probs = np.broadcast_to(np.array([q for _, q in sup]), np.shape(a) + (len(sup),))
    return vals, probs


# ---------------------------------------------------------------------------
# Intervention spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InterventionSpace:
    """Per-node intervention set: ``binary`` {0,1}, ``interval`` [0,1] gridded, or ``finite``."""

    kind: str = "binary"
    resolution: int = DEFAULT_GRID
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("binary", "interval", "finite"):
            raise ValueError(f"unknown intervention space kind {self.kind!r}")
        if self.kind == "interval" and self.resolution < 2:
            raise ValueError("interval grid resolution must be >= 2")
        if self.kind == "finite":
            vals = tuple(sorted(float(v) for v in self.values))
            if 0.0 not in vals:
                raise ValueError("finite intervention set must contain 0 (observational)")
            object.__setattr__(self, "values", vals)

    def grid(self, resolution: int | None = None) -> np.ndarray:
        if self.kind == "binary":
            return np.array([0.0, 1.0])
        if self.kind == "interval":
            return np.linspace(0.0, 1.0, resolution or self.resolution)
        return np.array(self.values)

    def contains(self, a: float) -> bool:
        a = float(a)
        if self.kind == "binary":
            return a in (0.0, 1.0)
        if self.kind == "interval":
            return 0.0 <= a <= 1.0
        return any(abs(a - v) <= 1e-12 for v in self.values)


BINARY = InterventionSpace("binary")


def arm_grid(spaces: Sequence[InterventionSpace], resolution: int | None = None, cap: int = DEFAULT_ARM_CAP) -> np.ndarray:
    """All intervention vectors on the per-node grids, in lexicographic order."""
    grids = [s.grid(resolution) for s in spaces]
    count = math.prod(len(g) for g in grids)
    if count > cap:
        raise GridTooLarge(f"{count} arms exceed the cap of {cap}")
    mesh = np.meshgrid(*grids, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


# ---------------------------------------------------------------------------
# The SCM
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scm:
    dag: Dag
    functions: tuple
    noises: tuple
    spaces: tuple
    mode: str = "soft"
    clamp: bool = False

    def __post_init__(self):
        n = self.dag.node_count
        for name in ("functions", "noises", "spaces"):
            seq = tuple(getattr(self, name))
            if len(seq) != n:
                raise ValueError(f"{name}: expected {n} entries, got {len(seq)}")
            object.__setattr__(self, name, seq)
        for i, f in enumerate(self.functions, start=1):
            if f.arity != len(self.dag.parents_of(i)):
                raise ArityMismatch(
                    f"node {i}: function arity {f.arity} != in-degree {len(self.dag.parents_of(i))}"
                )
        if self.mode not in ("soft", "do"):
            raise ValueError("mode must be 'soft' or 'do'")

    @property
    def n(self) -> int:
        return self.dag.node_count

    def replace(self, **changes) -> "Scm":
        kw = dict(dag=self.dag, functions=self.functions, noises=self.noises,
                  spaces=self.spaces, mode=self.mode, clamp=self.clamp)
        kw.update(changes)
        return Scm(**kw)

    def check_arm(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.size != self.n:
            raise InvalidIntervention(f"intervention vector has {a.size} entries, expected {self.n}")
        for i, (ai, sp) in enumerate(zip(a, self.spaces), start=1):
            if not sp.contains(ai):
                raise InvalidIntervention(f"a_{i} = {ai} not in A_{i} ({sp.kind})")
        return a

    def node_output(self, i: int, x_pa, a_i, eps):
        """Realised ``X_i`` given parent values, own intervention and noise."""
        f = self.functions[i - 1]
        if self.mode == "do":
            base = f(x_pa, np.zeros_like(a_i))
            if self.clamp:
                c = f.cls.output_bound
                base = np.clip(base, -c, c)
            return np.where(a_i != 0, a_i, base + eps)
        val = f(x_pa, a_i)
        if self.clamp:
            c = f.cls.output_bound
            val = np.clip(val, -c, c)
        return val + eps

    def forward(self, arms: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Propagate ``arms`` (B, N) with base uniforms ``u`` (M, N) -> X (B, M, N)."""
        arms = np.asarray(arms, dtype=float)
        u = np.asarray(u, dtype=float)
        B, M = arms.shape[0], u.shape[0]
        X = np.empty((B, M, self.n))
        for i in self.dag.order:
            a_i = np.broadcast_to(arms[:, i - 1][:, None], (B, M))
            eps = self.noises[i - 1].transform(u[None, :, i - 1], a_i)
            pa = [p - 1 for p in self.dag.parents_of(i)]
            X[:, :, i - 1] = self.node_output(i, X[:, :, pa], a_i, eps)
        return X

    def sink_samples(self, arms: np.ndarray, u: np.ndarray) -> np.ndarray:
        """``X_N`` for every arm and rollout (B, M); matches ``forward`` up to rounding.

        Each node is evaluated once per distinct setting of its ancestors'
        interventions rather than once per arm.
        """
        arms = np.asarray(arms, dtype=float)
        u = np.asarray(u, dtype=float)
        M = u.shape[0]
        groups = ancestor_groups(self.dag, arms)
        vals = {}
        for i in self.dag.order:
            rep, _ = groups[i]
            a_i = np.broadcast_to(arms[rep, i - 1][:, None], (rep.size, M))
            eps = self.noises[i - 1].transform(u[None, :, i - 1], a_i)
            pa = self.dag.parents_of(i)
            x_pa = np.empty((rep.size, M, len(pa)))
            for k, p in enumerate(pa):
                x_pa[:, :, k] = vals[p][groups[p][1][rep]]
            vals[i] = self.node_output(i, x_pa, a_i, eps)
        return vals[self.n][groups[self.n][1]]

    def sample_one(self, a: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Single draw of ``X`` for arm ``a`` from base uniforms ``u`` (N,); matches ``forward`` up to rounding."""
        X = np.empty(self.n)
        for i in self.dag.order:
            a_i = a[i - 1]
            eps = float(self.noises[i - 1].transform(u[i - 1], a_i))
            pa = [p - 1 for p in self.dag.parents_of(i)]
            X[i - 1] = float(self.node_output(i, X[pa], np.float64(a_i), eps))
        return X

    def forward_with_noise(self, arms: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """Propagate with explicit noise values ``eps`` (B, K, N) -> X (B, K, N)."""
        B, K = eps.shape[0], eps.shape[1]
        X = np.empty((B, K, self.n))
        for i in self.dag.order:
            a_i = np.broadcast_to(arms[:, i - 1][:, None], (B, K))
            pa = [p - 1 for p in self.dag.parents_of(i)]
            X[:, :, i - 1] = self.node_output(i, X[:, :, pa], a_i, eps[:, :, i - 1])
        return X


def ancestor_groups(dag: Dag, arms: np.ndarray) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per node: representative arm rows for each distinct ancestor intervention, and each arm's group."""
    out = {}
    for i in dag.order:
        cols = [c - 1 for c in sorted(dag.ancestors_of(i) | {i})]
        _, first, inverse = np.unique(arms[:, cols], axis=0, return_index=True, return_inverse=True)
        out[i] = (first, inverse.reshape(-1))
    return out


def sample_system(scm: Scm, a, rng: np.random.Generator) -> np.ndarray:
    """One draw of ``X`` under intervention ``a``; deterministic given the stream state."""
    a = scm.check_arm(a)
    return scm.sample_one(a, rng.random(scm.n))


def sample_batch(scm: Scm, a, rng: np.random.Generator, size: int) -> np.ndarray:
    a = scm.check_arm(a)
    u = rng.random((size, scm.n))
    return scm.forward(a[None, :], u)[0]


# ---------------------------------------------------------------------------
# Expected rewards
# ---------------------------------------------------------------------------

def _analytic_ok(scm: Scm) -> bool:
    return all(isinstance(f.cls, LinearClass) or f.arity == 0 for f in scm.functions) and not scm.clamp


def _analytic_means(scm: Scm, arms: np.ndarray) -> np.ndarray:
    """Exact node means (A, N): affine maps commute with expectation."""
    A = arms.shape[0]
    m = np.zeros((A, scm.n))
    for i in scm.dag.order:
        a_i = arms[:, i - 1]
        pa = [p - 1 for p in scm.dag.parents_of(i)]
        f = scm.functions[i - 1]
        noise_mean = scm.noises[i - 1].mean_value(a_i)
        if scm.mode == "do":
            val = f(m[:, pa], np.zeros_like(a_i)) + noise_mean
            m[:, i - 1] = np.where(a_i != 0, a_i, val)
        else:
            m[:, i - 1] = f(m[:, pa], a_i) + noise_mean
    return m


def _enumerable(scm: Scm, max_combos: int) -> bool:
    count = 1
    for nz in scm.noises:
        sup = nz.support()
        if sup is None:
            return False
        count *= 2 if sup == "bernoulli" else len(sup)
    return count <= max_combos


def _enumerated_means(scm: Scm, arms: np.ndarray) -> np.ndarray:
    """Exact E[X] (A, N) by summing over the finite joint noise support."""
    A = arms.shape[0]
    supports = [_support_for(nz, arms[:, i]) for i, nz in enumerate(scm.noises)]
    idx_lists = [range(len(s[0])) for s in supports]
    combos = np.array(list(itertools.product(*idx_lists)), dtype=int)  # (K, N)
    K = combos.shape[0]
    eps = np.empty((A, K, scm.n))
    w = np.ones((A, K))
    for i, (vals, probs) in enumerate(supports):
        eps[:, :, i] = vals[combos[:, i]][None, :]
        w *= probs[:, combos[:, i]] if probs.ndim == 2 else probs[combos[:, i]][None, :]
    X = scm.forward_with_noise(arms, eps)
    return np.einsum("ak,akn->an", w, X)


def resolve_method(scm: Scm, method: str = "auto", max_combos: int = 4096) -> str:
    if method != "auto":
        return method
    if _analytic_ok(scm):
        return "analytic"
    if _enumerable(scm, max_combos):
        return "enumerate"
    return "montecarlo"


def reward_table(
    scm: Scm,
    arms: np.ndarray,
    method: str = "auto",
    rng: np.random.Generator | None = None,
    rollouts: int = DEFAULT_ROLLOUTS,
    chunk_elems: int = 4_000_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Expected reward and standard error for every row of ``arms``.

    Monte Carlo uses the same base uniforms for every arm (common random numbers).
    """
    arms = np.asarray(arms, dtype=float)
    method = resolve_method(scm, method)
    N = scm.n
    if method == "analytic":
        if not _analytic_ok(scm):
            raise AnalyticUnsupported("analytic rewards need linear (or parentless) node functions")
        return _analytic_means(scm, arms)[:, N - 1], np.zeros(arms.shape[0])
    if method == "enumerate":
        if not _enumerable(scm, 1 << 20):
            raise AnalyticUnsupported("enumeration needs finite-support noise at every node")
        out = np.empty(arms.shape[0])
        step = max(1, chunk_elems // (N * 2 ** min(N, 20)))
        for s in range(0, arms.shape[0], step):
            out[s:s + step] = _enumerated_means(scm, arms[s:s + step])[:, N - 1]
        return out, np.zeros(arms.shape[0])
    if method != "montecarlo":
        raise ValueError(f"unknown reward method {method!r}")
    if rng is None:
        raise ValueError("Monte Carlo rewards need a random stream")
    u = rng.random((rollouts, N))
    mu = np.empty(arms.shape[0])
    se = np.empty(arms.shape[0])
    step = max(1, chunk_elems // rollouts)
    for s in range(0, arms.shape[0], step):
        xs = scm.sink_samples(arms[s:s + step], u)
        mu[s:s + step] = xs.mean(axis=1)
        se[s:s + step] = xs.std(axis=1, ddof=1) / math.sqrt(rollouts) if rollouts > 1 else 0.0
    return mu, se


def expected_reward(
    scm: Scm,
    a,
    method: str = "auto",
    rng: np.random.Generator | None = None,
    rollouts: int = DEFAULT_ROLLOUTS,
) -> tuple[float, float]:
    """``mu_a = E_a[X_N]`` with its standard error (0 for exact methods)."""
    a = scm.check_arm(a)
    if method == "analytic" and not _analytic_ok(scm):
        raise AnalyticUnsupported("analytic rewards need linear (or parentless) node functions")
    mu, se = reward_table(scm, a[None, :], method, rng, rollouts)
    return float(mu[0]), float(se[0])


@dataclass(frozen=True)
class OracleTable:
    arms: np.ndarray
    mu: np.ndarray
    se: np.ndarray
    method: str

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.mu))  # first maximiser = lexicographically smallest arm

    @property
    def best_arm(self) -> np.ndarray:
        return self.arms[self.best_index]

    @property
    def best_value(self) -> float:
        return float(self.mu[self.best_index])

    def regret(self, index: int) -> float:
        return self.best_value - float(self.mu[index])


def oracle_table(
    scm: Scm,
    method: str = "auto",
    rng: np.random.Generator | None = None,
    rollouts: int = DEFAULT_ROLLOUTS,
    resolution: int | None = None,
    cap: int = DEFAULT_ARM_CAP,
) -> OracleTable:
    arms = arm_grid(scm.spaces, resolution, cap)
    method = resolve_method(scm, method)
    mu, se = reward_table(scm, arms, method, rng, rollouts)
    return OracleTable(arms, mu, se, method)


def oracle_best_intervention(
    scm: Scm,
    method: str = "auto",
    rng: np.random.Generator | None = None,
    rollouts: int = DEFAULT_ROLLOUTS,
    resolution: int | None = None,
    cap: int = DEFAULT_ARM_CAP,
) -> tuple[np.ndarray, float]:
    """Exhaustive argmax of ``mu_a`` over the arm grid, ties to the smallest arm."""
    table = oracle_table(scm, method, rng, rollouts, resolution, cap)
    return table.best_arm.copy(), table.best_value
