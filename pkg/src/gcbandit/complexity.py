"""Eluder dimension, covering numbers and the confidence-radius formulas.

Finite samples are represented by their value matrix ``values[f, z]``: the
output of function ``f`` on input ``z``. Everything downstream (dependence
tests, eluder search, covering) is computed from that matrix alone.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import UnsupportedClass
from .scm import FiniteClass, LinearClass, NeuralNetClass, NodeFunction, PolynomialClass

EXHAUSTIVE_ELUDER_CAP = 10
EXHAUSTIVE_COVER_CAP = 12
TEMPLATE_CONSTANT = 9.6


@dataclass(frozen=True)
class FiniteClassSample:
    values: np.ndarray
    inputs: tuple = ()

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", v)

    @property
    def n_functions(self) -> int:
        return self.values.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_functions(cls, functions: Sequence[NodeFunction], inputs: Sequence[tuple]) -> "FiniteClassSample":
        """Tabulate ``functions`` on ``inputs``, each input a ``(x_pa, a)`` pair."""
        arities = {f.arity for f in functions}
        if len(arities) > 1:
            raise ValueError(f"functions have mixed arities {sorted(arities)}")
        vals = np.empty((len(functions), len(inputs)))
        for m, (x, a) in enumerate(inputs):
            x = np.asarray(x, dtype=float).reshape(-1)
            for k, f in enumerate(functions):
                vals[k, m] = float(f(x, float(a)))
        return cls(vals, tuple(inputs))

    @classmethod
    def from_finite_class(cls, fc: FiniteClass) -> "FiniteClassSample":
        return cls.from_functions(fc.members, fc.inputs)

    def pair_differences(self) -> np.ndarray:
        """``D[f, g, z] = values[f, z] - values[g, z]``."""
        return self.values[:, None, :] - self.values[None, :, :]

    def sup_distances(self) -> np.ndarray:
        if self.n_inputs == 0:
            return np.zeros((self.n_functions, self.n_functions))
        return np.abs(self.pair_differences()).max(axis=2)


@dataclass
class ComplexityReport:
    measure: str
    value: int
    exact: bool
    epsilon: float
    restarts: int = 0
    witness: tuple = ()
    widths: tuple = ()
    meta: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {
            "measure": self.measure,
            "value": self.value,
            "exact": int(self.exact),
            "epsilon": self.epsilon,
            "restarts": self.restarts,
            "witness": ";".join(str(w) for w in self.witness),
            "widths": ";".join(f"{w:.6g}" for w in self.widths),
        }


def _width_sq(sq: np.ndarray, z: int, preds: Sequence[int], e2: float) -> float:
    """Largest ``(f(z) - g(z))^2`` over pairs whose squared predecessor distance is at most ``e2``.

    Everything is compared in squared units, with predecessor sums taken in
    ascending index order, so scale candidates computed the same way hit
    boundaries exactly.
    """
    if preds:
        ss = sq[:, :, sorted(preds)].sum(axis=2)
        gaps = sq[:, :, z][ss <= e2]
    else:
        gaps = sq[:, :, z].ravel()
    return float(gaps.max()) if gaps.size else 0.0


def is_eps_dependent(z: int, predecessors: Sequence[int], sample: FiniteClassSample, eps: float) -> bool:
    """True iff every pair close on ``predecessors`` (sum of squares <= eps^2) is eps-close on ``z``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return _width_sq(sample.pair_differences() ** 2, z, predecessors, eps * eps) <= eps * eps


def _witness_widths(sq, seq, e2):
    return tuple(math.sqrt(_width_sq(sq, z, seq[:k], e2)) for k, z in enumerate(seq))


def _exhaustive_at(sq: np.ndarray, e2: float) -> tuple:
    """Longest sequence independent at squared scale ``e2``, by DP over input subsets.

    Independence of the next element depends only on the *set* of predecessors,
    so a set is reachable iff some member is independent of the rest and the
    rest is reachable. Repeats are never independent of a set containing them.
    """
    n = sq.shape[2]
    reach = {0: ()}
    best = ()
    for _ in range(n):
        nxt = {}
        for mask, seq in reach.items():
            for z in range(n):
                bit = 1 << z
                if mask & bit or (mask | bit) in nxt:
                    continue
                if _width_sq(sq, z, seq, e2) > e2:
                    nxt[mask | bit] = seq + (z,)
        if not nxt:
            break
        reach = nxt
        best = min(nxt.values())
    return best


def _exact_scales(sq: np.ndarray, e2: float) -> list[float]:
    """Squared scales ``eps'^2 >= eps^2`` at which the longest sequence can change.

    For a fixed sequence the admissible ``eps'^2`` form a union of intervals
    ``[S, g)`` whose left ends are squared prefix distances ``S`` of some pair,
    so the smallest admissible scale is ``eps^2`` or one of those sums.
    """
    n = sq.shape[2]
    top = float(sq.max()) if sq.size else 0.0
    scales = {e2}
    for r in range(1, n):
        for subset in itertools.combinations(range(n), r):
            s = sq[:, :, list(subset)].sum(axis=2)
            scales.update(s[(s > e2) & (s < top)].tolist())
    return sorted(scales)


def _independent_upper(sq: np.ndarray, e2: float) -> int:
    """Inputs on which some pair differs by more than the scale: a cap on any sequence length."""
    if sq.size == 0:
        return 0
    return int((sq.max(axis=(0, 1)) > e2).sum())


def _greedy_at(sq: np.ndarray, e2: float, rng: np.random.Generator) -> tuple:
    n = sq.shape[2]
    seq: list[int] = []
    remaining = list(range(n))
    while True:
        cands = [z for z in remaining if _width_sq(sq, z, seq, e2) > e2]
        if not cands:
            return tuple(seq)
        z = cands[int(rng.integers(len(cands)))]
        seq.append(z)
        remaining.remove(z)


def eluder_dimension_search(
    sample: FiniteClassSample,
    eps: float,
    restarts: int = 16,
    rng: np.random.Generator | None = None,
    exhaustive_cap: int = EXHAUSTIVE_ELUDER_CAP,
    method: str = "auto",
    greedy_scales: int = 8,
    max_work: int = 1 << 18,
) -> ComplexityReport:
    """Longest sequence whose elements are all eps'-independent of their predecessors, for some eps' >= eps.

    Exhaustive search runs a subset DP at every scale where the answer can
    change and is exact, unless that needs more than ``max_work`` subset
    visits; it then checks an evenly spaced share of the scales (always
    including ``eps``) and reports a lower bound. The greedy search tries
    ``eps`` and up to ``greedy_scales`` larger scales with random restarts.
    Any sequence found is a valid lower bound.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    sq = sample.pair_differences() ** 2
    e2 = eps * eps
    exhaustive = method == "exhaustive" or (method == "auto" and sample.n_inputs <= exhaustive_cap)
    best, best_e2, used = (), e2, 0
    exact = exhaustive
    if exhaustive:
        scales = _exact_scales(sq, e2)
        budget = max(1, max_work >> sample.n_inputs)
        if len(scales) > budget:
            exact = False
            scales = [scales[k] for k in np.unique(np.linspace(0, len(scales) - 1, budget).astype(int))]
        for s2 in scales:
            if _independent_upper(sq, s2) <= len(best):
                break
            seq = _exhaustive_at(sq, s2)
            if len(seq) > len(best):
                best, best_e2 = seq, s2
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        gaps = np.unique(sq[sq > e2])
        extra = gaps[np.linspace(0, gaps.size - 1, min(greedy_scales, gaps.size)).astype(int)] if gaps.size else []
        # just below each gap so that gap still counts as independent
        scales = [e2] + sorted({float(np.nextafter(g, 0)) for g in extra if np.nextafter(g, 0) > e2})
        used = max(1, restarts)
        for s2 in scales:
            if _independent_upper(sq, s2) <= len(best):
                break
            for _ in range(used):
                cand = _greedy_at(sq, s2, rng)
                if len(cand) > len(best):
                    best, best_e2 = cand, s2
    return ComplexityReport(
        "eluder", len(best), exact, eps, used, best, _witness_widths(sq, best, best_e2),
        {"eps_prime": math.sqrt(best_e2), "eps_prime_sq": float(best_e2)},
    )


def _covers(dist: np.ndarray, alpha: float) -> np.ndarray:
    return dist <= alpha


def covering_number_greedy(
    sample: FiniteClassSample,
    alpha: float,
    exhaustive_cap: int = EXHAUSTIVE_COVER_CAP,
    method: str = "auto",
) -> ComplexityReport:
    """Smallest set of sample members whose sup-norm alpha-balls cover the sample.

    Exhaustive set cover for small samples, greedy (largest new coverage, lowest
    index on ties) otherwise. The greedy answer is an upper bound.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n = sample.n_functions
    cover = _covers(sample.sup_distances(), alpha)
    exhaustive = method == "exhaustive" or (method == "auto" and n <= exhaustive_cap)
    if exhaustive:
        for k in range(1, n + 1):
            for centers in itertools.combinations(range(n), k):
                if cover[list(centers)].any(axis=0).all():
                    return ComplexityReport("covering", k, True, alpha, witness=centers)
    uncovered = np.ones(n, dtype=bool)
    centers = []
    while uncovered.any():
        gain = (cover & uncovered[None, :]).sum(axis=1)
        c = int(np.argmax(gain))
        centers.append(c)
        uncovered &= ~cover[c]
    return ComplexityReport("covering", len(centers), False, alpha, witness=tuple(centers))


def min_pairwise_gap(sample: FiniteClassSample) -> float:
    n = sample.n_functions
    if n < 2:
        return 0.0
    dist = sample.sup_distances()
    return float(dist[np.triu_indices(n, k=1)].min())


def alpha_choice(cls, T: int) -> float:
    """``max(1/T, min pairwise sup gap)``; the gap is 0 for continuous classes."""
    if T < 1:
        raise ValueError("T must be >= 1")
    gap = 0.0
    if isinstance(cls, FiniteClass):
        gap = min_pairwise_gap(FiniteClassSample.from_finite_class(cls))
    elif isinstance(cls, FiniteClassSample):
        gap = min_pairwise_gap(cls)
    return max(1.0 / T, gap)


def beta_radius(t: int, cn: float, delta: float, alpha: float, C: float, log_cn: float | None = None) -> float:
    """``8 ln(cn/delta) + 2 alpha t (8C + sqrt(8 ln(4 t^2 / delta)))``.

    Pass ``log_cn`` instead of ``cn`` when the covering number overflows a float.
    """
    if t < 1 or not 0 < delta < 1:
        raise ValueError("need t >= 1 and 0 < delta < 1")
    lcn = math.log(cn) if log_cn is None else log_cn
    return 8.0 * (lcn - math.log(delta)) + 2.0 * alpha * t * (
        8.0 * C + math.sqrt(8.0 * math.log(4.0 * t * t / delta))
    )


def b_bound(dim: float, beta_T: float, T: float, C: float) -> float:
    return 1.0 + min(dim, T) * C + 4.0 * math.sqrt(dim * beta_T * T)


@dataclass(frozen=True)
class TheoreticalComplexity:
    dim: float
    log_cn: float
    lifted_dim: float
    note: str


def _template(D: float, c: float, K: float, T: int, constant: float) -> tuple[float, float]:
    cbar = c * (2.0 * K * T) ** 2
    dim = constant * TEMPLATE_CONSTANT * (1.1 + math.log1p(cbar)) * D
    log_cn = 2.0 * D * math.log1p(2.0 * c * K * T)
    return dim, log_cn


def theoretical_dim_and_cn(
    cls,
    T: int,
    K: float | None = None,
    C: float | None = None,
    c: float | None = None,
    constant: float = 1.0,
) -> TheoreticalComplexity:
    """Closed-form eluder-dimension and log-covering estimates at ``alpha = 1/T``.

    ``c`` is the squared input-norm bound and defaults to ``arity * C^2`` (plus 1
    for the intervention coordinate of polynomial and neural inputs).
    """
    if isinstance(cls, FiniteClass):
        raise UnsupportedClass("finite classes have no closed form; use the brute-force search")
    K = cls.lipschitz_bound if K is None else K
    C = cls.output_bound if C is None else C
    if not math.isfinite(K):
        raise ValueError("a finite Lipschitz bound K is required")
    d = cls.arity
    if isinstance(cls, LinearClass):
        c = d * C * C if c is None else c
        D, note = float(d), "linear: explicit constants"
    elif isinstance(cls, PolynomialClass):
        c = d * C * C + 1.0 if c is None else c
        D, note = float((d + 1) ** 2), "quadratic: linear template on (d+1)^2"
    elif isinstance(cls, NeuralNetClass):
        c = d * C * C + 1.0 if c is None else c
        D = cls.gradient_ratio * max(d + 1, cls.width)
        note = "neural: linear template on r*max(d+1, s)"
    else:
        raise UnsupportedClass(f"no closed form for {type(cls).__name__}")
    dim, log_cn = _template(D, c, K, T, constant)
    return TheoreticalComplexity(dim, log_cn, D, note)


def activation_ratio(slope_pos: float, slope_neg: float) -> float:
    """``sup sigma' / inf sigma'`` for a leaky ReLU."""
    hi, lo = max(slope_pos, slope_neg), min(slope_pos, slope_neg)
    return math.inf if lo <= 0 else hi / lo


def regret_bound_curves(
    kind: str,
    K: float,
    d: int,
    L: int,
    N: int,
    T_values: Sequence[int],
    constant: float = 1.0,
    s: int | None = None,
    dim: float | None = None,
    log_cn: float | None = None,
) -> list[tuple[float, float, float]]:
    """Upper and lower regret-bound rows ``(T, upper, lower)`` up to a constant factor.

    ``kind`` is ``linear``, ``quadratic``/``polynomial``, ``neural`` or
    ``general`` (which needs ``dim`` and ``log_cn``).
    """
    rows = []
    for T in T_values:
        T = float(T)
        if T < 1:
            continue
        lt = math.log(T)
        core = T * (lt * lt + lt * math.log(N) / d) if d > 0 else T * lt * lt
        if kind == "linear":
            up = K * d**L * math.sqrt(core)
            lo = K * d ** (L / 2 - 1) * math.sqrt(T)
        elif kind in ("quadratic", "polynomial"):
            up = K * d ** (L + 1) * math.sqrt(core)
            lo = K * math.sqrt(T)
        elif kind == "neural":
            width = s if s is not None else d + 1
            up = K * d ** (L - 1) * math.sqrt(width * core)
            lo = K * d ** (L / 2 - 1) * math.sqrt(T)
        elif kind == "general":
            if dim is None or log_cn is None:
                raise ValueError("general bounds need dim and log_cn")
            up = K * d ** (L - 1) * math.sqrt(T * dim * (lt + math.log(N) + log_cn))
            lo = math.nan
        else:
            raise UnsupportedClass(f"unknown bound family {kind!r}")
        rows.append((T, constant * up, constant * lo))
    return rows


def compounding_reference(B: float, d: int, K_levels: Sequence[float], depth: int) -> float:
    """``B * sum_{l=1}^{depth} d^(l-1) prod_{k=2}^{l} K^(k)``; 0 for root nodes."""
    total = 0.0
    for ell in range(1, depth + 1):
        prod = 1.0
        for k in range(2, ell + 1):
            prod *= K_levels[k - 1] if k - 1 < len(K_levels) else K_levels[-1]
        total += d ** (ell - 1) * prod
    return B * total
