"""Monte Carlo estimation of gradient outer-product matrices.

Serves both as the baseline estimator (sample the prior, average gradient
outer products) and as the independent validation oracle for the
closed-form path. Raw fixture functions use central finite differences;
surrogates use their exact analytic gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from urllib.parse import parse_qsl

import numpy as np

from .closedform import CoActiveMatrix, InputPrior, _validate_self_matrix
from .model import MarsSurrogate

__all__ = [
    "SampledFunction",
    "MCResult",
    "lhs_design",
    "fd_gradient",
    "mc_cmat",
    "poly_pair",
    "piston",
    "linear_function",
    "builtin_functions",
]


def lhs_design(n: int, p: int, domain, seed: int, refine: int = 200) -> np.ndarray:
    """Latin hypercube sample with maximin refinement.

    Each column is stratified: exactly one point per stratum of width
    1/n. Refinement proposes `refine` random within-column value swaps
    and keeps those that increase the minimum pairwise distance (computed
    on the unit cube). Reproducible from seed.
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    domain = [(float(lo), float(hi)) for lo, hi in domain]
    if len(domain) != p:
        raise ValueError(f"domain has {len(domain)} entries for p={p}")
    rng = np.random.default_rng(seed)
    unit = np.empty((n, p))
    for j in range(p):
        unit[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n

    if refine > 0 and n > 2:
        d2 = _pdist2(unit)
        np.fill_diagonal(d2, np.inf)
        for _ in range(refine):
            j = int(rng.integers(p))
            r1, r2 = rng.choice(n, size=2, replace=False)
            cur = min(d2[r1].min(), d2[r2].min())
            trial = unit.copy()
            trial[[r1, r2], j] = trial[[r2, r1], j]
            new_r1 = ((trial[r1] - trial) ** 2).sum(axis=1)
            new_r2 = ((trial[r2] - trial) ** 2).sum(axis=1)
            new_r1[r1] = np.inf
            new_r2[r2] = np.inf
            if min(new_r1.min(), new_r2.min()) > cur:
                unit = trial
                d2[r1, :] = d2[:, r1] = new_r1
                d2[r2, :] = d2[:, r2] = new_r2
                d2[r1, r1] = d2[r2, r2] = np.inf

    out = np.empty_like(unit)
    for j, (lo, hi) in enumerate(domain):
        out[:, j] = lo + unit[:, j] * (hi - lo)
    return out


def _pdist2(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True)
class SampledFunction:
    """A deterministic scalar function of a p-vector, batch-evaluable.

    evaluator maps (n, p) arrays to (n,) outputs. grad, when given, maps
    (n, p) to (n, p) analytic gradients; otherwise central finite
    differences with step h (default 1e-5 of the per-dimension range) are
    used, falling back to one-sided differences at the domain boundary.
    """

    evaluator: callable
    p: int
    domain: tuple[tuple[float, float], ...]
    grad: callable = None
    h: float | None = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "domain", tuple((float(lo), float(hi)) for lo, hi in self.domain)
        )

    @classmethod
    def from_surrogate(cls, m: MarsSurrogate) -> "SampledFunction":
        return cls(
            evaluator=m.evaluate_batch,
            p=m.p,
            domain=m.domain,
            grad=m.gradient_batch,
            label=m.label,
        )

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return float(self.evaluator(X[None, :])[0])
        return np.asarray(self.evaluator(X), dtype=float)

    def steps(self) -> np.ndarray:
        if self.h is not None:
            return np.full(self.p, float(self.h))
        return np.array([1e-5 * (hi - lo) for lo, hi in self.domain])

    def gradients(self, X: np.ndarray) -> tuple[np.ndarray, int]:
        """Batch gradients and the count of one-sided boundary fallbacks."""
        X = np.asarray(X, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(X), dtype=float), 0
        return _fd_gradients_batch(self.evaluator, X, self.steps(), self.domain)


def _fd_gradients_batch(evaluator, X, steps, domain):
    n, p = X.shape
    G = np.empty((n, p))
    onesided = 0
    lo = np.array([d[0] for d in domain])
    hi = np.array([d[1] for d in domain])
    for i in range(p):
        h = steps[i]
        up_ok = X[:, i] + h <= hi[i]
        dn_ok = X[:, i] - h >= lo[i]
        Xp = X.copy()
        Xm = X.copy()
        Xp[:, i] = np.where(up_ok, X[:, i] + h, X[:, i])
        Xm[:, i] = np.where(dn_ok, X[:, i] - h, X[:, i])
        fp = np.asarray(evaluator(Xp), dtype=float)
        fm = np.asarray(evaluator(Xm), dtype=float)
        width = np.where(up_ok, X[:, i] + h, X[:, i]) - np.where(dn_ok, X[:, i] - h, X[:, i])
        safe = width > 0
        G[:, i] = np.where(safe, (fp - fm) / np.where(safe, width, 1.0), 0.0)
        onesided += int(np.sum(~up_ok) + np.sum(~dn_ok))
    return G, onesided


def fd_gradient(f, x, h: float, domain=None) -> np.ndarray:
    """Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / (2h).

    When a domain is given and x is within h of a boundary, the one-sided
    difference is used for that coordinate.
    """
    x = np.asarray(x, dtype=float)
    p = x.shape[0]
    if domain is None:
        domain = tuple((-np.inf, np.inf) for _ in range(p))
    if callable(getattr(f, "evaluator", None)):
        evaluator = f.evaluator
    else:
        evaluator = lambda X: np.array([f(row) for row in X])
    G, _ = _fd_gradients_batch(evaluator, x[None, :], np.full(p, float(h)), domain)
    return G[0]


@dataclass(frozen=True)
class MCResult:
    """MC estimate of C_kl with its elementwise standard-error matrix."""

    matrix: CoActiveMatrix
    se: np.ndarray
    B: int
    seed: int
    h: float | None
    n_onesided: int = 0

    def to_dict(self) -> dict:
        return {
            "entries": [[float(v) for v in row] for row in self.matrix.entries],
            "se_entries": [[float(v) for v in row] for row in self.se],
            "B": self.B,
            "seed": self.seed,
            "h": self.h,
        }


def mc_cmat(
    f_k: SampledFunction,
    f_l: SampledFunction,
    prior: InputPrior,
    B: int,
    seed: int,
    shards: int = 1,
) -> MCResult:
    """Plain MC estimator: mean of B gradient outer products at i.i.d.
    prior draws, with the elementwise standard error of the mean.

    B may be sharded; shard s draws from a stream seeded by (seed, s), so
    results are reproducible for a fixed shard count regardless of how the
    shards are executed.
    """
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    if f_k.p != f_l.p or f_k.p != prior.p:
        raise ValueError("function and prior dimensions must agree")
    p = f_k.p
    shards = max(1, min(int(shards), B))
    sizes = [B // shards + (1 if s < B % shards else 0) for s in range(shards)]
    sum1 = np.zeros((p, p))
    sum2 = np.zeros((p, p))
    onesided = 0
    for s, ns in enumerate(sizes):
        rng = np.random.default_rng([seed, s])
        X = prior.sample(rng, ns)
        Gk, o1 = f_k.gradients(X)
        Gl, o2 = (Gk, 0) if f_l is f_k else f_l.gradients(X)
        onesided += o1 + o2
        sum1 += Gk.T @ Gl
        sum2 += (Gk * Gk).T @ (Gl * Gl)
    mean = sum1 / B
    var = np.maximum(sum2 / B - mean**2, 0.0)
    se = np.sqrt(var / B)
    if f_k is f_l:
        mean = 0.5 * (mean + mean.T)
        _validate_self_matrix(mean)
    C = CoActiveMatrix(
        entries=mean,
        trace=float(mean.diagonal().sum()),
        labels=(f_k.label, f_l.label),
    )
    h = None if (f_k.grad is not None and f_l.grad is not None) else float(np.max(f_k.steps()))
    return MCResult(matrix=C, se=se, B=B, seed=seed, h=h, n_onesided=onesided)


# ---------------------------------------------------------------------------
# Builtin fixtures
# ---------------------------------------------------------------------------


def poly_pair(beta: float) -> tuple[SampledFunction, SampledFunction]:
    """The two-variable polynomial pair on [0,1]^2:

        f1(x) = x1^2 + x1 x2        f2(x) = f1(x) + beta * x2^3

    Analytic gradients are attached; the closed-form matrices are simple
    moments, which makes the pair the workhorse test fixture.
    """
    domain = ((0.0, 1.0), (0.0, 1.0))

    def f1(X):
        return X[:, 0] ** 2 + X[:, 0] * X[:, 1]

    def g1(X):
        return np.column_stack([2 * X[:, 0] + X[:, 1], X[:, 0]])

    def f2(X):
        return X[:, 0] ** 2 + X[:, 0] * X[:, 1] + beta * X[:, 1] ** 3

    def g2(X):
        return np.column_stack([2 * X[:, 0] + X[:, 1], X[:, 0] + 3 * beta * X[:, 1] ** 2])

    a = SampledFunction(evaluator=f1, p=2, domain=domain, grad=g1, label="poly-f1")
    b = SampledFunction(evaluator=f2, p=2, domain=domain, grad=g2, label=f"poly-f2-beta{beta:g}")
    return a, b


_PISTON_RANGES = (
    (30.0, 60.0),  # M: piston weight
    (0.005, 0.020),  # S: surface area
    (0.002, 0.010),  # V0: initial gas volume
    (1000.0, 5000.0),  # k: spring coefficient
    (340.0, 360.0),  # T0: filling gas temperature
)


def piston(p0: float = 90000.0, ta: float = 284.0) -> SampledFunction:
    """Piston cycle-time function with ambient (pressure, temperature)
    fixed at (p0, ta); inputs scaled to [0,1]^5.

    Gradients are estimated by central differences (no analytic form is
    attached). The intended sampling prior for cross-validation runs is
    Uniform[0,1]^5 on the scaled inputs.
    """

    def evaluator(U):
        U = np.asarray(U, dtype=float)
        cols = [lo + U[:, j] * (hi - lo) for j, (lo, hi) in enumerate(_PISTON_RANGES)]
        M, S, V0, k, T0 = cols
        A = p0 * S + 19.62 * M - k * V0 / S
        V = S / (2 * k) * (np.sqrt(A**2 + 4 * k * p0 * V0 * ta / T0) - A)
        return 120.0 * math.pi * np.sqrt(M / (k + S**2 * p0 * V0 * ta / (T0 * V**2)))

    return SampledFunction(
        evaluator=evaluator,
        p=5,
        domain=tuple((0.0, 1.0) for _ in range(5)),
        h=1e-5,
        label=f"piston-p0{p0:g}-ta{ta:g}",
    )


def linear_function(a, domain=None) -> SampledFunction:
    """f(x) = a . x with constant analytic gradient."""
    a = np.asarray(a, dtype=float)
    p = a.shape[0]
    if domain is None:
        domain = tuple((0.0, 1.0) for _ in range(p))

    def evaluator(X):
        return np.asarray(X, dtype=float) @ a

    def grad(X):
        return np.tile(a, (np.asarray(X).shape[0], 1))

    return SampledFunction(evaluator=evaluator, p=p, domain=tuple(domain), grad=grad, label="linear")


def builtin_functions(spec: str) -> tuple[SampledFunction, ...]:
    """Resolve a fixture registry string.

    Examples: "builtin:poly?beta=3" (returns the pair),
    "builtin:piston?p0=90000&ta=284", "builtin:linear?a=1,2,3".
    """
    if not spec.startswith("builtin:"):
        raise ValueError(f"not a builtin spec: {spec!r}")
    body = spec[len("builtin:"):]
    name, _, query = body.partition("?")
    params = dict(parse_qsl(query)) if query else {}
    if name == "poly":
        return poly_pair(float(params.get("beta", 1.0)))
    if name == "piston":
        return (piston(float(params.get("p0", 90000.0)), float(params.get("ta", 284.0))),)
    if name == "linear":
        a = [float(v) for v in params.get("a", "1").split(",")]
        return (linear_function(a),)
    raise ValueError(f"unknown builtin fixture {name!r}")
