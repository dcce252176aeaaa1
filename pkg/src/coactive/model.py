"""Hinge-spline surrogate models.

A surrogate is an intercept plus coefficient-weighted products of hinge
factors max(sign*(x - knot), 0), one factor per input at most. Variables
absent from a term simply do not appear (exponent-zero semantics). The
module provides exact evaluation and differentiation, JSON round-tripping,
a deterministic forward-stepwise fitter with GCV backward pruning, and
bootstrap ensembles.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "HingeFactor",
    "BasisTerm",
    "MarsSurrogate",
    "Ensemble",
    "FitConfig",
    "FitReport",
    "MarsRegressor",
    "evaluate",
    "gradient",
    "fit",
    "fit_with_report",
    "fit_ensemble",
    "cross_validated_rmspe",
    "save_model",
    "load_model",
    "model_to_dict",
    "model_from_dict",
    "save_ensemble",
    "load_ensemble",
    "load_training_csv",
]


@dataclass(frozen=True)
class HingeFactor:
    """One hinge max(sign*(x[var] - knot), 0) inside a basis term."""

    var: int
    sign: int
    knot: float

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be -1 or +1, got {self.sign!r}")
        if self.var < 0:
            raise ValueError(f"var must be a non-negative index, got {self.var}")
        if not np.isfinite(self.knot):
            raise ValueError(f"knot must be finite, got {self.knot!r}")


@dataclass(frozen=True)
class BasisTerm:
    """coef times a product of hinge factors on distinct variables."""

    coef: float
    factors: tuple[HingeFactor, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        seen = [f.var for f in self.factors]
        if len(set(seen)) != len(seen):
            raise ValueError(f"duplicate variable in basis term: {sorted(seen)}")

    @property
    def degree(self) -> int:
        return len(self.factors)


@dataclass(frozen=True)
class MarsSurrogate:
    """Immutable hinge-spline model on a box domain.

    Evaluation is deterministic: identical inputs take an identical code
    path and produce bitwise-identical outputs.
    """

    intercept: float
    terms: tuple[BasisTerm, ...]
    p: int
    domain: tuple[tuple[float, float], ...]
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(
            self, "domain", tuple((float(lo), float(hi)) for lo, hi in self.domain)
        )
        if len(self.domain) != self.p:
            raise ValueError(f"domain has {len(self.domain)} entries for p={self.p}")
        for lo, hi in self.domain:
            if not lo < hi:
                raise ValueError(f"domain bounds must satisfy lo < hi, got [{lo}, {hi}]")
        for term in self.terms:
            for f in term.factors:
                if f.var >= self.p:
                    raise ValueError(f"factor var {f.var} out of range for p={self.p}")
                lo, hi = self.domain[f.var]
                if not lo <= f.knot <= hi:
                    raise ValueError(
                        f"knot {f.knot} outside domain [{lo}, {hi}] of var {f.var}"
                    )

    # -- evaluation ------------------------------------------------------

    def design_matrix(self, X: np.ndarray) -> np.ndarray:
        """Basis-function values, shape (n, len(terms))."""
        X = _as_batch(X, self.p)
        out = np.empty((X.shape[0], len(self.terms)))
        for j, term in enumerate(self.terms):
            col = np.ones(X.shape[0])
            for f in term.factors:
                col = col * np.maximum(f.sign * (X[:, f.var] - f.knot), 0.0)
            out[:, j] = col
        return out

    def evaluate(self, x) -> float:
        return float(self.evaluate_batch(np.asarray(x, dtype=float)[None, :])[0])

    def evaluate_batch(self, X: np.ndarray) -> np.ndarray:
        X = _as_batch(X, self.p)
        coefs = np.array([t.coef for t in self.terms])
        if coefs.size == 0:
            return np.full(X.shape[0], self.intercept)
        return self.intercept + self.design_matrix(X) @ coefs

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return self.evaluate(X)
        return self.evaluate_batch(X)

    # -- differentiation -------------------------------------------------

    def gradient(self, x) -> np.ndarray:
        return self.gradient_batch(np.asarray(x, dtype=float)[None, :])[0]

    def gradient_batch(self, X: np.ndarray) -> np.ndarray:
        """Analytic gradient, shape (n, p).

        At a knot the one-sided derivative that is continuous from the
        right is used: d/dx max(x - t, 0) = 1{x >= t} and
        d/dx max(t - x, 0) = -1{x < t}. The function is non-differentiable
        only on this measure-zero knot set.
        """
        X = _as_batch(X, self.p)
        n = X.shape[0]
        G = np.zeros((n, self.p))
        for term in self.terms:
            factors = term.factors
            vals = [np.maximum(f.sign * (X[:, f.var] - f.knot), 0.0) for f in factors]
            for a, f in enumerate(factors):
                xv = X[:, f.var]
                active = (xv >= f.knot) if f.sign > 0 else (xv < f.knot)
                deriv = np.where(active, float(f.sign), 0.0)
                others = np.ones(n)
                for b, val in enumerate(vals):
                    if b != a:
                        others = others * val
                G[:, f.var] += term.coef * deriv * others
        return G

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return model_to_dict(self)


def _as_batch(X: np.ndarray, p: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != p:
        raise ValueError(f"expected input of shape (n, {p}), got {X.shape}")
    return X


def evaluate(m: MarsSurrogate, x) -> float:
    """Evaluate m at a single point x (length p)."""
    return m.evaluate(x)


def gradient(m: MarsSurrogate, x) -> np.ndarray:
    """Analytic gradient of m at a single point x (length p)."""
    return m.gradient(x)


@dataclass(frozen=True)
class Ensemble:
    """A bag of surrogates for one model, all sharing p and domain."""

    members: tuple[MarsSurrogate, ...]
    label: str

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("ensemble must have at least one member")
        m0 = self.members[0]
        for m in self.members[1:]:
            if m.p != m0.p or m.domain != m0.domain:
                raise ValueError("all ensemble members must share p and domain")

    @property
    def p(self) -> int:
        return self.members[0].p

    @property
    def domain(self) -> tuple[tuple[float, float], ...]:
        return self.members[0].domain

    def __len__(self) -> int:
        return len(self.members)


# ---------------------------------------------------------------------------
# JSON model files
# ---------------------------------------------------------------------------


def model_to_dict(m: MarsSurrogate) -> dict:
    return {
        "label": m.label,
        "p": m.p,
        "domain": [[lo, hi] for lo, hi in m.domain],
        "intercept": m.intercept,
        "terms": [
            {
                "coef": t.coef,
                "factors": [
                    {"var": f.var, "sign": f.sign, "knot": f.knot} for f in t.factors
                ],
            }
            for t in m.terms
        ],
    }


def model_from_dict(d: dict) -> MarsSurrogate:
    terms = tuple(
        BasisTerm(
            coef=float(t["coef"]),
            factors=tuple(
                HingeFactor(var=int(f["var"]), sign=int(f["sign"]), knot=float(f["knot"]))
                for f in t["factors"]
            ),
        )
        for t in d["terms"]
    )
    return MarsSurrogate(
        intercept=float(d["intercept"]),
        terms=terms,
        p=int(d["p"]),
        domain=tuple((float(lo), float(hi)) for lo, hi in d["domain"]),
        label=str(d.get("label", "")),
    )


def save_model(m: MarsSurrogate, path, meta: dict | None = None) -> None:
    """Write a model JSON file. Floats round-trip bitwise (shortest repr)."""
    d = model_to_dict(m)
    if meta:
        d["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=2)
        fh.write("\n")


def load_model(path) -> MarsSurrogate:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def save_ensemble(ens: Ensemble, directory, meta: dict | None = None) -> list:
    """Write member_000.json ... under directory; returns the paths."""
    import os

    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, m in enumerate(ens.members):
        path = os.path.join(directory, f"member_{i:03d}.json")
        save_model(m, path, meta=meta)
        paths.append(path)
    return paths


def load_ensemble(directory, label: str | None = None) -> Ensemble:
    import os

    # report.json is the fit-report artifact written next to the members,
    # not a model file
    names = sorted(
        n for n in os.listdir(directory) if n.endswith(".json") and n != "report.json"
    )
    members = [load_model(os.path.join(directory, n)) for n in names]
    if not members:
        raise ValueError(f"no model files found in {directory}")
    return Ensemble(members=tuple(members), label=label or os.path.basename(str(directory).rstrip("/")))


def load_training_csv(path, response: str | None = None):
    """Read a training CSV: header row, p input columns, one response column.

    response selects the response column by name; default is the last
    column. Returns (X, y, input_names, response_name). Malformed rows
    raise ValueError with the 1-based line number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if response is None:
            resp_idx = len(header) - 1
        else:
            try:
                resp_idx = header.index(response)
            except ValueError:
                raise ValueError(
                    f"{path}: response column {response!r} not in header {header}"
                ) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-numeric field") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.asarray(rows)
    mask = np.ones(len(header), dtype=bool)
    mask[resp_idx] = False
    X = data[:, mask]
    y = data[:, resp_idx]
    names = [h for i, h in enumerate(header) if mask[i]]
    return X, y, names, header[resp_idx]


# ---------------------------------------------------------------------------
# Fitting: deterministic forward-stepwise selection + GCV backward pruning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    """Knobs for the stepwise fitter.

    penalty is the GCV cost per term (Friedman's d); None picks 3.0, or
    2.0 for additive models (max_degree == 1). max_knots caps candidate
    knots per variable; candidates are always observed data values.

    endspan and minspan are the usual span guards: an interior knot must
    leave at least endspan points of the parent's support on each side,
    and consecutive candidate knots are at least minspan support points
    apart. The minimum support value is always offered as a knot (it
    yields a hinge linear over the parent's support). None computes both
    from the alpha=0.05 span formulas. Without these guards a term can
    end up supported by a handful of points in a thin corner; its wild
    coefficient barely moves the training error but dominates gradient
    integrals over the corner.
    """

    max_terms: int = 50
    max_degree: int = 3
    min_samples: int = 10
    max_knots: int = 64
    endspan: int | None = None
    minspan: int | None = None
    penalty: float | None = None
    domain: tuple[tuple[float, float], ...] | None = None
    label: str = ""

    def effective_penalty(self) -> float:
        if self.penalty is not None:
            return float(self.penalty)
        return 2.0 if self.max_degree == 1 else 3.0


@dataclass(frozen=True)
class FitReport:
    n: int
    n_terms: int
    sse: float
    rmse: float
    r2: float
    gcv: float
    constant: bool = False
    cv_rmspe: float | None = None


def fit(X, y, cfg: FitConfig = FitConfig()) -> MarsSurrogate:
    """Fit a hinge-spline surrogate; see fit_with_report for details."""
    return fit_with_report(X, y, cfg)[0]


def fit_with_report(X, y, cfg: FitConfig = FitConfig()) -> tuple[MarsSurrogate, FitReport]:
    """Deterministic MARS fit.

    Forward pass: grows paired +/- hinge terms greedily, candidate knots
    at (up to max_knots) observed data values, parents restricted to
    interaction degree < max_degree and one factor per variable. Backward
    pass: deletes terms along the best-GCV path and keeps the subset with
    the lowest GCV. Zero-variance responses yield a constant model with a
    warning flag rather than an error.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    n, p = X.shape
    if y.shape[0] != n:
        raise ValueError(f"X has {n} rows but y has {y.shape[0]}")
    if n < cfg.min_samples:
        raise ValueError(f"need at least {cfg.min_samples} samples, got {n}")

    domain = cfg.domain
    if domain is None:
        domain = tuple((float(X[:, j].min()), float(X[:, j].max())) for j in range(p))
        domain = tuple((lo, hi) if lo < hi else (lo, lo + 1.0) for lo, hi in domain)
    else:
        domain = tuple((float(lo), float(hi)) for lo, hi in domain)
        for j in range(p):
            lo, hi = domain[j]
            if X[:, j].min() < lo or X[:, j].max() > hi:
                raise ValueError(f"column {j} has values outside declared domain [{lo}, {hi}]")

    ybar = float(np.mean(y))
    sst = float(np.sum((y - ybar) ** 2))
    # ptp catches exactly-constant responses where the rounded mean leaves
    # sst tiny but nonzero
    if sst == 0.0 or np.ptp(y) == 0.0:
        warnings.warn("response has zero variance; returning a constant model")
        m = MarsSurrogate(intercept=float(y[0]), terms=(), p=p, domain=domain, label=cfg.label)
        rep = FitReport(n=n, n_terms=0, sse=0.0, rmse=0.0, r2=1.0, gcv=0.0, constant=True)
        return m, rep

    factor_sets = _forward_pass(X, y, cfg, sst)
    factor_sets, coefs, intercept, sse = _backward_pass(X, y, factor_sets, cfg)

    terms = tuple(
        BasisTerm(coef=float(c), factors=fs) for c, fs in zip(coefs, factor_sets)
    )
    m = MarsSurrogate(intercept=float(intercept), terms=terms, p=p, domain=domain, label=cfg.label)
    ncols = 1 + len(terms)
    gcv = _gcv(sse, n, ncols, len(terms), cfg.effective_penalty())
    rep = FitReport(
        n=n,
        n_terms=len(terms),
        sse=float(sse),
        rmse=float(np.sqrt(sse / n)),
        r2=float(1.0 - sse / sst),
        gcv=float(gcv),
    )
    return m, rep


def _span_lengths(cfg: FitConfig, p: int, count: int) -> tuple[int, int]:
    """endspan/minspan per the alpha=0.05 span formulas; count is the
    number of support points of the parent being extended."""
    if cfg.endspan is not None:
        endspan = int(cfg.endspan)
    else:
        endspan = int(round(3.0 - math.log2(0.05 / p)))
    if cfg.minspan is not None:
        minspan = int(cfg.minspan)
    elif count <= 0:
        minspan = 1
    else:
        minspan = int(round(-math.log2(-math.log1p(-0.05) / (p * count)) / 2.5))
    return max(0, endspan), max(1, minspan)


def _parent_candidates(xv: np.ndarray, active: np.ndarray, cfg: FitConfig, p: int) -> np.ndarray:
    """Eligible knot values on one variable given the parent's support.

    The minimum support value always qualifies (the resulting hinge is
    linear across the support); interior values are rank-trimmed by
    endspan on both sides and rank-thinned by minspan, then capped at
    max_knots evenly spaced order statistics.
    """
    xs = np.sort(xv[active])
    a = xs.size
    endspan, minspan = _span_lengths(cfg, p, a)
    if a < max(2, endspan + 1):
        return np.empty(0)
    cands = [xs[:1]]
    if a >= 2 * endspan + 1:
        cands.append(xs[np.arange(endspan, a - endspan, minspan)])
    vals = np.unique(np.concatenate(cands))
    if vals.size > cfg.max_knots:
        idx = np.unique(np.linspace(0, vals.size - 1, cfg.max_knots).round().astype(int))
        vals = vals[idx]
    return vals


def _gcv(sse: float, n: int, ncols: int, nterms: int, penalty: float) -> float:
    cost = ncols + penalty * nterms
    denom = 1.0 - cost / n
    if denom <= 0:
        return np.inf
    return (sse / n) / denom**2


def _forward_pass(X, y, cfg: FitConfig, sst) -> list[tuple[HingeFactor, ...]]:
    """Greedy paired-hinge growth; returns the selected factor sets."""
    n, p = X.shape
    max_cols = min(cfg.max_terms + 1, max(3, int(0.9 * n)))

    q0 = np.full(n, 1.0 / np.sqrt(n))
    Q = q0[:, None]  # orthonormal basis of the current design
    raw_cols = [np.ones(n)]
    factor_sets: list[tuple[HingeFactor, ...]] = []
    parent_cols = [0]  # raw_cols index per parent; parent 0 = intercept
    parent_factors: list[tuple[HingeFactor, ...]] = [()]
    cand_cache: dict[tuple[int, int], np.ndarray] = {}

    resid = y - q0 * (q0 @ y)
    sse = float(resid @ resid)
    floor = 1e-24 * sst

    while len(factor_sets) + 2 <= cfg.max_terms and Q.shape[1] + 2 <= max_cols and sse > floor:
        best = None  # (reduction, parent_idx, var, knot, mode)
        for pi, pf in enumerate(parent_factors):
            if len(pf) >= cfg.max_degree:
                continue
            pcol = raw_cols[parent_cols[pi]]
            used = {f.var for f in pf}
            for v in range(p):
                if v in used:
                    continue
                key = (pi, v)
                if key not in cand_cache:
                    cand_cache[key] = _parent_candidates(X[:, v], pcol > 0, cfg, p)
                kn = cand_cache[key]
                if kn.size == 0:
                    continue
                xv = X[:, v]
                Cp = pcol[:, None] * np.maximum(xv[:, None] - kn[None, :], 0.0)
                Cm = pcol[:, None] * np.maximum(kn[None, :] - xv[:, None], 0.0)
                QtCp = Q.T @ Cp
                QtCm = Q.T @ Cm
                raw_p = np.einsum("ij,ij->j", Cp, Cp)
                raw_m = np.einsum("ij,ij->j", Cm, Cm)
                a = raw_p - np.einsum("ij,ij->j", QtCp, QtCp)
                c = raw_m - np.einsum("ij,ij->j", QtCm, QtCm)
                b = np.einsum("ij,ij->j", Cp, Cm) - np.einsum("ij,ij->j", QtCp, QtCm)
                u = Cp.T @ resid
                w = Cm.T @ resid
                scale_p = np.maximum(raw_p, 1e-300)
                scale_m = np.maximum(raw_m, 1e-300)
                ok_p = a > 1e-12 * scale_p
                ok_m = c > 1e-12 * scale_m
                with np.errstate(divide="ignore", invalid="ignore"):
                    red_p = np.where(ok_p, u * u / a, 0.0)
                    red_m = np.where(ok_m, w * w / c, 0.0)
                    det = a * c - b * b
                    ok2 = ok_p & ok_m & (det > 1e-12 * a * c)
                    red2 = np.where(ok2, (c * u * u - 2 * b * u * w + a * w * w) / det, 0.0)
                red2 = np.where(np.isfinite(red2), red2, 0.0)
                for red, mode in ((red2, "both"), (red_p, "plus"), (red_m, "minus")):
                    ki = int(np.argmax(red))
                    if red[ki] > 0 and (best is None or red[ki] > best[0]):
                        best = (float(red[ki]), pi, v, float(kn[ki]), mode)
        if best is None or best[0] <= 1e-13 * sst:
            break
        _, pi, v, knot, mode = best
        pcol = raw_cols[parent_cols[pi]]
        pf = parent_factors[pi]
        xv = X[:, v]
        additions = []
        if mode in ("both", "plus"):
            additions.append((1, pcol * np.maximum(xv - knot, 0.0)))
        if mode in ("both", "minus"):
            additions.append((-1, pcol * np.maximum(knot - xv, 0.0)))
        added = False
        for sign, col in additions:
            r = col - Q @ (Q.T @ col)
            r = r - Q @ (Q.T @ r)  # re-orthogonalize for stability
            nrm2 = float(r @ r)
            raw2 = float(col @ col)
            if nrm2 <= 1e-20 * max(raw2, 1e-300):
                continue
            qnew = r / np.sqrt(nrm2)
            Q = np.hstack([Q, qnew[:, None]])
            resid = resid - qnew * (qnew @ resid)
            raw_cols.append(col)
            fs = pf + (HingeFactor(var=v, sign=sign, knot=knot),)
            factor_sets.append(fs)
            parent_cols.append(len(raw_cols) - 1)
            parent_factors.append(fs)
            added = True
        if not added:
            break
        sse = float(resid @ resid)
    return factor_sets


def _design_from_factor_sets(X, factor_sets) -> np.ndarray:
    n = X.shape[0]
    B = np.ones((n, 1 + len(factor_sets)))
    for j, fs in enumerate(factor_sets, start=1):
        col = np.ones(n)
        for f in fs:
            col = col * np.maximum(f.sign * (X[:, f.var] - f.knot), 0.0)
        B[:, j] = col
    return B


def _lstsq_fit(B: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    coef, _, _, _ = np.linalg.lstsq(B, y, rcond=None)
    r = y - B @ coef
    return coef, float(r @ r)


def _backward_pass(X, y, factor_sets, cfg: FitConfig):
    """GCV-pruned subset along the greedy deletion path."""
    n = X.shape[0]
    penalty = cfg.effective_penalty()
    B = _design_from_factor_sets(X, factor_sets)
    yty = float(y @ y)
    G = B.T @ B
    g = B.T @ y

    def subset_sse(idx: np.ndarray) -> float:
        Gs = G[np.ix_(idx, idx)]
        gs = g[idx]
        try:
            coef = np.linalg.solve(Gs, gs)
        except np.linalg.LinAlgError:
            coef = np.linalg.lstsq(Gs, gs, rcond=None)[0]
        return max(yty - float(gs @ coef), 0.0)

    active = list(range(B.shape[1]))  # column 0 = intercept, kept always
    idx = np.asarray(active)
    sse = subset_sse(idx)
    best_active = list(active)
    best_gcv = _gcv(sse, n, len(active), len(active) - 1, penalty)
    while len(active) > 1:
        sses = []
        for j in active[1:]:
            trial = np.asarray([k for k in active if k != j])
            sses.append((subset_sse(trial), j))
        sse_j, drop = min(sses, key=lambda t: (t[0], t[1]))
        active.remove(drop)
        gcv_here = _gcv(sse_j, n, len(active), len(active) - 1, penalty)
        if gcv_here <= best_gcv:
            best_gcv = gcv_here
            best_active = list(active)

    idx = np.asarray(best_active)
    coef, sse = _lstsq_fit(B[:, idx], y)
    intercept = float(coef[0])
    kept = [factor_sets[j - 1] for j in best_active[1:]]
    return kept, coef[1:], intercept, sse


def fit_ensemble(X, y, cfg: FitConfig, B: int, seed: int) -> Ensemble:
    """B surrogates: member 0 is the full-data fit, members 1..B-1 are fits
    to bootstrap row-resamples drawn from seed.

    These bootstrap members stand in for the draws of a posterior over
    hinge-spline models; B is exposed directly (there is no burn-in or
    thinning analogue for bootstrap resampling).
    """
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    cfg_dom = cfg
    if cfg.domain is None:
        domain = tuple(
            (float(X[:, j].min()), float(X[:, j].max())) for j in range(X.shape[1])
        )
        cfg_dom = replace(cfg, domain=domain)
    members = [fit(X, y, cfg_dom)]
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    for _ in range(B - 1):
        rows = rng.integers(0, n, size=n)
        members.append(fit(X[rows], y[rows], cfg_dom))
    return Ensemble(members=tuple(members), label=cfg.label or "model")


def cross_validated_rmspe(X, y, cfg: FitConfig, k: int) -> float:
    """k-fold CV root mean squared prediction error on the unit-variance
    scale (divided by the sd of y). Folds are deterministic round-robin."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    k = min(k, n)
    folds = np.arange(n) % k
    pred = np.empty(n)
    for f in range(k):
        mask = folds == f
        m = fit(X[~mask], y[~mask], cfg)
        pred[mask] = m.evaluate_batch(X[mask])
    sd = float(np.std(y))
    if sd == 0:
        return 0.0
    return float(np.sqrt(np.mean((y - pred) ** 2)) / sd)


class MarsRegressor:
    """scikit-learn-style front end for the stepwise fitter.

    Parameters mirror FitConfig; fit(X, y) stores the frozen surrogate in
    surrogate_ and the fit report in report_.
    """

    def __init__(
        self,
        max_terms: int = 50,
        max_degree: int = 3,
        min_samples: int = 10,
        max_knots: int = 64,
        penalty: float | None = None,
        domain=None,
    ):
        self.max_terms = max_terms
        self.max_degree = max_degree
        self.min_samples = min_samples
        self.max_knots = max_knots
        self.penalty = penalty
        self.domain = domain

    def get_params(self, deep: bool = True) -> dict:
        return {
            "max_terms": self.max_terms,
            "max_degree": self.max_degree,
            "min_samples": self.min_samples,
            "max_knots": self.max_knots,
            "penalty": self.penalty,
            "domain": self.domain,
        }

    def set_params(self, **params):
        for key, val in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, val)
        return self

    def _config(self) -> FitConfig:
        domain = self.domain
        if domain is not None:
            domain = tuple((float(lo), float(hi)) for lo, hi in domain)
        return FitConfig(
            max_terms=self.max_terms,
            max_degree=self.max_degree,
            min_samples=self.min_samples,
            max_knots=self.max_knots,
            penalty=self.penalty,
            domain=domain,
        )

    def fit(self, X, y):
        self.surrogate_, self.report_ = fit_with_report(X, y, self._config())
        self.n_features_in_ = self.surrogate_.p
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "surrogate_"):
            raise RuntimeError("call fit before predict")
        return self.surrogate_.evaluate_batch(np.asarray(X, dtype=float))

    def score(self, X, y) -> float:
        y = np.asarray(y, dtype=float).ravel()
        pred = self.predict(X)
        sst = float(np.sum((y - y.mean()) ** 2))
        if sst == 0:
            return 1.0
        return 1.0 - float(np.sum((y - pred) ** 2)) / sst
