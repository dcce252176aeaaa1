"""Ensemble-level neighborhood analysis.

Pairwise concordance across every member of every ensemble, the
elementwise discordance matrix, a 2-D non-metric MDS embedding, and
per-model centers.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import concordance as _concordance
from .analysis import discordance as _discordance
from .closedform import InputPrior, cmat, cmat_trace
from .model import Ensemble

__all__ = [
    "ConcordanceSummary",
    "PairwiseGrid",
    "Embedding",
    "pairwise_concordance",
    "discordance_matrix",
    "mds_embed",
    "model_centers",
]


@dataclass(frozen=True)
class ConcordanceSummary:
    """Model-block summary: all member-pair concordances between model k
    and model l, with their mean and (population) sd."""

    labels: tuple[str, str]
    samples: np.ndarray
    mean: float
    sd: float

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclass(frozen=True)
class PairwiseGrid:
    """Member-level concordance matrix over all non-constant members,
    with per-model-block summaries.

    kappa is N x N over the included members; membership[i] is the model
    index of member row i. Constant members are dropped (counted in
    n_excluded). n_exact_self counts the diagonal pairs, which equal 1
    by definition and are included in the diagonal-block samples.
    """

    labels: tuple[str, ...]
    membership: np.ndarray
    kappa: np.ndarray
    summaries: list
    n_exact_self: int
    n_excluded: int = 0
    trace_only: bool = False

    def __post_init__(self):
        for name in ("membership", "kappa"):
            arr = np.array(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_members(self) -> int:
        return self.kappa.shape[0]

    def summary(self, k: int, l: int) -> ConcordanceSummary:
        return self.summaries[k][l]


def _member_traces(members, prior):
    return np.array([cmat_trace(m, m, prior) for m in members])


def pairwise_concordance(
    ensembles: list[Ensemble],
    prior: InputPrior,
    trace_only: bool = False,
    threads: int = 1,
) -> PairwiseGrid:
    """Concordance for every member pair across a list of ensembles.

    trace_only skips the off-diagonal matrix entries (the concordance
    needs only traces), roughly halving the integral count per pair.
    Cross-pair work is farmed over `threads` workers; results do not
    depend on the thread count.
    """
    if not ensembles:
        raise ValueError("need at least one ensemble")
    p, domain = ensembles[0].p, ensembles[0].domain
    for e in ensembles[1:]:
        if e.p != p or e.domain != domain:
            raise ValueError("all ensembles must share p and domain")
    if prior.p != p:
        raise ValueError(f"prior has p={prior.p}, models have p={p}")

    members, membership = [], []
    for k, e in enumerate(ensembles):
        members.extend(e.members)
        membership.extend([k] * len(e.members))
    membership = np.array(membership, dtype=int)

    t_self = _member_traces(members, prior)
    scale = float(t_self.max(initial=0.0))
    included = t_self > 1e-12 * scale
    n_excluded = int(np.sum(~included))
    if n_excluded:
        warnings.warn(
            f"excluded {n_excluded} constant member(s) from the grid", stacklevel=2
        )
    members = [m for m, ok in zip(members, included) if ok]
    membership = membership[included]
    t_self = t_self[included]
    n = len(members)
    if n == 0:
        raise ValueError("all members are constant; no grid to compute")

    if trace_only:
        cross = lambda a, b: cmat_trace(members[a], members[b], prior)
    else:
        cross = lambda a, b: cmat(members[a], members[b], prior).trace

    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    if threads > 1 and pairs:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            traces = list(ex.map(lambda ab: cross(*ab), pairs))
    else:
        traces = [cross(*ab) for ab in pairs]

    kappa = np.eye(n)
    for (a, b), t in zip(pairs, traces):
        kappa[a, b] = kappa[b, a] = _concordance(t, t_self[a], t_self[b])

    K = len(ensembles)
    summaries = [[None] * K for _ in range(K)]
    for k in range(K):
        ik = np.flatnonzero(membership == k)
        for l in range(K):
            il = np.flatnonzero(membership == l)
            block = kappa[np.ix_(ik, il)]
            samples = block.ravel()
            summaries[k][l] = ConcordanceSummary(
                labels=(ensembles[k].label, ensembles[l].label),
                samples=samples,
                mean=float(samples.mean()) if samples.size else math.nan,
                sd=float(samples.std(ddof=0)) if samples.size else math.nan,
            )

    return PairwiseGrid(
        labels=tuple(e.label for e in ensembles),
        membership=membership,
        kappa=kappa,
        summaries=summaries,
        n_exact_self=n,
        n_excluded=n_excluded,
        trace_only=trace_only,
    )


def discordance_matrix(grid) -> np.ndarray:
    """Elementwise sqrt((1 - kappa)/2) over the member-level grid.

    Accepts a PairwiseGrid or a raw concordance matrix. The result is
    symmetric with a zero diagonal and entries in [0, 1].
    """
    kappa = np.asarray(getattr(grid, "kappa", grid), dtype=float)
    if kappa.ndim != 2 or kappa.shape[0] != kappa.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {kappa.shape}")
    if np.any(np.isnan(kappa)):
        raise ValueError("grid is incomplete (NaN entries)")
    D = np.sqrt(np.maximum(0.0, (1.0 - np.minimum(1.0, kappa))) / 2.0)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


@dataclass
class Embedding:
    """2-D configuration from non-metric MDS.

    points has one row per grid member; centers (filled by
    model_centers) holds per-model coordinate means; stress is the final
    Kruskal stress-1 value and stress_history the accepted value per
    iteration (non-increasing).
    """

    points: np.ndarray
    stress: float
    stress_history: list
    labels: tuple = ()
    centers: np.ndarray | None = None


def _pava(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted pool-adjacent-violators: the non-decreasing sequence
    nearest to y in the weighted least-squares sense."""
    n = y.size
    vals = np.empty(n)
    wts = np.empty(n)
    size = np.empty(n, dtype=int)
    m = 0
    for i in range(n):
        vals[m], wts[m], size[m] = y[i], w[i], 1
        m += 1
        while m > 1 and vals[m - 2] > vals[m - 1]:
            tot = wts[m - 2] + wts[m - 1]
            vals[m - 2] = (wts[m - 2] * vals[m - 2] + wts[m - 1] * vals[m - 1]) / tot
            wts[m - 2] = tot
            size[m - 2] += size[m - 1]
            m -= 1
    out = np.empty(n)
    pos = 0
    for b in range(m):
        out[pos : pos + size[b]] = vals[b]
        pos += size[b]
    return out


def _tie_blocks(d_sorted: np.ndarray):
    """Start indices of runs of equal dissimilarity values."""
    starts = [0]
    for i in range(1, d_sorted.size):
        if d_sorted[i] != d_sorted[i - 1]:
            starts.append(i)
    starts.append(d_sorted.size)
    return starts


def _stress(dist_flat, order, blocks):
    """Kruskal stress-1 with the secondary tie approach: distances are
    pooled within equal-dissimilarity blocks before isotonic fitting.
    Returns (stress, fitted disparities in flat order)."""
    d = dist_flat[order]
    nb = len(blocks) - 1
    pooled = np.empty(nb)
    wts = np.empty(nb)
    for b in range(nb):
        s, e = blocks[b], blocks[b + 1]
        pooled[b] = d[s:e].mean()
        wts[b] = e - s
    fit_blocks = _pava(pooled, wts)
    dhat_sorted = np.repeat(fit_blocks, np.diff(blocks).astype(int))
    denom = float(np.sum(d * d))
    if denom == 0.0:
        return 0.0, np.zeros_like(dist_flat)
    raw = float(np.sum((d - dhat_sorted) ** 2))
    dhat = np.empty_like(dist_flat)
    dhat[order] = dhat_sorted
    return math.sqrt(raw / denom), dhat


def _pair_distances(X, iu):
    diff = X[iu[0]] - X[iu[1]]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _torgerson(D: np.ndarray, dims: int) -> np.ndarray:
    n = D.shape[0]
    J = np.eye(n) - np.full((n, n), 1.0 / n)
    B = -0.5 * J @ (D * D) @ J
    lam, V = np.linalg.eigh(0.5 * (B + B.T))
    idx = np.argsort(lam)[::-1][:dims]
    lam = np.maximum(lam[idx], 0.0)
    return V[:, idx] * np.sqrt(lam)


def mds_embed(D, dims: int = 2, seed: int = 0, max_iter: int = 500) -> Embedding:
    """Kruskal non-metric MDS: classical-scaling start, then alternating
    monotone regression and Guttman updates.

    Each Guttman step is accepted only if it does not increase stress-1;
    otherwise it is halved back toward the previous configuration, so the
    recorded stress history is non-increasing. Stops when the improvement
    drops below 1e-8 or after max_iter iterations.
    """
    if hasattr(D, "kappa"):  # a grid was passed; convert
        D = discordance_matrix(D)
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {D.shape}")
    n = D.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    if np.any(D < 0) or not np.allclose(D, D.T, atol=1e-12) or np.any(np.diag(D) != 0):
        raise ValueError("D must be symmetric, non-negative, with a zero diagonal")

    iu = np.triu_indices(n, k=1)
    diss = D[iu]
    order = np.argsort(diss, kind="stable")
    blocks = _tie_blocks(diss[order])

    X = _torgerson(D, dims)
    if not np.any(X):
        X = np.random.default_rng(seed).normal(scale=1e-3, size=(n, dims))
    X = X - X.mean(axis=0)

    dist = _pair_distances(X, iu)
    stress, dhat = _stress(dist, order, blocks)
    history = [stress]

    for _ in range(max_iter):
        if stress == 0.0:
            break
        # Guttman transform at the current disparities
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dist > 0, dhat / dist, 0.0)
        Bmat = np.zeros((n, n))
        Bmat[iu] = -ratio
        Bmat += Bmat.T
        np.fill_diagonal(Bmat, -Bmat.sum(axis=1))
        X_new = (Bmat @ X) / n

        accepted = None
        cand = X_new
        for _half in range(30):
            cand_dist = _pair_distances(cand, iu)
            cand_stress, cand_dhat = _stress(cand_dist, order, blocks)
            if cand_stress <= stress:
                accepted = (cand, cand_dist, cand_stress, cand_dhat)
                break
            cand = 0.5 * (cand + X)
        if accepted is None:
            break
        X, dist, new_stress, dhat = accepted
        improvement = stress - new_stress
        stress = new_stress
        history.append(stress)
        if improvement < 1e-8:
            break

    X = X - X.mean(axis=0)
    return Embedding(points=X, stress=stress, stress_history=history)


def model_centers(embedding, membership) -> np.ndarray:
    """Per-model means of the embedded points.

    membership[i] is the model index (0..K-1) of point i; every model
    index must own at least one point.
    """
    points = np.asarray(getattr(embedding, "points", embedding), dtype=float)
    membership = np.asarray(membership, dtype=int)
    if membership.shape[0] != points.shape[0]:
        raise ValueError("membership length must match the number of points")
    K = int(membership.max()) + 1 if membership.size else 0
    centers = np.empty((K, points.shape[1]))
    for k in range(K):
        mask = membership == k
        if not np.any(mask):
            raise ValueError(f"model {k} has no points")
        centers[k] = points[mask].mean(axis=0)
    return centers
