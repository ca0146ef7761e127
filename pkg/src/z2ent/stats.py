"""Level statistics, spectral distances and self-similar scaling fits."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# unfolding and level statistics
# ---------------------------------------------------------------------------
@dataclass
class UnfoldedSpectrum:
    raw: np.ndarray
    unfolded: np.ndarray
    fit_degree: int

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.unfolded)


class TooFewLevels(ValueError):
    pass


def unfold(levels: Sequence[float], degree: int = 3) -> UnfoldedSpectrum:
    """Map levels through a polynomial fit of the cumulative level count.

    The staircase ``N(xi_n) = n`` is fit with a degree-``degree`` polynomial
    in the rescaled variable; the unfolded levels are the fit evaluated at the
    raw levels, so the mean unfolded spacing is one.
    """
    x = np.sort(np.asarray(levels, float))
    if len(x) < degree + 5:
        raise TooFewLevels(f"{len(x)} levels, need at least {degree + 5}")
    n = np.arange(len(x), dtype=float)
    poly = np.polynomial.Polynomial.fit(x, n, degree)
    u = poly(x)
    # a non-monotone fit would reorder levels; fall back to sorting
    return UnfoldedSpectrum(x, np.sort(u), degree)


def spacings_by_sector(spectrum, degree: int = 3, min_levels: int | None = None) -> np.ndarray:
    """Unfolded nearest-neighbour spacings pooled over sectors."""
    out = []
    for sec, xi in spectrum.by_sector().items():
        try:
            out.append(unfold(xi, degree).spacings)
        except TooFewLevels:
            log.debug("sector %s skipped: %d levels", sec, len(xi))
    return np.concatenate(out) if out else np.zeros(0)


def gap_ratios(levels: Sequence[float]) -> np.ndarray:
    """``r_n = min(d_n, d_{n-1}) / max(d_n, d_{n-1})`` of consecutive gaps.

    Pairs of zero gaps (exact degeneracies) are dropped.
    """
    x = np.sort(np.asarray(levels, float))
    d = np.diff(x)
    if len(d) < 2:
        return np.zeros(0)
    a, b = d[1:], d[:-1]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    ok = hi > 0
    return lo[ok] / hi[ok]


@dataclass
class RatioStats:
    ratios: np.ndarray
    per_sector: dict
    mean: float
    histogram: tuple  # (density, edges)
    skipped: int = 0

    @classmethod
    def from_ratios(cls, ratios, per_sector=None, bins: int = 20, skipped: int = 0) -> "RatioStats":
        r = np.asarray(ratios, float)
        dens, edges = np.histogram(r, bins=bins, range=(0, 1), density=True) if len(r) else (np.zeros(bins), np.linspace(0, 1, bins + 1))
        return cls(r, per_sector or {}, float(r.mean()) if len(r) else float("nan"), (dens, edges), skipped)


def gap_ratio_stats(spectrum, bins: int = 20, cutoff: float | None = None) -> RatioStats:
    """Gap ratios within each symmetry sector, pooled.

    ``spectrum`` is an EntanglementSpectrum (sector tagged) or a plain level
    list (one sector).  Sectors with fewer than three levels are skipped.
    """
    if hasattr(spectrum, "by_sector"):
        sectors = spectrum.by_sector()
    else:
        sectors = {None: np.asarray(spectrum, float)}
    pooled, per, skipped = [], {}, 0
    for sec, xi in sectors.items():
        xi = np.asarray(xi, float)
        if cutoff is not None:
            xi = xi[xi < -math.log(cutoff)]
        if len(xi) < 3:
            skipped += 1
            continue
        r = gap_ratios(xi)
        per[sec] = r
        pooled.append(r)
    r = np.concatenate(pooled) if pooled else np.zeros(0)
    return RatioStats.from_ratios(r, per, bins, skipped)


# ---------------------------------------------------------------------------
# random-matrix references
# ---------------------------------------------------------------------------
ENSEMBLES = ("Poisson", "GOE", "GUE")

# mean ratio: exact for Poisson, large-N values for the Gaussian ensembles
MEAN_RATIO = {"Poisson": 2 * math.log(2) - 1, "GOE": 0.5307, "GUE": 0.5996}
MEAN_RATIO_SURMISE = {"Poisson": 2 * math.log(2) - 1, "GOE": 4 - 2 * math.sqrt(3), "GUE": 2 * math.sqrt(3) / math.pi - 0.5}


def rmt_reference(ensemble: str, observable: str, x) -> np.ndarray:
    """Closed-form densities of unfolded spacings ``s`` or gap ratios ``r``.

    Spacings use the Wigner surmises; ratios use the three-level surmise
    restricted to ``r in [0, 1]`` (twice the density of ``min/max`` on the
    half line).
    """
    x = np.asarray(x, float)
    if np.any(x < 0):
        raise ValueError("argument must be non-negative")
    ens = {"poisson": "Poisson", "goe": "GOE", "gue": "GUE"}[ensemble.lower()]
    if observable in ("s", "spacing"):
        if ens == "Poisson":
            return np.exp(-x)
        if ens == "GOE":
            return 0.5 * np.pi * x * np.exp(-0.25 * np.pi * x ** 2)
        return 32 / np.pi ** 2 * x ** 2 * np.exp(-4 * x ** 2 / np.pi)
    if observable in ("r", "ratio"):
        inside = x <= 1
        if ens == "Poisson":
            p = 2 / (1 + x) ** 2
        elif ens == "GOE":
            p = 2 * (27 / 8) * (x + x ** 2) / (1 + x + x ** 2) ** 2.5
        else:
            p = 2 * (81 * math.sqrt(3) / (4 * math.pi)) * (x + x ** 2) ** 2 / (1 + x + x ** 2) ** 4
        return np.where(inside, p, 0.0)
    raise ValueError(f"unknown observable {observable!r}")


def sample_ensemble(ensemble: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Eigenvalues of one ``n x n`` Gaussian random matrix (or Poisson levels)."""
    ens = ensemble.upper()
    if ens == "POISSON":
        return np.sort(np.cumsum(rng.exponential(size=n)))
    a = rng.standard_normal((n, n))
    if ens == "GUE":
        a = a + 1j * rng.standard_normal((n, n))
    elif ens != "GOE":
        raise ValueError(ensemble)
    return np.linalg.eigvalsh((a + a.conj().T) / 2)


def ks_distance(samples: np.ndarray, cdf) -> float:
    x = np.sort(np.asarray(samples, float))
    n = len(x)
    c = cdf(x)
    return float(max(np.max(np.arange(1, n + 1) / n - c), np.max(c - np.arange(n) / n)))


# ---------------------------------------------------------------------------
# Bhattacharyya distance
# ---------------------------------------------------------------------------
def bhattacharyya(p, q, tol: float = 1e-8) -> float:
    """``-log sum_n sqrt(p_n q_n)`` of two probability spectra.

    Both lists are sorted in descending order and zero-padded to a common
    length before pairing.  Disjoint supports return ``inf``.
    """
    p = np.sort(np.clip(np.asarray(p, float), 0, None))[::-1]
    q = np.sort(np.clip(np.asarray(q, float), 0, None))[::-1]
    for name, v in (("p", p), ("q", q)):
        if abs(v.sum() - 1) > tol:
            raise ValueError(f"{name} sums to {v.sum()}, not 1")
    n = max(len(p), len(q))
    p = np.pad(p, (0, n - len(p)))
    q = np.pad(q, (0, n - len(q)))
    bc = float(np.sum(np.sqrt(p * q)))
    if bc <= 0:
        return math.inf
    return max(0.0, -math.log(min(bc, 1.0)))


# ---------------------------------------------------------------------------
# self-similar scaling
# ---------------------------------------------------------------------------
@dataclass
class ScalingGrid:
    alpha: np.ndarray = field(default_factory=lambda: np.round(np.arange(0.0, 1.6 + 1e-9, 0.02), 10))
    beta: np.ndarray = field(default_factory=lambda: np.round(np.arange(-0.4, 0.4 + 1e-9, 0.02), 10))
    eps_t0: np.ndarray = field(default_factory=lambda: np.round(np.arange(0.0, 4.0 + 1e-9, 0.1), 10))


@dataclass
class Estimate:
    value: float
    error: float
    flagged: bool = False


@dataclass
class ScalingFit:
    alpha: Estimate
    beta: Estimate
    t0: Estimate  # in units of eps * t0
    chi2_min: float
    best: tuple  # grid minimum (alpha, beta, eps_t0)
    grid: ScalingGrid
    chi2: np.ndarray  # shape (n_alpha, n_beta, n_t0)
    likelihood: np.ndarray
    marginals: dict
    flags: list = field(default_factory=list)


def _log_interp(n_hat: np.ndarray, logp: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation in (log n, log P); NaN outside the data."""
    ln = np.log(n_hat)
    return np.interp(np.log(x), ln, logp, left=np.nan, right=np.nan)


def scaling_chi2(spectra: Sequence[tuple[float, np.ndarray]], t_ref: float, t_tests: Sequence[float],
                 window: tuple[int, int], epsilon: float, alpha: float, beta: float, eps_t0: float,
                 n_grid: int = 200) -> float:
    """Collapse deviation of the tests against the reference.

    ``f(t, n_hat) = log(tau^alpha P(n, t))`` at ``n_hat = tau^beta n`` with
    ``tau = eps (t - t0)`` is compared on a common log-spaced ``n_hat`` grid
    spanning the reference window:

        chi2 = (1/N_t) sum_t  int (f_ref - f_t)^2 dn/n / int f_ref^2 dn/n .
    """
    data = {float(t): np.asarray(p, float) for t, p in spectra}
    t0 = eps_t0 / epsilon

    def curve(t):
        tau = epsilon * (t - t0)
        if tau <= 0:
            return None
        p = data[t]
        n = np.arange(1, len(p) + 1, dtype=float)
        good = p > 0
        return tau ** beta * n[good], alpha * math.log(tau) + np.log(p[good])

    ref = curve(float(t_ref))
    if ref is None:
        return math.inf
    lo, hi = window
    tau_r = epsilon * (t_ref - t0)
    x = np.geomspace(tau_r ** beta * lo, tau_r ** beta * hi, n_grid)
    f_ref = _log_interp(ref[0], ref[1], x)
    norm = np.nansum(f_ref ** 2)
    total, count = 0.0, 0
    for t in t_tests:
        c = curve(float(t))
        if c is None:
            return math.inf
        f = _log_interp(c[0], c[1], x)
        ok = ~np.isnan(f) & ~np.isnan(f_ref)
        if ok.sum() < n_grid // 2:
            return math.inf
        # uniform grid in log n: the dn/n measure is a plain mean
        total += np.mean((f_ref[ok] - f[ok]) ** 2) / (norm / np.sum(~np.isnan(f_ref)))
        count += 1
    return total / count


def _gauss(x, a, mu, s):
    return a * np.exp(-0.5 * ((x - mu) / s) ** 2)


def _gauss_fit(x: np.ndarray, w: np.ndarray) -> Estimate:
    """Gaussian fit to a marginal around its maximum."""
    k = int(np.argmax(w))
    step = float(x[1] - x[0]) if len(x) > 1 else 1.0
    mu0 = float(x[k])
    if len(x) < 3 or w.max() <= 0:
        return Estimate(mu0, step / 2, True)
    sel = w > 0.05 * w.max()
    xs, ws = x[sel], w[sel]
    if sel.sum() < 3:
        return Estimate(mu0, step / 2, True)
    var = float(np.sum(ws * (xs - mu0) ** 2) / ws.sum())
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            (a, mu, s), _ = curve_fit(_gauss, xs, ws, p0=(w.max(), mu0, max(math.sqrt(var), step / 2)), maxfev=5000)
        s = abs(s)
        if not np.isfinite(mu) or abs(mu - mu0) > 5 * max(s, step):
            return Estimate(mu0, max(math.sqrt(var), step / 2), True)
        return Estimate(float(mu), float(s))
    except (RuntimeError, ValueError):
        return Estimate(mu0, max(math.sqrt(var), step / 2), True)


def scaling_fit(spectra: Sequence[tuple[float, np.ndarray]], t_ref: float, t_tests: Sequence[float],
                window: tuple[int, int], epsilon: float = 1.0, grid: ScalingGrid | None = None,
                n_grid: int = 200) -> ScalingFit:
    """Grid scan of the collapse ``chi2(alpha, beta, eps t0)`` with likelihoods.

    ``spectra`` is a list of ``(t, P)`` with ``P`` the Schmidt probabilities
    sorted in descending order.  The likelihood is
    ``W = exp(-chi2 / chi2_min) / N``; marginals sum ``W`` over two of the
    three variables and are fit locally with Gaussians for the estimates.
    """
    grid = grid or ScalingGrid()
    flags = []
    lo, hi = window
    rank = min(int(np.sum(np.asarray(p) > 0)) for t, p in spectra if t == t_ref or t in t_tests)
    if hi > rank:
        flags.append(f"window clipped from {hi} to Schmidt rank {rank}")
        hi = rank
    if lo < 1 or hi <= lo:
        raise ValueError(f"degenerate window [{lo}, {hi}]")
    times = {float(t) for t, _ in spectra}
    missing = [t for t in [t_ref, *t_tests] if float(t) not in times]
    if missing:
        raise ValueError(f"no spectrum at times {missing}")
    chi = np.full((len(grid.alpha), len(grid.beta), len(grid.eps_t0)), np.inf)
    for i, a in enumerate(grid.alpha):
        for j, b in enumerate(grid.beta):
            for k, t0 in enumerate(grid.eps_t0):
                chi[i, j, k] = scaling_chi2(spectra, t_ref, t_tests, (lo, hi), epsilon, a, b, t0, n_grid)
    if not np.isfinite(chi).any():
        raise ValueError("degenerate grid: no finite chi2 (t0 beyond the earliest time?)")
    imin = np.unravel_index(np.argmin(chi), chi.shape)
    cmin = float(chi[imin])
    floor = max(cmin, 1e-300)
    w = np.where(np.isfinite(chi), np.exp(-(chi - cmin) / floor), 0.0)
    w /= w.sum()
    marg = {
        "alpha": w.sum(axis=(1, 2)),
        "beta": w.sum(axis=(0, 2)),
        "eps_t0": w.sum(axis=(0, 1)),
    }
    est = {name: _gauss_fit(ax, marg[name]) for name, ax in
           (("alpha", grid.alpha), ("beta", grid.beta), ("eps_t0", grid.eps_t0))}
    for name, e in est.items():
        if e.flagged:
            flags.append(f"{name}: marginal too narrow or irregular for a Gaussian fit; half grid step reported")
    best = (float(grid.alpha[imin[0]]), float(grid.beta[imin[1]]), float(grid.eps_t0[imin[2]]))
    return ScalingFit(est["alpha"], est["beta"], est["eps_t0"], cmin, best, grid, chi, w, marg, flags)
