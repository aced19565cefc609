"""Finite-size-scaling analysis: crossings, data collapse, and growth-law fits.

All fits are deterministic given their inputs; Monte-Carlo error bars use an
explicitly seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize

from .errors import CollapseError, InvalidInputError

_LN2 = math.log(2.0)


class Curve(NamedTuple):
    """One observable-vs-control curve at a fixed system size."""

    L: int
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None


@dataclass(frozen=True)
class CrossingEstimate:
    """Location where two finite-size curves intersect.

    ``found`` is False when the difference never changes sign over the
    scanned interval — itself a meaningful outcome (no size-induced
    crossing, hence no transition in the window).
    """

    pair: tuple
    location: float | None
    uncertainty: float | None
    found: bool
    n_boot_found: int = 0


@dataclass(frozen=True)
class CollapseFit:
    """Two-parameter scaling collapse result."""

    alpha_c: float
    nu: float
    residual: float
    window: float
    n_points: int
    alpha_c_err: float | None = None
    nu_err: float | None = None


@dataclass(frozen=True)
class LogFit:
    """Weighted least-squares fit of ``y = a ln L + b``."""

    prefactor: float
    offset: float
    prefactor_err: float
    offset_err: float
    chi2: float
    dof: int


def _as_curve(c) -> Curve:
    if not isinstance(c, Curve):
        c = Curve(*c)
    x = np.asarray(c.x, dtype=float)
    y = np.asarray(c.y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError("curve needs matching 1-d x and y")
    sigma = None if c.sigma is None else np.broadcast_to(
        np.asarray(c.sigma, dtype=float), x.shape
    ).copy()
    return Curve(int(c.L), x, y, sigma)


def _first_sign_change(x: np.ndarray, d: np.ndarray) -> float | None:
    """Root of the piecewise-linear interpolant of ``d``, or None."""
    exact = np.flatnonzero(d == 0.0)
    flips = np.flatnonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)
    candidates = []
    if exact.size:
        candidates.append(x[exact[0]])
    if flips.size:
        i = flips[0]
        candidates.append(x[i] - d[i] * (x[i + 1] - x[i]) / (d[i + 1] - d[i]))
    if not candidates:
        return None
    return float(min(candidates))


def crossing_point(curve_a, curve_b, n_boot: int = 200, seed: int = 0) -> CrossingEstimate:
    """Intersection of two curves sharing an x-grid.

    The location is the first root of the linearly interpolated difference;
    the uncertainty is the standard deviation of the root over ``n_boot``
    Gaussian resamples of both curves.  Exact on linear inputs and
    symmetric under exchanging the curves.
    """
    a, b = _as_curve(curve_a), _as_curve(curve_b)
    if a.x.shape != b.x.shape or not np.allclose(a.x, b.x):
        raise InvalidInputError("curves must share an x-grid")
    loc = _first_sign_change(a.x, a.y - b.y)
    if loc is None:
        return CrossingEstimate(pair=(a.L, b.L), location=None, uncertainty=None, found=False)
    sa = np.zeros_like(a.y) if a.sigma is None else a.sigma
    sb = np.zeros_like(b.y) if b.sigma is None else b.sigma
    rng = np.random.default_rng(seed)
    roots = []
    for _ in range(n_boot):
        d = (a.y + sa * rng.standard_normal(a.y.size)) - (
            b.y + sb * rng.standard_normal(b.y.size)
        )
        r = _first_sign_change(a.x, d)
        if r is not None:
            roots.append(r)
    err = float(np.std(roots, ddof=1)) if len(roots) > 1 else 0.0
    return CrossingEstimate(
        pair=(a.L, b.L),
        location=loc,
        uncertainty=err,
        found=True,
        n_boot_found=len(roots),
    )


def _pooled(curves, alpha_c, nu, window):
    """Rescale, taper, and sort every point inside the collapse window.

    The taper ``(1 - u^2)^2`` in ``u = (x - alpha_c)/window`` keeps the
    cost continuous as points enter or leave the window while the
    optimizer moves ``alpha_c``.
    """
    xs, ys, ws = [], [], []
    for c in curves:
        u = (c.x - alpha_c) / window
        taper = np.where(np.abs(u) < 1.0, (1.0 - u**2) ** 2, 0.0)
        keep = taper > 0.0
        if not np.any(keep):
            continue
        sig = np.ones(c.x.size) if c.sigma is None else np.maximum(c.sigma, 1e-12)
        xs.append((c.x[keep] - alpha_c) * float(c.L) ** (1.0 / nu))
        ys.append(c.y[keep])
        ws.append(taper[keep] / sig[keep] ** 2)
    if not xs:
        return None
    x = np.concatenate(xs)
    order = np.argsort(x, kind="stable")
    return x[order], np.concatenate(ys)[order], np.concatenate(ws)[order]


def _loo_local_linear(x, y, w, m: int = 6):
    """Leave-one-out prediction of each point from a local weighted line.

    For point ``i`` the ``m`` sorted neighbours around it (self excluded)
    are fit with a weighted straight line; returns the predictions.
    """
    n = x.size
    span = min(m + 1, n)
    start = np.clip(np.arange(n) - span // 2, 0, n - span)
    idx = start[:, None] + np.arange(span)
    xw, yw, ww = x[idx], y[idx], w[idx].copy()
    ww[idx == np.arange(n)[:, None]] = 0.0
    s0 = ww.sum(axis=1)
    sx = (ww * xw).sum(axis=1)
    sy = (ww * yw).sum(axis=1)
    sxx = (ww * xw * xw).sum(axis=1)
    sxy = (ww * xw * yw).sum(axis=1)
    det = s0 * sxx - sx * sx
    safe = det > 1e-30 * np.maximum(s0 * sxx, 1e-300)
    slope = np.where(safe, (s0 * sxy - sx * sy) / np.where(safe, det, 1.0), 0.0)
    icept = np.where(s0 > 0, (sy - slope * sx) / np.where(s0 > 0, s0, 1.0), 0.0)
    return slope * x + icept


def _collapse_cost(curves, alpha_c, nu, window):
    pooled = _pooled(curves, alpha_c, nu, window)
    if pooled is None or pooled[0].size < 8:
        return np.inf
    x, y, w = pooled
    yhat = _loo_local_linear(x, y, w)
    return float(np.sum(w * (y - yhat) ** 2) / np.sum(w))


def collapse_fit(
    curves,
    init,
    window: float = 0.2,
    n_boot: int = 0,
    seed: int = 0,
) -> CollapseFit:
    """Fit ``(alpha_c, nu)`` so all sizes fall on one master curve.

    Minimizes the weighted spread of ``y`` around a leave-one-out local
    linear regression of the pooled, rescaled points
    ``x' = (x - alpha_c) L^(1/nu)``, restricted to ``|x - alpha_c| <
    window``.  ``n_boot > 0`` adds bootstrap error bars on both parameters.

    Raises :class:`CollapseError` (with a sampled residual landscape
    attached) if the simplex search does not converge.
    """
    curves = [_as_curve(c) for c in curves]
    if len({c.L for c in curves}) < 3:
        raise InvalidInputError("collapse needs at least 3 distinct system sizes")
    ac0, nu0 = float(init[0]), float(init[1])
    xmin = min(c.x.min() for c in curves)
    xmax = max(c.x.max() for c in curves)

    def objective(p):
        ac, nu = p
        if not (0.2 <= nu <= 10.0) or not (xmin <= ac <= xmax):
            return 1e6
        return _collapse_cost(curves, ac, nu, window)

    res = minimize(
        objective,
        x0=[ac0, nu0],
        method="Nelder-Mead",
        options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 2000},
    )
    if not res.success or not np.isfinite(res.fun):
        acs = np.linspace(ac0 - window, ac0 + window, 21)
        nus = np.linspace(max(0.3, 0.5 * nu0), 2.0 * nu0, 21)
        landscape = np.array(
            [(a, n, _collapse_cost(curves, a, n, window)) for a in acs for n in nus]
        )
        raise CollapseError(
            f"collapse search did not converge: {res.message}", landscape=landscape
        )
    ac, nu = float(res.x[0]), float(res.x[1])
    n_points = _pooled(curves, ac, nu, window)[0].size
    ac_err = nu_err = None
    if n_boot > 0:
        rng = np.random.default_rng(seed)
        acs, nus = [], []
        for _ in range(n_boot):
            jittered = []
            for c in curves:
                sig = np.zeros(c.x.size) if c.sigma is None else c.sigma
                jittered.append(
                    Curve(c.L, c.x, c.y + sig * rng.standard_normal(c.x.size), c.sigma)
                )
            r = minimize(
                lambda p: (
                    1e6
                    if not (0.2 <= p[1] <= 10.0)
                    else _collapse_cost(jittered, p[0], p[1], window)
                ),
                x0=[ac, nu],
                method="Nelder-Mead",
                options={"xatol": 1e-5, "fatol": 1e-10, "maxiter": 600},
            )
            if r.success and np.isfinite(r.fun):
                acs.append(r.x[0])
                nus.append(r.x[1])
        if len(acs) > 1:
            ac_err = float(np.std(acs, ddof=1))
            nu_err = float(np.std(nus, ddof=1))
    return CollapseFit(
        alpha_c=ac,
        nu=nu,
        residual=float(res.fun),
        window=window,
        n_points=int(n_points),
        alpha_c_err=ac_err,
        nu_err=nu_err,
    )


def collapsed_points(curves, fit: CollapseFit):
    """Plot-ready rows ``(L, x, x_rescaled, y, sigma)`` for a fitted collapse."""
    rows = []
    for c in map(_as_curve, curves):
        xr = (c.x - fit.alpha_c) * float(c.L) ** (1.0 / fit.nu)
        sig = np.zeros(c.x.size) if c.sigma is None else c.sigma
        rows.extend(
            (c.L, float(x), float(r), float(y), float(s))
            for x, r, y, s in zip(c.x, xr, c.y, sig)
        )
    return rows


def log_fit(sizes, values, sigma=None) -> LogFit:
    """Weighted least squares of ``y = a ln L + b``.

    With unweighted input the parameter errors come from the residual
    variance (NaN when there are no residual degrees of freedom).
    """
    L = np.asarray(sizes, dtype=float)
    y = np.asarray(values, dtype=float)
    if L.size != y.size or L.size < 2:
        raise InvalidInputError("log fit needs at least 2 sizes")
    if np.any(L <= 0):
        raise InvalidInputError("sizes must be positive")
    if sigma is None:
        wgt = np.ones_like(y)
    else:
        wgt = 1.0 / np.maximum(np.broadcast_to(np.asarray(sigma, float), y.shape), 1e-12) ** 2
    A = np.stack([np.log(L), np.ones_like(L)], axis=1)
    AtW = A.T * wgt
    cov = np.linalg.inv(AtW @ A)
    a, b = cov @ (AtW @ y)
    resid = y - (a * np.log(L) + b)
    chi2 = float(np.sum(wgt * resid**2))
    dof = L.size - 2
    if sigma is None:
        scale = chi2 / dof if dof > 0 else np.nan
        perr = np.sqrt(np.diag(cov) * scale)
    else:
        perr = np.sqrt(np.diag(cov))
    return LogFit(
        prefactor=float(a),
        offset=float(b),
        prefactor_err=float(perr[0]),
        offset_err=float(perr[1]),
        chi2=chi2,
        dof=dof,
    )


#: 95% quantile of a 1-degree chi-square: the log model must beat the
#: constant model by this much weighted chi-square to be declared.
_LRT_THRESHOLD = 3.84


def classify_scaling(sizes, values, sigma=None):
    """Decide between logarithmic growth and an area law.

    Likelihood-ratio test of ``y = a ln L + b`` against ``y = const`` on
    the weighted residuals: the extra parameter must improve the
    chi-square by more than the 95% quantile of its null distribution.
    Returns ``(label, delta_chi2)`` with label ``"log"`` or ``"area"``.
    """
    L = np.asarray(sizes, dtype=float)
    y = np.asarray(values, dtype=float)
    if L.size < 3:
        raise InvalidInputError("model comparison needs at least 3 sizes")
    if sigma is None:
        wgt = np.ones_like(y)
    else:
        wgt = 1.0 / np.maximum(np.broadcast_to(np.asarray(sigma, float), y.shape), 1e-12) ** 2
    fit = log_fit(L, y, sigma)
    const = float(np.sum(wgt * y) / np.sum(wgt))
    chi2_const = float(np.sum(wgt * (y - const) ** 2))
    delta = chi2_const - fit.chi2
    return ("log" if delta > _LRT_THRESHOLD else "area"), float(delta)


def default_master_curve(u):
    """Smooth step from ``ln 2`` to 0, used by the synthetic generators."""
    return _LN2 * 0.5 * (1.0 - np.tanh(u))


def synthetic_collapse(
    sizes,
    x,
    alpha_c: float,
    nu: float,
    noise: float = 0.01,
    seed: int = 0,
    master=None,
):
    """Curves drawn from a known scaling form plus Gaussian noise."""
    master = default_master_curve if master is None else master
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    curves = []
    for L in sizes:
        u = (x - alpha_c) * float(L) ** (1.0 / nu)
        y = master(u) + noise * rng.standard_normal(x.size)
        curves.append(Curve(int(L), x.copy(), y, np.full(x.size, max(noise, 1e-12))))
    return curves


def synthetic_sizes_series(
    sizes, prefactor: float, offset: float, noise: float = 0.01, seed: int = 0
):
    """``a ln L + b`` samples with Gaussian noise, for fit validation."""
    L = np.asarray(sizes, dtype=float)
    rng = np.random.default_rng(seed)
    y = prefactor * np.log(L) + offset + noise * rng.standard_normal(L.size)
    return L, y, np.full(L.size, max(noise, 1e-12))


def barycentric_grid(n: int) -> np.ndarray:
    """All ``(w, gamma, alpha)`` with ``w + gamma + alpha = 1`` on an
    ``n``-per-edge triangular lattice; ``n (n + 1) / 2`` rows in
    lexicographic order.
    """
    if n < 2:
        raise InvalidInputError("need at least 2 points per edge")
    pts = [
        (i / (n - 1), j / (n - 1), (n - 1 - i - j) / (n - 1))
        for i in range(n)
        for j in range(n - i)
    ]
    return np.asarray(pts, dtype=float)
