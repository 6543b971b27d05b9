"""Independent reference computations used as test oracles.

Nothing here imports the package's numerical code paths it checks: B-splines
come from the Cox-de Boor recursion, smoother traces from the explicit hat
matrix, AUC from pair enumeration and so on.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate, special


def cox_de_boor(x: float, knots, degree: int, i: int) -> float:
    """Value of the ``i``-th B-spline of ``degree`` at ``x`` (right-open intervals)."""
    t = knots
    if degree == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    a = 0.0
    if t[i + degree] > t[i]:
        a = (x - t[i]) / (t[i + degree] - t[i]) * cox_de_boor(x, t, degree - 1, i)
    b = 0.0
    if t[i + degree + 1] > t[i + 1]:
        b = (t[i + degree + 1] - x) / (t[i + degree + 1] - t[i + 1]) * cox_de_boor(x, t, degree - 1, i + 1)
    return a + b


def hat_matrix_df(B, P, lam) -> float:
    """``tr(2S - S'S)`` from the explicit ``n x n`` smoother matrix."""
    B = np.asarray(B, float)
    S = B @ np.linalg.pinv(B.T @ B + lam * np.asarray(P, float)) @ B.T
    return float(np.trace(2 * S - S.T @ S))


def normal_equations(B, P, lam, u):
    """``(B'B + lam P)^-1 B'u`` by explicit matrix inversion."""
    B = np.asarray(B, float)
    return np.linalg.inv(B.T @ B + lam * np.asarray(P, float)) @ B.T @ np.asarray(u, float)


def pair_auc(scores, labels) -> float:
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    num = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return num / (len(pos) * len(neg))


def exhaustive_stump(X, u, min_leaf: int):
    """Best single split over every feature and every gap; returns (feature, threshold, sse)."""
    X = np.asarray(X, float)
    u = np.asarray(u, float)
    best = (None, None, float(np.sum((u - u.mean()) ** 2)))
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            left = X[:, j] <= thr
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            sse = float(np.sum((u[left] - u[left].mean()) ** 2) + np.sum((u[~left] - u[~left].mean()) ** 2))
            if sse < best[2] - 1e-12:
                best = (j, thr, sse)
    return best


def central_difference(f, x: float, h: float = 1e-5) -> float:
    return (f(x + h) - f(x - h)) / (2 * h)


def integrate_positive(logpdf, center: float, breaks=np.arange(-8, 9, 1.0)) -> float:
    """``int_0^inf exp(logpdf(y)) dy`` via ``y = exp(s)`` split at ``log(center) + breaks``."""

    def g(s):
        if s > 700.0 or s < -700.0:
            return 0.0
        y = math.exp(s)
        with np.errstate(over="ignore", invalid="ignore"):
            v = logpdf(y)
        return math.exp(v + s) if math.isfinite(v) else 0.0

    pts = [-math.inf] + list(math.log(center) + breaks) + [math.inf]
    return sum(integrate.quad(g, a, b, limit=200, epsabs=1e-13, epsrel=1e-11)[0] for a, b in zip(pts[:-1], pts[1:]))


# closed-form log densities written out independently of the package ------------


def gamma_logpdf(y, mu, sigma):
    a = 1.0 / sigma**2
    return a * math.log(a / mu) + (a - 1) * math.log(y) - a * y / mu - math.lgamma(a)


def gengamma_logpdf(y, mu, sigma, nu):
    """Stacy-type generalized gamma with ``z = (y/mu)^nu`` and ``theta = 1/(sigma^2 nu^2)``."""
    theta = 1.0 / (sigma**2 * nu**2)
    z = (y / mu) ** nu
    return (math.log(abs(nu)) + theta * math.log(theta) + theta * math.log(z) - theta * z
            - math.lgamma(theta) - math.log(y))


def bcto_logpdf(y, mu, sigma, nu, tau):
    if abs(nu) < 1e-10:
        z = math.log(y / mu) / sigma
    else:
        z = ((y / mu) ** nu - 1.0) / (nu * sigma)
    logt = (math.lgamma((tau + 1) / 2) - math.lgamma(tau / 2) - 0.5 * math.log(tau * math.pi)
            - (tau + 1) / 2 * math.log1p(z * z / tau))
    trunc = special.stdtr(tau, 1.0 / (sigma * abs(nu))) if nu != 0 else 1.0
    return (nu - 1) * math.log(y) - nu * math.log(mu) - math.log(sigma) + logt - math.log(trunc)
