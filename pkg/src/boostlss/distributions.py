"""Probability families for the two model stages.

Every family works on link-scale linear predictors during boosting and on
natural-scale parameters everywhere else. Parameters are passed as an array
``theta`` whose last axis indexes the family parameters, so a single
parameter vector has shape ``(K,)`` and per-row parameters have shape
``(n, K)``.

Parameterisations follow the usual GAMLSS conventions:

* ``gamma``   -- mean ``mu``, coefficient of variation ``sigma``
* ``gengamma`` -- ``mu``, ``sigma`` and power ``nu`` (``nu = 1`` is the gamma)
* ``bcto``    -- Box-Cox t with median-like ``mu``, scale ``sigma``, Box-Cox
  power ``nu`` and degrees of freedom ``tau``, truncated to ``y > 0``
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

__all__ = [
    "DomainError",
    "Link",
    "LINKS",
    "Family",
    "Bernoulli",
    "Gamma",
    "GeneralizedGamma",
    "BoxCoxT",
    "Normal",
    "FAMILIES",
    "get_family",
    "zadj_logpdf",
    "zadj_pdf",
    "zadj_cdf",
    "zadj_quantile",
    "exceedance_probability",
]

LOG_2PI = np.log(2.0 * np.pi)


class DomainError(ValueError):
    """Raised when a response or a parameter lies outside a family's domain."""


# ---------------------------------------------------------------------------
# link functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Link:
    """A link ``eta = g(theta)`` with its inverse and ``d theta / d eta``."""

    name: str

    def forward(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.name == "log":
            return np.log(theta)
        if self.name == "logit":
            return special.logit(theta)
        return theta.copy()

    def inverse(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.name == "log":
            return np.exp(eta)
        if self.name == "logit":
            return special.expit(eta)
        return eta.copy()

    def dtheta_deta(self, theta):
        """Derivative of the inverse link, expressed through ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if self.name == "log":
            return theta
        if self.name == "logit":
            return theta * (1.0 - theta)
        return np.ones_like(theta)


LINKS = {name: Link(name) for name in ("log", "logit", "identity")}


# ---------------------------------------------------------------------------
# family base class
# ---------------------------------------------------------------------------


class Family:
    """Base class for a K-parameter distribution family.

    Subclasses implement ``loglik``, ``dloglik`` (derivative with respect to
    the natural parameter), ``cdf``, ``quantile`` and ``offset``. The
    link-scale score used by boosting is derived here.
    """

    name: str = ""
    param_names: tuple[str, ...] = ()
    link_names: tuple[str, ...] = ()
    support: str = "positive"

    @property
    def K(self) -> int:
        return len(self.param_names)

    @property
    def links(self) -> tuple[Link, ...]:
        return tuple(LINKS[n] for n in self.link_names)

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"

    # -- parameter handling -------------------------------------------------
    def theta_from_eta(self, eta):
        eta = np.asarray(eta, dtype=float)
        cols = [link.inverse(eta[..., k]) for k, link in enumerate(self.links)]
        return np.stack(cols, axis=-1)

    def eta_from_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        cols = [link.forward(theta[..., k]) for k, link in enumerate(self.links)]
        return np.stack(cols, axis=-1)

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.K:
            raise DomainError(
                f"{self.name}: expected {self.K} parameters, got {theta.shape[-1]}"
            )
        for k, link in enumerate(self.links):
            col = theta[..., k]
            if not np.all(np.isfinite(col)):
                raise DomainError(f"{self.name}: non-finite {self.param_names[k]}")
            if link.name == "log" and np.any(col <= 0):
                raise DomainError(f"{self.name}: {self.param_names[k]} must be > 0")
            if link.name == "logit" and np.any((col < 0) | (col > 1)):
                raise DomainError(f"{self.name}: {self.param_names[k]} must lie in [0, 1]")
        return theta

    def check_y(self, y):
        y = np.asarray(y, dtype=float)
        if self.support == "positive" and np.any(~(y > 0)):
            raise DomainError(f"{self.name}: responses must be strictly positive")
        if self.support == "binary" and np.any((y != 0) & (y != 1)):
            raise DomainError(f"{self.name}: responses must be 0 or 1")
        if self.support == "real" and not np.all(np.isfinite(y)):
            raise DomainError(f"{self.name}: responses must be finite")
        return y

    def _prepare(self, y, theta):
        y = self.check_y(y)
        theta = self.check_theta(theta)
        y, theta_b = np.broadcast_arrays(y[..., None], theta)
        return y[..., 0], theta_b

    # -- likelihood ---------------------------------------------------------
    def loglik(self, y, theta):
        """Elementwise log density (or log mass)."""
        y, theta = self._prepare(y, theta)
        return self._loglik(y, theta)

    def pdf(self, y, theta):
        return np.exp(self.loglik(y, theta))

    def dloglik(self, y, theta, k: int):
        """Derivative of the log density with respect to ``theta_k``."""
        y, theta = self._prepare(y, theta)
        return self._dloglik(y, theta, k)

    def grad_eta(self, y, theta, k: int):
        """Score with respect to the linear predictor ``eta_k = g_k(theta_k)``."""
        y, theta = self._prepare(y, theta)
        return self._grad_eta(y, theta, k)

    def _grad_eta(self, y, theta, k):
        return self._dloglik(y, theta, k) * self.links[k].dtheta_deta(theta[..., k])

    def cdf(self, y, theta):
        theta = self.check_theta(theta)
        y = np.asarray(y, dtype=float)
        y, theta = np.broadcast_arrays(y[..., None], theta)
        return self._cdf(y[..., 0], theta)

    def quantile(self, p, theta):
        theta = self.check_theta(theta)
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0) | (p >= 1)):
            raise DomainError("quantile levels must lie in (0, 1)")
        p, theta = np.broadcast_arrays(p[..., None], theta)
        return self._quantile(p[..., 0], theta)

    def offset(self, y) -> np.ndarray:
        """Intercept-only fit returning natural-scale parameters."""
        y = self.check_y(np.asarray(y, dtype=float).ravel())
        if y.size == 0:
            raise DomainError(f"{self.name}: cannot fit offset to an empty sample")
        return self._offset(y)

    # -- helpers --------------------------------------------------------------
    def _mle(self, y, start_theta):
        """Numerical intercept-only MLE on the link scale."""
        start = self.eta_from_theta(np.asarray(start_theta, dtype=float))

        def obj(eta):
            theta = self.theta_from_eta(eta)
            yy, tt = np.broadcast_arrays(y[:, None], theta)
            ll = self._loglik(yy[:, 0], tt)
            if not np.all(np.isfinite(ll)):
                return np.inf, np.zeros_like(eta)
            g = np.array([np.sum(self._grad_eta(yy[:, 0], tt, k)) for k in range(self.K)])
            return -np.sum(ll), -g

        res = optimize.minimize(obj, start, jac=True, method="L-BFGS-B")
        best = res.x if np.isfinite(res.fun) and res.fun <= obj(start)[0] else start
        return self.theta_from_eta(best)


# ---------------------------------------------------------------------------
# concrete families
# ---------------------------------------------------------------------------


class Bernoulli(Family):
    """Binary family with success probability ``p`` (logit link)."""

    name = "bernoulli"
    param_names = ("p",)
    link_names = ("logit",)
    support = "binary"

    def _loglik(self, y, theta):
        p = theta[..., 0]
        return special.xlogy(y, p) + special.xlog1py(1.0 - y, -p)

    def _dloglik(self, y, theta, k):
        p = theta[..., 0]
        return y / p - (1.0 - y) / (1.0 - p)

    def _grad_eta(self, y, theta, k):
        return y - theta[..., 0]

    def _cdf(self, y, theta):
        p = theta[..., 0]
        return np.where(y < 0, 0.0, np.where(y < 1, 1.0 - p, 1.0))

    def _quantile(self, q, theta):
        return np.where(q <= 1.0 - theta[..., 0], 0.0, 1.0)

    def _offset(self, y):
        p = float(np.mean(y))
        lo, hi = 1e-6, 1.0 - 1e-6
        if p < lo or p > hi:
            warnings.warn("all responses identical; clamping offset probability", stacklevel=3)
            p = min(max(p, lo), hi)
        return np.array([p])


class Gamma(Family):
    """Gamma with mean ``mu`` and variance ``sigma**2 * mu**2``."""

    name = "gamma"
    param_names = ("mu", "sigma")
    link_names = ("log", "log")

    def _loglik(self, y, theta):
        mu, sigma = theta[..., 0], theta[..., 1]
        a = 1.0 / sigma**2
        return (a - 1.0) * np.log(y) - a * y / mu + a * np.log(a / mu) - special.gammaln(a)

    def _dloglik(self, y, theta, k):
        mu, sigma = theta[..., 0], theta[..., 1]
        a = 1.0 / sigma**2
        if k == 0:
            return (y - mu) / (sigma**2 * mu**2)
        dl_da = np.log(y) - y / mu - np.log(mu) + np.log(a) + 1.0 - special.digamma(a)
        return dl_da * (-2.0 * a / sigma)

    def _cdf(self, y, theta):
        mu, sigma = theta[..., 0], theta[..., 1]
        a = 1.0 / sigma**2
        return special.gammainc(a, np.maximum(y, 0.0) * a / mu)

    def _quantile(self, p, theta):
        mu, sigma = theta[..., 0], theta[..., 1]
        a = 1.0 / sigma**2
        return special.gammaincinv(a, p) * mu / a

    def _offset(self, y):
        mu = float(np.mean(y))
        s = np.log(mu) - float(np.mean(np.log(y)))
        a_max = 1e6
        if s <= 1.0 / (2.0 * a_max):
            a = a_max
        else:
            # ln(a) - digamma(a) is decreasing from +inf to 0
            a = optimize.brentq(lambda a: np.log(a) - special.digamma(a) - s, 1e-8, a_max)
        return np.array([mu, 1.0 / np.sqrt(a)])


class GeneralizedGamma(Family):
    """Generalised gamma: ``(y/mu)**nu`` is gamma with shape ``1/(sigma*nu)**2``.

    The log-normal limit is used when ``|nu|`` is below ``NU_EPS``.
    """

    name = "gengamma"
    param_names = ("mu", "sigma", "nu")
    link_names = ("log", "log", "identity")
    NU_EPS = 1e-5

    def _parts(self, y, theta):
        mu, sigma, nu = theta[..., 0], theta[..., 1], theta[..., 2]
        small = np.abs(nu) < self.NU_EPS
        nu_s = np.where(small, 1.0, nu)
        th = 1.0 / (sigma**2 * nu_s**2)
        L = np.log(y) - np.log(mu)
        z = np.exp(nu_s * L)
        return mu, sigma, nu_s, small, th, L, z

    def _loglik(self, y, theta):
        mu, sigma, nu, small, th, L, z = self._parts(y, theta)
        ll = (
            th * np.log(th) + th * nu * L + np.log(np.abs(nu)) - th * z
            - special.gammaln(th) - np.log(y)
        )
        lognorm = -0.5 * (L / sigma) ** 2 - np.log(sigma) - 0.5 * LOG_2PI - np.log(y)
        return np.where(small, lognorm, ll)

    def _dloglik(self, y, theta, k):
        mu, sigma, nu, small, th, L, z = self._parts(y, theta)
        dl_dth = np.log(th) + 1.0 + nu * L - z - special.digamma(th)
        if k == 0:
            g = th * nu * (z - 1.0) / mu
            g_ln = L / sigma**2 / mu
        elif k == 1:
            g = dl_dth * (-2.0 * th) / sigma
            g_ln = ((L / sigma) ** 2 - 1.0) / sigma
        else:
            g = dl_dth * (-2.0 * th / nu) + th * L + 1.0 / nu - th * z * L
            g_ln = np.zeros_like(g)
        if np.any(small):
            if k == 2:
                g_ln = self._dnu_near_zero(y, theta)
            g = np.where(small, g_ln, g)
        return g

    def _dnu_near_zero(self, y, theta):
        h = 1e-3
        tp = np.array(theta, dtype=float, copy=True)
        tm = np.array(theta, dtype=float, copy=True)
        tp[..., 2] = h
        tm[..., 2] = -h
        return (self._loglik(y, tp) - self._loglik(y, tm)) / (2.0 * h)

    def _cdf(self, y, theta):
        mu, sigma, nu = theta[..., 0], theta[..., 1], theta[..., 2]
        small = np.abs(nu) < self.NU_EPS
        nu_s = np.where(small, 1.0, nu)
        th = 1.0 / (sigma**2 * nu_s**2)
        ypos = np.maximum(y, np.finfo(float).tiny)
        with np.errstate(over="ignore"):  # z = inf gives the correct limit below
            z = np.exp(nu_s * (np.log(ypos) - np.log(mu)))
        F = np.where(nu_s > 0, special.gammainc(th, th * z), special.gammaincc(th, th * z))
        Fln = special.ndtr((np.log(ypos) - np.log(mu)) / sigma)
        return np.where(y <= 0, 0.0, np.where(small, Fln, F))

    def _quantile(self, p, theta):
        mu, sigma, nu = theta[..., 0], theta[..., 1], theta[..., 2]
        small = np.abs(nu) < self.NU_EPS
        nu_s = np.where(small, 1.0, nu)
        th = 1.0 / (sigma**2 * nu_s**2)
        z = np.where(nu_s > 0, special.gammaincinv(th, p), special.gammainccinv(th, p)) / th
        q = mu * z ** (1.0 / nu_s)
        qln = mu * np.exp(sigma * special.ndtri(p))
        return np.where(small, qln, q)

    def _offset(self, y):
        mu, sigma = Gamma()._offset(y)
        return self._mle(y, [mu, sigma, 1.0])


class BoxCoxT(Family):
    """Box-Cox t distribution truncated to the positive half line.

    With ``z = ((y/mu)**nu - 1) / (nu*sigma)`` (``log(y/mu)/sigma`` at
    ``nu = 0``) the density is
    ``y**(nu-1) / (mu**nu * sigma) * f_t(z; tau) / F_t(1/(sigma*|nu|); tau)``.
    The truncation factor is dropped when the excluded tail mass is below
    ``TRUNC_EPS``.
    """

    name = "bcto"
    param_names = ("mu", "sigma", "nu", "tau")
    link_names = ("log", "log", "identity", "log")
    TRUNC_EPS = 1e-12

    @staticmethod
    def _z(L, sigma, nu):
        x = nu * L
        nu_s = np.where(nu == 0, 1.0, nu)
        z = np.where(nu == 0, L / sigma, special.expm1(x) / (nu_s * sigma))
        return z

    @staticmethod
    def _logpdf_t(z, tau):
        return (
            special.gammaln(0.5 * (tau + 1.0)) - special.gammaln(0.5 * tau)
            - 0.5 * np.log(np.pi * tau) - 0.5 * (tau + 1.0) * np.log1p(z * z / tau)
        )

    def _trunc(self, sigma, nu, tau):
        """Return ``c = 1/(sigma|nu|)``, excluded tail mass and an active mask."""
        with np.errstate(divide="ignore"):
            c = np.where(nu == 0, np.inf, 1.0 / (sigma * np.abs(nu)))
        tail = np.where(np.isinf(c), 0.0, special.stdtr(tau, -np.where(np.isinf(c), 0.0, c)))
        active = tail > self.TRUNC_EPS
        return c, tail, active

    def _loglik(self, y, theta):
        mu, sigma, nu, tau = (theta[..., i] for i in range(4))
        L = np.log(y) - np.log(mu)
        z = self._z(L, sigma, nu)
        _, tail, active = self._trunc(sigma, nu, tau)
        ll = (nu - 1.0) * np.log(y) - nu * np.log(mu) - np.log(sigma) + self._logpdf_t(z, tau)
        return ll - np.where(active, np.log1p(-tail), 0.0)

    def _dloglik(self, y, theta, k):
        link = self.links[k]
        return self._grad_eta(y, theta, k) / link.dtheta_deta(theta[..., k])

    def _dlogF_dlogtau(self, c, tau):
        h = 1e-3
        s = np.log(tau)

        def G(t):
            return np.log1p(-special.stdtr(np.exp(t), -c))

        return (-G(s + 2 * h) + 8 * G(s + h) - 8 * G(s - h) + G(s - 2 * h)) / (12 * h)

    def _grad_eta(self, y, theta, k):
        mu, sigma, nu, tau = (theta[..., i] for i in range(4))
        L = np.log(y) - np.log(mu)
        z = self._z(L, sigma, nu)
        gz = -(tau + 1.0) * z / (tau + z * z)
        c, tail, active = self._trunc(sigma, nu, tau)
        c_fin = np.where(active, c, 1.0)
        # d log F_t(c) / dc
        dlogF_dc = np.where(
            active, np.exp(self._logpdf_t(c_fin, tau) - np.log1p(-np.where(active, tail, 0.0))), 0.0
        )
        if k == 0:
            r = np.exp(nu * L)
            return -nu + gz * (-r / sigma)
        if k == 1:
            return -1.0 - gz * z + dlogF_dc * c_fin * np.where(active, 1.0, 0.0)
        if k == 2:
            x = nu * L
            nu_s = np.where(nu == 0, 1.0, nu)
            series = np.abs(x) < 1e-4
            exact = (x * np.exp(x) - special.expm1(x)) / (nu_s**2 * sigma)
            approx = L**2 * (0.5 + x / 3.0 + x * x / 8.0) / sigma
            dz = np.where(series, approx, exact)
            return L + gz * dz + np.where(active, dlogF_dc * c_fin / nu_s, 0.0)
        # tau, log link: tau * d/dtau
        t2 = z * z
        dlf = (
            0.5 * special.digamma(0.5 * (tau + 1.0)) - 0.5 * special.digamma(0.5 * tau)
            - 0.5 / tau - 0.5 * np.log1p(t2 / tau) + 0.5 * (tau + 1.0) * t2 / (tau * (tau + t2))
        )
        g = tau * dlf
        if np.any(active):
            dF = np.zeros_like(g)
            dF[active] = self._dlogF_dlogtau(c_fin[active], tau[active])
            g = g - dF
        return g

    def _cdf(self, y, theta):
        mu, sigma, nu, tau = (theta[..., i] for i in range(4))
        ypos = np.maximum(y, np.finfo(float).tiny)
        z = self._z(np.log(ypos) - np.log(mu), sigma, nu)
        c, tail, _ = self._trunc(sigma, nu, tau)
        Fc = 1.0 - tail
        F = np.where(nu > 0, (special.stdtr(tau, z) - tail) / Fc, special.stdtr(tau, z) / Fc)
        return np.where(y <= 0, 0.0, np.clip(F, 0.0, 1.0))

    def _quantile(self, p, theta):
        mu, sigma, nu, tau = (theta[..., i] for i in range(4))
        c, tail, _ = self._trunc(sigma, nu, tau)
        Fc = 1.0 - tail
        za = np.where(nu > 0, special.stdtrit(tau, 1.0 - (1.0 - p) * Fc), special.stdtrit(tau, p * Fc))
        za = np.where(nu == 0, special.stdtrit(tau, p), za)
        nu_s = np.where(nu == 0, 1.0, nu)
        with np.errstate(invalid="ignore", divide="ignore"):
            q = mu * np.exp(np.log1p(sigma * nu_s * za) / nu_s)
        return np.where(nu == 0, mu * np.exp(sigma * za), q)

    def _offset(self, y):
        ly = np.log(y)
        med = float(np.exp(np.median(ly)))
        sd = float(np.std(ly))
        start = [med, max(sd, 1e-3), 0.5, 10.0]
        return self._mle(y, start)


class Normal(Family):
    """Gaussian with identity-linked mean and log-linked standard deviation.

    Not a positive family; kept for test oracles and real-valued responses.
    """

    name = "normal"
    param_names = ("mu", "sigma")
    link_names = ("identity", "log")
    support = "real"

    def _loglik(self, y, theta):
        mu, sigma = theta[..., 0], theta[..., 1]
        return -0.5 * ((y - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * LOG_2PI

    def _dloglik(self, y, theta, k):
        mu, sigma = theta[..., 0], theta[..., 1]
        if k == 0:
            return (y - mu) / sigma**2
        return (((y - mu) / sigma) ** 2 - 1.0) / sigma

    def _cdf(self, y, theta):
        return special.ndtr((y - theta[..., 0]) / theta[..., 1])

    def _quantile(self, p, theta):
        return theta[..., 0] + theta[..., 1] * special.ndtri(p)

    def _offset(self, y):
        return np.array([float(np.mean(y)), max(float(np.std(y)), 1e-8)])


FAMILIES: dict[str, Family] = {
    f.name: f for f in (Bernoulli(), Gamma(), GeneralizedGamma(), BoxCoxT(), Normal())
}


def get_family(name: str | Family) -> Family:
    """Look up a family by registry name."""
    if isinstance(name, Family):
        return name
    try:
        return FAMILIES[name]
    except KeyError:
        known = ", ".join(sorted(FAMILIES))
        raise ValueError(f"unknown family {name!r}; known families: {known}") from None


# ---------------------------------------------------------------------------
# zero-adjusted wrapper
# ---------------------------------------------------------------------------


def _check_xi0(xi0):
    xi0 = np.asarray(xi0, dtype=float)
    if np.any((xi0 < 0) | (xi0 > 1)) or not np.all(np.isfinite(xi0)):
        raise DomainError("xi0 must lie in [0, 1]")
    return xi0


def _positive(family) -> Family:
    family = get_family(family)
    if family.support != "positive":
        raise DomainError(f"{family.name} is not a positive continuous family")
    return family


def zadj_logpdf(y, xi0, family, theta):
    """Log density of the zero-adjusted mixture.

    Point mass ``xi0`` at zero and ``(1 - xi0) * f_W`` on ``(0, inf)``.
    """
    family = _positive(family)
    xi0 = _check_xi0(xi0)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise DomainError("zero-adjusted responses must be finite and >= 0")
    theta = family.check_theta(theta)
    y, xi0 = np.broadcast_arrays(y, xi0)
    out = np.empty(y.shape, dtype=float)
    zero = y == 0
    with np.errstate(divide="ignore"):
        out[zero] = np.log(xi0[zero])
        pos = ~zero
        if np.any(pos):
            th = np.broadcast_to(theta, y.shape + (family.K,))[pos]
            out[pos] = np.log1p(-xi0[pos]) + family._loglik(y[pos], th)
    return out


def zadj_pdf(y, xi0, family, theta):
    return np.exp(zadj_logpdf(y, xi0, family, theta))


def zadj_cdf(y, xi0, family, theta):
    family = _positive(family)
    xi0 = _check_xi0(xi0)
    y = np.asarray(y, dtype=float)
    Fw = family.cdf(np.maximum(y, 0.0), theta)
    return np.where(y < 0, 0.0, xi0 + (1.0 - xi0) * np.where(y > 0, Fw, 0.0))


def zadj_quantile(p, xi0, family, theta):
    """Generalised inverse of :func:`zadj_cdf`; returns 0 whenever ``p <= xi0``."""
    family = _positive(family)
    xi0 = _check_xi0(xi0)
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("quantile levels must lie in (0, 1)")
    p, xi0 = np.broadcast_arrays(p, xi0)
    theta = family.check_theta(theta)
    th = np.broadcast_to(theta, p.shape + (family.K,))
    out = np.zeros(p.shape, dtype=float)
    pos = p > xi0
    if np.any(pos):
        pw = (p[pos] - xi0[pos]) / (1.0 - xi0[pos])
        pw = np.clip(pw, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
        out[pos] = family._quantile(pw, th[pos])
    return out


def exceedance_probability(xi0, family, theta, t):
    """``P(Y >= t) = (1 - xi0) * (1 - F_W(t))`` for a threshold ``t > 0``."""
    family = _positive(family)
    xi0 = _check_xi0(xi0)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("exceedance threshold must be > 0")
    return (1.0 - xi0) * (1.0 - family.cdf(t, theta))
