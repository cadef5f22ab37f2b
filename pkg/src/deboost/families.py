"""Loss functions, negative gradients, links, and offsets for the supported
regression settings.

A family bundles everything the boosting engine needs from the outcome model:
the pointwise loss (a negative log-likelihood, kept with its constants so
reported risks are comparable to likelihood values), its negative gradient
with respect to each additive predictor, per-parameter link functions, and
the constant offset that minimizes the empirical risk.

Empirical risk is a *sum* of pointwise losses over observations (optionally
weighted); out-of-sample comparisons divide by the number of observations
where fold sizes differ.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize
from scipy.special import digamma, expit, gammaln

from .data import DataError

LOG_2PI = float(np.log(2.0 * np.pi))

_INVERSE_LINKS = {
    "identity": lambda eta: eta,
    "logit": expit,
    "log": np.exp,
}


def inverse_link(name: str, eta: np.ndarray) -> np.ndarray:
    """Map a predictor to the response scale of its distribution parameter."""
    return _INVERSE_LINKS[name](np.asarray(eta, dtype=float))


class Family:
    """Base class; concrete families define loss/gradient/offset in eta space.

    ``eta`` arguments are arrays of shape (n_params, n); a plain length-n
    vector is accepted for single-parameter families.
    """

    name: str = ""
    n_params: int = 1
    links: tuple[str, ...] = ("identity",)
    param_names: tuple[str, ...] = ("mu",)

    def _eta(self, eta, n: int) -> np.ndarray:
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        if eta.shape != (self.n_params, n):
            raise ValueError(
                f"eta must have shape ({self.n_params}, {n}), got {eta.shape}"
            )
        return eta

    def check_response(self, y: np.ndarray) -> None:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            idx = int(np.flatnonzero(~np.isfinite(y))[0])
            raise DataError(f"non-finite response at index {idx}")

    def loss(self, y, eta) -> np.ndarray:
        raise NotImplementedError

    def negative_gradient(self, y, eta, param: int) -> np.ndarray:
        raise NotImplementedError

    def offset(self, y) -> np.ndarray:
        raise NotImplementedError

    def risk(self, y, eta, weights=None) -> float:
        """Weighted sum of pointwise losses."""
        losses = self.loss(y, eta)
        if weights is None:
            return float(np.sum(losses))
        weights = np.asarray(weights, dtype=float)
        if weights.shape != losses.shape:
            raise ValueError("weights length does not match the response")
        if np.any(weights < 0) or not np.any(weights > 0):
            raise ValueError("weights must be nonnegative and not all zero")
        return float(np.sum(weights * losses))

    def response(self, eta) -> np.ndarray:
        """Apply the inverse links row-wise: predictor scale -> parameter scale."""
        eta = self._eta(eta, np.atleast_2d(eta).shape[-1])
        return np.stack(
            [inverse_link(link, eta[k]) for k, link in enumerate(self.links)]
        )

    def _check_param(self, param: int) -> None:
        if not 0 <= param < self.n_params:
            raise ValueError(f"parameter index {param} out of range [0, {self.n_params})")


class L2(Family):
    """Squared error loss, 1/2 (y - eta)^2, for mean regression."""

    name = "l2"
    n_params = 1
    links = ("identity",)
    param_names = ("mu",)

    def loss(self, y, eta):
        y = np.asarray(y, dtype=float)
        eta = self._eta(eta, y.size)
        return 0.5 * (y - eta[0]) ** 2

    def negative_gradient(self, y, eta, param=0):
        self._check_param(param)
        y = np.asarray(y, dtype=float)
        eta = self._eta(eta, y.size)
        return y - eta[0]

    def offset(self, y):
        y = np.asarray(y, dtype=float)
        self.check_response(y)
        return np.array([np.mean(y)])


class Logistic(Family):
    """Bernoulli negative log-likelihood on the log-odds scale, y in {0, 1}."""

    name = "logistic"
    n_params = 1
    links = ("logit",)
    param_names = ("mu",)

    def check_response(self, y):
        super().check_response(y)
        y = np.asarray(y, dtype=float)
        bad = ~np.isin(y, (0.0, 1.0))
        if np.any(bad):
            idx = int(np.flatnonzero(bad)[0])
            raise DataError(f"binary response must be 0 or 1; got {y[idx]} at index {idx}")

    def loss(self, y, eta):
        y = np.asarray(y, dtype=float)
        eta = self._eta(eta, y.size)
        return np.logaddexp(0.0, eta[0]) - y * eta[0]

    def negative_gradient(self, y, eta, param=0):
        self._check_param(param)
        y = np.asarray(y, dtype=float)
        eta = self._eta(eta, y.size)
        return y - expit(eta[0])

    def offset(self, y):
        y = np.asarray(y, dtype=float)
        self.check_response(y)
        pbar = float(np.mean(y))
        if pbar in (0.0, 1.0):
            raise DataError("binary response is single-class; offset is undefined")
        return np.array([np.log(pbar / (1.0 - pbar))])


class GaussianLocationScale(Family):
    """Gaussian with modeled mean (identity link) and scale (log link).

    Predictors: eta[0] = mu, eta[1] = log(sigma).
    """

    name = "gaussian-ls"
    n_params = 2
    links = ("identity", "log")
    param_names = ("mu", "sigma")

    def loss(self, y, eta):
        y = np.asarray(y, dtype=float)
        eta = self._eta(eta, y.size)
        resid = y - eta[0]
        return 0.5 * LOG_2PI + eta[1] + 0.5 * resid**2 * np.exp(-2.0 * eta[1])

    def negative_gradient(self, y, eta, param):
        self._check_param(param)
        y = np.asarray(y, dtype=float)
        eta = self._eta(eta, y.size)
        resid = y - eta[0]
        inv_var = np.exp(-2.0 * eta[1])
        if param == 0:
            return resid * inv_var
        return resid**2 * inv_var - 1.0

    def offset(self, y):
        y = np.asarray(y, dtype=float)
        self.check_response(y)
        sd = float(np.std(y))  # ML convention (divisor n): the risk minimizer
        if sd <= 0.0:
            raise DataError("constant response; scale offset is undefined")
        return np.array([np.mean(y), np.log(sd)])


class BetaLocationPrecision(Family):
    """Beta distribution with mean mu (logit link) and precision phi (log link).

    Density Gamma(phi) / (Gamma(mu*phi) * Gamma((1-mu)*phi))
    * y^(mu*phi - 1) * (1-y)^((1-mu)*phi - 1) for y in (0, 1).
    """

    name = "beta"
    n_params = 2
    links = ("logit", "log")
    param_names = ("mu", "phi")

    def check_response(self, y):
        super().check_response(y)
        y = np.asarray(y, dtype=float)
        bad = (y <= 0.0) | (y >= 1.0)
        if np.any(bad):
            idx = int(np.flatnonzero(bad)[0])
            raise DataError(
                f"beta response must lie strictly in (0, 1); got {y[idx]} at index {idx}"
            )

    def loss(self, y, eta):
        y = np.asarray(y, dtype=float)
        eta = self._eta(eta, y.size)
        mu = expit(eta[0])
        phi = np.exp(eta[1])
        a = mu * phi
        b = (1.0 - mu) * phi
        return (
            gammaln(a)
            + gammaln(b)
            - gammaln(phi)
            - (a - 1.0) * np.log(y)
            - (b - 1.0) * np.log1p(-y)
        )

    def negative_gradient(self, y, eta, param):
        self._check_param(param)
        y = np.asarray(y, dtype=float)
        eta = self._eta(eta, y.size)
        mu = expit(eta[0])
        phi = np.exp(eta[1])
        a = mu * phi
        b = (1.0 - mu) * phi
        if param == 0:
            # chain rule through the logit link: d(mu)/d(eta1) = mu (1 - mu)
            return mu * (1.0 - mu) * phi * (
                np.log(y) - np.log1p(-y) - digamma(a) + digamma(b)
            )
        # chain rule through the log link: d(phi)/d(eta2) = phi
        return phi * (
            digamma(phi)
            - mu * digamma(a)
            - (1.0 - mu) * digamma(b)
            + mu * np.log(y)
            + (1.0 - mu) * np.log1p(-y)
        )

    def offset(self, y):
        y = np.asarray(y, dtype=float)
        self.check_response(y)
        mu = float(np.mean(y))
        var = float(np.var(y))
        if var <= 0.0:
            raise DataError("constant response; precision offset is undefined")
        # method-of-moments start: Var = mu (1 - mu) / (1 + phi)
        phi = mu * (1.0 - mu) / var - 1.0
        phi = max(phi, 1e-3)
        start = np.array([np.log(mu / (1.0 - mu)), np.log(phi)])

        # polish to the actual risk minimizer; moments alone are not optimal
        def objective(theta):
            eta = np.repeat(theta[:, None], y.size, axis=1)
            value = self.risk(y, eta)
            grad = np.array(
                [-np.sum(self.negative_gradient(y, eta, k)) for k in range(2)]
            )
            return value, grad

        result = minimize(objective, start, jac=True, method="BFGS")
        return np.asarray(result.x, dtype=float)


_FAMILIES = {
    cls.name: cls for cls in (L2, Logistic, GaussianLocationScale, BetaLocationPrecision)
}


def get_family(name: str) -> Family:
    """Look up a family instance by its registry name."""
    try:
        return _FAMILIES[name]()
    except KeyError:
        raise DataError(
            f"unknown family {name!r}; choose from {sorted(_FAMILIES)}"
        ) from None
