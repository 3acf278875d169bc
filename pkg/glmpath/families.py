"""GLM family abstraction: links, variance functions, deviances and initialization.

A :class:`FamilySpec` bundles the six ingredients of a quasi-likelihood GLM family
(link pair and derivative, variance, unit deviance, starting values, domains).
Built-in families are produced by the factory functions below; user-defined families
are ordinary ``FamilySpec`` instances assembled from a :class:`Link` and a
:class:`Variance`.

``parse_family`` maps the command-line spelling (``binomial:probit``,
``negative-binomial:theta=2``, ``tweedie:q=1.5`` ...) to a family.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import expit, logit, ndtr, ndtri, xlogy

from .data import FloatArray
from .exceptions import FamilyError

logger = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps
BINOMIAL_MU_CLAMP = 1e-5
POSITIVE_MU_FLOOR = 1e-10
_SQRT_2PI = np.sqrt(2.0 * np.pi)

ArrayFn = Callable[[FloatArray], FloatArray]


# ------------------------------------------------------------------ #
# Links
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class Link:
    """A strictly monotone, invertible link g with dmu/deta."""

    name: str
    link: ArrayFn
    linkinv: ArrayFn
    mu_eta: ArrayFn
    valid_eta: Callable[[FloatArray], bool] = lambda eta: bool(np.all(np.isfinite(eta)))


def _probit_linkinv(eta: FloatArray) -> FloatArray:
    thresh = -ndtri(EPS)
    return np.asarray(ndtr(np.clip(eta, -thresh, thresh)), dtype=np.float64)


def _probit_mu_eta(eta: FloatArray) -> FloatArray:
    return np.maximum(np.exp(-0.5 * eta**2) / _SQRT_2PI, EPS)


def _logit_mu_eta(eta: FloatArray) -> FloatArray:
    mu = expit(eta)
    return np.maximum(mu * (1.0 - mu), EPS)


LINKS: dict[str, Link] = {
    "identity": Link(
        "identity",
        lambda mu: np.asarray(mu, dtype=np.float64),
        lambda eta: np.asarray(eta, dtype=np.float64),
        lambda eta: np.ones_like(eta, dtype=np.float64),
    ),
    "log": Link("log", np.log, lambda eta: np.maximum(np.exp(eta), EPS), lambda eta: np.maximum(np.exp(eta), EPS)),
    "logit": Link("logit", logit, expit, _logit_mu_eta),
    "probit": Link("probit", ndtri, _probit_linkinv, _probit_mu_eta),
    "inverse": Link(
        "inverse",
        lambda mu: 1.0 / mu,
        lambda eta: 1.0 / eta,
        lambda eta: -1.0 / eta**2,
        valid_eta=lambda eta: bool(np.all(np.isfinite(eta)) and np.all(eta != 0)),
    ),
    "1/mu^2": Link(
        "1/mu^2",
        lambda mu: 1.0 / mu**2,
        lambda eta: 1.0 / np.sqrt(eta),
        lambda eta: -1.0 / (2.0 * eta**1.5),
        valid_eta=lambda eta: bool(np.all(np.isfinite(eta)) and np.all(eta > 0)),
    ),
}


# ------------------------------------------------------------------ #
# Variance functions
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class Variance:
    """Variance function V(mu) with its admissible mean range (lo, hi), open at finite ends."""

    name: str
    fn: ArrayFn
    mu_range: tuple[float, float] = (-np.inf, np.inf)


def negative_binomial_variance(theta: float) -> Variance:
    return Variance(f"mu+mu^2/{theta:g}", lambda mu: mu + mu**2 / theta, (0.0, np.inf))


def power_variance(q: float) -> Variance:
    if q == 0:
        return Variance("constant", lambda mu: np.ones_like(mu, dtype=np.float64))
    return Variance(f"mu^{q:g}", lambda mu: mu**q, (0.0, np.inf))


VARIANCES: dict[str, Variance] = {
    "constant": Variance("constant", lambda mu: np.ones_like(mu, dtype=np.float64)),
    "mu(1-mu)": Variance("mu(1-mu)", lambda mu: mu * (1.0 - mu), (0.0, 1.0)),
    "mu": Variance("mu", lambda mu: np.asarray(mu, dtype=np.float64), (0.0, np.inf)),
    "mu^2": Variance("mu^2", lambda mu: mu**2, (0.0, np.inf)),
    "mu^3": Variance("mu^3", lambda mu: mu**3, (0.0, np.inf)),
}


# ------------------------------------------------------------------ #
# Unit deviances (0 log 0 = 0 via xlogy)
# ------------------------------------------------------------------ #


def _gaussian_dev(y: FloatArray, mu: FloatArray) -> FloatArray:
    return (y - mu) ** 2


def _binomial_dev(y: FloatArray, mu: FloatArray) -> FloatArray:
    return 2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)))


def _poisson_dev(y: FloatArray, mu: FloatArray) -> FloatArray:
    return 2.0 * (xlogy(y, y / mu) - (y - mu))


def _gamma_dev(y: FloatArray, mu: FloatArray) -> FloatArray:
    return 2.0 * (-np.log(y / mu) + (y - mu) / mu)


def _inverse_gaussian_dev(y: FloatArray, mu: FloatArray) -> FloatArray:
    return (y - mu) ** 2 / (mu**2 * y)


def _negative_binomial_dev(theta: float) -> Callable[[FloatArray, FloatArray], FloatArray]:
    def dev(y: FloatArray, mu: FloatArray) -> FloatArray:
        return 2.0 * (xlogy(y, y / mu) - (y + theta) * np.log((y + theta) / (mu + theta)))

    return dev


def _tweedie_dev(q: float) -> Callable[[FloatArray, FloatArray], FloatArray]:
    if q == 0:
        return _gaussian_dev
    if q == 1:
        return _poisson_dev
    if q == 2:
        return _gamma_dev

    def dev(y: FloatArray, mu: FloatArray) -> FloatArray:
        y_term = np.where(y > 0, np.power(np.maximum(y, EPS), 2.0 - q), 0.0) / ((1.0 - q) * (2.0 - q))
        return 2.0 * (y_term - y * mu ** (1.0 - q) / (1.0 - q) + mu ** (2.0 - q) / (2.0 - q))

    return dev


# ------------------------------------------------------------------ #
# Response checks and starting values
# ------------------------------------------------------------------ #


def _any_response(y: FloatArray) -> bool:
    return bool(np.all(np.isfinite(y)))


def _unit_interval_response(y: FloatArray) -> bool:
    return bool(np.all((y >= 0) & (y <= 1)))


def _nonnegative_response(y: FloatArray) -> bool:
    return bool(np.all(np.isfinite(y) & (y >= 0)))


def _positive_response(y: FloatArray) -> bool:
    return bool(np.all(np.isfinite(y) & (y > 0)))


def _init_identity(y: FloatArray, _w: FloatArray) -> FloatArray:
    return y.astype(np.float64, copy=True)


def _init_binomial(y: FloatArray, w: FloatArray) -> FloatArray:
    return (w * y + 0.5) / (w + 1.0)


def _init_shifted(y: FloatArray, _w: FloatArray) -> FloatArray:
    return y + 0.1


# ------------------------------------------------------------------ #
# FamilySpec
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class FamilySpec:
    """A one-parameter GLM family.

    ``params`` holds the family parameters (``theta`` for negative binomial,
    ``q`` for tweedie) and is what gets serialized alongside ``name`` and the
    link name.
    """

    name: str
    link_fn: Link
    variance_fn: Variance
    unit_deviance: Callable[[FloatArray, FloatArray], FloatArray]
    initializer: Callable[[FloatArray, FloatArray], FloatArray] = _init_identity
    valid_response: Callable[[FloatArray], bool] = _any_response
    params: dict[str, float] = field(default_factory=dict)

    @property
    def link_name(self) -> str:
        return self.link_fn.name

    @property
    def is_binomial(self) -> bool:
        return self.variance_fn.name == "mu(1-mu)"

    def clamp_mu(self, mu: FloatArray) -> FloatArray:
        lo, hi = self.variance_fn.mu_range
        if self.is_binomial:
            return np.clip(mu, BINOMIAL_MU_CLAMP, 1.0 - BINOMIAL_MU_CLAMP)
        if lo == 0.0:
            return np.maximum(mu, POSITIVE_MU_FLOOR)
        return mu

    def check_mu(self, mu: FloatArray) -> None:
        lo, hi = self.variance_fn.mu_range
        if not np.all(np.isfinite(mu)) or np.any(mu < lo) or np.any(mu > hi):
            raise FamilyError(f"Mean outside the valid range ({lo}, {hi}) for family {self.name}")

    def check_response(self, y: FloatArray) -> None:
        if not self.valid_response(np.asarray(y, dtype=np.float64)):
            raise FamilyError(f"Response values are invalid for family {self.name}")

    def valid_eta(self, eta: FloatArray) -> bool:
        return self.link_fn.valid_eta(eta)

    def link(self, mu: Any) -> FloatArray:
        """eta = g(mu)."""
        mu = np.asarray(mu, dtype=np.float64)
        self.check_mu(mu)
        return np.asarray(self.link_fn.link(mu), dtype=np.float64)

    def linkinv(self, eta: Any) -> FloatArray:
        """mu = g^{-1}(eta)."""
        return np.asarray(self.link_fn.linkinv(np.asarray(eta, dtype=np.float64)), dtype=np.float64)

    def mu_eta(self, eta: Any) -> FloatArray:
        """dmu/deta evaluated at eta."""
        return np.asarray(self.link_fn.mu_eta(np.asarray(eta, dtype=np.float64)), dtype=np.float64)

    def variance(self, mu: Any) -> FloatArray:
        return np.asarray(self.variance_fn.fn(np.asarray(mu, dtype=np.float64)), dtype=np.float64)

    def irls_working(self, y: Any, eta: Any, obs_w: Any) -> tuple[FloatArray, FloatArray]:
        """Working response z and working weights w at eta."""
        y = np.asarray(y, dtype=np.float64)
        eta = np.asarray(eta, dtype=np.float64)
        mu = self.clamp_mu(self.linkinv(eta))
        d = self.mu_eta(eta)
        z = eta + (y - mu) / d
        w = np.asarray(obs_w, dtype=np.float64) * d**2 / self.variance(mu)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(z))):
            raise FamilyError(f"Non-finite working weights for family {self.name}; check the link and data")
        return z, np.maximum(w, 0.0)

    def deviance(self, y: Any, mu: Any, obs_w: Any = None) -> float:
        """Total deviance sum_i w_i d(y_i, mu_i)."""
        y = np.asarray(y, dtype=np.float64)
        mu = np.asarray(mu, dtype=np.float64)
        w = np.ones_like(y) if obs_w is None else np.asarray(obs_w, dtype=np.float64)
        return float(np.sum(w * self.deviance_residuals(y, mu)))

    def deviance_residuals(self, y: FloatArray, mu: FloatArray) -> FloatArray:
        """Per-observation unit deviances (after clamping mu)."""
        self.check_response(y)
        mu = self.clamp_mu(mu)
        self.check_mu(mu)
        dev = self.unit_deviance(y, mu)
        return np.maximum(dev, 0.0)

    def initialize(self, y: Any, obs_w: Any) -> tuple[FloatArray, float]:
        """Interior starting means and the intercept of the matching null model."""
        y = np.asarray(y, dtype=np.float64)
        w = np.asarray(obs_w, dtype=np.float64)
        if not np.any(w > 0):
            raise FamilyError("All observation weights are zero")
        self.check_response(y)
        mu0 = self.clamp_mu(self.initializer(y, w))
        mean = float(np.sum(w * mu0) / np.sum(w))
        intercept0 = float(self.link(np.array([mean]))[0])
        return mu0, intercept0

    def describe(self) -> dict[str, Any]:
        """Serializable descriptor: name, link and parameters."""
        return {"name": self.name, "link": self.link_name, "params": dict(self.params)}


def _resolve_link(link: str | Link) -> Link:
    if isinstance(link, Link):
        return link
    try:
        return LINKS[link]
    except KeyError:
        raise FamilyError(f"Unknown link '{link}'. Available: {', '.join(LINKS)}") from None


def gaussian(link: str | Link = "identity") -> FamilySpec:
    return FamilySpec("gaussian", _resolve_link(link), VARIANCES["constant"], _gaussian_dev)


def binomial(link: str | Link = "logit") -> FamilySpec:
    return FamilySpec(
        "binomial", _resolve_link(link), VARIANCES["mu(1-mu)"], _binomial_dev, _init_binomial, _unit_interval_response
    )


def quasibinomial(link: str | Link = "logit") -> FamilySpec:
    return FamilySpec(
        "quasibinomial",
        _resolve_link(link),
        VARIANCES["mu(1-mu)"],
        _binomial_dev,
        _init_binomial,
        _unit_interval_response,
    )


def poisson(link: str | Link = "log") -> FamilySpec:
    return FamilySpec("poisson", _resolve_link(link), VARIANCES["mu"], _poisson_dev, _init_shifted, _nonnegative_response)


def quasipoisson(link: str | Link = "log") -> FamilySpec:
    return FamilySpec(
        "quasipoisson", _resolve_link(link), VARIANCES["mu"], _poisson_dev, _init_shifted, _nonnegative_response
    )


def negative_binomial(theta: float, link: str | Link = "log") -> FamilySpec:
    if not theta > 0 or not np.isfinite(theta):
        raise FamilyError(f"Negative binomial theta must be positive and finite, got {theta}")
    return FamilySpec(
        "negative-binomial",
        _resolve_link(link),
        negative_binomial_variance(theta),
        _negative_binomial_dev(theta),
        _init_shifted,
        _nonnegative_response,
        {"theta": float(theta)},
    )


def gamma(link: str | Link = "log") -> FamilySpec:
    return FamilySpec("gamma", _resolve_link(link), VARIANCES["mu^2"], _gamma_dev, _init_shifted, _positive_response)


def inverse_gaussian(link: str | Link = "log") -> FamilySpec:
    return FamilySpec(
        "inverse-gaussian", _resolve_link(link), VARIANCES["mu^3"], _inverse_gaussian_dev, _init_shifted, _positive_response
    )


def tweedie(q: float, link: str | Link = "log") -> FamilySpec:
    if not (q == 0 or 1 <= q <= 3):
        raise FamilyError(f"Tweedie variance power must be 0 or lie in [1, 3], got {q}")
    if q == 0:
        valid, init = _any_response, _init_identity
    elif q < 2:
        valid, init = _nonnegative_response, _init_shifted
    else:
        valid, init = _positive_response, _init_shifted
    return FamilySpec("tweedie", _resolve_link(link), power_variance(q), _tweedie_dev(q), init, valid, {"q": float(q)})


_FACTORIES: dict[str, Callable[..., FamilySpec]] = {
    "gaussian": gaussian,
    "binomial": binomial,
    "quasibinomial": quasibinomial,
    "poisson": poisson,
    "quasipoisson": quasipoisson,
    "negative-binomial": negative_binomial,
    "gamma": gamma,
    "inverse-gaussian": inverse_gaussian,
    "tweedie": tweedie,
}

_PARAM_ALIASES = {"theta": "theta", "θ": "theta", "q": "q"}


def family_from_descriptor(name: str, link: str | None = None, params: dict[str, float] | None = None) -> FamilySpec:
    """Rebuild a built-in family from its name, link name and parameters."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise FamilyError(f"Unknown family '{name}'. Available: {', '.join(_FACTORIES)}") from None
    kwargs: dict[str, Any] = dict(params or {})
    if link is not None:
        kwargs["link"] = link
    try:
        return factory(**kwargs)
    except TypeError as e:
        raise FamilyError(f"Invalid parameters for family '{name}': {e}") from e


def parse_family(text: str) -> FamilySpec:
    """Parse ``name[:token,...]`` where a token is a link name or ``key=value``.

    >>> parse_family("binomial:probit").link_name
    'probit'
    """
    name, _, rest = text.strip().partition(":")
    link: str | None = None
    params: dict[str, float] = {}
    for token in filter(None, (t.strip() for t in rest.split(","))):
        if "=" in token:
            key, _, value = token.partition("=")
            key = key.strip()
            if key == "link":
                link = value.strip()
                continue
            if key not in _PARAM_ALIASES:
                raise FamilyError(f"Unknown family parameter '{key}' in '{text}'")
            try:
                params[_PARAM_ALIASES[key]] = float(value)
            except ValueError:
                raise FamilyError(f"Family parameter '{key}' must be numeric, got '{value}'") from None
        else:
            link = token
    return family_from_descriptor(name.strip().lower(), link, params)


@dataclass(frozen=True)
class CoxFamily:
    """Tag carried by Cox path fits in place of a GLM family."""

    name: str = "cox"

    def describe(self) -> dict[str, Any]:
        return {"name": self.name, "link": None, "params": {}}


COX = CoxFamily()

Family = FamilySpec | CoxFamily
