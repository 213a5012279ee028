"""Exponential-family data models and link functions.

The data layer assumes each observation is drawn from one member of the
exponential family, with its conditional mean tied to a latent Gaussian
field through an invertible link.  Mean-scale links (identity, inverse,
log, sqrt) map the latent value directly to the mean; probability links
(logit, probit, cloglog) map it to a success probability which is then
tied to the mean through the size parameter of the binomial or
negative-binomial model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, ndtr, ndtri

__all__ = [
    "Family",
    "Link",
    "FAMILIES",
    "LINKS",
    "PROBABILITY_LINKS",
    "validate_combination",
    "mean_from_latent",
    "mean_derivs",
    "log_density",
    "log_density_d1",
    "log_density_d2",
    "sample_family",
]

FAMILIES = (
    "gaussian",
    "poisson",
    "gamma",
    "inverse_gaussian",
    "negative_binomial",
    "binomial",
)
LINKS = ("identity", "inverse", "log", "sqrt", "logit", "probit", "cloglog")
PROBABILITY_LINKS = frozenset({"logit", "probit", "cloglog"})

# Families whose dispersion is structurally 1.
_UNIT_DISPERSION = frozenset({"poisson", "binomial", "negative_binomial"})
_SIZE_FAMILIES = frozenset({"binomial", "negative_binomial"})

_PI_EPS = 1e-12


class FamilyError(ValueError):
    """Invalid family/link configuration or out-of-domain argument."""


@dataclass(frozen=True)
class Family:
    """An exponential-family response distribution, identified by name.

    Parameters
    ----------
    kind : str
        One of ``FAMILIES``.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise FamilyError(f"unknown family {self.kind!r}; choose from {FAMILIES}")

    @property
    def has_size(self) -> bool:
        return self.kind in _SIZE_FAMILIES

    @property
    def psi_fixed(self) -> bool:
        """True when the dispersion is structurally 1 (count families)."""
        return self.kind in _UNIT_DISPERSION


@dataclass(frozen=True)
class Link:
    """An invertible link function, identified by name."""

    kind: str

    def __post_init__(self):
        if self.kind not in LINKS:
            raise FamilyError(f"unknown link {self.kind!r}; choose from {LINKS}")

    @property
    def is_probability(self) -> bool:
        return self.kind in PROBABILITY_LINKS

    def g(self, mu):
        """Forward map, mean (or probability) scale to latent scale."""
        mu = np.asarray(mu, dtype=float)
        k = self.kind
        if k == "identity":
            return mu
        if k == "inverse":
            return 1.0 / mu
        if k == "log":
            return np.log(mu)
        if k == "sqrt":
            return np.sqrt(mu)
        if k == "logit":
            return np.log(mu) - np.log1p(-mu)
        if k == "probit":
            return ndtri(mu)
        # cloglog
        return np.log(-np.log1p(-mu))

    def ginv(self, y):
        """Inverse map, latent scale back to mean (or probability) scale."""
        y = np.asarray(y, dtype=float)
        k = self.kind
        if k == "identity":
            return y
        if k == "inverse":
            return 1.0 / y
        if k == "log":
            return np.exp(y)
        if k == "sqrt":
            return y * y
        if k == "logit":
            return expit(y)
        if k == "probit":
            return ndtr(y)
        # cloglog: 1 - exp(-exp(y))
        return -np.expm1(-np.exp(y))

    def ginv_d1(self, y):
        """First derivative of ``ginv``."""
        y = np.asarray(y, dtype=float)
        k = self.kind
        if k == "identity":
            return np.ones_like(y)
        if k == "inverse":
            return -1.0 / (y * y)
        if k == "log":
            return np.exp(y)
        if k == "sqrt":
            return 2.0 * y
        if k == "logit":
            p = expit(y)
            return p * (1.0 - p)
        if k == "probit":
            return np.exp(-0.5 * y * y) / np.sqrt(2.0 * np.pi)
        # cloglog
        return np.exp(y - np.exp(y))

    def ginv_d2(self, y):
        """Second derivative of ``ginv``."""
        y = np.asarray(y, dtype=float)
        k = self.kind
        if k == "identity":
            return np.zeros_like(y)
        if k == "inverse":
            return 2.0 / (y * y * y)
        if k == "log":
            return np.exp(y)
        if k == "sqrt":
            return np.full_like(y, 2.0)
        if k == "logit":
            p = expit(y)
            return p * (1.0 - p) * (1.0 - 2.0 * p)
        if k == "probit":
            return -y * np.exp(-0.5 * y * y) / np.sqrt(2.0 * np.pi)
        # cloglog
        return np.exp(y - np.exp(y)) * (1.0 - np.exp(y))


def validate_combination(family: Family, link: Link) -> str:
    """Classify a family/link pair as ``"ok"``, ``"warn"``, or ``"forbidden"``.

    Supported pairs fit cleanly; warned pairs are allowed but can produce
    nonsensical results because the implied mean range does not match the
    family's support; forbidden pairs are rejected at configuration time.
    """
    f, l = family.kind, link.kind
    ok = {
        "gaussian": {"identity", "inverse"},
        "poisson": {"log", "sqrt"},
        "gamma": {"log", "sqrt"},
        "inverse_gaussian": {"log", "sqrt"},
        "negative_binomial": {"log", "sqrt", "logit", "probit", "cloglog"},
        "binomial": {"logit", "probit", "cloglog"},
    }
    warn = {
        "gaussian": {"log", "sqrt"},
        "poisson": {"identity", "inverse"},
        "gamma": {"identity", "inverse"},
        "inverse_gaussian": {"identity", "inverse"},
        "negative_binomial": set(),
        "binomial": set(),
    }
    if l in ok[f]:
        return "ok"
    if l in warn[f]:
        return "warn"
    return "forbidden"


def _require_size(family: Family, k):
    if k is None:
        raise FamilyError(
            f"family {family.kind!r} requires size parameters, none supplied"
        )
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise FamilyError("size parameters must be nonnegative")
    return k


def mean_from_latent(y, link: Link, family: Family, k=None):
    """Map latent values to the mean (and probability) scale.

    For size families the per-location size parameter ``k`` enters: the
    binomial mean is ``k * pi`` and the negative-binomial mean is
    ``k * (1 - pi) / pi`` under a probability link, or ``k * ginv(y)``
    under a log/sqrt link.  For other families the mean is ``ginv(y)``.

    Returns
    -------
    (mu, pi)
        ``pi`` is None for families without a probability process.
    """
    y = np.asarray(y, dtype=float)
    if family.kind == "binomial":
        k = _require_size(family, k)
        pi = np.clip(link.ginv(y), _PI_EPS, 1.0 - _PI_EPS)
        return k * pi, pi
    if family.kind == "negative_binomial":
        if link.is_probability:
            k = _require_size(family, k)
            pi = np.clip(link.ginv(y), _PI_EPS, 1.0 - _PI_EPS)
            return k * (1.0 - pi) / pi, pi
        # mean links: mu = k * ginv(y); pi = k/(mu+k) = 1/(1+ginv(y)), no k needed
        m = link.ginv(y)
        pi = 1.0 / (1.0 + m)
        if k is None:
            return None, pi
        k = _require_size(family, k)
        return k * m, pi
    return link.ginv(y), None


def mean_derivs(y, link: Link, family: Family, k=None):
    """Mean map plus its first two derivatives in the latent value.

    Used by the inner Newton solver; returns ``(mu, dmu, d2mu)`` where the
    derivatives are taken elementwise with respect to ``y``.
    """
    y = np.asarray(y, dtype=float)
    if family.kind == "binomial":
        k = _require_size(family, k)
        pi = link.ginv(y)
        return k * pi, k * link.ginv_d1(y), k * link.ginv_d2(y)
    if family.kind == "negative_binomial":
        k = _require_size(family, k)
        if link.is_probability:
            pi = np.clip(link.ginv(y), _PI_EPS, 1.0 - _PI_EPS)
            d1 = link.ginv_d1(y)
            d2 = link.ginv_d2(y)
            mu = k * (1.0 - pi) / pi
            dmu = -k * d1 / pi**2
            d2mu = k * (2.0 * d1**2 / pi**3 - d2 / pi**2)
            return mu, dmu, d2mu
        return k * link.ginv(y), k * link.ginv_d1(y), k * link.ginv_d2(y)
    return link.ginv(y), link.ginv_d1(y), link.ginv_d2(y)


def _check_support(family: Family, z, k):
    """Raise when data fall outside the family's support."""
    kind = family.kind
    z = np.asarray(z, dtype=float)
    if kind in ("poisson", "negative_binomial"):
        if np.any(z < 0) or np.any(z != np.floor(z)):
            raise FamilyError(f"{kind} data must be nonnegative integers")
    elif kind == "binomial":
        if np.any(z < 0) or np.any(z != np.floor(z)):
            raise FamilyError("binomial data must be nonnegative integers")
        if k is not None and np.any(z > np.asarray(k, dtype=float)):
            raise FamilyError("binomial data exceed their size parameters")
    elif kind in ("gamma", "inverse_gaussian"):
        if np.any(z <= 0):
            raise FamilyError(f"{kind} data must be strictly positive")


def log_density(family: Family, z, mu, psi: float = 1.0, k=None):
    """Elementwise log-density (or log-PMF) of the data given the mean.

    Size families convert ``(mu, k)`` to the success probability
    internally.  Returns ``-inf`` where the mean falls outside the
    family's mean domain; raises ``FamilyError`` when the data fall
    outside the support.
    """
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    _check_support(family, z, k)
    kind = family.kind
    with np.errstate(all="ignore"):
        if kind == "gaussian":
            out = -0.5 * np.log(2.0 * np.pi * psi) - 0.5 * (z - mu) ** 2 / psi
        elif kind == "poisson":
            out = np.where(
                mu > 0, z * np.log(np.maximum(mu, 1e-300)) - mu - gammaln(z + 1), -np.inf
            )
            # 0*log(0) = 0: z=0, mu=0 has density 1
            out = np.where((mu == 0) & (z == 0), 0.0, out)
        elif kind == "gamma":
            a = 1.0 / psi
            out = np.where(
                mu > 0,
                a * np.log(a)
                - a * np.log(np.maximum(mu, 1e-300))
                + (a - 1.0) * np.log(z)
                - a * z / np.maximum(mu, 1e-300)
                - gammaln(a),
                -np.inf,
            )
        elif kind == "inverse_gaussian":
            out = np.where(
                mu > 0,
                -0.5 * np.log(2.0 * np.pi * psi * z**3)
                - 0.5 * (z - mu) ** 2 / (psi * np.maximum(mu, 1e-300) ** 2 * z),
                -np.inf,
            )
        elif kind == "binomial":
            k = _require_size(family, k)
            k = np.broadcast_to(k, z.shape) if k.ndim else np.full_like(z, float(k))
            pi = np.clip(mu / np.maximum(k, 1e-300), _PI_EPS, 1.0 - _PI_EPS)
            out = (
                gammaln(k + 1)
                - gammaln(z + 1)
                - gammaln(k - z + 1)
                + z * np.log(pi)
                + (k - z) * np.log1p(-pi)
            )
            out = np.where((mu >= 0) & (mu <= k), out, -np.inf)
        elif kind == "negative_binomial":
            k = _require_size(family, k)
            pi = np.clip(
                k / np.maximum(mu + k, 1e-300), _PI_EPS, 1.0 - _PI_EPS
            )
            out = (
                gammaln(z + k)
                - gammaln(k)
                - gammaln(z + 1)
                + k * np.log(pi)
                + z * np.log1p(-pi)
            )
            out = np.where(mu > 0, out, np.where((mu == 0) & (z == 0), 0.0, -np.inf))
        else:  # pragma: no cover
            raise FamilyError(kind)
    return out


def log_density_d1(family: Family, z, mu, psi: float = 1.0, k=None):
    """First derivative of the log-density with respect to the mean."""
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    kind = family.kind
    if kind == "gaussian":
        return (z - mu) / psi
    if kind == "poisson":
        return z / mu - 1.0
    if kind == "gamma":
        a = 1.0 / psi
        return a * (z - mu) / mu**2
    if kind == "inverse_gaussian":
        return (z - mu) / (psi * mu**3)
    if kind == "binomial":
        k = np.asarray(_require_size(family, k), dtype=float)
        return z / mu - (k - z) / (k - mu)
    if kind == "negative_binomial":
        k = np.asarray(_require_size(family, k), dtype=float)
        return z / mu - (k + z) / (mu + k)
    raise FamilyError(kind)  # pragma: no cover


def log_density_d2(family: Family, z, mu, psi: float = 1.0, k=None):
    """Second derivative of the log-density with respect to the mean."""
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    kind = family.kind
    if kind == "gaussian":
        return np.full_like(mu, -1.0 / psi)
    if kind == "poisson":
        return -z / mu**2
    if kind == "gamma":
        a = 1.0 / psi
        return a * (mu - 2.0 * z) / mu**3
    if kind == "inverse_gaussian":
        return (2.0 * mu - 3.0 * z) / (psi * mu**4)
    if kind == "binomial":
        k = np.asarray(_require_size(family, k), dtype=float)
        return -z / mu**2 - (k - z) / (k - mu) ** 2
    if kind == "negative_binomial":
        k = np.asarray(_require_size(family, k), dtype=float)
        return -z / mu**2 + (k + z) / (mu + k) ** 2
    raise FamilyError(kind)  # pragma: no cover


def mean_domain_ok(family: Family, mu, k=None) -> bool:
    """True when every mean lies strictly inside the family's mean domain."""
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)):
        return False
    kind = family.kind
    if kind == "gaussian":
        return True
    if kind == "binomial":
        k = np.asarray(k, dtype=float)
        return bool(np.all(mu > 0) and np.all(mu < k))
    return bool(np.all(mu > 0))


def sample_family(rng: np.random.Generator, family: Family, mu, psi: float = 1.0, k=None):
    """Draw one response per mean entry from the family."""
    mu = np.asarray(mu, dtype=float)
    kind = family.kind
    if kind == "gaussian":
        return rng.normal(mu, np.sqrt(psi))
    if kind == "poisson":
        return rng.poisson(mu).astype(float)
    if kind == "gamma":
        a = 1.0 / psi
        return rng.gamma(shape=a, scale=mu / a)
    if kind == "inverse_gaussian":
        return rng.wald(mu, mu**2 / psi)
    if kind == "binomial":
        k = np.broadcast_to(np.asarray(_require_size(family, k)), mu.shape)
        pi = np.clip(mu / np.maximum(k, 1e-300), 0.0, 1.0)
        return rng.binomial(np.rint(k).astype(np.int64), pi).astype(float)
    if kind == "negative_binomial":
        k = np.broadcast_to(np.asarray(_require_size(family, k)), mu.shape)
        pi = np.clip(k / (mu + k), _PI_EPS, 1.0 - _PI_EPS)
        return rng.negative_binomial(np.maximum(k, _PI_EPS), pi).astype(float)
    raise FamilyError(kind)  # pragma: no cover
