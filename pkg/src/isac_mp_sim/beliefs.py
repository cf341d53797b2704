"""Belief algebra: real Gaussian, complex Gaussian, and von Mises records
with fusion, division, and moment matching.

Von Mises beliefs live on circular phase variables; their natural
parameter kappa * exp(j mu) makes products and extrinsic divisions plain
complex additions. Conversions between a circular variable and a physical
quantity assume a locally linear map x = scale * physical + offset.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import i0e, i1e, ive

log = logging.getLogger(__name__)

KAPPA_MIN = 1e-3  # concentration below which a circular belief is uninformative
KAPPA_MAX = 1e18  # cap keeping Laplace variances finite


class DiffuseBeliefError(ValueError):
    """Belief too diffuse for the requested deterministic conversion."""


def wrap_angle(x):
    """Wrap to [-pi, pi)."""
    return np.mod(np.asarray(x) + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray
    log_weight: float = 0.0  # mixture support hook, unused by the estimator

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("cov shape must match mean")
        finite = np.all(np.isfinite(cov))
        if finite and not np.allclose(cov, cov.T, atol=1e-10 * max(1.0, np.abs(cov).max())):
            raise ValueError("cov must be symmetric")

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_proper(self) -> bool:
        return bool(np.all(np.isfinite(self.cov)))

    @classmethod
    def diffuse(cls, dim: int) -> "GaussianBelief":
        return cls(np.zeros(dim), np.diag(np.full(dim, np.inf)))


def _precision(cov: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(cov)):
        return np.zeros_like(cov)
    try:
        return np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-9 * np.trace(cov) / cov.shape[0]
        log.warning("singular covariance, regularizing with jitter %.3g", jitter)
        return np.linalg.inv(cov + jitter * np.eye(cov.shape[0]))


def gaussian_fuse(beliefs: list[GaussianBelief]) -> GaussianBelief:
    """Precision-weighted product of Gaussian densities.

    Components with non-finite covariance contribute zero precision; if all
    are diffuse the result is diffuse.
    """
    if not beliefs:
        raise ValueError("nothing to fuse")
    dim = beliefs[0].dim
    lam = np.zeros((dim, dim))
    eta = np.zeros(dim)
    for b in beliefs:
        if b.dim != dim:
            raise ValueError("dimension mismatch in fusion")
        p = _precision(b.cov)
        lam += p
        eta += p @ b.mean
    if np.allclose(lam, 0.0):
        return GaussianBelief.diffuse(dim)
    try:
        cov = np.linalg.inv(lam)
    except np.linalg.LinAlgError:
        jitter = 1e-9 * max(np.trace(lam), 1.0) / dim
        log.warning("singular fused precision, jitter %.3g", jitter)
        cov = np.linalg.inv(lam + jitter * np.eye(dim))
    cov = 0.5 * (cov + cov.T)
    return GaussianBelief(cov @ eta, cov)


def gaussian_divide(a: GaussianBelief, b: GaussianBelief) -> GaussianBelief:
    """Extrinsic Gaussian a / b in natural parameters; may come out diffuse."""
    la, lb = _precision(a.cov), _precision(b.cov)
    lam = la - lb
    eta = la @ a.mean - lb @ b.mean
    w, v = np.linalg.eigh(0.5 * (lam + lam.T))
    if np.any(w <= 0):
        return GaussianBelief.diffuse(a.dim)
    cov = (v / w) @ v.T
    return GaussianBelief(cov @ eta, 0.5 * (cov + cov.T))


@dataclass(frozen=True)
class ComplexGaussianBelief:
    mean: complex
    var: float
    log_weight: float = 0.0

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError("var must be positive")

    def is_proper(self) -> bool:
        return np.isfinite(self.var)

    @classmethod
    def diffuse(cls) -> "ComplexGaussianBelief":
        return cls(0.0 + 0.0j, np.inf)


def complex_gaussian_fuse(beliefs: list[ComplexGaussianBelief]) -> ComplexGaussianBelief:
    if not beliefs:
        raise ValueError("nothing to fuse")
    lam = 0.0
    eta = 0.0 + 0.0j
    for b in beliefs:
        p = 0.0 if not np.isfinite(b.var) else 1.0 / b.var
        lam += p
        eta += p * b.mean
    if lam == 0.0:
        return ComplexGaussianBelief.diffuse()
    return ComplexGaussianBelief(eta / lam, 1.0 / lam)


@dataclass(frozen=True)
class VonMisesBelief:
    mean_direction: float  # [rad] in [-pi, pi)
    concentration: float  # kappa >= 0; 0 means circular-uniform
    log_weight: float = 0.0

    def __post_init__(self):
        if self.concentration < 0:
            raise ValueError("concentration must be >= 0")
        object.__setattr__(self, "mean_direction", float(wrap_angle(self.mean_direction)))
        object.__setattr__(self, "concentration",
                           float(min(self.concentration, KAPPA_MAX)))

    @property
    def natural(self) -> complex:
        return self.concentration * np.exp(1j * self.mean_direction)

    def is_informative(self, kappa_min: float = KAPPA_MIN) -> bool:
        return self.concentration > kappa_min

    @classmethod
    def uniform(cls) -> "VonMisesBelief":
        return cls(0.0, 0.0)

    @classmethod
    def from_natural(cls, z: complex) -> "VonMisesBelief":
        return cls(float(np.angle(z)), float(abs(z)))

    def log_density(self, x) -> np.ndarray:
        kappa = self.concentration
        return kappa * np.cos(np.asarray(x) - self.mean_direction) \
            - np.log(2.0 * np.pi) - _log_i0(kappa)


def _log_i0(kappa: float) -> float:
    # i0e is exp-scaled, stable for any kappa
    return float(np.log(i0e(kappa)) + kappa)


def vm_multiply(a: VonMisesBelief, b: VonMisesBelief) -> VonMisesBelief:
    return VonMisesBelief.from_natural(a.natural + b.natural)


def vm_divide(a: VonMisesBelief, b: VonMisesBelief) -> VonMisesBelief:
    return VonMisesBelief.from_natural(a.natural - b.natural)


def bessel_ratio(kappa: float) -> float:
    """I1(kappa) / I0(kappa); strictly increasing from 0 towards 1."""
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    return float(i1e(kappa) / i0e(kappa))


_IVE_SAFE_KAPPA = 1e8  # above this scipy.special.ive(n, .) loses accuracy / NaNs


@lru_cache(maxsize=8192)
def _bessel_ratio_orders_cached(n_max: int, kappa: float) -> tuple:
    orders = np.arange(n_max + 1)
    if kappa <= _IVE_SAFE_KAPPA:
        return tuple(ive(orders, kappa) / i0e(kappa))
    return tuple(np.maximum(1.0 - orders.astype(float) ** 2 / (2.0 * kappa), 0.0))


def bessel_ratio_orders(n_max: int, kappa: float) -> np.ndarray:
    """[I_0, I_1, ..., I_n_max](kappa) / I_0(kappa).

    Exp-scaled Bessels below _IVE_SAFE_KAPPA, first-order uniform
    asymptotics 1 - n^2/(2 kappa) above (error O(n^4 / kappa^2)).
    """
    return np.array(_bessel_ratio_orders_cached(n_max, float(kappa)))


def vm_circular_moment(b: VonMisesBelief, n: int = 1) -> complex:
    """E[exp(j n x)] = (I_n / I_0)(kappa) * exp(j n mu)."""
    kappa = b.concentration
    if kappa <= _IVE_SAFE_KAPPA:
        r = float(ive(abs(n), kappa) / i0e(kappa))
    else:
        r = max(1.0 - n * n / (2.0 * kappa), 0.0)
    return r * np.exp(1j * n * b.mean_direction)


def vm_to_gaussian(b: VonMisesBelief, scale: float, offset: float = 0.0,
                   reference: float = 0.0, kappa_min: float = KAPPA_MIN) -> GaussianBelief:
    """Laplace-match a circular belief back to the physical axis.

    The circular variable is x = scale * physical + offset; the mean is
    unwrapped to the 2 pi branch nearest ``reference`` (physical units).
    """
    if b.concentration <= kappa_min:
        raise DiffuseBeliefError("concentration below threshold")
    if scale == 0:
        raise ValueError("scale must be nonzero")
    target = scale * reference + offset
    mu = b.mean_direction + 2.0 * np.pi * np.round((target - b.mean_direction) / (2.0 * np.pi))
    mean = (mu - offset) / scale
    var = 1.0 / (b.concentration * scale ** 2)
    return GaussianBelief(np.array([mean]), np.array([[var]]))


def gaussian_to_vm(mean: float, var: float, scale: float, offset: float = 0.0) -> VonMisesBelief:
    """Moment-match a physical Gaussian onto the circular axis x = scale*p + offset."""
    if var <= 0 or not np.isfinite(var):
        return VonMisesBelief.uniform()
    kappa = min(1.0 / (scale ** 2 * var), KAPPA_MAX)
    return VonMisesBelief(float(wrap_angle(scale * mean + offset)), kappa)
