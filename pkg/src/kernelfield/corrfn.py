"""Stationary isotropic correlation functions with an optional finite-range taper.

Two base correlations are shipped:

* ``matern52`` -- Matern with shape 5/2 and range parameter ``tau_m``:
  ``rho(d) = (1 + k*d + k^2*d^2/3) * exp(-k*d)`` with ``k = sqrt(5)/tau_m``.
* ``gauss2`` -- second-order exponential: ``rho(d) = exp(-(d/scale)^2)``.

A finite range is obtained by multiplying the base with the isotropic
spherical correlation ``(1 + d/(2*tau0)) * (1 - d/tau0)^2`` which is exactly
zero for ``d >= tau0``.  The product is again a valid correlation function,
and evaluating it returns an exact 0.0 beyond the taper range so downstream
sparsity patterns are deterministic.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, UnsupportedOperatorError

SQRT5 = math.sqrt(5.0)

BASE_KINDS = ("matern52", "gauss2")

ArrayLike = Union[float, np.ndarray]


def _check_dist(dist) -> np.ndarray:
    d = np.asarray(dist, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("distance must be finite")
    if np.any(d < 0.0):
        raise ValueError("distance must be non-negative")
    return d


def _check_scale(scale, name) -> float:
    s = float(scale)
    if not math.isfinite(s) or s <= 0.0:
        raise ValueError(f"{name} must be a positive finite real, got {scale!r}")
    return s


def _return_like(dist, value: np.ndarray):
    return float(value) if np.isscalar(dist) or np.ndim(dist) == 0 else value


def eval_matern52(dist: ArrayLike, tau_m: float) -> ArrayLike:
    """Matern-5/2 correlation at Euclidean distance ``dist`` with range ``tau_m``.

    ``rho(d) = (1 + k*d + (k*d)^2/3) * exp(-k*d)``, ``k = sqrt(5)/tau_m``.
    Equals 1 at d = 0 and decays monotonically; scale invariant in d/tau_m.
    """
    d = _check_dist(dist)
    kd = (SQRT5 / _check_scale(tau_m, "tau_m")) * d
    return _return_like(dist, (1.0 + kd + kd * kd / 3.0) * np.exp(-kd))


def eval_gauss2(dist: ArrayLike, scale: float) -> ArrayLike:
    """Second-order exponential correlation ``exp(-(dist/scale)^2)``."""
    d = _check_dist(dist)
    u = d / _check_scale(scale, "scale")
    return _return_like(dist, np.exp(-(u * u)))


def eval_spherical(dist: ArrayLike, tau0: float) -> ArrayLike:
    """Isotropic spherical correlation with finite range ``tau0``.

    ``(1 + d/(2*tau0)) * (1 - d/tau0)^2`` for ``d < tau0``, exactly 0.0 beyond.
    """
    d = _check_dist(dist)
    t0 = _check_scale(tau0, "tau0")
    u = d / t0
    val = np.where(u < 1.0, (1.0 + 0.5 * u) * (1.0 - u) ** 2, 0.0)
    return _return_like(dist, val)


@dataclass(frozen=True)
class CorrelationModel:
    """Base correlation plus optional spherical taper.

    ``base_scale`` is ``tau_m`` for ``matern52`` and the denominator scale for
    ``gauss2``.  ``taper_range`` is the finite range ``tau0``; ``None`` means
    infinite range.  Instances are immutable and all methods are pure, so a
    model can be shared freely across threads.
    """

    base_kind: str
    base_scale: float
    taper_range: Optional[float] = None

    def __post_init__(self):
        if self.base_kind not in BASE_KINDS:
            raise ValueError(f"unknown base_kind {self.base_kind!r}, expected one of {BASE_KINDS}")
        _check_scale(self.base_scale, "base_scale")
        if self.taper_range is not None:
            _check_scale(self.taper_range, "taper_range")

    # -- basic queries -------------------------------------------------

    @property
    def finite_range(self) -> bool:
        return self.taper_range is not None

    @property
    def smooth_origin(self) -> bool:
        """True when the correlation is twice differentiable at lag 0.

        Both shipped bases are; the spherical taper introduces a kink at the
        origin, so tapered models cannot carry derivative observations.
        """
        return self.taper_range is None

    def support_radius(self) -> float:
        """Distance beyond which the correlation is exactly zero (inf if none)."""
        return self.taper_range if self.taper_range is not None else math.inf

    # -- evaluation ----------------------------------------------------

    def base_eval(self, dist: ArrayLike) -> ArrayLike:
        if self.base_kind == "matern52":
            return eval_matern52(dist, self.base_scale)
        return eval_gauss2(dist, self.base_scale)

    def eval(self, dist: ArrayLike) -> ArrayLike:
        """Correlation at Euclidean distance ``dist`` (base times taper)."""
        base = self.base_eval(dist)
        if self.taper_range is None:
            return base
        return _return_like(dist, np.asarray(base) * np.asarray(eval_spherical(dist, self.taper_range)))

    # -- signed-lag derivatives (1D operator support) --------------------

    def deriv1(self, lag: ArrayLike) -> ArrayLike:
        """d/dtau of the correlation as a function of the signed 1D lag.

        Odd function; 0 at lag 0.  For tapered models the true one-sided
        slopes at lag 0 differ, so the symmetric value 0.0 is returned there
        by convention.
        """
        t = np.asarray(lag, dtype=float)
        if not np.all(np.isfinite(t)):
            raise ValueError("lag must be finite")
        a = np.abs(t)
        s = np.sign(t)
        base_d1 = self._base_deriv1_abs(a) * s
        if self.taper_range is None:
            return _return_like(lag, base_d1)
        tap = np.asarray(eval_spherical(a, self.taper_range))
        tap_d1 = self._spherical_deriv1_abs(a) * s
        inside = a < self.taper_range
        val = np.where(inside, base_d1 * tap + np.asarray(self.base_eval(a)) * tap_d1, 0.0)
        return _return_like(lag, val)

    def deriv2(self, lag: ArrayLike) -> ArrayLike:
        """Second derivative of the signed-lag correlation (untapered only)."""
        if self.taper_range is not None:
            raise UnsupportedOperatorError(
                "second derivative undefined at the origin for tapered correlation models"
            )
        t = np.asarray(lag, dtype=float)
        if not np.all(np.isfinite(t)):
            raise ValueError("lag must be finite")
        a = np.abs(t)
        if self.base_kind == "matern52":
            k = SQRT5 / self.base_scale
            val = -(k * k / 3.0) * (1.0 + k * a - (k * a) ** 2) * np.exp(-k * a)
        else:
            s2 = self.base_scale * self.base_scale
            val = (4.0 * a * a / (s2 * s2) - 2.0 / s2) * np.exp(-(a * a) / s2)
        return _return_like(lag, val)

    def _base_deriv1_abs(self, a: np.ndarray) -> np.ndarray:
        # derivative of the base wrt |lag|, evaluated at a >= 0
        if self.base_kind == "matern52":
            k = SQRT5 / self.base_scale
            return -(k * k / 3.0) * (a + k * a * a) * np.exp(-k * a)
        s2 = self.base_scale * self.base_scale
        return -(2.0 * a / s2) * np.exp(-(a * a) / s2)

    def _spherical_deriv1_abs(self, a: np.ndarray) -> np.ndarray:
        t0 = self.taper_range
        u = a / t0
        return np.where(u < 1.0, -(1.5 / t0) * (1.0 - u * u), 0.0)


def spot_check_nonneg_definite(
    model, trials: int, n: int, rng_seed: int, dim: int = 2
) -> bool:
    """Empirical non-negative-definiteness check.

    Draws ``n`` uniform locations in the unit box for each of ``trials``
    seeded trials, forms the n-by-n correlation matrix and returns True iff
    every minimum eigenvalue is >= -1e-8.  ``model`` may be a
    ``CorrelationModel`` or any callable mapping distance to correlation.
    """
    if trials < 1 or n < 1:
        raise ValueError("trials and n must be >= 1")
    fn: Callable = model.eval if isinstance(model, CorrelationModel) else model
    rng = np.random.default_rng(rng_seed)
    for _ in range(trials):
        pts = rng.random((n, dim))
        mat = np.asarray(fn(cdist(pts, pts)))
        if np.linalg.eigvalsh(mat).min() < -1e-8:
            return False
    return True


# -- model configuration (JSON object) ---------------------------------

def parse_model_config(cfg: dict):
    """Parse ``{"base": {"kind", "scale"}, "taper_range", "mu", "sigma2"}``.

    Returns ``(CorrelationModel, mu, sigma2)`` where ``mu``/``sigma2`` are
    floats or the string ``"estimate"`` (the default when absent).
    """
    if not isinstance(cfg, dict):
        raise ConfigError("model config must be a JSON object")
    try:
        base = cfg["base"]
        kind = base["kind"]
        scale = float(base["scale"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model config missing/invalid base section: {exc}") from exc
    taper = cfg.get("taper_range", None)
    if taper is not None:
        try:
            taper = float(taper)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid taper_range: {cfg['taper_range']!r}") from exc
    try:
        model = CorrelationModel(kind, scale, taper)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    def level(key):
        v = cfg.get(key, "estimate")
        if v == "estimate":
            return "estimate"
        try:
            return float(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {key}: {v!r} (number or \"estimate\")") from exc

    return model, level("mu"), level("sigma2")


def model_config(model: CorrelationModel, mu, sigma2) -> dict:
    """Inverse of :func:`parse_model_config`."""
    return {
        "base": {"kind": model.base_kind, "scale": model.base_scale},
        "taper_range": model.taper_range,
        "mu": mu,
        "sigma2": sigma2,
    }
