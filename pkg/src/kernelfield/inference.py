"""Maximum marginal-likelihood estimation of the field mean, variance and range.

Given the correlation parameters, the mean and variance estimators are
closed-form generalized-least-squares expressions through the inverse
inter-correlation matrix (supplied as a factor solve, a sparse approximate
inverse, or any linear action).  The scalar range parameter is found by a
golden-section search on the profiled objective; the joint estimator cycles
the three conditional updates.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .corrfn import CorrelationModel
from .errors import EstimationError, FactorizationError
from .linalg import CholeskyFactor, SparseSymmetric, cholesky
from .obsmodel import ObservationSet, assemble

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class MleResult:
    mu_hat: float
    sigma2_hat: float
    eta_hat: Optional[float]
    neg_log_likelihood: float
    iterations: int
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "mu": self.mu_hat,
            "sigma2": self.sigma2_hat,
            "eta": self.eta_hat,
            "nll": self.neg_log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _as_action(obj) -> Callable[[np.ndarray], np.ndarray]:
    """Normalize the inverse-matrix action: factor solve, sparse approximate
    inverse (applied by multiplication), dense matrix, or callable."""
    if isinstance(obj, CholeskyFactor):
        return obj.solve
    if isinstance(obj, SparseSymmetric):
        return obj.matvec
    if isinstance(obj, np.ndarray):
        return lambda v: obj @ v
    if callable(obj):
        return obj
    raise TypeError(f"cannot interpret {type(obj).__name__} as an inverse action")


def estimate_mu(s_inv_action, values, mean_image=None) -> float:
    """Generalized-least-squares mean through the (approximate) inverse.

    ``mean_image`` generalizes the all-ones vector to operator observations
    (0 for derivatives, interval length for interval integrals).
    """
    act = _as_action(s_inv_action)
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    if m < 1:
        raise EstimationError("mean estimation needs at least one observation")
    a = np.ones(m) if mean_image is None else np.asarray(mean_image, dtype=float)
    sa = act(a)
    denom = float(a @ sa)
    if denom <= 0.0:
        raise EstimationError(f"singular normalizer in mean estimation ({denom!r})")
    return float(sa @ values) / denom


def estimate_sigma2(s_inv_action, values, mu: float, mean_image=None) -> float:
    """Quadratic-form variance estimator with divisor m."""
    act = _as_action(s_inv_action)
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    if m < 1:
        raise EstimationError("variance estimation needs at least one observation")
    a = np.ones(m) if mean_image is None else np.asarray(mean_image, dtype=float)
    resid = values - mu * a
    s2 = float(resid @ act(resid)) / m
    if s2 < 0.0:
        warnings.warn("negative variance estimate clamped to 0 (indefinite inverse action)")
        return 0.0
    return s2


def _require_exact(obs_set: ObservationSet):
    if np.any(obs_set.error_vars() > 0.0):
        raise EstimationError(
            "range estimation with observation errors is not supported"
        )


def _objective(obs_set: ObservationSet, model: CorrelationModel, mu: float,
               sigma2: float) -> Tuple[float, Optional[CholeskyFactor]]:
    try:
        factor = cholesky(assemble(obs_set, model, 1.0))
    except FactorizationError:
        return math.inf, None
    resid = obs_set.values() - mu * obs_set.mean_image()
    return factor.logdet() + float(resid @ factor.solve(resid)) / sigma2, factor


def estimate_eta(obs_set: ObservationSet, model_family: Callable[[float], CorrelationModel],
                 mu: float, sigma2: float, search_bounds: Tuple[float, float],
                 rel_tol: float = 1e-4) -> float:
    """Golden-section minimizer of the profiled range objective.

    Range values whose inter-correlation matrix is not positive definite
    get an infinite objective and are passed over by the search.
    """
    _require_exact(obs_set)
    lo, hi = float(search_bounds[0]), float(search_bounds[1])
    if not (0.0 < lo < hi) or not math.isfinite(hi):
        raise ValueError("search bounds must satisfy 0 < lo < hi < inf")
    if sigma2 <= 0.0:
        raise ValueError("sigma2 must be positive")

    def fval(eta):
        return _objective(obs_set, model_family(eta), mu, sigma2)[0]

    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fval(c), fval(d)
    while (b - a) > rel_tol * max(abs(a), abs(b), 1e-300):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fval(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fval(d)
    return 0.5 * (a + b)


def negative_log_likelihood(obs_set: ObservationSet, model: CorrelationModel,
                            mu: float, sigma2: float) -> float:
    """Full Gaussian marginal negative log-likelihood of the observed values."""
    m = obs_set.m
    factor = cholesky(assemble(obs_set, model, sigma2))
    resid = obs_set.values() - mu * obs_set.mean_image()
    quad = float(resid @ factor.solve(resid)) / sigma2
    return 0.5 * (m * math.log(2.0 * math.pi) + m * math.log(sigma2)
                  + factor.logdet() + quad)


def _rel_change(new: float, old: Optional[float]) -> float:
    if old is None:
        return math.inf
    return abs(new - old) / max(1.0, abs(old))


def estimate_joint(obs_set: ObservationSet, model_family: Callable[[float], CorrelationModel],
                   search_bounds: Tuple[float, float], max_iter: int = 50,
                   rel_tol: float = 1e-5) -> MleResult:
    """Cyclic coordinate maximization of the marginal likelihood.

    Repeats mean given (variance, range), variance given (mean, range), and
    range given (mean, variance) until all three relative changes drop below
    ``rel_tol`` or ``max_iter`` sweeps are spent; non-convergence is
    reported through the ``converged`` flag, never raised.
    """
    if obs_set.m < 2:
        raise EstimationError("joint estimation needs at least two observations")
    _require_exact(obs_set)
    lo, hi = float(search_bounds[0]), float(search_bounds[1])
    eta = math.sqrt(lo * hi)
    mu_prev = s2_prev = eta_prev = None
    mu = s2 = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        factor = cholesky(assemble(obs_set, model_family(eta), 1.0))
        a = obs_set.mean_image()
        mu = estimate_mu(factor, obs_set.values(), a)
        s2 = estimate_sigma2(factor, obs_set.values(), mu, a)
        if s2 <= 0.0:
            raise EstimationError("zero variance estimate; residuals vanish")
        eta = estimate_eta(obs_set, model_family, mu, s2, (lo, hi))
        if (
            _rel_change(mu, mu_prev) < rel_tol
            and _rel_change(s2, s2_prev) < rel_tol
            and _rel_change(eta, eta_prev) < rel_tol
        ):
            converged = True
            break
        mu_prev, s2_prev, eta_prev = mu, s2, eta
    nll = negative_log_likelihood(obs_set, model_family(eta), mu, s2)
    return MleResult(mu, s2, eta, nll, it, converged)
