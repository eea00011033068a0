"""Global kernel predictor for a stationary Gaussian random field.

The fit solves one m-by-m system for a weight vector; predictions at any
location are then weighted sums of observation kernel functions, so the
predictor is a spatially continuous function with no grid attached.  The
pointwise Kriging construction (one weight solve per query location) is kept
alongside as an independent cross-check; the two are mathematically
identical and the test suite holds them to near machine agreement.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import obsmodel
from .corrfn import CorrelationModel
from .linalg import CholeskyFactor, SparseSymmetric, SpatialIndex, cholesky
from .obsmodel import Observation, ObservationSet, assemble, kernel_vector

_CLAMP_REL_TOL = 1e-12
_FD_STEP_HIGHDIM = 1e-6


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice: per-axis (min, max, node count), row-major ordering."""

    mins: Tuple[float, ...]
    maxs: Tuple[float, ...]
    counts: Tuple[int, ...]

    def __post_init__(self):
        if not (len(self.mins) == len(self.maxs) == len(self.counts)):
            raise ValueError("mins, maxs, counts must have equal length")
        for lo, hi, n in zip(self.mins, self.maxs, self.counts):
            if n < 1:
                raise ValueError("grid counts must be >= 1")
            if hi < lo:
                raise ValueError("grid max must be >= min")

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """Parse ``"min,max,count[;min,max,count[;...]]"``."""
        mins, maxs, counts = [], [], []
        for part in text.split(";"):
            fields = part.split(",")
            if len(fields) != 3:
                raise ValueError(f"grid axis {part!r} must be min,max,count")
            mins.append(float(fields[0]))
            maxs.append(float(fields[1]))
            counts.append(int(fields[2]))
        return cls(tuple(mins), tuple(maxs), tuple(counts))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    def axes(self):
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.mins, self.maxs, self.counts)]

    def nodes(self) -> np.ndarray:
        """(n_nodes, dim) node coordinates, row-major (last axis fastest)."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel(order="C") for g in grids], axis=1)


class KernelPredictor:
    """Fitted state of the global predictor.

    Immutable after fit apart from ``clamp_count``, a diagnostic counter of
    variance values that fell outside [0, sigma2] by more than round-off.
    """

    def __init__(self, model: CorrelationModel, obs: ObservationSet, mu: float,
                 sigma2: float, weights: np.ndarray,
                 factor: Optional[CholeskyFactor],
                 matrix: Optional[SparseSymmetric] = None,
                 deviation_var: float = 0.0):
        self.model = model
        self.obs = obs
        self.mu = float(mu)
        self.sigma2 = float(sigma2)
        self.weights = np.asarray(weights, dtype=float)
        self.factor = factor
        self.matrix = matrix
        self.deviation_var = float(deviation_var)
        self.clamp_count = 0
        self._index = None
        self._reach = None
        if model.taper_range is not None and obs.m > 0:
            radii = obs.support_radii()
            self._reach = model.taper_range + float(radii.max(initial=0.0))
            self._index = SpatialIndex(obs.rep_points(), cell=self._reach)

    @property
    def dim(self) -> int:
        return self.obs.dim

    def local_subset(self, x) -> Optional[np.ndarray]:
        """Indices of observations that can contribute at x (None = all)."""
        if self._index is None:
            return None
        return self._index.neighbors(np.atleast_1d(np.asarray(x, dtype=float)), self._reach)


def fit_global(obs_set: ObservationSet, model: CorrelationModel, mu: float,
               sigma2: float) -> KernelPredictor:
    """Fit the global predictor: weights = S^{-1} (values - mu * mean_image).

    ``mean_image`` is the multiplier of ``mu`` in each observation's
    expectation (1 for point values, 0 for derivatives, interval length for
    interval integrals).  The Cholesky factor is retained for variance
    queries.  An empty observation set yields the prior.
    """
    if not math.isfinite(sigma2) or sigma2 <= 0.0:
        raise ValueError("sigma2 must be a positive finite real")
    if not math.isfinite(mu):
        raise ValueError("mu must be finite")
    if obs_set.m == 0:
        return KernelPredictor(model, obs_set, mu, sigma2, np.empty(0), None, None)
    matrix = assemble(obs_set, model, sigma2)
    factor = cholesky(matrix)
    resid = obs_set.values() - mu * obs_set.mean_image()
    weights = factor.solve(resid)
    return KernelPredictor(model, obs_set, mu, sigma2, weights, factor, matrix)


def predict(p: KernelPredictor, x) -> float:
    """Predicted field value at ``x``."""
    if p.obs.m == 0:
        return p.mu
    nu = kernel_vector(p.obs, x, p.model, subset=p.local_subset(x))
    return p.mu + float(p.weights @ nu)


def predict_variance(p: KernelPredictor, x) -> float:
    """Prediction variance at ``x``: sigma2 * (1 - nu' S^{-1} nu).

    Clamped into [0, sigma2]; excursions beyond round-off (1e-12 * sigma2)
    bump ``clamp_count``.
    """
    if p.obs.m == 0:
        return p.sigma2
    nu = kernel_vector(p.obs, x, p.model, subset=p.local_subset(x))
    var = p.sigma2 * (1.0 - float(nu @ p.factor.solve(nu)))
    if var < 0.0:
        if var < -_CLAMP_REL_TOL * p.sigma2:
            p.clamp_count += 1
        return 0.0
    if var > p.sigma2:
        if var > p.sigma2 * (1.0 + _CLAMP_REL_TOL):
            p.clamp_count += 1
        return p.sigma2
    return var


def kriging_predict(obs_set: ObservationSet, model: CorrelationModel, mu: float,
                    sigma2: float, x, assembled: Optional[SparseSymmetric] = None
                    ) -> Tuple[float, float]:
    """Pointwise best-linear-unbiased prediction and variance at ``x``.

    Solves for a per-location weight vector with a plain dense LU solve,
    independent of the kernel predictor's factorization path; serves as the
    equivalence oracle.  ``assembled`` optionally reuses a precomputed
    inter-correlation matrix when querying many locations.
    """
    if obs_set.m == 0:
        return mu, sigma2
    mat = assembled if assembled is not None else assemble(obs_set, model, sigma2)
    dense = mat.to_dense()
    nu = kernel_vector(obs_set, x, model)
    alpha_x = np.linalg.solve(dense, nu)
    pred = mu + float(alpha_x @ (obs_set.values() - mu * obs_set.mean_image()))
    var = sigma2 * (1.0 - float(alpha_x @ dense @ alpha_x))
    return pred, var


def predict_derivative(p: KernelPredictor, x, direction=None, method: str = "auto") -> float:
    """Directional derivative of the predictor at ``x``.

    1D uses analytic kernel derivatives; higher dimensions use a central
    finite difference of :func:`predict` along the given unit direction.
    """
    q = p.dim
    if direction is None:
        if q != 1:
            raise ValueError("direction required for dim >= 2")
        direction = np.array([1.0])
    direction = np.atleast_1d(np.asarray(direction, dtype=float))
    norm = float(np.linalg.norm(direction))
    if norm == 0.0 or not math.isfinite(norm):
        raise ValueError("direction must be a nonzero finite vector")
    direction = direction / norm
    if method not in ("auto", "closed", "fd"):
        raise ValueError(f"unknown method {method!r}")
    use_closed = (method == "closed") or (method == "auto" and q == 1)
    if use_closed and q != 1:
        raise ValueError("closed-form derivative prediction is 1D only")
    if p.obs.m == 0:
        return 0.0
    if use_closed:
        xf = float(np.atleast_1d(np.asarray(x, dtype=float))[0])
        subset = p.local_subset([xf])
        idx = range(p.obs.m) if subset is None else subset
        total = 0.0
        for i in idx:
            total += p.weights[int(i)] * obsmodel.kernel_gradient_1d(p.obs[int(i)], xf, p.model)
        return float(direction[0]) * total
    h = _FD_STEP_HIGHDIM
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return (predict(p, x + h * direction) - predict(p, x - h * direction)) / (2.0 * h)


def predict_average(p: KernelPredictor, interval) -> float:
    """Predicted spatial average of the field over a 1D interval."""
    if p.dim != 1:
        raise ValueError("average prediction is 1D only")
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError("interval must satisfy lower < upper")
    if p.obs.m == 0:
        return p.mu
    probe = Observation(obsmodel.AVG, np.array([lo, hi]), 0.0)
    total = 0.0
    for i, o in enumerate(p.obs):
        total += p.weights[i] * obsmodel.cross_correlation(o, probe, p.model, 1.0)
    return p.mu + total / (hi - lo)


def rasterize(p: KernelPredictor, grid: GridSpec) -> np.ndarray:
    """(n_nodes, dim + 2) table of node coordinates, prediction, variance."""
    if grid.dim != p.dim and p.obs.m > 0:
        raise ValueError(f"grid dimension {grid.dim} != predictor dimension {p.dim}")
    nodes = grid.nodes()
    out = np.empty((nodes.shape[0], grid.dim + 2))
    out[:, : grid.dim] = nodes
    for i, x in enumerate(nodes):
        out[i, grid.dim] = predict(p, x)
        out[i, grid.dim + 1] = predict_variance(p, x)
    return out
