"""Heterogeneous observations as linear operators on a stationary random field.

Three observation kinds are supported:

* ``point``  -- the field value at a location, possibly with Gaussian error;
* ``deriv``  -- the directional derivative at a location (1D closed forms,
  finite differences in higher dimensions);
* ``avg``    -- the unnormalized integral of the field over a 1D interval.

Each observation ``y`` induces a kernel function ``nu_y(x)`` (the correlation
between the field at ``x`` and the observed quantity) and pairwise
inter-correlation entries; both are computed in closed form for the
Matern-5/2 base without taper and by adaptive quadrature / finite
differences otherwise.  Entries that are provably zero under a finite-range
model (support separation at or beyond the taper range) are never stored.
"""

import csv
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad

from .corrfn import SQRT5, CorrelationModel
from .errors import ObservationParseError, UnsupportedOperatorError
from .linalg import SparseSymmetric, SpatialIndex

POINT = "point"
DERIV = "deriv"
AVG = "avg"
KINDS = (POINT, DERIV, AVG)

_KIND_RANK = {POINT: 0, DERIV: 1, AVG: 2}

QUAD_ABS_TOL = 1e-12  # keeps quadrature entries good to ~1e-10 after combination
_FD_STEP = 1e-5


@dataclass(eq=False)
class Observation:
    """One observed datum.

    ``location`` is the q-vector of the observation site for ``point`` and
    ``deriv`` kinds, and the pair (lower, upper) of interval bounds for
    ``avg`` (1D only).  ``value`` stores the observed number: the field
    value, the directional derivative, or the unnormalized interval integral
    respectively.  ``error_var`` is the additive Gaussian error variance
    (0 = exact).  ``direction`` (deriv only) is normalized to unit length.
    """

    kind: str
    location: np.ndarray
    value: float
    error_var: float = 0.0
    direction: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        self.location = np.atleast_1d(np.asarray(self.location, dtype=float))
        self.value = float(self.value)
        self.error_var = float(self.error_var)
        if not np.all(np.isfinite(self.location)) or not math.isfinite(self.value):
            raise ValueError("observation location and value must be finite")
        if not math.isfinite(self.error_var) or self.error_var < 0.0:
            raise ValueError("error_var must be a finite non-negative real")
        if self.kind == AVG:
            if self.location.shape != (2,):
                raise ValueError("avg observation location must be (lower, upper)")
            if not self.location[0] < self.location[1]:
                raise ValueError("avg interval must satisfy lower < upper")
        if self.kind == DERIV:
            if self.direction is None:
                self.direction = np.ones(self.location.shape[0])
            self.direction = np.atleast_1d(np.asarray(self.direction, dtype=float))
            if self.direction.shape != self.location.shape:
                raise ValueError("direction must match location dimension")
            norm = float(np.linalg.norm(self.direction))
            if not math.isfinite(norm) or norm == 0.0:
                raise ValueError("direction must be a nonzero finite vector")
            self.direction = self.direction / norm
        elif self.direction is not None:
            raise ValueError("direction is only valid for deriv observations")

    @property
    def dim(self) -> int:
        return 1 if self.kind == AVG else self.location.shape[0]

    @property
    def rep_point(self) -> np.ndarray:
        """Representative site: the location, or the interval midpoint."""
        if self.kind == AVG:
            return np.array([0.5 * (self.location[0] + self.location[1])])
        return self.location

    @property
    def support_radius(self) -> float:
        """Radius of the observation's support around the representative site."""
        if self.kind == AVG:
            return 0.5 * float(self.location[1] - self.location[0])
        return 0.0

    @property
    def mean_image(self) -> float:
        """Multiplier of the field mean in the observation's expectation."""
        if self.kind == POINT:
            return 1.0
        if self.kind == DERIV:
            return 0.0
        return float(self.location[1] - self.location[0])

    @property
    def interval(self) -> Tuple[float, float]:
        if self.kind != AVG:
            raise ValueError("interval only defined for avg observations")
        return float(self.location[0]), float(self.location[1])


class ObservationSet:
    """Ordered, immutable collection of observations sharing one dimension.

    ``allow_numeric`` permits deriv/avg kinds outside 1D, evaluated by
    finite differences and quadrature instead of closed forms.
    """

    def __init__(self, observations: Sequence[Observation], dim: Optional[int] = None,
                 allow_numeric: bool = False):
        obs = list(observations)
        if dim is None:
            if not obs:
                raise ValueError("dimension required for an empty observation set")
            dim = obs[0].dim
        for i, o in enumerate(obs):
            if o.dim != dim:
                raise ValueError(f"observation {i} has dimension {o.dim}, set has {dim}")
            if o.kind != POINT and dim != 1 and not allow_numeric:
                raise ValueError(
                    f"observation {i}: {o.kind} kind needs dim 1 unless numeric mode is enabled"
                )
            if o.kind == AVG and dim != 1:
                raise ValueError(f"observation {i}: avg observations are 1D only")
        self.observations = obs
        self.dim = int(dim)
        self.allow_numeric = bool(allow_numeric)

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    def __getitem__(self, i) -> Observation:
        return self.observations[i]

    @property
    def m(self) -> int:
        return len(self.observations)

    def values(self) -> np.ndarray:
        return np.array([o.value for o in self.observations], dtype=float)

    def mean_image(self) -> np.ndarray:
        return np.array([o.mean_image for o in self.observations], dtype=float)

    def error_vars(self) -> np.ndarray:
        return np.array([o.error_var for o in self.observations], dtype=float)

    def rep_points(self) -> np.ndarray:
        if not self.observations:
            return np.empty((0, self.dim))
        return np.vstack([o.rep_point for o in self.observations])

    def support_radii(self) -> np.ndarray:
        return np.array([o.support_radius for o in self.observations], dtype=float)

    def point_mask(self) -> np.ndarray:
        return np.array([o.kind == POINT for o in self.observations], dtype=bool)

    def with_values(self, values: np.ndarray) -> "ObservationSet":
        """Copy of the set with observed values replaced (same geometry)."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.m,):
            raise ValueError("values length must equal m")
        obs = [
            Observation(o.kind, o.location.copy(), float(v), o.error_var,
                        None if o.direction is None else o.direction.copy())
            for o, v in zip(self.observations, values)
        ]
        return ObservationSet(obs, dim=self.dim, allow_numeric=self.allow_numeric)


# -- Matern-5/2 antiderivative family (untapered closed forms) ------------
#
# With k = sqrt(5)/tau_m and rho(t) = (1 + k t + (k t)^2/3) exp(-k t), t >= 0:
#   F(t) = int_0^t rho = (k/3) * (8/k^2 - G(t)),  G(t) = (8/k^2 + 5t/k + t^2) e^{-kt}
#   H(t) = int_0^t F   = 8t/(3k) - 5/k^2 + (1/3)(15/k^2 + 7t/k + t^2) e^{-kt}

def _m52_F(t: float, k: float) -> float:
    g = (8.0 / (k * k) + 5.0 * t / k + t * t) * math.exp(-k * t)
    return (k / 3.0) * (8.0 / (k * k) - g)


def _m52_H(t: float, k: float) -> float:
    e = math.exp(-k * t)
    return 8.0 * t / (3.0 * k) - 5.0 / (k * k) + (15.0 / (k * k) + 7.0 * t / k + t * t) * e / 3.0


def _m52_interval_point(x: float, lo: float, hi: float, k: float) -> float:
    """int_lo^hi rho(|x - u|) du for the untapered Matern-5/2 base."""
    if x <= lo:
        return _m52_F(hi - x, k) - _m52_F(lo - x, k)
    if x >= hi:
        return _m52_F(x - lo, k) - _m52_F(x - hi, k)
    return _m52_F(x - lo, k) + _m52_F(hi - x, k)


def _m52_interval_interval(lo1: float, hi1: float, lo2: float, hi2: float, k: float) -> float:
    """Double integral of rho(|u - v|) over [lo1,hi1] x [lo2,hi2]."""
    return (
        _m52_H(abs(hi1 - lo2), k)
        + _m52_H(abs(lo1 - hi2), k)
        - _m52_H(abs(hi1 - hi2), k)
        - _m52_H(abs(lo1 - lo2), k)
    )


def _has_m52_closed_forms(model: CorrelationModel) -> bool:
    return model.base_kind == "matern52" and model.taper_range is None


# -- quadrature fallbacks -------------------------------------------------

def _quad_breakpoints(model: CorrelationModel, centers, lo: float, hi: float) -> list:
    """Interior quadrature breakpoints: kernel kinks at centers and taper edges."""
    pts = set()
    for c in centers:
        cands = [c]
        if model.taper_range is not None:
            cands += [c - model.taper_range, c + model.taper_range]
        for p in cands:
            if lo < p < hi:
                pts.add(p)
    return sorted(pts)


def _quad_interval_point(model: CorrelationModel, x: float, lo: float, hi: float) -> float:
    pts = _quad_breakpoints(model, [x], lo, hi)
    val, _ = quad(
        lambda u: model.eval(abs(x - u)), lo, hi,
        points=pts or None, limit=200, epsabs=QUAD_ABS_TOL, epsrel=QUAD_ABS_TOL,
    )
    return val


def _quad_interval_interval(model: CorrelationModel, lo1, hi1, lo2, hi2) -> float:
    # Reduce the double integral over two intervals to one lag integral:
    # int int rho(u - v) dv du = int rho(t) * overlap(t) dt, where overlap(t)
    # is the length of [lo1, hi1] meeting [lo2 + t, hi2 + t].
    a, b = lo1 - hi2, hi1 - lo2

    def integrand(t):
        w = min(hi1, hi2 + t) - max(lo1, lo2 + t)
        return model.eval(abs(t)) * w if w > 0.0 else 0.0

    pts = set()
    for p in (lo1 - lo2, hi1 - hi2, 0.0):
        if a < p < b:
            pts.add(p)
    if model.taper_range is not None:
        for p in (-model.taper_range, model.taper_range):
            if a < p < b:
                pts.add(p)
    val, _ = quad(integrand, a, b, points=sorted(pts) or None, limit=200,
                  epsabs=QUAD_ABS_TOL, epsrel=QUAD_ABS_TOL)
    return val


# -- pairwise operator correlations ----------------------------------------

def _pp(model: CorrelationModel, xa: np.ndarray, xb: np.ndarray) -> float:
    return float(model.eval(float(np.linalg.norm(xa - xb))))


def _require_smooth(model: CorrelationModel):
    if not model.smooth_origin:
        raise UnsupportedOperatorError(
            "derivative observations need a correlation model that is twice "
            "differentiable at the origin; the spherical taper is not"
        )


def _pd(model: CorrelationModel, x: np.ndarray, c: np.ndarray, z: np.ndarray) -> float:
    _require_smooth(model)
    if x.shape[0] == 1:
        return float(z[0]) * -float(model.deriv1(float(x[0] - c[0])))
    h = _FD_STEP
    return (_pp(model, x, c + h * z) - _pp(model, x, c - h * z)) / (2.0 * h)


def _dd(model: CorrelationModel, c1, z1, c2, z2) -> float:
    _require_smooth(model)
    if c1.shape[0] == 1:
        return float(z1[0] * z2[0]) * -float(model.deriv2(float(c1[0] - c2[0])))
    h = _FD_STEP
    return (
        _pp(model, c1 + h * z1, c2 + h * z2)
        - _pp(model, c1 + h * z1, c2 - h * z2)
        - _pp(model, c1 - h * z1, c2 + h * z2)
        + _pp(model, c1 - h * z1, c2 - h * z2)
    ) / (4.0 * h * h)


def _pa(model: CorrelationModel, x: float, lo: float, hi: float) -> float:
    if _has_m52_closed_forms(model):
        return _m52_interval_point(x, lo, hi, SQRT5 / model.base_scale)
    return _quad_interval_point(model, x, lo, hi)


def _da(model: CorrelationModel, c: float, z: float, lo: float, hi: float) -> float:
    _require_smooth(model)
    return z * (float(model.eval(abs(c - lo))) - float(model.eval(abs(c - hi))))


def _aa(model: CorrelationModel, lo1, hi1, lo2, hi2) -> float:
    if _has_m52_closed_forms(model):
        return _m52_interval_interval(lo1, hi1, lo2, hi2, SQRT5 / model.base_scale)
    return _quad_interval_interval(model, lo1, hi1, lo2, hi2)


def kernel_value(obs: Observation, x, model: CorrelationModel) -> float:
    """Kernel function nu_y(x): correlation between the field at ``x`` and ``obs``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != obs.dim:
        raise ValueError(f"query dimension {x.shape[0]} != observation dimension {obs.dim}")
    if obs.kind == POINT:
        return _pp(model, x, obs.location)
    if obs.kind == DERIV:
        return _pd(model, x, obs.location, obs.direction)
    lo, hi = obs.interval
    return _pa(model, float(x[0]), lo, hi)


def kernel_gradient_1d(obs: Observation, x: float, model: CorrelationModel) -> float:
    """d/dx of the kernel function in 1D (analytic)."""
    if obs.kind == POINT:
        return float(model.deriv1(x - float(obs.location[0])))
    if obs.kind == DERIV:
        z = float(obs.direction[0])
        return z * -float(model.deriv2(x - float(obs.location[0])))
    lo, hi = obs.interval
    return float(model.eval(abs(x - lo))) - float(model.eval(abs(x - hi)))


def support_separation(a: Observation, b: Observation) -> float:
    """Euclidean distance between the supports of two observations."""
    if a.kind != AVG and b.kind != AVG:
        return float(np.linalg.norm(a.location - b.location))
    if a.kind == AVG and b.kind == AVG:
        lo1, hi1 = a.interval
        lo2, hi2 = b.interval
        return max(0.0, lo1 - hi2, lo2 - hi1)
    pt, iv = (a, b) if b.kind == AVG else (b, a)
    lo, hi = iv.interval
    x = float(pt.location[0])
    return max(0.0, lo - x, x - hi)


def cross_correlation(a: Observation, b: Observation, model: CorrelationModel,
                      sigma2_r: float) -> float:
    """Inter-correlation entry between two observations.

    Exactly symmetric in (a, b).  The error-variance ratio
    ``error_var / sigma2_r`` is added only when ``a`` and ``b`` are the same
    observation object (a diagonal entry).
    """
    if not math.isfinite(sigma2_r) or sigma2_r <= 0.0:
        raise ValueError("sigma2_r must be a positive finite real")
    if a.dim != b.dim:
        raise ValueError("observations have mismatched dimensions")
    first, second = (a, b) if _KIND_RANK[a.kind] <= _KIND_RANK[b.kind] else (b, a)
    val = _cross_value(first, second, model)
    if a is b:
        val += a.error_var / sigma2_r
    return val


def _cross_value(a: Observation, b: Observation, model: CorrelationModel) -> float:
    ka, kb = a.kind, b.kind
    if ka == POINT and kb == POINT:
        return _pp(model, a.location, b.location)
    if ka == POINT and kb == DERIV:
        return _pd(model, a.location, b.location, b.direction)
    if ka == POINT and kb == AVG:
        lo, hi = b.interval
        return _pa(model, float(a.location[0]), lo, hi)
    if ka == DERIV and kb == DERIV:
        return _dd(model, a.location, a.direction, b.location, b.direction)
    if ka == DERIV and kb == AVG:
        lo, hi = b.interval
        return _da(model, float(a.location[0]), float(a.direction[0]), lo, hi)
    lo1, hi1 = a.interval
    lo2, hi2 = b.interval
    return _aa(model, lo1, hi1, lo2, hi2)


def kernel_vector(obs_set: ObservationSet, x, model: CorrelationModel,
                  subset: Optional[np.ndarray] = None) -> np.ndarray:
    """Kernel values nu_y(x) for all observations (length-m vector).

    ``subset`` restricts evaluation to the given sorted indices; the other
    components are returned as exact zeros (used with finite-range models
    where off-subset kernels are provably zero).
    """
    m = obs_set.m
    out = np.zeros(m)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    idx = np.arange(m) if subset is None else np.asarray(subset, dtype=np.int64)
    if idx.size == 0:
        return out
    mask = obs_set.point_mask()[idx]
    pts = idx[mask]
    if pts.size:
        reps = obs_set.rep_points()[pts]
        dists = np.linalg.norm(reps - x[None, :], axis=1)
        out[pts] = model.eval(dists) if pts.size > 1 else float(model.eval(float(dists[0])))
    for i in idx[~mask]:
        out[i] = kernel_value(obs_set[int(i)], x, model)
    return out


def _check_duplicate_exact_points(obs_set: ObservationSet):
    seen = {}
    for i, o in enumerate(obs_set):
        if o.kind == POINT and o.error_var == 0.0:
            key = o.location.tobytes()
            if key in seen:
                raise ValueError(
                    f"duplicate exact point observations at one location "
                    f"(indices {seen[key]} and {i}) make the inter-correlation "
                    f"matrix singular"
                )
            seen[key] = i


def assemble(obs_set: ObservationSet, model: CorrelationModel, sigma2_r: float) -> SparseSymmetric:
    """Assemble the symmetric m-by-m observation inter-correlation matrix.

    Under a finite-range model, candidate pairs are enumerated through a
    grid-bucket spatial index, and entries whose supports are separated by
    at least the taper range are provably zero and never stored.
    """
    m = obs_set.m
    if m < 1:
        raise ValueError("assemble requires at least one observation")
    if not math.isfinite(sigma2_r) or sigma2_r <= 0.0:
        raise ValueError("sigma2_r must be a positive finite real")
    _check_duplicate_exact_points(obs_set)

    reps = obs_set.rep_points()
    radii = obs_set.support_radii()
    is_point = obs_set.point_mask()
    tau0 = model.taper_range

    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []

    if tau0 is not None:
        reach = tau0 + 2.0 * float(radii.max(initial=0.0))
        index = SpatialIndex(reps, cell=reach)
    else:
        index = None

    for i in range(m):
        if index is not None:
            cand = index.neighbors(reps[i], tau0 + radii[i] + float(radii.max(initial=0.0)))
            cand = cand[cand <= i]
        else:
            cand = np.arange(i + 1)
        if cand.size == 0:
            continue
        oi = obs_set[i]
        if is_point[i]:
            pts = cand[is_point[cand]]
            others = cand[~is_point[cand]]
            if pts.size:
                dists = np.linalg.norm(reps[pts] - reps[i][None, :], axis=1)
                if tau0 is not None:
                    keep = dists < tau0
                    pts, dists = pts[keep], dists[keep]
                if pts.size:
                    corr = np.atleast_1d(np.asarray(model.eval(dists), dtype=float))
                    self_hit = pts == i
                    if self_hit.any() and oi.error_var > 0.0:
                        corr = corr + np.where(self_hit, oi.error_var / sigma2_r, 0.0)
                    rows.extend([i] * pts.size)
                    cols.extend(int(j) for j in pts)
                    vals.extend(float(v) for v in corr)
        else:
            others = cand
        for j in others:
            oj = obs_set[int(j)]
            if tau0 is not None and support_separation(oi, oj) >= tau0:
                continue
            v = cross_correlation(oi, oi, model, sigma2_r) if int(j) == i \
                else cross_correlation(oi, oj, model, sigma2_r)
            rows.append(i)
            cols.append(int(j))
            vals.append(v)

    return SparseSymmetric.from_entries(m, rows, cols, vals)


# The inter-correlation matrix is plain symmetric sparse storage; the name
# records its role in the observation model.
InterCorrelationMatrix = SparseSymmetric


# -- observation CSV --------------------------------------------------------
#
# Header: x1[,x2[,x3]],kind,value,error_var,p1,p2
#   point: x columns = location, p1/p2 empty
#   deriv: x columns = location, p1..pq = direction components
#   avg  : 1D only; x1 = interval midpoint (informative), p1,p2 = bounds

def read_observations_csv(path, allow_numeric: bool = False) -> ObservationSet:
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ObservationParseError(1, "empty observation file") from None
        header = [h.strip() for h in header]
        dim = 0
        while dim < len(header) and header[dim] == f"x{dim + 1}":
            dim += 1
        expected = [f"x{k + 1}" for k in range(dim)] + ["kind", "value", "error_var", "p1", "p2"]
        if dim < 1 or header != expected:
            raise ObservationParseError(
                1, f"bad header {header!r}, expected x1[,x2[,x3]],kind,value,error_var,p1,p2"
            )
        observations = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(expected):
                raise ObservationParseError(lineno, f"expected {len(expected)} fields, got {len(row)}")
            try:
                observations.append(_parse_row(row, dim))
            except (ValueError, TypeError) as exc:
                raise ObservationParseError(lineno, str(exc)) from exc
    if observations:
        return ObservationSet(observations, allow_numeric=allow_numeric)
    return ObservationSet([], dim=dim, allow_numeric=allow_numeric)


def _parse_field(raw: str, name: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"invalid numeric field {name}={raw!r}") from None


def _parse_row(row: List[str], dim: int) -> Observation:
    xs = [_parse_field(row[k], f"x{k + 1}") for k in range(dim)]
    kind = row[dim].strip()
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    value = _parse_field(row[dim + 1], "value")
    err_raw = row[dim + 2].strip()
    error_var = _parse_field(err_raw, "error_var") if err_raw else 0.0
    p1, p2 = row[dim + 3].strip(), row[dim + 4].strip()
    if kind == POINT:
        return Observation(POINT, np.array(xs), value, error_var)
    if kind == DERIV:
        if dim == 1:
            direction = np.array([_parse_field(p1, "p1")]) if p1 else np.array([1.0])
        elif dim == 2:
            if not p1 or not p2:
                raise ValueError("deriv in dim 2 needs direction components in p1,p2")
            direction = np.array([_parse_field(p1, "p1"), _parse_field(p2, "p2")])
        else:
            raise ValueError("deriv rows support dim <= 2 (p1,p2 hold the direction)")
        return Observation(DERIV, np.array(xs), value, error_var, direction)
    if dim != 1:
        raise ValueError("avg observations are 1D only")
    if not p1 or not p2:
        raise ValueError("avg row needs interval bounds in p1,p2")
    lo, hi = _parse_field(p1, "p1"), _parse_field(p2, "p2")
    return Observation(AVG, np.array([lo, hi]), value, error_var)


def write_observations_csv(path, obs_set: ObservationSet):
    dim = obs_set.dim
    header = [f"x{k + 1}" for k in range(dim)] + ["kind", "value", "error_var", "p1", "p2"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for o in obs_set:
            xs = [repr(float(v)) for v in o.rep_point]
            p1 = p2 = ""
            if o.kind == DERIV:
                p1 = repr(float(o.direction[0]))
                if dim >= 2:
                    p2 = repr(float(o.direction[1]))
            elif o.kind == AVG:
                lo, hi = o.interval
                p1, p2 = repr(lo), repr(hi)
            writer.writerow(xs + [o.kind, repr(o.value), repr(o.error_var), p1, p2])
