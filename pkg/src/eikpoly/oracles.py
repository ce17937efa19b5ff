"""Independent ground truths and error measurement.

Geodesic shooting and two-point distances give a reference that never touches
the polynomial constructions; 1D distances come from adaptive quadrature of
the inverse metric speed; discrete Sobolev norms and convergence tables
measure approximants against these references.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad

from .approximant import Approximant
from .errors import LeftDomain, NoConvergence, NonPositiveCoefficient
from .metric import MetricField
from .polynomials import MultiIndex, enumerate_multiindices, mi_order, mi_sub, unit_index, zero_index


# -- geodesics ---------------------------------------------------------------------


@dataclass
class GeodesicCurve:
    """Sampled geodesic on normalized time [0, 1] with constant-speed velocities."""

    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    length: float
    metric: MetricField

    def speeds(self) -> np.ndarray:
        """Metric speed sqrt(g(v, v)) at each sample; constant for a geodesic."""
        out = np.empty(len(self.times))
        for i, (x, v) in enumerate(zip(self.points, self.velocities)):
            ainv = self.metric.invert_at(x)
            out[i] = math.sqrt(max(float(v @ ainv @ v), 0.0))
        return out

    def speed_drift(self) -> float:
        s = self.speeds()
        ref = max(abs(s[0]), 1e-300)
        return float(np.max(np.abs(s - s[0])) / ref)

    def length_trapezoid(self) -> float:
        return float(np.trapezoid(self.speeds(), self.times))


def _acceleration(metric: MetricField, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    gamma = metric.christoffel(x)
    return -np.einsum("kij,i,j->k", gamma, v, v)


def geodesic_shoot(metric: MetricField, x, v, T: float, steps: int) -> GeodesicCurve:
    """Integrate the geodesic equation by classical fixed-step RK4.

    The returned curve is reparametrized to [0, 1]; its velocities carry the
    factor T so the constant-speed identity and the length formula hold on
    the normalized interval.  Raises LeftDomain when the trajectory exits the
    metric's declared box.
    """
    x = np.asarray(x, dtype=float).ravel().copy()
    v = np.asarray(v, dtype=float).ravel().copy()
    h = T / steps
    pts = [x.copy()]
    vels = [v.copy()]

    def rhs(state):
        xx, vv = state
        return vv, _acceleration(metric, xx, vv)

    for i in range(steps):
        k1x, k1v = rhs((x, v))
        k2x, k2v = rhs((x + 0.5 * h * k1x, v + 0.5 * h * k1v))
        k3x, k3v = rhs((x + 0.5 * h * k2x, v + 0.5 * h * k2v))
        k4x, k4v = rhs((x + h * k3x, v + h * k3v))
        x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not metric.contains(x, pad=1e-9):
            raise LeftDomain(x, t=(i + 1) * h)
        pts.append(x.copy())
        vels.append(v.copy())
    points = np.asarray(pts)
    velocities = np.asarray(vels) * T
    ainv0 = metric.invert_at(points[0])
    length = math.sqrt(max(float(velocities[0] @ ainv0 @ velocities[0]), 0.0))
    return GeodesicCurve(
        times=np.linspace(0.0, 1.0, steps + 1),
        points=points,
        velocities=velocities,
        length=length,
        metric=metric,
    )


def _initial_velocities(x: np.ndarray, target: np.ndarray, count: int = 8) -> List[np.ndarray]:
    base = target - x
    n = len(x)
    scales = [1.0, 0.5, 1.5, 0.25, 2.0, 0.75, 3.0, 0.1]
    if n == 1:
        return [s * base for s in scales[:count]]
    out = [base]
    angles = [0.3, -0.3, 0.7, -0.7, 1.2, -1.2]
    for a in angles:
        rot = base.copy()
        c, s = math.cos(a), math.sin(a)
        rot[0], rot[1] = c * base[0] - s * base[1], s * base[0] + c * base[1]
        out.append(rot)
    out.append(0.5 * base)
    return out[:count]


def geodesic_distance(metric: MetricField, x, y, steps: int = 1000,
                      tol: float = 1e-9, max_iter: int = 60) -> float:
    """Two-point distance by shooting with damped Newton on the velocity.

    Deterministic multistart over 8 initial directions; returns the minimal
    length over converged branches.  Raises NoConvergence when no branch
    drives the endpoint residual below tolerance.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if np.array_equal(x, y):
        return 0.0
    n = len(x)

    def endpoint(v):
        return geodesic_shoot(metric, x, v, 1.0, steps).points[-1]

    best = None
    for v0 in _initial_velocities(x, y):
        v = v0.copy()
        try:
            f = endpoint(v) - y
        except LeftDomain:
            continue
        ok = False
        for _ in range(max_iter):
            res = float(np.linalg.norm(f))
            if res < tol:
                ok = True
                break
            jac = np.empty((n, n))
            eps = 1e-7 * (1.0 + float(np.linalg.norm(v)))
            try:
                for j in range(n):
                    dv = v.copy()
                    dv[j] += eps
                    jac[:, j] = (endpoint(dv) - y - f) / eps
                delta = np.linalg.solve(jac, -f)
            except (LeftDomain, np.linalg.LinAlgError):
                break
            step = 1.0
            moved = False
            for _ in range(20):
                try:
                    f_new = endpoint(v + step * delta) - y
                except LeftDomain:
                    step *= 0.5
                    continue
                if np.linalg.norm(f_new) < res:
                    moved = True
                    break
                step *= 0.5
            if not moved:
                break
            v = v + step * delta
            f = f_new
        if ok:
            ainv = metric.invert_at(x)
            length = math.sqrt(max(float(v @ ainv @ v), 0.0))
            if best is None or length < best:
                best = length
    if best is None:
        raise NoConvergence(f"no shooting branch converged for {tuple(x)} -> {tuple(y)}")
    return best


def exact_1d_distance(metric: MetricField, x: float, y: float) -> float:
    """1D distance as the quadrature of the inverse metric speed.

    d(x, y) = |int_y^x dt / sqrt(a(t))| for the scalar coefficient a; adaptive
    quadrature to absolute tolerance 1e-12.
    """
    if metric.n != 1:
        raise NonPositiveCoefficient("quadrature distance needs a 1D metric")
    a_poly = metric.A[0][0]
    lo, hi = min(x, y), max(x, y)
    if lo < hi:
        samples = np.linspace(lo, hi, 101).reshape(-1, 1)
        if np.any(a_poly.eval_many(samples) <= 0.0):
            raise NonPositiveCoefficient(f"coefficient not positive on [{lo}, {hi}]")
    val, _err = quad(lambda t: 1.0 / math.sqrt(a_poly.eval((t,))), y, x,
                     epsabs=1e-12, epsrel=1e-12, limit=200)
    return abs(val)


def halfplane_reference_distance(p, q) -> float:
    """Closed-form hyperbolic half-plane distance, used as an independent check."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    arg = 1.0 + ((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2) / (2.0 * p[1] * q[1])
    return float(np.arccosh(arg))


# -- oracle fields ------------------------------------------------------------------

# A field is a callable (points, alpha) -> values supporting mixed partials up
# to the order a study needs; closed forms where available, otherwise central
# finite differences with one Richardson step.


def _fd_derivative(fld: Callable, xs: np.ndarray, alpha: MultiIndex, h: float = 1e-4) -> np.ndarray:
    i = next(k for k, a in enumerate(alpha) if a >= 1)
    lower = mi_sub(alpha, unit_index(len(alpha), i))

    def diff(step):
        xp = xs.copy()
        xm = xs.copy()
        xp[:, i] += step
        xm[:, i] -= step
        return (fld(xp, lower) - fld(xm, lower)) / (2.0 * step)

    d1 = diff(h)
    d2 = diff(h / 2.0)
    return (4.0 * d2 - d1) / 3.0


def flat_distance_field(metric: MetricField, y) -> Callable:
    """Distance field of a constant metric: sqrt of the inverse quadratic form."""
    y = np.asarray(y, dtype=float).ravel()
    g = metric.invert_at(y)

    def fld(xs, alpha):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        alpha = tuple(alpha)
        order = mi_order(alpha)
        d = xs - y
        vals = np.sqrt(np.maximum(np.einsum("mi,ij,mj->m", d, g, d), 0.0))
        if order == 0:
            return vals
        if order == 1:
            i = alpha.index(1)
            out = np.zeros(len(vals))
            ok = vals > 0.0
            out[ok] = (d[ok] @ g)[:, i] / vals[ok]
            return out
        return _fd_derivative(fld, xs, alpha)

    return fld


def quadrature_distance_field(metric: MetricField, y) -> Callable:
    """1D catalog distance with exact value and first derivative."""
    y = float(np.asarray(y, dtype=float).ravel()[0])
    a_poly = metric.A[0][0]

    def fld(xs, alpha):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        alpha = tuple(alpha)
        order = mi_order(alpha)
        if order == 0:
            return np.array([exact_1d_distance(metric, float(t), y) for t in xs[:, 0]])
        if order == 1:
            lam = a_poly.eval_many(xs)
            return np.sign(xs[:, 0] - y) / np.sqrt(lam)
        return _fd_derivative(fld, xs, alpha)

    return fld


def halfplane_distance_field(y) -> Callable:
    y = np.asarray(y, dtype=float).ravel()

    def fld(xs, alpha):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        alpha = tuple(alpha)
        if mi_order(alpha) == 0:
            return np.array([halfplane_reference_distance(p, y) for p in xs])
        return _fd_derivative(fld, xs, alpha)

    return fld


def geodesic_distance_field(metric: MetricField, y, steps: int = 400) -> Callable:
    """Distance field from the shooting solver; expensive, for probe sets only."""
    y = np.asarray(y, dtype=float).ravel()

    def fld(xs, alpha):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        alpha = tuple(alpha)
        if mi_order(alpha) == 0:
            return np.array([geodesic_distance(metric, p, y, steps=steps) for p in xs])
        return _fd_derivative(fld, xs, alpha)

    return fld


def oracle_field_for(metric: MetricField, y) -> Callable:
    """Reference distance field for a catalog metric (shooting as fallback)."""
    if metric.catalog == "constant":
        return flat_distance_field(metric, y)
    if metric.catalog == "curved1d" or metric.n == 1:
        return quadrature_distance_field(metric, y)
    if metric.catalog == "halfplane":
        return halfplane_distance_field(y)
    return geodesic_distance_field(metric, y)


# -- Sobolev norms and convergence ---------------------------------------------------


@dataclass
class SobolevSpec:
    """Integer derivative order s, Lebesgue exponent p, grid points per axis."""

    s: int = 0
    p: float = 2.0
    grid: int = 101


def sobolev_error(f: Callable, g: Callable, spec: SobolevSpec, box) -> float:
    """Discrete Sobolev distance between two fields on a box.

    ( sum_{|alpha| <= s} int |d^alpha (f - g)|^p )^{1/p} with tensor trapezoid
    quadrature on the configured grid.
    """
    n = len(box)
    axes = [np.linspace(lo, hi, spec.grid) for lo, hi in box]
    weights = []
    for ax in axes:
        w = np.full(len(ax), ax[1] - ax[0] if len(ax) > 1 else 1.0)
        if len(ax) > 1:
            w[0] *= 0.5
            w[-1] *= 0.5
        weights.append(w)
    grid = np.stack([g_.ravel() for g_ in np.meshgrid(*axes, indexing="ij")], axis=-1)
    wgrid = np.prod(
        np.stack([w.ravel() for w in np.meshgrid(*weights, indexing="ij")]), axis=0
    )
    total = 0.0
    for order in range(spec.s + 1):
        for alpha in enumerate_multiindices(n, order):
            diff = f(grid, alpha) - g(grid, alpha)
            total += float(np.sum(wgrid * np.abs(diff) ** spec.p))
    return total ** (1.0 / spec.p)


@dataclass
class ConvergenceTable:
    """Per-level errors against an oracle plus a least-squares fitted order."""

    rows: List[Dict] = field(default_factory=list)
    fitted_order: Optional[float] = None
    fit_residual: Optional[float] = None
    exact: bool = False

    def fit(self):
        errs = np.array([r["error"] for r in self.rows])
        hs = np.array([r["h"] for r in self.rows])
        if np.all(errs < 1e-12):
            self.exact = True
            self.fitted_order = None
            self.fit_residual = None
            return
        mask = errs > 0
        loge = np.log(errs[mask])
        logh = np.log(hs[mask])
        a = np.vstack([logh, np.ones_like(logh)]).T
        sol, res, *_ = np.linalg.lstsq(a, loge, rcond=None)
        self.fitted_order = float(sol[0])
        self.fit_residual = float(res[0]) if len(res) else 0.0

    def to_csv(self) -> str:
        lines = ["N,h,error"]
        for r in self.rows:
            lines.append(f"{r['N']},{r['h']!r},{r['error']!r}")
        if self.exact:
            lines.append("# fitted order: exact (errors at rounding level)")
        else:
            lines.append(f"# fitted order: {self.fitted_order!r} (lsq residual {self.fit_residual!r})")
        return "\n".join(lines) + "\n"

    def to_json_obj(self) -> Dict:
        return {
            "rows": self.rows,
            "fitted_order": self.fitted_order,
            "fit_residual": self.fit_residual,
            "exact": self.exact,
        }


def convergence_table(metric: MetricField, oracle: Callable, levels: Sequence[int],
                      build, norm: SobolevSpec, box, y,
                      node_factory: Optional[Callable] = None) -> ConvergenceTable:
    """Build one approximant per level and measure the distance error.

    ``build`` maps a NodeSet to an Approximant; ``node_factory`` maps
    (box, y, N) to a NodeSet (nested equispaced by default).  The measured
    field is the square root of the approximant.
    """
    from .construction import equispaced_nodes

    if node_factory is None:
        node_factory = lambda box_, y_, n_: equispaced_nodes(box_, y_, n_ + 1)
    table = ConvergenceTable()
    for n_level in levels:
        ns = node_factory(box, y, n_level)
        q = build(ns)
        err = sobolev_error(q.sqrt_field(), oracle, norm, box)
        table.rows.append({"N": int(n_level), "h": float(ns.h), "error": float(err)})
    table.rows.sort(key=lambda r: -r["h"])
    table.fit()
    return table


# -- a priori gradient bound -----------------------------------------------------------


@dataclass
class GradientBoundReport:
    max_ratio: float
    argmax_point: Optional[Tuple[float, ...]]
    argmax_axis: Optional[int]
    excluded: int
    lambda_min: float


def gradient_bound_check(q: Approximant, points, lambda_min: Optional[float] = None,
                         exclude_below: float = 1e-10) -> GradientBoundReport:
    """Check the a priori gradient bound of the eikonal identity on a grid.

    The identity q2 = (1/4) <grad q2, A grad q2> forces
    |d_i q2| <= 2 sqrt(q2 / lambda_min), so the reported ratio
    |d_i q2| sqrt(lambda_min) / (2 sqrt(q2)) stays at or below one for a field
    respecting the equation; points with q2 below ``exclude_below`` are
    reported as exclusions (the bound degenerates at the base point).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = q.n
    if lambda_min is None:
        lam = min(q.metric.smallest_eigenvalue_at(x) for x in points)
    else:
        lam = float(lambda_min)
    upto = tuple(1 for _ in range(n))
    tab = q.derivative_table(points, upto)
    vals = tab[zero_index(n)]
    ok = vals >= exclude_below
    excluded = int(np.sum(~ok))
    max_ratio = 0.0
    arg_pt = None
    arg_ax = None
    for i in range(n):
        grad = tab[unit_index(n, i)]
        ratio = np.zeros(len(vals))
        ratio[ok] = np.abs(grad[ok]) * math.sqrt(lam) / (2.0 * np.sqrt(vals[ok]))
        j = int(np.argmax(ratio))
        if ratio[j] > max_ratio:
            max_ratio = float(ratio[j])
            arg_pt = tuple(float(c) for c in points[j])
            arg_ax = i
    return GradientBoundReport(
        max_ratio=max_ratio, argmax_point=arg_pt, argmax_axis=arg_ax,
        excluded=excluded, lambda_min=lam,
    )
