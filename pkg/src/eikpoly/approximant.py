"""Squared-distance approximants and eikonal residuals.

An approximant is a base quadratic form plus an ordered list of structured
correction terms.  Each term is a product of univariate factors (x_i - r)^p,
optionally times a quadratic form, so any mixed partial is evaluated exactly
by combining per-coordinate derivative jets with a short Leibniz sum; terms
are never expanded to dense monomials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .metric import MetricField
from .polynomials import (
    MultiIndex,
    mi_binom,
    mi_order,
    mi_sub,
    submultiindices,
    unit_index,
    zero_index,
)


def quadratic_leading(ainv: np.ndarray, x, y) -> float:
    """Leading quadratic form <x-y, ainv (x-y)>; zero iff x = y for SPD ainv."""
    d = np.asarray(x, dtype=float).ravel() - np.asarray(y, dtype=float).ravel()
    return float(d @ np.asarray(ainv) @ d)


def _factor_jets(roots: np.ndarray, mults: np.ndarray, t: np.ndarray, order: int) -> np.ndarray:
    """Derivative values of prod_r (t - roots[r])^mults[r] for orders 0..order.

    ``t`` has shape (m,); the result has shape (order+1, m).  Each factor's jet
    uses exact integer falling factorials; factors are combined by binomial
    convolution, so the result is exact up to rounding.
    """
    m = t.shape[0]
    out = np.zeros((order + 1, m))
    out[0] = 1.0
    for root, mult in zip(roots, mults):
        mult = int(mult)
        base = t - root
        f = np.zeros((order + 1, m))
        for k in range(min(order, mult) + 1):
            f[k] = math.perm(mult, k) * base ** (mult - k)
        new = np.zeros_like(out)
        for k in range(order + 1):
            acc = np.zeros(m)
            for j in range(k + 1):
                acc += math.comb(k, j) * out[j] * f[k - j]
            new[k] = acc
        out = new
    return out


@dataclass
class CorrectionTerm:
    """One structured correction: coefficient * scale * product basis.

    ``roots``/``mults`` give, per coordinate, the univariate factors
    (x_i - root)^mult.  ``quad`` (matrix, center) appends a quadratic-form
    factor.  ``scale`` is a fixed normalization chosen at construction so the
    stored coefficient is O(defect); it never changes afterwards.
    """

    kind: str
    node: int
    beta: Optional[MultiIndex]
    coefficient: float
    scale: float
    roots: Tuple[np.ndarray, ...]
    mults: Tuple[np.ndarray, ...]
    quad: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def basis_table(self, xs: np.ndarray, upto: MultiIndex) -> Dict[MultiIndex, np.ndarray]:
        """All mixed partials of scale * basis at points ``xs``, for mu <= upto."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        n = xs.shape[1]
        jets = [
            _factor_jets(self.roots[i], self.mults[i], xs[:, i], upto[i]) for i in range(n)
        ]
        table: Dict[MultiIndex, np.ndarray] = {}
        mus = submultiindices(upto)
        uvals = {}
        for mu in mus:
            u = jets[0][mu[0]].copy()
            for i in range(1, n):
                u = u * jets[i][mu[i]]
            uvals[mu] = u
        if self.quad is None:
            for mu in mus:
                table[mu] = self.scale * uvals[mu]
            return table
        g, center = self.quad
        d = xs - center
        qval = np.einsum("mi,ij,mj->m", d, g, d)
        qgrad = 2.0 * d @ g
        for mu in mus:
            acc = uvals[mu] * qval
            for i in range(n):
                if mu[i] >= 1:
                    nu = unit_index(n, i)
                    acc = acc + mi_binom(mu, nu) * uvals[mi_sub(mu, nu)] * qgrad[:, i]
            for i in range(n):
                for j in range(i, n):
                    nu = tuple(
                        (2 if k == i else 0) if i == j else (1 if k in (i, j) else 0)
                        for k in range(n)
                    )
                    if all(mu[k] >= nu[k] for k in range(n)):
                        acc = acc + mi_binom(mu, nu) * uvals[mi_sub(mu, nu)] * (2.0 * g[i, j])
            table[mu] = self.scale * acc
        return table


@dataclass
class Approximant:
    """Squared-distance approximant d2(., y): base quadratic plus corrections.

    Immutable after construction; all evaluation methods are pure.
    """

    metric: MetricField
    y: np.ndarray
    base_matrix: np.ndarray
    corrections: List[CorrectionTerm] = field(default_factory=list)
    nodes: Optional[np.ndarray] = None
    enforced: List[Tuple[int, MultiIndex]] = field(default_factory=list)
    built_with_m: int = 0
    mode: str = "lp"

    @property
    def n(self) -> int:
        return self.metric.n

    def _base_term(self) -> CorrectionTerm:
        n = self.n
        return CorrectionTerm(
            kind="base",
            node=0,
            beta=None,
            coefficient=1.0,
            scale=1.0,
            roots=tuple(np.empty(0) for _ in range(n)),
            mults=tuple(np.empty(0, dtype=int) for _ in range(n)),
            quad=(self.base_matrix, self.y),
        )

    def derivative_table(self, xs, upto: MultiIndex) -> Dict[MultiIndex, np.ndarray]:
        """Mixed partials of the approximant for every mu <= upto, vectorized."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        table = self._base_term().basis_table(xs, upto)
        for term in self.corrections:
            if term.coefficient == 0.0:
                continue
            sub = term.basis_table(xs, upto)
            for mu, v in sub.items():
                table[mu] = table[mu] + term.coefficient * v
        return table

    def evaluate_many(self, xs, alpha: MultiIndex) -> np.ndarray:
        return self.derivative_table(xs, alpha)[tuple(alpha)]

    def evaluate(self, x, alpha: Optional[MultiIndex] = None) -> float:
        if alpha is None:
            alpha = zero_index(self.n)
        xs = np.asarray(x, dtype=float).reshape(1, -1)
        return float(self.evaluate_many(xs, tuple(alpha))[0])

    # -- eikonal defect -------------------------------------------------------

    def residual_derivative_many(self, xs, alpha: MultiIndex) -> np.ndarray:
        """Defect of the alpha-differentiated eikonal equation at points ``xs``.

        Computes d^alpha [ (1/4) sum_ij a_ij d_i q2 d_j q2 - q2 ] with the full
        trinomial Leibniz expansion and exact polynomial derivatives of a_ij.
        For alpha = 0 this is exactly the plain residual.
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        n = self.n
        alpha = tuple(alpha)
        upto = tuple(a + 1 for a in alpha)
        t = self.derivative_table(xs, upto)
        out = -t[alpha]
        for bp in submultiindices(alpha):
            cb = mi_binom(alpha, bp)
            rem = mi_sub(alpha, bp)
            rem_subs = submultiindices(rem)
            for i in range(n):
                ei = unit_index(n, i)
                for j in range(n):
                    ej = unit_index(n, j)
                    aij = self.metric.entry_derivative_many(i, j, bp, xs)
                    if not np.any(aij):
                        continue
                    s = np.zeros(xs.shape[0])
                    for gamma in rem_subs:
                        cg = mi_binom(rem, gamma)
                        mu1 = tuple(g + e for g, e in zip(gamma, ei))
                        mu2 = tuple(r - g + e for r, g, e in zip(rem, gamma, ej))
                        s += cg * t[mu1] * t[mu2]
                    out = out + 0.25 * cb * aij * s
        return out

    def residual_derivative(self, x, alpha: MultiIndex) -> float:
        xs = np.asarray(x, dtype=float).reshape(1, -1)
        return float(self.residual_derivative_many(xs, tuple(alpha))[0])

    def residual_many(self, xs) -> np.ndarray:
        return self.residual_derivative_many(xs, zero_index(self.n))

    def residual(self, x) -> float:
        return self.residual_derivative(x, zero_index(self.n))

    # -- derived fields -------------------------------------------------------

    def sqrt_field(self) -> Callable:
        """Distance field sqrt(q2) with derivatives.

        Orders 0 and 1 use the exact chain rule; higher orders fall back to
        central differences with one Richardson step.  Points where q2 <= 0
        (the base point) report derivative 0.
        """

        def fd(xs, alpha, h=1e-4):
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

        def fld(xs, alpha):
            xs = np.atleast_2d(np.asarray(xs, dtype=float))
            alpha = tuple(alpha)
            order = mi_order(alpha)
            if order == 0:
                return np.sqrt(np.maximum(self.residual_zero_safe_values(xs), 0.0))
            if order == 1:
                upto = tuple(1 for _ in alpha)
                t = self.derivative_table(xs, upto)
                val = np.maximum(t[zero_index(self.n)], 0.0)
                grad = t[alpha]
                out = np.zeros(xs.shape[0])
                ok = val > 0.0
                out[ok] = grad[ok] / (2.0 * np.sqrt(val[ok]))
                return out
            return fd(xs, alpha)

        return fld

    def residual_zero_safe_values(self, xs) -> np.ndarray:
        return self.evaluate_many(xs, zero_index(self.n))

    def as_field(self) -> Callable:
        """The squared-distance field itself, as an (xs, alpha) callable."""

        def fld(xs, alpha):
            return self.evaluate_many(xs, tuple(alpha))

        return fld


# -- residual reports ----------------------------------------------------------


@dataclass
class ResidualReport:
    """Per-point eikonal-defect records plus summary norms."""

    records: List[Tuple[Tuple[float, ...], MultiIndex, float]]
    max_abs: float
    lp_norm: float
    p: float

    def to_rows(self, n: int):
        header = [f"x{i+1}" for i in range(n)] + ["alpha", "residual"]
        rows = []
        for x, alpha, value in self.records:
            rows.append([repr(float(c)) for c in x] + ["-".join(str(a) for a in alpha), repr(value)])
        return header, rows


def residual_report(q: Approximant, points, alphas: Sequence[MultiIndex], p: float = 2.0) -> ResidualReport:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    records = []
    vals = []
    for alpha in alphas:
        r = q.residual_derivative_many(points, tuple(alpha))
        for x, v in zip(points, r):
            records.append((tuple(float(c) for c in x), tuple(alpha), float(v)))
            vals.append(float(v))
    arr = np.asarray(vals) if vals else np.zeros(0)
    max_abs = float(np.max(np.abs(arr))) if arr.size else 0.0
    lp = float(np.mean(np.abs(arr) ** p) ** (1.0 / p)) if arr.size else 0.0
    return ResidualReport(records=records, max_abs=max_abs, lp_norm=lp, p=p)
