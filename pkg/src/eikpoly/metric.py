"""Diffusion matrix fields and derived geometry.

The stored primitive is the diffusion matrix A(x) = (a_ij(x)) with polynomial
entries; the metric tensor is g = A^{-1} pointwise, and metric derivatives are
obtained rationally via dg = -A^{-1} (dA) A^{-1} so that Christoffel symbols
use exact polynomial derivatives of A.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite
from .polynomials import MPoly, MultiIndex, unit_index, zero_index


def symmetrize(entries):
    """Entry-wise symmetrization (A + A^T)/2 of a square MPoly array. Idempotent."""
    n = len(entries)
    half = 0.5
    return tuple(
        tuple((entries[i][j] + entries[j][i]) * half for j in range(n)) for i in range(n)
    )


class MetricField:
    """Dimension n plus an n-by-n array of polynomial diffusion coefficients.

    Parameters
    ----------
    entries : square array of MPoly
        Raw diffusion coefficients; symmetrized on construction.
    domain : sequence of (lo, hi)
        Axis-aligned box on which the field is declared valid.
    catalog : str, optional
        Name of a closed-form reference solution, if one exists.
    validate : bool
        Sample a tensor grid (plus ``extra_points``) and require a successful
        Cholesky factorization at every sample.
    """

    def __init__(self, entries, domain, catalog=None, validate=True,
                 spd_samples_per_axis=9, extra_points=None):
        n = len(entries)
        for row in entries:
            if len(row) != n:
                raise DimensionMismatch("diffusion matrix must be square")
            for p in row:
                if not isinstance(p, MPoly) or p.n != n:
                    raise DimensionMismatch("entries must be MPoly in n variables")
        if len(domain) != n:
            raise DimensionMismatch("domain box must have one interval per axis")
        self.n = n
        self.A = symmetrize(entries)
        self.domain = tuple((float(lo), float(hi)) for lo, hi in domain)
        self.catalog = catalog
        self._deriv_cache = {}
        if validate:
            pts = self._sample_grid(spd_samples_per_axis)
            if extra_points is not None and len(extra_points) > 0:
                pts = np.vstack([pts, np.atleast_2d(np.asarray(extra_points, dtype=float))])
            for x in pts:
                self.invert_at(x)

    def _sample_grid(self, per_axis: int) -> np.ndarray:
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in self.domain]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=-1)

    def contains(self, x, pad: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        return all(lo - pad <= xi <= hi + pad for xi, (lo, hi) in zip(x, self.domain))

    # -- pointwise values ----------------------------------------------------

    def A_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return self.A_many(x)[0]

    def A_many(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        out = np.empty((xs.shape[0], self.n, self.n))
        for i in range(self.n):
            for j in range(i, self.n):
                v = self.A[i][j].eval_many(xs)
                out[:, i, j] = v
                out[:, j, i] = v
        return out

    def entry_derivative_many(self, i: int, j: int, alpha: MultiIndex, xs) -> np.ndarray:
        key = (i, j, tuple(alpha))
        poly = self._deriv_cache.get(key)
        if poly is None:
            poly = self.A[i][j].derivative(alpha)
            self._deriv_cache[key] = poly
        return poly.eval_many(xs)

    def invert_at(self, x) -> np.ndarray:
        """A(x)^{-1} via Cholesky; raises NotPositiveDefinite if the factorization fails."""
        a = self.A_at(x)
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(np.asarray(x, dtype=float).ravel()) from None
        inv_l = np.linalg.inv(chol)
        return inv_l.T @ inv_l

    def eigenvalues_2d(self, x):
        """Eigenvalue pair (lam1 >= lam2) of A(x) for n = 2.

        Uses the trace/determinant formula, switching to lam2 = det/lam1 when
        the discriminant is small to avoid cancellation.
        """
        if self.n != 2:
            raise DimensionMismatch(f"eigenvalue formula requires n=2, got n={self.n}")
        a = self.A_at(x)
        tr = a[0, 0] + a[1, 1]
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        disc = (tr / 2.0) ** 2 - det
        s = np.sqrt(max(disc, 0.0))
        lam1 = tr / 2.0 + s
        if disc <= 1e-12 * tr * tr:
            lam2 = det / lam1 if lam1 != 0.0 else tr / 2.0
        else:
            lam2 = tr / 2.0 - s
        return float(lam1), float(lam2)

    def christoffel(self, x) -> np.ndarray:
        """Christoffel symbols Gamma[k, mu, nu] of g = A^{-1} at a point.

        dg comes from -A^{-1} (dA) A^{-1} with exact polynomial dA; the
        inverse metric needed by the formula is A itself.
        """
        x = np.asarray(x, dtype=float).reshape(1, -1)
        a = self.A_many(x)[0]
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(x.ravel()) from None
        inv_l = np.linalg.inv(chol)
        g = inv_l.T @ inv_l
        n = self.n
        dg = np.empty((n, n, n))  # dg[k] = d g / d x_k
        for k in range(n):
            e_k = unit_index(n, k)
            da = np.empty((n, n))
            for i in range(n):
                for j in range(i, n):
                    v = self.entry_derivative_many(i, j, e_k, x)[0]
                    da[i, j] = v
                    da[j, i] = v
            dg[k] = -g @ da @ g
        gamma = np.empty((n, n, n))
        for kap in range(n):
            for mu in range(n):
                for nu in range(n):
                    s = 0.0
                    for rho in range(n):
                        s += a[kap, rho] * (dg[mu][nu, rho] + dg[nu][mu, rho] - dg[rho][mu, nu])
                    gamma[kap, mu, nu] = 0.5 * s
        return gamma

    def is_diagonal(self) -> bool:
        return all(
            self.A[i][j].is_zero() for i in range(self.n) for j in range(self.n) if i != j
        )

    def smallest_eigenvalue_at(self, x) -> float:
        """Smallest eigenvalue of A(x); n <= 2 closed form, inverse iteration above."""
        if self.n == 1:
            v = self.A_at(x)[0, 0]
            if v <= 0.0:
                raise NotPositiveDefinite(np.asarray(x, dtype=float).ravel())
            return float(v)
        if self.n == 2:
            return self.eigenvalues_2d(x)[1]
        a = self.A_at(x)
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(np.asarray(x, dtype=float).ravel()) from None
        z = np.ones(self.n) / np.sqrt(self.n)
        lam = float(z @ a @ z)
        for _ in range(200):
            w = np.linalg.solve(a, z)
            w /= np.linalg.norm(w)
            new = float(w @ a @ w)
            if abs(new - lam) <= 1e-14 * abs(new):
                return new
            z, lam = w, new
        return lam


# -- catalog ------------------------------------------------------------------


def constant_metric(matrix, domain=None) -> MetricField:
    """Constant SPD diffusion matrix on a box (default unit-ish box)."""
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))
    n = mat.shape[0]
    if domain is None:
        domain = tuple((-1.0, 1.0) for _ in range(n))
    entries = tuple(
        tuple(MPoly.constant(n, mat[i, j]) for j in range(n)) for i in range(n)
    )
    return MetricField(entries, domain, catalog="constant")


def curved1d_metric(domain=((0.0, 0.9),)) -> MetricField:
    """1D catalog metric a(x) = (1+x)^2; its distance is |log((1+x)/(1+y))|."""
    a = MPoly.from_terms(1, [((0,), 1.0), ((1,), 2.0), ((2,), 1.0)])
    return MetricField(((a,),), domain, catalog="curved1d")


def halfplane_metric(domain=((-1.0, 1.0), (0.5, 1.5))) -> MetricField:
    """Hyperbolic half-plane: A = diag(x2^2, x2^2) on a box with x2 >= 0.5."""
    if domain[1][0] < 0.5:
        raise ValueError("half-plane box must keep x2 >= 0.5")
    sq = MPoly.from_terms(2, [((0, 2), 1.0)])
    z = MPoly.zero(2)
    return MetricField(((sq, z), (z, sq)), domain, catalog="halfplane")


def perturbed2d_metric(eps=0.1, domain=((-0.5, 0.5), (-0.5, 0.5))) -> MetricField:
    """Identity plus a small symmetric polynomial perturbation on a 2D box."""
    b11 = MPoly.from_terms(2, [((1, 0), 1.0), ((0, 2), 0.5)])
    b12 = MPoly.from_terms(2, [((1, 1), 0.5)])
    b22 = MPoly.from_terms(2, [((0, 1), 1.0), ((2, 0), -0.5)])
    one = MPoly.constant(2, 1.0)
    entries = (
        (one + eps * b11, eps * b12),
        (eps * b12, one + eps * b22),
    )
    return MetricField(entries, domain, catalog="perturbed2d")


def _explicit_metric(params) -> MetricField:
    n = int(params["dimension"])
    rows = params["entries"]
    entries = tuple(
        tuple(MPoly.from_terms(n, [(tuple(e), c) for e, c in cell]) for cell in row)
        for row in rows
    )
    return MetricField(entries, tuple(tuple(iv) for iv in params["domain"]))


CATALOG = {
    "constant": lambda params: constant_metric(
        params.get("matrix", [[1.0]]), params.get("domain")
    ),
    "curved1d": lambda params: curved1d_metric(
        tuple(tuple(iv) for iv in params.get("domain", ((0.0, 0.9),)))
    ),
    "halfplane": lambda params: halfplane_metric(
        tuple(tuple(iv) for iv in params.get("domain", ((-1.0, 1.0), (0.5, 1.5))))
    ),
    "perturbed2d": lambda params: perturbed2d_metric(
        params.get("eps", 0.1),
        tuple(tuple(iv) for iv in params.get("domain", ((-0.5, 0.5), (-0.5, 0.5)))),
    ),
}
